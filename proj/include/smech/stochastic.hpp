#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <thread>
#include <vector>

#include "smech/errors.hpp"
#include "smech/field.hpp"
#include "smech/grid.hpp"
#include "smech/philox.hpp"
#include "smech/schrodinger.hpp"
#include "smech/stencil.hpp"
#include "smech/velocities.hpp"

namespace smech {

/// A population of sample-path walkers.  Randomness is addressed by
/// (seed, step_index, walker id), so identical inputs reproduce positions
/// bit-exactly under any thread count.
struct WalkerEnsemble {
    std::vector<double> positions;
    double t = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t step_index = 0;

    std::size_t n_walkers() const { return positions.size(); }
};

namespace detail {

/// Piecewise-linear density over the grid segments, with its exact
/// (piecewise-quadratic) cumulative integral for CDF and inverse-CDF use.
struct LinearDensity {
    double x_min = 0.0;
    double h = 0.0;
    bool periodic = false;
    Slice p;                  // samples
    std::vector<double> cum;  // cumulative integral at segment left edges
    double total = 0.0;

    LinearDensity(const Slice& samples, const Grid1D& grid)
        : x_min(grid.x_min), h(grid.dx()),
          periodic(grid.boundary == Boundary::periodic), p(samples) {
        if (p.size() != grid.n_points())
            throw ConfigError("LinearDensity: sample count does not match grid");
        for (double v : p)
            if (!(v >= 0.0)) throw ConfigError("LinearDensity: negative density sample");
        const std::size_t n_seg = grid.n_x;
        cum.assign(n_seg + 1, 0.0);
        for (std::size_t i = 0; i < n_seg; ++i)
            cum[i + 1] = cum[i] + 0.5 * h * (left(i) + right(i));
        total = cum[n_seg];
        if (!(total > 0.0)) throw ConfigError("LinearDensity: density integrates to zero");
    }

    double left(std::size_t seg) const { return p[seg]; }
    double right(std::size_t seg) const {
        return periodic ? p[(seg + 1) % p.size()] : p[seg + 1];
    }
    std::size_t n_segments() const { return cum.size() - 1; }

    /// Normalized CDF at x (clamped to the domain).
    double cdf(double x) const {
        const std::size_t n_seg = n_segments();
        double u = (x - x_min) / h;
        if (u <= 0.0) return 0.0;
        if (u >= static_cast<double>(n_seg)) return 1.0;
        const std::size_t i = std::min(static_cast<std::size_t>(u), n_seg - 1);
        const double s = (u - static_cast<double>(i)) * h;
        const double a = left(i), b = right(i);
        return (cum[i] + a * s + (b - a) * s * s / (2.0 * h)) / total;
    }

    /// Inverse CDF: position of quantile q in [0, 1].
    double quantile(double q) const {
        const double T = std::clamp(q, 0.0, 1.0) * total;
        const std::size_t n_seg = n_segments();
        const auto it = std::upper_bound(cum.begin(), cum.end(), T);
        std::size_t i = it == cum.begin()
                            ? 0
                            : static_cast<std::size_t>(it - cum.begin()) - 1;
        i = std::min(i, n_seg - 1);
        const double t_loc = T - cum[i];
        const double a = left(i), b = right(i);
        const double c = (b - a) / h;
        // Solve (c/2) s^2 + a s = t_loc in the cancellation-free form.
        double s;
        const double disc = std::max(0.0, a * a + 2.0 * c * t_loc);
        const double denom = a + std::sqrt(disc);
        if (denom > 0.0)
            s = 2.0 * t_loc / denom;
        else
            s = 0.0;  // zero-mass segment edge
        return x_min + static_cast<double>(i) * h + std::min(s, h);
    }
};

/// Nearest-unmasked-sample maps for drift interpolation; indices of the
/// closest unmasked sample at-or-before / at-or-after each grid sample
/// (wrapped on periodic grids, -1 when the direction has none).
struct UnmaskedMaps {
    std::vector<long> prev, next;
};

inline UnmaskedMaps build_unmasked_maps(const std::vector<char>& mask, bool periodic) {
    const long n = static_cast<long>(mask.size());
    UnmaskedMaps m;
    m.prev.assign(mask.size(), -1);
    m.next.assign(mask.size(), -1);
    long last = -1;
    const long rounds = periodic ? 2 * n : n;
    for (long k = 0; k < rounds; ++k) {
        const long i = k % n;
        if (!mask[static_cast<std::size_t>(i)]) last = i;
        if (k >= rounds - n && last >= 0) m.prev[static_cast<std::size_t>(i)] = last;
    }
    last = -1;
    for (long k = rounds - 1; k >= 0; --k) {
        const long i = k % n;
        if (!mask[static_cast<std::size_t>(i)]) last = i;
        if (k < n && last >= 0) m.next[static_cast<std::size_t>(i)] = last;
    }
    return m;
}

} // namespace detail

/// Draw walkers from the piecewise-linear interpolant of P0 by stratified
/// inverse-CDF probes (w + 1/2)/n; a single walker therefore sits exactly
/// at the median.  The seed only feeds the dynamical noise later.
inline WalkerEnsemble init_ensemble(const Slice& P0, std::size_t n_walkers, std::uint64_t seed,
                                    const Grid1D& grid) {
    if (n_walkers == 0) throw ConfigError("init_ensemble: need at least one walker");
    const detail::LinearDensity dens(P0, grid);
    WalkerEnsemble e;
    e.seed = seed;
    e.positions.resize(n_walkers);
    for (std::size_t w = 0; w < n_walkers; ++w) {
        const double q = (static_cast<double>(w) + 0.5) / static_cast<double>(n_walkers);
        e.positions[w] = dens.quantile(q);
    }
    return e;
}

/// Per-step bookkeeping.
struct StepStats {
    std::size_t cap_activations = 0;
};

/// One Euler-Maruyama step x += b(x) dt + sqrt(alpha) xi with
/// xi ~ Normal(0, (hbar/m) dt).  The drift is linearly interpolated
/// between the two nearest unmasked samples around x and capped at
/// |b| <= dx/dt so a step never overshoots a node cell.  Boundaries
/// reflect (fixed-zero walls) or wrap (periodic).
inline StepStats step_ensemble(WalkerEnsemble& e, const Slice& b_field,
                               const std::vector<char>& mask, const Grid1D& grid,
                               const PhysicalParams& params, std::size_t n_threads = 1) {
    const std::size_t np = grid.n_points();
    if (b_field.size() != np) throw ConfigError("step_ensemble: drift size does not match grid");
    if (!mask.empty() && mask.size() != np)
        throw ConfigError("step_ensemble: mask size does not match grid");
    const double dt = grid.dt;
    if (dt == 0.0) {
        ++e.step_index;
        return {};
    }
    const bool periodic = grid.boundary == Boundary::periodic;
    const double h = grid.dx();
    const double L = grid.x_max - grid.x_min;
    const std::vector<char> effective_mask = mask.empty() ? std::vector<char>(np, 0) : mask;
    const detail::UnmaskedMaps maps = detail::build_unmasked_maps(effective_mask, periodic);
    bool any_unmasked = false;
    for (char c : effective_mask)
        if (!c) { any_unmasked = true; break; }
    if (!any_unmasked) throw NumericalError("step_ensemble: every drift sample masked");

    const double b_cap = h / dt;
    const double sigma = std::sqrt(params.hbar / params.m * dt) * std::sqrt(params.alpha);
    const RandomStream rng{e.seed, kStreamWalkerNoise};
    const std::uint64_t step_idx = e.step_index;

    auto drift_at = [&](double x) {
        const long n = static_cast<long>(np);
        double u = (x - grid.x_min) / h;
        if (periodic) {
            u -= std::floor(u / static_cast<double>(n)) * static_cast<double>(n);
            if (u >= static_cast<double>(n)) u = 0.0;
        } else {
            u = std::clamp(u, 0.0, static_cast<double>(n - 1));
        }
        long iL = static_cast<long>(u);
        if (iL > n - (periodic ? 1 : 2)) iL = n - (periodic ? 1 : 2);
        const double s = u - static_cast<double>(iL);
        const long iR = periodic ? (iL + 1) % n : iL + 1;
        const long jL = maps.prev[static_cast<std::size_t>(iL)];
        const long jR = maps.next[static_cast<std::size_t>(iR)];
        if (jL < 0) return b_field[static_cast<std::size_t>(jR)];
        if (jR < 0) return b_field[static_cast<std::size_t>(jL)];
        // Interpolation weight from cyclic index distances; immune to the
        // coordinate wrap of the two legs.
        const double dL = static_cast<double>(periodic ? (iL - jL + n) % n : iL - jL);
        const double dR = static_cast<double>(periodic ? (jR - iR + n) % n : jR - iR);
        const double bL = b_field[static_cast<std::size_t>(jL)];
        const double bR = b_field[static_cast<std::size_t>(jR)];
        const double w = (s + dL) / (1.0 + dL + dR);
        return bL + w * (bR - bL);
    };

    auto advance_range = [&](std::size_t begin, std::size_t end, std::size_t& caps) {
        for (std::size_t w = begin; w < end; ++w) {
            double x = e.positions[w];
            double b = drift_at(x);
            if (std::abs(b) > b_cap) {
                b = std::copysign(b_cap, b);
                ++caps;
            }
            double xi = 0.0;
            if (sigma > 0.0) xi = sigma * rng.normal(step_idx, w);
            x += b * dt + xi;
            if (periodic) {
                x = grid.x_min + std::fmod(x - grid.x_min, L);
                if (x < grid.x_min) x += L;
            } else {
                for (int guard = 0; guard < 64 && (x < grid.x_min || x > grid.x_max); ++guard) {
                    if (x < grid.x_min) x = 2.0 * grid.x_min - x;
                    if (x > grid.x_max) x = 2.0 * grid.x_max - x;
                }
                x = std::clamp(x, grid.x_min, grid.x_max);
            }
            if (!std::isfinite(x)) throw NumericalError("step_ensemble: non-finite position");
            e.positions[w] = x;
        }
    };

    StepStats stats;
    const std::size_t n = e.n_walkers();
    if (n_threads <= 1 || n < 2 * n_threads) {
        advance_range(0, n, stats.cap_activations);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::size_t> caps(n_threads, 0);
        const std::size_t chunk = (n + n_threads - 1) / n_threads;
        for (std::size_t tix = 0; tix < n_threads; ++tix) {
            const std::size_t begin = tix * chunk;
            const std::size_t end = std::min(n, begin + chunk);
            if (begin >= end) break;
            pool.emplace_back([&, begin, end, tix] { advance_range(begin, end, caps[tix]); });
        }
        for (auto& th : pool) th.join();
        for (std::size_t c : caps) stats.cap_activations += c;
    }
    e.t += dt;
    ++e.step_index;
    return stats;
}

/// Two-sided one-sample Kolmogorov-Smirnov distance between the walker
/// positions and the CDF of the piecewise-linear interpolant of P.
inline double equilibrium_distance(const WalkerEnsemble& e, const Slice& P, const Grid1D& grid) {
    if (e.n_walkers() == 0) throw ConfigError("equilibrium_distance: empty ensemble");
    const detail::LinearDensity dens(P, grid);
    std::vector<double> xs(e.positions);
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double F = dens.cdf(xs[i]);
        const double hi = (static_cast<double>(i) + 1.0) / n - F;
        const double lo = F - static_cast<double>(i) / n;
        d = std::max(d, std::max(hi, lo));
    }
    return d;
}

/// Drift field of one complex slice: b = v + alpha u with v read off
/// neighbouring phase differences and u = D dP/P, masked near nodes.
struct DriftSlice {
    Slice b;
    std::vector<char> mask;
    Slice P;
};

inline DriftSlice drift_from_slice(const ComplexSlice& psi, const Grid1D& grid,
                                   const PhysicalParams& params, double node_epsilon = 1e-6) {
    const std::size_t np = grid.n_points();
    if (psi.size() != np) throw ConfigError("drift_from_slice: slice size does not match grid");
    ComplexWaveField f;
    f.grid = grid;
    f.dt_slice = grid.dt;
    f.values.push_back(psi);
    const History v = cross_check_velocity_bilinear(f, params, node_epsilon);

    DriftSlice out;
    out.P.resize(np);
    out.mask.assign(np, 0);
    double r_max = 0.0;
    for (std::size_t i = 0; i < np; ++i) {
        out.P[i] = std::norm(psi[i]);
        r_max = std::max(r_max, std::abs(psi[i]));
    }
    const double cutoff = node_epsilon * r_max;
    for (std::size_t i = 0; i < np; ++i)
        if (std::abs(psi[i]) < cutoff) out.mask[i] = 1;

    const Slice Px = gradient(out.P, grid);
    const double D = params.D();
    out.b.assign(np, 0.0);
    for (std::size_t i = 0; i < np; ++i) {
        if (out.mask[i]) continue;
        const double u = D * Px[i] / out.P[i];
        out.b[i] = v[0][i] + params.alpha * u;
    }
    return out;
}

/// Options for the coupled wave/ensemble evolution.
struct NelsonOptions {
    std::size_t n_walkers = 10000;
    std::uint64_t seed = 1;
    std::size_t record_every = 10;  ///< KS recording stride in steps
    std::size_t n_track = 100;      ///< walkers with full exported paths
    std::size_t n_threads = 1;
    double node_epsilon = 1e-6;
};

/// Result of run_nelson: KS series, tracked paths, and the final ensemble.
struct NelsonRun {
    std::vector<double> ks_times;
    std::vector<double> ks_values;
    std::size_t n_walkers = 0;
    std::vector<std::size_t> tracked_ids;
    std::vector<double> traj_times;
    std::vector<std::vector<double>> trajectories;  ///< one row per recorded time
    std::size_t cap_activations = 0;
    WalkerEnsemble ensemble;
};

/// Co-evolve the wave function (Crank-Nicolson) and the walker ensemble:
/// the drift is rebuilt from the current slice before every step, and the
/// KS distance to |psi|^2 is recorded on the chosen stride.
inline NelsonRun run_nelson(const SchrodingerProblem& prob, const NelsonOptions& opt) {
    if (opt.n_walkers == 0) throw ConfigError("run_nelson: need at least one walker");
    if (opt.record_every == 0) throw ConfigError("run_nelson: record_every must be >= 1");
    CrankNicolsonStepper stepper(prob);
    const Grid1D& g = prob.grid;

    NelsonRun run;
    run.n_walkers = opt.n_walkers;
    const std::size_t n_track = std::min(opt.n_track, opt.n_walkers);
    run.tracked_ids.resize(n_track);
    for (std::size_t k = 0; k < n_track; ++k) run.tracked_ids[k] = k;

    Slice P0(g.n_points());
    for (std::size_t i = 0; i < g.n_points(); ++i) P0[i] = std::norm(stepper.psi()[i]);
    run.ensemble = init_ensemble(P0, opt.n_walkers, opt.seed, g);

    const double init_norm = stepper.norm();
    auto record = [&](double t, const Slice& P) {
        run.ks_times.push_back(t);
        run.ks_values.push_back(equilibrium_distance(run.ensemble, P, g));
        run.traj_times.push_back(t);
        std::vector<double> row(n_track);
        for (std::size_t k = 0; k < n_track; ++k) row[k] = run.ensemble.positions[k];
        run.trajectories.push_back(std::move(row));
        const double nrm = stepper.norm();
        if (!std::isfinite(nrm) || std::abs(nrm - init_norm) > 1e-9)
            throw NumericalError("run_nelson: wave-function norm drifted");
    };
    record(0.0, P0);

    const std::size_t n_steps = g.n_t - 1;
    Slice P(g.n_points());
    for (std::size_t step = 1; step <= n_steps; ++step) {
        const DriftSlice drift = drift_from_slice(stepper.psi(), g, prob.params, opt.node_epsilon);
        const StepStats st = step_ensemble(run.ensemble, drift.b, drift.mask, g, prob.params,
                                           opt.n_threads);
        run.cap_activations += st.cap_activations;
        stepper.step();
        if (step % opt.record_every == 0 || step == n_steps) {
            for (std::size_t i = 0; i < g.n_points(); ++i) P[i] = std::norm(stepper.psi()[i]);
            record(static_cast<double>(step) * g.dt, P);
        }
    }
    return run;
}

} // namespace smech
