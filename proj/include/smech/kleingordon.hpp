#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "smech/errors.hpp"
#include "smech/field.hpp"
#include "smech/grid.hpp"
#include "smech/residual_entry.hpp"
#include "smech/schrodinger.hpp"  // SolveOptions
#include "smech/stencil.hpp"

namespace smech {

/// Second-order wave problem (1/c^2) d_tt psi = d_xx psi - (m c / hbar)^2 psi.
struct KGProblem {
    Grid1D grid;
    PhysicalParams params;
    ComplexSlice psi0;
    ComplexSlice dpsi0_dt;

    void validate() const {
        params.validate();
        if (psi0.size() != grid.n_points())
            throw ConfigError("KGProblem: psi0 size does not match grid");
        if (dpsi0_dt.size() != grid.n_points())
            throw ConfigError("KGProblem: dpsi0_dt size does not match grid");
        check_cfl(grid, params);
    }
};

namespace detail {

/// Spatial right-hand side c^2 (d_xx - kappa^2) psi for the wave stepper.
inline ComplexSlice kg_rhs(const ComplexSlice& psi, const Grid1D& g, double c, double kappa) {
    const std::size_t n = psi.size();
    const double inv_h2 = 1.0 / (g.dx() * g.dx());
    const double c2 = c * c;
    const double k2 = kappa * kappa;
    ComplexSlice out(n);
    const bool periodic = g.boundary == Boundary::periodic;
    for (std::size_t i = 0; i < n; ++i) {
        Complex lap;
        if (i > 0 && i + 1 < n) {
            lap = (psi[i + 1] - 2.0 * psi[i] + psi[i - 1]) * inv_h2;
        } else if (periodic) {
            const Complex left = psi[(i + n - 1) % n];
            const Complex right = psi[(i + 1) % n];
            lap = (right - 2.0 * psi[i] + left) * inv_h2;
        } else {
            lap = Complex(0.0, 0.0);  // walls stay pinned; value unused
        }
        out[i] = c2 * (lap - k2 * psi[i]);
    }
    return out;
}

} // namespace detail

/// Explicit leapfrog integrator psi^{n+1} = 2 psi^n - psi^{n-1} + dt^2 rhs(psi^n)
/// with a second-order Taylor bootstrap for the first step.  Requires the
/// Courant condition c dt / dx <= 1 (checked by KGProblem::validate).
inline ComplexWaveField solve_klein_gordon(const KGProblem& prob, const SolveOptions& opt = {}) {
    prob.validate();
    if (opt.store_every == 0) throw ConfigError("solve_klein_gordon: store_every must be >= 1");
    const Grid1D& g = prob.grid;
    const double c = prob.params.c;
    const double kappa = prob.params.m * c / prob.params.hbar;
    const std::size_t np = g.n_points();
    const bool periodic = g.boundary == Boundary::periodic;

    ComplexWaveField out;
    out.grid = g;
    out.t0 = opt.t_start;
    out.dt_slice = g.dt * static_cast<double>(opt.store_every);
    out.values.reserve(g.n_t);

    ComplexSlice prev = prob.psi0;
    if (!periodic) {
        prev.front() = Complex(0.0, 0.0);
        prev.back() = Complex(0.0, 0.0);
    }

    auto store = [&](const ComplexSlice& s) {
        for (const Complex& z : s)
            if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
                throw NumericalError("solve_klein_gordon: non-finite sample");
        out.values.push_back(s);
        out.norm_history.push_back(slice_norm(s, g));
    };
    store(prev);

    // Taylor bootstrap: psi(dt) = psi0 + dt psi0' + dt^2/2 rhs(psi0).
    ComplexSlice cur(np);
    {
        ComplexSlice rhs = detail::kg_rhs(prev, g, c, kappa);
        for (std::size_t i = 0; i < np; ++i)
            cur[i] = prev[i] + g.dt * prob.dpsi0_dt[i] + 0.5 * g.dt * g.dt * rhs[i];
        if (!periodic) {
            cur.front() = Complex(0.0, 0.0);
            cur.back() = Complex(0.0, 0.0);
        }
    }

    std::size_t steps_done = 1;
    auto maybe_store = [&]() {
        if (steps_done % opt.store_every == 0) store(cur);
    };
    maybe_store();

    const std::size_t total_steps = (g.n_t - 1) * opt.store_every;
    ComplexSlice next(np);
    while (steps_done < total_steps) {
        ComplexSlice rhs = detail::kg_rhs(cur, g, c, kappa);
        for (std::size_t i = 0; i < np; ++i)
            next[i] = 2.0 * cur[i] - prev[i] + g.dt * g.dt * rhs[i];
        if (!periodic) {
            next.front() = Complex(0.0, 0.0);
            next.back() = Complex(0.0, 0.0);
        }
        prev.swap(cur);
        cur.swap(next);
        ++steps_done;
        maybe_store();
    }
    return out;
}

/// Frequency of spatial mode k: omega = c sqrt(k^2 + (m c / hbar)^2).
inline double kg_omega(const PhysicalParams& p, double k) {
    const double kappa = p.m * p.c / p.hbar;
    return p.c * std::sqrt(k * k + kappa * kappa);
}

/// Exact plane wave psi = A exp(i (k x - s omega t)) with s = +1 for the
/// positive-frequency branch and s = -1 for the negative-frequency one.
/// On periodic grids k must be commensurate with the domain.
inline ComplexWaveField kg_plane_wave(const Grid1D& grid, const PhysicalParams& p, double k,
                                      double amplitude = 1.0, int freq_sign = +1,
                                      double t_start = 0.0) {
    p.validate();
    if (freq_sign != 1 && freq_sign != -1)
        throw ConfigError("kg_plane_wave: freq_sign must be +1 or -1");
    constexpr double pi = 3.14159265358979323846;
    if (grid.boundary == Boundary::periodic) {
        const double cycles = k * (grid.x_max - grid.x_min) / (2.0 * pi);
        if (std::abs(cycles - std::round(cycles)) > 1e-9)
            throw ConfigError("kg_plane_wave: k not commensurate with the periodic domain");
    }
    const double omega = freq_sign * kg_omega(p, k);
    ComplexWaveField out;
    out.grid = grid;
    out.t0 = t_start;
    out.dt_slice = grid.dt;
    out.values.assign(grid.n_t, ComplexSlice(grid.n_points()));
    for (std::size_t j = 0; j < grid.n_t; ++j) {
        const double t = t_start + static_cast<double>(j) * grid.dt;
        for (std::size_t i = 0; i < grid.n_points(); ++i) {
            const double ph = k * grid.x(i) - omega * t;
            out.values[j][i] = amplitude * Complex(std::cos(ph), std::sin(ph));
        }
        out.norm_history.push_back(slice_norm(out.values[j], grid));
    }
    return out;
}

/// One Fourier mode of a superposition: amplitude (complex) on wavenumber k
/// with its own frequency sign.
struct KGMode {
    double k = 0.0;
    Complex amplitude{1.0, 0.0};
    int freq_sign = +1;
};

/// Exact superposition of commensurate plane-wave modes.
inline ComplexWaveField kg_superposition(const Grid1D& grid, const PhysicalParams& p,
                                         const std::vector<KGMode>& modes,
                                         double t_start = 0.0) {
    p.validate();
    if (modes.empty()) throw ConfigError("kg_superposition: no modes given");
    constexpr double pi = 3.14159265358979323846;
    if (grid.boundary == Boundary::periodic)
        for (const auto& md : modes) {
            const double cycles = md.k * (grid.x_max - grid.x_min) / (2.0 * pi);
            if (std::abs(cycles - std::round(cycles)) > 1e-9)
                throw ConfigError("kg_superposition: mode k not commensurate with the domain");
        }
    ComplexWaveField out;
    out.grid = grid;
    out.t0 = t_start;
    out.dt_slice = grid.dt;
    out.values.assign(grid.n_t, ComplexSlice(grid.n_points(), Complex(0.0, 0.0)));
    for (std::size_t j = 0; j < grid.n_t; ++j) {
        const double t = t_start + static_cast<double>(j) * grid.dt;
        for (const auto& md : modes) {
            const double omega = md.freq_sign * kg_omega(p, md.k);
            for (std::size_t i = 0; i < grid.n_points(); ++i) {
                const double ph = md.k * grid.x(i) - omega * t;
                out.values[j][i] += md.amplitude * Complex(std::cos(ph), std::sin(ph));
            }
        }
        out.norm_history.push_back(slice_norm(out.values[j], grid));
    }
    return out;
}

/// Gaussian packet parameters for the exact spectral construction.
struct KGPacketSpec {
    double x0 = 0.0;
    double sigma0 = 0.5;
    double k0 = 0.0;
};

namespace detail {

inline double kg_mode_wavenumber(const Grid1D& g, std::size_t j);

/// Discrete spectrum (one coefficient per grid mode) of the Gaussian
/// envelope exp(-(x-x0)^2 / 4 sigma0^2 + i k0 (x-x0)), unit-normalized.
/// Coefficients are phase-shifted so that sum_j c_j exp(i k_j x) evaluated
/// at the grid points reproduces the envelope exactly.
inline std::vector<Complex> kg_packet_spectrum(const Grid1D& g, const KGPacketSpec& spec) {
    if (g.boundary != Boundary::periodic)
        throw ConfigError("kg_packet: spectral construction needs a periodic grid");
    constexpr double pi = 3.14159265358979323846;
    const std::size_t n = g.n_points();
    ComplexSlice psi0(n);
    const double norm0 = std::pow(2.0 * pi * spec.sigma0 * spec.sigma0, -0.25);
    for (std::size_t i = 0; i < n; ++i) {
        const double dxc = g.x(i) - spec.x0;
        psi0[i] = norm0 * std::exp(Complex(-dxc * dxc / (4.0 * spec.sigma0 * spec.sigma0),
                                           spec.k0 * dxc));
    }
    // Forward DFT, direct evaluation (grids stay small enough).
    std::vector<Complex> coeff(n);
    for (std::size_t j = 0; j < n; ++j) {
        Complex acc(0.0, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double ph = -2.0 * pi * static_cast<double>(j) * static_cast<double>(i) /
                              static_cast<double>(n);
            acc += psi0[i] * Complex(std::cos(ph), std::sin(ph));
        }
        coeff[j] = acc / static_cast<double>(n);
    }
    // Absorb the domain offset: the DFT basis is exp(i k_j (x - x_min)).
    for (std::size_t j = 0; j < n; ++j) {
        const double ph = -kg_mode_wavenumber(g, j) * g.x_min;
        coeff[j] *= Complex(std::cos(ph), std::sin(ph));
    }
    return coeff;
}

/// Signed wavenumber of DFT bin j (bins above n/2 alias to negative k).
inline double kg_mode_wavenumber(const Grid1D& g, std::size_t j) {
    constexpr double pi = 3.14159265358979323846;
    const std::size_t n = g.n_points();
    const double L = g.x_max - g.x_min;
    long long jj = static_cast<long long>(j);
    if (jj > static_cast<long long>(n) / 2) jj -= static_cast<long long>(n);
    return 2.0 * pi * static_cast<double>(jj) / L;
}

} // namespace detail

/// Exact positive-frequency Gaussian packet: every Fourier mode of the
/// initial envelope evolves with its own dispersion frequency, so the
/// sampled field solves the wave equation to machine precision.
inline ComplexWaveField kg_packet_field(const Grid1D& grid, const PhysicalParams& p,
                                        const KGPacketSpec& spec, double t_start = 0.0) {
    p.validate();
    const std::vector<Complex> coeff = detail::kg_packet_spectrum(grid, spec);
    const std::size_t n = grid.n_points();
    std::vector<double> k(n), omega(n);
    for (std::size_t j = 0; j < n; ++j) {
        k[j] = detail::kg_mode_wavenumber(grid, j);
        omega[j] = kg_omega(p, k[j]);
    }
    ComplexWaveField out;
    out.grid = grid;
    out.t0 = t_start;
    out.dt_slice = grid.dt;
    out.values.assign(grid.n_t, ComplexSlice(n, Complex(0.0, 0.0)));
    for (std::size_t s = 0; s < grid.n_t; ++s) {
        const double t = t_start + static_cast<double>(s) * grid.dt;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(coeff[j]) < 1e-300) continue;
            const Complex rot = std::exp(Complex(0.0, -omega[j] * t));
            const Complex cj = coeff[j] * rot;
            for (std::size_t i = 0; i < n; ++i) {
                const double ph = k[j] * grid.x(i);
                out.values[s][i] += cj * Complex(std::cos(ph), std::sin(ph));
            }
        }
        out.norm_history.push_back(slice_norm(out.values[s], grid));
    }
    return out;
}

/// Initial data (psi0, d_t psi0) of the exact packet, for feeding the solver.
inline std::pair<ComplexSlice, ComplexSlice> kg_packet_initial(const Grid1D& grid,
                                                               const PhysicalParams& p,
                                                               const KGPacketSpec& spec) {
    p.validate();
    const std::vector<Complex> coeff = detail::kg_packet_spectrum(grid, spec);
    const std::size_t n = grid.n_points();
    ComplexSlice psi0(n, Complex(0.0, 0.0));
    ComplexSlice dpsi0(n, Complex(0.0, 0.0));
    for (std::size_t j = 0; j < n; ++j) {
        const double k = detail::kg_mode_wavenumber(grid, j);
        const double omega = kg_omega(p, k);
        for (std::size_t i = 0; i < n; ++i) {
            const double ph = k * grid.x(i);
            const Complex e(std::cos(ph), std::sin(ph));
            psi0[i] += coeff[j] * e;
            dpsi0[i] += coeff[j] * Complex(0.0, -omega) * e;
        }
    }
    return {psi0, dpsi0};
}

/// Multiply by the vacuum phase exp(-i E_vac t / hbar).  The decomposed
/// action of the product gains exactly E_vac * t; the raw wave-equation
/// residual of the output is a reported quantity, never assumed zero.
inline ComplexWaveField apply_vacuum_phase(const ComplexWaveField& f, const PhysicalParams& p,
                                           double e_vac) {
    ComplexWaveField out = f;
    for (std::size_t j = 0; j < out.n_slices(); ++j) {
        const double ph = -e_vac * out.time(j) / p.hbar;
        const Complex rot(std::cos(ph), std::sin(ph));
        for (Complex& z : out.values[j]) z *= rot;
    }
    return out;
}

/// Contravariant two-current of a relativistic polar field with a vacuum
/// phase offset: with Sigma = S + E_vac t,
///   j0 = P d_t Sigma / c   (time component, x^0 = c t),
///   j1 = -P d_x Sigma      (index raised with signature (+,-,-,-)).
struct FourCurrent {
    Grid1D grid;
    double t0 = 0.0;
    double dt_slice = 0.0;
    double e_vac = 0.0;
    double c = 1.0;
    History j0, j1;
    MaskHistory mask;

    std::size_t n_slices() const { return j0.size(); }
};

/// Build the currents from a relativistic decomposition.  Time stencils are
/// second order everywhere (one-sided at the first/last slice).
inline FourCurrent compute_currents(const PolarField& polar, const PhysicalParams& p,
                                    double e_vac) {
    if (polar.convention != SignConvention::relativistic)
        throw ConfigError("compute_currents: needs a relativistic decomposition");
    if (polar.n_slices() < 3)
        throw ConfigError("compute_currents: need at least 3 time slices");
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();

    const History St = time_derivative(polar.S, polar.dt_slice);
    FourCurrent cur;
    cur.grid = polar.grid;
    cur.t0 = polar.t0;
    cur.dt_slice = polar.dt_slice;
    cur.e_vac = e_vac;
    cur.c = p.c;
    cur.j0.assign(nt, Slice(np));
    cur.j1.assign(nt, Slice(np));
    cur.mask = polar.node_mask;
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice Sx = gradient_phase(polar.S[j], polar.grid,
                                        2.0 * 3.14159265358979323846 * polar.hbar);
        for (std::size_t i = 0; i < np; ++i) {
            const double P = polar.R[j][i] * polar.R[j][i];
            cur.j0[j][i] = P * (St[j][i] + e_vac) / p.c;
            cur.j1[j][i] = -P * Sx[i];
        }
    }
    return cur;
}

/// Divergence residual of the total current, d_mu j^mu = d_t j0 / c + d_x j1.
/// Exact solutions conserve the total current, so the residual converges at
/// stencil order; norms are taken over interior slices and unmasked samples.
inline ResidualEntry total_current_residual(const FourCurrent& cur) {
    if (cur.n_slices() < 3)
        throw ConfigError("total_current_residual: need at least 3 time slices");
    const std::size_t nt = cur.n_slices();
    const std::size_t np = cur.j0[0].size();
    const History dj0 = time_derivative(cur.j0, cur.dt_slice);

    ResidualEntry e;
    e.id = EquationId::total_current_conservation;
    e.convention = SignConvention::relativistic;
    e.dx = cur.grid.dx();
    e.dt = cur.dt_slice;
    e.n_x = cur.grid.n_x;
    e.n_t = nt;

    double linf = 0.0, sum2 = 0.0;
    std::size_t n_used = 0, n_masked = 0, n_total = 0;
    for (std::size_t j = 1; j + 1 < nt; ++j) {
        const Slice dj1 = gradient(cur.j1[j], cur.grid);
        for (std::size_t i = 0; i < np; ++i) {
            ++n_total;
            if (!cur.mask.empty() && cur.mask[j][i]) { ++n_masked; continue; }
            const double r = dj0[j][i] / cur.c + dj1[i];
            linf = std::max(linf, std::abs(r));
            sum2 += r * r;
            ++n_used;
        }
    }
    if (n_used == 0) throw NumericalError("total_current_residual: all samples masked");
    e.residual_max = linf;
    e.residual_l2 = std::sqrt(sum2 / static_cast<double>(n_used));
    e.mask_fraction = n_total ? static_cast<double>(n_masked) / static_cast<double>(n_total) : 0.0;
    e.unreliable = e.mask_fraction >= 0.5;
    return e;
}

/// Smallest non-negative vacuum energy that makes the total time-component
/// current non-negative at every unmasked sample:
/// E_vac = max(0, -min d_t S), with d_t S from the shared time stencil.
/// The minimum runs over samples where the stencil is trustworthy: interior
/// slices, no node mask on the sample or its time neighbors, and a
/// slice-to-slice phase advance below the aliasing bound pi hbar (near
/// moving amplitude nodes the phase swings faster than any stencil can
/// resolve).
inline double minimal_evac(const PolarField& polar) {
    constexpr double pi = 3.14159265358979323846;
    if (polar.convention != SignConvention::relativistic)
        throw ConfigError("minimal_evac: needs a relativistic decomposition");
    if (polar.n_slices() < 3)
        throw ConfigError("minimal_evac: need at least 3 time slices");
    const History St = time_derivative(polar.S, polar.dt_slice);
    const double bound = pi * polar.hbar;
    double lowest = 0.0;
    bool any = false;
    for (std::size_t j = 1; j + 1 < polar.n_slices(); ++j)
        for (std::size_t i = 0; i < polar.n_points(); ++i) {
            if (polar.node_mask[j][i] || polar.node_mask[j - 1][i] ||
                polar.node_mask[j + 1][i])
                continue;
            if (std::abs(polar.S[j + 1][i] - polar.S[j][i]) >= bound ||
                std::abs(polar.S[j][i] - polar.S[j - 1][i]) >= bound)
                continue;
            lowest = any ? std::min(lowest, St[j][i]) : St[j][i];
            any = true;
        }
    if (!any) throw NumericalError("minimal_evac: all samples masked");
    return std::max(0.0, -lowest);
}

} // namespace smech
