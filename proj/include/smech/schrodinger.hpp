#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "smech/errors.hpp"
#include "smech/field.hpp"
#include "smech/grid.hpp"

namespace smech {

/// Nonrelativistic evolution problem i hbar d_t psi = (-hbar^2/2m d_xx + V) psi.
struct SchrodingerProblem {
    Grid1D grid;
    PhysicalParams params;
    ComplexSlice psi0;  ///< initial slice, normalized to 1e-10
    Slice V;            ///< sampled potential; empty means V = 0

    void validate() const {
        params.validate();
        if (psi0.size() != grid.n_points())
            throw ConfigError("SchrodingerProblem: psi0 size does not match grid");
        if (!V.empty() && V.size() != grid.n_points())
            throw ConfigError("SchrodingerProblem: V size does not match grid");
        const double n = slice_norm(psi0, grid);
        if (std::abs(n - 1.0) > 1e-10)
            throw ConfigError("SchrodingerProblem: psi0 norm deviates from 1 by " +
                              std::to_string(std::abs(n - 1.0)));
    }
};

namespace detail {

/// Solve a tridiagonal system in place (Thomas algorithm, no pivoting;
/// the Crank-Nicolson matrices are strongly regular).
inline void thomas_solve(const std::vector<Complex>& sub, std::vector<Complex> diag,
                         const std::vector<Complex>& sup, std::vector<Complex>& rhs) {
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        const Complex w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;)
        rhs[i] = (rhs[i] - sup[i] * rhs[i + 1]) / diag[i];
}

/// Solve a cyclic tridiagonal system via the Sherman-Morrison correction.
inline void cyclic_thomas_solve(const std::vector<Complex>& sub, const std::vector<Complex>& diag,
                                const std::vector<Complex>& sup, Complex corner_lo,
                                Complex corner_hi, std::vector<Complex>& rhs) {
    // corner_lo = A[n-1][0], corner_hi = A[0][n-1].
    const std::size_t n = diag.size();
    const Complex gamma = -diag[0];
    std::vector<Complex> d(diag);
    d[0] = diag[0] - gamma;
    d[n - 1] = diag[n - 1] - corner_lo * corner_hi / gamma;

    std::vector<Complex> u(n, Complex(0.0, 0.0));
    u[0] = gamma;
    u[n - 1] = corner_lo;

    std::vector<Complex> y(rhs);
    thomas_solve(sub, d, sup, y);
    thomas_solve(sub, d, sup, u);

    // v = (1, 0, ..., 0, corner_hi / gamma)
    const Complex vy = y[0] + corner_hi / gamma * y[n - 1];
    const Complex vu = u[0] + corner_hi / gamma * u[n - 1];
    const Complex f = vy / (Complex(1.0, 0.0) + vu);
    for (std::size_t i = 0; i < n; ++i) rhs[i] = y[i] - f * u[i];
}

} // namespace detail

/// Options controlling how much solver history is materialized.
struct SolveOptions {
    std::size_t store_every = 1;  ///< keep every k-th step; dt_slice = k * grid.dt
    double t_start = 0.0;
    std::size_t burn_in = 0;  ///< steps taken before the first stored slice
};

/// Incremental Crank-Nicolson integrator for
/// (1 + i dt H / 2 hbar) psi' = (1 - i dt H / 2 hbar) psi.
/// The scheme is unitary for Hermitian H; callers can check norm drift via
/// norm().  One instance owns the current slice; step() advances it by dt.
class CrankNicolsonStepper {
public:
    explicit CrankNicolsonStepper(const SchrodingerProblem& prob)
        : grid_(prob.grid), periodic_(prob.grid.boundary == Boundary::periodic) {
        prob.validate();
        const PhysicalParams& p = prob.params;
        const std::size_t np = grid_.n_points();
        const double dx = grid_.dx();
        // Off-diagonal weight of (i dt / 2 hbar) H.
        lam_ = p.hbar * grid_.dt / (4.0 * p.m * dx * dx);

        psi_ = prob.psi0;
        if (!periodic_) {
            // Walls are hard zeros of the evolution.
            psi_.front() = Complex(0.0, 0.0);
            psi_.back() = Complex(0.0, 0.0);
        }

        // Active unknowns: all samples when periodic, interior ones otherwise.
        lo_ = periodic_ ? 0 : 1;
        n_act_ = periodic_ ? np : np - 2;
        sub_.assign(n_act_, Complex(0.0, -lam_));
        sup_.assign(n_act_, Complex(0.0, -lam_));
        diagA_.resize(n_act_);
        diagB_.resize(n_act_);
        for (std::size_t k = 0; k < n_act_; ++k) {
            const double v = prob.V.empty() ? 0.0 : prob.V[lo_ + k];
            const double im = 2.0 * lam_ + grid_.dt * v / (2.0 * p.hbar);
            diagA_[k] = Complex(1.0, im);
            diagB_[k] = Complex(1.0, -im);
        }
        rhs_.resize(n_act_);
    }

    /// Advance the slice by one grid.dt.
    void step() {
        const std::size_t np = psi_.size();
        // rhs = B psi over the active samples.
        for (std::size_t k = 0; k < n_act_; ++k) {
            const std::size_t i = lo_ + k;
            Complex left, right;
            if (periodic_) {
                left = psi_[(i + np - 1) % np];
                right = psi_[(i + 1) % np];
            } else {
                left = psi_[i - 1];
                right = psi_[i + 1];
            }
            rhs_[k] = diagB_[k] * psi_[i] + Complex(0.0, lam_) * (left + right);
        }
        if (periodic_)
            detail::cyclic_thomas_solve(sub_, diagA_, sup_, Complex(0.0, -lam_),
                                        Complex(0.0, -lam_), rhs_);
        else
            detail::thomas_solve(sub_, diagA_, sup_, rhs_);
        for (std::size_t k = 0; k < n_act_; ++k) psi_[lo_ + k] = rhs_[k];
    }

    const ComplexSlice& psi() const { return psi_; }
    double norm() const { return slice_norm(psi_, grid_); }

private:
    Grid1D grid_;
    bool periodic_;
    double lam_ = 0.0;
    std::size_t lo_ = 0, n_act_ = 0;
    ComplexSlice psi_;
    std::vector<Complex> sub_, sup_, diagA_, diagB_, rhs_;
};

/// Batch Crank-Nicolson solve.  Every stored slice keeps the initial norm
/// to 1e-9 or the solve aborts.  Produces grid.n_t stored slices, i.e.
/// (n_t - 1) * store_every steps.
inline ComplexWaveField solve_schrodinger(const SchrodingerProblem& prob,
                                          const SolveOptions& opt = {}) {
    if (opt.store_every == 0) throw ConfigError("solve_schrodinger: store_every must be >= 1");
    CrankNicolsonStepper stepper(prob);
    const Grid1D& g = prob.grid;

    for (std::size_t step = 0; step < opt.burn_in; ++step) stepper.step();

    ComplexWaveField out;
    out.grid = g;
    out.t0 = opt.t_start + g.dt * static_cast<double>(opt.burn_in);
    out.dt_slice = g.dt * static_cast<double>(opt.store_every);
    out.values.reserve(g.n_t);

    const double init_norm = stepper.norm();
    auto store = [&]() {
        const double n = stepper.norm();
        if (!std::isfinite(n)) throw NumericalError("solve_schrodinger: non-finite norm");
        if (std::abs(n - init_norm) > 1e-9)
            throw NumericalError("solve_schrodinger: norm drifted by " +
                                 std::to_string(std::abs(n - init_norm)));
        out.values.push_back(stepper.psi());
        out.norm_history.push_back(n);
    };
    store();

    for (std::size_t slice = 1; slice < g.n_t; ++slice) {
        for (std::size_t step = 0; step < opt.store_every; ++step) stepper.step();
        store();
    }
    return out;
}

/// Closed-form dispersing free Gaussian packet.
///
/// psi(x, t) = (2 pi s0^2)^(-1/4) a^(-1/2)
///             exp(-(x - x0 - v0 t)^2 / (4 s0^2 a) + i (k0 (x - x0) - hbar k0^2 t / 2m)),
/// a = 1 + i hbar t / (2 m s0^2), v0 = hbar k0 / m.
/// |psi|^2 stays normalized with width s0 |a|, so the packet spreads
/// monotonically while the centroid moves at v0.
inline ComplexWaveField analytic_free_gaussian(const Grid1D& grid, const PhysicalParams& p,
                                               double x0, double sigma0, double k0,
                                               double t_start = 0.0) {
    p.validate();
    if (!(sigma0 > 0.0)) throw ConfigError("analytic_free_gaussian: sigma0 must be positive");
    constexpr double pi = 3.14159265358979323846;
    ComplexWaveField out;
    out.grid = grid;
    out.t0 = t_start;
    out.dt_slice = grid.dt;
    out.values.assign(grid.n_t, ComplexSlice(grid.n_points()));

    const double v0 = p.hbar * k0 / p.m;
    const double amp = std::pow(2.0 * pi * sigma0 * sigma0, -0.25);
    for (std::size_t j = 0; j < grid.n_t; ++j) {
        const double t = t_start + static_cast<double>(j) * grid.dt;
        const Complex a(1.0, p.hbar * t / (2.0 * p.m * sigma0 * sigma0));
        const Complex pref = amp / std::sqrt(a);
        for (std::size_t i = 0; i < grid.n_points(); ++i) {
            const double x = grid.x(i);
            const double xc = x - x0 - v0 * t;
            const Complex gauss = -xc * xc / (4.0 * sigma0 * sigma0 * a);
            const Complex phase(0.0, k0 * (x - x0) - p.hbar * k0 * k0 * t / (2.0 * p.m));
            out.values[j][i] = pref * std::exp(gauss + phase);
        }
        out.norm_history.push_back(slice_norm(out.values[j], grid));
    }
    return out;
}

/// Energy of mode n of the infinite well of width L: hbar^2 n^2 pi^2 / (2 m L^2).
inline double box_energy(const PhysicalParams& p, unsigned n, double L) {
    constexpr double pi = 3.14159265358979323846;
    const double kn = static_cast<double>(n) * pi / L;
    return p.hbar * p.hbar * kn * kn / (2.0 * p.m);
}

/// Stationary box eigenstate on a fixed_zero grid spanning the well:
/// psi = sqrt(2/L) sin(n pi (x - x_min) / L) exp(-i E_n t / hbar).
inline ComplexWaveField analytic_box_eigenstate(const Grid1D& grid, const PhysicalParams& p,
                                                unsigned n, double t_start = 0.0) {
    p.validate();
    if (grid.boundary != Boundary::fixed_zero)
        throw ConfigError("analytic_box_eigenstate: grid must have fixed_zero walls");
    if (n == 0) throw ConfigError("analytic_box_eigenstate: mode index must be >= 1");
    constexpr double pi = 3.14159265358979323846;
    const double L = grid.x_max - grid.x_min;
    const double kn = static_cast<double>(n) * pi / L;
    const double En = box_energy(p, n, L);
    const double amp = std::sqrt(2.0 / L);

    ComplexWaveField out;
    out.grid = grid;
    out.t0 = t_start;
    out.dt_slice = grid.dt;
    out.values.assign(grid.n_t, ComplexSlice(grid.n_points()));
    for (std::size_t j = 0; j < grid.n_t; ++j) {
        const double t = t_start + static_cast<double>(j) * grid.dt;
        const double ph = -En * t / p.hbar;
        const Complex rot(std::cos(ph), std::sin(ph));
        for (std::size_t i = 0; i < grid.n_points(); ++i) {
            const double s = amp * std::sin(kn * (grid.x(i) - grid.x_min));
            out.values[j][i] = s * rot;
        }
        out.norm_history.push_back(slice_norm(out.values[j], grid));
    }
    return out;
}

} // namespace smech
