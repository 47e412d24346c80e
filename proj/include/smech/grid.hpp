#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "smech/errors.hpp"

namespace smech {

/// Spatial boundary handling for the 1-D grid.
///  - periodic:   x_max identified with x_min; stencils wrap around.
///  - fixed_zero: field pinned to zero at both walls; one-sided stencils
///    at the ends.
enum class Boundary { periodic, fixed_zero };

inline const char* to_string(Boundary b) {
    return b == Boundary::periodic ? "periodic" : "fixed_zero";
}

/// Uniform 1-D space-time grid.
///
/// n_x counts spatial cells, so dx = (x_max - x_min) / n_x exactly.  A
/// periodic grid stores n_x samples (x_max is the wrapped image of x_min);
/// a fixed_zero grid stores n_x + 1 samples including both walls.
/// dt is the solver time step and n_t the number of stored time slices.
struct Grid1D {
    double x_min = 0.0;
    double x_max = 1.0;
    std::size_t n_x = 16;
    double dt = 1e-3;
    std::size_t n_t = 2;
    Boundary boundary = Boundary::periodic;

    double dx() const { return (x_max - x_min) / static_cast<double>(n_x); }

    /// Number of stored spatial samples.
    std::size_t n_points() const {
        return boundary == Boundary::periodic ? n_x : n_x + 1;
    }

    double x(std::size_t i) const { return x_min + static_cast<double>(i) * dx(); }
};

/// Validating factory for Grid1D.  Throws ConfigError on degenerate input.
inline Grid1D make_grid(double x_min, double x_max, std::size_t n_x, double dt,
                        std::size_t n_t, Boundary boundary) {
    if (!(x_max > x_min))
        throw ConfigError("make_grid: x_max must exceed x_min (got [" +
                          std::to_string(x_min) + ", " + std::to_string(x_max) + "])");
    if (n_x < 16)
        throw ConfigError("make_grid: n_x must be at least 16, got " + std::to_string(n_x));
    if (n_t < 2)
        throw ConfigError("make_grid: n_t must be at least 2, got " + std::to_string(n_t));
    if (dt < 0.0 || !std::isfinite(dt))
        throw ConfigError("make_grid: dt must be finite and non-negative, got " +
                          std::to_string(dt));
    Grid1D g;
    g.x_min = x_min;
    g.x_max = x_max;
    g.n_x = n_x;
    g.dt = dt;
    g.n_t = n_t;
    g.boundary = boundary;
    return g;
}

/// Physical constants of a run.  Defaults are natural units.
struct PhysicalParams {
    double hbar = 1.0;
    double m = 1.0;  ///< reference (rest) mass
    double c = 1.0;  ///< light speed; relativistic operations only
    double alpha = 0.0;  ///< drift mixing: 0 = deterministic guidance, 1 = full osmotic drift
    double V0 = 0.0;     ///< uniform external potential offset

    /// Diffusion coefficient of the osmotic sector, D = hbar / 2m.
    /// Requires a positive mass; massless fields have no osmotic sector.
    double D() const {
        if (!(m > 0.0)) throw ConfigError("PhysicalParams: D undefined for m <= 0");
        return hbar / (2.0 * m);
    }

    void validate() const {
        if (!(hbar > 0.0)) throw ConfigError("PhysicalParams: hbar must be positive");
        if (!(m >= 0.0)) throw ConfigError("PhysicalParams: m must be non-negative");
        if (!(c > 0.0)) throw ConfigError("PhysicalParams: c must be positive");
        if (alpha < 0.0 || alpha > 1.0)
            throw ConfigError("PhysicalParams: alpha must lie in [0, 1]");
    }
};

/// Require a Courant-stable time step for wave stepping: c * dt / dx <= 1.
inline void check_cfl(const Grid1D& g, const PhysicalParams& p) {
    const double ratio = p.c * g.dt / g.dx();
    if (ratio > 1.0 + 1e-12)
        throw ConfigError("CFL violation: c*dt/dx = " + std::to_string(ratio) +
                          " > 1 (dt = " + std::to_string(g.dt) + ", dx = " +
                          std::to_string(g.dx()) + ", c = " + std::to_string(p.c) + ")");
}

} // namespace smech
