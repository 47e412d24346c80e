#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "smech/errors.hpp"
#include "smech/grid.hpp"

namespace smech {

using Slice = std::vector<double>;
/// Time-ordered stack of spatial slices: history[j][i] is slice j, sample i.
using History = std::vector<Slice>;

namespace detail {

inline void require_size(const Slice& f, const Grid1D& g, const char* who) {
    if (f.size() != g.n_points())
        throw ConfigError(std::string(who) + ": slice has " + std::to_string(f.size()) +
                          " samples, grid expects " + std::to_string(g.n_points()));
}

} // namespace detail

/// First spatial derivative, second order everywhere.
/// Central differences in the interior; wraparound for periodic grids;
/// one-sided three-point stencils at fixed walls.
inline Slice gradient(const Slice& f, const Grid1D& g) {
    detail::require_size(f, g, "gradient");
    const std::size_t n = f.size();
    const double h = g.dx();
    Slice out(n);
    for (std::size_t i = 1; i + 1 < n; ++i)
        out[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
    if (g.boundary == Boundary::periodic) {
        out[0] = (f[1] - f[n - 1]) / (2.0 * h);
        out[n - 1] = (f[0] - f[n - 2]) / (2.0 * h);
    } else {
        // Difference form of the one-sided stencils (-3 f0 + 4 f1 - f2) / 2h;
        // written this way so gradient_phase can mirror it term for term.
        out[0] = (3.0 * (f[1] - f[0]) - (f[2] - f[1])) / (2.0 * h);
        out[n - 1] = (3.0 * (f[n - 1] - f[n - 2]) - (f[n - 2] - f[n - 3])) / (2.0 * h);
    }
    return out;
}

/// First spatial derivative of a phase-like quantity that is only defined
/// modulo `period` (an unwrapped action winds by a multiple of 2 pi hbar
/// across a periodic domain).  Every adjacent difference is reduced to its
/// principal value in (-period/2, period/2] before the stencil combines
/// them, which equals the plain stencil bit-for-bit when no wrap occurs
/// and removes the spurious seam spike when one does.  Resolution
/// requirement: the true sample-to-sample change stays under period/2.
inline Slice gradient_phase(const Slice& f, const Grid1D& g, double period) {
    detail::require_size(f, g, "gradient_phase");
    if (!(period > 0.0)) throw ConfigError("gradient_phase: period must be positive");
    const std::size_t n = f.size();
    const double h = g.dx();
    auto w = [period](double d) { return d - period * std::round(d / period); };
    Slice out(n);
    for (std::size_t i = 1; i + 1 < n; ++i)
        out[i] = (w(f[i + 1] - f[i]) + w(f[i] - f[i - 1])) / (2.0 * h);
    if (g.boundary == Boundary::periodic) {
        out[0] = (w(f[1] - f[0]) + w(f[0] - f[n - 1])) / (2.0 * h);
        out[n - 1] = (w(f[0] - f[n - 1]) + w(f[n - 1] - f[n - 2])) / (2.0 * h);
    } else {
        out[0] = (3.0 * w(f[1] - f[0]) - w(f[2] - f[1])) / (2.0 * h);
        out[n - 1] = (3.0 * w(f[n - 1] - f[n - 2]) - w(f[n - 2] - f[n - 3])) / (2.0 * h);
    }
    return out;
}

/// Second spatial derivative.  Compact three-point stencil in the interior,
/// wraparound for periodic grids, five-point one-sided stencils at fixed
/// walls (exact through cubics).
inline Slice laplacian(const Slice& f, const Grid1D& g) {
    detail::require_size(f, g, "laplacian");
    const std::size_t n = f.size();
    const double h2 = g.dx() * g.dx();
    Slice out(n);
    for (std::size_t i = 1; i + 1 < n; ++i)
        out[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / h2;
    if (g.boundary == Boundary::periodic) {
        out[0] = (f[1] - 2.0 * f[0] + f[n - 1]) / h2;
        out[n - 1] = (f[0] - 2.0 * f[n - 1] + f[n - 2]) / h2;
    } else {
        if (n < 5) throw ConfigError("laplacian: fixed_zero grid needs at least 5 samples");
        out[0] = (35.0 * f[0] - 104.0 * f[1] + 114.0 * f[2] - 56.0 * f[3] + 11.0 * f[4]) /
                 (12.0 * h2);
        out[n - 1] = (35.0 * f[n - 1] - 104.0 * f[n - 2] + 114.0 * f[n - 3] -
                      56.0 * f[n - 4] + 11.0 * f[n - 5]) / (12.0 * h2);
    }
    return out;
}

/// First time derivative of a slice history with uniform spacing dt.
/// Central in the interior, one-sided three-point at the first and last
/// slice (both second order).  Needs at least 3 slices.
inline History time_derivative(const History& f, double dt) {
    if (f.size() < 3)
        throw ConfigError("time_derivative: need at least 3 time slices, got " +
                          std::to_string(f.size()));
    if (!(dt > 0.0)) throw ConfigError("time_derivative: dt must be positive");
    const std::size_t nt = f.size();
    const std::size_t np = f[0].size();
    History out(nt, Slice(np));
    for (std::size_t i = 0; i < np; ++i) {
        out[0][i] = (-3.0 * f[0][i] + 4.0 * f[1][i] - f[2][i]) / (2.0 * dt);
        for (std::size_t j = 1; j + 1 < nt; ++j)
            out[j][i] = (f[j + 1][i] - f[j - 1][i]) / (2.0 * dt);
        out[nt - 1][i] = (3.0 * f[nt - 1][i] - 4.0 * f[nt - 2][i] + f[nt - 3][i]) / (2.0 * dt);
    }
    return out;
}

/// Second time derivative.  Compact in the interior; at the end slices a
/// five-point one-sided stencil when 5+ slices exist, otherwise the
/// shifted compact stencil (first order, flagged in the docs).
inline History second_time_derivative(const History& f, double dt) {
    if (f.size() < 3)
        throw ConfigError("second_time_derivative: need at least 3 time slices, got " +
                          std::to_string(f.size()));
    if (!(dt > 0.0)) throw ConfigError("second_time_derivative: dt must be positive");
    const std::size_t nt = f.size();
    const std::size_t np = f[0].size();
    const double dt2 = dt * dt;
    History out(nt, Slice(np));
    for (std::size_t i = 0; i < np; ++i) {
        for (std::size_t j = 1; j + 1 < nt; ++j)
            out[j][i] = (f[j + 1][i] - 2.0 * f[j][i] + f[j - 1][i]) / dt2;
        if (nt >= 5) {
            out[0][i] = (35.0 * f[0][i] - 104.0 * f[1][i] + 114.0 * f[2][i] -
                         56.0 * f[3][i] + 11.0 * f[4][i]) / (12.0 * dt2);
            out[nt - 1][i] = (35.0 * f[nt - 1][i] - 104.0 * f[nt - 2][i] +
                              114.0 * f[nt - 3][i] - 56.0 * f[nt - 4][i] +
                              11.0 * f[nt - 5][i]) / (12.0 * dt2);
        } else {
            out[0][i] = (f[0][i] - 2.0 * f[1][i] + f[2][i]) / dt2;
            out[nt - 1][i] = (f[nt - 1][i] - 2.0 * f[nt - 2][i] + f[nt - 3][i]) / dt2;
        }
    }
    return out;
}

/// Wave operator (1/c^2) d_tt - d_xx applied to a real slice history.
/// Metric signature (+,-,-,-) with x^0 = c t.
inline History dalembertian(const History& f, const Grid1D& g, double c, double dt) {
    if (!(c > 0.0)) throw ConfigError("dalembertian: c must be positive");
    History dtt = second_time_derivative(f, dt);
    History out(f.size());
    for (std::size_t j = 0; j < f.size(); ++j) {
        Slice dxx = laplacian(f[j], g);
        out[j].resize(f[j].size());
        for (std::size_t i = 0; i < f[j].size(); ++i)
            out[j][i] = dtt[j][i] / (c * c) - dxx[i];
    }
    return out;
}

} // namespace smech
