#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "smech/errors.hpp"
#include "smech/grid.hpp"
#include "smech/stencil.hpp"

namespace smech {

using Complex = std::complex<double>;
using ComplexSlice = std::vector<Complex>;

/// Mask history: flag[j][i] != 0 marks sample i of slice j as unreliable
/// (amplitude node; derived phase there is interpolated).
using MaskHistory = std::vector<std::vector<char>>;

/// Complex scalar field sampled on a Grid1D at uniformly spaced times.
/// dt_slice is the spacing of the *stored* slices, which may be a multiple
/// of the solver step grid.dt when a solver stores output at a stride.
struct ComplexWaveField {
    Grid1D grid;
    double t0 = 0.0;
    double dt_slice = 0.0;
    std::vector<ComplexSlice> values;   ///< [slice][point]
    std::vector<double> norm_history;   ///< integral of |psi|^2 dx per stored slice

    std::size_t n_slices() const { return values.size(); }
    std::size_t n_points() const { return grid.n_points(); }
    double time(std::size_t j) const { return t0 + static_cast<double>(j) * dt_slice; }
};

/// Rectangle-rule norm of one slice: sum |psi_i|^2 dx.
inline double slice_norm(const ComplexSlice& v, const Grid1D& g) {
    double s = 0.0;
    for (const Complex& z : v) s += std::norm(z);
    return s * g.dx();
}

/// Scale every slice so that slice 0 has unit norm.
inline void normalize(ComplexWaveField& f) {
    if (f.values.empty()) throw ConfigError("normalize: field has no slices");
    const double n0 = slice_norm(f.values[0], f.grid);
    if (!(n0 > 0.0)) throw NumericalError("normalize: null field");
    const double s = 1.0 / std::sqrt(n0);
    for (auto& slice : f.values)
        for (Complex& z : slice) z *= s;
    f.norm_history.clear();
    for (const auto& slice : f.values) f.norm_history.push_back(slice_norm(slice, f.grid));
}

/// Sign convention of the polar decomposition psi = R exp(s i S / hbar):
/// s = +1 for the nonrelativistic form, s = -1 for the relativistic one.
enum class SignConvention { nonrelativistic, relativistic };

inline const char* to_string(SignConvention c) {
    return c == SignConvention::nonrelativistic ? "nonrelativistic" : "relativistic";
}

inline double phase_sign(SignConvention c) {
    return c == SignConvention::nonrelativistic ? 1.0 : -1.0;
}

/// Polar form of a wave field: amplitude R >= 0 and action-valued phase S
/// with psi = R exp(phase_sign * i S / hbar).  S is unwrapped along x within
/// each slice and along t at a reference column, so it is smooth up to the
/// flagged node regions.
struct PolarField {
    Grid1D grid;
    double t0 = 0.0;
    double dt_slice = 0.0;
    SignConvention convention = SignConvention::nonrelativistic;
    double hbar = 1.0;
    double node_epsilon = 1e-6;
    double r_max = 0.0;         ///< global amplitude maximum used for the mask
    History R;                  ///< amplitude, >= 0
    History S;                  ///< unwrapped action
    MaskHistory node_mask;      ///< true where R < node_epsilon * r_max

    std::size_t n_slices() const { return R.size(); }
    std::size_t n_points() const { return grid.n_points(); }
    double time(std::size_t j) const { return t0 + static_cast<double>(j) * dt_slice; }
};

namespace detail {

/// Reduce an angle difference into (-pi, pi].
inline double wrap_angle(double d) {
    constexpr double pi = 3.14159265358979323846;
    const double two_pi = 2.0 * pi;
    d = std::fmod(d, two_pi);
    if (d <= -pi) d += two_pi;
    else if (d > pi) d -= two_pi;
    return d;
}

} // namespace detail

/// Decompose psi into (R, S) with the requested sign convention.
///
/// node_epsilon sets the amplitude mask threshold relative to the global
/// amplitude maximum.  Phase values inside masked runs are linearly
/// interpolated between the flanking unmasked samples (constant
/// extrapolation at the array ends) and remain flagged.
/// Throws NumericalError for an identically null field and when the slice
/// spacing aliases the phase advance (time-adjacent unmasked samples
/// differing by pi*hbar or more).
inline PolarField polar_decompose(const ComplexWaveField& psi, SignConvention conv,
                                  double hbar = 1.0, double node_epsilon = 1e-6) {
    constexpr double pi = 3.14159265358979323846;
    if (!(hbar > 0.0)) throw ConfigError("polar_decompose: hbar must be positive");
    if (psi.values.empty()) throw ConfigError("polar_decompose: field has no slices");
    const std::size_t nt = psi.n_slices();
    const std::size_t np = psi.n_points();

    PolarField out;
    out.grid = psi.grid;
    out.t0 = psi.t0;
    out.dt_slice = psi.dt_slice;
    out.convention = conv;
    out.hbar = hbar;
    out.node_epsilon = node_epsilon;
    out.R.assign(nt, Slice(np, 0.0));
    out.S.assign(nt, Slice(np, 0.0));
    out.node_mask.assign(nt, std::vector<char>(np, 0));

    double rmax = 0.0;
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < np; ++i) {
            const double r = std::abs(psi.values[j][i]);
            if (!std::isfinite(r))
                throw NumericalError("polar_decompose: non-finite sample");
            out.R[j][i] = r;
            rmax = std::max(rmax, r);
        }
    if (rmax == 0.0) throw NumericalError("polar_decompose: null field");
    out.r_max = rmax;

    const double thresh = node_epsilon * rmax;
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < np; ++i)
            out.node_mask[j][i] = out.R[j][i] < thresh ? 1 : 0;

    // Raw phases, then per-slice unwrap along x over unmasked samples.
    History theta(nt, Slice(np, 0.0));
    for (std::size_t j = 0; j < nt; ++j) {
        const auto& row = psi.values[j];
        const auto& mask = out.node_mask[j];
        Slice raw(np, 0.0);
        for (std::size_t i = 0; i < np; ++i) raw[i] = std::atan2(row[i].imag(), row[i].real());

        long long prev = -1;
        for (std::size_t i = 0; i < np; ++i) {
            if (mask[i]) continue;
            if (prev < 0)
                theta[j][i] = raw[i];
            else
                theta[j][i] = theta[j][static_cast<std::size_t>(prev)] +
                              detail::wrap_angle(raw[i] - raw[static_cast<std::size_t>(prev)]);
            prev = static_cast<long long>(i);
        }
        // Fill masked runs: linear interpolation between flanking unmasked
        // phases, constant extrapolation past the ends.
        long long left = -1;
        for (std::size_t i = 0; i < np; ++i) {
            if (!mask[i]) { left = static_cast<long long>(i); continue; }
            std::size_t r = i;
            while (r < np && mask[r]) ++r;
            const bool has_l = left >= 0;
            const bool has_r = r < np;
            for (std::size_t k = i; k < r; ++k) {
                if (has_l && has_r) {
                    const double tl = theta[j][static_cast<std::size_t>(left)];
                    const double tr = theta[j][r];
                    const double w = static_cast<double>(k - static_cast<std::size_t>(left)) /
                                     static_cast<double>(r - static_cast<std::size_t>(left));
                    theta[j][k] = tl + w * (tr - tl);
                } else if (has_l) {
                    theta[j][k] = theta[j][static_cast<std::size_t>(left)];
                } else if (has_r) {
                    theta[j][k] = theta[j][r];
                } else {
                    theta[j][k] = 0.0;  // slice entirely masked
                }
            }
            i = r > 0 ? r - 1 : r;
        }
    }

    // Align slices in time: unwrap the series at the most reliable column
    // and shift whole slices by the resulting 2 pi multiples.
    std::size_t ref = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < np; ++i) {
        double worst = out.R[0][i];
        for (std::size_t j = 1; j < nt; ++j) worst = std::min(worst, out.R[j][i]);
        if (worst > best) { best = worst; ref = i; }
    }
    for (std::size_t j = 1; j < nt; ++j) {
        const double draw = theta[j][ref] - theta[j - 1][ref];
        const double adj = detail::wrap_angle(draw) - draw;  // multiple of 2 pi
        if (adj != 0.0)
            for (std::size_t i = 0; i < np; ++i) theta[j][i] += adj;
    }

    const double sgn = phase_sign(conv);
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < np; ++i)
            out.S[j][i] = sgn * hbar * theta[j][i];

    // Phase continuity along t: slice spacing must resolve the phase rate.
    for (std::size_t j = 1; j < nt; ++j)
        for (std::size_t i = 0; i < np; ++i) {
            if (out.node_mask[j][i] || out.node_mask[j - 1][i]) continue;
            if (std::abs(out.S[j][i] - out.S[j - 1][i]) >= pi * hbar * (1.0 + 1e-12))
                throw NumericalError(
                    "polar_decompose: phase advance per stored slice reaches pi*hbar; "
                    "reduce the slice spacing");
        }
    return out;
}

/// Rebuild the complex field from a polar decomposition.
inline ComplexWaveField reconstruct(const PolarField& p) {
    ComplexWaveField out;
    out.grid = p.grid;
    out.t0 = p.t0;
    out.dt_slice = p.dt_slice;
    out.values.assign(p.n_slices(), ComplexSlice(p.n_points()));
    const double sgn = phase_sign(p.convention);
    for (std::size_t j = 0; j < p.n_slices(); ++j)
        for (std::size_t i = 0; i < p.n_points(); ++i) {
            const double th = sgn * p.S[j][i] / p.hbar;
            out.values[j][i] = Complex(p.R[j][i] * std::cos(th), p.R[j][i] * std::sin(th));
        }
    for (const auto& s : out.values) out.norm_history.push_back(slice_norm(s, out.grid));
    return out;
}

/// Amplitude mask at a caller-chosen relative threshold (e.g. wide node
/// exclusion for bound-state profiles).  Marks samples with
/// R < rel_threshold * r_max.
inline MaskHistory widen_mask(const PolarField& p, double rel_threshold) {
    MaskHistory m(p.n_slices(), std::vector<char>(p.n_points(), 0));
    const double thresh = rel_threshold * p.r_max;
    for (std::size_t j = 0; j < p.n_slices(); ++j)
        for (std::size_t i = 0; i < p.n_points(); ++i)
            m[j][i] = p.R[j][i] < thresh ? 1 : 0;
    return m;
}

} // namespace smech
