#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "smech/errors.hpp"
#include "smech/field.hpp"
#include "smech/grid.hpp"
#include "smech/stencil.hpp"

namespace smech {

/// All pointwise velocity-type quantities extracted from one decomposed
/// field.  Masked samples hold 0.0 and are flagged; they are never NaN.
struct VelocityFieldSet {
    Grid1D grid;
    double t0 = 0.0;
    double dt_slice = 0.0;
    SignConvention convention = SignConvention::nonrelativistic;
    History v;         ///< current velocity (spatial component)
    History u;         ///< osmotic velocity D dP/P
    History b;         ///< drift velocity v + alpha u
    History u_D;       ///< diffusion-gradient velocity D dm/m (external mass profile)
    History u_M;       ///< mass-gradient velocity D dM/M
    History Q;         ///< quantum potential (convention-specific formula)
    History M;         ///< effective mass
    History P;         ///< probability density R^2
    MaskHistory mask;  ///< node mask plus tachyonic flags
    MaskHistory tachyonic;

    std::size_t n_slices() const { return P.size(); }
    std::size_t n_points() const { return P.empty() ? 0 : P[0].size(); }
};

/// Probability density P = R^2 per slice.
inline History probability_density(const PolarField& polar) {
    History P(polar.n_slices(), Slice(polar.n_points()));
    for (std::size_t j = 0; j < polar.n_slices(); ++j)
        for (std::size_t i = 0; i < polar.n_points(); ++i)
            P[j][i] = polar.R[j][i] * polar.R[j][i];
    return P;
}

/// Osmotic velocity u = D dP/P, computed off-mask; masked samples are 0.
/// Dividing the stencil gradient by the sampled P keeps the balance
/// identity u P - D dP = 0 exact to rounding.
inline History osmotic_velocity(const History& P, const MaskHistory& mask, const Grid1D& grid,
                                const PhysicalParams& params) {
    const double D = params.D();
    History u(P.size(), Slice(P.empty() ? 0 : P[0].size(), 0.0));
    for (std::size_t j = 0; j < P.size(); ++j) {
        const Slice Px = gradient(P[j], grid);
        for (std::size_t i = 0; i < P[j].size(); ++i) {
            if (!mask.empty() && mask[j][i]) continue;
            u[j][i] = D * Px[i] / P[j][i];
        }
    }
    return u;
}

/// Nonrelativistic current velocity v = dS/m.
inline History current_velocity_nonrel(const PolarField& polar, const PhysicalParams& params) {
    if (polar.convention != SignConvention::nonrelativistic)
        throw ConfigError("current_velocity_nonrel: field uses the relativistic convention");
    History v(polar.n_slices(), Slice(polar.n_points(), 0.0));
    for (std::size_t j = 0; j < polar.n_slices(); ++j) {
        const Slice Sx = gradient_phase(polar.S[j], polar.grid,
                                        2.0 * 3.14159265358979323846 * polar.hbar);
        for (std::size_t i = 0; i < polar.n_points(); ++i) {
            if (polar.node_mask[j][i]) continue;
            v[j][i] = Sx[i] / params.m;
        }
    }
    return v;
}

/// Relativistic current velocity: spatial component v1 = -dS/M and time
/// component v0 = d_t S / (c M) of v^mu = d^mu S / M.
struct RelCurrentVelocity {
    History v0, v1;
};

inline RelCurrentVelocity current_velocity_rel(const PolarField& polar, const History& M,
                                               const MaskHistory& mask,
                                               const PhysicalParams& params) {
    if (polar.convention != SignConvention::relativistic)
        throw ConfigError("current_velocity_rel: field uses the nonrelativistic convention");
    if (polar.n_slices() < 3)
        throw ConfigError("current_velocity_rel: need at least 3 time slices");
    const History St = time_derivative(polar.S, polar.dt_slice);
    RelCurrentVelocity out;
    out.v0.assign(polar.n_slices(), Slice(polar.n_points(), 0.0));
    out.v1.assign(polar.n_slices(), Slice(polar.n_points(), 0.0));
    for (std::size_t j = 0; j < polar.n_slices(); ++j) {
        const Slice Sx = gradient_phase(polar.S[j], polar.grid,
                                        2.0 * 3.14159265358979323846 * polar.hbar);
        for (std::size_t i = 0; i < polar.n_points(); ++i) {
            if (!mask.empty() && mask[j][i]) continue;
            if (M[j][i] == 0.0) throw NumericalError("current_velocity_rel: degenerate mass");
            out.v0[j][i] = St[j][i] / (params.c * M[j][i]);
            out.v1[j][i] = -Sx[i] / M[j][i];
        }
    }
    return out;
}

/// Drift velocity b = v + alpha u (the deterministic part of the stochastic
/// step); exact by construction, off-mask.
inline History drift_velocity(const History& v, const History& u, const MaskHistory& mask,
                              const PhysicalParams& params) {
    History b(v.size(), Slice(v.empty() ? 0 : v[0].size(), 0.0));
    for (std::size_t j = 0; j < v.size(); ++j)
        for (std::size_t i = 0; i < v[j].size(); ++i) {
            if (!mask.empty() && mask[j][i]) continue;
            b[j][i] = v[j][i] + params.alpha * u[j][i];
        }
    return b;
}

/// Nonrelativistic quantum potential Q = -(hbar^2/2m) lap(R)/R.
inline History quantum_potential_nonrel(const PolarField& polar, const PhysicalParams& params) {
    const double coef = -params.hbar * params.hbar / (2.0 * params.m);
    History Q(polar.n_slices(), Slice(polar.n_points(), 0.0));
    for (std::size_t j = 0; j < polar.n_slices(); ++j) {
        const Slice Rxx = laplacian(polar.R[j], polar.grid);
        for (std::size_t i = 0; i < polar.n_points(); ++i) {
            if (polar.node_mask[j][i]) continue;
            Q[j][i] = coef * Rxx[i] / polar.R[j][i];
        }
    }
    return Q;
}

/// Relativistic quantum potential Q = hbar^2 box(R)/R with the wave
/// operator box = (1/c^2) d_tt - d_xx.
inline History quantum_potential_rel(const PolarField& polar, const PhysicalParams& params) {
    if (polar.n_slices() < 3)
        throw ConfigError("quantum_potential_rel: need at least 3 time slices");
    const History boxR = dalembertian(polar.R, polar.grid, params.c, polar.dt_slice);
    const double h2 = params.hbar * params.hbar;
    History Q(polar.n_slices(), Slice(polar.n_points(), 0.0));
    for (std::size_t j = 0; j < polar.n_slices(); ++j)
        for (std::size_t i = 0; i < polar.n_points(); ++i) {
            if (polar.node_mask[j][i]) continue;
            Q[j][i] = h2 * boxR[j][i] / polar.R[j][i];
        }
    return Q;
}

/// Variable mass and its exclusion flags.
struct VariableMass {
    History M;               ///< sqrt of the radicand / c; 0 where flagged
    History Msq_c2;          ///< the radicand (M c)^2, stored before the root
    MaskHistory tachyonic;   ///< radicand < 0
};

/// Effective mass M = sqrt((m + V/c^2)^2 + hbar^2 box(R)/(c^2 R)).
/// Samples with a negative radicand are flagged tachyonic and excluded
/// downstream, never clamped.  Throws if every unmasked sample is tachyonic.
inline VariableMass variable_mass(const PolarField& polar, const PhysicalParams& params) {
    if (polar.n_slices() < 3)
        throw ConfigError("variable_mass: need at least 3 time slices");
    const History boxR = dalembertian(polar.R, polar.grid, params.c, polar.dt_slice);
    const double c = params.c;
    const double rest = params.m * c + params.V0 / c;  // (mc + V/c)
    const double h2 = params.hbar * params.hbar;
    VariableMass out;
    out.M.assign(polar.n_slices(), Slice(polar.n_points(), 0.0));
    out.Msq_c2.assign(polar.n_slices(), Slice(polar.n_points(), 0.0));
    out.tachyonic.assign(polar.n_slices(), std::vector<char>(polar.n_points(), 0));
    std::size_t n_ok = 0;
    for (std::size_t j = 0; j < polar.n_slices(); ++j)
        for (std::size_t i = 0; i < polar.n_points(); ++i) {
            if (polar.node_mask[j][i]) continue;
            const double msq = rest * rest + h2 * boxR[j][i] / polar.R[j][i];
            out.Msq_c2[j][i] = msq;
            if (msq < 0.0) {
                out.tachyonic[j][i] = 1;
            } else {
                out.M[j][i] = std::sqrt(msq) / c;
                ++n_ok;
            }
        }
    if (n_ok == 0) throw NumericalError("variable_mass: all unmasked samples tachyonic");
    return out;
}

/// Diffusion-gradient velocity u_D = D dm/m for an external mass profile,
/// with the reference diffusion constant D = hbar/(2 m0).
inline Slice diffusion_gradient_velocity(const Slice& m_field, const Grid1D& grid,
                                         const PhysicalParams& params) {
    for (double m : m_field)
        if (!(m > 0.0))
            throw ConfigError("diffusion_gradient_velocity: nonpositive mass sample");
    const double D = params.D();
    const Slice mx = gradient(m_field, grid);
    Slice u_D(m_field.size());
    for (std::size_t i = 0; i < m_field.size(); ++i) u_D[i] = D * mx[i] / m_field[i];
    return u_D;
}

/// Mass-gradient velocity u_M = D dM/M on the variable-mass field; flagged
/// samples yield 0.  An unflagged nonpositive mass sample is an error.
inline History mass_gradient_velocity(const History& M, const MaskHistory& excluded,
                                      const Grid1D& grid, const PhysicalParams& params) {
    const double D = params.D();
    History u_M(M.size(), Slice(M.empty() ? 0 : M[0].size(), 0.0));
    for (std::size_t j = 0; j < M.size(); ++j) {
        const Slice Mx = gradient(M[j], grid);
        for (std::size_t i = 0; i < M[j].size(); ++i) {
            if (!excluded.empty() && excluded[j][i]) continue;
            if (!(M[j][i] > 0.0))
                throw NumericalError("mass_gradient_velocity: nonpositive mass sample");
            u_M[j][i] = D * Mx[i] / M[j][i];
        }
    }
    return u_M;
}

/// Independent current-velocity oracle that avoids phase unwrapping: the
/// phase difference between neighbouring samples is read off the argument
/// of psi_{i+1} conj(psi_{i-1}), reproducing the same central stencil as
/// the decomposition route, so the two agree to rounding off-mask.
inline History cross_check_velocity_bilinear(const ComplexWaveField& psi,
                                             const PhysicalParams& params,
                                             double node_epsilon = 1e-6) {
    const Grid1D& g = psi.grid;
    const std::size_t np = psi.n_points();
    const bool periodic = g.boundary == Boundary::periodic;
    const double coef = params.hbar / params.m;
    const double h = g.dx();

    double r_max = 0.0;
    for (const auto& sl : psi.values)
        for (const Complex& z : sl) r_max = std::max(r_max, std::abs(z));
    if (r_max <= 0.0) throw NumericalError("cross_check_velocity_bilinear: null field");
    const double cutoff = node_epsilon * r_max;

    auto masked = [&](const ComplexSlice& sl, std::size_t i) { return std::abs(sl[i]) < cutoff; };
    History v(psi.n_slices(), Slice(np, 0.0));
    for (std::size_t j = 0; j < psi.n_slices(); ++j) {
        const ComplexSlice& sl = psi.values[j];
        for (std::size_t i = 0; i < np; ++i) {
            if (masked(sl, i)) continue;
            if (i > 0 && i + 1 < np) {
                if (masked(sl, i - 1) || masked(sl, i + 1)) continue;
                v[j][i] = coef * std::arg(sl[i + 1] * std::conj(sl[i - 1])) / (2.0 * h);
            } else if (periodic) {
                const std::size_t l = (i + np - 1) % np;
                const std::size_t r = (i + 1) % np;
                if (masked(sl, l) || masked(sl, r)) continue;
                v[j][i] = coef * std::arg(sl[r] * std::conj(sl[l])) / (2.0 * h);
            } else {
                // One-sided 3-point stencil from pairwise phase differences:
                // theta' ~ (4 (theta_1 - theta_0) - (theta_2 - theta_0)) / 2h.
                const bool left = i == 0;
                const std::size_t i1 = left ? 1 : np - 2;
                const std::size_t i2 = left ? 2 : np - 3;
                if (masked(sl, i1) || masked(sl, i2)) continue;
                const double d1 = std::arg(sl[i1] * std::conj(sl[i]));
                const double d2 = std::arg(sl[i2] * std::conj(sl[i]));
                const double deriv = (4.0 * d1 - d2) / (2.0 * h);
                v[j][i] = coef * (left ? deriv : -deriv);
            }
        }
    }
    return v;
}

/// Textbook bilinear form Im(psi* dpsi)/|psi|^2; differs from the phase
/// route by stencil-order terms, so it serves as a secondary oracle only.
inline History bilinear_velocity_imag_form(const ComplexWaveField& psi,
                                           const PhysicalParams& params,
                                           double node_epsilon = 1e-6) {
    const Grid1D& g = psi.grid;
    const std::size_t np = psi.n_points();
    const double coef = params.hbar / params.m;

    double r_max = 0.0;
    for (const auto& sl : psi.values)
        for (const Complex& z : sl) r_max = std::max(r_max, std::abs(z));
    if (r_max <= 0.0) throw NumericalError("bilinear_velocity_imag_form: null field");
    const double cutoff = node_epsilon * r_max;

    History v(psi.n_slices(), Slice(np, 0.0));
    for (std::size_t j = 0; j < psi.n_slices(); ++j) {
        const ComplexSlice& sl = psi.values[j];
        Slice re(np), im(np);
        for (std::size_t i = 0; i < np; ++i) {
            re[i] = sl[i].real();
            im[i] = sl[i].imag();
        }
        const Slice rex = gradient(re, g);
        const Slice imx = gradient(im, g);
        for (std::size_t i = 0; i < np; ++i) {
            if (std::abs(sl[i]) < cutoff) continue;
            const double dens = std::norm(sl[i]);
            v[j][i] = coef * (re[i] * imx[i] - im[i] * rex[i]) / dens;
        }
    }
    return v;
}

/// Options for assembling a full VelocityFieldSet.
struct ExtractOptions {
    /// Optional static external mass profile m(x); empty means constant m.
    Slice m_field;
};

/// Assemble every velocity-type quantity for one decomposed field.  The
/// relativistic path computes the variable mass first and merges its
/// tachyonic flags into the exclusion mask.
inline VelocityFieldSet extract_velocity_fields(const PolarField& polar,
                                                const PhysicalParams& params,
                                                const ExtractOptions& opt = {}) {
    VelocityFieldSet out;
    out.grid = polar.grid;
    out.t0 = polar.t0;
    out.dt_slice = polar.dt_slice;
    out.convention = polar.convention;
    out.P = probability_density(polar);
    out.mask = polar.node_mask;
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    out.tachyonic.assign(nt, std::vector<char>(np, 0));

    if (polar.convention == SignConvention::nonrelativistic) {
        out.M.assign(nt, Slice(np, params.m));
        out.Q = quantum_potential_nonrel(polar, params);
        out.v = current_velocity_nonrel(polar, params);
        out.u_M.assign(nt, Slice(np, 0.0));
    } else {
        VariableMass vm = variable_mass(polar, params);
        out.M = vm.M;
        out.tachyonic = vm.tachyonic;
        for (std::size_t j = 0; j < nt; ++j)
            for (std::size_t i = 0; i < np; ++i)
                if (vm.tachyonic[j][i]) out.mask[j][i] = 1;
        out.Q = quantum_potential_rel(polar, params);
        out.v = current_velocity_rel(polar, out.M, out.mask, params).v1;
        out.u_M = mass_gradient_velocity(out.M, out.mask, polar.grid, params);
    }

    out.u = osmotic_velocity(out.P, out.mask, polar.grid, params);
    out.b = drift_velocity(out.v, out.u, out.mask, params);

    if (!opt.m_field.empty()) {
        if (opt.m_field.size() != np)
            throw ConfigError("extract_velocity_fields: m_field size does not match grid");
        const Slice uD = diffusion_gradient_velocity(opt.m_field, polar.grid, params);
        out.u_D.assign(nt, uD);
    } else {
        out.u_D.assign(nt, Slice(np, 0.0));
    }
    return out;
}

} // namespace smech
