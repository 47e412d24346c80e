#pragma once

// Residual evaluators for the dynamical laws and algebraic identities the
// library implements.  Every evaluator forms the left-minus-right side of
// one statement using the shared stencils (gradient/laplacian in space,
// time_derivative in time), zeroes excluded samples, and reports norms over
// the unmasked interior time slices.  Statements that follow from the wave
// equations alone must converge at stencil order; regime statements report
// how far the field sits from their regime (see residual_class).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "smech/errors.hpp"
#include "smech/field.hpp"
#include "smech/grid.hpp"
#include "smech/residual_entry.hpp"
#include "smech/stencil.hpp"
#include "smech/velocities.hpp"

namespace smech {

/// One residual evaluation: the summary entry plus the raw residual field
/// and the exclusion mask used for the norms (kept for plotting, reduction
/// comparisons, and re-normalization under extra masks).
struct ResidualEval {
    ResidualEntry entry;
    History r;               ///< residual samples; zeroed where excluded
    MaskHistory excl;        ///< exclusion mask applied to the norms
    std::size_t margin = 1;  ///< time slices dropped at each end of the norms
};

namespace detail {

inline MaskHistory empty_mask(std::size_t nt, std::size_t np) {
    return MaskHistory(nt, std::vector<char>(np, 0));
}

inline MaskHistory merge_masks(const MaskHistory& a, const MaskHistory& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    MaskHistory out = a;
    for (std::size_t j = 0; j < out.size() && j < b.size(); ++j)
        for (std::size_t i = 0; i < out[j].size() && i < b[j].size(); ++i)
            if (b[j][i]) out[j][i] = 1;
    return out;
}

/// Spatial dilation by `reach` samples (wrapping on periodic grids) plus one
/// slice of temporal dilation.  Keeps every stencil leg of an excluded
/// sample out of the reported statistics.
inline MaskHistory dilate_mask(const MaskHistory& mask, const Grid1D& grid, std::size_t reach) {
    if (mask.empty()) return mask;
    const std::size_t nt = mask.size();
    const std::size_t np = mask[0].size();
    const bool wrap = grid.boundary == Boundary::periodic;
    MaskHistory sp(nt, std::vector<char>(np, 0));
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < np; ++i) {
            if (!mask[j][i]) continue;
            for (long long d = -static_cast<long long>(reach);
                 d <= static_cast<long long>(reach); ++d) {
                long long k = static_cast<long long>(i) + d;
                if (wrap) {
                    k = (k % static_cast<long long>(np) + static_cast<long long>(np)) %
                        static_cast<long long>(np);
                } else if (k < 0 || k >= static_cast<long long>(np)) {
                    continue;
                }
                sp[j][static_cast<std::size_t>(k)] = 1;
            }
        }
    MaskHistory out = sp;
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < np; ++i)
            if (sp[j][i]) {
                if (j > 0) out[j - 1][i] = 1;
                if (j + 1 < nt) out[j + 1][i] = 1;
            }
    return out;
}

/// Assemble the summary entry: zero excluded samples, then take norms over
/// the unmasked samples of slices [margin, nt-1-margin].
inline ResidualEval assemble(EquationId id, History r, MaskHistory excl, const Grid1D& grid,
                             double dt_slice, std::size_t margin, SignConvention conv,
                             UMode u_mode, Branch branch) {
    const std::size_t nt = r.size();
    const std::size_t np = r.empty() ? 0 : r[0].size();
    if (nt < 2 * margin + 1)
        throw ConfigError("residual evaluation: too few stored slices for the norm window");
    if (excl.empty()) excl = empty_mask(nt, np);
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < np; ++i)
            if (excl[j][i]) r[j][i] = 0.0;
    double linf = 0.0, sum2 = 0.0;
    std::size_t used = 0, masked = 0, total = 0;
    for (std::size_t j = margin; j + margin < nt; ++j)
        for (std::size_t i = 0; i < np; ++i) {
            ++total;
            if (excl[j][i]) {
                ++masked;
                continue;
            }
            const double a = std::fabs(r[j][i]);
            if (!std::isfinite(a))
                throw NumericalError("residual evaluation: non-finite sample off-mask");
            linf = std::max(linf, a);
            sum2 += a * a;
            ++used;
        }
    ResidualEval ev;
    ev.entry.id = id;
    ev.entry.residual_max = linf;
    ev.entry.residual_l2 = used ? std::sqrt(sum2 / static_cast<double>(used)) : 0.0;
    ev.entry.mask_fraction = total ? static_cast<double>(masked) / static_cast<double>(total) : 1.0;
    ev.entry.unreliable = used == 0 || ev.entry.mask_fraction >= 0.5;
    ev.entry.dx = grid.dx();
    ev.entry.dt = dt_slice;
    ev.entry.n_x = grid.n_x;
    ev.entry.n_t = nt;
    ev.entry.convention = conv;
    ev.entry.u_mode = u_mode;
    ev.entry.branch = branch;
    ev.r = std::move(r);
    ev.excl = std::move(excl);
    ev.margin = margin;
    return ev;
}

/// Forward branch uses the minus sign in front of the (v.d)v advection term;
/// the time-reversed branch flips it.  Never auto-selected.
inline double branch_sign(Branch b) { return b == Branch::antiparticle ? 1.0 : -1.0; }

// ---------------------------------------------------------------------------
// Nonrelativistic ingredient bundle
// ---------------------------------------------------------------------------

struct NonrelFields {
    double D = 0.0;
    History P, v, u, b, Q;
    MaskHistory raw;   ///< node mask as carried by the field
    MaskHistory excl;  ///< dilated exclusion mask for the norms
};

inline NonrelFields nonrel_fields(const PolarField& polar, const PhysicalParams& params) {
    if (polar.convention != SignConvention::nonrelativistic)
        throw ConfigError("nonrelativistic residual: field uses the relativistic convention");
    NonrelFields f;
    f.D = params.D();
    f.P = probability_density(polar);
    f.raw = polar.node_mask;
    f.u = osmotic_velocity(f.P, f.raw, polar.grid, params);
    f.v = current_velocity_nonrel(polar, params);
    f.b = drift_velocity(f.v, f.u, f.raw, params);
    f.Q = quantum_potential_nonrel(polar, params);
    f.excl = dilate_mask(f.raw, polar.grid, 3);
    return f;
}

/// Flux-form continuity residual d_t P + d(v P); shared by the continuity
/// check and, through one more gradient, by the osmotic-evolution check.
inline History continuity_residual_field(const NonrelFields& f, const PolarField& polar) {
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    History vP(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < np; ++i) vP[j][i] = f.v[j][i] * f.P[j][i];
    const History Pt = time_derivative(f.P, polar.dt_slice);
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice flux = gradient(vP[j], polar.grid);
        for (std::size_t i = 0; i < np; ++i) r[j][i] = Pt[j][i] + flux[i];
    }
    return r;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Nonrelativistic evaluators
// ---------------------------------------------------------------------------

/// Probability conservation in flux form: d_t P + d(v P) = 0.
inline ResidualEval eval_continuity(const PolarField& polar, const PhysicalParams& params) {
    const auto f = detail::nonrel_fields(polar, params);
    History r = detail::continuity_residual_field(f, polar);
    return detail::assemble(EquationId::continuity, std::move(r), f.excl, polar.grid,
                            polar.dt_slice, 1, polar.convention, UMode::none, Branch::none);
}

/// Phase evolution: d_t S + (dS)^2/(2m) + V + Q = 0 with the quantum
/// potential Q = -(hbar^2/2m) lap(R)/R.
inline ResidualEval eval_quantum_hamilton_jacobi(const PolarField& polar,
                                                 const PhysicalParams& params,
                                                 const Slice* V = nullptr) {
    const auto f = detail::nonrel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const History St = time_derivative(polar.S, polar.dt_slice);
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice Sx = gradient_phase(polar.S[j], polar.grid,
                                        2.0 * 3.14159265358979323846 * polar.hbar);
        for (std::size_t i = 0; i < np; ++i) {
            const double Vi = V ? (*V)[i] : params.V0;
            r[j][i] = St[j][i] + Sx[i] * Sx[i] / (2.0 * params.m) + Vi + f.Q[j][i];
        }
    }
    return detail::assemble(EquationId::quantum_hamilton_jacobi, std::move(r), f.excl,
                            polar.grid, polar.dt_slice, 1, polar.convention, UMode::none,
                            Branch::none);
}

/// Osmotic-velocity evolution, evaluated as the density gradient of the
/// continuity imbalance: r = D d(r_cont / P).  Defining it this way makes
/// the statement exactly the gradient of (continuity / P), so it vanishes
/// whenever continuity does and converges at the same stencil order.
inline ResidualEval eval_osmotic_evolution(const PolarField& polar,
                                           const PhysicalParams& params) {
    const auto f = detail::nonrel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const History rc = detail::continuity_residual_field(f, polar);
    History g(nt, Slice(np, 0.0));
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < np; ++i)
            if (!f.raw[j][i]) g[j][i] = rc[j][i] / f.P[j][i];
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice gx = gradient(g[j], polar.grid);
        for (std::size_t i = 0; i < np; ++i) r[j][i] = f.D * gx[i];
    }
    return detail::assemble(EquationId::osmotic_evolution, std::move(r), f.excl, polar.grid,
                            polar.dt_slice, 1, polar.convention, UMode::none, Branch::none);
}

/// Current-velocity evolution with the forward advection sign:
/// r = d_t v - a + (v.d)v - (u.d)u - D d(du).  The external acceleration is
/// a = -dV/m (zero for a uniform potential).
inline ResidualEval eval_current_evolution(const PolarField& polar, const PhysicalParams& params,
                                           Branch branch = Branch::none,
                                           const Slice* V = nullptr) {
    const auto f = detail::nonrel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const double s = detail::branch_sign(branch);
    const History vt = time_derivative(f.v, polar.dt_slice);
    Slice a(np, 0.0);
    if (V) {
        const Slice GV = gradient(*V, polar.grid);
        for (std::size_t i = 0; i < np; ++i) a[i] = -GV[i] / params.m;
    }
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice Gv = gradient(f.v[j], polar.grid);
        const Slice Gu = gradient(f.u[j], polar.grid);
        const Slice GGu = gradient(Gu, polar.grid);
        for (std::size_t i = 0; i < np; ++i)
            r[j][i] = vt[j][i] - a[i] - s * f.v[j][i] * Gv[i] - f.u[j][i] * Gu[i] -
                      f.D * GGu[i];
    }
    return detail::assemble(EquationId::current_evolution, std::move(r), f.excl, polar.grid,
                            polar.dt_slice, 1, polar.convention, UMode::none, branch);
}

/// Fokker-Planck balance in flux form: d_t P + d(b P - nu dP) = 0 with
/// b = v + alpha u and nu = alpha D.  At alpha = 0 the flux reduces sample
/// for sample to the continuity flux.
inline ResidualEval eval_fokker_planck(const PolarField& polar, const PhysicalParams& params) {
    const auto f = detail::nonrel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const double nu = params.alpha * f.D;
    const History Pt = time_derivative(f.P, polar.dt_slice);
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice GP = gradient(f.P[j], polar.grid);
        Slice flux(np);
        for (std::size_t i = 0; i < np; ++i)
            flux[i] = f.b[j][i] * f.P[j][i] - nu * GP[i];
        const Slice Gf = gradient(flux, polar.grid);
        for (std::size_t i = 0; i < np; ++i) r[j][i] = Pt[j][i] + Gf[i];
    }
    return detail::assemble(EquationId::fokker_planck, std::move(r), f.excl, polar.grid,
                            polar.dt_slice, 1, polar.convention, UMode::none, Branch::none);
}

/// Diffusion-current balance: P u - D dP = 0.  Exact to rounding because u
/// is built by dividing the same stencil gradient by the sampled density.
inline ResidualEval eval_fick_flux(const PolarField& polar, const PhysicalParams& params) {
    const auto f = detail::nonrel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice GP = gradient(f.P[j], polar.grid);
        for (std::size_t i = 0; i < np; ++i)
            r[j][i] = f.P[j][i] * f.u[j][i] - f.D * GP[i];
    }
    return detail::assemble(EquationId::fick_flux, std::move(r), f.excl, polar.grid,
                            polar.dt_slice, 0, polar.convention, UMode::none, Branch::none);
}

/// Diffusion-current balance on a plain positive density history (no wave
/// field behind it): u is rebuilt as D dP/P from the same stencil, so the
/// residual is zero up to rounding.
inline ResidualEval eval_fick_flux_raw(const History& P, const Grid1D& grid, double dt_slice,
                                       const PhysicalParams& params) {
    const std::size_t nt = P.size();
    const std::size_t np = P.empty() ? 0 : P[0].size();
    const double D = params.D();
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice GP = gradient(P[j], grid);
        for (std::size_t i = 0; i < np; ++i) {
            if (!(P[j][i] > 0.0))
                throw ConfigError("diffusion-current check: density must be positive");
            const double u = D * GP[i] / P[j][i];
            r[j][i] = P[j][i] * u - D * GP[i];
        }
    }
    return detail::assemble(EquationId::fick_flux, std::move(r), {}, grid, dt_slice, 0,
                            SignConvention::nonrelativistic, UMode::none, Branch::none);
}

/// Heat-kernel check on a plain density history: d_t P - D lap(P) = 0.
inline ResidualEval eval_diffusion_equation(const History& P, const Grid1D& grid,
                                            double dt_slice, const PhysicalParams& params) {
    const std::size_t nt = P.size();
    const std::size_t np = P.empty() ? 0 : P[0].size();
    const double D = params.D();
    const History Pt = time_derivative(P, dt_slice);
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice L = laplacian(P[j], grid);
        for (std::size_t i = 0; i < np; ++i) r[j][i] = Pt[j][i] - D * L[i];
    }
    return detail::assemble(EquationId::diffusion_equation, std::move(r), {}, grid, dt_slice, 1,
                            SignConvention::nonrelativistic, UMode::none, Branch::none);
}

// ---------------------------------------------------------------------------
// Relativistic ingredient bundle
// ---------------------------------------------------------------------------

namespace detail {

struct RelFields {
    double D = 0.0, c = 0.0;
    History S;         ///< action in the relativistic sign convention
    History P;
    History St, Pt;    ///< shared time stencils
    History M, Msq;    ///< effective mass and its radicand (M c)^2
    History u, v;      ///< spatial components: u = D dP/P, v = -dS/M
    History u0, v0;    ///< time components: u0 = D d_t P/(c P), v0 = d_t S/(c M)
    MaskHistory raw;   ///< node mask, tachyon flags, degenerate-mass guard
    MaskHistory excl;  ///< dilated exclusion mask
};

/// Build the relativistic ingredient set from a polar field of either sign
/// convention.  Fields decomposed with the nonrelativistic convention are
/// bridged by flipping the action's sign.  The effective mass comes from
/// the wave-operator formula unless an override history is supplied (used
/// by reduction checks that pin M to a constant).
inline RelFields rel_fields(const PolarField& polar, const PhysicalParams& params,
                            const History* M_override = nullptr) {
    RelFields f;
    f.D = params.D();
    f.c = params.c;
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    f.S = polar.S;
    if (polar.convention == SignConvention::nonrelativistic)
        for (auto& sl : f.S)
            for (double& x : sl) x = -x;
    f.P = probability_density(polar);
    f.raw = polar.node_mask;
    if (M_override) {
        if (M_override->size() != nt || (nt && (*M_override)[0].size() != np))
            throw ConfigError("rel_fields: mass override shape mismatch");
        f.M = *M_override;
        f.Msq.assign(nt, Slice(np, 0.0));
        for (std::size_t j = 0; j < nt; ++j)
            for (std::size_t i = 0; i < np; ++i) {
                const double mc = f.M[j][i] * f.c;
                f.Msq[j][i] = mc * mc;
            }
    } else {
        VariableMass vm = variable_mass(polar, params);
        f.M = std::move(vm.M);
        f.Msq = std::move(vm.Msq_c2);
        for (std::size_t j = 0; j < nt; ++j)
            for (std::size_t i = 0; i < np; ++i)
                if (vm.tachyonic[j][i]) f.raw[j][i] = 1;
    }
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < np; ++i)
            if (!f.raw[j][i] && f.M[j][i] == 0.0) f.raw[j][i] = 1;
    f.St = time_derivative(f.S, polar.dt_slice);
    f.Pt = time_derivative(f.P, polar.dt_slice);
    f.u.assign(nt, Slice(np, 0.0));
    f.v.assign(nt, Slice(np, 0.0));
    f.u0.assign(nt, Slice(np, 0.0));
    f.v0.assign(nt, Slice(np, 0.0));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice GP = gradient(f.P[j], polar.grid);
        const Slice GS = gradient_phase(f.S[j], polar.grid,
                                        2.0 * 3.14159265358979323846 * polar.hbar);
        for (std::size_t i = 0; i < np; ++i) {
            if (f.raw[j][i]) continue;
            f.u[j][i] = f.D * GP[i] / f.P[j][i];
            f.u0[j][i] = f.D * f.Pt[j][i] / (f.c * f.P[j][i]);
            f.v[j][i] = -GS[i] / f.M[j][i];
            f.v0[j][i] = f.St[j][i] / (f.c * f.M[j][i]);
        }
    }
    f.excl = dilate_mask(f.raw, polar.grid, 3);
    return f;
}

/// External acceleration for the relativistic forms: a = -(m + V/c^2) dV / M^2.
/// A uniform potential gives zero.
inline Slice rel_acceleration(const RelFields& f, const PhysicalParams& params,
                              const Slice* V, const Grid1D& grid, std::size_t j) {
    const std::size_t np = f.P[j].size();
    Slice a(np, 0.0);
    if (!V) return a;
    const Slice GV = gradient(*V, grid);
    for (std::size_t i = 0; i < np; ++i) {
        if (f.raw[j][i]) continue;
        const double M = f.M[j][i];
        a[i] = -(params.m + (*V)[i] / (f.c * f.c)) * GV[i] / (M * M);
    }
    return a;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Relativistic evaluators
// ---------------------------------------------------------------------------

/// Four-current conservation (1/c) d_t j0 + d j1 = 0 with j0 = P d_t S / c
/// and j1 = -P dS, optionally including a uniform vacuum phase rate that
/// shifts d_t S by e_vac.
inline ResidualEval eval_total_current(const PolarField& polar, const PhysicalParams& params,
                                       double e_vac, EquationId id) {
    const auto f = detail::rel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    History j0(nt, Slice(np)), j1(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice GS = gradient_phase(f.S[j], polar.grid,
                                        2.0 * 3.14159265358979323846 * polar.hbar);
        for (std::size_t i = 0; i < np; ++i) {
            j0[j][i] = f.P[j][i] * (f.St[j][i] + e_vac) / f.c;
            j1[j][i] = -f.P[j][i] * GS[i];
        }
    }
    const History j0t = time_derivative(j0, polar.dt_slice);
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice Gj1 = gradient(j1[j], polar.grid);
        for (std::size_t i = 0; i < np; ++i) r[j][i] = j0t[j][i] / f.c + Gj1[i];
    }
    return detail::assemble(id, std::move(r), f.excl, polar.grid, polar.dt_slice, 2,
                            polar.convention, UMode::none, Branch::none);
}

inline ResidualEval eval_rel_continuity(const PolarField& polar, const PhysicalParams& params) {
    return eval_total_current(polar, params, 0.0, EquationId::rel_continuity);
}

/// Mass-shell relation evaluated on the radicand, so flagged tachyonic
/// samples stay in the statistics:
/// r = (d_t S / c)^2 - (dS)^2 - [(m c + V/c)^2 + hbar^2 box(R)/R].
inline ResidualEval eval_rel_hamilton_jacobi(const PolarField& polar,
                                             const PhysicalParams& params) {
    const auto f = detail::rel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice GS = gradient_phase(f.S[j], polar.grid,
                                        2.0 * 3.14159265358979323846 * polar.hbar);
        for (std::size_t i = 0; i < np; ++i) {
            const double e = f.St[j][i] / f.c;
            r[j][i] = e * e - GS[i] * GS[i] - f.Msq[j][i];
        }
    }
    MaskHistory excl = detail::dilate_mask(polar.node_mask, polar.grid, 3);
    return detail::assemble(EquationId::rel_hamilton_jacobi, std::move(r), std::move(excl),
                            polar.grid, polar.dt_slice, 2, polar.convention, UMode::none,
                            Branch::none);
}

namespace detail {

/// Shared body of the velocity-divergence balance
/// d_mu v^mu + (1/D) u_mu v^mu + (d_mu M / M) v^mu = 0; the same residual
/// backs both the closed-system and the open-system reading.
inline ResidualEval divergence_balance(const PolarField& polar, const PhysicalParams& params,
                                       EquationId id, double* exchange_rms) {
    const auto f = rel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const History v0t = time_derivative(f.v0, polar.dt_slice);
    const History Mt = time_derivative(f.M, polar.dt_slice);
    History r(nt, Slice(np, 0.0));
    double ex2 = 0.0;
    std::size_t exn = 0;
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice Gv = gradient(f.v[j], polar.grid);
        const Slice GM = gradient(f.M[j], polar.grid);
        for (std::size_t i = 0; i < np; ++i) {
            if (f.raw[j][i]) continue;
            const double div4 = v0t[j][i] / f.c + Gv[i];
            const double uv = (f.u0[j][i] * f.v0[j][i] + f.u[j][i] * f.v[j][i]) / f.D;
            const double mg = (Mt[j][i] / (f.c * f.M[j][i])) * f.v0[j][i] +
                              (GM[i] / f.M[j][i]) * f.v[j][i];
            r[j][i] = div4 + uv + mg;
            if (j >= 2 && j + 2 < nt && !f.excl[j][i]) {
                ex2 += uv * uv;
                ++exn;
            }
        }
    }
    if (exchange_rms) *exchange_rms = exn ? std::sqrt(ex2 / static_cast<double>(exn)) : 0.0;
    return assemble(id, std::move(r), f.excl, polar.grid, polar.dt_slice, 2, polar.convention,
                    UMode::spacelike, Branch::none);
}

} // namespace detail

/// Velocity-divergence balance for the closed-system reading.
inline ResidualEval eval_osmotic_divergence(const PolarField& polar,
                                            const PhysicalParams& params) {
    return detail::divergence_balance(polar, params, EquationId::osmotic_divergence, nullptr);
}

/// Same balance read as an open-system bookkeeping statement: the exchange
/// term (1/D) u_mu v^mu need not vanish by itself; it is balanced by the
/// four-divergence and mass-gradient terms.  The note records its size.
inline ResidualEval eval_open_system_balance(const PolarField& polar,
                                             const PhysicalParams& params) {
    double ex = 0.0;
    ResidualEval ev =
        detail::divergence_balance(polar, params, EquationId::open_system_balance, &ex);
    char buf[128];
    std::snprintf(buf, sizeof buf, "exchange term (1/D) u_mu v^mu rms = %.3e", ex);
    ev.entry.note = buf;
    return ev;
}

/// Orthogonality of the osmotic and current four-velocities:
/// r = u_mu v^mu.  The stored spatial osmotic component is the covariant
/// D dP/P and the stored spatial current component is the physical -dS/M,
/// so the contraction pairs them with a plus sign:
/// u_mu v^mu = u0 v0 + u v = (D/PM) [(1/c^2) P_t S_t - dP dS].
inline ResidualEval eval_orthogonality(const PolarField& polar, const PhysicalParams& params) {
    const auto f = detail::rel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    History r(nt, Slice(np, 0.0));
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < np; ++i) {
            if (f.raw[j][i]) continue;
            r[j][i] = f.u0[j][i] * f.v0[j][i] + f.u[j][i] * f.v[j][i];
        }
    return detail::assemble(EquationId::orthogonality, std::move(r), f.excl, polar.grid,
                            polar.dt_slice, 2, polar.convention, UMode::spacelike,
                            Branch::none);
}

/// The bilinear contraction (1/c^2) d_t P d_t S - dP dS that the transport
/// pair composes to; orthogonality equals D/(P M) times this quantity.
inline History phase_density_contraction(const PolarField& polar, const PhysicalParams& params) {
    const auto f = detail::rel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    History B(nt, Slice(np, 0.0));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice GP = gradient(f.P[j], polar.grid);
        const Slice GS = gradient_phase(f.S[j], polar.grid,
                                        2.0 * 3.14159265358979323846 * polar.hbar);
        for (std::size_t i = 0; i < np; ++i)
            B[j][i] = f.Pt[j][i] * f.St[j][i] / (f.c * f.c) - GP[i] * GS[i];
    }
    return B;
}

/// Density transport along the particle velocity: r = d_t P + v_p dP with
/// v_p = -c^2 dS / d_t S.  Holds where the flow is incompressible (plane
/// waves); elsewhere it measures the neglected compression term.
inline ResidualEval eval_density_transport(const PolarField& polar,
                                           const PhysicalParams& params) {
    const auto f = detail::rel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    MaskHistory excl = f.excl;
    History r(nt, Slice(np, 0.0));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice GP = gradient(f.P[j], polar.grid);
        const Slice GS = gradient_phase(f.S[j], polar.grid,
                                        2.0 * 3.14159265358979323846 * polar.hbar);
        for (std::size_t i = 0; i < np; ++i) {
            if (f.raw[j][i]) continue;
            if (std::fabs(f.St[j][i]) < 1e-300) {
                excl[j][i] = 1;
                continue;
            }
            const double vp = -f.c * f.c * GS[i] / f.St[j][i];
            r[j][i] = f.Pt[j][i] + vp * GP[i];
        }
    }
    return detail::assemble(EquationId::density_transport, std::move(r), std::move(excl),
                            polar.grid, polar.dt_slice, 1, polar.convention, UMode::spacelike,
                            Branch::none);
}

/// Phase transport along the osmotic wave velocity: r = d_t S + u_s dS with
/// u_s = -c^2 dP / d_t P.  Where the density is static this route is
/// degenerate; such samples (or whole fields) are excluded and noted.
inline ResidualEval eval_phase_wave_transport(const PolarField& polar,
                                              const PhysicalParams& params) {
    const auto f = detail::rel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    double pscale = 0.0, rate = 0.0;
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < np; ++i) {
            if (f.raw[j][i]) continue;
            pscale = std::max(pscale, std::fabs(f.P[j][i]));
            rate = std::max(rate, std::fabs(f.Pt[j][i]));
        }
    const double window = polar.dt_slice * static_cast<double>(nt > 1 ? nt - 1 : 1);
    if (rate * window < 1e-8 * pscale) {
        History r(nt, Slice(np, 0.0));
        ResidualEval ev = detail::assemble(EquationId::phase_wave_transport, std::move(r),
                                           detail::empty_mask(nt, np), polar.grid,
                                           polar.dt_slice, 1, polar.convention,
                                           UMode::spacelike, Branch::none);
        for (auto& sl : ev.excl)
            for (auto& m : sl) m = 1;
        ev.entry.mask_fraction = 1.0;
        ev.entry.unreliable = true;
        ev.entry.note =
            "density is static on this field; the phase-transport route has no unmasked support";
        return ev;
    }
    MaskHistory excl = f.excl;
    History r(nt, Slice(np, 0.0));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice GP = gradient(f.P[j], polar.grid);
        const Slice GS = gradient_phase(f.S[j], polar.grid,
                                        2.0 * 3.14159265358979323846 * polar.hbar);
        for (std::size_t i = 0; i < np; ++i) {
            if (f.raw[j][i]) continue;
            if (std::fabs(f.Pt[j][i]) < 1e-3 * rate) {
                excl[j][i] = 1;
                continue;
            }
            const double us = -f.c * f.c * GP[i] / f.Pt[j][i];
            r[j][i] = f.St[j][i] + us * GS[i];
        }
    }
    return detail::assemble(EquationId::phase_wave_transport, std::move(r), std::move(excl),
                            polar.grid, polar.dt_slice, 1, polar.convention, UMode::spacelike,
                            Branch::none);
}

/// Equality of the mass-gradient contraction written through the
/// mass-gradient four-velocity and written directly:
/// r = (1/D) u^M_mu v^mu - (d_mu M / M) v^mu with u^M_mu = D d_mu M / M.
inline ResidualEval eval_mass_flux_balance(const PolarField& polar,
                                           const PhysicalParams& params) {
    const auto f = detail::rel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const History Mt = time_derivative(f.M, polar.dt_slice);
    History r(nt, Slice(np, 0.0));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice GM = gradient(f.M[j], polar.grid);
        for (std::size_t i = 0; i < np; ++i) {
            if (f.raw[j][i]) continue;
            const double M = f.M[j][i];
            const double uM0 = f.D * Mt[j][i] / (f.c * M);
            const double uM1 = f.D * GM[i] / M;
            const double lhs = (uM0 * f.v0[j][i] + uM1 * f.v[j][i]) / f.D;
            const double rhs =
                (Mt[j][i] / (f.c * M)) * f.v0[j][i] + (GM[i] / M) * f.v[j][i];
            r[j][i] = lhs - rhs;
        }
    }
    return detail::assemble(EquationId::mass_flux_balance, std::move(r), f.excl, polar.grid,
                            polar.dt_slice, 2, polar.convention, UMode::spacelike,
                            Branch::none);
}

/// Spacelike osmotic evolution: r = d_t u + D d(dv) + d(v u).
inline ResidualEval eval_rel_osmotic_evolution(const PolarField& polar,
                                               const PhysicalParams& params,
                                               const History* M_override = nullptr) {
    const auto f = detail::rel_fields(polar, params, M_override);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const History ut = time_derivative(f.u, polar.dt_slice);
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice Gv = gradient(f.v[j], polar.grid);
        const Slice GGv = gradient(Gv, polar.grid);
        Slice vu(np);
        for (std::size_t i = 0; i < np; ++i) vu[i] = f.v[j][i] * f.u[j][i];
        const Slice Gvu = gradient(vu, polar.grid);
        for (std::size_t i = 0; i < np; ++i) r[j][i] = ut[j][i] + f.D * GGv[i] + Gvu[i];
    }
    return detail::assemble(EquationId::rel_osmotic_evolution, std::move(r), f.excl, polar.grid,
                            polar.dt_slice, 2, polar.convention, UMode::spacelike,
                            Branch::none);
}

/// Spacelike current evolution:
/// r = d_t v - a - s (v.d)v - (u.d)u - D d(du), s = -1 forward / +1 reversed.
inline ResidualEval eval_rel_current_evolution(const PolarField& polar,
                                               const PhysicalParams& params, Branch branch,
                                               const Slice* V = nullptr,
                                               const History* M_override = nullptr) {
    const auto f = detail::rel_fields(polar, params, M_override);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const double s = detail::branch_sign(branch);
    const History vt = time_derivative(f.v, polar.dt_slice);
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice a = detail::rel_acceleration(f, params, V, polar.grid, j);
        const Slice Gv = gradient(f.v[j], polar.grid);
        const Slice Gu = gradient(f.u[j], polar.grid);
        const Slice GGu = gradient(Gu, polar.grid);
        for (std::size_t i = 0; i < np; ++i)
            r[j][i] = vt[j][i] - a[i] - s * f.v[j][i] * Gv[i] - f.u[j][i] * Gu[i] -
                      f.D * GGu[i];
    }
    return detail::assemble(EquationId::rel_current_evolution, std::move(r), f.excl, polar.grid,
                            polar.dt_slice, 2, polar.convention, UMode::spacelike, branch);
}

/// Timelike current evolution: r = d_t v - a - D d(du); the advection terms
/// cancel pairwise in the timelike normalization.
inline ResidualEval eval_timelike_current_evolution(const PolarField& polar,
                                                    const PhysicalParams& params,
                                                    const Slice* V = nullptr,
                                                    const History* M_override = nullptr) {
    const auto f = detail::rel_fields(polar, params, M_override);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const History vt = time_derivative(f.v, polar.dt_slice);
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice a = detail::rel_acceleration(f, params, V, polar.grid, j);
        const Slice Gu = gradient(f.u[j], polar.grid);
        const Slice GGu = gradient(Gu, polar.grid);
        for (std::size_t i = 0; i < np; ++i) r[j][i] = vt[j][i] - a[i] - f.D * GGu[i];
    }
    return detail::assemble(EquationId::timelike_current_evolution, std::move(r), f.excl,
                            polar.grid, polar.dt_slice, 2, polar.convention, UMode::timelike,
                            Branch::none);
}

/// Pairwise advection cancellation behind the timelike reduction:
/// r = (u.d)u + s (v.d)v.
inline ResidualEval eval_advection_balance(const PolarField& polar, const PhysicalParams& params,
                                           Branch branch) {
    const auto f = detail::rel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const double s = detail::branch_sign(branch);
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice Gv = gradient(f.v[j], polar.grid);
        const Slice Gu = gradient(f.u[j], polar.grid);
        for (std::size_t i = 0; i < np; ++i)
            r[j][i] = f.u[j][i] * Gu[i] + s * f.v[j][i] * Gv[i];
    }
    return detail::assemble(EquationId::advection_balance, std::move(r), f.excl, polar.grid,
                            polar.dt_slice, 2, polar.convention, UMode::timelike, branch);
}

/// Mass-gradient acceleration: r = d_t v + c^2 dM / M.  Holds on stationary
/// or time-symmetric flows; elsewhere it measures the omitted terms.
inline ResidualEval eval_mass_gradient_acceleration(const PolarField& polar,
                                                    const PhysicalParams& params) {
    const auto f = detail::rel_fields(polar, params);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const History vt = time_derivative(f.v, polar.dt_slice);
    History r(nt, Slice(np, 0.0));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice GM = gradient(f.M[j], polar.grid);
        for (std::size_t i = 0; i < np; ++i) {
            if (f.raw[j][i]) continue;
            r[j][i] = vt[j][i] + f.c * f.c * GM[i] / f.M[j][i];
        }
    }
    return detail::assemble(EquationId::mass_gradient_acceleration, std::move(r), f.excl,
                            polar.grid, polar.dt_slice, 2, polar.convention, UMode::timelike,
                            Branch::none);
}

// ---------------------------------------------------------------------------
// Variable-mass (general) evaluators
// ---------------------------------------------------------------------------

namespace detail {

inline Slice mass_profile(const Slice* m_field, std::size_t np, const PhysicalParams& params) {
    Slice m(np, params.m);
    if (m_field) {
        if (m_field->size() != np)
            throw ConfigError("mass profile: size does not match the grid");
        m = *m_field;
    }
    for (double x : m)
        if (!(x > 0.0)) throw ConfigError("mass profile: samples must be positive");
    return m;
}

} // namespace detail

/// General osmotic evolution with a spatial rest-mass profile m(x) and the
/// effective mass M:
/// r = d_t u + D d(dv) + d(v u) - D (dv)(dm/m - dM/M)
///     - D (dm/m)(d_t M / M + v dM/M) + D [d(d_t M / M) - v d(dM/M)].
/// With constant m and M every extra term is exactly zero, so the residual
/// reduces sample for sample to the restricted pair form.
inline ResidualEval eval_general_osmotic_evolution(const PolarField& polar,
                                                   const PhysicalParams& params,
                                                   const Slice* m_field = nullptr,
                                                   const History* M_override = nullptr) {
    const auto f = detail::rel_fields(polar, params, M_override);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const Slice m = detail::mass_profile(m_field, np, params);
    const Slice Gm = gradient(m, polar.grid);
    const History ut = time_derivative(f.u, polar.dt_slice);
    const History Mt = time_derivative(f.M, polar.dt_slice);
    History MtM(nt, Slice(np, 0.0));
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < np; ++i)
            if (!f.raw[j][i]) MtM[j][i] = Mt[j][i] / f.M[j][i];
    History r(nt, Slice(np, 0.0));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice Gv = gradient(f.v[j], polar.grid);
        const Slice GGv = gradient(Gv, polar.grid);
        Slice vu(np), GMoM(np, 0.0);
        const Slice GM = gradient(f.M[j], polar.grid);
        for (std::size_t i = 0; i < np; ++i) {
            vu[i] = f.v[j][i] * f.u[j][i];
            if (!f.raw[j][i]) GMoM[i] = GM[i] / f.M[j][i];
        }
        const Slice Gvu = gradient(vu, polar.grid);
        const Slice GMtM = gradient(MtM[j], polar.grid);
        const Slice GGMoM = gradient(GMoM, polar.grid);
        for (std::size_t i = 0; i < np; ++i) {
            if (f.raw[j][i]) continue;
            const double base = ut[j][i] + f.D * GGv[i] + Gvu[i];
            const double gmm = Gm[i] / m[i];
            const double e1 = -f.D * Gv[i] * (gmm - GMoM[i]);
            const double e2 = -f.D * gmm * (MtM[j][i] + f.v[j][i] * GMoM[i]);
            const double e3 = f.D * (GMtM[i] - f.v[j][i] * GGMoM[i]);
            r[j][i] = base + e1 + e2 + e3;
        }
    }
    return detail::assemble(EquationId::general_osmotic_evolution, std::move(r), f.excl,
                            polar.grid, polar.dt_slice, 2, polar.convention, UMode::spacelike,
                            Branch::none);
}

/// General spacelike current evolution with a rest-mass profile:
/// r = d_t v - a - D (m/M)^2 [d(du) + u d(dm)/m + 2 du dm/m]
///     - (m/M)^2 [(u.d)u + s (v.d)v] + (m dm / M^2)(2 c^2 - u^2 - v^2).
/// Static profiles have d_t m = 0, so that term drops exactly.
inline ResidualEval eval_general_current_evolution(const PolarField& polar,
                                                   const PhysicalParams& params, Branch branch,
                                                   const Slice* m_field = nullptr,
                                                   const Slice* V = nullptr,
                                                   const History* M_override = nullptr) {
    const auto f = detail::rel_fields(polar, params, M_override);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const Slice m = detail::mass_profile(m_field, np, params);
    const Slice Gm = gradient(m, polar.grid);
    const Slice GGm = gradient(Gm, polar.grid);
    const double s = detail::branch_sign(branch);
    const History vt = time_derivative(f.v, polar.dt_slice);
    History r(nt, Slice(np, 0.0));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice a = detail::rel_acceleration(f, params, V, polar.grid, j);
        const Slice Gv = gradient(f.v[j], polar.grid);
        const Slice Gu = gradient(f.u[j], polar.grid);
        const Slice GGu = gradient(Gu, polar.grid);
        for (std::size_t i = 0; i < np; ++i) {
            if (f.raw[j][i]) continue;
            const double M = f.M[j][i];
            const double rr = m[i] / M;
            const double fr = rr * rr;
            const double u = f.u[j][i], v = f.v[j][i];
            const double bex = u * GGm[i] / m[i] + 2.0 * Gu[i] * Gm[i] / m[i];
            const double mass =
                (m[i] * Gm[i] / (M * M)) * (2.0 * f.c * f.c - u * u - v * v);
            // Term order mirrors the restricted pair form so that a constant
            // profile with matching effective mass reproduces it bitwise.
            r[j][i] = vt[j][i] - a[i] - s * v * Gv[i] * fr - u * Gu[i] * fr -
                      f.D * GGu[i] * fr - f.D * fr * bex + mass;
        }
    }
    return detail::assemble(EquationId::general_current_evolution, std::move(r), f.excl,
                            polar.grid, polar.dt_slice, 2, polar.convention, UMode::spacelike,
                            branch);
}

/// General timelike current evolution with a rest-mass profile:
/// r = d_t v - a - D (m/M)^2 [d(du) + u d(dm)/m + 2 du dm/m] + (m dm / M^2) c^2.
inline ResidualEval eval_general_timelike_current_evolution(
    const PolarField& polar, const PhysicalParams& params, const Slice* m_field = nullptr,
    const Slice* V = nullptr, const History* M_override = nullptr) {
    const auto f = detail::rel_fields(polar, params, M_override);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const Slice m = detail::mass_profile(m_field, np, params);
    const Slice Gm = gradient(m, polar.grid);
    const Slice GGm = gradient(Gm, polar.grid);
    const History vt = time_derivative(f.v, polar.dt_slice);
    History r(nt, Slice(np, 0.0));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice a = detail::rel_acceleration(f, params, V, polar.grid, j);
        const Slice Gu = gradient(f.u[j], polar.grid);
        const Slice GGu = gradient(Gu, polar.grid);
        for (std::size_t i = 0; i < np; ++i) {
            if (f.raw[j][i]) continue;
            const double M = f.M[j][i];
            const double rr = m[i] / M;
            const double fr = rr * rr;
            const double bex = f.u[j][i] * GGm[i] / m[i] + 2.0 * Gu[i] * Gm[i] / m[i];
            const double mass = (m[i] * Gm[i] / (M * M)) * (f.c * f.c);
            // Mirrors the restricted timelike form term for term; see the
            // spacelike general evaluator for the rationale.
            r[j][i] = vt[j][i] - a[i] - f.D * GGu[i] * fr - f.D * fr * bex + mass;
        }
    }
    return detail::assemble(EquationId::general_timelike_current_evolution, std::move(r),
                            f.excl, polar.grid, polar.dt_slice, 2, polar.convention,
                            UMode::timelike, Branch::none);
}

/// Osmotic evolution with the mass-drift velocity made explicit:
/// r = d_t u + D d(dv) + d(v u) - u_D dv with u_D = D dm/m.
inline ResidualEval eval_mass_drift_osmotic_evolution(const PolarField& polar,
                                                      const PhysicalParams& params,
                                                      const Slice* m_field = nullptr,
                                                      const History* M_override = nullptr) {
    const auto f = detail::rel_fields(polar, params, M_override);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const Slice m = detail::mass_profile(m_field, np, params);
    const Slice uD = diffusion_gradient_velocity(m, polar.grid, params);
    const History ut = time_derivative(f.u, polar.dt_slice);
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice Gv = gradient(f.v[j], polar.grid);
        const Slice GGv = gradient(Gv, polar.grid);
        Slice vu(np);
        for (std::size_t i = 0; i < np; ++i) vu[i] = f.v[j][i] * f.u[j][i];
        const Slice Gvu = gradient(vu, polar.grid);
        for (std::size_t i = 0; i < np; ++i)
            r[j][i] = ut[j][i] + f.D * GGv[i] + Gvu[i] - uD[i] * Gv[i];
    }
    return detail::assemble(EquationId::mass_drift_osmotic_evolution, std::move(r), f.excl,
                            polar.grid, polar.dt_slice, 2, polar.convention, UMode::spacelike,
                            Branch::none);
}

/// Osmotic evolution under an exponentially decaying rest mass
/// m(x) = m0 exp(-lambda x / v_d), for which dm/m = -lambda/v_d uniformly:
/// r = d_t u + D d(dv) + d(v u) + (D lambda / v_d) dv.
inline ResidualEval eval_decaying_mass_osmotic_evolution(const PolarField& polar,
                                                         const PhysicalParams& params,
                                                         double lambda, double v_d,
                                                         const History* M_override = nullptr) {
    if (v_d == 0.0) throw ConfigError("decaying-mass profile: drift speed v_d must be nonzero");
    const auto f = detail::rel_fields(polar, params, M_override);
    const std::size_t nt = polar.n_slices();
    const std::size_t np = polar.n_points();
    const double coef = f.D * lambda / v_d;
    const History ut = time_derivative(f.u, polar.dt_slice);
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice Gv = gradient(f.v[j], polar.grid);
        const Slice GGv = gradient(Gv, polar.grid);
        Slice vu(np);
        for (std::size_t i = 0; i < np; ++i) vu[i] = f.v[j][i] * f.u[j][i];
        const Slice Gvu = gradient(vu, polar.grid);
        for (std::size_t i = 0; i < np; ++i)
            r[j][i] = ut[j][i] + f.D * GGv[i] + Gvu[i] + coef * Gv[i];
    }
    return detail::assemble(EquationId::decaying_mass_osmotic_evolution, std::move(r), f.excl,
                            polar.grid, polar.dt_slice, 2, polar.convention, UMode::spacelike,
                            Branch::none);
}

/// Decaying-mass osmotic evolution on caller-supplied density and current
/// velocity histories (used with manufactured steady profiles for grid
/// convergence, where P and v are known in closed form).
inline ResidualEval eval_decaying_mass_osmotic_raw(const History& P, const History& v,
                                                   const Grid1D& grid, double dt_slice,
                                                   const PhysicalParams& params, double lambda,
                                                   double v_d) {
    if (v_d == 0.0) throw ConfigError("decaying-mass profile: drift speed v_d must be nonzero");
    const std::size_t nt = P.size();
    const std::size_t np = P.empty() ? 0 : P[0].size();
    if (v.size() != nt || (nt && v[0].size() != np))
        throw ConfigError("decaying-mass check: density and velocity shapes differ");
    const double D = params.D();
    const double coef = D * lambda / v_d;
    History u(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice GP = gradient(P[j], grid);
        for (std::size_t i = 0; i < np; ++i) {
            if (!(P[j][i] > 0.0))
                throw ConfigError("decaying-mass check: density must be positive");
            u[j][i] = D * GP[i] / P[j][i];
        }
    }
    const History ut = time_derivative(u, dt_slice);
    History r(nt, Slice(np));
    for (std::size_t j = 0; j < nt; ++j) {
        const Slice Gv = gradient(v[j], grid);
        const Slice GGv = gradient(Gv, grid);
        Slice vu(np);
        for (std::size_t i = 0; i < np; ++i) vu[i] = v[j][i] * u[j][i];
        const Slice Gvu = gradient(vu, grid);
        for (std::size_t i = 0; i < np; ++i)
            r[j][i] = ut[j][i] + D * GGv[i] + Gvu[i] + coef * Gv[i];
    }
    return detail::assemble(EquationId::decaying_mass_osmotic_evolution, std::move(r), {}, grid,
                            dt_slice, 1, SignConvention::relativistic, UMode::spacelike,
                            Branch::none);
}

// ---------------------------------------------------------------------------
// Convergence fitting and re-normalization helpers
// ---------------------------------------------------------------------------

/// Result of a grid-refinement study on one residual.
struct OrderFit {
    double order = 0.0;
    bool monotone = true;
    bool at_noise_floor = false;
    std::vector<std::pair<double, double>> points;  ///< (dx, l2), coarse to fine
};

/// Least-squares slope of log(l2) against log(dx) over refinement levels.
/// Needs at least 3 levels.  When every level sits below floor_abs the
/// residual is at the numerical noise floor and the fit is not meaningful.
inline OrderFit fit_convergence(std::vector<std::pair<double, double>> points,
                                double floor_abs = 1e-13) {
    if (points.size() < 3)
        throw ConfigError("convergence study: need at least 3 grid levels");
    std::sort(points.begin(), points.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    OrderFit out;
    out.points = points;
    out.at_noise_floor = true;
    for (const auto& p : points)
        if (p.second > floor_abs) out.at_noise_floor = false;
    for (std::size_t k = 1; k < points.size(); ++k)
        if (points[k].second >= points[k - 1].second) out.monotone = false;
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    std::size_t n = 0;
    for (const auto& p : points) {
        if (!(p.second > 0.0)) continue;  // exact zeros cannot enter the log fit
        const double x = std::log(p.first);
        const double y = std::log(p.second);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    if (n >= 2) {
        const double denom = static_cast<double>(n) * sxx - sx * sx;
        if (denom != 0.0) out.order = (static_cast<double>(n) * sxy - sx * sy) / denom;
    }
    return out;
}

inline void attach_convergence(ResidualEntry& entry, const OrderFit& fit) {
    entry.convergence_order = fit.order;
    entry.at_noise_floor = fit.at_noise_floor;
    entry.order_warning = !fit.monotone && !fit.at_noise_floor;
    entry.levels = fit.points;
}

/// Recompute an entry's norms with an extra exclusion mask merged in (wide
/// node bands, amplitude thresholds, and similar criterion-specific masks).
inline ResidualEntry renorm_with_mask(const ResidualEval& ev, const MaskHistory& extra) {
    ResidualEntry entry = ev.entry;
    const std::size_t nt = ev.r.size();
    const std::size_t np = ev.r.empty() ? 0 : ev.r[0].size();
    double linf = 0.0, sum2 = 0.0;
    std::size_t used = 0, masked = 0, total = 0;
    for (std::size_t j = ev.margin; j + ev.margin < nt; ++j)
        for (std::size_t i = 0; i < np; ++i) {
            ++total;
            const bool skip = (!ev.excl.empty() && ev.excl[j][i]) ||
                              (!extra.empty() && extra[j][i]);
            if (skip) {
                ++masked;
                continue;
            }
            const double a = std::fabs(ev.r[j][i]);
            linf = std::max(linf, a);
            sum2 += a * a;
            ++used;
        }
    entry.residual_max = linf;
    entry.residual_l2 = used ? std::sqrt(sum2 / static_cast<double>(used)) : 0.0;
    entry.mask_fraction = total ? static_cast<double>(masked) / static_cast<double>(total) : 1.0;
    entry.unreliable = used == 0 || entry.mask_fraction >= 0.5;
    return entry;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// Optional inputs for evaluate_equation.
struct EvalOptions {
    Branch branch = Branch::none;
    const Slice* V = nullptr;        ///< external potential profile
    const Slice* m_field = nullptr;  ///< rest-mass profile for the general forms
    const History* M_override = nullptr;
    double e_vac = 0.0;   ///< uniform vacuum phase rate for the total current
    double lambda = 0.0;  ///< decay rate of the decaying-mass profile
    double v_d = 1.0;     ///< drift speed of the decaying-mass profile
};

/// Default equation set for a check run on fields of the given convention.
inline std::vector<EquationId> default_equation_set(SignConvention conv) {
    if (conv == SignConvention::nonrelativistic)
        return {EquationId::continuity,        EquationId::quantum_hamilton_jacobi,
                EquationId::osmotic_evolution, EquationId::current_evolution,
                EquationId::fokker_planck,     EquationId::fick_flux};
    return {EquationId::rel_continuity,       EquationId::rel_hamilton_jacobi,
            EquationId::osmotic_divergence,   EquationId::orthogonality,
            EquationId::density_transport,    EquationId::phase_wave_transport,
            EquationId::mass_flux_balance,    EquationId::open_system_balance,
            EquationId::rel_osmotic_evolution, EquationId::rel_current_evolution,
            EquationId::timelike_current_evolution, EquationId::advection_balance,
            EquationId::mass_gradient_acceleration};
}

/// Evaluate one equation by id on a polar field.  Relativistic statements
/// accept fields of either convention (the action sign is bridged);
/// nonrelativistic statements require the nonrelativistic convention.
inline ResidualEval evaluate_equation(EquationId id, const PolarField& polar,
                                      const PhysicalParams& params,
                                      const EvalOptions& opt = {}) {
    switch (id) {
        case EquationId::continuity:
            return eval_continuity(polar, params);
        case EquationId::quantum_hamilton_jacobi:
            return eval_quantum_hamilton_jacobi(polar, params, opt.V);
        case EquationId::osmotic_evolution:
            return eval_osmotic_evolution(polar, params);
        case EquationId::current_evolution:
            return eval_current_evolution(polar, params, opt.branch, opt.V);
        case EquationId::fokker_planck:
            return eval_fokker_planck(polar, params);
        case EquationId::fick_flux:
            return eval_fick_flux(polar, params);
        case EquationId::diffusion_equation:
            return eval_diffusion_equation(probability_density(polar), polar.grid,
                                           polar.dt_slice, params);
        case EquationId::total_current_conservation:
            return eval_total_current(polar, params, opt.e_vac,
                                      EquationId::total_current_conservation);
        case EquationId::rel_continuity:
            return eval_rel_continuity(polar, params);
        case EquationId::rel_hamilton_jacobi:
            return eval_rel_hamilton_jacobi(polar, params);
        case EquationId::osmotic_divergence:
            return eval_osmotic_divergence(polar, params);
        case EquationId::orthogonality:
            return eval_orthogonality(polar, params);
        case EquationId::density_transport:
            return eval_density_transport(polar, params);
        case EquationId::phase_wave_transport:
            return eval_phase_wave_transport(polar, params);
        case EquationId::open_system_balance:
            return eval_open_system_balance(polar, params);
        case EquationId::mass_flux_balance:
            return eval_mass_flux_balance(polar, params);
        case EquationId::rel_osmotic_evolution:
            return eval_rel_osmotic_evolution(polar, params, opt.M_override);
        case EquationId::rel_current_evolution:
            return eval_rel_current_evolution(polar, params, opt.branch, opt.V,
                                              opt.M_override);
        case EquationId::mass_gradient_acceleration:
            return eval_mass_gradient_acceleration(polar, params);
        case EquationId::timelike_current_evolution:
            return eval_timelike_current_evolution(polar, params, opt.V, opt.M_override);
        case EquationId::advection_balance:
            return eval_advection_balance(polar, params, opt.branch);
        case EquationId::general_osmotic_evolution:
            return eval_general_osmotic_evolution(polar, params, opt.m_field, opt.M_override);
        case EquationId::general_current_evolution:
            return eval_general_current_evolution(polar, params, opt.branch, opt.m_field,
                                                  opt.V, opt.M_override);
        case EquationId::general_timelike_current_evolution:
            return eval_general_timelike_current_evolution(polar, params, opt.m_field, opt.V,
                                                           opt.M_override);
        case EquationId::mass_drift_osmotic_evolution:
            return eval_mass_drift_osmotic_evolution(polar, params, opt.m_field,
                                                     opt.M_override);
        case EquationId::decaying_mass_osmotic_evolution:
            return eval_decaying_mass_osmotic_evolution(polar, params, opt.lambda, opt.v_d,
                                                        opt.M_override);
    }
    throw ConfigError("evaluate_equation: unknown equation id");
}

} // namespace smech
