#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "smech/errors.hpp"
#include "smech/field.hpp"
#include "smech/grid.hpp"

namespace smech {

/// Identifiers for the verified balance equations.  Each id names the
/// statement being checked, grouped by regime:
///  - nonrelativistic Madelung/Nelson set (continuity, quantum
///    Hamilton-Jacobi, the osmotic/current evolution pair, Fokker-Planck),
///  - relativistic set (current conservation, mass-shell relation, the
///    velocity-divergence balance and its variants, orthogonality and the
///    transport forms, the relativistic evolution pair, acceleration law),
///  - generalized variable-mass set and the diffusion (Fick) limit.
enum class EquationId {
    continuity,
    quantum_hamilton_jacobi,
    osmotic_evolution,
    current_evolution,
    fokker_planck,
    total_current_conservation,
    rel_continuity,
    rel_hamilton_jacobi,
    osmotic_divergence,
    orthogonality,
    density_transport,
    phase_wave_transport,
    open_system_balance,
    mass_flux_balance,
    rel_osmotic_evolution,
    rel_current_evolution,
    mass_gradient_acceleration,
    timelike_current_evolution,
    advection_balance,
    general_osmotic_evolution,
    general_current_evolution,
    general_timelike_current_evolution,
    mass_drift_osmotic_evolution,
    decaying_mass_osmotic_evolution,
    fick_flux,
    diffusion_equation,
};

/// Residual classification.
///  - exact: the statement follows from the wave equation alone, so its
///    residual must vanish at stencil order on any conforming field.
///  - regime: the statement holds only in a limiting regime (constant mass,
///    vanishing quantum potential, ...); the residual measures distance
///    from that regime and need not converge.
enum class ResidualClass { exact, regime };

/// Normalization mode of the osmotic four-velocity used by relativistic
/// contractions.
enum class UMode { none, spacelike, timelike };

/// Sign branch of the current-evolution equations (forward-time particle
/// vs time-reversed antiparticle advection).  Never auto-selected.
enum class Branch { none, particle, antiparticle };

inline const char* to_string(EquationId id) {
    switch (id) {
        case EquationId::continuity: return "continuity";
        case EquationId::quantum_hamilton_jacobi: return "quantum_hamilton_jacobi";
        case EquationId::osmotic_evolution: return "osmotic_evolution";
        case EquationId::current_evolution: return "current_evolution";
        case EquationId::fokker_planck: return "fokker_planck";
        case EquationId::total_current_conservation: return "total_current_conservation";
        case EquationId::rel_continuity: return "rel_continuity";
        case EquationId::rel_hamilton_jacobi: return "rel_hamilton_jacobi";
        case EquationId::osmotic_divergence: return "osmotic_divergence";
        case EquationId::orthogonality: return "orthogonality";
        case EquationId::density_transport: return "density_transport";
        case EquationId::phase_wave_transport: return "phase_wave_transport";
        case EquationId::open_system_balance: return "open_system_balance";
        case EquationId::mass_flux_balance: return "mass_flux_balance";
        case EquationId::rel_osmotic_evolution: return "rel_osmotic_evolution";
        case EquationId::rel_current_evolution: return "rel_current_evolution";
        case EquationId::mass_gradient_acceleration: return "mass_gradient_acceleration";
        case EquationId::timelike_current_evolution: return "timelike_current_evolution";
        case EquationId::advection_balance: return "advection_balance";
        case EquationId::general_osmotic_evolution: return "general_osmotic_evolution";
        case EquationId::general_current_evolution: return "general_current_evolution";
        case EquationId::general_timelike_current_evolution:
            return "general_timelike_current_evolution";
        case EquationId::mass_drift_osmotic_evolution: return "mass_drift_osmotic_evolution";
        case EquationId::decaying_mass_osmotic_evolution:
            return "decaying_mass_osmotic_evolution";
        case EquationId::fick_flux: return "fick_flux";
        case EquationId::diffusion_equation: return "diffusion_equation";
    }
    return "unknown";
}

inline std::optional<EquationId> parse_equation_id(const std::string& s) {
    static const EquationId all[] = {
        EquationId::continuity, EquationId::quantum_hamilton_jacobi,
        EquationId::osmotic_evolution, EquationId::current_evolution,
        EquationId::fokker_planck, EquationId::total_current_conservation,
        EquationId::rel_continuity, EquationId::rel_hamilton_jacobi,
        EquationId::osmotic_divergence, EquationId::orthogonality,
        EquationId::density_transport, EquationId::phase_wave_transport,
        EquationId::open_system_balance, EquationId::mass_flux_balance,
        EquationId::rel_osmotic_evolution, EquationId::rel_current_evolution,
        EquationId::mass_gradient_acceleration, EquationId::timelike_current_evolution,
        EquationId::advection_balance, EquationId::general_osmotic_evolution,
        EquationId::general_current_evolution,
        EquationId::general_timelike_current_evolution,
        EquationId::mass_drift_osmotic_evolution,
        EquationId::decaying_mass_osmotic_evolution, EquationId::fick_flux,
        EquationId::diffusion_equation,
    };
    for (EquationId id : all)
        if (s == to_string(id)) return id;
    return std::nullopt;
}

/// Statements derivable from the wave equations alone converge everywhere;
/// the rest hold only in their limiting regimes.
inline ResidualClass residual_class(EquationId id) {
    switch (id) {
        case EquationId::continuity:
        case EquationId::quantum_hamilton_jacobi:
        case EquationId::osmotic_evolution:
        case EquationId::current_evolution:
        case EquationId::fokker_planck:
        case EquationId::total_current_conservation:
        case EquationId::rel_continuity:
        case EquationId::rel_hamilton_jacobi:
        case EquationId::osmotic_divergence:
        case EquationId::mass_flux_balance:
        case EquationId::open_system_balance:
        case EquationId::fick_flux:
        case EquationId::diffusion_equation:
            return ResidualClass::exact;
        default:
            return ResidualClass::regime;
    }
}

/// Outcome of evaluating one balance equation on one field.
struct ResidualEntry {
    EquationId id = EquationId::continuity;
    double residual_max = 0.0;  ///< off-mask L-infinity norm
    double residual_l2 = 0.0;   ///< off-mask root-mean-square
    double mask_fraction = 0.0;
    bool unreliable = false;    ///< set when mask_fraction >= 0.5

    double dx = 0.0, dt = 0.0;
    std::size_t n_x = 0, n_t = 0;

    SignConvention convention = SignConvention::nonrelativistic;
    UMode u_mode = UMode::none;
    Branch branch = Branch::none;

    std::optional<double> convergence_order;  ///< fitted slope when a study ran
    bool order_warning = false;               ///< residuals not monotone under refinement
    bool at_noise_floor = false;              ///< residuals too small for an order fit
    std::vector<std::pair<double, double>> levels;  ///< (dx, l2) per refinement level
    std::string note;
};

/// Bundle of entries produced by one check run.
struct ResidualReport {
    std::vector<ResidualEntry> entries;

    const ResidualEntry* find(EquationId id) const {
        for (const auto& e : entries)
            if (e.id == id) return &e;
        return nullptr;
    }
};

} // namespace smech
