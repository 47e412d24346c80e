#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "smech/field.hpp"
#include "smech/grid.hpp"
#include "smech/kleingordon.hpp"

using namespace smech;

namespace {
constexpr double pi = 3.14159265358979323846;
}

TEST_CASE("dispersion relation") {
    PhysicalParams p;
    REQUIRE(kg_omega(p, 2.0) == Catch::Approx(2.2360679774997898).epsilon(1e-15));
    REQUIRE(kg_omega(p, 0.0) == Catch::Approx(1.0).epsilon(1e-15));  // rest frequency m c^2 / hbar
    PhysicalParams q;
    q.m = 2.0;
    q.c = 3.0;
    q.hbar = 0.5;
    REQUIRE(kg_omega(q, 1.5) ==
            Catch::Approx(3.0 * std::sqrt(1.5 * 1.5 + 144.0)).epsilon(1e-15));
}

TEST_CASE("plane wave construction and validation") {
    PhysicalParams p;
    const Grid1D g = make_grid(0.0, 2.0 * pi, 64, 0.002, 5, Boundary::periodic);
    REQUIRE_THROWS_AS(kg_plane_wave(g, p, 1.5), ConfigError);   // not commensurate
    REQUIRE_THROWS_AS(kg_plane_wave(g, p, 1.0, 1.0, 0), ConfigError);

    const ComplexWaveField f = kg_plane_wave(g, p, 2.0, 0.7, -1);
    const double omega = kg_omega(p, 2.0);
    const std::size_t j = 3, i = 17;
    const double ph = 2.0 * g.x(i) + omega * f.time(j);
    REQUIRE(f.values[j][i].real() == Catch::Approx(0.7 * std::cos(ph)).margin(1e-13));
    REQUIRE(f.values[j][i].imag() == Catch::Approx(0.7 * std::sin(ph)).margin(1e-13));
}

TEST_CASE("leapfrog solver tracks an exact plane wave") {
    PhysicalParams p;
    const Grid1D g = make_grid(0.0, 2.0 * pi, 128, 0.02, 51, Boundary::periodic);
    const ComplexWaveField exact = kg_plane_wave(g, p, 2.0);
    const double omega = kg_omega(p, 2.0);

    KGProblem prob;
    prob.grid = g;
    prob.params = p;
    prob.psi0 = exact.values[0];
    prob.dpsi0_dt.resize(g.n_points());
    for (std::size_t i = 0; i < g.n_points(); ++i)
        prob.dpsi0_dt[i] = Complex(0.0, -omega) * exact.values[0][i];

    const ComplexWaveField psi = solve_klein_gordon(prob);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.n_points(); ++i)
        worst = std::max(worst, std::abs(psi.values[50][i] - exact.values[50][i]));
    // Second-order scheme: (k dx)^2 and (omega dt)^2 truncation over T = 1.
    REQUIRE(worst < 5e-3);

    KGProblem bad = prob;
    bad.psi0.pop_back();
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    KGProblem cfl = prob;
    cfl.grid = make_grid(0.0, 2.0 * pi, 128, 1.0, 51, Boundary::periodic);
    REQUIRE_THROWS_AS(cfl.validate(), ConfigError);
}

TEST_CASE("counter-propagating equal-frequency modes carry a static density") {
    PhysicalParams p;
    const Grid1D g = make_grid(0.0, 2.0 * pi, 64, 0.002, 9, Boundary::periodic);
    std::vector<KGMode> modes(2);
    modes[0] = {3.0, Complex(1.0, 0.0), +1};
    modes[1] = {-3.0, Complex(0.5, 0.0), +1};
    const ComplexWaveField f = kg_superposition(g, p, modes);
    for (std::size_t j = 1; j < f.n_slices(); ++j)
        for (std::size_t i = 0; i < g.n_points(); ++i)
            REQUIRE(std::abs(f.values[j][i]) ==
                    Catch::Approx(std::abs(f.values[0][i])).margin(1e-12));
    REQUIRE_THROWS_AS(kg_superposition(g, p, {}), ConfigError);
}

TEST_CASE("minimal vacuum energy: zero for positive frequency, hbar omega for negative") {
    PhysicalParams p;
    const Grid1D g = make_grid(0.0, 2.0 * pi, 64, 0.002, 9, Boundary::periodic);
    const double omega = kg_omega(p, 2.0);

    const ComplexWaveField plus = kg_plane_wave(g, p, 2.0, 1.0, +1);
    const PolarField pp = polar_decompose(plus, SignConvention::relativistic, p.hbar);
    REQUIRE(minimal_evac(pp) == 0.0);

    const ComplexWaveField minus = kg_plane_wave(g, p, 2.0, 1.0, -1);
    const PolarField pm = polar_decompose(minus, SignConvention::relativistic, p.hbar);
    REQUIRE(minimal_evac(pm) == Catch::Approx(p.hbar * omega).epsilon(1e-10));

    const PolarField wrong = polar_decompose(plus, SignConvention::nonrelativistic, p.hbar);
    REQUIRE_THROWS_AS(minimal_evac(wrong), ConfigError);

    ComplexWaveField two = plus;
    two.values.resize(2);
    const PolarField p2 = polar_decompose(two, SignConvention::relativistic, p.hbar);
    REQUIRE_THROWS_AS(minimal_evac(p2), ConfigError);
}

TEST_CASE("currents of a plane wave and their conservation") {
    PhysicalParams p;
    const Grid1D g = make_grid(0.0, 2.0 * pi, 64, 0.002, 9, Boundary::periodic);
    const double k = 2.0, A = 0.8, e_vac = 0.3;
    const double omega = kg_omega(p, k);
    const ComplexWaveField f = kg_plane_wave(g, p, k, A);
    const PolarField polar = polar_decompose(f, SignConvention::relativistic, p.hbar);

    const FourCurrent cur = compute_currents(polar, p, e_vac);
    // S = hbar (omega t - k x): j0 = P (hbar omega + e_vac) / c, j1 = P hbar k.
    const double P = A * A;
    for (std::size_t j = 0; j < cur.n_slices(); ++j)
        for (std::size_t i = 0; i < g.n_points(); ++i) {
            REQUIRE(cur.j0[j][i] ==
                    Catch::Approx(P * (p.hbar * omega + e_vac) / p.c).margin(1e-10));
            REQUIRE(cur.j1[j][i] == Catch::Approx(P * p.hbar * k).margin(1e-10));
        }

    const ResidualEntry res = total_current_residual(cur);
    REQUIRE(res.id == EquationId::total_current_conservation);
    REQUIRE(res.residual_max < 1e-8);
    REQUIRE(res.mask_fraction == 0.0);
    REQUIRE_FALSE(res.unreliable);

    const PolarField wrong = polar_decompose(f, SignConvention::nonrelativistic, p.hbar);
    REQUIRE_THROWS_AS(compute_currents(wrong, p, 0.0), ConfigError);
}

TEST_CASE("vacuum phase shifts the decomposed action by E t") {
    PhysicalParams p;
    const Grid1D g = make_grid(0.0, 2.0 * pi, 64, 0.002, 9, Boundary::periodic);
    const double e_vac = 0.7;
    const ComplexWaveField f = kg_plane_wave(g, p, 2.0);
    const ComplexWaveField shifted = apply_vacuum_phase(f, p, e_vac);
    const PolarField a = polar_decompose(f, SignConvention::relativistic, p.hbar);
    const PolarField b = polar_decompose(shifted, SignConvention::relativistic, p.hbar);
    for (std::size_t j = 0; j < a.n_slices(); ++j)
        for (std::size_t i = 0; i < a.n_points(); ++i)
            REQUIRE(b.S[j][i] - a.S[j][i] ==
                    Catch::Approx(e_vac * a.time(j)).margin(1e-10));
}

TEST_CASE("spectral packet: exact envelope at t = 0, solver agreement later") {
    PhysicalParams p;
    const Grid1D g = make_grid(-8.0, 8.0, 256, 0.03, 11, Boundary::periodic);
    KGPacketSpec spec;
    spec.x0 = 0.0;
    spec.sigma0 = 0.5;
    spec.k0 = 0.5;

    const ComplexWaveField packet = kg_packet_field(g, p, spec);
    const double norm0 = std::pow(2.0 * pi * spec.sigma0 * spec.sigma0, -0.25);
    for (std::size_t i = 0; i < g.n_points(); ++i) {
        const double dxc = g.x(i) - spec.x0;
        const Complex expect =
            norm0 * std::exp(Complex(-dxc * dxc / (4.0 * spec.sigma0 * spec.sigma0),
                                     spec.k0 * dxc));
        REQUIRE(std::abs(packet.values[0][i] - expect) < 1e-11);
    }
    REQUIRE(packet.norm_history[0] == Catch::Approx(1.0).epsilon(1e-10));

    const auto init = kg_packet_initial(g, p, spec);
    KGProblem prob;
    prob.grid = g;
    prob.params = p;
    prob.psi0 = init.first;
    prob.dpsi0_dt = init.second;
    const ComplexWaveField psi = solve_klein_gordon(prob);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.n_points(); ++i)
        worst = std::max(worst, std::abs(psi.values[10][i] - packet.values[10][i]));
    REQUIRE(worst < 1e-3);

    const Grid1D walls = make_grid(-8.0, 8.0, 256, 0.03, 11, Boundary::fixed_zero);
    REQUIRE_THROWS_AS(kg_packet_field(walls, p, spec), ConfigError);
}
