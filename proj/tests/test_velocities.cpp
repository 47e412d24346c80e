#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "smech/field.hpp"
#include "smech/grid.hpp"
#include "smech/kleingordon.hpp"
#include "smech/schrodinger.hpp"
#include "smech/velocities.hpp"

using namespace smech;

namespace {
constexpr double pi = 3.14159265358979323846;
}

TEST_CASE("osmotic velocity: balance identity exact, closed form to stencil order") {
    PhysicalParams params;  // D = hbar / 2m = 0.5
    const Grid1D g = make_grid(-4.0, 4.0, 256, 1e-3, 2, Boundary::periodic);
    const double s2 = 0.8;  // sigma^2
    History P(2, Slice(g.n_points()));
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t i = 0; i < g.n_points(); ++i)
            P[j][i] = std::exp(-g.x(i) * g.x(i) / (2.0 * s2));
    const MaskHistory mask(2, std::vector<char>(g.n_points(), 0));
    const History u = osmotic_velocity(P, mask, g, params);

    for (std::size_t j = 0; j < 2; ++j) {
        const Slice Px = gradient(P[j], g);
        for (std::size_t i = 0; i < g.n_points(); ++i) {
            // u P - D dP vanishes to rounding because u divides the stencil.
            REQUIRE(u[j][i] * P[j][i] - params.D() * Px[i] ==
                    Catch::Approx(0.0).margin(1e-15));
            // Closed form u = -D x / sigma^2, second-order accurate.  The
            // seam sample wraps to the mirror tail of the non-periodic
            // Gaussian, so the infinite-line formula does not apply there.
            if (i == 0) continue;
            const double x = g.x(i);
            const double exact = -params.D() * x / s2;
            // Leading truncation: D h^2/6 * P''' / P for the Gaussian.
            const double h = g.dx();
            const double ppp = std::fabs(x * x * x) / (s2 * s2 * s2) +
                               3.0 * std::fabs(x) / (s2 * s2);
            const double bound = 1.5 * params.D() * h * h / 6.0 * ppp + 1e-12;
            REQUIRE(u[j][i] == Catch::Approx(exact).margin(bound));
        }
    }
}

TEST_CASE("current velocity of a plane wave and the convention guards") {
    PhysicalParams params;
    const Grid1D g = make_grid(0.0, 2.0 * pi, 64, 1e-3, 3, Boundary::periodic);
    ComplexWaveField f;
    f.grid = g;
    f.dt_slice = 1e-3;
    f.values.assign(3, ComplexSlice(g.n_points()));
    const double k = 3.0;
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < g.n_points(); ++i)
            f.values[j][i] = Complex(std::cos(k * g.x(i)), std::sin(k * g.x(i)));

    const PolarField p = polar_decompose(f, SignConvention::nonrelativistic, params.hbar);
    const History v = current_velocity_nonrel(p, params);
    for (std::size_t i = 0; i < g.n_points(); ++i)
        REQUIRE(v[1][i] == Catch::Approx(params.hbar * k / params.m).margin(1e-11));

    const PolarField rel = polar_decompose(f, SignConvention::relativistic, params.hbar);
    REQUIRE_THROWS_AS(current_velocity_nonrel(rel, params), ConfigError);
}

TEST_CASE("box eigenstate: zero current, cotangent osmotic profile, Q equals E") {
    PhysicalParams params;
    const unsigned n = 2;
    const double L = 1.0;
    const Grid1D g = make_grid(0.0, L, 512, 1e-4, 3, Boundary::fixed_zero);
    const ComplexWaveField f = analytic_box_eigenstate(g, params, n);
    const PolarField p = polar_decompose(f, SignConvention::nonrelativistic, params.hbar);

    const VelocityFieldSet set = extract_velocity_fields(p, params);
    const double kn = static_cast<double>(n) * pi / L;
    const double En = box_energy(params, n, L);
    for (std::size_t i = 0; i < g.n_points(); ++i) {
        const double s = std::sin(kn * g.x(i));
        if (std::fabs(s) <= 0.2) continue;  // stay clear of nodes and walls
        REQUIRE(set.v[1][i] == Catch::Approx(0.0).margin(1e-10));
        const double u_exact = 2.0 * params.D() * kn * std::cos(kn * g.x(i)) / s;
        REQUIRE(set.u[1][i] ==
                Catch::Approx(u_exact).margin(1e-3 * (1.0 + std::fabs(u_exact))));
        REQUIRE(set.Q[1][i] == Catch::Approx(En).epsilon(1e-3));
        REQUIRE(set.M[1][i] == params.m);
        REQUIRE(set.u_M[1][i] == 0.0);
    }
}

TEST_CASE("relativistic velocities of a plane wave satisfy the Lorentz norm") {
    PhysicalParams params;
    const Grid1D g = make_grid(0.0, 2.0 * pi, 64, 0.002, 5, Boundary::periodic);
    const double k = 2.0;
    const double omega = kg_omega(params, k);
    const ComplexWaveField f = kg_plane_wave(g, params, k);
    const PolarField p = polar_decompose(f, SignConvention::relativistic, params.hbar);

    // Constant amplitude: the wave operator on R is pure rounding, so the
    // variable mass reduces to the rest mass.
    const VariableMass vm = variable_mass(p, params);
    for (std::size_t i = 0; i < g.n_points(); ++i) {
        REQUIRE(vm.tachyonic[2][i] == 0);
        REQUIRE(vm.M[2][i] == Catch::Approx(params.m).margin(1e-8));
    }

    const MaskHistory mask(p.n_slices(), std::vector<char>(p.n_points(), 0));
    const RelCurrentVelocity v = current_velocity_rel(p, vm.M, mask, params);
    for (std::size_t i = 0; i < g.n_points(); ++i) {
        REQUIRE(v.v1[2][i] == Catch::Approx(params.hbar * k / params.m).margin(1e-7));
        REQUIRE(v.v0[2][i] ==
                Catch::Approx(params.hbar * omega / (params.c * params.m)).margin(1e-7));
        // v0^2 - v1^2 = c^2 from the dispersion relation.
        const double norm2 = v.v0[2][i] * v.v0[2][i] - v.v1[2][i] * v.v1[2][i];
        REQUIRE(norm2 == Catch::Approx(params.c * params.c).margin(1e-6));
    }

    const PolarField wrong = polar_decompose(f, SignConvention::nonrelativistic, params.hbar);
    REQUIRE_THROWS_AS(current_velocity_rel(wrong, vm.M, mask, params), ConfigError);

    History zero_mass(p.n_slices(), Slice(p.n_points(), 0.0));
    REQUIRE_THROWS_AS(current_velocity_rel(p, zero_mass, mask, params), NumericalError);
}

TEST_CASE("deep standing modulation produces flagged tachyonic samples") {
    PhysicalParams params;
    const Grid1D g = make_grid(0.0, 2.0 * pi, 64, 0.002, 9, Boundary::periodic);
    std::vector<KGMode> modes(2);
    modes[0] = {3.0, Complex(1.0, 0.0), +1};
    modes[1] = {-3.0, Complex(0.5, 0.0), +1};
    const ComplexWaveField f = kg_superposition(g, params, modes);
    const PolarField p = polar_decompose(f, SignConvention::relativistic, params.hbar);
    const VariableMass vm = variable_mass(p, params);

    std::size_t flagged = 0;
    for (std::size_t j = 0; j < p.n_slices(); ++j)
        for (std::size_t i = 0; i < p.n_points(); ++i)
            if (vm.tachyonic[j][i]) {
                ++flagged;
                REQUIRE(vm.M[j][i] == 0.0);         // never clamped to a value
                REQUIRE(vm.Msq_c2[j][i] < 0.0);     // flag matches the radicand
            }
    REQUIRE(flagged > 0);

    // The merged exclusion mask hides the flags from every downstream field.
    const VelocityFieldSet set = extract_velocity_fields(p, params);
    for (std::size_t j = 0; j < p.n_slices(); ++j)
        for (std::size_t i = 0; i < p.n_points(); ++i)
            if (vm.tachyonic[j][i]) {
                REQUIRE(set.mask[j][i] == 1);
                REQUIRE(set.u_M[j][i] == 0.0);
                REQUIRE(set.v[j][i] == 0.0);
            }
}

TEST_CASE("diffusion-gradient velocity on linear and exponential profiles") {
    PhysicalParams params;
    const Grid1D g = make_grid(0.0, 1.0, 64, 1e-3, 2, Boundary::fixed_zero);
    Slice lin(g.n_points());
    for (std::size_t i = 0; i < lin.size(); ++i) lin[i] = 2.0 + 0.5 * g.x(i);
    const Slice uD = diffusion_gradient_velocity(lin, g, params);
    for (std::size_t i = 0; i < lin.size(); ++i)
        REQUIRE(uD[i] == Catch::Approx(params.D() * 0.5 / lin[i]).margin(1e-12));

    const double lam = 0.7;
    Slice expo(g.n_points());
    for (std::size_t i = 0; i < expo.size(); ++i) expo[i] = std::exp(lam * g.x(i));
    const Slice uE = diffusion_gradient_velocity(expo, g, params);
    // Central stencil of exp gives sinh(lam h)/h instead of lam.
    const double expected = params.D() * std::sinh(lam * g.dx()) / g.dx();
    for (std::size_t i = 1; i + 1 < expo.size(); ++i)
        REQUIRE(uE[i] == Catch::Approx(expected).margin(1e-12));

    Slice bad = lin;
    bad[10] = 0.0;
    REQUIRE_THROWS_AS(diffusion_gradient_velocity(bad, g, params), ConfigError);
}

TEST_CASE("mass-gradient velocity skips flags and rejects unflagged zeros") {
    PhysicalParams params;
    const Grid1D g = make_grid(0.0, 1.0, 32, 1e-3, 2, Boundary::fixed_zero);
    History M(1, Slice(g.n_points(), 2.0));
    M[0][5] = 0.0;
    MaskHistory flags(1, std::vector<char>(g.n_points(), 0));
    REQUIRE_THROWS_AS(mass_gradient_velocity(M, flags, g, params), NumericalError);
    flags[0][5] = 1;
    const History uM = mass_gradient_velocity(M, flags, g, params);
    REQUIRE(uM[0][5] == 0.0);
    // Constant mass elsewhere: gradient touches the zero at sample 5, so
    // only samples away from it are strictly zero.
    REQUIRE(uM[0][20] == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("two bilinear oracles: phase route matches, imaginary form differs at h^2") {
    PhysicalParams params;
    const Grid1D g = make_grid(0.0, 2.0 * pi, 64, 1e-3, 3, Boundary::periodic);
    const double k = 3.0;
    ComplexWaveField f;
    f.grid = g;
    f.dt_slice = 1e-3;
    f.values.assign(3, ComplexSlice(g.n_points()));
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < g.n_points(); ++i)
            f.values[j][i] = Complex(std::cos(k * g.x(i)), std::sin(k * g.x(i)));

    const PolarField p = polar_decompose(f, SignConvention::nonrelativistic, params.hbar);
    const History v_polar = current_velocity_nonrel(p, params);
    const History v_arg = cross_check_velocity_bilinear(f, params);
    const History v_imag = bilinear_velocity_imag_form(f, params);

    const double coef = params.hbar / params.m;
    const double h = g.dx();
    for (std::size_t i = 0; i < g.n_points(); ++i) {
        // Same central stencil through two independent code paths.
        REQUIRE(v_arg[1][i] == Catch::Approx(v_polar[1][i]).margin(1e-10));
        REQUIRE(v_arg[1][i] == Catch::Approx(coef * k).margin(1e-12));
        // The Im(psi* dpsi) form lands on sin(kh)/h instead of k.
        REQUIRE(v_imag[1][i] == Catch::Approx(coef * std::sin(k * h) / h).margin(1e-12));
    }
    REQUIRE(std::fabs(v_imag[1][7] - v_arg[1][7]) >
            0.5 * coef * k * k * k * h * h / 6.0);
}

TEST_CASE("dispersing packet: the two independent current routes agree off-mask") {
    PhysicalParams params;
    const Grid1D g = make_grid(-8.0, 8.0, 256, 0.002, 5, Boundary::periodic);
    const ComplexWaveField f = analytic_free_gaussian(g, params, -1.0, 0.5, 1.0, 0.2);
    const PolarField p = polar_decompose(f, SignConvention::nonrelativistic, params.hbar);
    const History v_polar = current_velocity_nonrel(p, params);
    const History v_arg = cross_check_velocity_bilinear(f, params);
    for (std::size_t j = 0; j < p.n_slices(); ++j)
        for (std::size_t i = 1; i + 1 < g.n_points(); ++i) {
            if (p.node_mask[j][i] || p.node_mask[j][i - 1] || p.node_mask[j][i + 1])
                continue;
            REQUIRE(v_arg[j][i] == Catch::Approx(v_polar[j][i]).margin(1e-9));
        }
}

TEST_CASE("relativistic quantum potential vanishes for constant amplitude") {
    PhysicalParams params;
    const Grid1D g = make_grid(0.0, 2.0 * pi, 64, 0.002, 5, Boundary::periodic);
    const ComplexWaveField f = kg_plane_wave(g, params, 2.0);
    const PolarField p = polar_decompose(f, SignConvention::relativistic, params.hbar);
    const History Q = quantum_potential_rel(p, params);
    for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t i = 0; i < g.n_points(); ++i)
            REQUIRE(Q[j][i] == Catch::Approx(0.0).margin(1e-7));

    ComplexWaveField two = f;
    two.values.resize(2);
    const PolarField p2 = polar_decompose(two, SignConvention::relativistic, params.hbar);
    REQUIRE_THROWS_AS(quantum_potential_rel(p2, params), ConfigError);
    REQUIRE_THROWS_AS(variable_mass(p2, params), ConfigError);
}

TEST_CASE("field set assembly: drift composition and external mass broadcast") {
    PhysicalParams params;
    params.alpha = 0.7;
    const Grid1D g = make_grid(-4.0, 4.0, 128, 1e-3, 3, Boundary::periodic);
    const ComplexWaveField f = analytic_free_gaussian(g, params, 0.0, 0.6, 0.8);
    const PolarField p = polar_decompose(f, SignConvention::nonrelativistic, params.hbar);

    ExtractOptions opt;
    opt.m_field.assign(g.n_points(), 0.0);
    for (std::size_t i = 0; i < g.n_points(); ++i)
        opt.m_field[i] = 2.0 + 0.1 * g.x(i);
    const VelocityFieldSet set = extract_velocity_fields(p, params, opt);

    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < g.n_points(); ++i) {
            if (set.mask[j][i]) continue;
            REQUIRE(set.b[j][i] == set.v[j][i] + params.alpha * set.u[j][i]);
            REQUIRE(set.P[j][i] == p.R[j][i] * p.R[j][i]);
        }
    // u_D is a static profile broadcast across slices.
    for (std::size_t i = 0; i < g.n_points(); ++i)
        REQUIRE(set.u_D[0][i] == set.u_D[2][i]);

    ExtractOptions badopt;
    badopt.m_field.assign(3, 1.0);
    REQUIRE_THROWS_AS(extract_velocity_fields(p, params, badopt), ConfigError);
}
