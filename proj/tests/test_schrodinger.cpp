#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "smech/grid.hpp"
#include "smech/schrodinger.hpp"

using namespace smech;

namespace {

SchrodingerProblem free_gaussian_problem(const Grid1D& g, double x0, double sigma0,
                                         double k0) {
    SchrodingerProblem prob;
    prob.grid = g;
    PhysicalParams params;
    const Grid1D seed_grid = make_grid(g.x_min, g.x_max, g.n_x, g.dt, 2, g.boundary);
    const ComplexWaveField seed = analytic_free_gaussian(seed_grid, params, x0, sigma0, k0);
    prob.params = params;
    prob.psi0 = seed.values[0];
    // The analytic packet is normalized on the infinite line; renormalize the
    // sampled slice so the validator's 1e-10 gate passes on the finite grid.
    const double n = slice_norm(prob.psi0, g);
    const double s = 1.0 / std::sqrt(n);
    for (Complex& z : prob.psi0) z *= s;
    return prob;
}

} // namespace

TEST_CASE("problem validation rejects mismatched or unnormalized data") {
    const Grid1D g = make_grid(-4.0, 4.0, 64, 1e-3, 4, Boundary::periodic);
    SchrodingerProblem prob = free_gaussian_problem(g, 0.0, 0.5, 0.0);
    REQUIRE_NOTHROW(prob.validate());

    SchrodingerProblem wrong_size = prob;
    wrong_size.psi0.pop_back();
    REQUIRE_THROWS_AS(wrong_size.validate(), ConfigError);

    SchrodingerProblem wrong_norm = prob;
    for (Complex& z : wrong_norm.psi0) z *= 1.5;
    REQUIRE_THROWS_AS(wrong_norm.validate(), ConfigError);

    SchrodingerProblem wrong_v = prob;
    wrong_v.V.assign(3, 0.0);
    REQUIRE_THROWS_AS(wrong_v.validate(), ConfigError);

    REQUIRE_THROWS_AS(solve_schrodinger(prob, SolveOptions{0, 0.0, 0}), ConfigError);
}

TEST_CASE("Crank-Nicolson conserves the norm and tracks the free Gaussian") {
    const Grid1D g = make_grid(-8.0, 8.0, 512, 1e-3, 201, Boundary::periodic);
    const SchrodingerProblem prob = free_gaussian_problem(g, -1.0, 0.5, 1.0);
    const ComplexWaveField psi = solve_schrodinger(prob);

    REQUIRE(psi.n_slices() == 201);
    REQUIRE(psi.dt_slice == Catch::Approx(1e-3));
    for (double n : psi.norm_history) REQUIRE(std::fabs(n - 1.0) < 1e-9);

    // Compare against the closed form at the final time.  The spatial
    // truncation error dominates; at dx = 1/32 it sits near 1e-5.
    const ComplexWaveField exact =
        analytic_free_gaussian(g, prob.params, -1.0, 0.5, 1.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.n_points(); ++i)
        worst = std::max(worst, std::abs(psi.values[200][i] - exact.values[200][i]));
    REQUIRE(worst < 5e-4);
}

TEST_CASE("store_every, burn_in and t_start shape the stored history") {
    const Grid1D g = make_grid(-4.0, 4.0, 128, 1e-3, 5, Boundary::periodic);
    const SchrodingerProblem prob = free_gaussian_problem(g, 0.0, 0.5, 0.5);

    SolveOptions opt;
    opt.store_every = 4;
    opt.burn_in = 10;
    opt.t_start = 2.0;
    const ComplexWaveField strided = solve_schrodinger(prob, opt);
    REQUIRE(strided.n_slices() == 5);
    REQUIRE(strided.t0 == Catch::Approx(2.0 + 10.0 * 1e-3));
    REQUIRE(strided.dt_slice == Catch::Approx(4e-3));

    // The strided run reproduces a dense run sampled at the same steps.
    const Grid1D dense = make_grid(-4.0, 4.0, 128, 1e-3, 27, Boundary::periodic);
    SchrodingerProblem dprob = prob;
    dprob.grid = dense;
    const ComplexWaveField full = solve_schrodinger(dprob);
    for (std::size_t j = 0; j < 5; ++j) {
        const std::size_t jd = 10 + 4 * j;
        for (std::size_t i = 0; i < g.n_points(); ++i) {
            REQUIRE(strided.values[j][i].real() ==
                    Catch::Approx(full.values[jd][i].real()).margin(1e-13));
            REQUIRE(strided.values[j][i].imag() ==
                    Catch::Approx(full.values[jd][i].imag()).margin(1e-13));
        }
    }
}

TEST_CASE("box eigenstates are stationary under the solver") {
    PhysicalParams params;
    const double L = 1.0;
    const Grid1D g = make_grid(0.0, L, 256, 1e-4, 101, Boundary::fixed_zero);
    const ComplexWaveField seed = analytic_box_eigenstate(g, params, 2);

    SchrodingerProblem prob;
    prob.grid = g;
    prob.params = params;
    prob.psi0 = seed.values[0];
    const double n = slice_norm(prob.psi0, g);
    const double s = 1.0 / std::sqrt(n);
    for (Complex& z : prob.psi0) z *= s;

    const ComplexWaveField psi = solve_schrodinger(prob);
    // |psi| must stay put; only the global phase rotates.
    double dens_drift = 0.0;
    for (std::size_t i = 0; i < g.n_points(); ++i)
        dens_drift = std::max(dens_drift,
                              std::fabs(std::abs(psi.values[100][i]) -
                                        std::abs(psi.values[0][i])));
    REQUIRE(dens_drift < 1e-8);

    // Extract E from the phase of the overlap <psi(0)|psi(T)>.
    Complex overlap(0.0, 0.0);
    for (std::size_t i = 0; i < g.n_points(); ++i)
        overlap += std::conj(psi.values[0][i]) * psi.values[100][i];
    overlap *= g.dx();
    const double T = 100.0 * 1e-4;
    const double e_meas = -params.hbar * std::arg(overlap) / T;
    const double e_exact = box_energy(params, 2, L);
    REQUIRE(e_meas == Catch::Approx(e_exact).epsilon(1e-4));
}

TEST_CASE("box energy formula and eigenstate constructor") {
    PhysicalParams params;
    constexpr double pi = 3.14159265358979323846;
    REQUIRE(box_energy(params, 2, 2.0) == Catch::Approx(4.934802200544679).epsilon(1e-14));
    REQUIRE(box_energy(params, 1, 1.0) == Catch::Approx(pi * pi / 2.0).epsilon(1e-14));
    PhysicalParams scaled;
    scaled.hbar = 2.0;
    scaled.m = 4.0;
    REQUIRE(box_energy(scaled, 3, 1.5) ==
            Catch::Approx(4.0 * 9.0 * pi * pi / (2.0 * 4.0 * 1.5 * 1.5)).epsilon(1e-14));

    const Grid1D periodic = make_grid(0.0, 1.0, 64, 1e-3, 2, Boundary::periodic);
    REQUIRE_THROWS_AS(analytic_box_eigenstate(periodic, params, 1), ConfigError);
    const Grid1D walls = make_grid(0.0, 1.0, 64, 1e-3, 2, Boundary::fixed_zero);
    REQUIRE_THROWS_AS(analytic_box_eigenstate(walls, params, 0), ConfigError);
    const ComplexWaveField f = analytic_box_eigenstate(walls, params, 1);
    REQUIRE(std::abs(f.values[0].front()) == 0.0);
    REQUIRE(std::abs(f.values[0].back()) < 1e-12);
    REQUIRE(f.norm_history[0] == Catch::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("harmonic potential keeps a displaced packet oscillating") {
    // V = x^2 / 2 with m = hbar = 1: a coherent packet displaced by d swings
    // to -d after half a period (pi).  This exercises the potential path of
    // the stepper, not just free evolution.
    PhysicalParams params;
    const Grid1D g = make_grid(-10.0, 10.0, 512, 1e-3, 2, Boundary::periodic);
    const double d = 1.0;

    SchrodingerProblem prob;
    prob.grid = g;
    prob.params = params;
    prob.V.resize(g.n_points());
    for (std::size_t i = 0; i < g.n_points(); ++i)
        prob.V[i] = 0.5 * g.x(i) * g.x(i);
    prob.psi0.resize(g.n_points());
    constexpr double pi = 3.14159265358979323846;
    for (std::size_t i = 0; i < g.n_points(); ++i) {
        const double x = g.x(i) - d;
        prob.psi0[i] = std::pow(pi, -0.25) * std::exp(-0.5 * x * x);
    }
    const double n = slice_norm(prob.psi0, g);
    const double s = 1.0 / std::sqrt(n);
    for (Complex& z : prob.psi0) z *= s;

    CrankNicolsonStepper stepper(prob);
    const std::size_t half_period = static_cast<std::size_t>(std::llround(pi / 1e-3));
    for (std::size_t k = 0; k < half_period; ++k) stepper.step();
    double centroid = 0.0;
    for (std::size_t i = 0; i < g.n_points(); ++i)
        centroid += g.x(i) * std::norm(stepper.psi()[i]);
    centroid *= g.dx();
    REQUIRE(centroid == Catch::Approx(-d).margin(5e-3));
    REQUIRE(stepper.norm() == Catch::Approx(1.0).margin(1e-9));
}
