#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "smech/field.hpp"
#include "smech/grid.hpp"
#include "smech/schrodinger.hpp"

using namespace smech;

namespace {

constexpr double pi = 3.14159265358979323846;

ComplexWaveField plane_wave_field(const Grid1D& g, double k, double omega,
                                  std::size_t nt, double dt, double sign) {
    ComplexWaveField f;
    f.grid = g;
    f.t0 = 0.0;
    f.dt_slice = dt;
    f.values.assign(nt, ComplexSlice(g.n_points()));
    for (std::size_t j = 0; j < nt; ++j) {
        const double t = dt * static_cast<double>(j);
        for (std::size_t i = 0; i < g.n_points(); ++i) {
            const double th = sign * (k * g.x(i) - omega * t);
            f.values[j][i] = Complex(std::cos(th), std::sin(th));
        }
    }
    for (const auto& s : f.values) f.norm_history.push_back(slice_norm(s, f.grid));
    return f;
}

} // namespace

TEST_CASE("slice_norm and normalize") {
    const Grid1D g = make_grid(0.0, 2.0, 32, 1e-3, 2, Boundary::periodic);
    ComplexSlice v(g.n_points(), Complex(3.0, 4.0));  // |z|^2 = 25 everywhere
    REQUIRE(slice_norm(v, g) == Catch::Approx(25.0 * 2.0).margin(1e-12));

    ComplexWaveField f;
    f.grid = g;
    f.dt_slice = 1e-3;
    f.values = {v, v};
    normalize(f);
    REQUIRE(slice_norm(f.values[0], g) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(f.norm_history.size() == 2);
    REQUIRE(f.norm_history[1] == Catch::Approx(1.0).margin(1e-12));

    ComplexWaveField null_field;
    null_field.grid = g;
    null_field.values = {ComplexSlice(g.n_points(), Complex(0.0, 0.0))};
    REQUIRE_THROWS_AS(normalize(null_field), NumericalError);
    ComplexWaveField empty;
    REQUIRE_THROWS_AS(normalize(empty), ConfigError);
}

TEST_CASE("polar round trip on a plane wave, both sign conventions") {
    const Grid1D g = make_grid(0.0, 2.0 * pi, 64, 1e-3, 4, Boundary::periodic);
    const double k = 2.0, omega = 1.5, dt = 0.05;
    const ComplexWaveField f = plane_wave_field(g, k, omega, 4, dt, +1.0);

    // Nonrelativistic convention: psi = R exp(+i S / hbar) so S = hbar(kx - wt).
    const PolarField p = polar_decompose(f, SignConvention::nonrelativistic, 1.0);
    REQUIRE(p.r_max == Catch::Approx(1.0).margin(1e-12));
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i = 0; i < g.n_points(); ++i) {
            REQUIRE(p.node_mask[j][i] == 0);
            REQUIRE(p.R[j][i] == Catch::Approx(1.0).margin(1e-12));
        }
    // Unwrapped S differs from k x - w t by one global constant per field.
    const double off = p.S[0][0] - k * g.x(0);
    for (std::size_t j = 0; j < 4; ++j) {
        const double t = dt * static_cast<double>(j);
        for (std::size_t i = 0; i < g.n_points(); ++i)
            REQUIRE(p.S[j][i] - (k * g.x(i) - omega * t) ==
                    Catch::Approx(off).margin(1e-10));
    }

    // Relativistic convention flips the sign of S: same field decomposed as
    // psi = R exp(-i S / hbar).
    const PolarField pr = polar_decompose(f, SignConvention::relativistic, 1.0);
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i = 0; i < g.n_points(); ++i)
            REQUIRE(pr.S[j][i] == Catch::Approx(-p.S[j][i]).margin(1e-10));

    // Reconstruction inverts the decomposition sample for sample.
    const ComplexWaveField back = reconstruct(p);
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i = 0; i < g.n_points(); ++i) {
            REQUIRE(back.values[j][i].real() ==
                    Catch::Approx(f.values[j][i].real()).margin(1e-12));
            REQUIRE(back.values[j][i].imag() ==
                    Catch::Approx(f.values[j][i].imag()).margin(1e-12));
        }
}

TEST_CASE("hbar scales the action linearly and must be positive") {
    const Grid1D g = make_grid(0.0, 2.0 * pi, 64, 1e-3, 2, Boundary::periodic);
    const ComplexWaveField f = plane_wave_field(g, 1.0, 0.5, 2, 0.05, +1.0);
    const PolarField p1 = polar_decompose(f, SignConvention::nonrelativistic, 1.0);
    const PolarField p3 = polar_decompose(f, SignConvention::nonrelativistic, 3.0);
    for (std::size_t i = 0; i < g.n_points(); ++i)
        REQUIRE(p3.S[0][i] == Catch::Approx(3.0 * p1.S[0][i]).margin(1e-10));
    REQUIRE_THROWS_AS(polar_decompose(f, SignConvention::nonrelativistic, 0.0),
                      ConfigError);
    REQUIRE_THROWS_AS(polar_decompose(f, SignConvention::nonrelativistic, -1.0),
                      ConfigError);
}

TEST_CASE("node mask flags small amplitudes and interpolates the phase across") {
    const Grid1D g = make_grid(0.0, 1.0, 64, 1e-3, 2, Boundary::fixed_zero);
    ComplexWaveField f;
    f.grid = g;
    f.dt_slice = 1e-3;
    ComplexSlice row(g.n_points());
    // Linear phase 2x with a near-node dip in the amplitude mid-domain.
    for (std::size_t i = 0; i < row.size(); ++i) {
        const double x = g.x(i);
        const double r = (i >= 30 && i <= 34) ? 1e-9 : 1.0;
        row[i] = Complex(r * std::cos(2.0 * x), r * std::sin(2.0 * x));
    }
    f.values = {row};
    const PolarField p = polar_decompose(f, SignConvention::nonrelativistic, 1.0, 1e-6);
    for (std::size_t i = 0; i < row.size(); ++i)
        REQUIRE(static_cast<bool>(p.node_mask[0][i]) == (i >= 30 && i <= 34));
    // Interpolated phase across the masked run stays on the 2x line because
    // the flanking samples do.
    for (std::size_t i = 28; i <= 36; ++i)
        REQUIRE(p.S[0][i] == Catch::Approx(2.0 * g.x(i)).margin(1e-8));

    // A wider threshold flags more of the field.
    const MaskHistory wide = widen_mask(p, 0.5);
    std::size_t flagged = 0;
    for (char c : wide[0]) flagged += c != 0;
    REQUIRE(flagged >= 5);
    const MaskHistory narrow = widen_mask(p, 1e-12);
    for (char c : narrow[0]) REQUIRE(c == 0);
}

TEST_CASE("aliased slice spacing is rejected") {
    // A uniform phase advance aliases into its principal value and cannot be
    // detected from samples; the guard catches a phase *rate* that varies in
    // x enough that some column still jumps by pi*hbar after alignment.
    const Grid1D g = make_grid(0.0, 1.0, 64, 1e-3, 3, Boundary::periodic);
    auto rate_field = [&](double peak_rate) {
        ComplexWaveField f;
        f.grid = g;
        f.dt_slice = 1.0;
        f.values.assign(3, ComplexSlice(g.n_points()));
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t i = 0; i < g.n_points(); ++i) {
                const double omega = peak_rate * g.x(i);
                const double th = omega * static_cast<double>(j);
                f.values[j][i] = Complex(std::cos(th), std::sin(th));
            }
        return f;
    };
    const ComplexWaveField ok = rate_field(0.9 * pi);
    REQUIRE_NOTHROW(polar_decompose(ok, SignConvention::nonrelativistic, 1.0));
    const ComplexWaveField bad = rate_field(1.2 * pi);
    REQUIRE_THROWS_WITH(polar_decompose(bad, SignConvention::nonrelativistic, 1.0),
                        Catch::Matchers::ContainsSubstring("phase advance per stored slice"));
}

TEST_CASE("free Gaussian matches a frozen sample and splits into smooth R, S") {
    PhysicalParams params;
    // Grid chosen so that x = 0.25 and t = 0.3 land exactly on samples; the
    // slice spacing must resolve the fast tail phase of the spreading packet.
    const Grid1D g = make_grid(-8.0, 8.0, 256, 0.003, 101, Boundary::periodic);
    const ComplexWaveField f = analytic_free_gaussian(g, params, -1.0, 0.5, 1.0);
    const std::size_t ix = 132;  // x = -8 + 132 * (16/256) = 0.25
    REQUIRE(g.x(ix) == Catch::Approx(0.25).margin(1e-12));
    const Complex z = f.values[100][ix];  // t = 100 * 0.003 = 0.3
    REQUIRE(z.real() == Catch::Approx(0.14319952630667426).epsilon(1e-12));
    REQUIRE(z.imag() == Catch::Approx(0.40118617651182781).epsilon(1e-12));
    for (double n : f.norm_history) REQUIRE(n == Catch::Approx(1.0).margin(1e-6));

    const PolarField pf = polar_decompose(f, SignConvention::nonrelativistic, 1.0);
    // R equals |psi| by construction; check one arbitrary sample.
    REQUIRE(pf.R[1][100] == Catch::Approx(std::abs(f.values[1][100])).margin(1e-14));
    // S reproduces the field phase modulo the global unwrap constant.
    const Complex w = f.values[1][100];
    const double raw = std::atan2(w.imag(), w.real());
    const double diff = pf.S[1][100] - raw;
    REQUIRE(std::fabs(diff / (2.0 * pi) - std::round(diff / (2.0 * pi))) < 1e-9);
}
