#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "smech/config.hpp"
#include "smech/io.hpp"
#include "smech/scenarios.hpp"

using namespace smech;

namespace {

namespace fs = std::filesystem;

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

ScenarioConfig config_from_text(const std::string& text) {
    return scenario_config_from(parse_config_text(text));
}

} // namespace

TEST_CASE("io primitives: checksums, hex formatting, 17-digit round trip") {
    REQUIRE(fnv1a64(std::string{}) == 0xcbf29ce484222325ull);
    REQUIRE(fnv1a64(std::string{"abc"}) == 0xe71fa2190541574bull);
    REQUIRE(fnv1a64(std::string{"a = 1\n"}) == 0x58ac462f1a79636eull);
    REQUIRE(hex64(0xabcull) == "0000000000000abc");

    for (double v : {0.1, -1.0 / 3.0, 1e-300, 3.141592653589793, 0.0}) {
        const std::string s = format_g17(v);
        REQUIRE(std::strtod(s.c_str(), nullptr) == v);
    }

    REQUIRE_THROWS_AS(parse_convention("newtonian"), ConfigError);
    REQUIRE_THROWS_AS(parse_boundary("absorbing"), ConfigError);
    REQUIRE_THROWS_AS(parse_branch("ghost"), ConfigError);
    REQUIRE_THROWS_AS(read_text_file("/nonexistent/smech/file"), ConfigError);
}

TEST_CASE("heat stepping tracks the spreading kernel and enforces stability") {
    PhysicalParams params;
    const Grid1D probe = make_grid(0.0, 1.0, 16, 1e-3, 2, Boundary::periodic);
    const Slice ref = analytic_heat_gaussian(probe, 0.02);
    REQUIRE(ref[1] == Catch::Approx(2.1969564473386121).margin(1e-14));  // x = 0.1
    REQUIRE_THROWS_AS(analytic_heat_gaussian(probe, 0.0), ConfigError);

    const HeatRun run = run_heat_level(params, -4.0, 4.0, 1024, 0.05, 0.05, 0.0025, 80);
    REQUIRE(run.kernel_linf < 1e-4);
    REQUIRE(run.first_law.residual_max < 1e-12);
    REQUIRE(run.second_law.residual_l2 < 1e-2);

    // Slice spacing must divide the duration.
    REQUIRE_THROWS_AS(run_heat_level(params, -4.0, 4.0, 1024, 0.05, 0.05, 0.003, 100),
                      ConfigError);

    // Forward Euler blows past D dt / dx^2 = 1/2.
    Grid1D coarse = make_grid(-4.0, 4.0, 64, 0.1, 3, Boundary::periodic);
    HeatProblem bad{coarse, params, analytic_heat_gaussian(coarse, 0.05)};
    REQUIRE_THROWS_AS(solve_heat(bad), ConfigError);

    HeatProblem neg{coarse, params, Slice(coarse.n_points(), -1.0)};
    REQUIRE_THROWS_AS(solve_heat(neg), ConfigError);

    const std::vector<ResidualEntry> laws =
        fick_study(default_scenario_config(ScenarioKind::fick_diffusion), 3);
    REQUIRE(laws.size() == 2);
    REQUIRE(laws[0].convergence_order.has_value());
    REQUIRE(*laws[0].convergence_order > 1.5);
    REQUIRE(laws[1].residual_max < 1e-10);

    ScenarioConfig odd = default_scenario_config(ScenarioKind::fick_diffusion);
    odd.n_x = 4098;  // not divisible across three refinement levels
    REQUIRE_THROWS_AS(fick_study(odd, 3), ConfigError);
}

TEST_CASE("standing-wave well: stencil velocity matches the closed forms") {
    PhysicalParams params;
    const Grid1D g = make_grid(0.0, 1.0, 512, 1e-3, 2, Boundary::fixed_zero);
    const BoxProfile prof = box_osmotic_profile(2, 1.0, params, g);
    constexpr double pi = 3.14159265358979323846;
    REQUIRE(prof.v_char == Catch::Approx(params.hbar * 2.0 * pi / params.m));
    REQUIRE(prof.mask_fraction > 0.0);
    REQUIRE(prof.mask_fraction < 0.3);
    double dev = 0.0;
    for (std::size_t i = 0; i < prof.P.size(); ++i) {
        if (prof.mask[i]) continue;
        dev = std::max(dev, std::fabs(prof.u_stencil[i] - prof.u_formula[i]));
        REQUIRE(prof.u_analytic[i] == Catch::Approx(prof.u_formula[i]).margin(1e-10));
        REQUIRE(prof.u_D[i] == 0.0);
    }
    REQUIRE(dev < 1e-3 * prof.v_char);

    const Grid1D off = make_grid(0.0, 2.0, 512, 1e-3, 2, Boundary::fixed_zero);
    REQUIRE_THROWS_AS(box_osmotic_profile(1, 1.0, params, off), ConfigError);
    REQUIRE_THROWS_AS(box_osmotic_profile(0, 1.0, params, g), ConfigError);
    REQUIRE_THROWS_AS(box_osmotic_profile(1, -1.0, params, g), ConfigError);
    REQUIRE_THROWS_AS(box_osmotic_profile(1, 1.0, params, g, 1.5), ConfigError);
}

TEST_CASE("sloped well: proportional width locks the two velocity routes together") {
    PhysicalParams params;
    const Grid1D g = make_grid(90.0, 110.0, 1024, 1e-3, 2, Boundary::fixed_zero);
    const double x0 = 100.0;
    const double L0 = 2.0 * x0;  // n pi x / L(x) stays at pi/2
    WallProfile wall;
    wall.L.resize(g.n_points());
    wall.GL.assign(g.n_points(), L0 / x0);
    for (std::size_t i = 0; i < g.n_points(); ++i) wall.L[i] = L0 * g.x(i) / x0;
    const WallFields wf = moving_wall_fields(1, wall, 1.0, params, g);
    REQUIRE(wf.u_vs_uD_max_rel < 1e-12);
    REQUIRE(wf.subluminal);
    REQUIRE(wf.u_abs_max > 0.0);
    REQUIRE(wf.u_abs_max < params.c);

    REQUIRE_THROWS_AS(moving_wall_fields(1, wall, 0.0, params, g), ConfigError);
    WallProfile shrug;
    shrug.L.assign(4, 1.0);
    REQUIRE_THROWS_AS(moving_wall_fields(1, shrug, 1.0, params, g), ConfigError);
}

TEST_CASE("a flat width run through the sloped-well path reproduces the flat well bitwise") {
    PhysicalParams params;
    const Grid1D g = make_grid(0.0, 1.0, 64, 1e-3, 2, Boundary::fixed_zero);
    WallProfile wall;
    wall.L.assign(g.n_points(), 1.0);  // GL left empty: stencil slope of a constant is 0
    const WallFields wf = moving_wall_fields(2, wall, params.m, params, g);
    const BoxProfile flat = box_osmotic_profile(2, 1.0, params, g);
    for (std::size_t i = 0; i < flat.P.size(); ++i) {
        REQUIRE(wf.profile.P[i] == flat.P[i]);
        REQUIRE(wf.profile.grad_ratio_analytic[i] == flat.grad_ratio_analytic[i]);
        REQUIRE(wf.profile.u_analytic[i] == flat.u_analytic[i]);
        REQUIRE(wf.profile.u_stencil[i] == flat.u_stencil[i]);
        REQUIRE(wf.profile.mask[i] == flat.mask[i]);
    }
}

TEST_CASE("scenario configs: defaults, overrides, and validation") {
    const ScenarioConfig fg = default_scenario_config(ScenarioKind::free_gaussian);
    REQUIRE(fg.params.alpha == 1.0);
    REQUIRE(fg.ensemble);
    REQUIRE(fg.n_x == 512);
    const ScenarioConfig box = default_scenario_config(ScenarioKind::box_eigenstate);
    REQUIRE(box.boundary == Boundary::fixed_zero);
    REQUIRE(box.dt == 1e-4);
    const ScenarioConfig vac = default_scenario_config(ScenarioKind::vacuum_energy);
    REQUIRE(vac.levels == 4);
    REQUIRE(vac.n_x == 64);
    const ScenarioConfig fick = default_scenario_config(ScenarioKind::fick_diffusion);
    REQUIRE(fick.n_x == 4096);
    REQUIRE(fick.levels == 3);

    const ScenarioConfig c = config_from_text(
        "scenario = kg-plane-wave\nn_x = 128\ndt = 0.001\nboundary = periodic\n"
        "equations = rel_continuity, orthogonality\nseed = 42\n");
    REQUIRE(c.kind == ScenarioKind::kg_plane_wave);
    REQUIRE(c.n_x == 128);
    REQUIRE(c.dt == 0.001);
    REQUIRE(c.seed == 42);
    REQUIRE(c.equations ==
            std::vector<EquationId>{EquationId::rel_continuity, EquationId::orthogonality});

    REQUIRE_THROWS_AS(config_from_text("n_x = 4\n"), ConfigError);             // no scenario
    REQUIRE_THROWS_AS(config_from_text("scenario = warp-drive\n"), ConfigError);
    REQUIRE_THROWS_AS(config_from_text("scenario = kg-packet\nequations = quintessence\n"),
                      ConfigError);
    REQUIRE_THROWS_AS(config_from_text("scenario = decaying-mass\nlambda = -1\n"), ConfigError);
    REQUIRE_THROWS_AS(config_from_text("scenario = decaying-mass\nv_d = 0\n"), ConfigError);
    REQUIRE_THROWS_AS(config_from_text("scenario = vacuum-energy\nevac_margin = -0.1\n"),
                      ConfigError);
    REQUIRE_THROWS_AS(config_from_text("scenario = free-gaussian\nmass = 0\n"), ConfigError);
}

TEST_CASE("refinement halves dx and the slice spacing while fixing the window") {
    const ScenarioConfig kg = default_scenario_config(ScenarioKind::kg_plane_wave);
    const ScenarioConfig kg1 = refined_scenario(kg, 1);
    REQUIRE(kg1.n_x == 2 * kg.n_x);
    REQUIRE(kg1.dt == kg.dt / 2.0);
    REQUIRE(kg1.slices == 2 * (kg.slices - 1) + 1);

    const ScenarioConfig fg = default_scenario_config(ScenarioKind::free_gaussian);
    const ScenarioConfig fg2 = refined_scenario(fg, 2);
    REQUIRE(fg2.n_x == 4 * fg.n_x);
    REQUIRE(fg2.steps == 4 * fg.steps);
    REQUIRE(fg2.store_every == fg.store_every);
}

TEST_CASE("field construction: conventions, vacuum rate, and static scenarios") {
    const ScenarioConfig kg = default_scenario_config(ScenarioKind::kg_plane_wave);
    const ScenarioField f = build_scenario_field(kg);
    REQUIRE(f.convention == SignConvention::relativistic);
    REQUIRE(f.minimal == 0.0);  // positive-frequency wave: no negative phase rate
    REQUIRE(f.e_vac == 0.0);    // only the vacuum scenario adds the margin

    const ScenarioConfig vac = default_scenario_config(ScenarioKind::vacuum_energy);
    const ScenarioField fv = build_scenario_field(vac);
    REQUIRE(fv.e_vac == fv.minimal + vac.evac_margin);

    const ScenarioConfig dm = default_scenario_config(ScenarioKind::decaying_mass);
    const ScenarioField fd = build_scenario_field(dm);
    REQUIRE(fd.m_field.size() == fd.wave.grid.n_points());
    REQUIRE(fd.m_field.front() > fd.m_field.back());  // decays along +x

    for (ScenarioKind k : {ScenarioKind::moving_wall_box, ScenarioKind::fick_diffusion}) {
        REQUIRE(scenario_is_static(k));
        REQUIRE_THROWS_AS(build_scenario_field(default_scenario_config(k)), ConfigError);
    }
}

TEST_CASE("equation study: exact statements pass the strict gate on a plane wave") {
    const ScenarioConfig kg = default_scenario_config(ScenarioKind::kg_plane_wave);
    const std::vector<EquationId> ids = default_equation_set(SignConvention::relativistic);
    const std::vector<ResidualEntry> entries = scenario_equation_study(kg, ids, 3);

    std::size_t branched = 0;
    for (const ResidualEntry& e : entries)
        if (e.branch != Branch::none) ++branched;
    REQUIRE(branched == 4);  // two branched ids, two branches each
    REQUIRE(entries.size() == ids.size() + 2);

    REQUIRE(strict_failures(entries, false).empty());
    for (const ResidualEntry& e : entries) {
        REQUIRE(e.levels.size() == 3);
        if (residual_class(e.id) == ResidualClass::exact)
            REQUIRE((e.at_noise_floor ||
                     (e.convergence_order && *e.convergence_order >= 1.8)));
    }
}

TEST_CASE("equation study: a regime statement on a packet reports its distance") {
    ScenarioConfig pk = default_scenario_config(ScenarioKind::kg_packet);
    pk.n_x = 64;
    const std::vector<ResidualEntry> entries =
        scenario_equation_study(pk, {EquationId::rel_current_evolution}, 3);
    REQUIRE(entries.size() == 2);
    bool noted = false;
    for (const ResidualEntry& e : entries) {
        const bool converged =
            e.at_noise_floor || (e.convergence_order && *e.convergence_order >= 1.8);
        if (!converged) {
            REQUIRE(e.note.find("limiting case") != std::string::npos);
            noted = true;
        }
    }
    REQUIRE(noted);
    // Regime statements gate only an explicit selection.
    REQUIRE(strict_failures(entries, false).empty());
    REQUIRE_FALSE(strict_failures(entries, true).empty());
}

TEST_CASE("strict gate: any passing branch clears an id") {
    auto entry = [](EquationId id, Branch b, double order, bool floor) {
        ResidualEntry e;
        e.id = id;
        e.branch = b;
        if (order > 0.0) e.convergence_order = order;
        e.at_noise_floor = floor;
        return e;
    };
    const std::vector<ResidualEntry> entries = {
        entry(EquationId::rel_continuity, Branch::none, 2.1, false),
        entry(EquationId::rel_current_evolution, Branch::particle, 0.4, false),
        entry(EquationId::rel_current_evolution, Branch::antiparticle, 0.0, true),
        entry(EquationId::rel_hamilton_jacobi, Branch::none, 1.2, false),
    };
    const std::vector<EquationId> failed = strict_failures(entries, true);
    REQUIRE(failed == std::vector<EquationId>{EquationId::rel_hamilton_jacobi});
}

TEST_CASE("manufactured decaying-mass profile converges at stencil order") {
    PhysicalParams params;
    const ResidualEntry e = decaying_mass_convergence(params, 0.1, 1.0, 128, 3);
    REQUIRE(e.convergence_order.has_value());
    REQUIRE(*e.convergence_order > 1.7);
    REQUIRE(*e.convergence_order < 2.3);
    REQUIRE(e.note.find("manufactured") != std::string::npos);
    REQUIRE_THROWS_AS(decaying_mass_convergence(params, 0.1, 1.0, 128, 2), ConfigError);
}

TEST_CASE("a scenario run leaves a checksummed, reproducible directory behind") {
    setenv("SOURCE_DATE_EPOCH", "0", 1);
    TmpDir dir("smech_test_run_a");
    TmpDir dir_b("smech_test_run_b");
    const ScenarioConfig cfg = config_from_text("scenario = kg-plane-wave\n");
    const ScenarioResult res = run_scenario(cfg, dir.str());

    const std::vector<std::string> expected = {"fields.csv",    "fields.json",
                                               "velocities.csv", "currents.csv",
                                               "residuals.json", "summary.json",
                                               "manifest.json"};
    REQUIRE(res.files == expected);
    for (const std::string& name : res.files)
        REQUIRE(fs::exists(dir.path / name));
    REQUIRE(res.summary.count("minimal_evac") == 1);
    REQUIRE(res.summary.count("q_ratio_max") == 1);

    // Manifest attests every other artifact byte-for-byte.
    const nlohmann::json manifest = read_manifest(dir.str());
    REQUIRE(manifest.at("created_at") == "1970-01-01T00:00:00Z");
    REQUIRE(manifest.at("config_fnv1a64") ==
            hex64(fnv1a64(serialize_config(cfg.raw))));
    REQUIRE(manifest.at("files").size() == expected.size() - 1);
    for (const auto& f : manifest.at("files")) {
        const std::string content =
            read_text_file(dir.str() + "/" + f.at("name").get<std::string>());
        REQUIRE(f.at("bytes").get<std::size_t>() == content.size());
        REQUIRE(f.at("fnv1a64").get<std::string>() == hex64(fnv1a64(content)));
    }

    // The stored field round-trips bit-exactly through its CSV.
    const FieldBundle bundle = read_field_bundle(dir.str() + "/fields.csv",
                                                 dir.str() + "/fields.json");
    const ScenarioField direct = build_scenario_field(cfg);
    REQUIRE(bundle.convention == SignConvention::relativistic);
    REQUIRE(bundle.field.values.size() == direct.wave.values.size());
    for (std::size_t j = 0; j < bundle.field.values.size(); ++j)
        for (std::size_t i = 0; i < bundle.field.values[j].size(); ++i)
            REQUIRE(bundle.field.values[j][i] == direct.wave.values[j][i]);

    // The report parses back and re-serializes identically.
    const std::string report_text = read_text_file(dir.str() + "/residuals.json");
    const ResidualReport parsed = parse_residual_report(report_text);
    REQUIRE_FALSE(parsed.entries.empty());
    REQUIRE(parsed.find(EquationId::rel_continuity) != nullptr);
    REQUIRE(residual_report_json(parsed) == report_text);

    // A rerun with the same config and epoch is byte-identical.
    run_scenario(cfg, dir_b.str());
    for (const std::string& name : expected)
        REQUIRE(read_text_file(dir.str() + "/" + name) ==
                read_text_file(dir_b.str() + "/" + name));
}

TEST_CASE("scenario failures carry the scenario name as context") {
    TmpDir dir("smech_test_run_fail");
    const ScenarioConfig cfg = config_from_text("scenario = kg-plane-wave\ndt = 1.0\n");
    try {
        run_scenario(cfg, dir.str());
        FAIL("expected a configuration error");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).rfind("scenario 'kg-plane-wave': ", 0) == 0);
    }
}
