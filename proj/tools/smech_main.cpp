// Command-line entry point: solve / check / ensemble / plotdata.
//
// Exit codes are a stable contract: 0 success, 2 configuration or usage
// error, 3 numerical failure, 4 strict-mode residual failure.  Every flag
// can also be set through the environment with the SMECH_ prefix
// (SMECH_CONFIG, SMECH_OUT, SMECH_SEED, SMECH_EQUATIONS, SMECH_STRICT,
// SMECH_LEVELS, SMECH_QUANTITY).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "smech/config.hpp"
#include "smech/errors.hpp"
#include "smech/identities.hpp"
#include "smech/io.hpp"
#include "smech/scenarios.hpp"
#include "smech/stochastic.hpp"
#include "smech/version.hpp"

namespace {

using namespace smech;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Assemble the effective config: file (optional), scenario-name override,
/// then --set pairs, then --seed.
Config assemble_config(const std::string& config_path, const std::string& scenario,
                       const std::vector<std::string>& sets, bool seed_given,
                       std::uint64_t seed) {
    Config raw;
    if (!config_path.empty()) raw = load_config_file(config_path);
    if (!scenario.empty()) raw.set("scenario", scenario);
    for (const std::string& kv : sets) apply_override(raw, kv);
    if (seed_given) raw.set("seed", std::to_string(seed));
    return raw;
}

bool is_schrodinger_scenario(ScenarioKind k) {
    return k == ScenarioKind::free_gaussian || k == ScenarioKind::box_eigenstate;
}

bool is_kg_scenario(ScenarioKind k) {
    return k == ScenarioKind::kg_plane_wave || k == ScenarioKind::kg_packet ||
           k == ScenarioKind::vacuum_energy || k == ScenarioKind::decaying_mass;
}

void write_or_print(const std::string& out_path, const std::string& text) {
    if (out_path.empty()) {
        std::cout << text;
        return;
    }
    const std::filesystem::path parent = std::filesystem::path(out_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    write_text_file(out_path, text);
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

int cmd_solve(const std::string& kind, const Config& raw, const std::string& out_dir) {
    const ScenarioConfig cfg = scenario_config_from(raw);
    if (kind == "schrodinger" && !is_schrodinger_scenario(cfg.kind))
        throw ConfigError(std::string("scenario '") + scenario_name(cfg.kind) +
                          "' is not a schrodinger scenario");
    if (kind == "kg" && !is_kg_scenario(cfg.kind))
        throw ConfigError(std::string("scenario '") + scenario_name(cfg.kind) +
                          "' is not a kg scenario");

    const ScenarioField field = build_scenario_field(cfg);
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir + "/fields.csv", field_csv_text(field.wave));
    write_text_file(out_dir + "/fields.json",
                    field_sidecar_json(field.wave, cfg.params, field.convention));

    ManifestInfo info;
    info.config_text = serialize_config(raw);
    info.seed = cfg.seed;
    info.files = {"fields.csv", "fields.json"};
    write_manifest(out_dir, info);
    std::cout << "wrote " << out_dir << " (" << field.wave.n_slices() << " slices, n_x = "
              << field.wave.grid.n_x << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

/// Equation selection for a check run: explicit list, else the default set
/// for the field convention.
std::vector<EquationId> check_selection(const ScenarioConfig& cfg, SignConvention conv) {
    if (!cfg.equations.empty()) return cfg.equations;
    return default_equation_set(conv);
}

int check_scenario(const ScenarioConfig& cfg, bool strict, std::size_t levels,
                   const std::string& out_path) {
    ResidualReport report;
    std::vector<EquationId> failed;

    if (cfg.kind == ScenarioKind::moving_wall_box) {
        if (strict)
            throw ConfigError("scenario 'moving-wall-box' is a static profile with no "
                              "dynamical equations to check");
        const double L0 = 2.0 * static_cast<double>(cfg.mode_n) * cfg.wall_x0;
        Grid1D g = make_grid(cfg.x_min, cfg.x_max, cfg.n_x, 1e-3, 2, Boundary::fixed_zero);
        WallProfile wall;
        wall.L.resize(g.n_points());
        wall.GL.assign(g.n_points(), L0 / cfg.wall_x0);
        for (std::size_t i = 0; i < g.n_points(); ++i) wall.L[i] = L0 * g.x(i) / cfg.wall_x0;
        const WallFields wf =
            moving_wall_fields(cfg.mode_n, wall, cfg.m0, cfg.params, g, cfg.sin_threshold);
        nlohmann::json j;
        j["version"] = kVersion;
        j["scenario"] = scenario_name(cfg.kind);
        j["u_vs_uD_max_rel"] = wf.u_vs_uD_max_rel;
        j["u_abs_max"] = wf.u_abs_max;
        j["subluminal"] = wf.subluminal;
        write_or_print(out_path, j.dump(2) + "\n");
        return 0;
    }

    if (cfg.kind == ScenarioKind::fick_diffusion) {
        if (strict) {
            report.entries = fick_study(cfg, levels);
            failed = strict_failures(report.entries, !cfg.equations.empty());
        } else {
            const std::size_t store = 1280;
            const HeatRun run = run_heat_level(cfg.params, cfg.x_min, cfg.x_max, cfg.n_x,
                                               cfg.t_offset, cfg.duration,
                                               cfg.duration / 20.0, store);
            report.entries = {run.second_law, run.first_law};
        }
    } else {
        const ScenarioField probe = build_scenario_field(cfg);
        const std::vector<EquationId> ids = check_selection(cfg, probe.convention);
        if (strict) {
            report.entries = scenario_equation_study(cfg, ids, levels);
            failed = strict_failures(report.entries, !cfg.equations.empty());
        } else {
            for (const ResidualEval& ev : evaluate_equations(cfg, probe, ids))
                report.entries.push_back(ev.entry);
        }
    }

    write_or_print(out_path, residual_report_json(report));
    if (!failed.empty()) {
        std::string msg = "equations below order 1.8 under refinement:";
        for (EquationId id : failed) msg += std::string(" ") + to_string(id);
        for (const ResidualEntry& e : report.entries)
            if (!e.note.empty() &&
                std::find(failed.begin(), failed.end(), e.id) != failed.end()) {
                msg += "; " + e.note;
                break;
            }
        throw StrictCheckError(msg);
    }
    return 0;
}

int check_run_dir(const std::string& dir, const ScenarioConfig& overrides, bool strict,
                  const std::string& out_path) {
    if (strict)
        throw ConfigError("--strict needs a scenario target: stored samples cannot be "
                          "re-solved on refined grids");
    const FieldBundle b = read_field_bundle(dir + "/fields.csv", dir + "/fields.json");
    const PolarField polar = polar_decompose(b.field, b.convention, b.params.hbar);
    const std::vector<EquationId> ids = overrides.equations.empty()
                                            ? default_equation_set(b.convention)
                                            : overrides.equations;
    ResidualReport report;
    for (EquationId id : ids) {
        EvalOptions opt;
        if (equation_is_branched(id)) {
            for (Branch br : {Branch::particle, Branch::antiparticle}) {
                opt.branch = br;
                report.entries.push_back(evaluate_equation(id, polar, b.params, opt).entry);
            }
        } else {
            report.entries.push_back(evaluate_equation(id, polar, b.params, opt).entry);
        }
    }
    write_or_print(out_path, residual_report_json(report));
    return 0;
}

// ---------------------------------------------------------------------------
// ensemble
// ---------------------------------------------------------------------------

int cmd_ensemble(const Config& raw, const std::string& out_dir) {
    const ScenarioConfig cfg = scenario_config_from(raw);
    if (!is_schrodinger_scenario(cfg.kind))
        throw ConfigError(std::string("scenario '") + scenario_name(cfg.kind) +
                          "' has no walker-ensemble stage");
    const ScenarioField field = build_scenario_field(cfg);

    Grid1D eg = field.wave.grid;
    eg.n_t = cfg.steps + 1;  // ensemble stepping runs on the solver step, not stored slices
    SchrodingerProblem prob{eg, cfg.params, field.wave.values[0], {}};
    NelsonOptions nopt;
    nopt.n_walkers = cfg.n_walkers;
    nopt.seed = cfg.seed;
    nopt.record_every = cfg.store_every;
    nopt.n_track = cfg.n_track;
    nopt.n_threads = cfg.n_threads;
    const NelsonRun run = run_nelson(prob, nopt);

    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir + "/trajectories.csv",
                    trajectories_csv_text(run.tracked_ids, run.traj_times, run.trajectories));
    write_text_file(out_dir + "/ks.csv", ks_csv_text(run.ks_times, run.ks_values, run.n_walkers));

    ManifestInfo info;
    info.config_text = serialize_config(raw);
    info.seed = cfg.seed;
    info.files = {"trajectories.csv", "ks.csv"};
    write_manifest(out_dir, info);
    double ks_max = 0.0;
    for (double v : run.ks_values) ks_max = std::max(ks_max, v);
    std::cout << "wrote " << out_dir << " (" << run.n_walkers << " walkers, max KS = "
              << format_g17(ks_max) << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// plotdata
// ---------------------------------------------------------------------------

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t col(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ConfigError("column '" + name + "' not present");
    }
};

Table read_csv(const std::string& path) {
    const std::string text = read_text_file(path);
    Table t;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (t.header.empty())
            t.header = std::move(fields);
        else
            t.rows.push_back(std::move(fields));
    }
    if (t.header.empty()) throw ConfigError("empty table in '" + path + "'");
    return t;
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

/// Two-column series of one velocity-table quantity on the final stored
/// slice, masked samples omitted.
std::string slice_series(const Table& t, const std::string& qcol) {
    const std::size_t ct = t.col("t");
    const std::size_t cx = t.col("x");
    const std::size_t cq = t.col(qcol);
    const std::size_t cm = t.col("mask");
    if (t.rows.empty()) throw ConfigError("table has no rows");
    const std::string t_last = t.rows.back()[ct];
    std::size_t total = 0, masked = 0;
    std::ostringstream body;
    for (const auto& row : t.rows) {
        if (row[ct] != t_last) continue;
        ++total;
        if (row[cm] != "0") {
            ++masked;
            continue;
        }
        body << row[cx] << ' ' << row[cq] << '\n';
    }
    std::ostringstream out;
    out << "# columns: x " << qcol << "  (slice t = " << t_last << ")\n";
    out << "# mask_fraction = "
        << format_g17(total ? static_cast<double>(masked) / static_cast<double>(total) : 0.0)
        << '\n';
    out << body.str();
    return out.str();
}

/// Three-column heatmap (t, x, q) over the whole history.
std::string heatmap_series(const Table& t, const std::string& qcol) {
    const std::size_t ct = t.col("t");
    const std::size_t cx = t.col("x");
    const std::size_t cq = t.col(qcol);
    std::ostringstream out;
    out << "# columns: t x " << qcol << '\n';
    std::string prev_t;
    for (const auto& row : t.rows) {
        if (!prev_t.empty() && row[ct] != prev_t) out << '\n';  // gnuplot block break
        prev_t = row[ct];
        out << row[ct] << ' ' << row[cx] << ' ' << row[cq] << '\n';
    }
    return out.str();
}

/// Profile-table series (single stored profile, no time axis).
std::string profile_series(const Table& t, const std::string& qcol) {
    const std::size_t cx = t.col("x");
    const std::size_t cq = t.col(qcol);
    const std::size_t cm = t.col("mask");
    std::size_t masked = 0;
    std::ostringstream body;
    for (const auto& row : t.rows) {
        if (row[cm] != "0") {
            ++masked;
            continue;
        }
        body << row[cx] << ' ' << row[cq] << '\n';
    }
    std::ostringstream out;
    out << "# columns: x " << qcol << '\n';
    out << "# mask_fraction = "
        << format_g17(t.rows.empty()
                          ? 0.0
                          : static_cast<double>(masked) / static_cast<double>(t.rows.size()))
        << '\n';
    out << body.str();
    return out.str();
}

int cmd_plotdata(const std::string& run_dir, const std::string& quantity,
                 std::string out_dir) {
    read_manifest(run_dir);  // run directories are attested by their manifest
    if (out_dir.empty()) out_dir = run_dir + "/plot";

    static const std::set<std::string> vel_cols = {"v", "u", "b", "uD", "uM", "Q", "M"};
    std::string text;
    if (quantity == "ks") {
        if (!file_exists(run_dir + "/ks.csv"))
            throw ConfigError("run has no ensemble distance series (ks.csv)");
        const Table t = read_csv(run_dir + "/ks.csv");
        const std::size_t ct = t.col("t"), ck = t.col("ks");
        std::ostringstream out;
        out << "# columns: t ks\n";
        for (const auto& row : t.rows) out << row[ct] << ' ' << row[ck] << '\n';
        text = out.str();
    } else if (quantity == "residual-vs-dx") {
        if (!file_exists(run_dir + "/residuals.json"))
            throw ConfigError("run has no residual report (residuals.json)");
        const ResidualReport report =
            parse_residual_report(read_text_file(run_dir + "/residuals.json"));
        std::ostringstream out;
        bool any = false;
        for (const ResidualEntry& e : report.entries) {
            if (e.levels.empty()) continue;
            if (any) out << "\n\n";  // gnuplot index separator
            any = true;
            out << "# equation: " << to_string(e.id);
            if (e.branch != Branch::none) out << " (" << branch_name(e.branch) << ")";
            out << '\n';
            if (e.convergence_order)
                out << "# fitted order: " << format_g17(*e.convergence_order) << '\n';
            else if (e.at_noise_floor)
                out << "# fitted order: n/a (residuals at stencil noise floor)\n";
            else
                out << "# fitted order: n/a\n";
            out << "# columns: dx l2\n";
            for (const auto& [dx, l2] : e.levels)
                out << format_g17(dx) << ' ' << format_g17(l2) << '\n';
        }
        if (!any)
            throw ConfigError("no convergence study in this run; re-run check with --strict "
                              "or a scenario with built-in refinement");
        text = out.str();
    } else if (quantity == "P") {
        if (file_exists(run_dir + "/velocities.csv"))
            text = heatmap_series(read_csv(run_dir + "/velocities.csv"), "P");
        else if (file_exists(run_dir + "/density.csv"))
            text = heatmap_series(read_csv(run_dir + "/density.csv"), "P");
        else if (file_exists(run_dir + "/profile.csv"))
            text = profile_series(read_csv(run_dir + "/profile.csv"), "P");
        else
            throw ConfigError("run has no density data");
    } else if (vel_cols.count(quantity)) {
        if (file_exists(run_dir + "/velocities.csv")) {
            text = slice_series(read_csv(run_dir + "/velocities.csv"), quantity);
        } else if (file_exists(run_dir + "/profile.csv")) {
            static const std::map<std::string, std::string> profile_map = {
                {"u", "u_stencil"}, {"uD", "uD"}, {"M", "m"}};
            const auto it = profile_map.find(quantity);
            if (it == profile_map.end())
                throw ConfigError("quantity '" + quantity + "' not available in this run");
            text = profile_series(read_csv(run_dir + "/profile.csv"), it->second);
        } else {
            throw ConfigError("run has no velocity data");
        }
    } else {
        throw ConfigError("unknown quantity '" + quantity +
                          "' (expected P, v, u, b, uD, uM, Q, M, ks, residual-vs-dx)");
    }

    std::filesystem::create_directories(out_dir);
    const std::string path = out_dir + "/" + quantity + ".dat";
    write_text_file(path, text);
    std::cout << "wrote " << path << "\n";
    return 0;
}

} // namespace

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
    CLI::App app{"1-D stochastic-mechanics toolkit: wave-equation solvers, velocity-field "
                 "decomposition, residual checks, and walker ensembles"};
    app.require_subcommand(1);
    app.set_version_flag("--version", smech::kVersion);

    std::string config_path, out_path, target, kind, quantity;
    std::vector<std::string> sets;
    std::uint64_t seed = 0;
    bool strict = false;
    std::size_t levels = 3;

    auto* solve = app.add_subcommand("solve", "solve a wave equation and write field files");
    solve->add_option("kind", kind, "equation family")
        ->required()
        ->check(CLI::IsMember({"schrodinger", "kg"}));
    solve->add_option("--config", config_path, "scenario config file")
        ->envname("SMECH_CONFIG")
        ->required();
    auto* solve_out =
        solve->add_option("--out", out_path, "output directory")->envname("SMECH_OUT");
    solve_out->required();
    solve->add_option("--set", sets, "override a config key (key=value, repeatable)");
    auto* solve_seed = solve->add_option("--seed", seed, "seed override")->envname("SMECH_SEED");

    auto* runc = app.add_subcommand("run", "run a full scenario pipeline into a directory");
    runc->add_option("--config", config_path, "scenario config file")->envname("SMECH_CONFIG");
    runc->add_option("scenario", target, "scenario name (alternative to --config)");
    runc->add_option("--out", out_path, "output directory")->envname("SMECH_OUT")->required();
    runc->add_option("--set", sets, "override a config key (key=value, repeatable)");
    auto* run_seed = runc->add_option("--seed", seed, "seed override")->envname("SMECH_SEED");

    auto* check = app.add_subcommand("check", "evaluate equation residuals on a field");
    check->add_option("target", target, "scenario name or run directory");
    check->add_option("--config", config_path, "scenario config file")->envname("SMECH_CONFIG");
    check->add_option("--out", out_path, "report file (default: standard output)")
        ->envname("SMECH_OUT");
    std::string equations_csv;
    auto* eq_opt = check->add_option("--equations", equations_csv, "comma-separated equation ids")
                       ->envname("SMECH_EQUATIONS");
    check->add_flag("--strict", strict, "fail unless residuals converge under refinement")
        ->envname("SMECH_STRICT");
    check->add_option("--levels", levels, "refinement levels for --strict")
        ->envname("SMECH_LEVELS")
        ->check(CLI::Range(std::size_t{3}, std::size_t{8}));
    check->add_option("--set", sets, "override a config key (key=value, repeatable)");
    auto* check_seed = check->add_option("--seed", seed, "seed override")->envname("SMECH_SEED");

    auto* ens = app.add_subcommand("ensemble", "run a walker ensemble against a solved field");
    ens->add_option("--config", config_path, "scenario config file")
        ->envname("SMECH_CONFIG")
        ->required();
    ens->add_option("--out", out_path, "output directory")->envname("SMECH_OUT")->required();
    ens->add_option("--set", sets, "override a config key (key=value, repeatable)");
    auto* ens_seed = ens->add_option("--seed", seed, "seed override")->envname("SMECH_SEED");

    auto* plot = app.add_subcommand("plotdata", "emit plain-text plot data from a run directory");
    plot->add_option("rundir", target, "run directory with a manifest")->required();
    plot->add_option("--quantity", quantity,
                     "P, v, u, b, uD, uM, Q, M, ks, or residual-vs-dx")
        ->envname("SMECH_QUANTITY")
        ->required();
    plot->add_option("--out", out_path, "output directory (default: <rundir>/plot)")
        ->envname("SMECH_OUT");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (solve->parsed()) {
            const Config raw =
                assemble_config(config_path, "", sets, solve_seed->count() > 0, seed);
            return cmd_solve(kind, raw, out_path);
        }
        if (runc->parsed()) {
            if (config_path.empty() && target.empty())
                throw ConfigError("run needs a scenario name or --config");
            const Config raw =
                assemble_config(config_path, target, sets, run_seed->count() > 0, seed);
            const ScenarioResult res = run_scenario(scenario_config_from(raw), out_path);
            std::cout << "wrote " << res.dir << " (" << res.files.size() << " files)\n";
            return 0;
        }
        if (check->parsed()) {
            if (eq_opt->count() > 0) {
                // An explicitly empty selection is a usage error, distinct
                // from "no flag" which means the default set.
                std::ostringstream kv;
                kv << "equations=" << equations_csv;
                sets.push_back(kv.str());
                if (smech::detail::parse_equation_list(equations_csv).empty())
                    throw ConfigError("empty equation selection");
            }
            const bool is_dir = !target.empty() && file_exists(target + "/fields.csv");
            if (is_dir) {
                ScenarioConfig ov;
                if (eq_opt->count() > 0)
                    ov.equations = smech::detail::parse_equation_list(equations_csv);
                return check_run_dir(target, ov, strict, out_path);
            }
            const Config raw =
                assemble_config(config_path, target, sets, check_seed->count() > 0, seed);
            return check_scenario(scenario_config_from(raw), strict, levels, out_path);
        }
        if (ens->parsed()) {
            const Config raw =
                assemble_config(config_path, "", sets, ens_seed->count() > 0, seed);
            return cmd_ensemble(raw, out_path);
        }
        if (plot->parsed()) return cmd_plotdata(target, quantity, out_path);
        return 2;
    } catch (const smech::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const smech::StrictCheckError& e) {
        std::cerr << "strict check failed: " << e.what() << '\n';
        return 4;
    } catch (const smech::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 3;
    } catch (const smech::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}
