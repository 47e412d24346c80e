#pragma once

// Run-directory serialization: CSV writers for bulk arrays, JSON for
// reports and metadata, FNV-1a checksums, and the run manifest.  All
// numeric text uses 17 significant digits so every file round-trips
// bit-exactly; iteration orders are fixed so reruns are byte-identical.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "smech/errors.hpp"
#include "smech/field.hpp"
#include "smech/grid.hpp"
#include "smech/residual_entry.hpp"
#include "smech/version.hpp"

namespace smech {

inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 14695981039346656037ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ConfigError("short write on '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// ---------------------------------------------------------------------------
// Name <-> enum helpers
// ---------------------------------------------------------------------------

inline const char* convention_name(SignConvention c) {
    return c == SignConvention::nonrelativistic ? "nonrelativistic" : "relativistic";
}

inline SignConvention parse_convention(const std::string& s) {
    if (s == "nonrelativistic") return SignConvention::nonrelativistic;
    if (s == "relativistic") return SignConvention::relativistic;
    throw ConfigError("unknown sign convention '" + s + "'");
}

inline const char* boundary_name(Boundary b) {
    return b == Boundary::periodic ? "periodic" : "fixed_zero";
}

inline Boundary parse_boundary(const std::string& s) {
    if (s == "periodic") return Boundary::periodic;
    if (s == "fixed_zero") return Boundary::fixed_zero;
    throw ConfigError("unknown boundary '" + s + "'");
}

inline const char* umode_name(UMode u) {
    switch (u) {
        case UMode::spacelike: return "spacelike";
        case UMode::timelike: return "timelike";
        default: return "none";
    }
}

inline const char* branch_name(Branch b) {
    switch (b) {
        case Branch::particle: return "particle";
        case Branch::antiparticle: return "antiparticle";
        default: return "none";
    }
}

inline Branch parse_branch(const std::string& s) {
    if (s == "particle") return Branch::particle;
    if (s == "antiparticle") return Branch::antiparticle;
    if (s == "none") return Branch::none;
    throw ConfigError("unknown branch '" + s + "'");
}

inline UMode parse_umode(const std::string& s) {
    if (s == "spacelike") return UMode::spacelike;
    if (s == "timelike") return UMode::timelike;
    if (s == "none") return UMode::none;
    throw ConfigError("unknown u mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// Field CSV + JSON sidecar
// ---------------------------------------------------------------------------

/// CSV with header `t,x,re,im`, row-major in t then x.
inline std::string field_csv_text(const ComplexWaveField& f) {
    std::ostringstream out;
    out << "t,x,re,im\n";
    for (std::size_t j = 0; j < f.n_slices(); ++j) {
        const std::string t = format_g17(f.time(j));
        for (std::size_t i = 0; i < f.n_points(); ++i)
            out << t << ',' << format_g17(f.grid.x(i)) << ',' << format_g17(f.values[j][i].real())
                << ',' << format_g17(f.values[j][i].imag()) << '\n';
    }
    return out.str();
}

/// Sidecar carrying the grid, the physical parameters, and the sign
/// convention needed to decompose the samples.
inline std::string field_sidecar_json(const ComplexWaveField& f, const PhysicalParams& p,
                                      SignConvention conv) {
    nlohmann::json j;
    j["grid"]["x_min"] = f.grid.x_min;
    j["grid"]["x_max"] = f.grid.x_max;
    j["grid"]["n_x"] = f.grid.n_x;
    j["grid"]["n_t"] = f.grid.n_t;
    j["grid"]["dt"] = f.grid.dt;
    j["grid"]["boundary"] = boundary_name(f.grid.boundary);
    j["params"]["hbar"] = p.hbar;
    j["params"]["m"] = p.m;
    j["params"]["c"] = p.c;
    j["params"]["alpha"] = p.alpha;
    j["params"]["V0"] = p.V0;
    j["t0"] = f.t0;
    j["dt_slice"] = f.dt_slice;
    j["n_slices"] = f.n_slices();
    j["convention"] = convention_name(conv);
    j["version"] = kVersion;
    return j.dump(2) + "\n";
}

struct FieldBundle {
    ComplexWaveField field;
    PhysicalParams params;
    SignConvention convention = SignConvention::nonrelativistic;
};

/// Read a field written by field_csv_text + field_sidecar_json.  The CSV's
/// 17-digit decimals reproduce every double bit-exactly.
inline FieldBundle read_field_bundle(const std::string& csv_path, const std::string& json_path) {
    FieldBundle b;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(json_path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("sidecar '" + json_path + "': " + e.what());
    }
    try {
        b.field.grid.x_min = j.at("grid").at("x_min").get<double>();
        b.field.grid.x_max = j.at("grid").at("x_max").get<double>();
        b.field.grid.n_x = j.at("grid").at("n_x").get<std::size_t>();
        b.field.grid.n_t = j.at("grid").at("n_t").get<std::size_t>();
        b.field.grid.dt = j.at("grid").at("dt").get<double>();
        b.field.grid.boundary = parse_boundary(j.at("grid").at("boundary").get<std::string>());
        b.params.hbar = j.at("params").at("hbar").get<double>();
        b.params.m = j.at("params").at("m").get<double>();
        b.params.c = j.at("params").at("c").get<double>();
        b.params.alpha = j.at("params").at("alpha").get<double>();
        b.params.V0 = j.at("params").at("V0").get<double>();
        b.field.t0 = j.at("t0").get<double>();
        b.field.dt_slice = j.at("dt_slice").get<double>();
        b.convention = parse_convention(j.at("convention").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("sidecar '" + json_path + "': " + e.what());
    }
    const std::size_t np = b.field.grid.n_points();
    const std::size_t nt = j.at("n_slices").get<std::size_t>();

    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw ConfigError("cannot read field file '" + csv_path + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("t,x,re,im", 0) != 0)
        throw ConfigError("field file '" + csv_path + "': missing t,x,re,im header");
    b.field.values.assign(nt, ComplexSlice(np));
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (row >= nt * np)
            throw ConfigError("field file '" + csv_path + "': more rows than the sidecar grid");
        double vals[4];
        const char* s = line.c_str();
        char* end = nullptr;
        for (int k = 0; k < 4; ++k) {
            vals[k] = std::strtod(s, &end);
            if (end == s)
                throw ConfigError("field file '" + csv_path + "': bad row '" + line + "'");
            s = (*end == ',') ? end + 1 : end;
        }
        b.field.values[row / np][row % np] = Complex(vals[2], vals[3]);
        ++row;
    }
    if (row != nt * np)
        throw ConfigError("field file '" + csv_path + "': expected " + std::to_string(nt * np) +
                          " rows, got " + std::to_string(row));
    for (const auto& sl : b.field.values)
        b.field.norm_history.push_back(slice_norm(sl, b.field.grid));
    return b;
}

// ---------------------------------------------------------------------------
// Bulk CSV writers
// ---------------------------------------------------------------------------

/// Velocity-field table: `t,x,v,u,b,uD,uM,Q,M,P,mask` per sample.
template <typename VFS>
inline std::string velocities_csv_text(const VFS& f) {
    std::ostringstream out;
    out << "t,x,v,u,b,uD,uM,Q,M,P,mask\n";
    for (std::size_t j = 0; j < f.v.size(); ++j) {
        const std::string t = format_g17(f.t0 + f.dt_slice * static_cast<double>(j));
        for (std::size_t i = 0; i < f.v[j].size(); ++i)
            out << t << ',' << format_g17(f.grid.x(i)) << ',' << format_g17(f.v[j][i]) << ','
                << format_g17(f.u[j][i]) << ',' << format_g17(f.b[j][i]) << ','
                << format_g17(f.u_D[j][i]) << ',' << format_g17(f.u_M[j][i]) << ','
                << format_g17(f.Q[j][i]) << ',' << format_g17(f.M[j][i]) << ','
                << format_g17(f.P[j][i]) << ',' << (f.mask[j][i] ? 1 : 0) << '\n';
    }
    return out.str();
}

/// Four-current table: `t,x,j0,j1`.
inline std::string currents_csv_text(const Grid1D& grid, double t0, double dt_slice,
                                     const History& j0, const History& j1) {
    std::ostringstream out;
    out << "t,x,j0,j1\n";
    for (std::size_t j = 0; j < j0.size(); ++j) {
        const std::string t = format_g17(t0 + dt_slice * static_cast<double>(j));
        for (std::size_t i = 0; i < j0[j].size(); ++i)
            out << t << ',' << format_g17(grid.x(i)) << ',' << format_g17(j0[j][i]) << ','
                << format_g17(j1[j][i]) << '\n';
    }
    return out.str();
}

/// Tracked-walker table: `walker_id,t,x`, ordered by walker then time.
inline std::string trajectories_csv_text(const std::vector<std::size_t>& tracked_ids,
                                         const std::vector<double>& times,
                                         const std::vector<std::vector<double>>& positions) {
    std::ostringstream out;
    out << "walker_id,t,x\n";
    for (std::size_t w = 0; w < tracked_ids.size(); ++w)
        for (std::size_t k = 0; k < times.size(); ++k)
            out << tracked_ids[w] << ',' << format_g17(times[k]) << ','
                << format_g17(positions[k][w]) << '\n';
    return out.str();
}

/// Equilibrium-distance series: `t,ks,n`.
inline std::string ks_csv_text(const std::vector<double>& times, const std::vector<double>& ks,
                               std::size_t n_walkers) {
    std::ostringstream out;
    out << "t,ks,n\n";
    for (std::size_t k = 0; k < times.size(); ++k)
        out << format_g17(times[k]) << ',' << format_g17(ks[k]) << ',' << n_walkers << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Residual report JSON
// ---------------------------------------------------------------------------

inline nlohmann::json residual_entry_json(const ResidualEntry& e) {
    nlohmann::json j;
    j["equation"] = to_string(e.id);
    j["class"] = residual_class(e.id) == ResidualClass::exact ? "exact" : "regime";
    j["residual_max"] = e.residual_max;
    j["residual_l2"] = e.residual_l2;
    j["mask_fraction"] = e.mask_fraction;
    j["unreliable"] = e.unreliable;
    j["dx"] = e.dx;
    j["dt"] = e.dt;
    j["n_x"] = e.n_x;
    j["n_t"] = e.n_t;
    j["convention"] = convention_name(e.convention);
    j["u_mode"] = umode_name(e.u_mode);
    j["branch"] = branch_name(e.branch);
    if (e.convergence_order)
        j["convergence_order"] = *e.convergence_order;
    else
        j["convergence_order"] = nullptr;
    j["order_warning"] = e.order_warning;
    j["at_noise_floor"] = e.at_noise_floor;
    j["levels"] = nlohmann::json::array();
    for (const auto& [dx, l2] : e.levels) j["levels"].push_back({dx, l2});
    j["note"] = e.note;
    return j;
}

inline std::string residual_report_json(const ResidualReport& report) {
    nlohmann::json j;
    j["version"] = kVersion;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : report.entries) j["entries"].push_back(residual_entry_json(e));
    return j.dump(2) + "\n";
}

inline ResidualReport parse_residual_report(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("residual report: ") + e.what());
    }
    ResidualReport report;
    for (const auto& je : j.at("entries")) {
        ResidualEntry e;
        const auto id = parse_equation_id(je.at("equation").get<std::string>());
        if (!id) throw ConfigError("residual report: unknown equation id");
        e.id = *id;
        e.residual_max = je.at("residual_max").get<double>();
        e.residual_l2 = je.at("residual_l2").get<double>();
        e.mask_fraction = je.at("mask_fraction").get<double>();
        e.unreliable = je.at("unreliable").get<bool>();
        e.dx = je.at("dx").get<double>();
        e.dt = je.at("dt").get<double>();
        e.n_x = je.at("n_x").get<std::size_t>();
        e.n_t = je.at("n_t").get<std::size_t>();
        e.convention = parse_convention(je.at("convention").get<std::string>());
        e.u_mode = parse_umode(je.at("u_mode").get<std::string>());
        e.branch = parse_branch(je.at("branch").get<std::string>());
        if (!je.at("convergence_order").is_null())
            e.convergence_order = je.at("convergence_order").get<double>();
        e.order_warning = je.at("order_warning").get<bool>();
        e.at_noise_floor = je.at("at_noise_floor").get<bool>();
        for (const auto& lv : je.at("levels"))
            e.levels.emplace_back(lv.at(0).get<double>(), lv.at(1).get<double>());
        e.note = je.at("note").get<std::string>();
        report.entries.push_back(std::move(e));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// Inputs for the manifest: the canonical config text, the seed, and the
/// names of the files already written into the run directory.
struct ManifestInfo {
    std::string config_text;
    std::uint64_t seed = 0;
    std::vector<std::string> files;
};

/// Write manifest.json last: config hash, tool version, seed, timestamp,
/// and a checksum inventory of every other output file.
inline void write_manifest(const std::string& dir, const ManifestInfo& info) {
    nlohmann::json j;
    j["version"] = kVersion;
    j["config_fnv1a64"] = hex64(fnv1a64(info.config_text));
    j["seed"] = info.seed;
    // Reproducible-builds convention: SOURCE_DATE_EPOCH pins the stamp so
    // reruns with identical inputs produce byte-identical manifests.
    std::time_t now = std::time(nullptr);
    if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) {
        char* end = nullptr;
        const long long v = std::strtoll(sde, &end, 10);
        if (end != sde && *end == '\0' && v >= 0) now = static_cast<std::time_t>(v);
    }
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    j["created_at"] = stamp;
    std::vector<std::string> names = info.files;
    std::sort(names.begin(), names.end());
    j["files"] = nlohmann::json::array();
    for (const auto& name : names) {
        const std::string content = read_text_file(dir + "/" + name);
        nlohmann::json f;
        f["name"] = name;
        f["bytes"] = content.size();
        f["fnv1a64"] = hex64(fnv1a64(content));
        j["files"].push_back(f);
    }
    write_text_file(dir + "/manifest.json", j.dump(2) + "\n");
}

inline nlohmann::json read_manifest(const std::string& dir) {
    try {
        return nlohmann::json::parse(read_text_file(dir + "/manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest in '" + dir + "': " + e.what());
    }
}

} // namespace smech
