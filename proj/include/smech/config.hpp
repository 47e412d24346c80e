#pragma once

// Flat key=value configuration files.  One scenario per file; '#' or ';'
// starts a comment; blank lines are ignored.  Values stay strings until a
// typed accessor parses them, so the CLI can override any key verbatim.

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "smech/errors.hpp"

namespace smech {

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

} // namespace detail

struct Config {
    std::map<std::string, std::string> values;

    bool has(const std::string& key) const { return values.count(key) != 0; }

    void set(const std::string& key, const std::string& value) { values[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback = "") const {
        auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        const std::string& s = it->second;
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (end == s.c_str() || *detail::trim(end).c_str() != '\0')
            throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
        return v;
    }

    long long get_int(const std::string& key, long long fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        const std::string& s = it->second;
        char* end = nullptr;
        const long long v = std::strtoll(s.c_str(), &end, 10);
        if (end == s.c_str() || *detail::trim(end).c_str() != '\0')
            throw ConfigError("config key '" + key + "': '" + s + "' is not an integer");
        return v;
    }

    std::size_t get_size(const std::string& key, std::size_t fallback) const {
        const long long v = get_int(key, static_cast<long long>(fallback));
        if (v < 0) throw ConfigError("config key '" + key + "': must be non-negative");
        return static_cast<std::size_t>(v);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        std::string s = it->second;
        for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
        if (s == "0" || s == "false" || s == "no" || s == "off") return false;
        throw ConfigError("config key '" + key + "': '" + it->second + "' is not a boolean");
    }
};

inline Config parse_config_text(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key=value, got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        cfg.values[key] = value;
    }
    return cfg;
}

inline Config load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

/// Apply one `key=value` override (the CLI's --set flag).
inline void apply_override(Config& cfg, const std::string& kv) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos || detail::trim(kv.substr(0, eq)).empty())
        throw ConfigError("override '" + kv + "': expected key=value");
    cfg.values[detail::trim(kv.substr(0, eq))] = detail::trim(kv.substr(eq + 1));
}

/// Canonical text form: sorted keys, one per line.  Used for config hashing
/// so overrides and file formatting hash identically.
inline std::string serialize_config(const Config& cfg) {
    std::ostringstream out;
    for (const auto& [k, v] : cfg.values) out << k << " = " << v << "\n";
    return out.str();
}

} // namespace smech
