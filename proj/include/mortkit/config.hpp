#pragma once

// Run configuration (JSON). Relative paths resolve against the config file's directory.

#include "mortkit/core_types.hpp"
#include "mortkit/error.hpp"
#include "mortkit/mortality_data.hpp"
#include "mortkit/ungrouping.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace mortkit {

enum class SourceKind { Hmd, Euro, Statbel, Stmf, Eurow };
enum class Quantity { Deaths, Exposure };
enum class Method { WeightedLikelihood, AdjustedLeeMiller };

inline std::string_view to_string(SourceKind s) noexcept {
    switch (s) {
    case SourceKind::Hmd: return "HMD";
    case SourceKind::Euro: return "EURO";
    case SourceKind::Statbel: return "STATBEL";
    case SourceKind::Stmf: return "STMF";
    case SourceKind::Eurow: return "EUROW";
    }
    return "?";
}

inline SourceKind parse_source_kind(std::string_view s) {
    for (auto k : {SourceKind::Hmd, SourceKind::Euro, SourceKind::Statbel, SourceKind::Stmf, SourceKind::Eurow}) {
        if (to_string(k) == s) return k;
    }
    throw ConfigError("unknown source '" + std::string(s) + "' (HMD, EURO, STATBEL, STMF or EUROW)");
}

inline bool is_bucketed(SourceKind s) noexcept { return s == SourceKind::Stmf || s == SourceKind::Eurow; }

inline AnnualShape annual_shape(SourceKind s) {
    switch (s) {
    case SourceKind::Hmd: return AnnualShape::Hmd;
    case SourceKind::Euro: return AnnualShape::Euro;
    case SourceKind::Statbel: return AnnualShape::Statbel;
    default: throw ConfigError(std::string(to_string(s)) + " is not an individual-age source");
    }
}

inline WeeklyShape weekly_shape(SourceKind s) {
    if (s == SourceKind::Stmf) return WeeklyShape::Stmf;
    if (s == SourceKind::Eurow) return WeeklyShape::Eurow;
    throw ConfigError(std::string(to_string(s)) + " is not a weekly source");
}

inline std::string_view to_string(Quantity q) noexcept { return q == Quantity::Deaths ? "deaths" : "exposure"; }

struct InputFile {
    std::filesystem::path path;
    SourceKind kind = SourceKind::Hmd;
};

struct SourceDeclaration {
    std::string country;
    int first_year = 0;
    int last_year = 0;
    std::vector<Quantity> quantities;
    SourceKind source = SourceKind::Hmd;
};

/// Weekly series of several constituents summed into one country (the UK from its nations).
struct WeeklyAggregate {
    std::string country;
    std::vector<std::string> parts;
};

using SourceKey = std::tuple<std::string, int, Quantity>;

struct RunConfig {
    std::filesystem::path base_dir;
    std::string country;
    std::vector<std::string> common_pool;
    AgeRange ages{0, 90};
    YearRange years{1988, 2020};
    std::vector<InputFile> inputs;
    std::vector<WeeklyAggregate> aggregates;
    std::vector<SourceDeclaration> sources;

    int aux_start_year = 1970;
    std::optional<std::vector<std::string>> aux_pool;
    std::map<Gender, double> open_rate{{Gender::Male, kDefaultOpenRateMale}, {Gender::Female, kDefaultOpenRateFemale}};

    Method method = Method::WeightedLikelihood;
    std::vector<double> grid;

    std::size_t paths = 10000;
    int horizon = 2070;
    std::uint64_t seed = 1;
    std::vector<int> report_ages{0, 25, 45, 65, 85};
    std::filesystem::path out_dir = "out";

    std::vector<std::string> countries() const {
        std::set<std::string> s(common_pool.begin(), common_pool.end());
        s.insert(country);
        return {s.begin(), s.end()};
    }

    /// One source per (country, year, quantity) over the calibration window.
    std::map<SourceKey, SourceKind> source_matrix() const {
        std::map<SourceKey, SourceKind> m;
        for (const auto& d : sources) {
            for (int y = d.first_year; y <= d.last_year; ++y) {
                for (auto q : d.quantities) {
                    const auto [it, fresh] = m.emplace(SourceKey{d.country, y, q}, d.source);
                    if (!fresh) {
                        throw ConfigError(d.country + " " + std::to_string(y) + " " + std::string(to_string(q)) +
                                          " is declared by both " + std::string(to_string(it->second)) + " and " +
                                          std::string(to_string(d.source)));
                    }
                }
            }
        }
        return m;
    }

    void validate() const {
        if (country.empty()) throw ConfigError("country is required");
        if (common_pool.empty()) throw ConfigError("common_pool is empty");
        if (ages.min() != 0 || ages.max() != 90) throw ConfigError("ages must be 0..90");
        if (years.size() < 10) throw ConfigError("calibration window needs at least 10 years");
        if (grid.empty()) throw ConfigError("scenario grid is empty");
        for (double w : grid) {
            if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("grid value " + csv::format_double(w) + " outside [0,1]");
        }
        if (paths == 0) throw ConfigError("simulation.paths must be positive");
        if (horizon <= years.last()) throw ConfigError("simulation.horizon must lie after the last calibration year");
        for (int a : report_ages) {
            if (a < 0 || a > 120) throw ConfigError("report age " + std::to_string(a) + " outside 0..120");
        }
        for (const auto& [g, r] : open_rate) {
            if (!(r > 0.0 && r < 1.0)) throw ConfigError("open-bucket rate must lie in (0,1)");
        }
        std::set<SourceKind> supplied;
        for (const auto& f : inputs) supplied.insert(f.kind);
        for (const auto& d : sources) {
            if (d.source == SourceKind::Eurow &&
                std::find(d.quantities.begin(), d.quantities.end(), Quantity::Exposure) != d.quantities.end()) {
                throw ConfigError("EUROW carries no exposures (" + d.country + ")");
            }
            if (!supplied.count(d.source)) {
                throw ConfigError("source " + std::string(to_string(d.source)) + " is declared but no input file has that shape");
            }
        }
        const auto m = source_matrix();
        for (const auto& c : countries()) {
            for (int y = years.first(); y <= years.last(); ++y) {
                for (auto q : {Quantity::Deaths, Quantity::Exposure}) {
                    if (!m.count({c, y, q})) {
                        throw ConfigError("no source declared for " + c + " " + std::to_string(y) + " " +
                                          std::string(to_string(q)));
                    }
                }
            }
        }
        for (const auto& [key, src] : m) {
            const auto& [c, y, q] = key;
            if (!years.contains(y)) {
                throw ConfigError("source declared for " + c + " " + std::to_string(y) + " outside the calibration window");
            }
        }
    }
};

namespace detail {

template <class T>
T json_get(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + ": bad '" + key + "': " + e.what());
    }
}

inline std::pair<int, int> json_pair(const nlohmann::json& j, const char* key, const std::string& where) {
    const auto v = json_get<std::vector<int>>(j, key, where);
    if (v.size() != 2) throw ConfigError(where + ": '" + key + "' must be [first, last]");
    return {v[0], v[1]};
}

} // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    using detail::json_get;
    RunConfig c;
    c.base_dir = base_dir;
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };
    try {
        c.country = json_get<std::string>(j, "country", "config");
        c.common_pool = json_get<std::vector<std::string>>(j, "common_pool", "config");
        if (j.contains("ages")) {
            const auto [lo, hi] = detail::json_pair(j, "ages", "config");
            c.ages = AgeRange(lo, hi);
        }
        const auto [y0, y1] = detail::json_pair(j, "years", "config");
        c.years = YearRange(y0, y1);
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }

    for (const auto& f : json_get<nlohmann::json>(j, "inputs", "config")) {
        c.inputs.push_back({resolve(json_get<std::string>(f, "path", "inputs")),
                            parse_source_kind(json_get<std::string>(f, "shape", "inputs"))});
    }
    if (j.contains("aggregates")) {
        for (const auto& a : j.at("aggregates")) {
            c.aggregates.push_back({json_get<std::string>(a, "country", "aggregates"),
                                    json_get<std::vector<std::string>>(a, "parts", "aggregates")});
        }
    }
    for (const auto& s : json_get<nlohmann::json>(j, "sources", "config")) {
        SourceDeclaration d;
        d.country = json_get<std::string>(s, "country", "sources");
        std::tie(d.first_year, d.last_year) = detail::json_pair(s, "years", "sources");
        if (d.first_year > d.last_year) throw ConfigError("sources: empty year range for " + d.country);
        const auto q = json_get<std::string>(s, "quantity", "sources");
        if (q == "both") {
            d.quantities = {Quantity::Deaths, Quantity::Exposure};
        } else if (q == "deaths") {
            d.quantities = {Quantity::Deaths};
        } else if (q == "exposure") {
            d.quantities = {Quantity::Exposure};
        } else {
            throw ConfigError("sources: quantity must be deaths, exposure or both");
        }
        d.source = parse_source_kind(json_get<std::string>(s, "source", "sources"));
        c.sources.push_back(std::move(d));
    }

    if (j.contains("ungrouping")) {
        const auto& u = j.at("ungrouping");
        if (u.contains("aux_start_year")) c.aux_start_year = json_get<int>(u, "aux_start_year", "ungrouping");
        if (u.contains("aux_pool")) c.aux_pool = json_get<std::vector<std::string>>(u, "aux_pool", "ungrouping");
        if (u.contains("open_rate")) {
            for (const auto& [k, v] : u.at("open_rate").items()) {
                try {
                    c.open_rate[parse_gender(k)] = v.get<double>();
                } catch (const std::exception& e) {
                    throw ConfigError(std::string("ungrouping.open_rate: ") + e.what());
                }
            }
        }
    }

    const auto& m = json_get<nlohmann::json>(j, "method", "config");
    const auto kind = json_get<std::string>(m, "kind", "method");
    if (kind == "weighted") {
        c.method = Method::WeightedLikelihood;
    } else if (kind == "lee_miller") {
        c.method = Method::AdjustedLeeMiller;
    } else {
        throw ConfigError("method.kind must be 'weighted' or 'lee_miller'");
    }
    c.grid = json_get<std::vector<double>>(m, "grid", "method");

    if (j.contains("simulation")) {
        const auto& s = j.at("simulation");
        if (s.contains("paths")) c.paths = json_get<std::size_t>(s, "paths", "simulation");
        if (s.contains("horizon")) c.horizon = json_get<int>(s, "horizon", "simulation");
        if (s.contains("seed")) c.seed = json_get<std::uint64_t>(s, "seed", "simulation");
    }
    if (j.contains("report_ages")) c.report_ages = json_get<std::vector<int>>(j, "report_ages", "config");
    if (j.contains("out")) c.out_dir = resolve(json_get<std::string>(j, "out", "config"));
    else c.out_dir = base_dir / "out";
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(csv::read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("'" + path.string() + "': " + e.what());
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return parse_run_config(j, path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

/// Inverse of parse_run_config; paths are written as given.
inline nlohmann::json run_config_json(const RunConfig& c) {
    nlohmann::json j;
    j["country"] = c.country;
    j["common_pool"] = c.common_pool;
    j["ages"] = {c.ages.min(), c.ages.max()};
    j["years"] = {c.years.first(), c.years.last()};
    j["inputs"] = nlohmann::json::array();
    for (const auto& f : c.inputs) j["inputs"].push_back({{"path", f.path.generic_string()}, {"shape", to_string(f.kind)}});
    if (!c.aggregates.empty()) {
        j["aggregates"] = nlohmann::json::array();
        for (const auto& a : c.aggregates) j["aggregates"].push_back({{"country", a.country}, {"parts", a.parts}});
    }
    j["sources"] = nlohmann::json::array();
    for (const auto& d : c.sources) {
        const std::string q = d.quantities.size() == 2 ? "both" : std::string(to_string(d.quantities.front()));
        j["sources"].push_back({{"country", d.country},
                                {"years", {d.first_year, d.last_year}},
                                {"quantity", q},
                                {"source", to_string(d.source)}});
    }
    j["ungrouping"]["aux_start_year"] = c.aux_start_year;
    if (c.aux_pool) j["ungrouping"]["aux_pool"] = *c.aux_pool;
    for (const auto& [g, r] : c.open_rate) j["ungrouping"]["open_rate"][std::string(1, to_char(g))] = r;
    j["method"] = {{"kind", c.method == Method::WeightedLikelihood ? "weighted" : "lee_miller"}, {"grid", c.grid}};
    j["simulation"] = {{"paths", c.paths}, {"horizon", c.horizon}, {"seed", c.seed}};
    j["report_ages"] = c.report_ages;
    j["out"] = c.out_dir.generic_string();
    return j;
}

} // namespace mortkit
