#pragma once

// ingest -> ungroup -> calibrate -> fit dynamics -> simulate -> summarise, per scenario of the grid.

#include "mortkit/config.hpp"
#include "mortkit/hash.hpp"
#include "mortkit/lilee.hpp"
#include "mortkit/mortality_data.hpp"
#include "mortkit/projection.hpp"
#include "mortkit/time_dynamics.hpp"
#include "mortkit/ungrouping.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace mortkit {

struct VirtualCounts {
    std::size_t deaths = 0;
    std::size_t exposure = 0;
    std::size_t declared_deaths = 0;
    std::size_t declared_exposure = 0;
};

struct AssembledData {
    FragmentMap fragments;            // every declared population, ages as supplied (virtual cells 0..90)
    MultiPopulationDataset dataset;   // calibration window, ages 0..90
    VirtualCounts virtual_counts;
    std::vector<std::string> warnings;
};

namespace detail {

using WeeklyKey = std::tuple<SourceKind, std::string, Gender, int>;

struct LoadedInputs {
    std::map<SourceKind, FragmentMap> individual;
    std::map<WeeklyKey, BucketedWeeklySeries> weekly;
};

inline LoadedInputs load_inputs(const RunConfig& c) {
    LoadedInputs in;
    for (const auto& f : c.inputs) {
        if (is_bucketed(f.kind)) {
            for (auto& s : load_weekly_csv(f.path, weekly_shape(f.kind))) {
                WeeklyKey key{f.kind, s.country, s.gender, s.year};
                if (in.weekly.count(key)) {
                    throw ValidationError(std::string(to_string(f.kind)) + " series " + s.country + " " +
                                          to_char(s.gender) + " " + std::to_string(s.year) + " appears in two files");
                }
                in.weekly.emplace(std::move(key), std::move(s));
            }
        } else {
            merge_fragments(in.individual[f.kind], load_individual_age_csv(f.path, annual_shape(f.kind)));
        }
    }
    for (const auto& a : c.aggregates) {
        std::map<std::tuple<SourceKind, Gender, int>, std::vector<BucketedWeeklySeries>> groups;
        for (const auto& [key, s] : in.weekly) {
            const auto& [kind, country, g, year] = key;
            if (std::find(a.parts.begin(), a.parts.end(), country) != a.parts.end()) groups[{kind, g, year}].push_back(s);
        }
        for (auto& [k, parts] : groups) {
            if (parts.size() != a.parts.size()) continue;  // incomplete years stay absent
            WeeklyKey key{std::get<0>(k), a.country, std::get<1>(k), std::get<2>(k)};
            if (in.weekly.count(key)) throw ValidationError("aggregate " + a.country + " clashes with a loaded series");
            in.weekly.emplace(std::move(key), aggregate_uk(parts, a.country));
        }
    }
    return in;
}

inline const BucketedWeeklySeries& weekly_at(const LoadedInputs& in, SourceKind kind, const std::string& country,
                                             Gender g, int year) {
    auto it = in.weekly.find({kind, country, g, year});
    if (it == in.weekly.end()) {
        throw IncompleteDataError(std::string("no ") + std::string(to_string(kind)) + " series for " + country + " " +
                                  to_char(g) + " " + std::to_string(year));
    }
    return it->second;
}

inline std::string population(const std::string& c, Gender g, int year) {
    return c + " " + std::string(1, to_char(g)) + " " + std::to_string(year);
}

/// Quantity q of ages 0..top in `year`, from the merged data or, failing that, any individual source.
inline std::vector<double> curve_of(const FragmentMap& merged, const LoadedInputs& in, const std::string& c, Gender g,
                                    int year, Quantity q, int top = 90) {
    auto from = [&](const FragmentMap& m) -> std::optional<std::vector<double>> {
        auto it = m.find({c, g});
        if (it == m.end()) return std::nullopt;
        std::vector<double> out;
        for (int a = 0; a <= top; ++a) {
            const Cell* cell = it->second.find(a, year);
            const auto& v = cell ? (q == Quantity::Deaths ? cell->deaths : cell->exposure) : std::optional<double>{};
            if (!v) return std::nullopt;
            out.push_back(*v);
        }
        return out;
    };
    if (auto v = from(merged)) return *v;
    for (const auto& [kind, m] : in.individual) {
        if (auto v = from(m)) return *v;
    }
    throw IncompleteDataError(population(c, g, year) + ": no complete " + std::string(to_string(q)) + " curve");
}

/// Deaths at the top age and summed over top..110 in `year`.
inline std::pair<OpenDeathsReference, bool> open_reference(const FragmentMap& merged, const LoadedInputs& in,
                                                           const std::string& c, Gender g, int year, int top = 90) {
    auto from = [&](const FragmentMap& m) -> std::optional<std::pair<OpenDeathsReference, bool>> {
        auto it = m.find({c, g});
        if (it == m.end()) return std::nullopt;
        const Cell* at_top = it->second.find(top, year);
        if (!at_top || !at_top->deaths) return std::nullopt;
        OpenDeathsReference r{year, *at_top->deaths, 0.0};
        bool above = false;
        for (int a = top; a <= 110; ++a) {
            const Cell* cell = it->second.find(a, year);
            if (cell && cell->deaths) {
                r.open_sum += *cell->deaths;
                above = above || a > top;
            }
        }
        return std::pair{r, above};
    };
    if (auto v = from(merged)) return *v;
    for (const auto& [kind, m] : in.individual) {
        if (auto v = from(m)) return *v;
    }
    throw IncompleteDataError(population(c, g, year) + ": no reference deaths at age " + std::to_string(top));
}

inline void set_virtual(FragmentMap& merged, const std::string& c, Gender g, int year, Quantity q,
                        const std::vector<double>& values, std::size_t& count) {
    auto& frag = merged[{c, g}];
    frag.country = c;
    frag.gender = g;
    for (std::size_t a = 0; a < values.size(); ++a) {
        auto& cell = frag.cells[{year, static_cast<int>(a)}];
        if (q == Quantity::Deaths) {
            cell.deaths = values[a];
            cell.deaths_source = Provenance::Virtual;
        } else {
            cell.exposure = values[a];
            cell.exposure_source = Provenance::Virtual;
        }
        ++count;
    }
}

} // namespace detail

/// Loads every input, selects cells by the declared source matrix and ungroups bucketed years.
inline AssembledData assemble_data(const RunConfig& c) {
    using namespace detail;
    const int top = c.ages.max();
    const auto in = load_inputs(c);
    const auto matrix = c.source_matrix();
    AssembledData out;
    auto& merged = out.fragments;

    // observed cells
    for (const auto& [key, src] : matrix) {
        const auto& [country, year, q] = key;
        if (is_bucketed(src)) {
            (q == Quantity::Deaths ? out.virtual_counts.declared_deaths : out.virtual_counts.declared_exposure) +=
                2 * static_cast<std::size_t>(top + 1);
            continue;
        }
        auto sit = in.individual.find(src);
        for (Gender g : all_genders) {
            const SurfaceFragment* frag = nullptr;
            if (sit != in.individual.end()) {
                auto fit = sit->second.find({country, g});
                if (fit != sit->second.end()) frag = &fit->second;
            }
            bool any = false;
            auto& dst = merged[{country, g}];
            dst.country = country;
            dst.gender = g;
            for (int a = 0; a <= 110 && frag; ++a) {
                const Cell* cell = frag->find(a, year);
                if (!cell) continue;
                auto& d = dst.cells[{year, a}];
                if (q == Quantity::Deaths && cell->deaths) {
                    d.deaths = cell->deaths;
                    d.deaths_source = cell->deaths_source;
                    any = true;
                } else if (q == Quantity::Exposure && cell->exposure) {
                    d.exposure = cell->exposure;
                    d.exposure_source = cell->exposure_source;
                    any = true;
                }
            }
            if (!any) {
                throw IncompleteDataError(population(country, g, year) + ": declared source " +
                                          std::string(to_string(src)) + " has no " + std::string(to_string(q)));
            }
        }
    }

    // Eurostat vs STMF cross-check wherever both weekly shapes exist
    for (const auto& [key, s] : in.weekly) {
        const auto& [kind, country, g, year] = key;
        if (kind != SourceKind::Eurow) continue;
        auto other = in.weekly.find({SourceKind::Stmf, country, g, year});
        if (other == in.weekly.end()) continue;
        const auto r = check_eurostat_stmf_consistency(s, other->second);
        if (r.status == ConsistencyStatus::Inconsistent) {
            out.warnings.push_back(population(country, g, year) + ": EUROW and STMF deaths disagree (" + r.note + ")");
        }
    }

    // virtual exposures, chained year by year
    for (const auto& [key, src] : matrix) {
        const auto& [country, year, q] = key;
        if (q != Quantity::Exposure || !is_bucketed(src)) continue;
        for (Gender g : all_genders) {
            const auto prev = curve_of(merged, in, country, g, year - 1, Quantity::Exposure, top);
            const auto now = annualize_weekly_exposure(weekly_at(in, src, country, g, year));
            const auto before = annualize_weekly_exposure(weekly_at(in, src, country, g, year - 1));
            if (before.buckets != now.buckets) {
                throw ValidationError(population(country, g, year) + ": bucket structure differs from the previous year");
            }
            const auto open = before.open_index();
            if (!open) throw ValidationError(population(country, g, year - 1) + ": exposure buckets have no open bucket");
            const auto r = ungroup_exposures(prev, now, (*before.exposure)[*open]);
            set_virtual(merged, country, g, year, Quantity::Exposure, r.exposures, out.virtual_counts.exposure);
        }
    }

    // virtual deaths via an auxiliary projection per country
    std::map<std::string, std::vector<int>> death_years;
    for (const auto& [key, src] : matrix) {
        const auto& [country, year, q] = key;
        if (q == Quantity::Deaths && is_bucketed(src)) death_years[country].push_back(year);
    }
    for (const auto& [country, ys] : death_years) {
        const int ref_year = ys.front() - 1;
        const int first = std::max(c.aux_start_year, c.years.first());
        if (ref_year - first + 1 < 10) {
            throw IncompleteDataError(country + ": auxiliary calibration " + std::to_string(first) + "-" +
                                      std::to_string(ref_year) + " is shorter than 10 years");
        }
        const auto& candidates = c.aux_pool ? *c.aux_pool : c.common_pool;
        std::vector<std::string> pool;
        for (const auto& p : candidates) {
            bool observed = true;
            for (int y = first; y <= ref_year && observed; ++y) {
                auto it = matrix.find({p, y, Quantity::Deaths});
                observed = it != matrix.end() && !is_bucketed(it->second);
            }
            if (observed) {
                pool.push_back(p);
            } else {
                out.warnings.push_back(country + ": " + p + " left out of the auxiliary pool (no observed deaths through " +
                                       std::to_string(ref_year) + ")");
            }
        }
        if (pool.empty()) throw IncompleteDataError(country + ": auxiliary pool is empty");
        MultiPopulationDataset aux;
        aux.ages = c.ages;
        aux.years = YearRange(first, ref_year);
        aux.common_pool = pool;
        auto members = pool;
        if (std::find(members.begin(), members.end(), country) == members.end()) members.push_back(country);
        for (const auto& m : members) {
            for (Gender g : all_genders) {
                auto it = merged.find({m, g});
                if (it == merged.end()) throw IncompleteDataError("no data for auxiliary pool member " + m);
                aux.add(MortalitySurface::from_fragment(it->second, aux.ages, aux.years));
            }
        }
        const auto model = fit_auxiliary_projection_model(aux, country);
        for (const auto& w : model.warnings) out.warnings.push_back(w);

        for (int year : ys) {
            const auto src = matrix.at({country, year, Quantity::Deaths});
            for (Gender g : all_genders) {
                const auto where = population(country, g, year);
                const auto E = curve_of(merged, in, country, g, year, Quantity::Exposure, top);
                const auto annual = annualize_weekly_deaths(weekly_at(in, src, country, g, year));
                const auto open = annual.open_index();
                if (!open) throw ValidationError(where + ": death buckets have no open bucket");
                const int lower = annual.buckets[*open].lower;
                std::vector<double> expected;
                std::optional<OpenDeathsReference> ref;
                if (lower < top) {
                    const auto closed = model.closed_mu(g, year);
                    const auto ext = extend_exposure_by_survival(E, closed, kOpenBucketMaxAge);
                    expected = expected_deaths(std::span<const double>(closed).first(ext.size()), ext);
                } else {
                    expected = expected_deaths(model.mu(g, year), E);
                    const auto [r, above] = open_reference(merged, in, country, g, ref_year, top);
                    if (!above) {
                        out.warnings.push_back(where + ": reference year " + std::to_string(ref_year) +
                                               " has no deaths above age " + std::to_string(top));
                    }
                    ref = r;
                }
                const auto r = ungroup_deaths(expected, annual, top, ref, c.open_rate.at(g));
                for (const auto& w : r.warnings) out.warnings.push_back(where + ": " + w);
                set_virtual(merged, country, g, year, Quantity::Deaths, r.deaths, out.virtual_counts.deaths);
            }
        }
    }

    out.dataset.ages = c.ages;
    out.dataset.years = c.years;
    out.dataset.common_pool = c.common_pool;
    for (const auto& country : c.countries()) {
        for (Gender g : all_genders) {
            auto it = merged.find({country, g});
            if (it == merged.end()) throw IncompleteDataError("no data for " + country);
            out.dataset.add(MortalitySurface::from_fragment(it->second, c.ages, c.years));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scenarios and report
// ---------------------------------------------------------------------------

inline std::string shortest(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

struct ScenarioOutcome {
    std::string label;
    double grid_value = 0.0;
    std::string dir;
    bool ok = false;
    std::string stage;
    std::string error;
    std::map<std::string, double> quantities;
    std::vector<std::string> warnings;
    std::map<std::string, std::string> files;  // relative path -> contents
    double seconds = 0.0;
};

struct RunOptions {
    unsigned jobs = 0;  // 0: one per scenario
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out_dir;
    std::function<void(std::size_t scenario, const std::string& stage)> on_stage;  // called as each stage starts
};

struct RunReport {
    nlohmann::json report;
    nlohmann::json timings;
    std::size_t failures = 0;
    std::size_t scenarios = 0;
};

inline constexpr const char* kReportSchema = "mortkit-report/1";

namespace detail {

inline std::map<std::string, double> scenario_quantities(const LiLeeParams& params, const TimeSeriesFit& fit,
                                                         const ProjectionResult& proj, int horizon) {
    std::map<std::string, double> q;
    for (int i = 0; i < 6; ++i) q[kPsiNames[i]] = fit.psi(i);
    for (int i = 0; i < 4; ++i)
        for (int j = i; j < 4; ++j) q["C_" + std::to_string(i + 1) + std::to_string(j + 1)] = fit.C(i, j);
    q["loglik"] = fit.loglik;
    const auto jump = jump_off_of(params);
    q["jump_off_K_M"] = jump(0);
    q["jump_off_kappa_M"] = jump(1);
    q["jump_off_K_F"] = jump(2);
    q["jump_off_kappa_F"] = jump(3);
    for (const auto& row : proj.fan_chart) {
        if (!row.age) continue;
        const bool coh = row.quantity == "e_coh";
        const bool per_end = row.quantity == "e_per" && row.year == horizon;
        if (!coh && !per_end) continue;
        q[row.quantity + "_" + std::to_string(*row.age) + "_" + to_char(row.gender) + "_" + row.probe] = row.value;
    }
    return q;
}

} // namespace detail

/// Runs every scenario of the grid and writes outputs under the run's output directory.
inline RunReport run_pipeline(RunConfig config, const RunOptions& opts = {}) {
    using clock = std::chrono::steady_clock;
    auto since = [](clock::time_point t0) { return std::chrono::duration<double>(clock::now() - t0).count(); };
    if (opts.seed) config.seed = *opts.seed;
    if (opts.out_dir) config.out_dir = *opts.out_dir;
    config.validate();
    const auto& out_dir = config.out_dir;
    RunReport result;

    auto t0 = clock::now();
    const auto data = assemble_data(config);
    const double t_assemble = since(t0);

    {
        FragmentMap written;
        for (const auto& c : config.countries()) {
            for (Gender g : all_genders) written[{c, g}] = data.fragments.at({c, g});
        }
        write_individual_age_csv(out_dir / "data" / "individual.csv", written, true);
    }

    const std::size_t n = config.grid.size();
    result.scenarios = n;
    const unsigned outer = opts.jobs == 0 ? static_cast<unsigned>(n) : std::min<unsigned>(opts.jobs, static_cast<unsigned>(n));
    const unsigned inner = std::max(1u, (opts.jobs == 0 ? 1u : opts.jobs) / std::max(1u, outer));

    // the weighted method shares one calibration across the grid
    std::optional<LiLeeParams> shared;
    std::string shared_error;
    double t_shared = 0.0;
    if (config.method == Method::WeightedLikelihood) {
        t0 = clock::now();
        try {
            shared = calibrate(data.dataset, config.country, ModelSpec{ModelKind::LiLee, 1.0});
        } catch (const std::exception& e) {
            shared_error = e.what();
        }
        t_shared = since(t0);
    }

    std::vector<ScenarioOutcome> outcomes(n);
    parallel_for(n, outer, [&](std::size_t i) {
        auto& o = outcomes[i];
        const double v = config.grid[i];
        const bool weighted = config.method == Method::WeightedLikelihood;
        o.grid_value = v;
        o.label = (weighted ? "w=" : "alpha=") + shortest(v);
        o.dir = std::string("scenario_") + std::to_string(i) + "_" + (weighted ? "w" : "alpha") + shortest(v);
        const auto start = clock::now();
        try {
            o.stage = "calibrate";
            if (opts.on_stage) opts.on_stage(i, o.stage);
            LiLeeParams params;
            if (weighted) {
                if (!shared) throw NumericalError(shared_error);
                params = *shared;
            } else {
                params = calibrate(data.dataset, config.country, ModelSpec{ModelKind::AdjustedLeeMiller, v});
            }
            o.stage = "dynamics";
            if (opts.on_stage) opts.on_stage(i, o.stage);
            const auto rows = build_design(period_effects_of(params));
            const auto fit = fit_weighted_mle(rows, weighted ? last_year_weights(rows.size(), v)
                                                             : std::vector<double>(rows.size(), 1.0));
            for (const auto& w : fit.warnings) o.warnings.push_back(w);
            for (Gender g : all_genders) {
                if (!fit.stationary(g)) o.warnings.push_back(std::string("|phi^") + to_char(g) + "| >= 1");
            }
            o.stage = "project";
            if (opts.on_stage) opts.on_stage(i, o.stage);
            ScenarioSpec spec;
            spec.jump_off_year = config.years.last();
            spec.horizon = config.horizon;
            spec.paths = config.paths;
            spec.seed = config.seed;
            spec.jump_off = jump_off_of(params);
            const auto proj = project_scenario(params, fit, spec, ProjectionRequest{config.report_ages, inner});
            for (const auto& w : proj.warnings) o.warnings.push_back(w);
            o.quantities = detail::scenario_quantities(params, fit, proj, config.horizon);
            o.files[o.dir + "/params.csv"] = params_to_csv(params);
            o.files[o.dir + "/dynamics.csv"] = fit_to_csv(fit);
            o.files[o.dir + "/fan_chart.csv"] = fan_chart_csv(proj.fan_chart);
            o.stage.clear();
            o.ok = true;
        } catch (const std::exception& e) {
            o.ok = false;
            o.error = e.what();
            o.quantities.clear();
            o.files.clear();
        }
        o.seconds = std::chrono::duration<double>(clock::now() - start).count();
    });

    nlohmann::json report;
    report["schema"] = kReportSchema;
    report["country"] = config.country;
    report["common_pool"] = config.common_pool;
    report["years"] = {config.years.first(), config.years.last()};
    report["method"] = config.method == Method::WeightedLikelihood ? "weighted" : "lee_miller";
    report["grid"] = config.grid;
    report["simulation"] = {{"paths", config.paths}, {"horizon", config.horizon}, {"seed", config.seed}};
    report["provenance"] = {{"virtual_deaths", data.virtual_counts.deaths},
                            {"virtual_exposure", data.virtual_counts.exposure},
                            {"declared_bucketed_deaths", data.virtual_counts.declared_deaths},
                            {"declared_bucketed_exposure", data.virtual_counts.declared_exposure}};
    report["warnings"] = data.warnings;
    report["scenarios"] = nlohmann::json::array();
    nlohmann::json timings;
    timings["assemble_seconds"] = t_assemble;
    timings["shared_calibration_seconds"] = t_shared;
    for (const auto& o : outcomes) {
        nlohmann::json s;
        s["label"] = o.label;
        s["value"] = o.grid_value;
        s["status"] = o.ok ? "ok" : "failed";
        if (!o.ok) {
            s["stage"] = o.stage;
            s["error"] = o.error;
            ++result.failures;
        }
        s["quantities"] = o.quantities;
        s["warnings"] = o.warnings;
        s["files"] = nlohmann::json::array();
        for (const auto& [rel, text] : o.files) {
            csv::write_text(out_dir / rel, text);
            s["files"].push_back(rel);
        }
        report["scenarios"].push_back(std::move(s));
        timings["scenarios"][o.label] = o.seconds;
    }
    nlohmann::json files = nlohmann::json::object();
    files["data/individual.csv"] = sha256_file(out_dir / "data" / "individual.csv");
    for (const auto& o : outcomes)
        for (const auto& [rel, text] : o.files) files[rel] = sha256_hex(text);
    report["files"] = files;

    csv::write_text(out_dir / "report.json", report.dump(2) + "\n");
    csv::write_text(out_dir / "timings.json", timings.dump(2) + "\n");
    result.report = std::move(report);
    result.timings = std::move(timings);
    return result;
}

// ---------------------------------------------------------------------------
// Report diff
// ---------------------------------------------------------------------------

/// Per-scenario deltas b - a of every reported quantity; scenarios are matched by position.
/// Only nonzero deltas are listed, so identical reports give an empty diff.
inline nlohmann::json diff_reports(const nlohmann::json& a, const nlohmann::json& b) {
    auto schema_of = [](const nlohmann::json& r) {
        if (!r.is_object() || !r.contains("schema") || !r.contains("scenarios")) {
            throw ValidationError("not a mortkit report");
        }
        return r.at("schema").get<std::string>();
    };
    if (schema_of(a) != schema_of(b)) throw ValidationError("report schemas differ");
    const auto& sa = a.at("scenarios");
    const auto& sb = b.at("scenarios");
    if (sa.size() != sb.size()) {
        throw ValidationError("reports have " + std::to_string(sa.size()) + " and " + std::to_string(sb.size()) +
                              " scenarios");
    }
    nlohmann::json out;
    out["scenarios"] = nlohmann::json::array();
    for (std::size_t i = 0; i < sa.size(); ++i) {
        const auto& qa = sa[i].at("quantities");
        const auto& qb = sb[i].at("quantities");
        std::vector<std::string> ka, kb;
        for (const auto& [k, v] : qa.items()) ka.push_back(k);
        for (const auto& [k, v] : qb.items()) kb.push_back(k);
        if (ka != kb) {
            throw ValidationError("scenario " + std::to_string(i) + " (" + sa[i].value("label", "?") + " vs " +
                                  sb[i].value("label", "?") + ") reports different quantities");
        }
        nlohmann::json deltas = nlohmann::json::object();
        for (const auto& k : ka) {
            const double d = qb.at(k).get<double>() - qa.at(k).get<double>();
            if (d != 0.0) deltas[k] = d;
        }
        out["scenarios"].push_back({{"a", sa[i].value("label", "")}, {"b", sb[i].value("label", "")}, {"deltas", deltas}});
    }
    return out;
}

inline bool diff_is_empty(const nlohmann::json& diff) {
    for (const auto& s : diff.at("scenarios"))
        if (!s.at("deltas").empty()) return false;
    return true;
}

} // namespace mortkit
