#pragma once

// Synthetic multi-country dataset from known Li & Lee parameters and RWD/AR(1) period effects,
// written in the ingestion shapes, with chosen years degraded into weekly bucketed files.

#include "mortkit/config.hpp"
#include "mortkit/lilee.hpp"
#include "mortkit/mortality_data.hpp"
#include "mortkit/projection.hpp"
#include "mortkit/time_dynamics.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace mortkit {

struct DegradeSpec {
    std::string country;
    int first_year = 0;
    int last_year = 0;
    std::optional<SourceKind> exposure;  // STMF
    std::optional<SourceKind> deaths;    // STMF or EUROW
};

struct FixtureParams {
    std::uint64_t seed = 7;
    std::string country = "AA";
    std::vector<std::string> countries{"AA", "BB", "CC", "DD"};
    int first_year = 1985;
    int last_year = 2020;
    Vector6 psi = (Vector6() << -0.2, -0.01, 0.8, -0.18, -0.01, 0.7).finished();
    Matrix4 C = Matrix4::Identity();
    double births = 60000.0;            // age-0 exposure of the first country; others scale down
    double deviation_sd = 0.03;         // kappa shocks of the other countries
    std::optional<int> shock_year;      // one-year jump of K (e.g. a pandemic)
    double shock_K_male = 0.0;
    double shock_K_female = 0.0;
    std::vector<DegradeSpec> degrade;
    std::set<int> week53_years;
    Method method = Method::WeightedLikelihood;
    std::vector<double> grid{0.0, 1.0};
    std::size_t paths = 1000;
    int horizon = 2060;
    std::uint64_t sim_seed = 1;

    static FixtureParams defaults() {
        FixtureParams p;
        Eigen::Vector4d sd(0.15, 0.03, 0.14, 0.03);
        Matrix4 corr = Matrix4::Identity();
        corr(0, 2) = corr(2, 0) = 0.8;
        corr(1, 3) = corr(3, 1) = 0.5;
        p.C = sd.asDiagonal() * corr * sd.asDiagonal();
        p.shock_year = 2020;
        p.shock_K_male = 1.0;
        p.shock_K_female = 0.8;
        p.degrade = {{"AA", 2019, 2020, SourceKind::Stmf, SourceKind::Eurow},
                     {"BB", 2020, 2020, SourceKind::Stmf, SourceKind::Stmf}};
        p.week53_years = {2020};
        return p;
    }
};

inline FixtureParams parse_fixture_params(const nlohmann::json& j) {
    using detail::json_get;
    auto p = FixtureParams::defaults();
    if (j.contains("seed")) p.seed = json_get<std::uint64_t>(j, "seed", "fixture");
    if (j.contains("country")) p.country = json_get<std::string>(j, "country", "fixture");
    if (j.contains("countries")) p.countries = json_get<std::vector<std::string>>(j, "countries", "fixture");
    if (j.contains("years")) std::tie(p.first_year, p.last_year) = detail::json_pair(j, "years", "fixture");
    if (j.contains("psi")) {
        const auto v = json_get<std::vector<double>>(j, "psi", "fixture");
        if (v.size() != 6) throw ConfigError("fixture: psi needs 6 values");
        for (int i = 0; i < 6; ++i) p.psi(i) = v[static_cast<std::size_t>(i)];
    }
    if (j.contains("C")) {
        const auto v = json_get<std::vector<std::vector<double>>>(j, "C", "fixture");
        if (v.size() != 4) throw ConfigError("fixture: C must be 4x4");
        for (int r = 0; r < 4; ++r) {
            if (v[static_cast<std::size_t>(r)].size() != 4) throw ConfigError("fixture: C must be 4x4");
            for (int c = 0; c < 4; ++c) p.C(r, c) = v[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
        }
    }
    if (j.contains("births")) p.births = json_get<double>(j, "births", "fixture");
    if (j.contains("deviation_sd")) p.deviation_sd = json_get<double>(j, "deviation_sd", "fixture");
    if (j.contains("shock")) {
        const auto& s = j.at("shock");
        if (s.is_null()) {
            p.shock_year.reset();
        } else {
            p.shock_year = json_get<int>(s, "year", "shock");
            const auto k = json_get<std::vector<double>>(s, "K", "shock");
            if (k.size() != 2) throw ConfigError("fixture: shock.K needs [male, female]");
            p.shock_K_male = k[0];
            p.shock_K_female = k[1];
        }
    }
    if (j.contains("degrade")) {
        p.degrade.clear();
        for (const auto& d : j.at("degrade")) {
            DegradeSpec s;
            s.country = json_get<std::string>(d, "country", "degrade");
            std::tie(s.first_year, s.last_year) = detail::json_pair(d, "years", "degrade");
            if (d.contains("exposure")) s.exposure = parse_source_kind(json_get<std::string>(d, "exposure", "degrade"));
            if (d.contains("deaths")) s.deaths = parse_source_kind(json_get<std::string>(d, "deaths", "degrade"));
            if (s.exposure && *s.exposure != SourceKind::Stmf) throw ConfigError("fixture: exposures degrade to STMF only");
            if (s.deaths && !is_bucketed(*s.deaths)) throw ConfigError("fixture: deaths degrade to STMF or EUROW");
            p.degrade.push_back(std::move(s));
        }
    }
    if (j.contains("week53_years")) {
        const auto v = json_get<std::vector<int>>(j, "week53_years", "fixture");
        p.week53_years = {v.begin(), v.end()};
    }
    if (j.contains("method")) {
        const auto& m = j.at("method");
        const auto kind = json_get<std::string>(m, "kind", "method");
        if (kind != "weighted" && kind != "lee_miller") throw ConfigError("fixture: method.kind must be weighted or lee_miller");
        p.method = kind == "weighted" ? Method::WeightedLikelihood : Method::AdjustedLeeMiller;
        p.grid = json_get<std::vector<double>>(m, "grid", "method");
    }
    if (j.contains("simulation")) {
        const auto& s = j.at("simulation");
        if (s.contains("paths")) p.paths = json_get<std::size_t>(s, "paths", "simulation");
        if (s.contains("horizon")) p.horizon = json_get<int>(s, "horizon", "simulation");
        if (s.contains("seed")) p.sim_seed = json_get<std::uint64_t>(s, "seed", "simulation");
    }
    if (p.countries.empty() || std::find(p.countries.begin(), p.countries.end(), p.country) == p.countries.end()) {
        throw ConfigError("fixture: country must be one of countries");
    }
    if (p.last_year - p.first_year < 15) throw ConfigError("fixture: need at least 16 years");
    return p;
}

/// True generating quantities, kept for oracles.
struct FixtureTruth {
    LiLeeParams params;  // per country of interest; K uncentred
    std::map<std::string, std::map<Gender, std::vector<std::vector<double>>>> mu;        // [year][age 0..110]
    std::map<std::string, std::map<Gender, std::vector<std::vector<double>>>> exposure;  // [year][age 0..110]
    std::map<std::string, std::map<Gender, std::vector<std::vector<double>>>> deaths;    // [year][age 0..110]
    Vector6 psi;
    Matrix4 C;
};

struct FixtureResult {
    FixtureTruth truth;
    std::filesystem::path config_path;
};

namespace detail {

/// Weekly seasonal profile summing to one; a 53-week year sums to 53/52 so annualising gives back the total.
inline std::vector<double> weekly_profile(int weeks) {
    std::vector<double> w(static_cast<std::size_t>(weeks));
    double s = 0.0;
    for (int i = 0; i < weeks; ++i) {
        w[static_cast<std::size_t>(i)] = 1.0 + 0.2 * std::cos(2.0 * std::numbers::pi * i / weeks);
        s += w[static_cast<std::size_t>(i)];
    }
    const double total = weeks == 53 ? 53.0 / 52.0 : 1.0;
    for (auto& v : w) v *= total / s;
    return w;
}

inline double bucket_sum(const std::vector<double>& v, const AgeBucket& b) {
    double s = 0.0;
    const int hi = b.upper ? *b.upper : static_cast<int>(v.size()) - 1;
    for (int a = b.lower; a <= hi; ++a) s += v[static_cast<std::size_t>(a)];
    return s;
}

} // namespace detail

inline FixtureResult make_synthetic_fixture(const FixtureParams& p, const std::filesystem::path& out_dir) {
    constexpr int kTop = 90;
    constexpr int kMax = 110;
    const int nx = kTop + 1;
    const int ny = p.last_year - p.first_year + 1;
    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> z(0.0, 1.0);

    FixtureResult res;
    auto& truth = res.truth;
    truth.psi = p.psi;
    truth.C = p.C;
    truth.params.ages = AgeRange(0, kTop);
    truth.params.years = YearRange(p.first_year, p.last_year);

    // common age effects per gender
    std::map<Gender, std::vector<double>> A, B;
    for (Gender g : all_genders) {
        const double shift = g == Gender::Female ? -0.35 : 0.0;
        double ss = 0.0;
        for (int x = 0; x < nx; ++x) {
            const double gm = 2e-4 + 2.5e-5 * std::exp(0.098 * x) + 4e-3 * std::exp(-1.5 * x);
            A[g].push_back(std::log(gm) + shift);
            const double b = 1.0 + 0.6 * std::exp(-std::pow((x - 25.0) / 20.0, 2)) - 0.4 * x / 90.0;
            B[g].push_back(b);
            ss += b * b;
        }
        for (auto& b : B[g]) b /= std::sqrt(ss);
    }

    // period effects: K common per gender; kappa of the country of interest jointly with K via C
    const Eigen::LLT<Matrix4> llt(p.C);
    if (llt.info() != Eigen::Success) throw ConfigError("fixture: C is not positive definite");
    const Matrix4 L = llt.matrixL();
    std::map<Gender, std::vector<double>> K, kappa_main;
    Vector4 state(0.0, 0.0, 0.0, 0.0);
    for (int t = 0; t < ny; ++t) {
        if (t > 0) {
            Vector4 e;
            for (int i = 0; i < 4; ++i) e(i) = z(rng);
            const Vector4 eps = L * e;
            state(0) += p.psi(0) + eps(0);
            state(1) = p.psi(1) + p.psi(2) * state(1) + eps(1);
            state(2) += p.psi(3) + eps(2);
            state(3) = p.psi(4) + p.psi(5) * state(3) + eps(3);
        }
        K[Gender::Male].push_back(state(0));
        kappa_main[Gender::Male].push_back(state(1));
        K[Gender::Female].push_back(state(2));
        kappa_main[Gender::Female].push_back(state(3));
    }
    if (p.shock_year && *p.shock_year >= p.first_year && *p.shock_year <= p.last_year) {
        const auto t = static_cast<std::size_t>(*p.shock_year - p.first_year);
        K[Gender::Male][t] += p.shock_K_male;
        K[Gender::Female][t] += p.shock_K_female;
    }

    // country deviations
    struct Deviation {
        std::vector<double> alpha, beta, kappa;
    };
    std::map<std::pair<std::string, Gender>, Deviation> dev;
    for (std::size_t ci = 0; ci < p.countries.size(); ++ci) {
        const auto& c = p.countries[ci];
        for (Gender g : all_genders) {
            Deviation d;
            double ss = 0.0;
            for (int x = 0; x < nx; ++x) {
                d.alpha.push_back(0.08 * std::sin(0.07 * x + 1.3 * static_cast<double>(ci)) - 0.02 * static_cast<double>(ci));
                const double b = 1.0 + 0.5 * std::cos(0.05 * x + static_cast<double>(ci));
                d.beta.push_back(b);
                ss += b * b;
            }
            for (auto& b : d.beta) b /= std::sqrt(ss);
            if (c == p.country) {
                d.kappa = kappa_main[g];
            } else {
                const double cc = p.psi(g == Gender::Male ? 1 : 4), phi = p.psi(g == Gender::Male ? 2 : 5);
                double k = 0.0;
                for (int t = 0; t < ny; ++t) {
                    if (t > 0) k = cc + phi * k + p.deviation_sd * z(rng);
                    d.kappa.push_back(k);
                }
            }
            dev[{c, g}] = std::move(d);
        }
    }
    for (Gender g : all_genders) {
        const auto& d = dev.at({p.country, g});
        truth.params.by_gender[g] = GenderParams{A[g], B[g], K[g], d.alpha, d.beta, d.kappa};
    }

    // populations through the years and Poisson deaths
    for (std::size_t ci = 0; ci < p.countries.size(); ++ci) {
        const auto& c = p.countries[ci];
        const double births0 = p.births * (1.0 - 0.15 * static_cast<double>(ci));
        for (Gender g : all_genders) {
            const auto& d = dev.at({c, g});
            auto& mu_c = truth.mu[c][g];
            auto& e_c = truth.exposure[c][g];
            auto& d_c = truth.deaths[c][g];
            for (int t = 0; t < ny; ++t) {
                std::vector<double> mu90(static_cast<std::size_t>(nx));
                for (int x = 0; x < nx; ++x) {
                    const auto xs = static_cast<std::size_t>(x);
                    const auto ts = static_cast<std::size_t>(t);
                    mu90[xs] = std::exp(A[g][xs] + B[g][xs] * K[g][ts] + d.alpha[xs] + d.beta[xs] * d.kappa[ts]);
                }
                auto closed = kannisto_close_mu(mu90);
                closed.resize(kMax + 1);
                mu_c.push_back(closed);

                std::vector<double> e(kMax + 1);
                const double births = births0 * (1.0 + 0.1 * std::sin(0.3 * t)) * (g == Gender::Male ? 1.05 : 1.0);
                if (t == 0) {
                    double cum = 0.0;
                    for (int x = 0; x <= kMax; ++x) {
                        e[static_cast<std::size_t>(x)] = births * std::exp(-cum) * (1.0 + 0.2 * std::exp(-std::pow((x - 40.0) / 8.0, 2)));
                        cum += closed[static_cast<std::size_t>(x)];
                    }
                } else {
                    const auto& prev = e_c.back();
                    const auto& mprev = mu_c[static_cast<std::size_t>(t - 1)];
                    e[0] = births;
                    for (int x = 1; x <= kMax; ++x) {
                        e[static_cast<std::size_t>(x)] = prev[static_cast<std::size_t>(x - 1)] * std::exp(-mprev[static_cast<std::size_t>(x - 1)]);
                    }
                }
                std::vector<double> dd(kMax + 1);
                for (int x = 0; x <= kMax; ++x) {
                    const double m = closed[static_cast<std::size_t>(x)] * e[static_cast<std::size_t>(x)];
                    dd[static_cast<std::size_t>(x)] = static_cast<double>(std::poisson_distribution<long long>(m)(rng));
                }
                e_c.push_back(std::move(e));
                d_c.push_back(std::move(dd));
            }
        }
    }

    // degrade and write
    std::map<SourceKey, SourceKind> bucketed;
    std::set<std::tuple<std::string, int>> stmf_years, eurow_years;
    for (const auto& d : p.degrade) {
        for (int y = d.first_year; y <= d.last_year; ++y) {
            if (y <= p.first_year || y > p.last_year) throw ConfigError("fixture: degraded year outside (first, last]");
            if (d.exposure) {
                bucketed[{d.country, y, Quantity::Exposure}] = *d.exposure;
                stmf_years.insert({d.country, y});
                stmf_years.insert({d.country, y - 1});
            }
            if (d.deaths) {
                bucketed[{d.country, y, Quantity::Deaths}] = *d.deaths;
                (*d.deaths == SourceKind::Stmf ? stmf_years : eurow_years).insert({d.country, y});
            }
        }
    }

    FragmentMap hmd, full;
    for (const auto& c : p.countries) {
        for (Gender g : all_genders) {
            auto& fh = hmd[{c, g}];
            auto& ff = full[{c, g}];
            fh.country = ff.country = c;
            fh.gender = ff.gender = g;
            for (int t = 0; t < ny; ++t) {
                const int year = p.first_year + t;
                const bool vd = bucketed.count({c, year, Quantity::Deaths}) > 0;
                const bool ve = bucketed.count({c, year, Quantity::Exposure}) > 0;
                for (int x = 0; x <= kMax; ++x) {
                    const double dv = truth.deaths[c][g][static_cast<std::size_t>(t)][static_cast<std::size_t>(x)];
                    const double ev = truth.exposure[c][g][static_cast<std::size_t>(t)][static_cast<std::size_t>(x)];
                    ff.cells[{year, x}] = Cell{dv, ev, Provenance::Hmd, Provenance::Hmd};
                    if (vd && ve) continue;
                    Cell cell;
                    if (!vd) cell.deaths = dv;
                    if (!ve) cell.exposure = ev;
                    fh.cells[{year, x}] = cell;
                }
            }
        }
    }
    std::filesystem::create_directories(out_dir);
    write_individual_age_csv(out_dir / "hmd.csv", hmd, false);
    write_individual_age_csv(out_dir / "truth" / "individual.csv", full, false);
    write_params_csv(out_dir / "truth" / "params.csv", truth.params);
    {
        TimeSeriesFit tf;
        tf.psi = p.psi;
        tf.C = p.C;
        write_fit_csv(out_dir / "truth" / "dynamics.csv", tf);
    }

    auto weekly = [&](const std::string& c, Gender g, int year, WeeklyShape shape) {
        const int weeks = p.week53_years.count(year) ? 53 : 52;
        auto s = BucketedWeeklySeries::empty(c, g, year, shape, weeks);
        const auto t = static_cast<std::size_t>(year - p.first_year);
        const auto& dv = truth.deaths.at(c).at(g)[t];
        const auto& ev = truth.exposure.at(c).at(g)[t];
        const auto prof = detail::weekly_profile(weeks);
        for (std::size_t b = 0; b < s.buckets.size(); ++b) {
            const double D = detail::bucket_sum(dv, s.buckets[b]);
            const double E = detail::bucket_sum(ev, s.buckets[b]);
            for (int w = 0; w < weeks; ++w) {
                auto& rec = s.weeks[b][static_cast<std::size_t>(w)];
                rec.deaths = D * prof[static_cast<std::size_t>(w)];
                if (shape == WeeklyShape::Stmf) {
                    // rates only: weekly exposure is recovered as deaths / rate
                    rec.death_rate = *rec.deaths / (E / 52.0);
                }
            }
        }
        return s;
    };
    std::vector<BucketedWeeklySeries> stmf, eurow;
    for (const auto& [c, y] : stmf_years)
        for (Gender g : all_genders) stmf.push_back(weekly(c, g, y, WeeklyShape::Stmf));
    for (const auto& [c, y] : eurow_years)
        for (Gender g : all_genders) eurow.push_back(weekly(c, g, y, WeeklyShape::Eurow));

    RunConfig cfg;
    cfg.country = p.country;
    cfg.common_pool = p.countries;
    cfg.ages = AgeRange(0, kTop);
    cfg.years = YearRange(p.first_year, p.last_year);
    cfg.inputs.push_back({"hmd.csv", SourceKind::Hmd});
    if (!stmf.empty()) {
        write_weekly_csv(out_dir / "stmf.csv", stmf, WeeklyShape::Stmf);
        cfg.inputs.push_back({"stmf.csv", SourceKind::Stmf});
    }
    if (!eurow.empty()) {
        write_weekly_csv(out_dir / "eurow.csv", eurow, WeeklyShape::Eurow);
        cfg.inputs.push_back({"eurow.csv", SourceKind::Eurow});
    }
    for (const auto& c : p.countries) {
        for (auto q : {Quantity::Deaths, Quantity::Exposure}) {
            // runs of consecutive years with one source
            int start = p.first_year;
            auto src_of = [&](int y) {
                auto it = bucketed.find({c, y, q});
                return it == bucketed.end() ? SourceKind::Hmd : it->second;
            };
            for (int y = p.first_year + 1; y <= p.last_year + 1; ++y) {
                if (y == p.last_year + 1 || src_of(y) != src_of(start)) {
                    cfg.sources.push_back({c, start, y - 1, {q}, src_of(start)});
                    start = y;
                }
            }
        }
    }
    cfg.aux_start_year = p.first_year;
    cfg.method = p.method;
    cfg.grid = p.grid;
    cfg.paths = p.paths;
    cfg.horizon = p.horizon;
    cfg.seed = p.sim_seed;
    cfg.out_dir = "out";
    res.config_path = out_dir / "config.json";
    csv::write_text(res.config_path, run_config_json(cfg).dump(2) + "\n");
    return res;
}

} // namespace mortkit
