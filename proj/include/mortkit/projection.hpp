#pragma once

// Simulation of future period effects, the mu -> q link, Kannisto closure to age 120,
// period/cohort life expectancies and fan-chart quantiles.

#include "mortkit/core_types.hpp"
#include "mortkit/csv.hpp"
#include "mortkit/error.hpp"
#include "mortkit/lilee.hpp"
#include "mortkit/time_dynamics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace mortkit {

inline constexpr int kClosureTopAge = 120;
inline constexpr int kKannistoFirstAge = 80;
inline constexpr int kKannistoLastAge = 90;

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Independent engine for path `index`; identical for any thread layout.
inline std::mt19937_64 path_engine(std::uint64_t seed, std::uint64_t index) {
    return std::mt19937_64(splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ull)));
}

/// Runs body(i) for i in [0, n) on up to `jobs` threads with static contiguous chunks.
template <class F>
void parallel_for(std::size_t n, unsigned jobs, F&& body) {
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    const std::size_t chunk = (n + jobs - 1) / jobs;
    for (unsigned j = 0; j < jobs; ++j) {
        pool.emplace_back([&, j] {
            try {
                for (std::size_t i = j * chunk; i < std::min(n, (j + 1) * chunk); ++i) body(i);
            } catch (...) {
                errors[j] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Period effects
// ---------------------------------------------------------------------------

struct ScenarioSpec {
    int jump_off_year = 0;   // t_max
    int horizon = 0;         // final projection year T
    std::size_t paths = 1;
    std::uint64_t seed = 0;
    Vector4 jump_off = Vector4::Zero();  // (K^M, kappa^M, K^F, kappa^F) at t_max
};

/// Period effects for years t_max..T; year offset 0 is the jump-off for every path.
struct SimulationPaths {
    int first_year = 0;
    int last_year = 0;
    std::size_t paths = 0;
    std::vector<double> values;  // [path][year][component]

    std::size_t years() const { return static_cast<std::size_t>(last_year - first_year + 1); }
    double at(std::size_t path, int year, int component) const {
        return values[(path * years() + static_cast<std::size_t>(year - first_year)) * 4 +
                      static_cast<std::size_t>(component)];
    }
    double K(std::size_t path, Gender g, int year) const { return at(path, year, g == Gender::Male ? 0 : 2); }
    double kappa(std::size_t path, Gender g, int year) const { return at(path, year, g == Gender::Male ? 1 : 3); }
};

/// Square-root factor of C: Cholesky when positive definite, otherwise a symmetric eigen factor
/// (clipping negative eigenvalues), which also covers the zero-noise case.
inline Matrix4 noise_factor(const Matrix4& C) {
    Eigen::LLT<Matrix4> llt(C);
    if (llt.info() == Eigen::Success) {
        const Matrix4 L = llt.matrixL();
        if (L.diagonal().minCoeff() > 0.0) return L;
    }
    Eigen::SelfAdjointEigenSolver<Matrix4> eig(C);
    const Vector4 root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * root.asDiagonal();
}

inline void step_period_effects(const Vector6& psi, double* state, const Vector4& noise) {
    for (int g = 0; g < 2; ++g) {
        state[2 * g] = state[2 * g] + psi(3 * g) + noise(2 * g);
        state[2 * g + 1] = psi(3 * g + 1) + psi(3 * g + 2) * state[2 * g + 1] + noise(2 * g + 1);
    }
}

/// Generates `spec.paths` trajectories of (K^M, kappa^M, K^F, kappa^F) from the fitted dynamics.
inline SimulationPaths simulate_period_effects(const TimeSeriesFit& fit, const ScenarioSpec& spec, unsigned jobs = 1) {
    if (spec.horizon <= spec.jump_off_year) throw ValidationError("projection horizon must exceed the jump-off year");
    if (spec.paths < 1) throw ValidationError("need at least one path");
    SimulationPaths out{spec.jump_off_year, spec.horizon, spec.paths, {}};
    const std::size_t ny = out.years();
    out.values.resize(spec.paths * ny * 4);
    const Matrix4 L = noise_factor(fit.C);
    parallel_for(spec.paths, jobs, [&](std::size_t i) {
        auto engine = path_engine(spec.seed, i);
        std::normal_distribution<double> z(0.0, 1.0);
        double* row = &out.values[i * ny * 4];
        for (int c = 0; c < 4; ++c) row[c] = spec.jump_off(c);
        for (std::size_t t = 1; t < ny; ++t) {
            Vector4 u;
            for (int c = 0; c < 4; ++c) u(c) = z(engine);
            double* cur = row + t * 4;
            std::copy(cur - 4, cur, cur);
            step_period_effects(fit.psi, cur, L * u);
        }
    });
    return out;
}

/// The noise-free path (epsilon = delta = 0).
inline SimulationPaths central_path(const TimeSeriesFit& fit, const ScenarioSpec& spec) {
    SimulationPaths out{spec.jump_off_year, spec.horizon, 1, {}};
    out.values.resize(out.years() * 4);
    for (int c = 0; c < 4; ++c) out.values[static_cast<std::size_t>(c)] = spec.jump_off(c);
    for (std::size_t t = 1; t < out.years(); ++t) {
        double* cur = &out.values[t * 4];
        std::copy(cur - 4, cur, cur);
        step_period_effects(fit.psi, cur, Vector4::Zero());
    }
    return out;
}

/// Calibrated period effects of both genders, the input of the time-series fit.
inline PeriodEffectSeries period_effects_of(const LiLeeParams& p) {
    const auto& m = p.at(Gender::Male);
    const auto& f = p.at(Gender::Female);
    return {p.years.first(), m.K, m.kappa, f.K, f.kappa};
}

/// Jump-off period effects (K^M, kappa^M, K^F, kappa^F) in the last calibration year.
inline Vector4 jump_off_of(const LiLeeParams& p) {
    const auto& m = p.at(Gender::Male);
    const auto& f = p.at(Gender::Female);
    return {m.K.back(), m.kappa.back(), f.K.back(), f.kappa.back()};
}

// ---------------------------------------------------------------------------
// Mortality rates and closure
// ---------------------------------------------------------------------------

/// q = 1 - exp(-mu).
inline double q_from_mu(double mu) { return -std::expm1(-mu); }

inline double mu_from_q(double q) { return -std::log1p(-q); }

/// Model forces of mortality for one gender and period-effect pair over the calibrated ages.
inline std::vector<double> model_mu(const GenderParams& p, double K, double kappa) {
    std::vector<double> mu(p.A.size());
    for (std::size_t x = 0; x < mu.size(); ++x) mu[x] = evaluate_mu(p, x, K, kappa);
    return mu;
}

/// q over the calibrated ages for every path and projection year of one gender: [path][year][age].
inline std::vector<double> paths_to_mortality(const LiLeeParams& params, Gender g, const SimulationPaths& paths) {
    const auto& p = params.at(g);
    const std::size_t nx = p.A.size(), ny = paths.years();
    std::vector<double> q(paths.paths * ny * nx);
    for (std::size_t i = 0; i < paths.paths; ++i) {
        for (std::size_t t = 0; t < ny; ++t) {
            const int year = paths.first_year + static_cast<int>(t);
            const double K = paths.K(i, g, year), kappa = paths.kappa(i, g, year);
            for (std::size_t x = 0; x < nx; ++x) q[(i * ny + t) * nx + x] = q_from_mu(evaluate_mu(p, x, K, kappa));
        }
    }
    return q;
}

struct KannistoFit {
    double log_c = 0.0;
    double slope = 0.0;
    std::vector<std::string> warnings;

    double mu(int age) const {
        const double z = log_c + slope * static_cast<double>(age);
        // the logistic stays below one; keep it so in floating point too
        return std::min(1.0 / (1.0 + std::exp(-z)), 1.0 - 1e-12);
    }
};

/// Least-squares fit of logit(mu_x) = ln c + slope * x over the given ages.
inline KannistoFit fit_kannisto(std::span<const double> mu, int first_age) {
    KannistoFit fit;
    const std::size_t n = mu.size();
    if (n < 2) throw ValidationError("Kannisto fit needs at least two ages");
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    bool clamped = false;
    for (std::size_t i = 0; i < n; ++i) {
        double m = mu[i];
        if (!(m > 0.0)) throw DomainError("Kannisto fit needs positive forces of mortality");
        if (m >= 1.0) {
            m = 1.0 - 1e-12;
            clamped = true;
        }
        const double x = static_cast<double>(first_age) + static_cast<double>(i);
        const double y = std::log(m / (1.0 - m));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double dn = static_cast<double>(n);
    fit.slope = (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
    fit.log_c = (sy - fit.slope * sx) / dn;
    if (clamped) fit.warnings.push_back("force of mortality >= 1 clamped before the Kannisto fit");
    if (!(fit.slope > 0.0)) fit.warnings.push_back("Kannisto slope is not positive; extrapolation is flat or decreasing");
    return fit;
}

/// Extends mu over ages 0..90 to 0..120 with the Kannisto logistic fitted on 80..90.
inline std::vector<double> kannisto_close_mu(std::span<const double> mu_0_90, std::vector<std::string>* warnings = nullptr) {
    if (mu_0_90.size() != static_cast<std::size_t>(kKannistoLastAge + 1)) {
        throw ValidationError("Kannisto closure expects forces of mortality for ages 0..90");
    }
    const auto fit = fit_kannisto(mu_0_90.subspan(kKannistoFirstAge), kKannistoFirstAge);
    if (warnings) warnings->insert(warnings->end(), fit.warnings.begin(), fit.warnings.end());
    std::vector<double> out(mu_0_90.begin(), mu_0_90.end());
    for (int x = kKannistoLastAge + 1; x <= kClosureTopAge; ++x) out.push_back(fit.mu(x));
    return out;
}

/// q over ages 0..120 from q over ages 0..90.
inline std::vector<double> kannisto_close(std::span<const double> q_0_90, std::vector<std::string>* warnings = nullptr) {
    std::vector<double> mu(q_0_90.size());
    for (std::size_t x = 0; x < mu.size(); ++x) {
        if (!(q_0_90[x] > 0.0 && q_0_90[x] < 1.0)) throw DomainError("mortality rates must lie in (0, 1)");
        mu[x] = mu_from_q(q_0_90[x]);
    }
    auto closed = kannisto_close_mu(mu, warnings);
    for (auto& v : closed) v = q_from_mu(v);
    return closed;
}

// ---------------------------------------------------------------------------
// Life expectancy
// ---------------------------------------------------------------------------

/// (1 - exp(-mu)) / mu with its limit 1 at mu = 0.
inline double exposure_fraction(double mu) {
    if (mu == 0.0) return 1.0;
    if (std::isinf(mu)) return 0.0;
    return -std::expm1(-mu) / mu;
}

/// Sum over the forces of mortality mu_x, mu_{x+1}, ... (the remaining lifetime path) of survival times
/// the expected fraction of the year lived.
inline double life_expectancy_along(std::span<const double> mu_path) {
    double e = 0.0, cumulative = 0.0;
    for (double m : mu_path) {
        if (m < 0.0) throw DomainError("negative force of mortality");
        e += std::exp(-cumulative) * exposure_fraction(m);
        cumulative += m;
    }
    return e;
}

/// Period life expectancy at age x from a curve over ages 0..120 of one year.
inline double period_life_expectancy(std::span<const double> mu_0_120, int age) {
    if (mu_0_120.size() != static_cast<std::size_t>(kClosureTopAge + 1)) {
        throw ValidationError("period life expectancy needs a curve over ages 0..120");
    }
    if (age < 0 || age > kClosureTopAge) throw ValidationError("age outside 0..120");
    return life_expectancy_along(mu_0_120.subspan(static_cast<std::size_t>(age)));
}

/// Closed mortality curves (ages 0..120) for consecutive years.
struct MuSurface {
    int first_year = 0;
    std::vector<std::vector<double>> curves;

    int last_year() const { return first_year + static_cast<int>(curves.size()) - 1; }
    double operator()(int age, int year) const {
        return curves[static_cast<std::size_t>(year - first_year)][static_cast<std::size_t>(age)];
    }
};

/// Cohort life expectancy of an x year old in year t: mu evaluated along the diagonal (x+k, t+k).
inline double cohort_life_expectancy(const MuSurface& s, int age, int year) {
    if (age < 0 || age > kClosureTopAge) throw ValidationError("age outside 0..120");
    if (year < s.first_year) throw ValidationError("cohort start year precedes the surface");
    const int needed = year + kClosureTopAge - age;
    if (needed > s.last_year()) {
        throw ValidationError("cohort life expectancy at age " + std::to_string(age) + " in " + std::to_string(year) +
                              " needs mortality up to " + std::to_string(needed) + "; extend the horizon");
    }
    std::vector<double> diag;
    for (int k = 0; age + k <= kClosureTopAge; ++k) diag.push_back(s(age + k, year + k));
    return life_expectancy_along(diag);
}

// ---------------------------------------------------------------------------
// Quantiles and fan chart
// ---------------------------------------------------------------------------

inline constexpr std::array<double, 3> kFanProbes{0.005, 0.5, 0.995};

/// Empirical quantile by linear interpolation between order statistics (h = (n-1) p).
inline double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw ValidationError("quantile of an empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("probe outside [0, 1]");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline std::vector<double> quantile_summary(std::vector<double> values, std::span<const double> probes) {
    if (values.size() < 2) throw ValidationError("quantile summary needs at least two paths");
    std::sort(values.begin(), values.end());
    std::vector<double> out;
    for (double p : probes) out.push_back(quantile_sorted(values, p));
    return out;
}

struct FanChartRow {
    std::string quantity;  // K, kappa, q, e_per, e_coh
    Gender gender = Gender::Male;
    std::optional<int> age;
    int year = 0;
    std::string probe;  // 0.005, 0.5, 0.995 or best
    double value = 0.0;
};

inline int quantity_rank(const std::string& q) {
    static const std::array<const char*, 5> order{"K", "kappa", "q", "e_per", "e_coh"};
    for (std::size_t i = 0; i < order.size(); ++i)
        if (q == order[i]) return static_cast<int>(i);
    return static_cast<int>(order.size());
}

inline void sort_fan_chart(std::vector<FanChartRow>& rows) {
    auto probe_rank = [](const std::string& p) { return p == "best" ? 2.0 : std::stod(p); };
    std::stable_sort(rows.begin(), rows.end(), [&](const FanChartRow& a, const FanChartRow& b) {
        const auto ka = std::tuple(quantity_rank(a.quantity), index_of(a.gender), a.age.value_or(-1), a.year,
                                   probe_rank(a.probe));
        const auto kb = std::tuple(quantity_rank(b.quantity), index_of(b.gender), b.age.value_or(-1), b.year,
                                   probe_rank(b.probe));
        return ka < kb;
    });
}

inline std::string fan_chart_csv(const std::vector<FanChartRow>& rows) {
    std::string text = "quantity,gender,age,year,probe,value\n";
    for (const auto& r : rows) {
        text += r.quantity + "," + to_char(r.gender) + "," + (r.age ? std::to_string(*r.age) : "") + "," +
                std::to_string(r.year) + "," + r.probe + "," + csv::format_double(r.value) + "\n";
    }
    return text;
}

inline std::string probe_label(double p) {
    if (p == 0.005) return "0.005";
    if (p == 0.5) return "0.5";
    if (p == 0.995) return "0.995";
    return csv::format_double(p);
}

// ---------------------------------------------------------------------------
// Scenario projection
// ---------------------------------------------------------------------------

struct ProjectionRequest {
    std::vector<int> report_ages{0, 25, 45, 65, 85};
    unsigned jobs = 1;
};

struct ProjectionResult {
    std::vector<FanChartRow> fan_chart;
    int simulated_until = 0;
    std::vector<std::string> warnings;
};

namespace detail {

/// Closed mu surface over years t_max..last for one path and gender.
inline MuSurface closed_surface(const GenderParams& p, const SimulationPaths& paths, std::size_t i, Gender g,
                                std::vector<std::string>* warnings) {
    MuSurface s{paths.first_year, {}};
    for (int year = paths.first_year; year <= paths.last_year; ++year) {
        const auto mu = model_mu(p, paths.K(i, g, year), paths.kappa(i, g, year));
        s.curves.push_back(kannisto_close_mu(mu, warnings));
    }
    return s;
}

} // namespace detail

/// Simulates the scenario and summarises K, kappa, q and period LE for years t_max..T and cohort LE
/// in t_max at the report ages. The simulation horizon is extended internally as far as the cohort
/// life expectancies need.
inline ProjectionResult project_scenario(const LiLeeParams& params, const TimeSeriesFit& fit, ScenarioSpec spec,
                                         const ProjectionRequest& req = {}) {
    if (params.ages.min() != 0 || params.ages.max() != kKannistoLastAge) {
        throw ValidationError("projection needs model ages 0..90 for the Kannisto closure");
    }
    const int report_last = spec.horizon;
    int youngest = kClosureTopAge;
    for (int a : req.report_ages) {
        if (a < 0 || a > kClosureTopAge) throw ValidationError("report age outside 0..120");
        youngest = std::min(youngest, a);
    }
    spec.horizon = std::max(spec.horizon, spec.jump_off_year + kClosureTopAge - youngest);

    ProjectionResult result;
    result.simulated_until = spec.horizon;
    const auto paths = simulate_period_effects(fit, spec, req.jobs);
    const auto centre = central_path(fit, spec);

    const int n_years = report_last - spec.jump_off_year + 1;
    const std::size_t n_ages = req.report_ages.size();
    // layout per gender: K[n_years], kappa[n_years], q[n_ages][n_years], e_per[n_ages][n_years], e_coh[n_ages]
    const std::size_t per_gender = 2 * static_cast<std::size_t>(n_years) * (1 + n_ages) + n_ages;
    const std::size_t width = 2 * per_gender;
    auto summarise = [&](const SimulationPaths& src, std::size_t i, double* out, std::vector<std::string>* warn) {
        for (Gender g : all_genders) {
            double* o = out + index_of(g) * per_gender;
            const auto surface = detail::closed_surface(params.at(g), src, i, g, warn);
            for (int t = 0; t < n_years; ++t) {
                const int year = spec.jump_off_year + t;
                o[t] = src.K(i, g, year);
                o[n_years + t] = src.kappa(i, g, year);
                const auto& curve = surface.curves[static_cast<std::size_t>(t)];
                for (std::size_t a = 0; a < n_ages; ++a) {
                    const int age = req.report_ages[a];
                    o[2 * n_years + a * static_cast<std::size_t>(n_years) + t] = q_from_mu(curve[static_cast<std::size_t>(age)]);
                    o[2 * n_years + (n_ages + a) * static_cast<std::size_t>(n_years) + t] =
                        period_life_expectancy(curve, age);
                }
            }
            for (std::size_t a = 0; a < n_ages; ++a) {
                o[2 * static_cast<std::size_t>(n_years) * (1 + n_ages) + a] =
                    cohort_life_expectancy(surface, req.report_ages[a], spec.jump_off_year);
            }
        }
    };

    std::vector<double> table(spec.paths * width);
    std::vector<std::vector<std::string>> path_warnings(spec.paths);
    parallel_for(spec.paths, req.jobs, [&](std::size_t i) { summarise(paths, i, &table[i * width], &path_warnings[i]); });
    std::vector<double> best(width);
    std::vector<std::string> central_warnings;
    summarise(centre, 0, best.data(), &central_warnings);
    std::map<std::string, std::size_t> affected;
    for (const auto& w : path_warnings) {
        std::set<std::string> distinct(w.begin(), w.end());
        for (const auto& m : distinct) ++affected[m];
    }
    for (const auto& w : central_warnings)
        if (!affected.count(w)) result.warnings.push_back("central path: " + w);
    for (const auto& [m, n] : affected) result.warnings.push_back(m + " (" + std::to_string(n) + " paths)");

    auto emit = [&](std::size_t column, const std::string& quantity, Gender g, std::optional<int> age, int year) {
        std::vector<double> v(spec.paths);
        for (std::size_t i = 0; i < spec.paths; ++i) v[i] = table[i * width + column];
        if (spec.paths >= 2) {
            const auto qs = quantile_summary(std::move(v), kFanProbes);
            for (std::size_t k = 0; k < kFanProbes.size(); ++k)
                result.fan_chart.push_back({quantity, g, age, year, probe_label(kFanProbes[k]), qs[k]});
        }
        result.fan_chart.push_back({quantity, g, age, year, "best", best[column]});
    };
    for (Gender g : all_genders) {
        const std::size_t base = index_of(g) * per_gender;
        for (int t = 0; t < n_years; ++t) {
            const int year = spec.jump_off_year + t;
            emit(base + static_cast<std::size_t>(t), "K", g, std::nullopt, year);
            emit(base + static_cast<std::size_t>(n_years + t), "kappa", g, std::nullopt, year);
            for (std::size_t a = 0; a < n_ages; ++a) {
                const int age = req.report_ages[a];
                emit(base + 2 * static_cast<std::size_t>(n_years) + a * static_cast<std::size_t>(n_years) + static_cast<std::size_t>(t), "q", g, age, year);
                emit(base + 2 * static_cast<std::size_t>(n_years) + (n_ages + a) * static_cast<std::size_t>(n_years) + static_cast<std::size_t>(t), "e_per", g, age, year);
            }
        }
        for (std::size_t a = 0; a < n_ages; ++a) {
            emit(base + 2 * static_cast<std::size_t>(n_years) * (1 + n_ages) + a, "e_coh", g, req.report_ages[a],
                 spec.jump_off_year);
        }
    }
    sort_fan_chart(result.fan_chart);
    return result;
}

} // namespace mortkit
