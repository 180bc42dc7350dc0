#pragma once

#include "mortkit/core_types.hpp"
#include "mortkit/csv.hpp"
#include "mortkit/error.hpp"
#include "mortkit/mortality_data.hpp"

#include <Eigen/Dense>

#include <array>

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace mortkit {

struct FitOptions {
    double rel_tol = 1e-10;  // relative log-likelihood improvement per sweep
    int max_sweeps = 10000;
    double grad_tol = 1e-8;  // norm of the score over the free parameters
};

/// One Poisson Lee-Carter block: ln mu_{x,t} = offset_{x,t} + a_x + b_x k_t.
struct LeeCarterBlock {
    std::vector<double> a;
    std::vector<double> b;
    std::vector<double> k;
    double loglik = 0.0;
    int sweeps = 0;
    std::vector<double> loglik_trace;  // after each sweep
};

class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& what, LeeCarterBlock last)
        : NumericalError(what), last_{std::move(last)} {}
    const LeeCarterBlock& last_iterate() const noexcept { return last_; }

private:
    LeeCarterBlock last_;
};

namespace detail {

inline double offset_at(const Grid* offset, std::size_t x, std::size_t t) {
    return offset ? (*offset)(x, t) : 0.0;
}

inline double cell_loglik(double d, double e, double log_mu) { return d * log_mu - e * std::exp(log_mu); }

} // namespace detail

/// Poisson log-likelihood sum_{x,t} (d ln mu - E mu) without the factorial term.
inline double poisson_loglik(const Grid& d, const Grid& e, const Grid* offset, std::span<const double> a,
                             std::span<const double> b, std::span<const double> k) {
    double ll = 0.0;
    for (std::size_t x = 0; x < d.ages(); ++x) {
        for (std::size_t t = 0; t < d.years(); ++t) {
            ll += detail::cell_loglik(d(x, t), e(x, t), detail::offset_at(offset, x, t) + a[x] + b[x] * k[t]);
        }
    }
    return ll;
}

/// Saturated log-likelihood sum (d ln(d/E) - d), with 0 ln 0 = 0.
inline double saturated_loglik(const Grid& d, const Grid& e) {
    double ll = 0.0;
    for (std::size_t x = 0; x < d.ages(); ++x) {
        for (std::size_t t = 0; t < d.years(); ++t) {
            if (d(x, t) > 0.0) ll += d(x, t) * std::log(d(x, t) / e(x, t));
            ll -= d(x, t);
        }
    }
    return ll;
}

struct PoissonScore {
    std::vector<double> a, b, k;
};

/// Analytic gradient of `poisson_loglik` with respect to a, b and k.
inline PoissonScore poisson_score(const Grid& d, const Grid& e, const Grid* offset, std::span<const double> a,
                                  std::span<const double> b, std::span<const double> k) {
    PoissonScore s{std::vector<double>(a.size()), std::vector<double>(b.size()), std::vector<double>(k.size())};
    for (std::size_t x = 0; x < d.ages(); ++x) {
        for (std::size_t t = 0; t < d.years(); ++t) {
            const double resid = d(x, t) - e(x, t) * std::exp(detail::offset_at(offset, x, t) + a[x] + b[x] * k[t]);
            s.a[x] += resid;
            s.b[x] += resid * k[t];
            s.k[t] += resid * b[x];
        }
    }
    return s;
}

/// How the period index is identified.
enum class PeriodConstraint {
    SumZero,   // sum_t k_t = 0, level absorbed into a_x
    PinLast,   // k_{t_max} = 0, a_x held fixed
};

/// Cyclic Newton-Raphson maximisation of the Poisson likelihood for one Lee-Carter block.
/// With `fixed_a` the age levels are not estimated and `constraint` must be PinLast.
inline LeeCarterBlock fit_poisson_lee_carter(const Grid& d, const Grid& e, const Grid* offset,
                                             const std::optional<std::vector<double>>& fixed_a,
                                             PeriodConstraint constraint, const FitOptions& opts = {}) {
    const std::size_t nx = d.ages();
    const std::size_t nt = d.years();
    if (nx == 0 || nt == 0) throw ValidationError("empty grid");
    if (e.ages() != nx || e.years() != nt) throw ValidationError("deaths and exposure grids differ in shape");
    for (std::size_t x = 0; x < nx; ++x) {
        double row = 0.0;
        for (std::size_t t = 0; t < nt; ++t) {
            if (!(e(x, t) > 0.0)) throw ValidationError("nonpositive exposure at age index " + std::to_string(x));
            if (d(x, t) < 0.0) throw ValidationError("negative deaths at age index " + std::to_string(x));
            row += d(x, t);
        }
        if (!fixed_a && row <= 0.0) {
            throw NumericalError("likelihood unbounded: no deaths at age index " + std::to_string(x));
        }
    }

    LeeCarterBlock fit;
    fit.b.assign(nx, 1.0 / std::sqrt(static_cast<double>(nx)));
    fit.k.assign(nt, 0.0);
    if (fixed_a) {
        if (fixed_a->size() != nx) throw ValidationError("fixed age level has wrong length");
        fit.a = *fixed_a;
    } else {
        fit.a.resize(nx);
        for (std::size_t x = 0; x < nx; ++x) {
            double sd = 0.0, se = 0.0;
            for (std::size_t t = 0; t < nt; ++t) {
                sd += d(x, t);
                se += e(x, t) * std::exp(detail::offset_at(offset, x, t));
            }
            fit.a[x] = std::log(sd / se);
        }
    }
    const std::size_t pinned = constraint == PeriodConstraint::PinLast ? nt - 1 : nt;

    auto log_mu = [&](std::size_t x, std::size_t t) {
        return detail::offset_at(offset, x, t) + fit.a[x] + fit.b[x] * fit.k[t];
    };
    auto row_ll = [&](std::size_t x) {
        double ll = 0.0;
        for (std::size_t t = 0; t < nt; ++t) ll += detail::cell_loglik(d(x, t), e(x, t), log_mu(x, t));
        return ll;
    };
    auto col_ll = [&](std::size_t t) {
        double ll = 0.0;
        for (std::size_t x = 0; x < nx; ++x) ll += detail::cell_loglik(d(x, t), e(x, t), log_mu(x, t));
        return ll;
    };
    // Newton step on one coordinate with step halving so the block likelihood never decreases.
    auto newton = [](double& param, double grad, double hess, auto&& block_ll) {
        if (!(hess > 0.0) || grad == 0.0) return;
        const double start = param;
        const double before = block_ll();
        double step = grad / hess;
        for (int halvings = 0; halvings < 60; ++halvings) {
            param = start + step;
            if (block_ll() >= before) return;
            step *= 0.5;
        }
        param = start;
    };
    auto normalise = [&]() {
        if (constraint == PeriodConstraint::SumZero) {
            const double mean = std::accumulate(fit.k.begin(), fit.k.end(), 0.0) / static_cast<double>(nt);
            for (std::size_t x = 0; x < nx; ++x) fit.a[x] += fit.b[x] * mean;
            for (auto& v : fit.k) v -= mean;
        }
        double ss = 0.0;
        for (double v : fit.b) ss += v * v;
        const double norm = std::sqrt(ss);
        if (norm > 0.0) {
            for (auto& v : fit.b) v /= norm;
            for (auto& v : fit.k) v *= norm;
        }
        if (std::accumulate(fit.b.begin(), fit.b.end(), 0.0) < 0.0) {
            for (auto& v : fit.b) v = -v;
            for (auto& v : fit.k) v = -v;
        }
        if (constraint == PeriodConstraint::PinLast) fit.k[nt - 1] = 0.0;
    };

    // Newton step on all free parameters at once, using the observed information (the Fisher information
    // if the former is not positive definite). The gauge directions are null directions, so a small ridge
    // keeps the system solvable without moving along them.
    const std::size_t na = fixed_a ? 0 : nx;
    std::vector<std::size_t> k_slot(nt, nt);
    std::size_t nk = 0;
    for (std::size_t t = 0; t < nt; ++t)
        if (t != pinned) k_slot[t] = nk++;
    const std::size_t np = na + nx + nk;
    auto joint_step = [&]() {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(np));
        Eigen::MatrixXd fisher = Eigen::MatrixXd::Zero(g.size(), g.size());
        Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(g.size(), g.size());
        for (std::size_t x = 0; x < nx; ++x) {
            for (std::size_t t = 0; t < nt; ++t) {
                const double w = e(x, t) * std::exp(log_mu(x, t));
                const double r = d(x, t) - w;
                std::array<std::pair<Eigen::Index, double>, 3> j{};
                std::size_t nj = 0;
                if (na) j[nj++] = {static_cast<Eigen::Index>(x), 1.0};
                const auto ib = static_cast<Eigen::Index>(na + x);
                j[nj++] = {ib, fit.k[t]};
                Eigen::Index ik = -1;
                if (k_slot[t] < nt) {
                    ik = static_cast<Eigen::Index>(na + nx + k_slot[t]);
                    j[nj++] = {ik, fit.b[x]};
                }
                for (std::size_t u = 0; u < nj; ++u) {
                    g(j[u].first) += r * j[u].second;
                    for (std::size_t v = 0; v < nj; ++v) fisher(j[u].first, j[v].first) += w * j[u].second * j[v].second;
                }
                if (ik >= 0) {
                    cross(ib, ik) -= r;
                    cross(ik, ib) -= r;
                }
            }
        }
        const double ridge = 1e-12 * std::max(1.0, fisher.diagonal().maxCoeff());
        const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(g.size(), g.size());
        Eigen::VectorXd delta;
        Eigen::LLT<Eigen::MatrixXd> observed(fisher + cross + ridge * eye);
        if (observed.info() == Eigen::Success) {
            delta = observed.solve(g);
        } else {
            Eigen::LLT<Eigen::MatrixXd> expected(fisher + ridge * eye);
            if (expected.info() != Eigen::Success) return;
            delta = expected.solve(g);
        }
        const auto a0 = fit.a, b0 = fit.b, k0 = fit.k;
        const double before = poisson_loglik(d, e, offset, fit.a, fit.b, fit.k);
        double step = 1.0;
        for (int halvings = 0; halvings < 40; ++halvings) {
            for (std::size_t x = 0; x < na; ++x) fit.a[x] = a0[x] + step * delta(static_cast<Eigen::Index>(x));
            for (std::size_t x = 0; x < nx; ++x) fit.b[x] = b0[x] + step * delta(static_cast<Eigen::Index>(na + x));
            for (std::size_t t = 0; t < nt; ++t)
                if (k_slot[t] < nt) fit.k[t] = k0[t] + step * delta(static_cast<Eigen::Index>(na + nx + k_slot[t]));
            // the full step is taken when it is flat to working precision (quadratic regime)
            const double slack = halvings == 0 ? 1e-14 * std::abs(before) : 0.0;
            if (poisson_loglik(d, e, offset, fit.a, fit.b, fit.k) >= before - slack) return;
            step *= 0.5;
        }
        fit.a = a0;
        fit.b = b0;
        fit.k = k0;
    };

    double ll = poisson_loglik(d, e, offset, fit.a, fit.b, fit.k);
    double last_grad_norm = std::numeric_limits<double>::infinity();
    for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
        if (!fixed_a) {
            // exact maximiser in a_x given b, k
            for (std::size_t x = 0; x < nx; ++x) {
                double sd = 0.0, sm = 0.0;
                for (std::size_t t = 0; t < nt; ++t) {
                    sd += d(x, t);
                    sm += e(x, t) * std::exp(log_mu(x, t) - fit.a[x]);
                }
                fit.a[x] = std::log(sd / sm);
            }
        }
        for (std::size_t t = 0; t < nt; ++t) {
            if (t == pinned) continue;
            double g = 0.0, h = 0.0;
            for (std::size_t x = 0; x < nx; ++x) {
                const double fitted = e(x, t) * std::exp(log_mu(x, t));
                g += (d(x, t) - fitted) * fit.b[x];
                h += fitted * fit.b[x] * fit.b[x];
            }
            newton(fit.k[t], g, h, [&] { return col_ll(t); });
        }
        normalise();
        for (std::size_t x = 0; x < nx; ++x) {
            double g = 0.0, h = 0.0;
            for (std::size_t t = 0; t < nt; ++t) {
                const double fitted = e(x, t) * std::exp(log_mu(x, t));
                g += (d(x, t) - fitted) * fit.k[t];
                h += fitted * fit.k[t] * fit.k[t];
            }
            newton(fit.b[x], g, h, [&] { return row_ll(x); });
        }
        normalise();
        joint_step();
        normalise();

        const double next = poisson_loglik(d, e, offset, fit.a, fit.b, fit.k);
        fit.loglik_trace.push_back(next);
        fit.sweeps = sweep;
        const double gain = next - ll;
        ll = next;
        if (gain <= opts.rel_tol * std::abs(ll)) {
            // also require a stationary point unless the score has stopped shrinking (working precision)
            const auto score = poisson_score(d, e, offset, fit.a, fit.b, fit.k);
            double norm2 = 0.0;
            for (std::size_t x = 0; x < na; ++x) norm2 += score.a[x] * score.a[x];
            for (double v : score.b) norm2 += v * v;
            for (std::size_t t = 0; t < nt; ++t)
                if (t != pinned) norm2 += score.k[t] * score.k[t];
            const double grad_norm = std::sqrt(norm2);
            const bool stalled = grad_norm >= 0.5 * last_grad_norm;
            last_grad_norm = grad_norm;
            if (grad_norm > opts.grad_tol && !stalled) continue;
            fit.loglik = ll;
            return fit;
        }
    }
    fit.loglik = ll;
    throw ConvergenceError("Poisson Lee-Carter fit did not converge in " + std::to_string(opts.max_sweeps) +
                               " sweeps (log-likelihood " + csv::format_double(ll) + ")",
                           fit);
}

/// Step 1: common trend ln mu^T = A_x + B_x K_t on pooled data, sum B^2 = 1, sum K = 0.
inline LeeCarterBlock fit_common_trend(const Grid& d_total, const Grid& e_total, const FitOptions& opts = {}) {
    return fit_poisson_lee_carter(d_total, e_total, nullptr, std::nullopt, PeriodConstraint::SumZero, opts);
}

/// ln mu^T of a fitted block on its grid.
inline Grid log_rates(const LeeCarterBlock& block) {
    Grid out(block.a.size(), block.k.size());
    for (std::size_t x = 0; x < block.a.size(); ++x) {
        for (std::size_t t = 0; t < block.k.size(); ++t) out(x, t) = block.a[x] + block.b[x] * block.k[t];
    }
    return out;
}

/// Step 2: country deviation conditional on the common fit, ln mu^c = ln mu^T + alpha_x + beta_x kappa_t.
inline LeeCarterBlock fit_country_deviation(const Grid& d_country, const Grid& e_country,
                                            const LeeCarterBlock& common, const FitOptions& opts = {}) {
    const Grid offset = log_rates(common);
    if (offset.ages() != d_country.ages() || offset.years() != d_country.years()) {
        throw ValidationError("country grid does not match the common-trend grid");
    }
    return fit_poisson_lee_carter(d_country, e_country, &offset, std::nullopt, PeriodConstraint::SumZero, opts);
}

enum class ModelKind { LiLee, AdjustedLeeMiller };

/// Calibrated Li & Lee parameters for one gender.
struct GenderParams {
    std::vector<double> A, B, K;
    std::vector<double> alpha, beta, kappa;
};

/// Calibrated model for both genders over one age range and calibration period.
struct LiLeeParams {
    ModelKind kind = ModelKind::LiLee;
    double blend_weight = 1.0;  // alpha_2020 of the adjusted Lee & Miller model
    AgeRange ages{0, 90};
    YearRange years{2000, 2000};
    std::map<Gender, GenderParams> by_gender;

    const GenderParams& at(Gender g) const {
        auto it = by_gender.find(g);
        if (it == by_gender.end()) throw ValidationError("no parameters for gender " + std::string(1, to_char(g)));
        return it->second;
    }
};

/// Force of mortality for age index x with externally supplied period effects.
inline double evaluate_mu(const GenderParams& p, std::size_t x, double K, double kappa) {
    return std::exp(p.A[x] + p.B[x] * K + p.alpha[x] + p.beta[x] * kappa);
}

/// Force of mortality at age x and calibration year t.
inline double evaluate_mu(const LiLeeParams& params, Gender g, int age, int year) {
    const auto& p = params.at(g);
    if (!params.ages.contains(age) || !params.years.contains(year)) {
        throw ValidationError("age/year outside the calibrated grid");
    }
    const auto t = params.years.offset(year);
    return evaluate_mu(p, params.ages.offset(age), p.K[t], p.kappa[t]);
}

struct FittedSurface {
    Grid mu_common;
    Grid mu_country;
    double loglik_common = 0.0;
    double loglik_country = 0.0;
    int sweeps_common = 0;
    int sweeps_country = 0;
    std::vector<double> trace_country;
};

struct GenderFit {
    GenderParams params;
    FittedSurface surface;
};

namespace detail {

inline GenderFit assemble(const LeeCarterBlock& common, const LeeCarterBlock& dev) {
    GenderFit out;
    out.params = {common.a, common.b, common.k, dev.a, dev.b, dev.k};
    const std::size_t nx = common.a.size(), nt = common.k.size();
    out.surface.mu_common = Grid(nx, nt);
    out.surface.mu_country = Grid(nx, nt);
    for (std::size_t x = 0; x < nx; ++x) {
        for (std::size_t t = 0; t < nt; ++t) {
            out.surface.mu_common(x, t) = std::exp(common.a[x] + common.b[x] * common.k[t]);
            out.surface.mu_country(x, t) = evaluate_mu(out.params, x, common.k[t], dev.k[t]);
        }
    }
    out.surface.loglik_common = common.loglik;
    out.surface.loglik_country = dev.loglik;
    out.surface.sweeps_common = common.sweeps;
    out.surface.sweeps_country = dev.sweeps;
    out.surface.trace_country = dev.loglik_trace;
    return out;
}

} // namespace detail

/// Two-step conditional Poisson calibration for one gender.
inline GenderFit fit_li_lee(const Grid& d_total, const Grid& e_total, const Grid& d_country,
                            const Grid& e_country, const FitOptions& opts = {}) {
    const auto common = fit_common_trend(d_total, e_total, opts);
    const auto dev = fit_country_deviation(d_country, e_country, common, opts);
    return detail::assemble(common, dev);
}

/// Log-rate anchors of the adjusted Lee & Miller model for the last two calibration years.
struct LeeMillerAnchors {
    double blend_weight = 1.0;
    std::vector<double> common_log_rate;   // A_x
    std::vector<double> country_log_dev;   // alpha_x
};

inline LeeMillerAnchors lee_miller_anchors(const Grid& d_total, const Grid& e_total, const Grid& d_country,
                                           const Grid& e_country, double blend_weight) {
    if (!(blend_weight >= 0.0 && blend_weight <= 1.0)) throw DomainError("blend weight must lie in [0,1]");
    const std::size_t nx = d_total.ages(), nt = d_total.years();
    if (nt < 2) throw ValidationError("adjusted Lee & Miller needs at least two calibration years");
    LeeMillerAnchors an{blend_weight, std::vector<double>(nx), std::vector<double>(nx)};
    for (std::size_t x = 0; x < nx; ++x) {
        double common = 0.0, dev = 0.0;
        for (std::size_t t : {nt - 1, nt - 2}) {
            const double w = t == nt - 1 ? blend_weight : 1.0 - blend_weight;
            if (d_total(x, t) <= 0.0 || d_country(x, t) <= 0.0) {
                throw DomainError("zero observed deaths at anchor age index " + std::to_string(x) +
                                  ", year index " + std::to_string(t) + ": log anchor undefined");
            }
            const double m_total = d_total(x, t) / e_total(x, t);
            const double m_dev = d_country(x, t) / (e_country(x, t) * m_total);
            if (w != 0.0) {
                common += w * std::log(m_total);
                dev += w * std::log(m_dev);
            }
        }
        an.common_log_rate[x] = common;
        an.country_log_dev[x] = dev;
    }
    return an;
}

/// Adjusted Lee & Miller calibration for one gender: A_x and alpha_x fixed at the blended anchors,
/// (B, K) and (beta, kappa) fitted with K_{t_max} = kappa_{t_max} = 0 and unit sum of squares.
inline GenderFit fit_adjusted_lee_miller(const Grid& d_total, const Grid& e_total, const Grid& d_country,
                                         const Grid& e_country, double blend_weight, const FitOptions& opts = {}) {
    const auto an = lee_miller_anchors(d_total, e_total, d_country, e_country, blend_weight);
    const auto common = fit_poisson_lee_carter(d_total, e_total, nullptr, an.common_log_rate,
                                               PeriodConstraint::PinLast, opts);
    const Grid offset = log_rates(common);
    const auto dev = fit_poisson_lee_carter(d_country, e_country, &offset, an.country_log_dev,
                                            PeriodConstraint::PinLast, opts);
    return detail::assemble(common, dev);
}

struct ModelSpec {
    ModelKind kind = ModelKind::LiLee;
    double blend_weight = 1.0;
};

/// Calibrates both genders of `country` against the dataset's common pool.
inline LiLeeParams calibrate(const MultiPopulationDataset& data, const std::string& country, const ModelSpec& spec,
                             const FitOptions& opts = {}, std::map<Gender, FittedSurface>* surfaces = nullptr) {
    LiLeeParams out;
    out.kind = spec.kind;
    out.blend_weight = spec.kind == ModelKind::AdjustedLeeMiller ? spec.blend_weight : 1.0;
    out.ages = data.ages;
    out.years = data.years;
    for (Gender g : all_genders) {
        const auto [dt, et] = data.aggregate(g);
        const auto& c = data.at(country, g);
        auto fit = spec.kind == ModelKind::LiLee
                       ? fit_li_lee(dt, et, c.deaths, c.exposures, opts)
                       : fit_adjusted_lee_miller(dt, et, c.deaths, c.exposures, spec.blend_weight, opts);
        out.by_gender[g] = std::move(fit.params);
        if (surfaces) (*surfaces)[g] = std::move(fit.surface);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameter CSV: param,gender,index,value (index = age for age effects, year for period effects)
// ---------------------------------------------------------------------------

inline std::string params_to_csv(const LiLeeParams& p) {
    std::string text = "param,gender,index,value\n";
    auto emit = [&](const char* name, Gender g, const std::vector<double>& v, int first) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            text += std::string(name) + "," + to_char(g) + "," + std::to_string(first + static_cast<int>(i)) + "," +
                    csv::format_double(v[i]) + "\n";
        }
    };
    for (const auto& [g, gp] : p.by_gender) {
        emit("A", g, gp.A, p.ages.min());
        emit("B", g, gp.B, p.ages.min());
        emit("K", g, gp.K, p.years.first());
        emit("alpha", g, gp.alpha, p.ages.min());
        emit("beta", g, gp.beta, p.ages.min());
        emit("kappa", g, gp.kappa, p.years.first());
    }
    return text;
}

inline void write_params_csv(const std::filesystem::path& path, const LiLeeParams& p) {
    csv::write_text(path, params_to_csv(p));
}

/// Reads a parameter table; the age and year ranges are taken from the indices present.
inline LiLeeParams read_params_csv(const std::filesystem::path& path, ModelKind kind = ModelKind::LiLee,
                                   double blend_weight = 1.0) {
    const auto table = csv::read_table(path);
    if (table.header != std::vector<std::string>{"param", "gender", "index", "value"}) {
        throw ParseError("expected header param,gender,index,value", 1);
    }
    static const std::vector<std::string> names{"A", "B", "K", "alpha", "beta", "kappa"};
    std::map<std::pair<Gender, std::string>, std::map<int, double>> raw;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto line = table.line_numbers[r];
        if (row.size() != 4) throw ParseError("expected 4 fields", line);
        if (std::find(names.begin(), names.end(), row[0]) == names.end()) {
            throw ParseError("unknown parameter '" + row[0] + "'", line);
        }
        raw[{parse_gender(row[1]), row[0]}][csv::parse_int(row[2], line, "index")] =
            csv::parse_double(row[3], line, "value");
    }

    LiLeeParams out;
    out.kind = kind;
    out.blend_weight = blend_weight;
    std::optional<std::pair<int, int>> age_span, year_span;
    auto take = [&](Gender g, const std::string& name, std::optional<std::pair<int, int>>& span) {
        auto it = raw.find({g, name});
        if (it == raw.end()) throw ParseError("missing parameter " + name);
        const auto& m = it->second;
        const std::pair<int, int> s{m.begin()->first, m.rbegin()->first};
        if (static_cast<std::size_t>(s.second - s.first + 1) != m.size()) throw ParseError("gap in " + name + " indices");
        if (span && *span != s) throw ParseError("inconsistent indices for " + name);
        span = s;
        std::vector<double> v;
        for (const auto& [i, val] : m) v.push_back(val);
        return v;
    };
    for (Gender g : all_genders) {
        if (!raw.count({g, "A"})) continue;
        GenderParams gp;
        gp.A = take(g, "A", age_span);
        gp.B = take(g, "B", age_span);
        gp.alpha = take(g, "alpha", age_span);
        gp.beta = take(g, "beta", age_span);
        gp.K = take(g, "K", year_span);
        gp.kappa = take(g, "kappa", year_span);
        out.by_gender[g] = std::move(gp);
    }
    if (out.by_gender.empty()) throw ParseError("no parameters in '" + path.string() + "'");
    out.ages = AgeRange(age_span->first, age_span->second);
    out.years = YearRange(year_span->first, year_span->second);
    return out;
}

} // namespace mortkit
