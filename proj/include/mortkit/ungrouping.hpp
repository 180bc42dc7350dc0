#pragma once

// Virtual individual-age exposures and deaths from annual bucketed totals: a reference-shaped
// curve is scaled bucket by bucket so every closed bucket total is conserved.

#include "mortkit/core_types.hpp"
#include "mortkit/error.hpp"
#include "mortkit/lilee.hpp"
#include "mortkit/mortality_data.hpp"
#include "mortkit/projection.hpp"
#include "mortkit/time_dynamics.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mortkit {

inline constexpr int kOpenBucketMaxAge = 110;
inline constexpr double kDefaultOpenRateMale = 0.2;
inline constexpr double kDefaultOpenRateFemale = 0.145;

inline double default_open_rate(Gender g) { return g == Gender::Male ? kDefaultOpenRateMale : kDefaultOpenRateFemale; }

/// Per-bucket scale factors; open buckets carry no factor.
struct BucketScaleFactors {
    std::vector<AgeBucket> buckets;
    std::vector<std::optional<double>> factors;
};

struct ScaledCurve {
    std::vector<double> values;
    BucketScaleFactors factors;
};

/// Last year's curve moved one age up; age 0 is linearly extrapolated as 2 E_0 - E_1.
inline std::vector<double> shift_exposure_curve(std::span<const double> prev) {
    if (prev.size() < 2) throw ValidationError("exposure curve needs at least two ages");
    for (double v : prev) {
        if (!(v > 0.0)) throw ValidationError("previous-year exposure curve must be positive");
    }
    std::vector<double> out(prev.size());
    for (std::size_t x = 1; x < prev.size(); ++x) out[x] = prev[x - 1];
    out[0] = 2.0 * prev[0] - prev[1];
    if (!(out[0] > 0.0)) {
        throw DomainError("extrapolated age-0 exposure " + csv::format_double(out[0]) + " is not positive");
    }
    return out;
}

/// Scales `curve` (indexed by age from 0) so each closed bucket sums to its total; other ages are unchanged.
inline ScaledCurve scale_curve_to_buckets(std::span<const double> curve, std::span<const AgeBucket> buckets,
                                          std::span<const double> totals) {
    if (buckets.size() != totals.size()) throw ValidationError("bucket and total counts differ");
    ScaledCurve out{std::vector<double>(curve.begin(), curve.end()), {{buckets.begin(), buckets.end()}, {}}};
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        const auto& bucket = buckets[b];
        if (bucket.is_open()) {
            out.factors.factors.push_back(std::nullopt);
            continue;
        }
        if (bucket.lower < 0 || static_cast<std::size_t>(*bucket.upper) >= curve.size()) {
            throw ValidationError("bucket " + bucket.label() + " extends beyond the curve");
        }
        if (!(totals[b] >= 0.0)) throw ValidationError("bucket " + bucket.label() + " has a negative total");
        double mass = 0.0;
        for (int a = bucket.lower; a <= *bucket.upper; ++a) {
            if (curve[static_cast<std::size_t>(a)] < 0.0) throw ValidationError("curve is negative at age " + std::to_string(a));
            mass += curve[static_cast<std::size_t>(a)];
        }
        if (totals[b] > 0.0 && !(mass > 0.0)) {
            throw NumericalError("bucket " + bucket.label() + " is unscalable: curve has no mass but total is " +
                                 csv::format_double(totals[b]));
        }
        const double factor = totals[b] == 0.0 ? 0.0 : totals[b] / mass;
        if (!std::isfinite(factor)) throw NumericalError("bucket " + bucket.label() + ": scale factor is not finite");
        for (int a = bucket.lower; a <= *bucket.upper; ++a) out.values[static_cast<std::size_t>(a)] *= factor;
        if (bucket.lower == *bucket.upper) out.values[static_cast<std::size_t>(bucket.lower)] = totals[b];
        out.factors.factors.push_back(factor);
    }
    return out;
}

/// Open-bucket exposures: last year's values at ages lower..top plus a uniform shift
/// c = (E_open,t - E_open,t-1) / (max_age - lower + 1).
inline std::vector<double> apply_open_bucket_exposure(std::span<const double> prev_curve, int lower, double open_total_t,
                                                      double open_total_prev, int max_age = kOpenBucketMaxAge) {
    if (lower < 0 || static_cast<std::size_t>(lower) >= prev_curve.size()) {
        throw ValidationError("open bucket starts beyond the curve");
    }
    const double c = (open_total_t - open_total_prev) / static_cast<double>(max_age - lower + 1);
    std::vector<double> out;
    for (std::size_t a = static_cast<std::size_t>(lower); a < prev_curve.size(); ++a) {
        const double v = prev_curve[a] + c;
        if (!(v > 0.0)) {
            throw DomainError("open-bucket exposure at age " + std::to_string(a) + " becomes " + csv::format_double(v));
        }
        out.push_back(v);
    }
    return out;
}

struct UngroupedExposures {
    std::vector<double> exposures;  // ages 0..top
    BucketScaleFactors factors;
    double open_shift = 0.0;
};

/// Exposures of year t from last year's individual-age curve (ages 0..top) and this year's buckets:
/// shift, scale the closed buckets, then shift the open bucket uniformly.
inline UngroupedExposures ungroup_exposures(std::span<const double> prev_curve, const BucketedAnnualSeries& buckets_t,
                                            double prev_open_total, int max_age = kOpenBucketMaxAge) {
    if (!buckets_t.exposure) throw ValidationError("bucketed exposures missing for " + std::to_string(buckets_t.year));
    check_partition(buckets_t.buckets);
    const auto open = buckets_t.open_index();
    if (!open) throw ValidationError("exposure buckets must end in an open bucket");
    const int lower = buckets_t.buckets[*open].lower;
    const int top = static_cast<int>(prev_curve.size()) - 1;
    if (lower > top) throw ValidationError("open bucket starts above the model's top age");

    const auto shifted = shift_exposure_curve(prev_curve);
    auto scaled = scale_curve_to_buckets(shifted, buckets_t.buckets, *buckets_t.exposure);
    const double open_total = (*buckets_t.exposure)[*open];
    const auto tail = apply_open_bucket_exposure(prev_curve, lower, open_total, prev_open_total, max_age);
    for (std::size_t i = 0; i < tail.size(); ++i) scaled.values[static_cast<std::size_t>(lower) + i] = tail[i];
    return {std::move(scaled.values), std::move(scaled.factors),
            (open_total - prev_open_total) / static_cast<double>(max_age - lower + 1)};
}

/// d_hat = mu_hat * E.
inline std::vector<double> expected_deaths(std::span<const double> mu, std::span<const double> exposure) {
    if (mu.size() != exposure.size()) throw ValidationError("mu and exposure curves differ in length");
    std::vector<double> d(mu.size());
    for (std::size_t x = 0; x < d.size(); ++x) {
        if (mu[x] < 0.0 || exposure[x] < 0.0) throw DomainError("negative force of mortality or exposure");
        d[x] = mu[x] * exposure[x];
    }
    return d;
}

struct OpenDeathsResult {
    double value = 0.0;
    std::optional<std::string> warning;
};

/// d_top,t = d_top,ref + A (open_total_t - sum_{a >= top} d_a,ref), floored at zero.
inline OpenDeathsResult apply_open_bucket_deaths(double d_top_ref, double open_sum_ref, double open_total_t, double rate) {
    if (!(rate > 0.0 && rate < 1.0)) throw ValidationError("open-bucket allocation rate must lie in (0, 1)");
    OpenDeathsResult r{d_top_ref + rate * (open_total_t - open_sum_ref), std::nullopt};
    if (r.value < 0.0) {
        r.warning = "open-bucket death allocation " + csv::format_double(r.value) + " floored at zero";
        r.value = 0.0;
    }
    return r;
}

/// Deaths of the reference year used by the open-bucket rule.
struct OpenDeathsReference {
    int year = 0;
    double d_top = 0.0;     // deaths at the top model age
    double open_sum = 0.0;  // deaths at all ages >= the top model age
};

struct UngroupedDeaths {
    std::vector<double> deaths;  // ages 0..top
    BucketScaleFactors factors;
    std::vector<std::string> warnings;
};

/// Deaths of year t from the expected-death curve. `expected` covers ages 0..top, extended to
/// `max_age` when the open bucket starts below the top age. When the open bucket starts at the top
/// age, its value follows the open-bucket rate rule; when it starts lower, ages lower..top are scaled
/// by the open total over the expected deaths of ages lower..max_age (their share of the open bucket).
inline UngroupedDeaths ungroup_deaths(std::span<const double> expected, const BucketedAnnualSeries& buckets_t, int top,
                                      const std::optional<OpenDeathsReference>& ref, double rate,
                                      int max_age = kOpenBucketMaxAge) {
    if (!buckets_t.deaths) throw ValidationError("bucketed deaths missing for " + std::to_string(buckets_t.year));
    check_partition(buckets_t.buckets);
    const auto open = buckets_t.open_index();
    if (!open) throw ValidationError("death buckets must end in an open bucket");
    const int lower = buckets_t.buckets[*open].lower;
    if (lower > top) throw ValidationError("open bucket starts above the model's top age");
    if (expected.size() < static_cast<std::size_t>(top + 1)) throw ValidationError("expected-death curve too short");

    UngroupedDeaths out;
    auto scaled = scale_curve_to_buckets(expected, buckets_t.buckets, *buckets_t.deaths);
    out.factors = std::move(scaled.factors);
    out.deaths.assign(scaled.values.begin(), scaled.values.begin() + top + 1);
    const double open_total = (*buckets_t.deaths)[*open];

    if (lower == top) {
        if (!ref) throw ValidationError("open bucket at the top age needs reference-year deaths");
        auto r = apply_open_bucket_deaths(ref->d_top, ref->open_sum, open_total, rate);
        if (r.warning) out.warnings.push_back(*r.warning);
        out.deaths[static_cast<std::size_t>(top)] = r.value;
    } else {
        if (expected.size() < static_cast<std::size_t>(max_age + 1)) {
            throw ValidationError("open bucket below the top age needs expected deaths up to age " +
                                  std::to_string(max_age));
        }
        double mass = 0.0;
        for (int a = lower; a <= max_age; ++a) mass += expected[static_cast<std::size_t>(a)];
        if (open_total > 0.0 && !(mass > 0.0)) throw NumericalError("open bucket is unscalable: no expected deaths");
        const double factor = open_total == 0.0 ? 0.0 : open_total / mass;
        for (int a = lower; a <= top; ++a) {
            out.deaths[static_cast<std::size_t>(a)] = expected[static_cast<std::size_t>(a)] * factor;
        }
        out.factors.factors[*open] = factor;
    }
    return out;
}

/// Exposures above the top age by following survival: E_{a+1} = E_a exp(-mu_a).
inline std::vector<double> extend_exposure_by_survival(std::span<const double> exposure_0_top,
                                                       std::span<const double> mu_closed, int max_age = kOpenBucketMaxAge) {
    std::vector<double> out(exposure_0_top.begin(), exposure_0_top.end());
    for (int a = static_cast<int>(out.size()); a <= max_age; ++a) {
        out.push_back(out.back() * std::exp(-mu_closed[static_cast<std::size_t>(a - 1)]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Auxiliary projection model
// ---------------------------------------------------------------------------

/// Li & Lee model calibrated on observed individual-age years only, with unit-weight dynamics,
/// used to project the central force of mortality into the bucketed years.
struct AuxiliaryModel {
    LiLeeParams params;
    TimeSeriesFit dynamics;
    std::vector<std::string> warnings;

    int last_year() const { return params.years.last(); }

    /// Central (noise-free) force of mortality over the model ages in `year`.
    std::vector<double> mu(Gender g, int year) const {
        const auto& p = params.at(g);
        if (params.years.contains(year)) {
            const auto t = params.years.offset(year);
            return model_mu(p, p.K[t], p.kappa[t]);
        }
        if (year < params.years.first()) throw ValidationError("year precedes the auxiliary calibration");
        const int gi = static_cast<int>(index_of(g));
        double K = p.K.back(), kappa = p.kappa.back();
        for (int t = params.years.last() + 1; t <= year; ++t) {
            K += dynamics.psi(3 * gi);
            kappa = dynamics.psi(3 * gi + 1) + dynamics.psi(3 * gi + 2) * kappa;
        }
        return model_mu(p, K, kappa);
    }

    std::vector<double> closed_mu(Gender g, int year) const {
        if (params.ages.min() != 0 || params.ages.max() != kKannistoLastAge) {
            throw ValidationError("Kannisto closure needs model ages 0..90");
        }
        return kannisto_close_mu(mu(g, year));
    }
};

/// Calibrates the auxiliary model on `data` (already restricted to the observed individual-age years).
inline AuxiliaryModel fit_auxiliary_projection_model(const MultiPopulationDataset& data, const std::string& country,
                                                     const FitOptions& opts = {}) {
    AuxiliaryModel m;
    m.params = calibrate(data, country, ModelSpec{ModelKind::LiLee, 1.0}, opts);
    const auto rows = build_design(period_effects_of(m.params));
    m.dynamics = fit_weighted_mle(rows, std::vector<double>(rows.size(), 1.0));
    for (Gender g : all_genders) {
        if (!m.dynamics.stationary(g)) {
            m.warnings.push_back(std::string("auxiliary model for ") + country + ": |phi^" + to_char(g) +
                                 "| >= 1; consider a later start year");
        }
    }
    return m;
}

} // namespace mortkit
