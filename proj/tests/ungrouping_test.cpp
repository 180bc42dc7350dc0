#include "mortkit/ungrouping.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

using namespace mortkit;

namespace {

double sum_over(const std::vector<double>& v, int lo, int hi) {
    double s = 0.0;
    for (int a = lo; a <= hi; ++a) s += v[static_cast<std::size_t>(a)];
    return s;
}

std::vector<double> bucket_totals(const std::vector<double>& curve, const std::vector<AgeBucket>& buckets) {
    std::vector<double> out;
    for (const auto& b : buckets) {
        out.push_back(sum_over(curve, b.lower, b.upper ? *b.upper : static_cast<int>(curve.size()) - 1));
    }
    return out;
}

/// Exposure-like curve: births shrinking with age, with a baby-boom bump.
std::vector<double> population_curve(int top, double scale = 1.0) {
    std::vector<double> e;
    for (int a = 0; a <= top; ++a) {
        const double x = a;
        e.push_back(scale * (60000.0 * std::exp(-0.0005 * x * x / 10.0) * (1.0 + 0.25 * std::exp(-0.5 * std::pow((x - 55.0) / 6.0, 2)))));
    }
    return e;
}

std::vector<double> gompertz_mu(int top, double level = -9.0, double slope = 0.09) {
    std::vector<double> mu;
    for (int a = 0; a <= top; ++a) mu.push_back(std::exp(level + slope * a));
    return mu;
}

BucketedAnnualSeries series_with(const std::vector<AgeBucket>& buckets, std::vector<double> deaths,
                                 std::vector<double> exposure, int year = 2020) {
    BucketedAnnualSeries s;
    s.country = "XX";
    s.year = year;
    s.buckets = buckets;
    if (!deaths.empty()) s.deaths = std::move(deaths);
    if (!exposure.empty()) s.exposure = std::move(exposure);
    return s;
}

/// Random partition of 0..top into closed buckets, optionally ending in an open bucket.
std::vector<AgeBucket> random_partition(std::mt19937_64& rng, int top, bool open_tail) {
    std::uniform_int_distribution<int> width(1, 12);
    std::vector<AgeBucket> out;
    int lo = 0;
    const int last_closed = open_tail ? top - std::uniform_int_distribution<int>(0, 10)(rng) - 1 : top;
    while (lo <= last_closed) {
        const int hi = std::min(last_closed, lo + width(rng) - 1);
        out.push_back({lo, hi});
        lo = hi + 1;
    }
    if (open_tail) out.push_back({lo, std::nullopt});
    return out;
}

} // namespace

// ---------------------------------------------------------------------------

TEST(ShiftExposureCurve, MovesOneAgeUpAndExtrapolatesAgeZero) {
    const std::vector<double> prev{10, 12, 14, 16};
    const auto s = shift_exposure_curve(prev);
    EXPECT_EQ(s[1], 10);
    EXPECT_EQ(s[2], 12);
    EXPECT_EQ(s[3], 14);
    EXPECT_EQ(s[0], 8);
}

TEST(ShiftExposureCurve, ConstantCurveStaysConstant) {
    const std::vector<double> prev(91, 523.25);
    for (double v : shift_exposure_curve(prev)) EXPECT_EQ(v, 523.25);
}

TEST(ShiftExposureCurve, NonPositiveExtrapolationIsRejected) {
    EXPECT_THROW(shift_exposure_curve(std::vector<double>{1, 3, 5}), DomainError);
    EXPECT_THROW(shift_exposure_curve(std::vector<double>{1, 2, 5}), DomainError);
    EXPECT_THROW(shift_exposure_curve(std::vector<double>{4, 0, 5}), ValidationError);
}

TEST(ShiftExposureCurve, ShiftPropertyOnRandomCurves) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(100.0, 1000.0);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> prev(91);
        for (auto& v : prev) v = u(rng);
        prev[0] = prev[1] + 10.0;
        const auto s = shift_exposure_curve(prev);
        for (std::size_t x = 1; x < prev.size(); ++x) ASSERT_EQ(s[x], prev[x - 1]);
    }
}

TEST(ScaleCurveToBuckets, ArithmeticExample) {
    const std::vector<double> curve{1, 1, 2};
    const std::vector<AgeBucket> b{{0, 2}};
    const auto r = scale_curve_to_buckets(curve, b, std::vector<double>{8});
    EXPECT_EQ(r.values, (std::vector<double>{2, 2, 4}));
    ASSERT_TRUE(r.factors.factors[0]);
    EXPECT_EQ(*r.factors.factors[0], 2.0);
}

TEST(ScaleCurveToBuckets, MatchingTotalIsIdentity) {
    const auto curve = population_curve(90);
    const auto buckets = eurow_buckets();
    const auto totals = bucket_totals(curve, buckets);
    const auto r = scale_curve_to_buckets(curve, buckets, totals);
    for (std::size_t a = 0; a < curve.size(); ++a) EXPECT_NEAR(r.values[a], curve[a], 1e-12 * curve[a]);
    for (std::size_t b = 0; b + 1 < buckets.size(); ++b) EXPECT_NEAR(*r.factors.factors[b], 1.0, 1e-14);
    EXPECT_FALSE(r.factors.factors.back());
}

TEST(ScaleCurveToBuckets, ZeroMassWithPositiveTotalIsUnscalable) {
    const std::vector<double> curve{0, 0, 1};
    const std::vector<AgeBucket> b{{0, 1}, {2, 2}};
    EXPECT_THROW(scale_curve_to_buckets(curve, b, std::vector<double>{3, 1}), NumericalError);
    // zero total on zero mass is fine
    const auto r = scale_curve_to_buckets(curve, b, std::vector<double>{0, 5});
    EXPECT_EQ(r.values[2], 5.0);
}

TEST(ScaleCurveToBuckets, ConservationOverRandomCases) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    std::uniform_real_distribution<double> mag(1.0, 1e6);
    for (int rep = 0; rep < 200; ++rep) {
        const auto buckets = random_partition(rng, 90, rep % 2 == 0);
        std::vector<double> curve(91);
        for (auto& v : curve) v = u(rng) * mag(rng);
        std::vector<double> totals;
        for (std::size_t i = 0; i < buckets.size(); ++i) totals.push_back(mag(rng));
        const auto r = scale_curve_to_buckets(curve, buckets, totals);
        for (std::size_t i = 0; i < buckets.size(); ++i) {
            const auto& b = buckets[i];
            if (b.is_open()) {
                continue;
            }
            ASSERT_NEAR(sum_over(r.values, b.lower, *b.upper), totals[i], 1e-9 * totals[i]);
            for (int a = b.lower; a <= *b.upper; ++a) {
                const double ratio = r.values[static_cast<std::size_t>(a)] / r.values[static_cast<std::size_t>(b.lower)];
                const double expect = curve[static_cast<std::size_t>(a)] / curve[static_cast<std::size_t>(b.lower)];
                ASSERT_NEAR(ratio, expect, 1e-12 * expect);
            }
            if (b.lower == *b.upper) {
                ASSERT_EQ(r.values[static_cast<std::size_t>(b.lower)], totals[i]);
            }
        }
        // scaling again against the same totals changes nothing
        const auto again = scale_curve_to_buckets(r.values, buckets, totals);
        for (const auto& f : again.factors.factors) {
            if (f) {
                ASSERT_NEAR(*f, 1.0, 1e-12);
            }
        }
    }
}

TEST(ApplyOpenBucketExposure, EqualTotalsLeaveCurveUnchanged) {
    const auto prev = population_curve(90);
    const auto out = apply_open_bucket_exposure(prev, 85, 5e5, 5e5);
    ASSERT_EQ(out.size(), 6u);
    for (int a = 85; a <= 90; ++a) EXPECT_EQ(out[static_cast<std::size_t>(a - 85)], prev[static_cast<std::size_t>(a)]);
}

TEST(ApplyOpenBucketExposure, DivisorIsTwentySix) {
    const std::vector<double> prev(91, 100.0);
    for (double v : apply_open_bucket_exposure(prev, 85, 1026.0, 1000.0)) EXPECT_DOUBLE_EQ(v, 101.0);
    // 90+: 110 - 90 + 1 = 21 ages share the change
    const auto top = apply_open_bucket_exposure(prev, 90, 1021.0, 1000.0);
    ASSERT_EQ(top.size(), 1u);
    EXPECT_DOUBLE_EQ(top[0], 101.0);
}

TEST(ApplyOpenBucketExposure, NonPositiveResultIsRejected) {
    const std::vector<double> prev(91, 100.0);
    EXPECT_THROW(apply_open_bucket_exposure(prev, 85, 0.0, 2600.0), DomainError);
}

TEST(UngroupExposures, SingleClosedBucketComposition) {
    const auto prev = population_curve(90);
    const std::vector<AgeBucket> buckets{{0, 84}, {85, std::nullopt}};
    const double closed_total = 4.2e6, open_total = 3.1e5, prev_open = 3.0e5;
    const auto series = series_with(buckets, {}, {closed_total, open_total});
    const auto r = ungroup_exposures(prev, series, prev_open);

    const auto direct = scale_curve_to_buckets(shift_exposure_curve(prev), std::vector<AgeBucket>{{0, 84}},
                                               std::vector<double>{closed_total});
    for (int a = 0; a <= 84; ++a) EXPECT_EQ(r.exposures[static_cast<std::size_t>(a)], direct.values[static_cast<std::size_t>(a)]);
    EXPECT_NEAR(sum_over(r.exposures, 0, 84), closed_total, 1e-9 * closed_total);
    const double c = (open_total - prev_open) / 26.0;
    EXPECT_DOUBLE_EQ(r.open_shift, c);
    for (int a = 85; a <= 90; ++a) {
        EXPECT_DOUBLE_EQ(r.exposures[static_cast<std::size_t>(a)], prev[static_cast<std::size_t>(a)] + c);
    }
}

TEST(UngroupExposures, TrueShiftedCurveIsRecovered) {
    // the year-t population is exactly last year's shifted (no deaths, no migration), so every factor is one
    const auto prev = population_curve(90);
    auto truth = shift_exposure_curve(prev);
    const auto buckets = stmf_buckets();
    auto totals = bucket_totals(truth, buckets);
    const auto r = ungroup_exposures(prev, series_with(buckets, {}, totals), totals.back());
    for (int a = 0; a < 85; ++a) {
        EXPECT_NEAR(r.exposures[static_cast<std::size_t>(a)], truth[static_cast<std::size_t>(a)], 1e-9 * truth[static_cast<std::size_t>(a)]);
    }
    for (std::size_t b = 0; b + 1 < buckets.size(); ++b) EXPECT_NEAR(*r.factors.factors[b], 1.0, 1e-12);
}

TEST(UngroupExposures, ChainedTwoYearsMatchBothBucketInputs) {
    // a fixture population aged forward with survival and births; both years' buckets are met
    const auto mu = gompertz_mu(110);
    std::vector<std::vector<double>> pop(3);
    pop[0] = population_curve(110);
    for (int y = 1; y < 3; ++y) {
        pop[static_cast<std::size_t>(y)].resize(111);
        pop[static_cast<std::size_t>(y)][0] = pop[static_cast<std::size_t>(y - 1)][0] * 0.98;
        for (int a = 1; a <= 110; ++a) {
            pop[static_cast<std::size_t>(y)][static_cast<std::size_t>(a)] =
                pop[static_cast<std::size_t>(y - 1)][static_cast<std::size_t>(a - 1)] * std::exp(-mu[static_cast<std::size_t>(a - 1)]);
        }
    }
    const auto buckets = stmf_buckets();
    auto totals = [&](int y) { return bucket_totals(pop[static_cast<std::size_t>(y)], buckets); };
    std::vector<double> start(pop[0].begin(), pop[0].begin() + 91);

    const auto t1 = ungroup_exposures(start, series_with(buckets, {}, totals(1), 2021), totals(0).back());
    const auto t2 = ungroup_exposures(t1.exposures, series_with(buckets, {}, totals(2), 2022), totals(1).back());
    for (int y = 1; y <= 2; ++y) {
        const auto& e = y == 1 ? t1.exposures : t2.exposures;
        const auto tot = totals(y);
        for (std::size_t b = 0; b + 1 < buckets.size(); ++b) {
            EXPECT_NEAR(sum_over(e, buckets[b].lower, *buckets[b].upper), tot[b], 1e-9 * tot[b]);
        }
        for (double v : e) EXPECT_GT(v, 0.0);
    }
}

TEST(ExpectedDeaths, Examples) {
    EXPECT_DOUBLE_EQ(expected_deaths(std::vector<double>{0.01}, std::vector<double>{1000})[0], 10.0);
    EXPECT_EQ(expected_deaths(std::vector<double>{0.0}, std::vector<double>{1000})[0], 0.0);
    EXPECT_THROW(expected_deaths(std::vector<double>{0.01, 0.02}, std::vector<double>{1000}), ValidationError);
}

TEST(ExpectedDeaths, MatchesPoissonSimulationInTotal) {
    const auto mu = gompertz_mu(90);
    const auto e = population_curve(90);
    const auto d_hat = expected_deaths(mu, e);
    const double expected_total = std::accumulate(d_hat.begin(), d_hat.end(), 0.0);
    std::mt19937_64 rng(5);
    double simulated = 0.0;
    for (double m : d_hat) simulated += static_cast<double>(std::poisson_distribution<long long>(m)(rng));
    EXPECT_LT(std::abs(simulated - expected_total), 3.0 * std::sqrt(expected_total));
}

TEST(ApplyOpenBucketDeaths, Examples) {
    EXPECT_EQ(apply_open_bucket_deaths(1200.0, 9000.0, 9000.0, kDefaultOpenRateMale).value, 1200.0);
    EXPECT_DOUBLE_EQ(apply_open_bucket_deaths(1200.0, 9000.0, 9100.0, kDefaultOpenRateMale).value, 1220.0);
    EXPECT_DOUBLE_EQ(apply_open_bucket_deaths(1200.0, 9000.0, 9200.0, kDefaultOpenRateFemale).value, 1229.0);
    EXPECT_DOUBLE_EQ(default_open_rate(Gender::Female), 0.145);
}

TEST(ApplyOpenBucketDeaths, NegativeAllocationIsFlooredWithWarning) {
    const auto r = apply_open_bucket_deaths(10.0, 9000.0, 8000.0, 0.2);
    EXPECT_EQ(r.value, 0.0);
    ASSERT_TRUE(r.warning);
    EXPECT_THROW(apply_open_bucket_deaths(10.0, 10.0, 10.0, 1.0), ValidationError);
}

TEST(UngroupDeaths, EurostatBucketsConserveAndUseOpenRate) {
    const auto mu = gompertz_mu(90);
    const auto e = population_curve(90);
    const auto d_hat = expected_deaths(mu, e);
    const auto buckets = eurow_buckets();
    auto totals = bucket_totals(d_hat, buckets);
    for (std::size_t b = 0; b < totals.size(); ++b) totals[b] *= 1.0 + 0.03 * std::sin(static_cast<double>(b));
    const OpenDeathsReference ref{2018, 1500.0, 7000.0};
    totals.back() = 7300.0;
    const auto r = ungroup_deaths(d_hat, series_with(buckets, totals, {}), 90, ref, kDefaultOpenRateMale);
    for (std::size_t b = 0; b + 1 < buckets.size(); ++b) {
        EXPECT_NEAR(sum_over(r.deaths, buckets[b].lower, *buckets[b].upper), totals[b], 1e-9 * totals[b]);
    }
    EXPECT_DOUBLE_EQ(r.deaths[90], 1500.0 + 0.2 * 300.0);
    EXPECT_TRUE(r.warnings.empty());
    EXPECT_THROW(ungroup_deaths(d_hat, series_with(buckets, totals, {}), 90, std::nullopt, 0.2), ValidationError);
}

TEST(UngroupDeaths, UniformExpectationGivesUniformDeaths) {
    const std::vector<double> d_hat(91, 3.0);
    const auto buckets = eurow_buckets();
    std::vector<double> totals(buckets.size(), 50.0);
    const auto r = ungroup_deaths(d_hat, series_with(buckets, totals, {}), 90, OpenDeathsReference{2018, 3, 60}, 0.2);
    for (int a = 0; a < 90; ++a) EXPECT_DOUBLE_EQ(r.deaths[static_cast<std::size_t>(a)], 10.0);
}

TEST(UngroupDeaths, StmfOpenBucketScalesByItsShare) {
    // expected deaths through 110; the 85+ total is split in proportion to the expected curve
    const auto mu = gompertz_mu(110);
    const auto e = extend_exposure_by_survival(population_curve(90), mu);
    ASSERT_EQ(e.size(), 111u);
    const auto d_hat = expected_deaths(mu, e);
    const auto buckets = stmf_buckets();
    auto totals = bucket_totals(d_hat, buckets);
    for (auto& t : totals) t *= 1.1;
    const auto r = ungroup_deaths(d_hat, series_with(buckets, totals, {}), 90, std::nullopt, 0.2);
    ASSERT_EQ(r.deaths.size(), 91u);
    for (int a = 0; a <= 90; ++a) {
        EXPECT_NEAR(r.deaths[static_cast<std::size_t>(a)], 1.1 * d_hat[static_cast<std::size_t>(a)], 1e-9 * d_hat[static_cast<std::size_t>(a)]);
    }
    const double tail = sum_over(d_hat, 91, 110) * 1.1;
    EXPECT_NEAR(sum_over(r.deaths, 85, 90), totals.back() - tail, 1e-9 * totals.back());

    // a curve that stops at 90 cannot split an 85+ total
    std::vector<double> short_curve(d_hat.begin(), d_hat.begin() + 91);
    EXPECT_THROW(ungroup_deaths(short_curve, series_with(buckets, totals, {}), 90, std::nullopt, 0.2), ValidationError);
}

TEST(UngroupDeaths, RecoversSimulatedIndividualDeaths) {
    // Poisson deaths from a known surface; the expected curve is slightly misspecified
    const auto mu_true = gompertz_mu(90);
    const auto e = population_curve(90);
    std::mt19937_64 rng(77);
    std::vector<double> d_true;
    for (int a = 0; a <= 90; ++a) {
        d_true.push_back(static_cast<double>(std::poisson_distribution<long long>(mu_true[static_cast<std::size_t>(a)] * e[static_cast<std::size_t>(a)])(rng)));
    }
    auto mu_model = gompertz_mu(90, -9.1, 0.091);
    const auto d_hat = expected_deaths(mu_model, e);
    const auto buckets = eurow_buckets();
    const auto totals = bucket_totals(d_true, buckets);
    const auto r = ungroup_deaths(d_hat, series_with(buckets, totals, {}), 90,
                                  OpenDeathsReference{2018, d_true[90], totals.back()}, 0.2);
    for (std::size_t b = 0; b + 1 < buckets.size(); ++b) {
        EXPECT_NEAR(sum_over(r.deaths, buckets[b].lower, *buckets[b].upper), totals[b], 1e-9 * std::max(1.0, totals[b]));
    }
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    const double n = 91;
    for (int a = 0; a <= 90; ++a) {
        const double x = r.deaths[static_cast<std::size_t>(a)], y = d_true[static_cast<std::size_t>(a)];
        sx += x; sy += y; sxx += x * x; syy += y * y; sxy += x * y;
    }
    const double corr = (sxy - sx * sy / n) / std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n));
    EXPECT_GT(corr, 0.999);
}

// ---------------------------------------------------------------------------
// Auxiliary model
// ---------------------------------------------------------------------------

namespace {

struct AuxTruth {
    std::vector<double> a, b, alpha, beta;
    std::vector<double> k, kappa;
    double theta = -0.25, c = 0.01, phi = 0.6;
};

/// One gender's truth over ages 0..90 with its own shocks.
AuxTruth aux_truth(int nt, std::uint64_t seed) {
    AuxTruth truth;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    for (int x = 0; x <= 90; ++x) {
        truth.a.push_back(-8.5 + 0.08 * x);
        truth.b.push_back(0.08 + 0.04 * std::cos(0.05 * x));
        truth.alpha.push_back(0.05 * std::sin(0.1 * x));
        truth.beta.push_back(0.1);
    }
    double k = 3.0, kappa = 0.0;
    for (int t = 0; t < nt; ++t) {
        truth.k.push_back(k);
        truth.kappa.push_back(kappa);
        k += truth.theta + 0.05 * z(rng);
        kappa = truth.c + truth.phi * kappa + 0.03 * z(rng);
    }
    return truth;
}

/// AA carries the pooled trend exactly; BB deviates from it with an AR(1) kappa.
MultiPopulationDataset aux_dataset(std::map<Gender, AuxTruth>& truths, int first_year, int last_year) {
    const int nt = last_year - first_year + 1;
    truths[Gender::Male] = aux_truth(nt, 3);
    truths[Gender::Female] = aux_truth(nt, 4);
    MultiPopulationDataset data;
    data.ages = AgeRange(0, 90);
    data.years = YearRange(first_year, last_year);
    data.common_pool = {"AA"};
    for (const char* country : {"AA", "BB"}) {
        const bool dev = std::string(country) == "BB";
        for (Gender g : all_genders) {
            SurfaceFragment f{country, g, {}};
            const auto& truth = truths[g];
            const double shift = g == Gender::Female ? -0.3 : 0.0;
            for (int t = 0; t < nt; ++t) {
                for (int x = 0; x <= 90; ++x) {
                    const auto xs = static_cast<std::size_t>(x), ts = static_cast<std::size_t>(t);
                    double lm = truth.a[xs] + shift + truth.b[xs] * truth.k[ts];
                    if (dev) lm += truth.alpha[xs] + truth.beta[xs] * truth.kappa[ts];
                    const double E = 1e6;
                    f.cells[{first_year + t, x}] = Cell{E * std::exp(lm), E, Provenance::Hmd, Provenance::Hmd};
                }
            }
            data.add(MortalitySurface::from_fragment(f, data.ages, data.years));
        }
    }
    return data;
}

} // namespace

TEST(AuxiliaryModel, ProjectsCentralForceOfMortality) {
    std::map<Gender, AuxTruth> truths;
    const auto data = aux_dataset(truths, 1970, 2018);
    const auto& truth = truths[Gender::Male];
    const auto m = fit_auxiliary_projection_model(data, "BB");
    EXPECT_TRUE(m.warnings.empty());
    EXPECT_EQ(m.last_year(), 2018);

    // in-sample: noise-free deaths are reproduced
    const auto in = m.mu(Gender::Male, 2000);
    for (int x = 0; x <= 90; x += 10) {
        const auto xs = static_cast<std::size_t>(x);
        const double lm = truth.a[xs] + truth.b[xs] * truth.k[30] + truth.alpha[xs] + truth.beta[xs] * truth.kappa[30];
        EXPECT_NEAR(std::log(in[xs]), lm, 1e-6);
    }

    // two years ahead against the true central recursion
    const double k2 = truth.k.back() + 2 * truth.theta;
    const double kappa2 = truth.c + truth.phi * (truth.c + truth.phi * truth.kappa.back());
    const auto out = m.mu(Gender::Male, 2020);
    for (int x = 0; x <= 90; x += 5) {
        const auto xs = static_cast<std::size_t>(x);
        const double lm = truth.a[xs] + truth.b[xs] * k2 + truth.alpha[xs] + truth.beta[xs] * kappa2;
        EXPECT_NEAR(std::log(out[xs]), lm, 0.01) << "age " << x;
    }
    const auto closed = m.closed_mu(Gender::Female, 2020);
    ASSERT_EQ(closed.size(), 121u);
    for (int x = 91; x <= 120; ++x) EXPECT_GT(closed[static_cast<std::size_t>(x)], closed[static_cast<std::size_t>(x - 1)]);
    EXPECT_THROW(m.mu(Gender::Male, 1960), ValidationError);
}
