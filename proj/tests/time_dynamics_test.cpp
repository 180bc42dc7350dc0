#include "mortkit/time_dynamics.hpp"

#include "oracles.hpp"
#include "temp_dir.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>
#include <random>

using namespace mortkit;

namespace {

struct Truth {
    Vector6 psi;
    Matrix4 C;
};

Truth default_truth() {
    Truth t;
    t.psi << -0.2, -0.02, 0.9, -0.17, -0.03, 0.8;
    Matrix4 L;
    L << 0.30, 0, 0, 0,     //
        0.02, 0.05, 0, 0,   //
        0.25, 0.01, 0.12, 0, //
        -0.01, 0.02, 0.01, 0.06;
    t.C = L * L.transpose();
    return t;
}

/// Independent simulator of the RWD / AR(1) system (test-side, no library code).
PeriodEffectSeries simulate(const Truth& truth, std::size_t years, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    const Matrix4 L = truth.C.llt().matrixL();
    PeriodEffectSeries s;
    s.first_year = 1000;
    double K[2] = {0.0, 0.0}, k[2] = {0.1, -0.1};
    for (std::size_t t = 0; t < years; ++t) {
        if (t > 0) {
            Vector4 e;
            for (int i = 0; i < 4; ++i) e(i) = z(rng);
            e = L * e;
            for (int g = 0; g < 2; ++g) {
                K[g] += truth.psi(3 * g) + e(2 * g);
                k[g] = truth.psi(3 * g + 1) + truth.psi(3 * g + 2) * k[g] + e(2 * g + 1);
            }
        }
        s.K_male.push_back(K[0]);
        s.kappa_male.push_back(k[0]);
        s.K_female.push_back(K[1]);
        s.kappa_female.push_back(k[1]);
    }
    return s;
}

PeriodEffectSeries truncated(const PeriodEffectSeries& s) {
    auto out = s;
    out.K_male.pop_back();
    out.kappa_male.pop_back();
    out.K_female.pop_back();
    out.kappa_female.pop_back();
    return out;
}

} // namespace

TEST(BuildDesign, HandExample) {
    PeriodEffectSeries s{2000, {0, 1, 2}, {0, 0, 0}, {0, 1, 2}, {0, 0, 0}};
    const auto rows = build_design(s);
    ASSERT_EQ(rows.size(), 2u);
    for (const auto& r : rows) EXPECT_EQ(r.y, Vector4(1, 0, 1, 0));
    EXPECT_EQ(rows[0].year, 2001);
}

TEST(BuildDesign, SparsityPattern) {
    const auto s = simulate(default_truth(), 12, 1);
    const auto rows = build_design(s);
    EXPECT_EQ(rows.size(), s.size() - 1);
    for (std::size_t t = 0; t < rows.size(); ++t) {
        const auto& x = rows[t].x;
        Design expected = Design::Zero();
        expected(0, 0) = 1;
        expected(1, 1) = 1;
        expected(1, 2) = s.kappa_male[t];
        expected(2, 3) = 1;
        expected(3, 4) = 1;
        expected(3, 5) = s.kappa_female[t];
        EXPECT_EQ(x, expected);
        EXPECT_EQ((x.array() != 0.0).count(), 6);
    }
}

TEST(Loglik, SingleRowAtTheMean) {
    ObservationRow r{2001, Vector4::Zero(), Design::Zero()};
    // one observation of a 4-dim standard normal at its mean: -(4/2) log 2pi
    EXPECT_NEAR(loglik(Vector6::Zero(), Matrix4::Identity(), {r}, {1.0}), -2.0 * std::log(2.0 * std::numbers::pi),
                1e-15);
}

TEST(Loglik, MatchesUnweightedClosedForm) {
    const auto rows = build_design(simulate(default_truth(), 30, 2));
    const auto truth = default_truth();
    const double n = static_cast<double>(rows.size());
    double quad = 0.0;
    const Matrix4 Ci = truth.C.inverse();
    for (const auto& r : rows) {
        const Vector4 e = r.y - r.x * truth.psi;
        quad += e.dot(Ci * e);
    }
    const double closed = -n * (2.0 * std::log(2.0 * std::numbers::pi) + 0.5 * std::log(truth.C.determinant())) -
                          0.5 * quad;
    EXPECT_NEAR(loglik(truth.psi, truth.C, rows, std::vector<double>(rows.size(), 1.0)), closed,
                1e-10 * std::abs(closed));
}

TEST(Loglik, LinearInWeightsAndOrderFree) {
    auto rows = build_design(simulate(default_truth(), 20, 3));
    const auto truth = default_truth();
    std::vector<double> w(rows.size(), 0.5);
    const double half = loglik(truth.psi, truth.C, rows, w);
    const double full = loglik(truth.psi, truth.C, rows, std::vector<double>(rows.size(), 1.0));
    EXPECT_NEAR(full, 2.0 * half, 1e-12 * std::abs(full));
    std::mt19937_64 rng(3);
    std::shuffle(rows.begin(), rows.end(), rng);
    EXPECT_NEAR(loglik(truth.psi, truth.C, rows, std::vector<double>(rows.size(), 1.0)), full, 1e-12 * std::abs(full));
}

TEST(Loglik, RejectsNonPositiveDefiniteCovariance) {
    const auto rows = build_design(simulate(default_truth(), 10, 4));
    Matrix4 C = Matrix4::Identity();
    C(2, 2) = -1.0;
    EXPECT_THROW(loglik(Vector6::Zero(), C, rows, std::vector<double>(rows.size(), 1.0)), NumericalError);
}

TEST(FitWeightedMle, ZeroWeightEqualsTruncatedSeries) {
    const auto s = simulate(default_truth(), 33, 5);
    const auto rows = build_design(s);
    const auto a = fit_weighted_mle(rows, last_year_weights(rows.size(), 0.0));
    const auto b = fit_weighted_mle(truncated(s), std::vector<double>(rows.size() - 1, 1.0));
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(a.psi(i), b.psi(i), 1e-10);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) EXPECT_NEAR(a.C(i, j), b.C(i, j), 1e-10);
}

TEST(FitWeightedMle, RecoversGenerativeParameters) {
    const auto truth = default_truth();
    const auto rows = build_design(simulate(truth, 501, 6));
    const auto fit = fit_weighted_mle(rows, std::vector<double>(rows.size(), 1.0));
    // standard errors from the GLS information at the true covariance
    Eigen::Matrix<double, 6, 6> info = Eigen::Matrix<double, 6, 6>::Zero();
    const Matrix4 Ci = truth.C.inverse();
    for (const auto& r : rows) info += r.x.transpose() * Ci * r.x;
    const Vector6 se = info.inverse().diagonal().cwiseSqrt();
    for (int i = 0; i < 6; ++i) EXPECT_LT(std::abs(fit.psi(i) - truth.psi(i)), 3.0 * se(i)) << "parameter " << i;
    EXPECT_LT((fit.C - truth.C).norm(), 0.1 * truth.C.norm());
    EXPECT_TRUE(fit.stationary(Gender::Male));
}

TEST(FitWeightedMle, PsiIsTheGlsFixedPoint) {
    const auto rows = build_design(simulate(default_truth(), 40, 7));
    const std::vector<double> w(rows.size(), 1.0);
    const auto fit = fit_weighted_mle(rows, w);
    // independent GLS solve at the returned covariance
    const Matrix4 Ci = fit.C.inverse();
    Eigen::Matrix<double, 6, 6> lhs = Eigen::Matrix<double, 6, 6>::Zero();
    Vector6 rhs = Vector6::Zero();
    for (const auto& r : rows) {
        lhs += r.x.transpose() * Ci * r.x;
        rhs += r.x.transpose() * Ci * r.y;
    }
    const Vector6 psi = lhs.fullPivLu().solve(rhs);
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(fit.psi(i), psi(i), 1e-10);
}

TEST(FitWeightedMle, GradientVanishesAtTheOptimum) {
    const auto rows = build_design(simulate(default_truth(), 40, 8));
    auto w = last_year_weights(rows.size(), 0.25);
    const auto fit = fit_weighted_mle(rows, w);
    auto f = [&](const std::vector<double>& p) {
        Vector6 psi;
        for (int i = 0; i < 6; ++i) psi(i) = p[static_cast<std::size_t>(i)];
        return loglik(psi, fit.C, rows, w);
    };
    std::vector<double> p(fit.psi.data(), fit.psi.data() + 6);
    for (double g : oracle::fd_gradient(f, p)) EXPECT_LT(std::abs(g), 1e-6);

    // and in C: the covariance step is exact, so the likelihood cannot rise along any symmetric perturbation
    for (int i = 0; i < 4; ++i)
        for (int j = i; j < 4; ++j) {
            Matrix4 E = Matrix4::Zero();
            E(i, j) = E(j, i) = 1e-5;
            EXPECT_LE(loglik(fit.psi, fit.C + E, rows, w), fit.loglik + 1e-9);
            EXPECT_LE(loglik(fit.psi, fit.C - E, rows, w), fit.loglik + 1e-9);
        }
}

TEST(FitWeightedMle, DownWeightingAnOutlierShrinksVariances) {
    auto s = simulate(default_truth(), 33, 9);
    // shock in the final year makes its residual the largest
    s.K_male.back() += 3.0;
    s.K_female.back() += 2.5;
    s.kappa_male.back() += 0.4;
    s.kappa_female.back() += 0.4;
    const auto rows = build_design(s);
    Matrix4 prev;
    bool first = true;
    for (double w : {1.0, 0.75, 0.5, 0.25, 0.0}) {
        const auto fit = fit_weighted_mle(rows, last_year_weights(rows.size(), w));
        if (!first) {
            for (int i = 0; i < 4; ++i) EXPECT_LE(fit.C(i, i), prev(i, i) + 1e-10) << "w=" << w << " i=" << i;
        }
        prev = fit.C;
        first = false;
    }
}

TEST(FitWeightedMle, Deterministic) {
    const auto rows = build_design(simulate(default_truth(), 30, 10));
    const auto a = fit_weighted_mle(rows, last_year_weights(rows.size(), 0.5));
    const auto b = fit_weighted_mle(rows, last_year_weights(rows.size(), 0.5));
    EXPECT_EQ(a.psi, b.psi);
    EXPECT_EQ(a.C, b.C);
    EXPECT_EQ(a.loglik, b.loglik);
}

TEST(FitWeightedMle, InsufficientEffectiveSample) {
    const auto rows = build_design(simulate(default_truth(), 8, 11));
    EXPECT_THROW(fit_weighted_mle(rows, last_year_weights(rows.size(), 0.5)), ValidationError);
    EXPECT_NO_THROW(fit_weighted_mle(rows, std::vector<double>(rows.size(), 1.0)));
    EXPECT_THROW(fit_weighted_mle(rows, std::vector<double>(rows.size(), 1.5)), ValidationError);
}

TEST(FitWeightedMle, UnitRootIsReportedNotClamped) {
    Truth t = default_truth();
    t.psi(5) = 1.0;
    t.psi(4) = 0.0;
    auto s = simulate(t, 60, 12);
    // push kappa^F into a clearly explosive regime
    for (std::size_t i = 1; i < s.size(); ++i) s.kappa_female[i] = 1.03 * s.kappa_female[i - 1] + 0.01;
    const auto rows = build_design(s);
    const auto fit = fit_weighted_mle(rows, std::vector<double>(rows.size(), 1.0));
    EXPECT_GT(fit.phi(Gender::Female), 1.0);
    EXPECT_FALSE(fit.stationary(Gender::Female));
}

TEST(FitCsv, RoundTrip) {
    mortkit::testing::TempDir dir;
    const auto rows = build_design(simulate(default_truth(), 30, 13));
    const auto fit = fit_weighted_mle(rows, std::vector<double>(rows.size(), 1.0));
    write_fit_csv(dir / "ts.csv", fit);
    const auto back = read_fit_csv(dir / "ts.csv");
    EXPECT_EQ(back.psi, fit.psi);
    EXPECT_EQ(back.C, fit.C);
}
