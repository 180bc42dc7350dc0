#pragma once

// Joint random-walk-with-drift / AR(1) dynamics of (K^M, kappa^M, K^F, kappa^F),
// fitted by a weighted four-dimensional Gaussian likelihood.

#include "mortkit/core_types.hpp"
#include "mortkit/csv.hpp"
#include "mortkit/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace mortkit {

using Vector4 = Eigen::Vector4d;
using Matrix4 = Eigen::Matrix4d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Design = Eigen::Matrix<double, 4, 6>;

/// Calibrated period effects of both genders over a common calibration period.
struct PeriodEffectSeries {
    int first_year = 0;
    std::vector<double> K_male, kappa_male, K_female, kappa_female;

    std::size_t size() const { return K_male.size(); }
    int last_year() const { return first_year + static_cast<int>(size()) - 1; }
};

struct ObservationRow {
    int year = 0;
    Vector4 y;  // (dK^M, kappa^M, dK^F, kappa^F)
    Design x;   // regressors for Psi = (theta^M, c^M, phi^M, theta^F, c^F, phi^F)
};

/// One row per year t_min+1 .. t_max; kappa_{t-1} enters only as a regressor.
inline std::vector<ObservationRow> build_design(const PeriodEffectSeries& s) {
    const std::size_t n = s.size();
    if (s.kappa_male.size() != n || s.K_female.size() != n || s.kappa_female.size() != n) {
        throw ValidationError("period effect series have different lengths");
    }
    if (n < 2) throw ValidationError("need at least two years of period effects");
    std::vector<ObservationRow> rows;
    rows.reserve(n - 1);
    for (std::size_t t = 1; t < n; ++t) {
        ObservationRow r;
        r.year = s.first_year + static_cast<int>(t);
        r.y << s.K_male[t] - s.K_male[t - 1], s.kappa_male[t], s.K_female[t] - s.K_female[t - 1], s.kappa_female[t];
        r.x.setZero();
        r.x(0, 0) = 1.0;
        r.x(1, 1) = 1.0;
        r.x(1, 2) = s.kappa_male[t - 1];
        r.x(2, 3) = 1.0;
        r.x(3, 4) = 1.0;
        r.x(3, 5) = s.kappa_female[t - 1];
        rows.push_back(r);
    }
    return rows;
}

struct TimeSeriesFit {
    Vector6 psi = Vector6::Zero();
    Matrix4 C = Matrix4::Identity();
    std::vector<double> weights;
    double loglik = 0.0;
    int iterations = 0;
    bool ridge_applied = false;
    std::vector<std::string> warnings;

    double theta(Gender g) const { return psi(g == Gender::Male ? 0 : 3); }
    double c(Gender g) const { return psi(g == Gender::Male ? 1 : 4); }
    double phi(Gender g) const { return psi(g == Gender::Male ? 2 : 5); }
    bool stationary(Gender g) const { return std::abs(phi(g)) < 1.0; }
};

namespace detail {

inline void check_weights(std::size_t rows, const std::vector<double>& w) {
    if (w.size() != rows) {
        throw ValidationError("expected " + std::to_string(rows) + " weights, got " + std::to_string(w.size()));
    }
    for (double v : w) {
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("weights must lie in [0, 1]");
    }
}

/// Psi = (sum w X' C^-1 X)^-1 sum w X' C^-1 Y.
inline Vector6 gls(const std::vector<ObservationRow>& rows, const std::vector<double>& w, const Matrix4& C) {
    const Matrix4 Ci = C.llt().solve(Matrix4::Identity());
    Eigen::Matrix<double, 6, 6> lhs = Eigen::Matrix<double, 6, 6>::Zero();
    Vector6 rhs = Vector6::Zero();
    for (std::size_t t = 0; t < rows.size(); ++t) {
        if (w[t] == 0.0) continue;
        const Eigen::Matrix<double, 6, 4> xtci = rows[t].x.transpose() * Ci;
        lhs += w[t] * xtci * rows[t].x;
        rhs += w[t] * xtci * rows[t].y;
    }
    Eigen::LDLT<Eigen::Matrix<double, 6, 6>> solver(lhs);
    if (solver.info() != Eigen::Success || solver.rcond() < 1e-14) {
        throw NumericalError("time-series design is rank deficient");
    }
    return solver.solve(rhs);
}

inline Matrix4 residual_moment(const std::vector<ObservationRow>& rows, const std::vector<double>& w,
                               const Vector6& psi) {
    Matrix4 S = Matrix4::Zero();
    double sw = 0.0;
    for (std::size_t t = 0; t < rows.size(); ++t) {
        if (w[t] == 0.0) continue;
        const Vector4 r = rows[t].y - rows[t].x * psi;
        S += w[t] * r * r.transpose();
        sw += w[t];
    }
    return S / sw;
}

/// Minimises f from x0 with BFGS and central-difference gradients; returns the best point found.
inline Eigen::VectorXd bfgs_minimise(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                     int max_iter = 200) {
    const auto n = x.size();
    auto grad = [&](const Eigen::VectorXd& p) {
        Eigen::VectorXd g(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double h = 1e-6 * std::max(1.0, std::abs(p(i)));
            Eigen::VectorXd up = p, dn = p;
            up(i) += h;
            dn(i) -= h;
            g(i) = (f(up) - f(dn)) / (2.0 * h);
        }
        return g;
    };
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
    double fx = f(x);
    Eigen::VectorXd g = grad(x);
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd dir = -H * g;
        if (dir.dot(g) >= 0.0) {
            H.setIdentity();
            dir = -g;
        }
        double step = 1.0;
        Eigen::VectorXd xn = x;
        double fn = fx;
        bool moved = false;
        for (int k = 0; k < 50; ++k) {
            xn = x + step * dir;
            fn = f(xn);
            if (std::isfinite(fn) && fn <= fx + 1e-4 * step * g.dot(dir)) {
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
        const Eigen::VectorXd gn = grad(xn);
        const Eigen::VectorXd s = xn - x, yv = gn - g;
        const double sy = s.dot(yv);
        if (sy > 1e-300) {
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
            H = (I - rho * s * yv.transpose()) * H * (I - rho * yv * s.transpose()) + rho * s * s.transpose();
        }
        const double gain = fx - fn;
        x = xn;
        fx = fn;
        g = gn;
        if (gain <= 1e-15 * std::max(1.0, std::abs(fx))) break;
    }
    return x;
}

} // namespace detail

/// l = -1/2 sum_t w_t (4 log 2pi + log|C| + r_t' C^-1 r_t), r_t = Y_t - X_t Psi.
inline double loglik(const Vector6& psi, const Matrix4& C, const std::vector<ObservationRow>& rows,
                     const std::vector<double>& weights) {
    detail::check_weights(rows.size(), weights);
    Eigen::LLT<Matrix4> llt(C);
    if (llt.info() != Eigen::Success) throw NumericalError("covariance matrix is not positive definite");
    const Matrix4 L = llt.matrixL();
    double logdet = 0.0;
    for (int i = 0; i < 4; ++i) {
        if (!(L(i, i) > 0.0)) throw NumericalError("covariance matrix is not positive definite");
        logdet += 2.0 * std::log(L(i, i));
    }
    const double c0 = 4.0 * std::log(2.0 * std::numbers::pi);
    double ll = 0.0;
    for (std::size_t t = 0; t < rows.size(); ++t) {
        if (weights[t] == 0.0) continue;
        const Vector4 r = rows[t].y - rows[t].x * psi;
        const double quad = r.dot(llt.solve(r));
        ll += weights[t] * (c0 + logdet + quad);
    }
    return -0.5 * ll;
}

inline double loglik(const TimeSeriesFit& fit, const std::vector<ObservationRow>& rows,
                     const std::vector<double>& weights) {
    return loglik(fit.psi, fit.C, rows, weights);
}

struct TimeSeriesOptions {
    double rel_tol = 1e-12;
    int max_iterations = 10000;
    bool polish = true;
};

/// Maximises the weighted likelihood by alternating exact GLS (Psi given C) and moment (C given Psi) steps,
/// then checks with a quasi-Newton run that no further improvement above 1e-8 exists.
inline TimeSeriesFit fit_weighted_mle(const std::vector<ObservationRow>& rows, std::vector<double> weights,
                                      const TimeSeriesOptions& opts = {}) {
    detail::check_weights(rows.size(), weights);
    double sw = 0.0;
    for (double w : weights) sw += w;
    if (sw < 7.0) {
        throw ValidationError("effective sample size " + csv::format_double(sw) +
                              " is below 7 (six mean parameters plus a covariance matrix)");
    }

    TimeSeriesFit fit;
    fit.weights = weights;
    auto covariance_step = [&](const Vector6& psi) {
        Matrix4 C = detail::residual_moment(rows, weights, psi);
        const double scale = std::max(C.trace(), 1e-300);
        Eigen::SelfAdjointEigenSolver<Matrix4> eig(C, Eigen::EigenvaluesOnly);
        if (eig.eigenvalues().minCoeff() <= 1e-14 * scale) {
            C += Matrix4::Identity() * 1e-12 * scale;
            if (!fit.ridge_applied) fit.warnings.push_back("singular covariance iterate; ridge added to the diagonal");
            fit.ridge_applied = true;
        }
        return C;
    };

    fit.psi = detail::gls(rows, weights, Matrix4::Identity());
    fit.C = covariance_step(fit.psi);
    double ll = loglik(fit.psi, fit.C, rows, weights);
    bool converged = false;
    for (int it = 1; it <= opts.max_iterations; ++it) {
        const Vector6 prev = fit.psi;
        fit.psi = detail::gls(rows, weights, fit.C);
        fit.C = covariance_step(fit.psi);
        const double next = loglik(fit.psi, fit.C, rows, weights);
        fit.iterations = it;
        const double change = std::abs(next - ll);
        ll = next;
        // the likelihood is flat near the optimum, so also wait for Psi to settle
        const double step = (fit.psi - prev).cwiseAbs().maxCoeff();
        if (change <= opts.rel_tol * std::max(1.0, std::abs(ll)) && step <= 1e-13 * (1.0 + fit.psi.cwiseAbs().maxCoeff())) {
            converged = true;
            break;
        }
    }
    if (!converged) fit.warnings.push_back("alternating GLS/moment iteration hit the iteration cap");
    fit.loglik = ll;

    if (opts.polish) {
        // parameterise C by its Cholesky factor with log-diagonal so every trial point is admissible
        auto pack = [](const Vector6& psi, const Matrix4& C) {
            Eigen::VectorXd p(16);
            p.head<6>() = psi;
            const Matrix4 L = C.llt().matrixL();
            int k = 6;
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j <= i; ++j) p(k++) = i == j ? std::log(L(i, i)) : L(i, j);
            return p;
        };
        auto unpack = [](const Eigen::VectorXd& p, Vector6& psi, Matrix4& C) {
            psi = p.head<6>();
            Matrix4 L = Matrix4::Zero();
            int k = 6;
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j <= i; ++j) L(i, j) = i == j ? std::exp(p(k++)) : p(k++);
            C = L * L.transpose();
        };
        auto neg = [&](const Eigen::VectorXd& p) {
            Vector6 psi;
            Matrix4 C;
            unpack(p, psi, C);
            try {
                return -loglik(psi, C, rows, weights);
            } catch (const NumericalError&) {
                return std::numeric_limits<double>::infinity();
            }
        };
        const auto best = detail::bfgs_minimise(neg, pack(fit.psi, fit.C));
        const double polished = -neg(best);
        if (polished > fit.loglik + 1e-8) {
            unpack(best, fit.psi, fit.C);
            fit.loglik = polished;
            fit.warnings.push_back("quasi-Newton polish improved the likelihood by " +
                                   csv::format_double(polished - ll));
        }
    }
    for (Gender g : all_genders) {
        if (!fit.stationary(g)) {
            fit.warnings.push_back(std::string("|phi^") + to_char(g) + "| >= 1: AR(1) process is not stationary");
        }
    }
    return fit;
}

inline TimeSeriesFit fit_weighted_mle(const PeriodEffectSeries& series, std::vector<double> weights,
                                      const TimeSeriesOptions& opts = {}) {
    return fit_weighted_mle(build_design(series), std::move(weights), opts);
}

/// Unit weights except for the final year.
inline std::vector<double> last_year_weights(std::size_t rows, double w_last) {
    std::vector<double> w(rows, 1.0);
    if (!w.empty()) w.back() = w_last;
    return w;
}

inline constexpr const char* kPsiNames[6] = {"theta_M", "c_M", "phi_M", "theta_F", "c_F", "phi_F"};

inline std::string fit_to_csv(const TimeSeriesFit& fit) {
    std::string text = "param,value\n";
    for (int i = 0; i < 6; ++i) text += std::string(kPsiNames[i]) + "," + csv::format_double(fit.psi(i)) + "\n";
    for (int i = 0; i < 4; ++i)
        for (int j = i; j < 4; ++j)
            text += "C_" + std::to_string(i + 1) + std::to_string(j + 1) + "," + csv::format_double(fit.C(i, j)) + "\n";
    return text;
}

inline void write_fit_csv(const std::filesystem::path& path, const TimeSeriesFit& fit) {
    csv::write_text(path, fit_to_csv(fit));
}

inline TimeSeriesFit read_fit_csv(const std::filesystem::path& path) {
    const auto table = csv::read_table(path);
    if (table.header != std::vector<std::string>{"param", "value"}) throw ParseError("expected header param,value", 1);
    TimeSeriesFit fit;
    int seen = 0;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto line = table.line_numbers[r];
        if (row.size() != 2) throw ParseError("expected 2 fields", line);
        const double v = csv::parse_double(row[1], line, "value");
        bool known = false;
        for (int i = 0; i < 6; ++i) {
            if (row[0] == kPsiNames[i]) {
                fit.psi(i) = v;
                known = true;
            }
        }
        if (!known && row[0].size() == 4 && row[0].starts_with("C_")) {
            const int i = row[0][2] - '1', j = row[0][3] - '1';
            if (i >= 0 && i < 4 && j >= i && j < 4) {
                fit.C(i, j) = fit.C(j, i) = v;
                known = true;
            }
        }
        if (!known) throw ParseError("unknown parameter '" + row[0] + "'", line);
        ++seen;
    }
    if (seen != 16) throw ParseError("expected 16 parameters, got " + std::to_string(seen), 1);
    return fit;
}

} // namespace mortkit
