#pragma once

// Test-only reference procedures. Nothing here calls into the library's fitting code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace mortkit::oracle {

/// Nelder-Mead maximisation with restarts from the best vertex.
inline std::vector<double> nelder_mead_max(const std::function<double(const std::vector<double>&)>& f,
                                           std::vector<double> start, double scale = 0.1, int restarts = 30,
                                           int iterations = 20000) {
    const std::size_t n = start.size();
    auto neg = [&](const std::vector<double>& p) { return -f(p); };
    std::vector<double> best = start;
    for (int r = 0; r < restarts; ++r) {
        std::vector<std::vector<double>> simplex(n + 1, best);
        const double s = scale / (1.0 + r);
        for (std::size_t i = 0; i < n; ++i) simplex[i + 1][i] += s * (1.0 + std::abs(best[i]));
        std::vector<double> val(n + 1);
        for (std::size_t i = 0; i <= n; ++i) val[i] = neg(simplex[i]);
        for (int it = 0; it < iterations; ++it) {
            std::vector<std::size_t> idx(n + 1);
            std::iota(idx.begin(), idx.end(), 0);
            std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return val[a] < val[b]; });
            std::vector<std::vector<double>> ss;
            std::vector<double> vv;
            for (auto i : idx) {
                ss.push_back(simplex[i]);
                vv.push_back(val[i]);
            }
            simplex = ss;
            val = vv;
            if (std::abs(val[n] - val[0]) <= 1e-15 * (1.0 + std::abs(val[0]))) break;
            std::vector<double> centroid(n, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j] / static_cast<double>(n);
            auto along = [&](double c) {
                std::vector<double> p(n);
                for (std::size_t j = 0; j < n; ++j) p[j] = centroid[j] + c * (simplex[n][j] - centroid[j]);
                return p;
            };
            auto xr = along(-1.0);
            double fr = neg(xr);
            if (fr < val[0]) {
                auto xe = along(-2.0);
                double fe = neg(xe);
                if (fe < fr) {
                    simplex[n] = xe;
                    val[n] = fe;
                } else {
                    simplex[n] = xr;
                    val[n] = fr;
                }
            } else if (fr < val[n - 1]) {
                simplex[n] = xr;
                val[n] = fr;
            } else {
                auto xc = fr < val[n] ? along(-0.5) : along(0.5);
                double fc = neg(xc);
                if (fc < std::min(fr, val[n])) {
                    simplex[n] = xc;
                    val[n] = fc;
                } else {
                    for (std::size_t i = 1; i <= n; ++i) {
                        for (std::size_t j = 0; j < n; ++j) simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
                        val[i] = neg(simplex[i]);
                    }
                }
            }
        }
        std::size_t b = std::min_element(val.begin(), val.end()) - val.begin();
        best = simplex[b];
    }
    return best;
}

/// Central finite-difference gradient.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       const std::vector<double>& p, double h = 1e-6) {
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto up = p, dn = p;
        up[i] += h;
        dn[i] -= h;
        g[i] = (f(up) - f(dn)) / (2.0 * h);
    }
    return g;
}

/// Literal evaluation of the life-expectancy sum with an explicit inner product loop (O(N^2)).
inline double direct_life_expectancy(const std::vector<double>& mu) {
    auto frac = [](double m) { return m == 0.0 ? 1.0 : (1.0 - std::exp(-m)) / m; };
    double e = frac(mu[0]);
    for (std::size_t k = 1; k < mu.size(); ++k) {
        double surv = 1.0;
        for (std::size_t j = 0; j < k; ++j) surv *= std::exp(-mu[j]);
        e += surv * frac(mu[k]);
    }
    return e;
}

} // namespace mortkit::oracle
