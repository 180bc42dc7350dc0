#pragma once

#include "mortkit/core_types.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace mortkit::testing {

/// Lee-Carter parameters already normalised to sum b^2 = 1, sum k = 0, sum b >= 0.
struct TrueBlock {
    std::vector<double> a, b, k;
};

inline TrueBlock normalised(TrueBlock p) {
    const double mean = std::accumulate(p.k.begin(), p.k.end(), 0.0) / static_cast<double>(p.k.size());
    for (std::size_t x = 0; x < p.a.size(); ++x) p.a[x] += p.b[x] * mean;
    for (auto& v : p.k) v -= mean;
    double ss = 0.0;
    for (double v : p.b) ss += v * v;
    const double n = std::sqrt(ss);
    for (auto& v : p.b) v /= n;
    for (auto& v : p.k) v *= n;
    return p;
}

/// Gompertz-like levels, mildly age-varying loadings and a declining period index.
inline TrueBlock make_common(std::size_t ages, std::size_t years, int first_age = 60) {
    TrueBlock p;
    for (std::size_t x = 0; x < ages; ++x) {
        p.a.push_back(-9.5 + 0.09 * static_cast<double>(first_age + static_cast<int>(x)));
        p.b.push_back(0.6 + 0.4 * std::cos(0.3 * static_cast<double>(x)));
    }
    for (std::size_t t = 0; t < years; ++t) {
        const double u = years > 1 ? static_cast<double>(t) / static_cast<double>(years - 1) : 0.0;
        p.k.push_back(1.0 - 2.0 * u + 0.15 * std::sin(1.7 * static_cast<double>(t)));
    }
    return normalised(p);
}

inline TrueBlock make_deviation(std::size_t ages, std::size_t years) {
    TrueBlock p;
    for (std::size_t x = 0; x < ages; ++x) {
        p.a.push_back(0.05 * std::sin(0.5 * static_cast<double>(x)) + 0.02);
        p.b.push_back(0.5 + 0.3 * std::sin(0.2 * static_cast<double>(x) + 1.0));
    }
    for (std::size_t t = 0; t < years; ++t) {
        p.k.push_back(0.3 * std::cos(0.4 * static_cast<double>(t)) - 0.01 * static_cast<double>(t));
    }
    return normalised(p);
}

inline Grid log_mu(const TrueBlock& p) {
    Grid g(p.a.size(), p.k.size());
    for (std::size_t x = 0; x < p.a.size(); ++x)
        for (std::size_t t = 0; t < p.k.size(); ++t) g(x, t) = p.a[x] + p.b[x] * p.k[t];
    return g;
}

/// Expected deaths E * exp(offset + log_mu(p)) for a constant exposure.
inline Grid expected_deaths(const Grid& log_rates, const Grid& exposure) {
    Grid d(log_rates.ages(), log_rates.years());
    for (std::size_t x = 0; x < d.ages(); ++x)
        for (std::size_t t = 0; t < d.years(); ++t) d(x, t) = exposure(x, t) * std::exp(log_rates(x, t));
    return d;
}

inline Grid add(const Grid& a, const Grid& b) {
    Grid out(a.ages(), a.years());
    for (std::size_t x = 0; x < a.ages(); ++x)
        for (std::size_t t = 0; t < a.years(); ++t) out(x, t) = a(x, t) + b(x, t);
    return out;
}

} // namespace mortkit::testing
