#pragma once

#include "mortkit/error.hpp"

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mortkit {

enum class Gender { Male, Female };

inline constexpr std::array<Gender, 2> all_genders{Gender::Male, Gender::Female};

inline char to_char(Gender g) noexcept { return g == Gender::Male ? 'M' : 'F'; }

inline std::size_t index_of(Gender g) noexcept { return g == Gender::Male ? 0 : 1; }

inline Gender parse_gender(std::string_view s) {
    if (s == "M") return Gender::Male;
    if (s == "F") return Gender::Female;
    throw ParseError("unknown gender '" + std::string(s) + "' (expected M or F)");
}

/// Inclusive integer age interval, 0 <= min_age <= max_age <= 120.
class AgeRange {
public:
    static constexpr int kOldest = 120;

    AgeRange(int min_age, int max_age) : min_{min_age}, max_{max_age} {
        if (min_age < 0 || min_age > max_age || max_age > kOldest) {
            throw ValidationError("invalid age range [" + std::to_string(min_age) + "," +
                                  std::to_string(max_age) + "]");
        }
    }

    int min() const noexcept { return min_; }
    int max() const noexcept { return max_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(max_ - min_ + 1); }
    bool contains(int age) const noexcept { return age >= min_ && age <= max_; }
    std::size_t offset(int age) const noexcept { return static_cast<std::size_t>(age - min_); }

    friend bool operator==(const AgeRange&, const AgeRange&) = default;

private:
    int min_;
    int max_;
};

/// Inclusive calendar-year interval.
class YearRange {
public:
    YearRange(int first, int last) : first_{first}, last_{last} {
        if (first > last) {
            throw ValidationError("invalid year range " + std::to_string(first) + "-" +
                                  std::to_string(last));
        }
    }

    int first() const noexcept { return first_; }
    int last() const noexcept { return last_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(last_ - first_ + 1); }
    bool contains(int year) const noexcept { return year >= first_ && year <= last_; }
    std::size_t offset(int year) const noexcept { return static_cast<std::size_t>(year - first_); }

    friend bool operator==(const YearRange&, const YearRange&) = default;

private:
    int first_;
    int last_;
};

/// Age bucket [lower, upper] or open-ended [lower, +inf).
struct AgeBucket {
    int lower = 0;
    std::optional<int> upper;

    bool is_open() const noexcept { return !upper.has_value(); }
    bool contains(int age) const noexcept { return age >= lower && (!upper || age <= *upper); }

    /// "0-14" for closed buckets, "85+" for open ones.
    std::string label() const {
        return upper ? std::to_string(lower) + "-" + std::to_string(*upper)
                     : std::to_string(lower) + "+";
    }

    static AgeBucket parse(std::string_view label) {
        auto to_int = [&](std::string_view s) {
            if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
                throw ParseError("bad age bucket label '" + std::string(label) + "'");
            }
            return std::stoi(std::string(s));
        };
        if (!label.empty() && label.back() == '+') {
            return AgeBucket{to_int(label.substr(0, label.size() - 1)), std::nullopt};
        }
        const auto dash = label.find('-');
        if (dash == std::string_view::npos) {
            throw ParseError("bad age bucket label '" + std::string(label) + "'");
        }
        AgeBucket b{to_int(label.substr(0, dash)), to_int(label.substr(dash + 1))};
        if (*b.upper < b.lower) throw ParseError("bad age bucket label '" + std::string(label) + "'");
        return b;
    }

    friend bool operator==(const AgeBucket&, const AgeBucket&) = default;
};

/// The five STMF buckets [0,14],[15,64],[65,74],[75,84],85+.
inline std::vector<AgeBucket> stmf_buckets() {
    return {{0, 14}, {15, 64}, {65, 74}, {75, 84}, {85, std::nullopt}};
}

/// The nineteen Eurostat weekly buckets [0,4],...,[85,89],90+.
inline std::vector<AgeBucket> eurow_buckets() {
    std::vector<AgeBucket> out;
    for (int lo = 0; lo <= 85; lo += 5) out.push_back({lo, lo + 4});
    out.push_back({90, std::nullopt});
    return out;
}

/// Checks that buckets are sorted, contiguous from `from_age`, and only the last one may be open.
inline void check_partition(std::span<const AgeBucket> buckets, int from_age = 0) {
    int next = from_age;
    for (std::size_t i = 0; i < buckets.size(); ++i) {
        const auto& b = buckets[i];
        if (b.lower != next) {
            throw ValidationError("age buckets do not partition the age axis at age " + std::to_string(next));
        }
        if (b.is_open()) {
            if (i + 1 != buckets.size()) throw ValidationError("open bucket " + b.label() + " is not last");
            return;
        }
        next = *b.upper + 1;
    }
}

enum class Provenance { Hmd, Euro, Statbel, StmfDerived, EurowDerived, Virtual };

inline std::string_view to_string(Provenance p) noexcept {
    switch (p) {
    case Provenance::Hmd: return "HMD";
    case Provenance::Euro: return "EURO";
    case Provenance::Statbel: return "STATBEL";
    case Provenance::StmfDerived: return "STMF";
    case Provenance::EurowDerived: return "EUROW";
    case Provenance::Virtual: return "VIRTUAL";
    }
    return "?";
}

inline Provenance parse_provenance(std::string_view s) {
    for (auto p : {Provenance::Hmd, Provenance::Euro, Provenance::Statbel, Provenance::StmfDerived,
                   Provenance::EurowDerived, Provenance::Virtual}) {
        if (to_string(p) == s) return p;
    }
    throw ParseError("unknown provenance '" + std::string(s) + "'");
}

/// Dense age x year matrix, row-major by age.
class Grid {
public:
    Grid() = default;
    Grid(std::size_t ages, std::size_t years, double fill = 0.0)
        : ages_{ages}, years_{years}, data_(ages * years, fill) {}

    std::size_t ages() const noexcept { return ages_; }
    std::size_t years() const noexcept { return years_; }

    double& operator()(std::size_t x, std::size_t t) noexcept { return data_[x * years_ + t]; }
    double operator()(std::size_t x, std::size_t t) const noexcept { return data_[x * years_ + t]; }

    std::span<double> row(std::size_t x) noexcept { return {data_.data() + x * years_, years_}; }
    std::span<const double> row(std::size_t x) const noexcept { return {data_.data() + x * years_, years_}; }

    std::span<const double> values() const noexcept { return data_; }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    std::size_t ages_ = 0;
    std::size_t years_ = 0;
    std::vector<double> data_;
};

} // namespace mortkit
