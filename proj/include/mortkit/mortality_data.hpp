#pragma once

#include "mortkit/core_types.hpp"
#include "mortkit/csv.hpp"
#include "mortkit/error.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mortkit {

// ---------------------------------------------------------------------------
// Individual-age data
// ---------------------------------------------------------------------------

enum class AnnualShape { Hmd, Euro, Statbel };

inline Provenance provenance_of(AnnualShape s) noexcept {
    switch (s) {
    case AnnualShape::Hmd: return Provenance::Hmd;
    case AnnualShape::Euro: return Provenance::Euro;
    case AnnualShape::Statbel: return Provenance::Statbel;
    }
    return Provenance::Hmd;
}

/// One (age, year) observation. Deaths and exposure may come from different sources.
struct Cell {
    std::optional<double> deaths;
    std::optional<double> exposure;
    Provenance deaths_source = Provenance::Hmd;
    Provenance exposure_source = Provenance::Hmd;
};

/// Sparse individual-age data for one (country, gender), keyed by (year, age).
struct SurfaceFragment {
    std::string country;
    Gender gender = Gender::Male;
    std::map<std::pair<int, int>, Cell> cells;

    const Cell* find(int age, int year) const {
        auto it = cells.find({year, age});
        return it == cells.end() ? nullptr : &it->second;
    }

    std::set<int> years() const {
        std::set<int> out;
        for (const auto& [key, cell] : cells) out.insert(key.first);
        return out;
    }
};

using FragmentKey = std::pair<std::string, Gender>;
using FragmentMap = std::map<FragmentKey, SurfaceFragment>;

inline void validate_cell_values(std::optional<double> deaths, std::optional<double> exposure,
                                 const std::string& where) {
    if (deaths && *deaths < 0.0) throw ValidationError(where + ": negative deaths");
    if (exposure && *exposure <= 0.0) throw ValidationError(where + ": nonpositive exposure");
}

/// Merges `from` into `into`. A quantity supplied twice for the same cell is an error.
inline void merge_fragment(SurfaceFragment& into, const SurfaceFragment& from) {
    if (into.country.empty()) {
        into.country = from.country;
        into.gender = from.gender;
    } else if (into.country != from.country || into.gender != from.gender) {
        throw ValidationError("cannot merge fragments of different populations");
    }
    for (const auto& [key, cell] : from.cells) {
        auto& dst = into.cells[key];
        const auto where = from.country + " " + std::string(1, to_char(from.gender)) + " year " +
                           std::to_string(key.first) + " age " + std::to_string(key.second);
        if (cell.deaths) {
            if (dst.deaths) throw ValidationError(where + ": deaths supplied by more than one source");
            dst.deaths = cell.deaths;
            dst.deaths_source = cell.deaths_source;
        }
        if (cell.exposure) {
            if (dst.exposure) throw ValidationError(where + ": exposure supplied by more than one source");
            dst.exposure = cell.exposure;
            dst.exposure_source = cell.exposure_source;
        }
    }
}

inline void merge_fragments(FragmentMap& into, const FragmentMap& from) {
    for (const auto& [key, frag] : from) merge_fragment(into[key], frag);
}

/// Loads `country,year,gender,age,deaths,exposure[,provenance]`. Empty deaths or exposure
/// fields mean the file does not provide that quantity for the row.
inline FragmentMap load_individual_age_csv(const std::filesystem::path& path, AnnualShape shape) {
    const auto table = csv::read_table(path);
    const std::vector<std::string> expected{"country", "year", "gender", "age", "deaths", "exposure"};
    auto header = table.header;
    const bool has_provenance = header.size() == 7 && header[6] == "provenance";
    if (has_provenance) header.pop_back();
    if (header != expected) {
        throw ParseError("'" + path.string() + "': expected header " + csv::join(expected), 1);
    }
    FragmentMap out;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto line = table.line_numbers[r];
        if (row.size() != table.header.size()) {
            throw ParseError("expected " + std::to_string(table.header.size()) + " fields, got " +
                                 std::to_string(row.size()),
                             line);
        }
        const int year = csv::parse_int(row[1], line, "year");
        Gender gender;
        try {
            gender = parse_gender(row[2]);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), line);
        }
        const int age = csv::parse_int(row[3], line, "age");
        if (age < 0 || age > 110) throw ParseError("age " + std::to_string(age) + " outside 0-110", line);

        Cell cell;
        const auto prov = has_provenance && !row[6].empty() ? parse_provenance(row[6]) : provenance_of(shape);
        if (!row[4].empty()) cell.deaths = csv::parse_double(row[4], line, "deaths");
        if (!row[5].empty()) cell.exposure = csv::parse_double(row[5], line, "exposure");
        cell.deaths_source = prov;
        cell.exposure_source = prov;
        validate_cell_values(cell.deaths, cell.exposure, path.filename().string() + " line " + std::to_string(line));

        auto& frag = out[{row[0], gender}];
        frag.country = row[0];
        frag.gender = gender;
        SurfaceFragment single{row[0], gender, {{{year, age}, cell}}};
        try {
            merge_fragment(frag, single);
        } catch (const ValidationError& e) {
            throw ParseError(std::string("duplicate row: ") + e.what(), line);
        }
    }
    return out;
}

/// Writes fragments in the individual-age shape, sorted by (country, gender, year, age).
inline void write_individual_age_csv(const std::filesystem::path& path, const FragmentMap& data,
                                     bool with_provenance) {
    std::string text = "country,year,gender,age,deaths,exposure";
    text += with_provenance ? ",provenance\n" : "\n";
    for (const auto& [key, frag] : data) {
        for (const auto& [ya, cell] : frag.cells) {
            text += frag.country + "," + std::to_string(ya.first) + "," + to_char(frag.gender) + "," +
                    std::to_string(ya.second) + ",";
            if (cell.deaths) text += csv::format_double(*cell.deaths);
            text += ",";
            if (cell.exposure) text += csv::format_double(*cell.exposure);
            if (with_provenance) {
                text += ",";
                // a row carries one provenance; prefer VIRTUAL when either quantity was constructed
                const bool virt = (cell.deaths && cell.deaths_source == Provenance::Virtual) ||
                                  (cell.exposure && cell.exposure_source == Provenance::Virtual);
                text += to_string(virt ? Provenance::Virtual
                                       : (cell.deaths ? cell.deaths_source : cell.exposure_source));
            }
            text += "\n";
        }
    }
    csv::write_text(path, text);
}

/// Complete rectangular deaths/exposure grid for one (country, gender).
struct MortalitySurface {
    std::string country;
    Gender gender = Gender::Male;
    AgeRange ages{0, 90};
    YearRange years{2000, 2000};
    Grid deaths;
    Grid exposures;
    std::vector<Provenance> deaths_source;   // row-major by age, like Grid
    std::vector<Provenance> exposure_source;

    static constexpr double kMaxCentralRate = 5.0;

    double d(int age, int year) const { return deaths(ages.offset(age), years.offset(year)); }
    double e(int age, int year) const { return exposures(ages.offset(age), years.offset(year)); }

    std::size_t count_source(Provenance p) const {
        std::size_t n = 0;
        for (auto s : deaths_source) n += s == p;
        for (auto s : exposure_source) n += s == p;
        return n;
    }

    /// Builds a surface restricted to `ages` x `years`; fails loudly on any missing cell.
    static MortalitySurface from_fragment(const SurfaceFragment& frag, AgeRange ages, YearRange years) {
        MortalitySurface s{frag.country, frag.gender, ages, years, Grid(ages.size(), years.size()),
                           Grid(ages.size(), years.size()), {}, {}};
        s.deaths_source.resize(ages.size() * years.size());
        s.exposure_source.resize(ages.size() * years.size());
        for (int x = ages.min(); x <= ages.max(); ++x) {
            for (int t = years.first(); t <= years.last(); ++t) {
                const auto where = frag.country + " " + std::string(1, to_char(frag.gender)) + " year " +
                                   std::to_string(t) + " age " + std::to_string(x);
                const Cell* c = frag.find(x, t);
                if (!c || !c->deaths) throw IncompleteDataError(where + ": missing deaths");
                if (!c->exposure) throw IncompleteDataError(where + ": missing exposure");
                validate_cell_values(c->deaths, c->exposure, where);
                if (*c->deaths / *c->exposure > kMaxCentralRate) {
                    throw ValidationError(where + ": central death rate above sanity bound");
                }
                const auto i = ages.offset(x);
                const auto j = years.offset(t);
                s.deaths(i, j) = *c->deaths;
                s.exposures(i, j) = *c->exposure;
                s.deaths_source[i * years.size() + j] = c->deaths_source;
                s.exposure_source[i * years.size() + j] = c->exposure_source;
            }
        }
        return s;
    }
};

/// Surfaces of all pool countries for one age range and calibration period.
struct MultiPopulationDataset {
    AgeRange ages{0, 90};
    YearRange years{2000, 2000};
    std::vector<std::string> common_pool;
    std::map<FragmentKey, MortalitySurface> surfaces;

    void add(MortalitySurface s) {
        if (!(s.ages == ages) || !(s.years == years)) {
            throw ValidationError("surface " + s.country + " does not match the dataset age/year grid");
        }
        FragmentKey key{s.country, s.gender};
        surfaces.insert_or_assign(std::move(key), std::move(s));
    }

    const MortalitySurface& at(const std::string& country, Gender g) const {
        auto it = surfaces.find({country, g});
        if (it == surfaces.end()) {
            throw IncompleteDataError("no surface for " + country + " " + std::string(1, to_char(g)));
        }
        return it->second;
    }

    /// d^T and E^T summed over the common pool.
    std::pair<Grid, Grid> aggregate(Gender g) const {
        Grid d(ages.size(), years.size()), e(ages.size(), years.size());
        for (const auto& c : common_pool) {
            const auto& s = at(c, g);
            for (std::size_t x = 0; x < ages.size(); ++x) {
                for (std::size_t t = 0; t < years.size(); ++t) {
                    d(x, t) += s.deaths(x, t);
                    e(x, t) += s.exposures(x, t);
                }
            }
        }
        return {std::move(d), std::move(e)};
    }
};

// ---------------------------------------------------------------------------
// Weekly bucketed data
// ---------------------------------------------------------------------------

enum class WeeklyShape { Stmf, Eurow };

enum class ExposurePath { None, Column, DerivedFromRate, Mixed };

inline std::string_view to_string(ExposurePath p) noexcept {
    switch (p) {
    case ExposurePath::None: return "none";
    case ExposurePath::Column: return "column";
    case ExposurePath::DerivedFromRate: return "derived-d/m";
    case ExposurePath::Mixed: return "mixed";
    }
    return "?";
}

struct WeekRecord {
    std::optional<double> deaths;
    std::optional<double> exposure;
    std::optional<double> death_rate;
};

struct BucketedWeeklySeries {
    std::string country;
    Gender gender = Gender::Male;
    int year = 0;
    int week_count = 52;
    WeeklyShape shape = WeeklyShape::Stmf;
    std::vector<AgeBucket> buckets;
    std::vector<std::vector<WeekRecord>> weeks; // [bucket][week-1]
    ExposurePath exposure_path = ExposurePath::None;

    static BucketedWeeklySeries empty(std::string country, Gender g, int year, WeeklyShape shape,
                                      int week_count = 52) {
        BucketedWeeklySeries s;
        s.country = std::move(country);
        s.gender = g;
        s.year = year;
        s.shape = shape;
        s.week_count = week_count;
        s.buckets = shape == WeeklyShape::Stmf ? stmf_buckets() : eurow_buckets();
        s.weeks.assign(s.buckets.size(), std::vector<WeekRecord>(static_cast<std::size_t>(week_count)));
        return s;
    }
};

/// Weekly exposure from deaths and the central death rate, E = d / m.
inline double derive_weekly_exposure(double deaths, double death_rate) {
    if (!(death_rate > 0.0)) throw DomainError("death rate must be positive to derive exposure");
    return deaths / death_rate;
}

/// Loads a STMF- or EUROW-shaped weekly file; one series per (country, gender, year).
inline std::vector<BucketedWeeklySeries> load_weekly_csv(const std::filesystem::path& path, WeeklyShape shape) {
    const auto table = csv::read_table(path);
    const auto& h = table.header;
    const std::vector<std::string> base{"country", "year", "week", "gender", "bucket", "deaths"};
    bool has_rate = false, has_exposure = false;
    if (shape == WeeklyShape::Stmf) {
        auto stmf = base;
        stmf.push_back("death_rate");
        auto stmf_e = stmf;
        stmf_e.push_back("exposure");
        has_rate = true;
        if (h == stmf_e) {
            has_exposure = true;
        } else if (h != stmf) {
            throw ParseError("'" + path.string() + "': expected header " + csv::join(stmf) + "[,exposure]", 1);
        }
    } else if (h != base) {
        throw ParseError("'" + path.string() + "': expected header " + csv::join(base), 1);
    }

    const auto declared = shape == WeeklyShape::Stmf ? stmf_buckets() : eurow_buckets();
    struct Key {
        std::string country;
        Gender gender;
        int year;
        auto operator<=>(const Key&) const = default;
    };
    std::map<Key, std::map<std::pair<std::size_t, int>, WeekRecord>> rows;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto line = table.line_numbers[r];
        if (row.size() != h.size()) throw ParseError("expected " + std::to_string(h.size()) + " fields", line);
        const int year = csv::parse_int(row[1], line, "year");
        const int week = csv::parse_int(row[2], line, "week");
        if (week < 1 || week > 53) throw ParseError("week " + std::to_string(week) + " outside 1-53", line);
        Gender g;
        try {
            g = parse_gender(row[3]);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), line);
        }
        AgeBucket bucket;
        try {
            bucket = AgeBucket::parse(row[4]);
        } catch (const ParseError&) {
            throw ParseError("unknown bucket label '" + row[4] + "'", line);
        }
        std::size_t bi = declared.size();
        for (std::size_t i = 0; i < declared.size(); ++i) {
            if (declared[i] == bucket) bi = i;
        }
        if (bi == declared.size()) throw ParseError("unknown bucket label '" + row[4] + "'", line);

        WeekRecord rec;
        if (!row[5].empty()) rec.deaths = csv::parse_double(row[5], line, "deaths");
        if (has_rate && !row[6].empty()) rec.death_rate = csv::parse_double(row[6], line, "death_rate");
        if (has_exposure && !row[7].empty()) rec.exposure = csv::parse_double(row[7], line, "exposure");
        if (rec.deaths && *rec.deaths < 0.0) throw ValidationError("line " + std::to_string(line) + ": negative deaths");
        if (rec.exposure && *rec.exposure <= 0.0) {
            throw ValidationError("line " + std::to_string(line) + ": nonpositive exposure");
        }
        if (rec.death_rate && *rec.death_rate < 0.0) {
            throw ValidationError("line " + std::to_string(line) + ": negative death rate");
        }
        if (rec.deaths && rec.exposure && rec.death_rate) {
            const double lhs = *rec.death_rate * *rec.exposure;
            if (std::abs(lhs - *rec.deaths) > 1e-6 * std::max(std::abs(*rec.deaths), std::abs(lhs))) {
                throw ValidationError("line " + std::to_string(line) + ": death_rate * exposure != deaths");
            }
        }
        auto& bucket_rows = rows[{row[0], g, year}];
        if (!bucket_rows.emplace(std::pair{bi, week}, rec).second) {
            throw ParseError("duplicate row for bucket " + row[4] + " week " + std::to_string(week), line);
        }
    }

    std::vector<BucketedWeeklySeries> out;
    for (auto& [key, recs] : rows) {
        int max_week = 0;
        for (const auto& [bw, rec] : recs) max_week = std::max(max_week, bw.second);
        auto s = BucketedWeeklySeries::empty(key.country, key.gender, key.year, shape, std::max(52, max_week));
        bool used_column = false, used_rate = false;
        for (auto& [bw, rec] : recs) {
            if (!rec.exposure && rec.deaths && rec.death_rate && *rec.death_rate > 0.0) {
                rec.exposure = derive_weekly_exposure(*rec.deaths, *rec.death_rate);
                used_rate = true;
            } else if (rec.exposure) {
                used_column = true;
            }
            s.weeks[bw.first][static_cast<std::size_t>(bw.second - 1)] = rec;
        }
        s.exposure_path = used_column && used_rate ? ExposurePath::Mixed
                          : used_column            ? ExposurePath::Column
                          : used_rate              ? ExposurePath::DerivedFromRate
                                                   : ExposurePath::None;
        out.push_back(std::move(s));
    }
    return out;
}

/// Writes weekly series in the STMF or EUROW shape (STMF always includes the exposure column).
inline void write_weekly_csv(const std::filesystem::path& path, std::span<const BucketedWeeklySeries> series,
                             WeeklyShape shape) {
    std::string text = shape == WeeklyShape::Stmf ? "country,year,week,gender,bucket,deaths,death_rate,exposure\n"
                                                  : "country,year,week,gender,bucket,deaths\n";
    for (const auto& s : series) {
        for (std::size_t b = 0; b < s.buckets.size(); ++b) {
            for (std::size_t w = 0; w < s.weeks[b].size(); ++w) {
                const auto& rec = s.weeks[b][w];
                if (!rec.deaths && !rec.exposure) continue;
                text += s.country + "," + std::to_string(s.year) + "," + std::to_string(w + 1) + "," +
                        to_char(s.gender) + "," + s.buckets[b].label() + ",";
                if (rec.deaths) text += csv::format_double(*rec.deaths);
                if (shape == WeeklyShape::Stmf) {
                    text += ",";
                    if (rec.death_rate) text += csv::format_double(*rec.death_rate);
                    text += ",";
                    if (rec.exposure) text += csv::format_double(*rec.exposure);
                }
                text += "\n";
            }
        }
    }
    csv::write_text(path, text);
}

struct BucketedAnnualSeries {
    std::string country;
    Gender gender = Gender::Male;
    int year = 0;
    std::vector<AgeBucket> buckets;
    std::optional<std::vector<double>> deaths;
    std::optional<std::vector<double>> exposure;

    std::optional<std::size_t> open_index() const {
        if (!buckets.empty() && buckets.back().is_open()) return buckets.size() - 1;
        return std::nullopt;
    }
};

/// Annual bucket deaths; a 53-week year is rescaled by 52/53.
inline BucketedAnnualSeries annualize_weekly_deaths(const BucketedWeeklySeries& s) {
    BucketedAnnualSeries out{s.country, s.gender, s.year, s.buckets, std::vector<double>(s.buckets.size()), {}};
    for (std::size_t b = 0; b < s.buckets.size(); ++b) {
        double sum = 0.0;
        for (int w = 1; w <= s.week_count; ++w) {
            const auto& rec = s.weeks[b][static_cast<std::size_t>(w - 1)];
            if (!rec.deaths) {
                throw IncompleteDataError(s.country + " " + std::to_string(s.year) + " bucket " +
                                          s.buckets[b].label() + ": week " + std::to_string(w) + " missing");
            }
            sum += *rec.deaths;
        }
        (*out.deaths)[b] = s.week_count == 53 ? sum * 52.0 / 53.0 : sum;
    }
    return out;
}

/// Annual bucket exposures: 52 times the constant weekly exposure.
inline BucketedAnnualSeries annualize_weekly_exposure(const BucketedWeeklySeries& s, double rel_tol = 1e-6) {
    BucketedAnnualSeries out{s.country, s.gender, s.year, s.buckets, {}, std::vector<double>(s.buckets.size())};
    for (std::size_t b = 0; b < s.buckets.size(); ++b) {
        std::vector<double> values;
        for (int w = 1; w <= s.week_count; ++w) {
            const auto& rec = s.weeks[b][static_cast<std::size_t>(w - 1)];
            if (rec.exposure) values.push_back(*rec.exposure);
        }
        if (values.empty()) {
            throw IncompleteDataError(s.country + " " + std::to_string(s.year) + " bucket " +
                                      s.buckets[b].label() + ": no weekly exposure");
        }
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        for (double v : values) {
            if (std::abs(v - mean) > rel_tol * mean) {
                throw ValidationError(s.country + " " + std::to_string(s.year) + " bucket " +
                                      s.buckets[b].label() + ": weekly exposure is not constant");
            }
        }
        (*out.exposure)[b] = 52.0 * mean;
    }
    return out;
}

/// Cell-wise sum of constituent series (e.g. England and Wales, Scotland, Northern Ireland).
inline BucketedWeeklySeries aggregate_uk(std::span<const BucketedWeeklySeries> parts,
                                         const std::string& country = "UNK") {
    if (parts.empty()) throw ValidationError("no constituent series to aggregate");
    const auto& first = parts.front();
    auto out = BucketedWeeklySeries::empty(country, first.gender, first.year, first.shape, first.week_count);
    out.buckets = first.buckets;
    out.exposure_path = first.exposure_path;
    for (const auto& p : parts) {
        if (p.year != first.year || p.gender != first.gender || p.buckets != first.buckets ||
            p.week_count != first.week_count) {
            throw ValidationError("constituent " + p.country + " does not match year/gender/buckets/weeks");
        }
    }
    for (std::size_t b = 0; b < out.buckets.size(); ++b) {
        for (std::size_t w = 0; w < static_cast<std::size_t>(out.week_count); ++w) {
            double d = 0.0, e = 0.0;
            bool all_e = true;
            for (const auto& p : parts) {
                const auto& rec = p.weeks[b][w];
                if (!rec.deaths) {
                    throw IncompleteDataError("constituent " + p.country + " bucket " + p.buckets[b].label() +
                                              ": week " + std::to_string(w + 1) + " missing");
                }
                d += *rec.deaths;
                if (rec.exposure) {
                    e += *rec.exposure;
                } else {
                    all_e = false;
                }
            }
            auto& rec = out.weeks[b][w];
            rec.deaths = d;
            if (all_e) {
                rec.exposure = e;
                if (e > 0.0) rec.death_rate = d / e;
            }
        }
    }
    return out;
}

enum class ConsistencyStatus { Consistent, Inconsistent, NotComparable };

struct ConsistencyMismatch {
    AgeBucket bucket;
    int week = 0;
    double eurostat = 0.0;
    double stmf = 0.0;
};

struct ConsistencyReport {
    ConsistencyStatus status = ConsistencyStatus::Consistent;
    std::vector<ConsistencyMismatch> mismatches;
    std::string note;
};

/// Rolls the Eurostat 5-year buckets up to the STMF buckets and compares week by week.
/// A bucket-week matches when |euro - stmf| <= rel_tol * |stmf| + abs_slack.
inline ConsistencyReport check_eurostat_stmf_consistency(const BucketedWeeklySeries& euro,
                                                         const BucketedWeeklySeries& stmf,
                                                         double rel_tol = 1e-3, double abs_slack = 1.0) {
    ConsistencyReport report;
    if (euro.country != stmf.country || euro.gender != stmf.gender || euro.year != stmf.year) {
        report.status = ConsistencyStatus::NotComparable;
        report.note = "series describe different populations or years";
        return report;
    }
    const auto eb = eurow_buckets();
    const auto sb = stmf_buckets();
    if (euro.buckets != eb || stmf.buckets != sb) {
        report.status = ConsistencyStatus::NotComparable;
        report.note = "bucket structure is not EUROW vs STMF";
        return report;
    }
    for (std::size_t b = 0; b < eb.size(); ++b) {
        bool any = false;
        for (const auto& rec : euro.weeks[b]) any = any || rec.deaths.has_value();
        if (!any) {
            report.status = ConsistencyStatus::NotComparable;
            report.note = "Eurostat bucket " + eb[b].label() + " absent";
            return report;
        }
    }
    const int weeks = std::max(euro.week_count, stmf.week_count);
    for (std::size_t s = 0; s < sb.size(); ++s) {
        for (int w = 1; w <= weeks; ++w) {
            const auto wi = static_cast<std::size_t>(w - 1);
            double e_sum = 0.0;
            bool e_missing = false;
            for (std::size_t b = 0; b < eb.size(); ++b) {
                // the 90+ Eurostat bucket rolls into STMF 85+
                const bool inside = sb[s].contains(eb[b].lower);
                if (!inside) continue;
                if (wi >= euro.weeks[b].size() || !euro.weeks[b][wi].deaths) {
                    e_missing = true;
                    continue;
                }
                e_sum += *euro.weeks[b][wi].deaths;
            }
            const bool s_missing = wi >= stmf.weeks[s].size() || !stmf.weeks[s][wi].deaths;
            if (e_missing && s_missing) continue;
            const double s_val = s_missing ? 0.0 : *stmf.weeks[s][wi].deaths;
            if (e_missing || s_missing || std::abs(e_sum - s_val) > rel_tol * std::abs(s_val) + abs_slack) {
                report.mismatches.push_back({sb[s], w, e_sum, s_val});
            }
        }
    }
    if (!report.mismatches.empty()) {
        report.status = ConsistencyStatus::Inconsistent;
        const auto& m = report.mismatches.front();
        report.note = std::to_string(report.mismatches.size()) + " bucket-weeks differ, first: bucket " +
                      m.bucket.label() + " week " + std::to_string(m.week);
    }
    return report;
}

} // namespace mortkit
