#pragma once

#include "mortkit/error.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace mortkit::csv {

/// Comma-separated fields of one line; no quoting, matching the documented file shapes.
inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

inline double parse_double(std::string_view s, std::size_t line, std::string_view field) {
    double value = 0.0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (ec != std::errc{} || ptr != end || !std::isfinite(value)) {
        throw ParseError("field '" + std::string(field) + "': cannot parse '" + std::string(s) + "' as number", line);
    }
    return value;
}

inline int parse_int(std::string_view s, std::size_t line, std::string_view field) {
    int value = 0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (ec != std::errc{} || ptr != end) {
        throw ParseError("field '" + std::string(field) + "': cannot parse '" + std::string(s) + "' as integer", line);
    }
    return value;
}

/// Shortest-safe decimal form with 17 significant digits; parses back to the identical double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, ptr);
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
};

/// Reads a header + rows file. Tolerates a trailing CR and skips blank lines.
inline Table read_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    Table table;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        for (auto f : split(line)) fields.emplace_back(f);
        if (!have_header) {
            table.header = std::move(fields);
            have_header = true;
            continue;
        }
        table.rows.push_back(std::move(fields));
        table.line_numbers.push_back(lineno);
    }
    if (!have_header) throw ParseError("'" + path.string() + "' is empty");
    return table;
}

inline std::string join(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += fields[i];
    }
    return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace mortkit::csv
