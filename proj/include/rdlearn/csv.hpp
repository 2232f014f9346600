#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"

namespace rdlearn {

namespace csv {

/// Splits RFC-4180 text into records. Quoted fields may contain commas,
/// doubled quotes and line breaks; CRLF and LF line endings are accepted.
inline std::vector<std::vector<std::string>> parse_records(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t i = 0;
    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        // a blank line is not a record
        if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
        record.clear();
    };
    while (i < text.size()) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            ++i;
            continue;
        }
        switch (c) {
            case '"':
                if (!field_started && field.empty()) in_quotes = true;
                else field.push_back(c);
                field_started = true;
                break;
            case ',':
                end_field();
                break;
            case '\r':
                if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
                end_record();
                break;
            case '\n':
                end_record();
                break;
            default:
                field.push_back(c);
                field_started = true;
        }
        ++i;
    }
    if (field_started || !field.empty() || !record.empty()) end_record();
    return records;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

/// Locale-independent parse; nullopt unless the whole cell is a number.
inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

/// Shortest representation that round-trips to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += '"';
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace csv

/// Which columns of a CSV play which role.
struct CsvSchema {
    std::string outcome;
    std::string treatment;
    /// Empty means every column that is not outcome, treatment or propensity.
    std::vector<std::string> covariates;
    /// Optional per-observation propensity columns, one per arm in relabeled arm order.
    std::vector<std::string> propensity;
};

/// Relabeling rule: if every level is numeric and the set is {1,-1}, 1 -> arm 1 and
/// -1 -> arm 2; other all-numeric sets are sorted ascending by value; otherwise levels
/// are sorted lexicographically.
inline std::vector<std::string> order_arm_levels(std::vector<std::string> levels) {
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    std::vector<std::pair<double, std::string>> numeric;
    for (const auto& l : levels) {
        auto v = csv::parse_double(l);
        if (!v) return levels;
        numeric.emplace_back(*v, l);
    }
    if (numeric.size() == 2) {
        std::sort(numeric.begin(), numeric.end());
        if (numeric[0].first == -1.0 && numeric[1].first == 1.0) return {numeric[1].second, numeric[0].second};
    }
    std::sort(numeric.begin(), numeric.end());
    levels.clear();
    for (auto& [v, l] : numeric) levels.push_back(l);
    return levels;
}

inline Dataset parse_csv_text(std::string_view text, const CsvSchema& schema) {
    auto records = csv::parse_records(text);
    if (records.empty()) throw EmptyDataError("CSV is empty");
    const auto& header = records.front();
    std::map<std::string, std::size_t> column;
    for (std::size_t c = 0; c < header.size(); ++c) column.emplace(std::string(csv::trim(header[c])), c);

    auto require = [&](const std::string& name, const char* role) {
        auto it = column.find(name);
        if (name.empty() || it == column.end())
            throw SchemaError(std::string("missing ") + role + " column '" + name + "'");
        return it->second;
    };
    const auto y_col = require(schema.outcome, "outcome");
    const auto a_col = require(schema.treatment, "treatment");
    std::vector<std::size_t> p_cols;
    for (const auto& name : schema.propensity) p_cols.push_back(require(name, "propensity"));

    std::vector<std::size_t> x_cols;
    std::vector<std::string> x_names;
    if (schema.covariates.empty()) {
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (c == y_col || c == a_col || std::find(p_cols.begin(), p_cols.end(), c) != p_cols.end()) continue;
            x_cols.push_back(c);
            x_names.emplace_back(csv::trim(header[c]));
        }
    } else {
        for (const auto& name : schema.covariates) {
            x_cols.push_back(require(name, "covariate"));
            x_names.push_back(name);
        }
    }
    if (x_cols.empty()) throw SchemaError("schema selects no covariate columns");

    const std::size_t n = records.size() - 1;
    if (n == 0) throw EmptyDataError("CSV has a header but no data rows");

    Dataset d;
    d.covariate_names = x_names;
    d.x.resize(static_cast<Index>(n), static_cast<Index>(x_cols.size()));
    d.y.resize(static_cast<Index>(n));
    std::vector<std::string> raw_arms(n);
    Matrix prop(static_cast<Index>(n), static_cast<Index>(p_cols.size()));

    auto cell = [&](std::size_t r, std::size_t c) -> double {
        const auto& rec = records[r + 1];
        if (c >= rec.size())
            throw ParseError("row " + std::to_string(r + 1) + ": missing field for column '" +
                                 std::string(header[c]) + "'",
                             r + 1, c + 1);
        auto v = csv::parse_double(rec[c]);
        if (!v || !std::isfinite(*v))
            throw ParseError("row " + std::to_string(r + 1) + ", column '" + std::string(header[c]) +
                                 "': invalid numeric value '" + rec[c] + "'",
                             r + 1, c + 1);
        return *v;
    };

    for (std::size_t r = 0; r < n; ++r) {
        const auto ri = static_cast<Index>(r);
        d.y(ri) = cell(r, y_col);
        for (std::size_t j = 0; j < x_cols.size(); ++j) d.x(ri, static_cast<Index>(j)) = cell(r, x_cols[j]);
        for (std::size_t j = 0; j < p_cols.size(); ++j) prop(ri, static_cast<Index>(j)) = cell(r, p_cols[j]);
        const auto& rec = records[r + 1];
        if (a_col >= rec.size() || csv::trim(rec[a_col]).empty())
            throw ParseError("row " + std::to_string(r + 1) + ": missing treatment", r + 1, a_col + 1);
        raw_arms[r] = std::string(csv::trim(rec[a_col]));
    }

    d.arm_labels = order_arm_levels(raw_arms);
    d.k = static_cast<int>(d.arm_labels.size());
    d.single_arm = d.k == 1;
    std::map<std::string, int> code;
    for (std::size_t j = 0; j < d.arm_labels.size(); ++j) code[d.arm_labels[j]] = static_cast<int>(j + 1);
    d.a.resize(n);
    for (std::size_t r = 0; r < n; ++r) d.a[r] = code[raw_arms[r]];
    if (!p_cols.empty()) {
        if (static_cast<int>(p_cols.size()) != d.k)
            throw SchemaError("propensity columns (" + std::to_string(p_cols.size()) + ") do not match arm count (" +
                              std::to_string(d.k) + ")");
        d.propensity = std::move(prop);
    }
    d.validate();
    return d;
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    return parse_csv_text(csv::read_file(path), schema);
}

/// Writes covariates, original treatment labels and outcomes (plus the propensity
/// table when present) with full round-trip precision.
inline std::string to_csv_text(const Dataset& d, const CsvSchema& schema) {
    std::ostringstream out;
    const auto names = [&] {
        auto v = d.covariate_names;
        if (static_cast<Index>(v.size()) != d.p()) {
            v.clear();
            for (Index j = 0; j < d.p(); ++j) v.push_back("x" + std::to_string(j + 1));
        }
        return v;
    }();
    std::vector<std::string> pnames = schema.propensity;
    if (d.has_propensity_table() && static_cast<int>(pnames.size()) != d.k) {
        pnames.clear();
        for (int j = 1; j <= d.k; ++j) pnames.push_back("p" + std::to_string(j));
    }
    out << csv::quote(schema.outcome) << ',' << csv::quote(schema.treatment);
    for (const auto& nm : names) out << ',' << csv::quote(nm);
    if (d.has_propensity_table())
        for (const auto& nm : pnames) out << ',' << csv::quote(nm);
    out << '\n';
    for (Index i = 0; i < d.n(); ++i) {
        const auto arm = static_cast<std::size_t>(d.a[static_cast<std::size_t>(i)] - 1);
        const std::string label = arm < d.arm_labels.size() ? d.arm_labels[arm] : std::to_string(arm + 1);
        out << csv::format_double(d.y(i)) << ',' << csv::quote(label);
        for (Index j = 0; j < d.p(); ++j) out << ',' << csv::format_double(d.x(i, j));
        if (d.has_propensity_table())
            for (Index j = 0; j < d.k; ++j) out << ',' << csv::format_double(d.propensity(i, j));
        out << '\n';
    }
    return out.str();
}

inline void write_csv(const std::string& path, const Dataset& d, const CsvSchema& schema) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw SchemaError("cannot write file: " + path);
    f << to_csv_text(d, schema);
}

}  // namespace rdlearn
