#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lipread/error.hpp"
#include "lipread/hashing.hpp"

namespace lipread {

/// Raised when a requested metric has no defined value (e.g. an empty reference).
class MetricError : public Error {
public:
    using Error::Error;
};

inline std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string format_number(const std::optional<double>& v) { return v ? format_number(*v) : "NA"; }

/// Requested metric; undefined values abort the report.
inline double require(const std::optional<double>& v, const std::string& what) {
    if (!v) throw MetricError("metric undefined: " + what);
    return *v;
}

/// Plot-ready CSV. The first line is a comment carrying the provenance, then the header; columns
/// keep the order given here.
class CsvTable {
public:
    CsvTable(std::vector<std::string> header, std::string provenance)
        : header_(std::move(header)), provenance_(std::move(provenance)) {}

    CsvTable& row(std::vector<std::string> cells) {
        if (cells.size() != header_.size()) throw Error("CsvTable: row width does not match the header");
        rows_.push_back(std::move(cells));
        return *this;
    }

    std::size_t size() const { return rows_.size(); }

    std::string str() const {
        std::string out = "# " + provenance_ + "\n";
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i) out += ',';
                out += quote(cells[i]);
            }
            out += '\n';
        };
        line(header_);
        for (const auto& r : rows_) line(r);
        return out;
    }

    void write(const std::filesystem::path& path) const { write_file_text(path, str()); }

private:
    static std::string quote(const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) {
            if (c == '"') q += '"';
            q += c;
        }
        return q + "\"";
    }

    std::vector<std::string> header_;
    std::string provenance_;
    std::vector<std::vector<std::string>> rows_;
};

} // namespace lipread
