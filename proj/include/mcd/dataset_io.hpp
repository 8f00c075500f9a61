#pragma once

// Dataset CSV files: header `y,x1,...,xd`, then one sample per line.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mcd/errors.hpp"
#include "mcd/models.hpp"

namespace mcd {

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    // strtod, unlike from_chars, accepts a leading '+'.
    std::string tmp(s);
    char* end = nullptr;
    out = std::strtod(tmp.c_str(), &end);
    return end == tmp.c_str() + tmp.size() && std::isfinite(out);
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

inline Dataset parse_dataset_csv(std::istream& in, Family family, const std::string& source = "<stream>") {
    auto fail = [&](std::size_t line_no, const std::string& what) {
        throw Error(ErrorKind::ParseError, source + ":" + std::to_string(line_no) + ": " + what);
    };
    std::string line;
    std::size_t line_no = 0;
    std::size_t d = 0;
    bool have_header = false;
    std::vector<double> feature_values;
    Vector responses;
    while (std::getline(in, line)) {
        ++line_no;
        const auto text = detail::trim(line);
        if (text.empty()) continue;
        const auto fields = detail::split(text, ',');
        if (!have_header) {
            if (fields.size() < 2 || detail::trim(fields[0]) != "y") fail(line_no, "header must be y,x1,...,xd");
            for (std::size_t j = 1; j < fields.size(); ++j)
                if (detail::trim(fields[j]) != "x" + std::to_string(j))
                    fail(line_no, "header column " + std::to_string(j + 1) + " must be x" + std::to_string(j));
            d = fields.size() - 1;
            have_header = true;
            continue;
        }
        if (fields.size() != d + 1)
            fail(line_no, "expected " + std::to_string(d + 1) + " fields, found " + std::to_string(fields.size()));
        double v = 0.0;
        if (!detail::parse_double(fields[0], v)) fail(line_no, "response is not a finite number");
        if (family == Family::Logistic && v != 1.0 && v != -1.0) fail(line_no, "logistic label must be -1 or 1");
        responses.push_back(v);
        for (std::size_t j = 1; j <= d; ++j) {
            if (!detail::parse_double(fields[j], v))
                fail(line_no, "field " + std::to_string(j + 1) + " is not a finite number");
            feature_values.push_back(v);
        }
    }
    if (!have_header) fail(line_no, "missing header");
    if (responses.empty()) fail(line_no, "no samples");
    Matrix x(responses.size(), d);
    std::copy(feature_values.begin(), feature_values.end(), x.row(0).data());
    return Dataset(std::move(x), std::move(responses), family);
}

inline Dataset read_dataset_csv(const std::string& path, Family family) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ParseError, "cannot open " + path);
    return parse_dataset_csv(in, family, path);
}

inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
    out << 'y';
    for (std::size_t j = 1; j <= data.dim(); ++j) out << ",x" << j;
    out << '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << detail::format_double(data.responses()[i]);
        for (double v : data.features().row(i)) out << ',' << detail::format_double(v);
        out << '\n';
    }
}

}  // namespace mcd
