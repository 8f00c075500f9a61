#pragma once

// Flat `key = value` run configuration, `#` starts a comment.

#include <charconv>
#include <cstdint>
#include <istream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mcd/dataset_io.hpp"
#include "mcd/detector.hpp"
#include "mcd/errors.hpp"
#include "mcd/simharness.hpp"

namespace mcd {

struct RunConfig {
    ExperimentSpec spec;
    ThresholdMethod method = ThresholdMethod::Chi2Approx;
    std::set<std::string> present;

    bool has(const std::string& key) const { return present.count(key) != 0; }

    void require(std::initializer_list<const char*> keys) const {
        for (const char* k : keys)
            if (!has(k)) throw Error(ErrorKind::ConfigError, std::string("missing required key '") + k + "'");
    }
};

inline const std::vector<std::string>& run_config_keys() {
    static const std::vector<std::string> keys{"family", "d",     "n",                "n_prime",
                                               "sigma2", "rho",   "alpha",            "grid",
                                               "tests",  "seed",  "trials_per_point", "calibration_trials",
                                               "method"};
    return keys;
}

namespace detail {

inline std::uint64_t parse_unsigned(std::string_view s, const std::string& where) {
    s = trim(s);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
        throw Error(ErrorKind::ConfigError, where + ": expected a non-negative integer");
    return v;
}

inline double parse_real(std::string_view s, const std::string& where) {
    double v = 0.0;
    if (!parse_double(s, v)) throw Error(ErrorKind::ConfigError, where + ": expected a finite number");
    return v;
}

}  // namespace detail

/// Applies one key/value pair; throws ConfigError for unknown keys or values
/// of the wrong type.
inline void set_config_value(RunConfig& cfg, const std::string& key, std::string_view value, const std::string& where) {
    auto& s = cfg.spec;
    value = detail::trim(value);
    if (key == "family") {
        const auto f = parse_family(value);
        if (!f) throw Error(ErrorKind::ConfigError, where + ": family must be linear or logistic");
        s.family = *f;
    } else if (key == "d") {
        s.d = detail::parse_unsigned(value, where);
    } else if (key == "n") {
        s.n = detail::parse_unsigned(value, where);
    } else if (key == "n_prime") {
        s.n_prime = detail::parse_unsigned(value, where);
    } else if (key == "sigma2") {
        s.sigma2 = detail::parse_real(value, where);
    } else if (key == "rho") {
        s.rho = detail::parse_real(value, where);
    } else if (key == "alpha") {
        s.alpha = detail::parse_real(value, where);
    } else if (key == "grid") {
        s.grid.clear();
        for (auto part : detail::split(value, ',')) s.grid.push_back(detail::parse_real(part, where));
    } else if (key == "tests") {
        s.tests.clear();
        for (auto part : detail::split(value, ',')) {
            const auto t = parse_test_kind(detail::trim(part));
            if (!t) throw Error(ErrorKind::ConfigError, where + ": unknown test '" + std::string(detail::trim(part)) + "'");
            s.tests.push_back(*t);
        }
    } else if (key == "seed") {
        s.seed = detail::parse_unsigned(value, where);
    } else if (key == "trials_per_point") {
        s.trials_per_point = detail::parse_unsigned(value, where);
    } else if (key == "calibration_trials") {
        s.calibration_trials = detail::parse_unsigned(value, where);
    } else if (key == "method") {
        const auto m = parse_threshold_method(value);
        if (!m) throw Error(ErrorKind::ConfigError, where + ": method must be mc or chi2");
        cfg.method = *m;
    } else {
        throw Error(ErrorKind::ConfigError, where + ": unknown key '" + key + "'");
    }
    cfg.present.insert(key);
}

inline RunConfig parse_run_config(std::istream& in, const std::string& source = "<config>") {
    RunConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = source + ":" + std::to_string(line_no);
        std::string_view text = line;
        if (const auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
        text = detail::trim(text);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string_view::npos) throw Error(ErrorKind::ConfigError, where + ": expected key = value");
        const std::string key(detail::trim(text.substr(0, eq)));
        if (cfg.has(key)) throw Error(ErrorKind::ConfigError, where + ": duplicate key '" + key + "'");
        set_config_value(cfg, key, text.substr(eq + 1), where);
    }
    return cfg;
}

inline RunConfig parse_run_config(const std::string& text) {
    std::istringstream in(text);
    return parse_run_config(in);
}

/// Canonical serialization of every key in a fixed order.
inline std::string serialize_run_config(const RunConfig& cfg) {
    const auto& s = cfg.spec;
    std::ostringstream out;
    out << "family = " << to_string(s.family) << '\n';
    out << "d = " << s.d << '\n';
    out << "n = " << s.n << '\n';
    out << "n_prime = " << s.n_prime << '\n';
    out << "sigma2 = " << format_number("%.17g", s.sigma2) << '\n';
    out << "rho = " << format_number("%.17g", s.rho) << '\n';
    out << "alpha = " << format_number("%.17g", s.alpha) << '\n';
    out << "grid = " << join_numbers(s.grid) << '\n';
    out << "tests = " << join_tests(s.tests) << '\n';
    out << "seed = " << s.seed << '\n';
    out << "trials_per_point = " << s.trials_per_point << '\n';
    out << "calibration_trials = " << s.calibration_trials << '\n';
    out << "method = " << (cfg.method == ThresholdMethod::MonteCarlo ? "mc" : "chi2") << '\n';
    return out.str();
}

}  // namespace mcd
