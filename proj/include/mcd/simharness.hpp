#pragma once

// Experiment engine: sweeps the normalized change ‖θ − θ′‖₂/ρ over a grid and
// estimates P{δ = 1} for each requested test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mcd/detector.hpp"
#include "mcd/errors.hpp"
#include "mcd/models.hpp"
#include "mcd/numstat.hpp"
#include "mcd/parallel.hpp"
#include "mcd/threshold.hpp"

namespace mcd {

enum class TestKind { EdtMc, EdtChi2, Glrt };

inline constexpr std::string_view to_string(TestKind t) noexcept {
    switch (t) {
        case TestKind::EdtMc: return "edt_mc";
        case TestKind::EdtChi2: return "edt_chi2";
        case TestKind::Glrt: return "glrt";
    }
    return "?";
}

inline std::optional<TestKind> parse_test_kind(std::string_view s) {
    if (s == "edt_mc") return TestKind::EdtMc;
    if (s == "edt_chi2") return TestKind::EdtChi2;
    if (s == "glrt") return TestKind::Glrt;
    return std::nullopt;
}

/// ρ for the logistic sweep: a chord of 2 sin(π/8) between unit vectors is
/// an angle of π/4.
inline const double kLogisticRho = 2.0 * std::sin(std::numbers::pi / 8.0);

inline std::vector<double> default_grid() {
    std::vector<double> g(21);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(i) / 10.0;
    return g;
}

struct ExperimentSpec {
    Family family = Family::Linear;
    std::size_t d = 10;
    std::size_t n = 40;
    std::size_t n_prime = 40;
    double sigma2 = 1.0;
    double rho = 1.0;
    double alpha = 0.1;
    std::vector<double> grid = default_grid();
    std::size_t trials_per_point = 2000;
    std::size_t calibration_trials = 10000;
    std::vector<TestKind> tests{TestKind::EdtMc, TestKind::EdtChi2};
    std::uint64_t seed = 1;

    bool has(TestKind t) const { return std::find(tests.begin(), tests.end(), t) != tests.end(); }

    void validate() const {
        auto bad = [](const std::string& m) { throw Error(ErrorKind::ConfigError, m); };
        if (d < 1) bad("d must be at least 1");
        if (n < 1 || n_prime < 1) bad("sample counts must be at least 1");
        if (!(sigma2 > 0.0)) bad("sigma2 must be positive");
        if (!(rho > 0.0)) bad("rho must be positive");
        if (!(alpha > 0.0 && alpha < 1.0)) bad("alpha must lie in (0, 1)");
        if (grid.empty()) bad("grid must not be empty");
        for (double g : grid)
            if (!(g >= 0.0) || !std::isfinite(g)) bad("grid values must be finite and non-negative");
        if (trials_per_point < 100) bad("trials_per_point must be at least 100");
        if (calibration_trials < 100) bad("calibration_trials must be at least 100");
        if (tests.empty()) bad("at least one test must be requested");
        if (has(TestKind::Glrt) && family != Family::Linear) bad("glrt is only available for the linear family");
        if (family == Family::Logistic)
            for (double g : grid)
                if (g * rho > 2.0) bad("logistic grid exceeds the largest chord between unit vectors");
    }
};

struct CurveRow {
    double normalized_change = 0.0;
    TestKind test = TestKind::EdtMc;
    double p_raise = 0.0;
    double std_err = 0.0;
    double threshold = 0.0;
};

struct ExperimentCurve {
    ExperimentSpec spec;
    std::vector<CurveRow> rows;
    Vector theta;            // pre-change parameter, fixed for the experiment
    Vector direction;        // unit change direction (linear) or rotation partner (logistic)
    std::optional<ThresholdReport> edt_mc_report;
    std::optional<ThresholdReport> glrt_report;
    double chi2_eta_at_calibration = 0.0;  // median per-trial η̃ at the calibration pair
    std::size_t retries = 0;

    const CurveRow* find(double normalized_change, TestKind test) const {
        for (const auto& r : rows)
            if (r.test == test && std::abs(r.normalized_change - normalized_change) < 1e-12) return &r;
        return nullptr;
    }
};

/// Pre/post parameters at a given normalized change. The random draws (θ and
/// the change direction) depend only on `rng`, so every grid point of an
/// experiment shares them.
///
/// Linear: θ ~ N(0, I), θ′ = θ + c·ρ·u for a random unit u.
/// Logistic: θ uniform on the sphere, θ′ = cos φ·θ + sin φ·v with v ⟂ θ a
/// random unit vector and 2 sin(φ/2) = c·ρ.
inline std::pair<Vector, Vector> make_parameter_pair(RngStream rng, Family family, std::size_t d,
                                                     double normalized_change, double rho) {
    if (!(normalized_change >= 0.0)) throw Error(ErrorKind::DomainError, "normalized change must be non-negative");
    if (d < 1) throw Error(ErrorKind::DomainError, "d must be at least 1");
    const double chord = normalized_change * rho;
    if (family == Family::Linear) {
        Vector theta = rng.normal_vector(d);
        Vector u = rng.normal_vector(d);
        const double len = norm2(u);
        Vector theta_prime = theta;
        for (std::size_t i = 0; i < d; ++i) theta_prime[i] += chord * u[i] / len;
        return {std::move(theta), std::move(theta_prime)};
    }
    if (chord > 2.0) throw Error(ErrorKind::DomainError, "unit vectors differ by at most 2");
    Vector theta = rng.normal_vector(d);
    const double tlen = norm2(theta);
    for (auto& v : theta) v /= tlen;
    if (chord == 0.0) return {theta, theta};
    if (d < 2) throw Error(ErrorKind::DomainError, "rotating a unit vector needs d >= 2");
    Vector v = rng.normal_vector(d);
    const double proj = dot(v, theta);
    for (std::size_t i = 0; i < d; ++i) v[i] -= proj * theta[i];
    const double vlen = norm2(v);
    for (auto& x : v) x /= vlen;
    const double phi = 2.0 * std::asin(chord / 2.0);
    Vector theta_prime(d);
    for (std::size_t i = 0; i < d; ++i) theta_prime[i] = std::cos(phi) * theta[i] + std::sin(phi) * v[i];
    return {std::move(theta), std::move(theta_prime)};
}

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

enum : std::uint64_t { kParameterStream = 1, kCalibrationStream = 2, kSweepStream = 3 };

}  // namespace detail

/// Runs the sweep. MC thresholds (η for edt_mc, τ for glrt) come from one
/// shared set of calibration replicates at the boundary null pair; edt_chi2
/// resolves η̃ per trial from that trial's plug-in covariance. All tests at a
/// grid point are evaluated on the same replicates.
inline ExperimentCurve run_experiment(const ExperimentSpec& spec, unsigned threads = 1) {
    spec.validate();
    const RngStream master(spec.seed);

    ExperimentCurve curve;
    curve.spec = spec;
    {
        auto [theta, theta_prime] = make_parameter_pair(master.substream(detail::kParameterStream), spec.family,
                                                        spec.d, 1.0, spec.rho);
        curve.theta = theta;
        curve.direction = theta_prime - theta;
        const double len = norm2(curve.direction);
        for (auto& v : curve.direction) v /= len;
    }

    DesignSpec design;
    design.family = spec.family;
    design.d = spec.d;
    design.n = spec.n;
    design.n_prime = spec.n_prime;
    design.noise = NoiseSpec(spec.sigma2);
    design.base_theta = curve.theta;

    const bool want_glr = spec.has(TestKind::Glrt);
    const bool want_chi2 = spec.has(TestKind::EdtChi2);
    if (spec.has(TestKind::EdtMc) || want_glr) {
        TrialRequest req;
        req.glr = want_glr;
        req.chi2 = want_chi2;
        req.alpha = spec.alpha;
        const auto sample = simulate_boundary(design, spec.rho, spec.calibration_trials,
                                              master.substream(detail::kCalibrationStream), req, threads);
        if (spec.has(TestKind::EdtMc)) curve.edt_mc_report = empirical_threshold(sample.edt(), spec.alpha);
        if (want_glr) curve.glrt_report = empirical_threshold(sample.glr(), spec.alpha);
        if (want_chi2) curve.chi2_eta_at_calibration = detail::median(sample.chi2_eta());
        for (const auto& o : sample.outcomes) curve.retries += static_cast<std::size_t>(o.retries);
    }

    TrialRequest req;
    req.glr = want_glr;
    req.chi2 = want_chi2;
    req.rho = spec.rho;
    req.alpha = spec.alpha;
    const RngStream sweep = master.substream(detail::kSweepStream);
    const std::size_t trials = spec.trials_per_point;

    for (std::size_t g = 0; g < spec.grid.size(); ++g) {
        const auto [theta, theta_prime] = make_parameter_pair(master.substream(detail::kParameterStream),
                                                              spec.family, spec.d, spec.grid[g], spec.rho);
        const RngStream point_stream = sweep.substream(g);
        std::vector<TrialOutcome> outcomes(trials);
        parallel_for(trials, threads, [&](std::size_t i) {
            outcomes[i] = run_trial(design, theta, theta_prime, point_stream.substream(i), req, g, i);
        });
        for (const auto& o : outcomes) curve.retries += static_cast<std::size_t>(o.retries);

        for (TestKind test : spec.tests) {
            std::size_t hits = 0;
            double threshold = 0.0;
            switch (test) {
                case TestKind::EdtMc:
                    threshold = curve.edt_mc_report->eta;
                    for (const auto& o : outcomes) hits += o.edt >= threshold ? 1 : 0;
                    break;
                case TestKind::Glrt:
                    threshold = curve.glrt_report->eta;
                    for (const auto& o : outcomes) hits += o.glr >= threshold ? 1 : 0;
                    break;
                case TestKind::EdtChi2: {
                    std::vector<double> etas;
                    etas.reserve(trials);
                    for (const auto& o : outcomes) {
                        hits += o.edt >= o.chi2_eta ? 1 : 0;
                        etas.push_back(o.chi2_eta);
                    }
                    threshold = detail::median(std::move(etas));
                    break;
                }
            }
            const auto est = binomial_estimate(hits, trials);
            curve.rows.push_back({spec.grid[g], test, est.p, est.std_err, threshold});
        }
    }
    return curve;
}

inline std::string format_number(const char* fmt, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

inline std::string join_numbers(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += format_number("%.17g", values[i]);
    }
    return out;
}

inline std::string join_tests(const std::vector<TestKind>& tests) {
    std::string out;
    for (std::size_t i = 0; i < tests.size(); ++i) {
        if (i) out += ',';
        out += to_string(tests[i]);
    }
    return out;
}

/// Curve CSV: `#` metadata lines, then `normalized_change,test,p_raise,std_err,threshold`.
inline void write_curve_csv(std::ostream& out, const ExperimentCurve& curve) {
    const auto& s = curve.spec;
    out << "# family=" << to_string(s.family) << " d=" << s.d << " n=" << s.n << " n_prime=" << s.n_prime
        << " sigma2=" << format_number("%.17g", s.sigma2) << " rho=" << format_number("%.17g", s.rho)
        << " alpha=" << format_number("%.17g", s.alpha) << '\n';
    out << "# grid=" << join_numbers(s.grid) << '\n';
    out << "# tests=" << join_tests(s.tests) << " trials_per_point=" << s.trials_per_point
        << " calibration_trials=" << s.calibration_trials << " seed=" << s.seed << '\n';
    out << "# parameters: theta and change direction fixed per experiment; datasets redrawn per trial\n";
    out << "# theta=" << join_numbers(curve.theta) << '\n';
    out << "# direction=" << join_numbers(curve.direction) << '\n';
    if (curve.edt_mc_report)
        out << "# edt_mc eta=" << format_number("%.17g", curve.edt_mc_report->eta)
            << " eta_std_err=" << format_number("%.6g", curve.edt_mc_report->eta_std_err) << '\n';
    if (curve.glrt_report)
        out << "# glrt tau=" << format_number("%.17g", curve.glrt_report->eta)
            << " tau_std_err=" << format_number("%.6g", curve.glrt_report->eta_std_err) << '\n';
    if (s.has(TestKind::EdtChi2)) {
        out << "# edt_chi2 threshold resolved per trial from the plug-in covariance; threshold column is the median\n";
        if (curve.edt_mc_report || curve.glrt_report)
            out << "# edt_chi2 median_eta_at_calibration=" << format_number("%.17g", curve.chi2_eta_at_calibration)
                << '\n';
    }
    out << "# retried_trials=" << curve.retries << '\n';
    out << "normalized_change,test,p_raise,std_err,threshold\n";
    for (const auto& r : curve.rows) {
        out << format_number("%.6g", r.normalized_change) << ',' << to_string(r.test) << ','
            << format_number("%.6f", r.p_raise) << ',' << format_number("%.6f", r.std_err) << ','
            << format_number("%.10g", r.threshold) << '\n';
    }
}

}  // namespace mcd
