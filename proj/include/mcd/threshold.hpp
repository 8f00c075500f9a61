#pragma once

// Threshold resolution for the empirical difference test.
//
// Under the Gaussian approximation Δθ̂ ~ N(θ′ − θ, Σ) with Σ = PᵀΛP,
// ‖Δθ̂‖² is distributed as Σᵢ λᵢ(Uᵢ + bᵢ)² with b = Λ^{-1/2}P(θ′ − θ). Two
// ways of turning that into a threshold are provided: bounding the weighted
// sum by λ_max·χ²(d, ρ²/λ_min), and direct Monte Carlo calibration at a
// boundary null pair.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mcd/detector.hpp"
#include "mcd/errors.hpp"
#include "mcd/linalg.hpp"
#include "mcd/models.hpp"
#include "mcd/numstat.hpp"
#include "mcd/parallel.hpp"

namespace mcd {

struct QuadFormRepresentation {
    Vector weights;
    Vector offsets;
    double total_noncentrality = 0.0;
};

inline QuadFormRepresentation quadform_representation(const SymmetricEigen& sigma, std::span<const double> mean_shift) {
    const std::size_t d = sigma.dim();
    if (mean_shift.size() != d) throw Error(ErrorKind::DimensionMismatch, "shift and covariance sizes differ");
    if (!(sigma.min_eigenvalue() > 0.0)) throw Error(ErrorKind::SingularCovariance, "covariance is not positive definite");
    QuadFormRepresentation q;
    q.weights = sigma.eigenvalues;
    q.offsets.resize(d);
    for (std::size_t k = 0; k < d; ++k) {
        q.offsets[k] = dot(sigma.eigenvectors.row(k), mean_shift) / std::sqrt(sigma.eigenvalues[k]);
        q.total_noncentrality += q.offsets[k] * q.offsets[k];
    }
    return q;
}

struct ThresholdReport {
    double eta = 0.0;
    ThresholdMethod method = ThresholdMethod::Chi2Approx;
    double alpha = 0.0;
    // Monte Carlo
    std::size_t trials = 0;
    double std_err = 0.0;       // binomial, in probability units
    double eta_std_err = 0.0;   // order-statistic band, in threshold units
    // Chi-squared bound
    double lambda_max = 0.0;
    double lambda_min = 0.0;
    double noncentrality_bound = 0.0;
    double chi2_quantile = 0.0;
};

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::DomainError, "alpha must lie in (0, 1)");
}

/// η̃ = sqrt(λ_max · q) where q is the (1 − α) quantile of χ²(d, ρ²/λ_min).
inline ThresholdReport chi2_threshold(const SymmetricEigen& sigma, double rho, double alpha, std::size_t d) {
    check_alpha(alpha);
    if (sigma.dim() != d) throw Error(ErrorKind::DimensionMismatch, "covariance dimension differs from d");
    if (!(rho >= 0.0)) throw Error(ErrorKind::DomainError, "rho must be non-negative");
    const double lmax = sigma.max_eigenvalue();
    const double lmin = sigma.min_eigenvalue();
    if (!(lmin > 0.0) || lmax / lmin >= kMaxFisherCondition)
        throw Error(ErrorKind::SingularCovariance, "difference covariance is singular or ill-conditioned");
    ThresholdReport r;
    r.method = ThresholdMethod::Chi2Approx;
    r.alpha = alpha;
    r.lambda_max = lmax;
    r.lambda_min = lmin;
    r.noncentrality_bound = rho * rho / lmin;
    r.chi2_quantile = ncx2_quantile({static_cast<int>(d), r.noncentrality_bound}, 1.0 - alpha);
    r.eta = std::sqrt(lmax * r.chi2_quantile);
    return r;
}

// ---------------------------------------------------------------------------
// Monte Carlo machinery shared with the experiment harness
// ---------------------------------------------------------------------------

/// What a simulated replication looks like: sample sizes, the noise level and
/// the pre-change parameter the calibration pair is anchored at.
struct DesignSpec {
    Family family = Family::Linear;
    std::size_t d = 1;
    std::size_t n = 1;
    std::size_t n_prime = 1;
    NoiseSpec noise;
    Vector base_theta;
};

/// Σ expected before any data is seen. Linear with standard normal features:
/// E[(XᵀX)⁻¹] = I/(n − d − 1), so Σ = σ²(1/(n−d−1) + 1/(n′−d−1))·I.
/// Logistic: the population Fisher at the base θ, Σ = I⁻¹(1/n + 1/n′).
inline Matrix nominal_sigma_delta(const DesignSpec& design) {
    const std::size_t d = design.d;
    if (design.family == Family::Linear) {
        if (design.n <= d + 1 || design.n_prime <= d + 1)
            throw Error(ErrorKind::DomainError, "nominal linear covariance needs n > d + 1");
        const double scale = design.noise.sigma2 * (1.0 / static_cast<double>(design.n - d - 1) +
                                                    1.0 / static_cast<double>(design.n_prime - d - 1));
        return Matrix::identity(d) * scale;
    }
    if (design.base_theta.size() != d) throw Error(ErrorKind::DimensionMismatch, "base theta has wrong dimension");
    const Matrix info = expected_fisher_per_sample(Family::Logistic, design.base_theta);
    const Matrix inv = detail::checked_inverse(info, ErrorKind::SingularFisher, "expected Fisher");
    return symmetrized(inv * (1.0 / static_cast<double>(design.n) + 1.0 / static_cast<double>(design.n_prime)));
}

/// Boundary null pair (θ, θ + ρv) with v the leading eigenvector of the
/// nominal Σ.
inline std::pair<Vector, Vector> boundary_null_pair(const DesignSpec& design, double rho) {
    Vector theta = design.base_theta.empty() ? Vector(design.d, 0.0) : design.base_theta;
    if (theta.size() != design.d) throw Error(ErrorKind::DimensionMismatch, "base theta has wrong dimension");
    const auto eig = eigh(nominal_sigma_delta(design));
    Vector theta_prime = theta;
    const auto v = eig.eigenvectors.row(0);
    for (std::size_t i = 0; i < design.d; ++i) theta_prime[i] += rho * v[i];
    return {std::move(theta), std::move(theta_prime)};
}

struct TrialRequest {
    bool glr = false;
    bool chi2 = false;
    double rho = 0.0;    // constraint radius for glr and chi2
    double alpha = 0.1;  // level for the per-trial chi2 threshold
};

struct TrialOutcome {
    double edt = 0.0;
    double glr = 0.0;
    double chi2_eta = 0.0;
    int retries = 0;
};

inline constexpr int kMaxTrialRetries = 5;

/// One replication: draw both datasets, fit, and evaluate the requested
/// statistics. A failed attempt is redrawn from a derived substream up to
/// kMaxTrialRetries times.
inline TrialOutcome run_trial(const DesignSpec& design, std::span<const double> theta,
                              std::span<const double> theta_prime, const RngStream& trial_stream,
                              const TrialRequest& request, std::size_t grid_index, std::size_t trial_index) {
    for (int attempt = 0;; ++attempt) {
        RngStream rng = attempt == 0 ? trial_stream : trial_stream.substream(static_cast<std::uint64_t>(attempt));
        try {
            const Dataset pre = generate_dataset(rng, design.family, theta, design.n, design.noise);
            const Dataset post = generate_dataset(rng, design.family, theta_prime, design.n_prime, design.noise);
            const FittedModel fit_pre = fit_mle(pre, design.noise);
            const FittedModel fit_post = fit_mle(post, design.noise);
            TrialOutcome out;
            out.retries = attempt;
            if (request.chi2) {
                const auto stat = difference_statistic(fit_pre, fit_post);
                out.edt = stat.norm;
                out.chi2_eta = chi2_threshold(stat.eigen, request.rho, request.alpha, design.d).eta;
            } else {
                out.edt = norm2(fit_post.theta_hat - fit_pre.theta_hat);
            }
            if (request.glr) out.glr = glr_linear(pre, post, design.noise, request.rho).glr;
            return out;
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::ConfigError || e.kind() == ErrorKind::DimensionMismatch) throw;
            if (attempt >= kMaxTrialRetries) throw TrialError(e.kind(), grid_index, trial_index, e.what());
        }
    }
}

/// Upper order statistic at rank ⌈p·T⌉ (1-based) of an ascending sample.
inline double upper_order_statistic(std::span<const double> sorted, double p) {
    const auto t = static_cast<double>(sorted.size());
    auto rank = static_cast<std::ptrdiff_t>(std::ceil(p * t - 1e-9));
    rank = std::clamp<std::ptrdiff_t>(rank, 1, static_cast<std::ptrdiff_t>(sorted.size()));
    return sorted[static_cast<std::size_t>(rank - 1)];
}

/// Threshold report for a Monte Carlo sample of statistics simulated at the
/// calibration point.
inline ThresholdReport empirical_threshold(std::vector<double> statistics, double alpha) {
    check_alpha(alpha);
    if (statistics.empty()) throw Error(ErrorKind::DomainError, "no statistics to calibrate on");
    std::sort(statistics.begin(), statistics.end());
    ThresholdReport r;
    r.method = ThresholdMethod::MonteCarlo;
    r.alpha = alpha;
    r.trials = statistics.size();
    r.std_err = std::sqrt(alpha * (1.0 - alpha) / static_cast<double>(r.trials));
    r.eta = upper_order_statistic(statistics, 1.0 - alpha);
    const double lo = upper_order_statistic(statistics, std::max(0.0, 1.0 - alpha - r.std_err));
    const double hi = upper_order_statistic(statistics, std::min(1.0, 1.0 - alpha + r.std_err));
    r.eta_std_err = 0.5 * (hi - lo);
    return r;
}

struct CalibrationSample {
    Vector theta;
    Vector theta_prime;
    std::vector<TrialOutcome> outcomes;

    std::vector<double> edt() const {
        std::vector<double> v(outcomes.size());
        std::transform(outcomes.begin(), outcomes.end(), v.begin(), [](const TrialOutcome& o) { return o.edt; });
        return v;
    }
    std::vector<double> glr() const {
        std::vector<double> v(outcomes.size());
        std::transform(outcomes.begin(), outcomes.end(), v.begin(), [](const TrialOutcome& o) { return o.glr; });
        return v;
    }
    std::vector<double> chi2_eta() const {
        std::vector<double> v(outcomes.size());
        std::transform(outcomes.begin(), outcomes.end(), v.begin(), [](const TrialOutcome& o) { return o.chi2_eta; });
        return v;
    }
};

/// Simulates `trials` replications at the boundary null pair. Trial i draws
/// from rng.substream(i).
inline CalibrationSample simulate_boundary(const DesignSpec& design, double rho, std::size_t trials,
                                           const RngStream& rng, TrialRequest request = {}, unsigned threads = 1) {
    if (trials < 100) throw Error(ErrorKind::DomainError, "Monte Carlo calibration needs at least 100 trials");
    if (!(rho >= 0.0)) throw Error(ErrorKind::DomainError, "rho must be non-negative");
    request.rho = rho;
    CalibrationSample sample;
    std::tie(sample.theta, sample.theta_prime) = boundary_null_pair(design, rho);
    sample.outcomes.resize(trials);
    parallel_for(trials, threads, [&](std::size_t i) {
        sample.outcomes[i] = run_trial(design, sample.theta, sample.theta_prime, rng.substream(i), request, 0, i);
    });
    return sample;
}

/// η as the empirical (1 − α) quantile of ‖Δθ̂‖₂ at the boundary null pair.
inline ThresholdReport mc_threshold(const DesignSpec& design, double rho, double alpha, std::size_t trials,
                                    const RngStream& rng, unsigned threads = 1) {
    check_alpha(alpha);
    return empirical_threshold(simulate_boundary(design, rho, trials, rng, {}, threads).edt(), alpha);
}

struct ProbabilityEstimate {
    double p = 0.0;
    double std_err = 0.0;
    std::size_t trials = 0;
};

inline ProbabilityEstimate binomial_estimate(std::size_t hits, std::size_t trials) {
    ProbabilityEstimate e;
    e.trials = trials;
    e.p = static_cast<double>(hits) / static_cast<double>(trials);
    e.std_err = std::sqrt(e.p * (1.0 - e.p) / static_cast<double>(trials));
    return e;
}

/// Fraction of replications at (θ, θ′) with ‖Δθ̂‖₂ ≥ η. A false alarm rate
/// for null pairs, a detection rate otherwise.
inline ProbabilityEstimate empirical_false_alarm(const DesignSpec& design, std::span<const double> theta,
                                                 std::span<const double> theta_prime, double eta, std::size_t trials,
                                                 const RngStream& rng, unsigned threads = 1) {
    if (trials < 100) throw Error(ErrorKind::DomainError, "Monte Carlo estimate needs at least 100 trials");
    if (theta.size() != design.d || theta_prime.size() != design.d)
        throw Error(ErrorKind::DimensionMismatch, "parameter dimension differs from the design");
    std::vector<unsigned char> hit(trials, 0);
    parallel_for(trials, threads, [&](std::size_t i) {
        hit[i] = run_trial(design, theta, theta_prime, rng.substream(i), {}, 0, i).edt >= eta ? 1 : 0;
    });
    return binomial_estimate(static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1)), trials);
}

}  // namespace mcd
