#pragma once

// Decision rules: the empirical difference test (threshold ‖θ̂′ − θ̂‖₂), the
// generalized likelihood ratio for the linear family, and the Taylor upper
// bound on the GLR that motivates the difference test.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include "mcd/errors.hpp"
#include "mcd/linalg.hpp"
#include "mcd/models.hpp"
#include "mcd/numstat.hpp"

namespace mcd {

enum class ThresholdMethod { MonteCarlo, Chi2Approx };

inline constexpr std::string_view to_string(ThresholdMethod m) noexcept {
    return m == ThresholdMethod::MonteCarlo ? "monte_carlo" : "chi2_approx";
}

/// Accepts the CLI spellings (`mc`, `chi2`) and the long names.
inline std::optional<ThresholdMethod> parse_threshold_method(std::string_view s) {
    if (s == "mc" || s == "monte_carlo") return ThresholdMethod::MonteCarlo;
    if (s == "chi2" || s == "chi2_approx") return ThresholdMethod::Chi2Approx;
    return std::nullopt;
}

struct DifferenceStatistic {
    Vector delta_theta;
    double norm = 0.0;
    Matrix sigma_delta;
    SymmetricEigen eigen;
};

struct DetectionConfig {
    double rho = 1.0;
    double alpha = 0.1;
    ThresholdMethod threshold_method = ThresholdMethod::Chi2Approx;
    std::optional<double> eta;

    void validate() const {
        if (!(rho > 0.0)) throw Error(ErrorKind::DomainError, "rho must be positive");
        if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::DomainError, "alpha must lie in (0, 1)");
    }
};

struct Decision {
    bool raised = false;
    double statistic = 0.0;
    double threshold_used = 0.0;
    std::string method;
};

struct GlrResult {
    double glr = 0.0;
    std::pair<Vector, Vector> constrained_pair;
    std::pair<Vector, Vector> unconstrained_pair;
    double multiplier = 0.0;
    double kkt_residual = 0.0;
};

inline constexpr double kMaxFisherCondition = 1e12;

namespace detail {

inline Matrix checked_inverse(const Matrix& spd, ErrorKind on_failure, const char* what) {
    const auto eig = eigh(spd);
    if (!(eig.min_eigenvalue() > 0.0) || eig.max_eigenvalue() / eig.min_eigenvalue() >= kMaxFisherCondition)
        throw Error(on_failure, std::string(what) + " is singular or ill-conditioned");
    return eig.apply([](double l) { return 1.0 / l; });
}

}  // namespace detail

/// Δθ̂ = θ̂′ − θ̂ together with Σ = I⁻¹/n + I′⁻¹/n′ from the plug-in Fisher
/// estimates.
inline DifferenceStatistic difference_statistic(const FittedModel& pre, const FittedModel& post) {
    if (pre.theta_hat.size() != post.theta_hat.size())
        throw Error(ErrorKind::DimensionMismatch, "pre and post models have different dimensions");
    DifferenceStatistic stat;
    stat.delta_theta = post.theta_hat - pre.theta_hat;
    stat.norm = norm2(stat.delta_theta);
    Matrix sigma = detail::checked_inverse(pre.fisher_per_sample, ErrorKind::SingularFisher, "pre-change Fisher") *
                   (1.0 / static_cast<double>(pre.n));
    sigma += detail::checked_inverse(post.fisher_per_sample, ErrorKind::SingularFisher, "post-change Fisher") *
             (1.0 / static_cast<double>(post.n));
    stat.sigma_delta = symmetrized(sigma);
    stat.eigen = eigh(stat.sigma_delta);
    return stat;
}

inline Decision edt_decide(const DifferenceStatistic& stat, const DetectionConfig& config) {
    if (!config.eta || !(*config.eta >= 0.0))
        throw Error(ErrorKind::UnresolvedThreshold, "EDT threshold has not been resolved");
    return {stat.norm >= *config.eta, stat.norm, *config.eta,
            config.threshold_method == ThresholdMethod::MonteCarlo ? "edt_mc" : "edt_chi2"};
}

inline Decision glr_decide(const GlrResult& result, double tau) {
    if (!(tau >= 0.0)) throw Error(ErrorKind::DomainError, "GLR threshold must be non-negative");
    return {result.glr >= tau, result.glr, tau, "glrt"};
}

/// GLR of "‖θ − θ′‖₂ > ρ" against "‖θ − θ′‖₂ ≤ ρ" for two linear-Gaussian
/// datasets with known noise variance.
///
/// With A = XᵀX/σ², b = Xᵀy/σ² the constrained problem is
///   min ½θᵀAθ − bᵀθ + ½θ′ᵀA′θ′ − b′ᵀθ′  s.t. ‖θ − θ′‖₂ ≤ ρ.
/// When the unconstrained pair is infeasible the constraint is active and the
/// minimizer solves (A + 2λI)θ − 2λθ′ = b, (A′ + 2λI)θ′ − 2λθ = b′ for the
/// unique λ > 0 with ‖θ(λ) − θ′(λ)‖₂ = ρ. λ is found by safeguarded Newton
/// on 1/ρ − 1/‖θ(λ) − θ′(λ)‖₂, which is exactly linear when A, A′ ∝ I.
inline GlrResult glr_linear(const Dataset& pre_data, const Dataset& post_data, const NoiseSpec& noise, double rho) {
    if (pre_data.family() != Family::Linear || post_data.family() != Family::Linear)
        throw Error(ErrorKind::ConfigError, "GLRT is only available for the linear family");
    if (pre_data.dim() != post_data.dim())
        throw Error(ErrorKind::DimensionMismatch, "pre and post datasets have different dimensions");
    if (!(rho >= 0.0)) throw Error(ErrorKind::DomainError, "rho must be non-negative");

    const std::size_t d = pre_data.dim();
    const double inv_s2 = 1.0 / noise.sigma2;
    const Matrix a_pre = gram(pre_data.features()) * inv_s2;
    const Matrix a_post = gram(post_data.features()) * inv_s2;
    const Vector b_pre = inv_s2 * transpose_times(pre_data.features(), pre_data.responses());
    const Vector b_post = inv_s2 * transpose_times(post_data.features(), post_data.responses());

    for (const Matrix* a : {&a_pre, &a_post}) {
        const auto eig = eigh(*a);
        if (!(eig.min_eigenvalue() > 0.0) || eig.max_eigenvalue() / eig.min_eigenvalue() >= kMaxDesignCondition)
            throw Error(ErrorKind::SingularDesign, "XᵀX is singular or ill-conditioned");
    }

    GlrResult result;
    result.unconstrained_pair = {spd_solve(a_pre, b_pre), spd_solve(a_post, b_post)};
    const Vector& theta_ml = result.unconstrained_pair.first;
    const Vector& theta_ml_post = result.unconstrained_pair.second;

    if (norm2(theta_ml_post - theta_ml) <= rho) {
        result.constrained_pair = result.unconstrained_pair;
        return result;
    }

    if (rho == 0.0) {
        // Equality constraint: one pooled fit, the multiplier is unbounded.
        const Vector pooled = spd_solve(a_pre + a_post, b_pre + b_post);
        const Vector dp = pooled - theta_ml;
        const Vector dq = pooled - theta_ml_post;
        result.glr = 0.5 * dot(dp, a_pre * dp) + 0.5 * dot(dq, a_post * dq);
        result.multiplier = std::numeric_limits<double>::infinity();
        result.constrained_pair = {pooled, pooled};
        return result;
    }

    Vector rhs(2 * d);
    std::copy(b_pre.begin(), b_pre.end(), rhs.begin());
    std::copy(b_post.begin(), b_post.end(), rhs.begin() + static_cast<std::ptrdiff_t>(d));

    struct Eval {
        Vector theta, theta_post, delta;
        double dist = 0.0;
        double g = 0.0;       // ‖δ‖ − ρ
        double phi = 0.0;     // 1/ρ − 1/‖δ‖
        double dphi = 0.0;
    };
    auto evaluate = [&](double lambda) {
        Matrix m(2 * d, 2 * d);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                m(i, j) = a_pre(i, j);
                m(d + i, d + j) = a_post(i, j);
            }
            m(i, i) += 2.0 * lambda;
            m(d + i, d + i) += 2.0 * lambda;
            m(i, d + i) = m(d + i, i) = -2.0 * lambda;
        }
        Matrix lower;
        if (!cholesky(m, lower)) throw Error(ErrorKind::SingularDesign, "stationarity system is not positive definite");
        const Vector z = cholesky_solve(lower, rhs);
        Eval e;
        e.theta.assign(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(d));
        e.theta_post.assign(z.begin() + static_cast<std::ptrdiff_t>(d), z.end());
        e.delta = e.theta - e.theta_post;
        e.dist = norm2(e.delta);
        e.g = e.dist - rho;
        e.phi = 1.0 / rho - 1.0 / e.dist;
        // dz/dλ = −M⁻¹ [2δ; −2δ]
        Vector forcing(2 * d);
        for (std::size_t i = 0; i < d; ++i) {
            forcing[i] = 2.0 * e.delta[i];
            forcing[d + i] = -2.0 * e.delta[i];
        }
        const Vector dz = cholesky_solve(lower, forcing);
        double ddist = 0.0;
        for (std::size_t i = 0; i < d; ++i) ddist += e.delta[i] * (-(dz[i] - dz[d + i]));
        ddist /= e.dist;
        e.dphi = ddist / (e.dist * e.dist);
        return e;
    };

    const double tol = 1e-10 * std::max(1.0, rho);
    Eval lo_eval = evaluate(0.0);
    double lo = 0.0;
    // Initial upper bracket from a Newton step at λ = 0.
    double hi = (lo_eval.dphi < 0.0 && lo_eval.phi > 0.0) ? -lo_eval.phi / lo_eval.dphi : 1.0;
    if (!(hi > 0.0) || !std::isfinite(hi)) hi = 1.0;
    Eval hi_eval = evaluate(hi);
    for (int doubling = 0; hi_eval.g > 0.0; ++doubling) {
        if (doubling >= 200) throw Error(ErrorKind::RootBracketFailure, "no sign change for the multiplier");
        lo = hi;
        lo_eval = std::move(hi_eval);
        hi *= 2.0;
        hi_eval = evaluate(hi);
    }

    double lambda = hi;
    Eval cur = hi_eval;
    for (int iter = 0; iter < 300 && std::abs(cur.g) > tol; ++iter) {
        double next = (cur.dphi != 0.0) ? lambda - cur.phi / cur.dphi : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        lambda = next;
        cur = evaluate(lambda);
        if (cur.g > 0.0)
            lo = lambda;
        else
            hi = lambda;
        if (hi - lo <= 1e-17 * hi) break;
    }
    if (std::abs(cur.g) > tol)
        throw Error(ErrorKind::ConvergenceFailure, "multiplier root did not reach tolerance");

    const Vector dp = cur.theta - theta_ml;
    const Vector dq = cur.theta_post - theta_ml_post;
    result.glr = 0.5 * dot(dp, a_pre * dp) + 0.5 * dot(dq, a_post * dq);
    result.multiplier = lambda;

    Vector r1 = a_pre * cur.theta - b_pre;
    Vector r2 = a_post * cur.theta_post - b_post;
    for (std::size_t i = 0; i < d; ++i) {
        r1[i] += 2.0 * lambda * cur.delta[i];
        r2[i] -= 2.0 * lambda * cur.delta[i];
    }
    result.kkt_residual = std::max(norm_inf(r1), norm_inf(r2));
    result.constrained_pair = {std::move(cur.theta), std::move(cur.theta_post)};
    return result;
}

/// The feasible pair θ̃₀ = θ̂ + μu, θ̃′₀ = θ̂ + (μ + ρ)u with u = Δθ̂/‖Δθ̂‖,
/// used to bound the null minimum from above.
inline std::pair<Vector, Vector> interpolated_null_pair(std::span<const double> theta_hat,
                                                        std::span<const double> delta_theta, double rho, double mu) {
    const double len = norm2(delta_theta);
    if (!(len > 0.0)) throw Error(ErrorKind::DomainError, "difference vector is zero");
    Vector first(theta_hat.begin(), theta_hat.end());
    Vector second(theta_hat.begin(), theta_hat.end());
    for (std::size_t i = 0; i < first.size(); ++i) {
        const double u = delta_theta[i] / len;
        first[i] += mu * u;
        second[i] += (mu + rho) * u;
    }
    return {std::move(first), std::move(second)};
}

/// [μ² + (‖Δθ̂‖₂ − μ − ρ)²]·λ_M/(2σ²); zero when the MLE pair is already null.
/// Diagnostic only: the shipped test thresholds ‖Δθ̂‖₂ directly.
inline double approx_glr_upper_bound(const DifferenceStatistic& stat, double rho, double mu, double lambda_max_hessian,
                                     double sigma2) {
    const double upper = std::max(0.0, stat.norm - rho);
    if (!(mu >= 0.0 && mu <= upper)) throw Error(ErrorKind::DomainError, "mu outside [0, max(0, |Δθ| − ρ)]");
    if (!(lambda_max_hessian > 0.0)) throw Error(ErrorKind::DomainError, "lambda_M must be positive");
    if (!(sigma2 > 0.0)) throw Error(ErrorKind::DomainError, "sigma2 must be positive");
    if (stat.norm <= rho) return 0.0;
    const double rest = stat.norm - (mu + rho);
    return (mu * mu + rest * rest) * lambda_max_hessian / (2.0 * sigma2);
}

}  // namespace mcd
