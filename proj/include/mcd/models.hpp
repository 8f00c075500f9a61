#pragma once

// Linear-Gaussian and logistic regression families: likelihoods, maximum
// likelihood fitting, Fisher information and synthetic data generation.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "mcd/errors.hpp"
#include "mcd/linalg.hpp"
#include "mcd/numstat.hpp"

namespace mcd {

enum class Family { Linear, Logistic };

inline constexpr std::string_view to_string(Family f) noexcept {
    return f == Family::Linear ? "linear" : "logistic";
}

inline std::optional<Family> parse_family(std::string_view s) {
    if (s == "linear") return Family::Linear;
    if (s == "logistic") return Family::Logistic;
    return std::nullopt;
}

/// Known Gaussian noise variance of the linear family.
struct NoiseSpec {
    double sigma2 = 1.0;

    NoiseSpec() = default;
    explicit NoiseSpec(double s) : sigma2(s) {
        if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorKind::DomainError, "sigma2 must be positive");
    }
};

/// Samples (xᵢ, yᵢ) as rows of `features` and entries of `responses`.
class Dataset {
public:
    Dataset(Matrix features, Vector responses, Family family)
        : features_(std::move(features)), responses_(std::move(responses)), family_(family) {
        if (features_.rows() < 1 || features_.cols() < 1)
            throw Error(ErrorKind::DimensionMismatch, "dataset needs n >= 1 and d >= 1");
        if (features_.rows() != responses_.size())
            throw Error(ErrorKind::DimensionMismatch, "feature rows and responses differ in length");
        if (family_ == Family::Logistic)
            for (double y : responses_)
                if (y != 1.0 && y != -1.0)
                    throw Error(ErrorKind::DomainError, "logistic responses must be -1 or +1");
    }

    const Matrix& features() const noexcept { return features_; }
    const Vector& responses() const noexcept { return responses_; }
    Family family() const noexcept { return family_; }
    std::size_t size() const noexcept { return features_.rows(); }
    std::size_t dim() const noexcept { return features_.cols(); }

private:
    Matrix features_;
    Vector responses_;
    Family family_;
};

struct FittedModel {
    Vector theta_hat;
    Matrix fisher_per_sample;
    std::size_t n = 0;
    double neg_log_lik = 0.0;
    Family family = Family::Linear;
    int iterations = 0;
};

namespace detail {

inline void check_dim(const Dataset& data, std::span<const double> theta) {
    if (theta.size() != data.dim())
        throw Error(ErrorKind::DimensionMismatch, "theta has " + std::to_string(theta.size()) +
                                                      " entries, data has d = " + std::to_string(data.dim()));
}

/// log(1 + exp(t)) without overflow.
inline double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

inline double logistic(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

}  // namespace detail

inline double neg_log_likelihood(const Dataset& data, std::span<const double> theta,
                                 const NoiseSpec& noise = {}) {
    detail::check_dim(data, theta);
    const auto& x = data.features();
    const auto& y = data.responses();
    double total = 0.0;
    if (data.family() == Family::Linear) {
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double r = y[i] - dot(x.row(i), theta);
            total += r * r;
        }
        const double n = static_cast<double>(data.size());
        return total / (2.0 * noise.sigma2) + 0.5 * n * std::log(2.0 * std::numbers::pi * noise.sigma2);
    }
    for (std::size_t i = 0; i < data.size(); ++i) total += detail::softplus(-y[i] * dot(x.row(i), theta));
    return total;
}

inline Vector nll_gradient(const Dataset& data, std::span<const double> theta, const NoiseSpec& noise = {}) {
    detail::check_dim(data, theta);
    const auto& x = data.features();
    const auto& y = data.responses();
    Vector weights(data.size());
    if (data.family() == Family::Linear) {
        for (std::size_t i = 0; i < data.size(); ++i)
            weights[i] = -(y[i] - dot(x.row(i), theta)) / noise.sigma2;
    } else {
        for (std::size_t i = 0; i < data.size(); ++i)
            weights[i] = -y[i] * detail::logistic(-y[i] * dot(x.row(i), theta));
    }
    return transpose_times(x, weights);
}

inline Matrix nll_hessian(const Dataset& data, std::span<const double> theta, const NoiseSpec& noise = {}) {
    detail::check_dim(data, theta);
    const auto& x = data.features();
    if (data.family() == Family::Linear) return gram(x) * (1.0 / noise.sigma2);
    const std::size_t d = data.dim();
    Matrix h(d, d);
    for (std::size_t r = 0; r < data.size(); ++r) {
        const auto xr = x.row(r);
        const double s = detail::logistic(dot(xr, theta));
        const double w = s * (1.0 - s);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i; j < d; ++j) h(i, j) += w * xr[i] * xr[j];
    }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < i; ++j) h(i, j) = h(j, i);
    return h;
}

/// Per-sample Fisher information estimate: the average Hessian contribution
/// of one observation. Linear uses XᵀX/(nσ²); logistic averages
/// s(1−s) xxᵀ at the supplied θ.
inline Matrix fisher_per_sample(const Dataset& data, std::span<const double> theta, const NoiseSpec& noise = {}) {
    return nll_hessian(data, theta, noise) * (1.0 / static_cast<double>(data.size()));
}

inline constexpr double kMaxDesignCondition = 1e12;

inline FittedModel fit_mle(const Dataset& data, const NoiseSpec& noise = {}) {
    const std::size_t d = data.dim();
    FittedModel fit;
    fit.family = data.family();
    fit.n = data.size();

    if (data.family() == Family::Linear) {
        const Matrix xtx = gram(data.features());
        const auto spectrum = eigh(xtx);
        if (!(spectrum.min_eigenvalue() > 0.0) ||
            spectrum.max_eigenvalue() / spectrum.min_eigenvalue() >= kMaxDesignCondition)
            throw Error(ErrorKind::SingularDesign, "XᵀX is singular or ill-conditioned");
        fit.theta_hat = spd_solve(xtx, transpose_times(data.features(), data.responses()));
        fit.fisher_per_sample = xtx * (1.0 / (static_cast<double>(fit.n) * noise.sigma2));
        fit.neg_log_lik = neg_log_likelihood(data, fit.theta_hat, noise);
        return fit;
    }

    // Damped Newton from the origin.
    constexpr double grad_tol = 1e-8;
    constexpr int max_iter = 100;
    constexpr int max_halvings = 60;
    Vector theta(d, 0.0);
    double value = neg_log_likelihood(data, theta);
    bool converged = false;
    for (int iter = 0; iter < max_iter; ++iter) {
        const Vector grad = nll_gradient(data, theta);
        if (norm_inf(grad) <= grad_tol) {
            converged = true;
            fit.iterations = iter;
            break;
        }
        const Matrix hess = nll_hessian(data, theta);
        Matrix lower;
        if (!cholesky(hess, lower)) {
            if (norm_inf(theta) > 0.0)
                throw Error(ErrorKind::Separation, "Hessian degenerated while the gradient is non-zero");
            throw Error(ErrorKind::SingularDesign, "logistic Hessian is singular at the origin");
        }
        Vector step = cholesky_solve(lower, grad);
        double t = 1.0;
        bool accepted = false;
        for (int h = 0; h < max_halvings; ++h, t *= 0.5) {
            Vector trial = theta - t * step;
            const double trial_value = neg_log_likelihood(data, trial);
            // Slack absorbs roundoff once the decrement falls below ulp(value).
            if (trial_value <= value + 1e-13 * std::max(1.0, std::abs(value))) {
                theta = std::move(trial);
                value = trial_value;
                accepted = true;
                break;
            }
        }
        if (!accepted) throw Error(ErrorKind::Separation, "line search stalled above gradient tolerance");
        if (norm2(theta) > 1e6) throw Error(ErrorKind::Separation, "parameter norm diverged");
    }
    if (!converged) {
        if (norm_inf(nll_gradient(data, theta)) > grad_tol)
            throw Error(ErrorKind::NoConvergence, "Newton iteration budget exhausted");
        fit.iterations = max_iter;
    }
    // A finite stationary point that classifies every sample strictly means the
    // data are separable and the gradient merely underflowed along the ray.
    {
        const auto& x = data.features();
        const auto& y = data.responses();
        bool all_positive_margin = true;
        for (std::size_t i = 0; i < data.size() && all_positive_margin; ++i)
            all_positive_margin = y[i] * dot(x.row(i), theta) > 0.0;
        if (all_positive_margin) throw Error(ErrorKind::Separation, "labels are linearly separable");
    }
    fit.theta_hat = std::move(theta);
    fit.neg_log_lik = value;
    fit.fisher_per_sample = fisher_per_sample(data, fit.theta_hat);
    return fit;
}

/// Features i.i.d. standard normal; linear responses Xθ + N(0, σ²),
/// logistic labels +1 with probability s(xᵀθ).
inline Dataset generate_dataset(RngStream& rng, Family family, std::span<const double> theta, std::size_t n,
                                const NoiseSpec& noise = {}) {
    if (n < 1) throw Error(ErrorKind::DomainError, "dataset size must be at least 1");
    const std::size_t d = theta.size();
    Matrix x(n, d);
    Vector y(n);
    const double sigma = std::sqrt(noise.sigma2);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = x.row(i);
        for (auto& v : row) v = rng.normal();
        const double eta = dot(row, theta);
        if (family == Family::Linear)
            y[i] = eta + sigma * rng.normal();
        else
            y[i] = rng.uniform() < detail::logistic(eta) ? 1.0 : -1.0;
    }
    return Dataset(std::move(x), std::move(y), family);
}

/// Expected per-sample Fisher information when features are standard normal.
/// For the logistic family this is a(I − uuᵀ) + c uuᵀ with u = θ/‖θ‖,
/// a = E[w(‖θ‖Z)], c = E[w(‖θ‖Z) Z²], w = s(1−s), evaluated by quadrature.
inline Matrix expected_fisher_per_sample(Family family, std::span<const double> theta, const NoiseSpec& noise = {}) {
    const std::size_t d = theta.size();
    if (family == Family::Linear) return Matrix::identity(d) * (1.0 / noise.sigma2);

    const double r = norm2(theta);
    constexpr int intervals = 4000;
    constexpr double half_width = 12.0;
    const double h = 2.0 * half_width / intervals;
    double a = 0.0;
    double c = 0.0;
    for (int k = 0; k <= intervals; ++k) {
        const double z = -half_width + k * h;
        const double coeff = (k == 0 || k == intervals) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
        const double s = detail::logistic(r * z);
        const double w = coeff * s * (1.0 - s) * std::exp(-0.5 * z * z);
        a += w;
        c += w * z * z;
    }
    const double norm = h / 3.0 / std::sqrt(2.0 * std::numbers::pi);
    a *= norm;
    c *= norm;
    Matrix info = Matrix::identity(d) * a;
    if (r > 0.0) {
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) info(i, j) += (c - a) * theta[i] * theta[j] / (r * r);
    }
    return info;
}

}  // namespace mcd
