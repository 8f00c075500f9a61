#pragma once

// Numerical statistics kernel: symmetric eigendecomposition, a counter-based
// random stream, and central / non-central chi-squared distribution functions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mcd/errors.hpp"
#include "mcd/linalg.hpp"

namespace mcd {

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition
// ---------------------------------------------------------------------------

/// A = Pᵀ diag(eigenvalues) P, eigenvalues in descending order, rows of P are
/// the unit eigenvectors. The first entry of each eigenvector whose magnitude
/// exceeds 1e-10 is positive.
struct SymmetricEigen {
    Vector eigenvalues;
    Matrix eigenvectors;

    std::size_t dim() const noexcept { return eigenvalues.size(); }
    double max_eigenvalue() const { return eigenvalues.front(); }
    double min_eigenvalue() const { return eigenvalues.back(); }

    Matrix reconstruct() const {
        const std::size_t d = dim();
        Matrix a(d, d);
        for (std::size_t k = 0; k < d; ++k) {
            const auto p = eigenvectors.row(k);
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) a(i, j) += eigenvalues[k] * p[i] * p[j];
        }
        return a;
    }

    /// Pᵀ f(Λ) P for a scalar function f applied to the eigenvalues.
    template <class F>
    Matrix apply(F&& f) const {
        const std::size_t d = dim();
        Matrix a(d, d);
        for (std::size_t k = 0; k < d; ++k) {
            const double w = f(eigenvalues[k]);
            const auto p = eigenvectors.row(k);
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) a(i, j) += w * p[i] * p[j];
        }
        return a;
    }
};

inline constexpr double kSymmetryTolerance = 1e-10;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
inline SymmetricEigen eigh(const Matrix& input, int max_sweeps = 100) {
    if (!input.square() || input.rows() == 0)
        throw Error(ErrorKind::DimensionMismatch, "eigh expects a non-empty square matrix");
    const std::size_t n = input.rows();
    const double scale = std::max(1.0, max_abs(input));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(input(i, j) - input(j, i)) > kSymmetryTolerance * scale)
                throw Error(ErrorKind::NonSymmetric,
                            "entries (" + std::to_string(i) + "," + std::to_string(j) +
                                ") differ beyond tolerance");

    Matrix a = symmetrized(input);
    Matrix v = Matrix::identity(n);
    const double total = frobenius(a);

    auto off_diagonal = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
        return std::sqrt(2.0 * s);
    };

    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        const double off = off_diagonal();
        if (off == 0.0 || off <= 1e-15 * total) {
            converged = true;
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double app = a(p, p);
                const double aqq = a(q, q);
                // Skip entries already negligible relative to both diagonals.
                if (sweep > 3 && std::abs(apq) < 1e-18 * (std::abs(app) + std::abs(aqq))) {
                    a(p, q) = a(q, p) = 0.0;
                    continue;
                }
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double tau = s / (1.0 + c);

                a(p, p) = app - t * apq;
                a(q, q) = aqq + t * apq;
                a(p, q) = a(q, p) = 0.0;
                for (std::size_t r = 0; r < n; ++r) {
                    if (r == p || r == q) continue;
                    const double arp = a(r, p);
                    const double arq = a(r, q);
                    a(r, p) = a(p, r) = arp - s * (arq + tau * arp);
                    a(r, q) = a(q, r) = arq + s * (arp - tau * arq);
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const double vrp = v(r, p);
                    const double vrq = v(r, q);
                    v(r, p) = vrp - s * (vrq + tau * vrp);
                    v(r, q) = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }
    if (!converged && off_diagonal() > 1e-15 * total)
        throw Error(ErrorKind::ConvergenceFailure, "Jacobi sweep budget exhausted");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    SymmetricEigen out;
    out.eigenvalues.resize(n);
    out.eigenvectors = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t col = order[k];
        out.eigenvalues[k] = a(col, col);
        double sign = 1.0;
        for (std::size_t r = 0; r < n; ++r) {
            if (std::abs(v(r, col)) > 1e-10) {
                sign = v(r, col) > 0.0 ? 1.0 : -1.0;
                break;
            }
        }
        for (std::size_t r = 0; r < n; ++r) out.eigenvectors(k, r) = sign * v(r, col);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Chi-squared distributions
// ---------------------------------------------------------------------------

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Regularized lower incomplete gamma P(a, x).
inline double regularized_gamma_p(double a, double x) {
    if (x <= 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    constexpr double eps = 1e-15;
    constexpr int max_iter = 100000;
    const double log_prefix = a * std::log(x) - x - std::lgamma(a);
    if (x < a + 1.0) {
        double term = 1.0 / a;
        double sum = term;
        for (int k = 1; k < max_iter; ++k) {
            term *= x / (a + k);
            sum += term;
            if (term < sum * eps) break;
        }
        return std::min(1.0, sum * std::exp(log_prefix));
    }
    // Lentz continued fraction for Q(a, x).
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < max_iter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < eps) break;
    }
    return std::max(0.0, 1.0 - std::exp(log_prefix) * h);
}

inline double chi2_cdf(double dof, double x) {
    if (x <= 0.0) return 0.0;
    return regularized_gamma_p(0.5 * dof, 0.5 * x);
}

struct NoncentralChiSquared {
    int dof = 1;
    double noncentrality = 0.0;
};

inline constexpr double kPoissonTailMass = 1e-12;

/// CDF as the Poisson(γ/2)-weighted mixture of central χ²(k + 2j) CDFs.
/// Terms are accumulated outward from the Poisson mode until the unvisited
/// weight is below kPoissonTailMass.
inline double ncx2_cdf(const NoncentralChiSquared& dist, double x) {
    if (dist.dof < 1 || !(dist.noncentrality >= 0.0))
        throw Error(ErrorKind::DomainError, "non-central chi-squared needs dof >= 1, noncentrality >= 0");
    if (x <= 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    const double k = dist.dof;
    const double half = 0.5 * dist.noncentrality;
    if (half == 0.0) return chi2_cdf(k, x);

    const auto mode = static_cast<long>(std::floor(half));
    auto log_weight = [&](long j) {
        return -half + static_cast<double>(j) * std::log(half) - std::lgamma(static_cast<double>(j) + 1.0);
    };

    double visited = 0.0;
    double sum = 0.0;
    for (long j = mode; j >= 0; --j) {
        const double w = std::exp(log_weight(j));
        visited += w;
        sum += w * chi2_cdf(k + 2.0 * static_cast<double>(j), x);
        if (w < 1e-300 && j < mode) break;
    }
    for (long j = mode + 1; 1.0 - visited >= kPoissonTailMass; ++j) {
        const double w = std::exp(log_weight(j));
        if (w == 0.0 && static_cast<double>(j) > half) break;
        visited += w;
        sum += w * chi2_cdf(k + 2.0 * static_cast<double>(j), x);
    }
    return std::clamp(sum, 0.0, 1.0);
}

/// Inverse CDF by bisection on an explicit bracket.
inline double ncx2_quantile(const NoncentralChiSquared& dist, double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::DomainError, "quantile level must lie in (0, 1)");
    const double k = dist.dof;
    const double g = dist.noncentrality;
    double lo = 0.0;
    double hi = k + g + 40.0 * std::sqrt(2.0 * k + 4.0 * g) + 40.0;
    while (ncx2_cdf(dist, hi) < p) {
        lo = hi;
        hi *= 2.0;
    }
    for (int iter = 0; iter < 400; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (ncx2_cdf(dist, mid) < p)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= 1e-15 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Counter-based generator: the i-th draw is a hash of (seed, stream_id, i),
/// so a stream's output depends only on its identity, never on which thread
/// consumes it or in what order other streams run.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id = 0) noexcept
        : seed_(seed), stream_id_(stream_id),
          key_(mix64(mix64(seed) ^ (stream_id * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL))) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    /// Independent child stream identified by `tag`.
    RngStream substream(std::uint64_t tag) const noexcept {
        return RngStream(seed_, mix64(stream_id_ ^ mix64(tag + 0x632BE59BD9B4E019ULL)));
    }

    std::uint64_t next_u64() noexcept { return mix64(key_ + 0x9E3779B97F4A7C15ULL * counter_++); }

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box–Muller; the second variate is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double phase = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(phase);
        has_spare_ = true;
        return r * std::cos(phase);
    }

    Vector normal_vector(std::size_t d) {
        Vector v(d);
        for (auto& x : v) x = normal();
        return v;
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// mean + Pᵀ Λ^{1/2} u with u standard normal.
inline Vector sample_gaussian_vector(RngStream& rng, std::span<const double> mean,
                                     const SymmetricEigen& covariance) {
    const std::size_t d = covariance.dim();
    if (mean.size() != d) throw Error(ErrorKind::DimensionMismatch, "mean and covariance sizes differ");
    Vector scaled(d);
    for (std::size_t k = 0; k < d; ++k) {
        double lambda = covariance.eigenvalues[k];
        if (lambda < -1e-12) throw Error(ErrorKind::NegativeEigenvalue, "covariance has a negative eigenvalue");
        lambda = std::max(lambda, 0.0);
        scaled[k] = std::sqrt(lambda) * rng.normal();
    }
    Vector out(mean.begin(), mean.end());
    for (std::size_t k = 0; k < d; ++k) {
        if (scaled[k] == 0.0) continue;
        const auto p = covariance.eigenvectors.row(k);
        for (std::size_t i = 0; i < d; ++i) out[i] += p[i] * scaled[k];
    }
    return out;
}

}  // namespace mcd
