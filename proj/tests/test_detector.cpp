#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mcd/detector.hpp"
#include "oracles.hpp"

using namespace mcd;

namespace {

FittedModel model_at(Vector theta, std::size_t n = 10) {
    FittedModel m;
    m.fisher_per_sample = Matrix::identity(theta.size());
    m.theta_hat = std::move(theta);
    m.n = n;
    return m;
}

Dataset ones_design(const Vector& y) { return Dataset(Matrix(y.size(), 1, 1.0), y, Family::Linear); }

oracle::LinearPairProblem problem_for(const Dataset& pre, const Dataset& post, double rho, const GlrResult& r) {
    return {gram(pre.features()), gram(post.features()), r.unconstrained_pair.first, r.unconstrained_pair.second, rho};
}

DetectionConfig with_eta(double eta) {
    DetectionConfig c;
    c.eta = eta;
    return c;
}

}  // namespace

TEST(DifferenceStatistic, SelfDifferenceIsZero) {
    const auto m = model_at({1.0, 2.0});
    EXPECT_EQ(difference_statistic(m, m).norm, 0.0);
}

TEST(DifferenceStatistic, Pythagorean) {
    const auto s = difference_statistic(model_at({0.0, 0.0, 0.0, 0.0}), model_at({3.0, 4.0, 0.0, 0.0}));
    EXPECT_DOUBLE_EQ(s.norm, 5.0);
    EXPECT_NEAR(s.norm, norm2(s.delta_theta), 1e-12);
}

TEST(DifferenceStatistic, LinearCovarianceIdentity) {
    RngStream rng(3);
    const NoiseSpec noise(2.5);
    const auto pre = generate_dataset(rng, Family::Linear, Vector{1.0, 0.0, -1.0}, 15, noise);
    const auto post = generate_dataset(rng, Family::Linear, Vector{1.0, 0.5, -1.0}, 25, noise);
    const auto s = difference_statistic(fit_mle(pre, noise), fit_mle(post, noise));
    const Matrix expected = symmetrized(eigh(gram(pre.features())).apply([](double l) { return 1.0 / l; }) * 2.5 +
                                        eigh(gram(post.features())).apply([](double l) { return 1.0 / l; }) * 2.5);
    EXPECT_LE(max_abs(s.sigma_delta - expected), 1e-12);
    EXPECT_GT(s.eigen.min_eigenvalue(), 0.0);
}

TEST(DifferenceStatistic, Errors) {
    try {
        difference_statistic(model_at({1.0}), model_at({1.0, 2.0}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
    }
    auto singular = model_at({1.0, 2.0});
    singular.fisher_per_sample = Matrix{{1.0, 1.0}, {1.0, 1.0}};
    try {
        difference_statistic(singular, model_at({0.0, 0.0}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SingularFisher);
    }
}

TEST(EdtDecide, Examples) {
    DifferenceStatistic s;
    s.norm = 0.0;
    EXPECT_FALSE(edt_decide(s, with_eta(0.5)).raised);
    s.norm = 0.5;
    const auto d = edt_decide(s, with_eta(0.5));
    EXPECT_TRUE(d.raised);
    EXPECT_EQ(d.statistic, 0.5);
    EXPECT_EQ(d.threshold_used, 0.5);
}

TEST(EdtDecide, DefinitionalAndScaleInvariant) {
    std::mt19937_64 gen(1);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    for (int k = 0; k < 1000; ++k) {
        DifferenceStatistic s;
        s.norm = u(gen);
        const double eta = k % 10 == 0 ? s.norm : u(gen);
        const bool expected = s.norm >= eta;
        EXPECT_EQ(edt_decide(s, with_eta(eta)).raised, expected);
        const double c = std::ldexp(1.0, k % 7 - 3);  // exact power-of-two rescaling
        s.norm *= c;
        EXPECT_EQ(edt_decide(s, with_eta(eta * c)).raised, expected);
    }
}

TEST(EdtDecide, UnresolvedThreshold) {
    try {
        edt_decide(DifferenceStatistic{}, DetectionConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UnresolvedThreshold);
    }
}

TEST(GlrDecide, ExamplesAndInvariance) {
    GlrResult r;
    r.glr = 0.0;
    EXPECT_FALSE(glr_decide(r, 0.1).raised);
    r.glr = 0.7;
    EXPECT_TRUE(glr_decide(r, 0.7).raised);
    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    for (int k = 0; k < 1000; ++k) {
        r.glr = u(gen);
        const double tau = u(gen);
        EXPECT_EQ(glr_decide(r, tau).raised, r.glr >= tau);
        const double c = std::ldexp(1.0, k % 5);
        GlrResult scaled = r;
        scaled.glr *= c;
        EXPECT_EQ(glr_decide(scaled, tau * c).raised, r.glr >= tau);
    }
    EXPECT_ANY_THROW(glr_decide(r, -1.0));
}

TEST(GlrLinear, InactiveConstraint) {
    const auto r = glr_linear(ones_design({1.0, 1.2}), ones_design({1.5, 1.3}), NoiseSpec(1.0), 1.0);
    EXPECT_EQ(r.glr, 0.0);
    EXPECT_EQ(r.multiplier, 0.0);
    EXPECT_EQ(r.constrained_pair, r.unconstrained_pair);
}

TEST(GlrLinear, OneDimensionalClosedForm) {
    const Vector pre{0.1, -0.3, 0.4, 0.2};
    const Vector post{2.5, 3.1, 2.2};
    const double m = (std::accumulate(post.begin(), post.end(), 0.0) / 3.0) -
                     (std::accumulate(pre.begin(), pre.end(), 0.0) / 4.0);
    for (double rho : {0.0, 0.5, 1.0, 2.0}) {
        const auto r = glr_linear(ones_design(pre), ones_design(post), NoiseSpec(1.0), rho);
        EXPECT_NEAR(r.glr, oracle::glr_one_dimensional(4, 3, m, rho), 1e-9) << rho;
    }
}

TEST(GlrLinear, OneDimensionalDenseGrid) {
    // Direct grid over (θ, θ′) with |θ − θ′| ≤ ρ: the optimum lies on θ′ = θ + ρ.
    const Vector pre{0.0, 0.2, -0.2}, post{1.8, 2.2};
    const double rho = 0.75;
    const auto r = glr_linear(ones_design(pre), ones_design(post), NoiseSpec(1.0), rho);
    auto objective = [&](double t, double tp) {
        double s = 0.0;
        for (double y : pre) s += 0.5 * (y - t) * (y - t);
        for (double y : post) s += 0.5 * (y - tp) * (y - tp);
        return s;
    };
    double best = 1e300;
    for (int i = 0; i <= 200000; ++i) {
        const double t = -1.0 + 3.0 * i / 200000.0;
        best = std::min(best, objective(t, t + rho));
    }
    EXPECT_NEAR(r.glr, best - objective(0.0, 2.0), 1e-9);
}

TEST(GlrLinear, MatchesDirectionSearchOracle) {
    for (std::size_t d : {2u, 3u}) {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            RngStream rng(500 + seed, d);
            const auto pre = generate_dataset(rng, Family::Linear, Vector(d, 0.0), 12);
            Vector shift(d, 0.0);
            shift[0] = 2.0;
            const auto post = generate_dataset(rng, Family::Linear, shift, 9);
            const double rho = 0.8;
            const auto r = glr_linear(pre, post, NoiseSpec(1.0), rho);
            ASSERT_GT(r.glr, 0.0);
            const double ref = oracle::glr_direction_search(problem_for(pre, post, rho, r), d);
            EXPECT_NEAR(r.glr, ref, 1e-4) << "d=" << d << " seed=" << seed;
            EXPECT_LE(r.glr, ref + 1e-9);
        }
    }
}

TEST(GlrLinear, KktAndFeasibility) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const std::size_t d = 1 + seed % 5;
        RngStream rng(seed, 9);
        const auto pre = generate_dataset(rng, Family::Linear, Vector(d, 0.0), 20);
        const auto post = generate_dataset(rng, Family::Linear, Vector(d, 1.0), 20);
        const auto r = glr_linear(pre, post, NoiseSpec(1.0), 0.5);
        EXPECT_GE(r.glr, 0.0);
        EXPECT_LE(r.kkt_residual, 1e-8);
        EXPECT_LE(norm2(r.constrained_pair.first - r.constrained_pair.second), 0.5 + 1e-8);
        if (r.glr > 0.0) {
            EXPECT_GT(r.multiplier, 0.0);
        }
        // GLR equals the objective gap between the constrained and unconstrained pairs.
        const NoiseSpec noise(1.0);
        const double gap = neg_log_likelihood(pre, r.constrained_pair.first, noise) +
                           neg_log_likelihood(post, r.constrained_pair.second, noise) -
                           neg_log_likelihood(pre, r.unconstrained_pair.first, noise) -
                           neg_log_likelihood(post, r.unconstrained_pair.second, noise);
        EXPECT_NEAR(r.glr, gap, 1e-9 * std::max(1.0, r.glr));
    }
}

TEST(GlrLinear, NonIncreasingInRho) {
    RngStream rng(77);
    const auto pre = generate_dataset(rng, Family::Linear, Vector{0.0, 0.0, 0.0}, 30);
    const auto post = generate_dataset(rng, Family::Linear, Vector{1.0, 1.0, 0.0}, 30);
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 40; ++k) {
        const double g = glr_linear(pre, post, NoiseSpec(1.0), 0.05 * k).glr;
        EXPECT_LE(g, prev + 1e-12);
        prev = g;
    }
}

TEST(GlrLinear, SigmaScaling) {
    // Scaling y by c and σ² by c² leaves the GLR unchanged when ρ scales by c.
    RngStream rng(8);
    const auto pre = generate_dataset(rng, Family::Linear, Vector{0.0, 0.5}, 15);
    const auto post = generate_dataset(rng, Family::Linear, Vector{1.5, -0.5}, 15);
    const double c = 3.0;
    auto scaled = [&](const Dataset& ds) { return Dataset(ds.features(), c * ds.responses(), Family::Linear); };
    const double g1 = glr_linear(pre, post, NoiseSpec(1.0), 0.7).glr;
    const double g2 = glr_linear(scaled(pre), scaled(post), NoiseSpec(c * c), 0.7 * c).glr;
    EXPECT_NEAR(g1, g2, 1e-9 * std::max(1.0, g1));
}

TEST(GlrLinear, RejectsLogistic) {
    const Dataset lg(Matrix{{1.0}, {-1.0}, {0.5}}, Vector{1.0, 1.0, -1.0}, Family::Logistic);
    try {
        glr_linear(lg, lg, NoiseSpec(1.0), 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ConfigError);
    }
}

TEST(GlrLinear, SingularDesign) {
    const Dataset bad(Matrix{{1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}}, Vector{0.0, 1.0, 2.0}, Family::Linear);
    const Dataset good(Matrix{{1.0, 0.0}, {0.0, 1.0}}, Vector{0.0, 1.0}, Family::Linear);
    try {
        glr_linear(bad, good, NoiseSpec(1.0), 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SingularDesign);
    }
}

TEST(InterpolatedPair, LiesOnConstraintBoundary) {
    std::mt19937_64 gen(4);
    std::normal_distribution<double> normal;
    for (int k = 0; k < 100; ++k) {
        Vector a(4), delta(4);
        for (auto& v : a) v = normal(gen);
        for (auto& v : delta) v = 3.0 * normal(gen);
        const double rho = 0.5;
        const double mu = std::uniform_real_distribution<double>(0.0, std::max(0.0, norm2(delta) - rho))(gen);
        const auto [t0, t1] = interpolated_null_pair(a, delta, rho, mu);
        EXPECT_NEAR(norm2(t1 - t0), rho, 1e-12);
    }
}

TEST(ApproxBound, Examples) {
    DifferenceStatistic s;
    s.norm = 0.8;
    EXPECT_EQ(approx_glr_upper_bound(s, 1.0, 0.0, 2.0, 1.0), 0.0);
    s.norm = 2.0;
    EXPECT_DOUBLE_EQ(approx_glr_upper_bound(s, 1.0, 0.0, 2.0, 1.0), 1.0);
    EXPECT_ANY_THROW(approx_glr_upper_bound(s, 1.0, 1.5, 2.0, 1.0));
    EXPECT_ANY_THROW(approx_glr_upper_bound(s, 1.0, -0.1, 2.0, 1.0));
}

TEST(ApproxBound, OptimalMuIsMidpoint) {
    DifferenceStatistic s;
    s.norm = 3.4;
    const double rho = 1.0, lm = 1.7, s2 = 0.6;
    double best = 1e300, best_mu = -1.0;
    for (int k = 0; k <= 24000; ++k) {
        const double mu = 2.4 * k / 24000.0;
        const double v = approx_glr_upper_bound(s, rho, mu, lm, s2);
        if (v < best) {
            best = v;
            best_mu = mu;
        }
    }
    EXPECT_NEAR(best_mu, (s.norm - rho) / 2.0, 1e-4);
    EXPECT_NEAR(best, (s.norm - rho) * (s.norm - rho) * lm / (4.0 * s2), 1e-9);
}

TEST(ApproxBound, DominatesExactGlr) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const std::size_t d = 1 + seed % 4;
        const double sigma2 = 0.5 + 0.25 * (seed % 3);
        const NoiseSpec noise(sigma2);
        RngStream rng(seed, 31);
        const auto pre = generate_dataset(rng, Family::Linear, Vector(d, 0.0), 15, noise);
        const auto post = generate_dataset(rng, Family::Linear, Vector(d, 1.2), 15, noise);
        const double rho = 0.6;
        const auto r = glr_linear(pre, post, noise, rho);
        const auto stat = difference_statistic(fit_mle(pre, noise), fit_mle(post, noise));
        // λ_M bounds the Hessian of the unscaled squared loss ½‖y − Xθ‖².
        const double lambda_m =
            std::max(eigh(gram(pre.features())).max_eigenvalue(), eigh(gram(post.features())).max_eigenvalue());
        const double upper = std::max(0.0, stat.norm - rho);
        for (int k = 0; k <= 10; ++k) {
            const double mu = upper * (k / 10.0);
            EXPECT_GE(approx_glr_upper_bound(stat, rho, mu, lambda_m, sigma2), r.glr - 1e-9);
        }
    }
}
