#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "mcd/dataset_io.hpp"
#include "mcd/models.hpp"
#include "oracles.hpp"

using namespace mcd;

namespace {

Vector random_vector(std::mt19937_64& gen, std::size_t d, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Vector v(d);
    for (auto& x : v) x = normal(gen);
    return v;
}

Vector random_unit(std::mt19937_64& gen, std::size_t d) {
    Vector v = random_vector(gen, d);
    const double r = norm2(v);
    for (auto& x : v) x /= r;
    return v;
}

template <class F>
ErrorKind error_kind(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no mcd::Error thrown";
    return ErrorKind::ConfigError;
}

}  // namespace

TEST(NegLogLikelihood, LinearConstantTerm) {
    const Dataset data(Matrix{{1.0}, {1.0}}, Vector{0.0, 0.0}, Family::Linear);
    EXPECT_NEAR(neg_log_likelihood(data, Vector{0.0}, NoiseSpec(1.0)), std::log(2.0 * std::numbers::pi), 1e-14);
}

TEST(NegLogLikelihood, LogisticZeroLogit) {
    const Dataset data(Matrix{{0.0, 0.0, 0.0}}, Vector{1.0}, Family::Logistic);
    EXPECT_NEAR(neg_log_likelihood(data, Vector{1.0, -2.0, 3.0}), std::log(2.0), 1e-15);
}

TEST(NegLogLikelihood, LogisticSubstitution) {
    const Dataset data(Matrix{{1.0, 0.0}}, Vector{1.0}, Family::Logistic);
    EXPECT_NEAR(neg_log_likelihood(data, Vector{2.0, 0.0}), std::log1p(std::exp(-2.0)), 1e-15);
    EXPECT_NEAR(neg_log_likelihood(data, Vector{2.0, 0.0}), 0.12692801104297, 1e-12);
}

TEST(NegLogLikelihood, LogisticExtremeMarginsStayFinite) {
    const Dataset data(Matrix{{1.0}}, Vector{-1.0}, Family::Logistic);
    EXPECT_NEAR(neg_log_likelihood(data, Vector{800.0}), 800.0, 1e-9);
    EXPECT_NEAR(neg_log_likelihood(data, Vector{-800.0}), 0.0, 1e-300);
}

TEST(NegLogLikelihood, DimensionMismatch) {
    const Dataset data(Matrix{{1.0, 2.0}}, Vector{1.0}, Family::Linear);
    EXPECT_EQ(error_kind([&] { neg_log_likelihood(data, Vector{1.0}); }), ErrorKind::DimensionMismatch);
    EXPECT_EQ(error_kind([&] { nll_gradient(data, Vector{1.0, 2.0, 3.0}); }), ErrorKind::DimensionMismatch);
}

TEST(Dataset, RejectsNonBinaryLogisticLabels) {
    EXPECT_ANY_THROW(Dataset(Matrix{{1.0}}, Vector{0.0}, Family::Logistic));
    EXPECT_EQ(error_kind([] { Dataset(Matrix{{1.0}, {2.0}}, Vector{1.0}, Family::Linear); }),
              ErrorKind::DimensionMismatch);
}

TEST(NoiseSpec, RejectsNonPositiveVariance) {
    EXPECT_ANY_THROW(NoiseSpec(0.0));
    EXPECT_ANY_THROW(NoiseSpec(-1.0));
}

TEST(Gradient, MatchesFiniteDifferences) {
    std::mt19937_64 gen(31);
    for (Family family : {Family::Linear, Family::Logistic}) {
        for (int probe = 0; probe < 20; ++probe) {
            const std::size_t d = 1 + probe % 5;
            RngStream rng(1000 + probe);
            const Dataset data = generate_dataset(rng, family, random_vector(gen, d), 30, NoiseSpec(1.5));
            const Vector theta = random_vector(gen, d);
            const NoiseSpec noise(1.5);
            const Vector analytic = nll_gradient(data, theta, noise);
            const Vector numeric = oracle::finite_difference_gradient(
                [&](const Vector& t) { return neg_log_likelihood(data, t, noise); }, theta);
            EXPECT_LE(norm2(analytic - numeric) / std::max(1.0, norm2(analytic)), 1e-5)
                << to_string(family) << " probe " << probe;
        }
    }
}

TEST(Hessian, PositiveDefiniteForFullRankDesigns) {
    std::mt19937_64 gen(5);
    for (Family family : {Family::Linear, Family::Logistic}) {
        RngStream rng(77);
        const Dataset data = generate_dataset(rng, family, Vector{0.5, -0.5, 1.0}, 50);
        for (int probe = 0; probe < 20; ++probe) {
            const Vector theta = random_vector(gen, 3, 2.0);
            EXPECT_GT(eigh(nll_hessian(data, theta)).min_eigenvalue(), 0.0);
        }
    }
}

TEST(FitMle, InterpolatingDesign) {
    const Dataset data(Matrix::identity(2), Vector{3.0, -1.0}, Family::Linear);
    const auto fit = fit_mle(data, NoiseSpec(1.0));
    EXPECT_NEAR(fit.theta_hat[0], 3.0, 1e-14);
    EXPECT_NEAR(fit.theta_hat[1], -1.0, 1e-14);
}

TEST(FitMle, SampleMean) {
    const Dataset data(Matrix{{1.0}, {1.0}}, Vector{1.0, 3.0}, Family::Linear);
    EXPECT_NEAR(fit_mle(data).theta_hat[0], 2.0, 1e-14);
}

TEST(FitMle, SymmetricLogisticGivesZero) {
    const Matrix x{{1.0, 0.5}, {1.0, 0.5}, {-0.3, 2.0}, {-0.3, 2.0}, {0.7, -1.1}, {0.7, -1.1}};
    const Dataset data(x, Vector{1.0, -1.0, 1.0, -1.0, -1.0, 1.0}, Family::Logistic);
    const auto fit = fit_mle(data);
    EXPECT_LE(norm_inf(fit.theta_hat), 1e-6);
}

TEST(FitMle, LogisticMatchesGridOracle) {
    for (std::uint64_t seed : {1u, 2u}) {
        RngStream rng(seed, 50);
        const Dataset data = generate_dataset(rng, Family::Logistic, Vector{1.0, -0.5}, 50);
        const auto fit = fit_mle(data);
        const Vector ref = oracle::logistic_mle_grid(data.features(), data.responses());
        EXPECT_NEAR(fit.theta_hat[0], ref[0], 1e-3);
        EXPECT_NEAR(fit.theta_hat[1], ref[1], 1e-3);
    }
}

TEST(FitMle, LocalOptimalityAlongRandomDirections) {
    std::mt19937_64 gen(9);
    for (Family family : {Family::Linear, Family::Logistic}) {
        RngStream rng(4242);
        const Dataset data = generate_dataset(rng, family, Vector{0.3, 0.8, -0.4, 0.1}, 80);
        const auto fit = fit_mle(data);
        EXPECT_NEAR(fit.neg_log_lik, neg_log_likelihood(data, fit.theta_hat), 1e-12);
        for (int k = 0; k < 50; ++k) {
            const Vector u = random_unit(gen, 4);
            for (double eps : {1e-3, 1e-2})
                EXPECT_GE(neg_log_likelihood(data, fit.theta_hat + eps * u), fit.neg_log_lik - 1e-9);
        }
    }
}

TEST(FitMle, FittedFisherIsSymmetricPsd) {
    RngStream rng(8);
    const Dataset data = generate_dataset(rng, Family::Logistic, Vector{0.2, -0.4, 0.6}, 100);
    const auto fit = fit_mle(data);
    const Matrix& f = fit.fisher_per_sample;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(f(i, j), f(j, i), 1e-10);
    EXPECT_GE(eigh(f).min_eigenvalue(), -1e-12);
}

TEST(FitMle, SingularLinearDesign) {
    const Dataset data(Matrix{{1.0, 2.0}, {2.0, 4.0}, {3.0, 6.0}}, Vector{1.0, 2.0, 3.0}, Family::Linear);
    EXPECT_EQ(error_kind([&] { fit_mle(data); }), ErrorKind::SingularDesign);
}

TEST(FitMle, SeparableLogisticData) {
    const Dataset data(Matrix{{1.0}, {2.0}, {-1.0}, {-0.5}}, Vector{1.0, 1.0, -1.0, -1.0}, Family::Logistic);
    EXPECT_EQ(error_kind([&] { fit_mle(data); }), ErrorKind::Separation);
    const Dataset plane(Matrix{{1.0, 0.3}, {0.5, -2.0}, {-1.0, 1.0}, {-2.0, 0.1}}, Vector{1.0, 1.0, -1.0, -1.0},
                        Family::Logistic);
    EXPECT_EQ(error_kind([&] { fit_mle(plane); }), ErrorKind::Separation);
}

TEST(Fisher, LinearNormalization) {
    // Columns scaled so XᵀX = n·I.
    const double s = std::sqrt(2.0);
    const Matrix x{{s, 0.0}, {0.0, s}, {-s, 0.0}, {0.0, -s}};
    const Dataset data(x, Vector{0.0, 0.0, 0.0, 0.0}, Family::Linear);
    const Matrix f = fisher_per_sample(data, Vector{0.0, 0.0}, NoiseSpec(1.0));
    EXPECT_LE(max_abs(f - Matrix::identity(2)), 1e-14);
}

TEST(Fisher, LogisticAtOrigin) {
    const Matrix x{{1.0, 2.0}, {-0.5, 0.25}, {3.0, -1.0}};
    const Dataset data(x, Vector{1.0, -1.0, 1.0}, Family::Logistic);
    const Matrix expected = gram(x) * (1.0 / (4.0 * 3.0));
    EXPECT_LE(max_abs(fisher_per_sample(data, Vector{0.0, 0.0}) - expected), 1e-15);
}

TEST(Fisher, ScalarLinear) {
    const Dataset data(Matrix{{1.0}, {1.0}, {1.0}}, Vector{0.0, 1.0, 2.0}, Family::Linear);
    EXPECT_NEAR(fisher_per_sample(data, Vector{0.0}, NoiseSpec(4.0))(0, 0), 0.25, 1e-15);
}

TEST(ExpectedFisher, LogisticMatchesMonteCarlo) {
    const Vector theta{0.6, -0.8, 0.0};
    const Matrix info = expected_fisher_per_sample(Family::Logistic, theta);
    std::mt19937_64 gen(3);
    std::normal_distribution<double> normal;
    Matrix acc(3, 3);
    const int draws = 400000;
    for (int k = 0; k < draws; ++k) {
        Vector x{normal(gen), normal(gen), normal(gen)};
        const double s = 1.0 / (1.0 + std::exp(-dot(x, theta)));
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) acc(i, j) += s * (1.0 - s) * x[i] * x[j];
    }
    EXPECT_LE(max_abs(acc * (1.0 / draws) - info), 3e-3);
    EXPECT_LE(max_abs(expected_fisher_per_sample(Family::Logistic, Vector{0.0, 0.0}) - Matrix::identity(2) * 0.25),
              1e-12);
}

TEST(GenerateDataset, NearNoiselessLinearRecovery) {
    RngStream rng(12);
    const Vector theta{1.0, -2.0, 0.5};
    const auto fit = fit_mle(generate_dataset(rng, Family::Linear, theta, 20, NoiseSpec(1e-12)), NoiseSpec(1e-12));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(fit.theta_hat[i], theta[i], 1e-4);
}

TEST(GenerateDataset, FairCoinLabels) {
    RngStream rng(13);
    const std::size_t n = 10000;
    const auto data = generate_dataset(rng, Family::Logistic, Vector{0.0, 0.0}, n);
    double mean = 0.0;
    for (double y : data.responses()) mean += y / n;
    EXPECT_LE(std::abs(mean), 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST(GenerateDataset, ReplayIsBitIdentical) {
    for (Family family : {Family::Linear, Family::Logistic}) {
        RngStream a(21, 4), b(21, 4);
        const auto da = generate_dataset(a, family, Vector{0.4, 0.1}, 25);
        const auto db = generate_dataset(b, family, Vector{0.4, 0.1}, 25);
        EXPECT_EQ(da.responses(), db.responses());
        EXPECT_EQ(max_abs(da.features() - db.features()), 0.0);
    }
}

TEST(GenerateDataset, AsymptoticCovarianceOfMle) {
    const std::size_t n = 2000, reps = 2000;
    for (Family family : {Family::Linear, Family::Logistic}) {
        const Vector theta{0.5, -0.3, 0.2};
        const std::size_t d = theta.size();
        Matrix cov(d, d);
        RngStream master(99, family == Family::Linear ? 1 : 2);
        for (std::size_t r = 0; r < reps; ++r) {
            RngStream rng = master.substream(r);
            const auto fit = fit_mle(generate_dataset(rng, family, theta, n));
            const Vector z = fit.theta_hat - theta;
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) cov(i, j) += n * z[i] * z[j] / reps;
        }
        // Whiten with I^{1/2}: the result should be close to the identity.
        const auto root = eigh(expected_fisher_per_sample(family, theta)).apply([](double v) { return std::sqrt(v); });
        const auto spectrum = eigh(symmetrized(root * cov * root));
        EXPECT_GE(spectrum.min_eigenvalue(), 0.8) << to_string(family);
        EXPECT_LE(spectrum.max_eigenvalue(), 1.25) << to_string(family);
    }
}

TEST(DatasetCsv, RoundTrip) {
    RngStream rng(2);
    const auto data = generate_dataset(rng, Family::Linear, Vector{1.0, 2.0}, 7);
    std::stringstream buf;
    write_dataset_csv(buf, data);
    const auto back = parse_dataset_csv(buf, Family::Linear);
    EXPECT_EQ(back.responses(), data.responses());
    EXPECT_EQ(max_abs(back.features() - data.features()), 0.0);
}

TEST(DatasetCsv, ErrorsCarryLineNumbers) {
    auto message = [](const std::string& text, Family family) {
        std::istringstream in(text);
        try {
            parse_dataset_csv(in, family, "f.csv");
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::ParseError);
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_NE(message("y,x1\n1,2\n3,abc\n", Family::Linear).find("f.csv:3"), std::string::npos);
    EXPECT_NE(message("y,x1\n1,2,3\n", Family::Linear).find("f.csv:2"), std::string::npos);
    EXPECT_NE(message("y,x2\n1,2\n", Family::Linear).find("f.csv:1"), std::string::npos);
    EXPECT_NE(message("y,x1\n0.5,1\n", Family::Logistic).find("f.csv:2"), std::string::npos);
    EXPECT_NE(message("y,x1\n", Family::Linear).find("no samples"), std::string::npos);
}
