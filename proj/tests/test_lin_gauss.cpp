#include <gtest/gtest.h>

#include <cmath>

#include "goved/lin_gauss.hpp"

using namespace goved;

namespace {

LinGaussProblem scalar_problem(double p) {
    LinGaussProblem prob;
    prob.forward = Matrix{{1.0}};
    prob.prediction = Matrix{{p}};
    prob.noise_cov = Matrix{{1.0}};
    prob.prior_cov = Matrix{{1.0}};
    prob.prior_mean = {0.0};
    return prob;
}

LinGaussProblem random_problem(std::size_t n, std::size_t m, std::size_t q, Rng& rng) {
    LinGaussSpec s;
    s.n = n;
    s.m = m;
    s.q = q;
    LinGaussProblem p = make_lin_gauss_problem(s, rng);
    for (double& v : p.prior_mean) v = rng.normal();
    for (double& v : p.prediction.data()) v += 0.3 * rng.normal();
    return p;
}

}  // namespace

TEST(Posterior, ScalarExampleClosedForm) {
    const GaussianFull g = posterior(scalar_problem(1.0), Vector{2.0});
    EXPECT_NEAR(g.mean[0], 1.0, 1e-14);
    EXPECT_NEAR(g.cov(0, 0), 0.5, 1e-14);
}

TEST(Posterior, ScalarExampleMonteCarlo) {
    // Exact conditional draws by Matheron's rule y_s = y' + Gy A^T (A Gy A^T + Gn)^-1 (b - b').
    Rng rng(1);
    const int n = 200000;
    double s = 0.0, ss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double y = rng.normal();
        const double bp = y + rng.normal();
        const double ys = y + 0.5 * (2.0 - bp);
        s += ys;
        ss += ys * ys;
    }
    const double mean = s / n, var = ss / n - mean * mean;
    EXPECT_NEAR(mean, 1.0, 3 * std::sqrt(0.5 / n));
    EXPECT_NEAR(var, 0.5, 3 * 0.5 * std::sqrt(2.0 / n));
}

TEST(Posterior, UninformativeDataReturnsPrior) {
    Rng rng(2);
    LinGaussProblem p = random_problem(5, 4, 2, rng);
    p.noise_cov = 1e12 * Matrix::identity(4);
    const GaussianFull g = posterior(p, Vector{1.0, -3.0, 2.0, 0.5});
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_NEAR(g.mean[i], p.prior_mean[i], 1e-6 * std::max(1.0, std::abs(p.prior_mean[i])));
        for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(g.cov(i, j), p.prior_cov(i, j), 1e-6);
    }
}

TEST(Posterior, ZeroPriorMeanZeroData) {
    Rng rng(3);
    LinGaussProblem p = random_problem(6, 6, 2, rng);
    p.prior_mean.assign(6, 0.0);
    for (double v : posterior(p, Vector(6, 0.0)).mean) EXPECT_EQ(v, 0.0);
}

TEST(Posterior, MeanIsAffineInData) {
    Rng rng(4);
    const LinGaussProblem p = random_problem(8, 6, 2, rng);
    const Vector b1 = sample_standard_normal(rng, 6), b2 = sample_standard_normal(rng, 6);
    const Vector avg = 0.5 * (b1 + b2);
    const Vector m1 = posterior(p, b1).mean, m2 = posterior(p, b2).mean, ma = posterior(p, avg).mean;
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(ma[i], 0.5 * (m1[i] + m2[i]), 1e-11);
}

TEST(Posterior, ShapeMismatch) {
    EXPECT_THROW(posterior(scalar_problem(1.0), Vector{1.0, 2.0}), ShapeMismatch);
}

TEST(Posterior, NonSpdCovarianceIsRejected) {
    LinGaussProblem p = scalar_problem(1.0);
    p.prior_cov = Matrix{{-1.0}};
    EXPECT_THROW(posterior(p, Vector{1.0}), NotSpd);
}

TEST(PosteriorPredictive, ScalarExample) {
    const GaussianFull g = posterior_predictive(scalar_problem(3.0), Vector{2.0});
    EXPECT_NEAR(g.mean[0], 3.0, 1e-13);
    EXPECT_NEAR(g.cov(0, 0), 4.5, 1e-13);

    Rng rng(8);
    const int n = 200000;
    double s = 0.0, ss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double y = rng.normal();
        const double xs = 3.0 * (y + 0.5 * (2.0 - y - rng.normal()));
        s += xs;
        ss += xs * xs;
    }
    const double mean = s / n, var = ss / n - mean * mean;
    EXPECT_NEAR(mean, 3.0, 3 * std::sqrt(4.5 / n));
    EXPECT_NEAR(var, 4.5, 3 * 4.5 * std::sqrt(2.0 / n));
}

TEST(PosteriorPredictive, ZeroPredictionMap) {
    const GaussianFull g = posterior_predictive(scalar_problem(0.0), Vector{2.0});
    EXPECT_EQ(g.mean[0], 0.0);
    EXPECT_EQ(g.cov(0, 0), 0.0);
}

TEST(PosteriorPredictive, IdentityPredictionEqualsPosterior) {
    Rng rng(5);
    LinGaussProblem p = random_problem(4, 5, 2, rng);
    p.prediction = Matrix::identity(4);
    const Vector b = sample_standard_normal(rng, 5);
    const GaussianFull a = posterior(p, b), c = posterior_predictive(p, b);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(a.mean[i], c.mean[i], 1e-14);
        for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a.cov(i, j), c.cov(i, j), 1e-14);
    }
}

TEST(PosteriorPredictive, CovarianceIsSymmetricPsd) {
    Rng rng(6);
    for (int t = 0; t < 10; ++t) {
        const LinGaussProblem p = random_problem(10, 7, 3, rng);
        const GaussianFull g = posterior_predictive(p, sample_standard_normal(rng, 7));
        EXPECT_TRUE(is_symmetric(g.cov, 1e-12));
        for (double e : sym_eig(g.cov).values) EXPECT_GE(e, -1e-12);
    }
}

TEST(LinGaussDataset, DeterministicAndShaped) {
    Rng rng(7);
    const LinGaussProblem p = make_lin_gauss_problem({}, rng);
    const Dataset a = gen_lin_gauss_dataset(p, 20, 99), b = gen_lin_gauss_dataset(p, 20, 99);
    ASSERT_EQ(a.size(), 20u);
    EXPECT_EQ(a.m, 16u);
    EXPECT_EQ(a.q, 2u);
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a.records[k].b, b.records[k].b);
        EXPECT_EQ(a.records[k].x, b.records[k].x);
    }
}
