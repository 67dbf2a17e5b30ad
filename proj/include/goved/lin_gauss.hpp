#pragma once

// Closed-form posterior and posterior predictive for a linear forward map
// with Gaussian noise and prior, used as the reference for VED outputs.

#include <cmath>
#include <span>

#include "goved/dataset.hpp"
#include "goved/numerics.hpp"

namespace goved {

struct GaussianFull {
    Vector mean;
    Matrix cov;
};

struct LinGaussProblem {
    Matrix forward;      // A, m x n
    Matrix prediction;   // P, q x n
    Matrix noise_cov;    // Gamma_noise, m x m
    Matrix prior_cov;    // Gamma_y, n x n
    Vector prior_mean;   // ybar, n

    std::size_t n() const { return forward.cols(); }
    std::size_t m() const { return forward.rows(); }
    std::size_t q() const { return prediction.rows(); }

    void validate() const {
        if (prediction.cols() != n() || noise_cov.rows() != m() || noise_cov.cols() != m() ||
            prior_cov.rows() != n() || prior_cov.cols() != n() || prior_mean.size() != n())
            throw ShapeMismatch("LinGaussProblem: inconsistent dimensions");
    }
};

/// Gamma_post = (A^T Gn^-1 A + Gy^-1)^-1, y_post = Gamma_post (Gy^-1 ybar + A^T Gn^-1 b).
/// Every inverse is applied through a Cholesky factor.
inline GaussianFull posterior(const LinGaussProblem& p, std::span<const double> b) {
    p.validate();
    if (b.size() != p.m()) throw ShapeMismatch("posterior: observation length");
    const Matrix ln = cholesky(p.noise_cov);
    const Matrix ly = cholesky(p.prior_cov);
    const Matrix noise_inv_a = cholesky_solve(ln, p.forward);               // Gn^-1 A
    const Matrix prior_inv = cholesky_solve(ly, Matrix::identity(p.n()));  // Gy^-1
    Matrix precision = p.forward.transpose() * noise_inv_a + prior_inv;
    // Symmetrize away round-off before factorizing.
    for (std::size_t i = 0; i < precision.rows(); ++i)
        for (std::size_t j = i + 1; j < precision.cols(); ++j)
            precision(i, j) = precision(j, i) = 0.5 * (precision(i, j) + precision(j, i));
    const Matrix lp = cholesky(precision);

    Vector rhs = cholesky_solve(ly, p.prior_mean);
    const Vector atb = transpose_times(noise_inv_a, b);
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] += atb[i];

    GaussianFull out;
    out.mean = cholesky_solve(lp, rhs);
    out.cov = cholesky_solve(lp, Matrix::identity(p.n()));
    for (std::size_t i = 0; i < out.cov.rows(); ++i)
        for (std::size_t j = i + 1; j < out.cov.cols(); ++j)
            out.cov(i, j) = out.cov(j, i) = 0.5 * (out.cov(i, j) + out.cov(j, i));
    return out;
}

/// x_pred = P y_post, Sigma_pred = P Gamma_post P^T.
inline GaussianFull posterior_predictive(const LinGaussProblem& p, std::span<const double> b) {
    const GaussianFull post = posterior(p, b);
    GaussianFull out;
    out.mean = p.prediction * post.mean;
    out.cov = p.prediction * post.cov * p.prediction.transpose();
    return out;
}

/// Draw from N(mean, cov) through a Cholesky factor.
inline Vector sample_gaussian(const Vector& mean, const Matrix& chol, Rng& rng) {
    Vector xi = sample_standard_normal(rng, mean.size());
    Vector out = chol * xi;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += mean[i];
    return out;
}

/// Configuration of a synthetic goal-oriented linear-Gaussian problem.
struct LinGaussSpec {
    std::size_t n = 16;
    std::size_t m = 16;
    std::size_t q = 2;
    double noise_std = 0.3;
    double correlation_length = 0.2;  // squared-exponential prior on a 1-D grid
};

/// Random A with unit-variance entries scaled by 1/sqrt(n), a smooth
/// squared-exponential prior on [0, 1], and local-average prediction rows.
inline LinGaussProblem make_lin_gauss_problem(const LinGaussSpec& s, Rng& rng) {
    LinGaussProblem p;
    p.forward = Matrix(s.m, s.n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.n));
    for (double& v : p.forward.data()) v = scale * rng.normal();
    p.prior_cov = Matrix(s.n, s.n);
    for (std::size_t i = 0; i < s.n; ++i)
        for (std::size_t j = 0; j < s.n; ++j) {
            const double d = (static_cast<double>(i) - static_cast<double>(j)) / static_cast<double>(std::max<std::size_t>(1, s.n - 1));
            p.prior_cov(i, j) = std::exp(-0.5 * d * d / (s.correlation_length * s.correlation_length)) + (i == j ? 1e-2 : 0.0);
        }
    p.prior_mean.assign(s.n, 0.0);
    p.noise_cov = Matrix::identity(s.m);
    for (double& v : p.noise_cov.data()) v *= s.noise_std * s.noise_std;
    // Row k averages the k-th block of the unknown.
    p.prediction = Matrix(s.q, s.n);
    const std::size_t block = std::max<std::size_t>(1, s.n / std::max<std::size_t>(1, s.q));
    for (std::size_t k = 0; k < s.q; ++k)
        for (std::size_t j = k * block; j < std::min(s.n, (k + 1) * block); ++j)
            p.prediction(k, j) = 1.0 / static_cast<double>(block);
    return p;
}

/// (b, x) pairs with y ~ prior, b = A y + e, x = P y; record k uses stream k.
inline Dataset gen_lin_gauss_dataset(const LinGaussProblem& p, std::size_t J, std::uint64_t seed) {
    Dataset d;
    d.problem_id = "lingauss";
    d.m = p.m();
    d.q = p.q();
    d.seed = seed;
    const Matrix ly = cholesky(p.prior_cov);
    const Matrix ln = cholesky(p.noise_cov);
    const double noise = std::sqrt(p.noise_cov(0, 0));
    d.noise_range = {noise, noise};
    for (std::size_t k = 0; k < J; ++k) {
        Rng rng(seed, k);
        const Vector y = sample_gaussian(p.prior_mean, ly, rng);
        Vector b = p.forward * y;
        const Vector e = sample_gaussian(Vector(p.m(), 0.0), ln, rng);
        for (std::size_t i = 0; i < b.size(); ++i) b[i] += e[i];
        d.add(Record{std::move(b), p.prediction * y, k, noise});
    }
    return d;
}

}  // namespace goved
