#pragma once

// Small parallel-beam tomography problem: strip-integral Radon operator,
// randomized Shepp-Logan phantoms, TV-regularized reconstruction by ADMM and
// the bilevel search for the best regularization parameter.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "goved/dataset.hpp"
#include "goved/numerics.hpp"
#include "goved/parallel.hpp"

namespace goved {

struct ZeroSignal : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Radon operator

struct CtGeometry {
    std::size_t n_pix = 32;
    std::size_t n_angles = 48;
    std::size_t n_detectors = 45;
    double pixel_size = 1.0;  // physical side of one pixel; weights scale linearly with it
};

inline std::vector<double> uniform_angles(std::size_t count) {
    std::vector<double> a(count);
    for (std::size_t k = 0; k < count; ++k) a[k] = std::numbers::pi * static_cast<double>(k) / static_cast<double>(count);
    return a;
}

/// Angles with additive N(0, sigma^2) jitter.
inline std::vector<double> perturbed_angles(std::span<const double> angles, double sigma, Rng& rng) {
    std::vector<double> out(angles.begin(), angles.end());
    for (double& a : out) a += sigma * rng.normal();
    return out;
}

namespace detail {

/// Area of a unit-spaced square pixel of side s that lies below u, measured
/// along the projection direction theta from the footprint's lower edge.
inline double pixel_footprint_cdf(double u, double s, double c, double sn) {
    const double a = s * std::abs(c), b = s * std::abs(sn);
    const double lo = std::min(a, b), hi = std::max(a, b), w = a + b;
    const double area = s * s;
    if (u <= 0.0) return 0.0;
    if (u >= w) return area;
    const double h = area / hi;
    if (lo < 1e-14 * s) return h * std::min(u, hi);
    if (u < lo) return h * u * u / (2.0 * lo);
    if (u <= hi) return h * lo / 2.0 + h * (u - lo);
    return area - h * (w - u) * (w - u) / (2.0 * lo);
}

}  // namespace detail

/// Discrete Radon transform of an n x n image (row 0 at the top) on a
/// centered square of side n * pixel_size. Each ray is a detector strip of
/// width dt; its value is the strip integral of the image divided by dt, so
/// summing a projection over detectors times dt returns the image mass.
class RadonOperator {
public:
    RadonOperator() = default;

    RadonOperator(const CtGeometry& g, std::vector<double> angles) : geom_(g), angles_(std::move(angles)) {
        if (g.n_pix == 0 || g.n_detectors == 0 || angles_.empty()) throw std::invalid_argument("RadonOperator: empty geometry");
        build();
    }

    explicit RadonOperator(const CtGeometry& g) : RadonOperator(g, uniform_angles(g.n_angles)) {}

    std::size_t image_side() const { return geom_.n_pix; }
    std::size_t image_size() const { return geom_.n_pix * geom_.n_pix; }
    std::size_t detectors() const { return geom_.n_detectors; }
    std::size_t ray_count() const { return angles_.size() * geom_.n_detectors; }
    const std::vector<double>& angles() const { return angles_; }
    const CtGeometry& geometry() const { return geom_; }
    double detector_spacing() const { return dt_; }
    std::size_t nonzeros() const { return values_.size(); }

    Vector apply(std::span<const double> image) const {
        if (image.size() != image_size()) throw ShapeMismatch("radon_apply: image length");
        Vector out(ray_count(), 0.0);
        for (std::size_t r = 0; r < out.size(); ++r) {
            double s = 0.0;
            for (std::size_t k = row_start_[r]; k < row_start_[r + 1]; ++k) s += values_[k] * image[cols_[k]];
            out[r] = s;
        }
        return out;
    }

    Vector adjoint(std::span<const double> sinogram) const {
        if (sinogram.size() != ray_count()) throw ShapeMismatch("radon_adjoint: sinogram length");
        Vector out(image_size(), 0.0);
        for (std::size_t r = 0; r < sinogram.size(); ++r) {
            const double v = sinogram[r];
            if (v == 0.0) continue;
            for (std::size_t k = row_start_[r]; k < row_start_[r + 1]; ++k) out[cols_[k]] += values_[k] * v;
        }
        return out;
    }

    /// Dense A^T A, image_size x image_size.
    Matrix normal_matrix() const {
        const std::size_t n = image_size();
        Matrix m(n, n);
        for (std::size_t r = 0; r < ray_count(); ++r)
            for (std::size_t a = row_start_[r]; a < row_start_[r + 1]; ++a)
                for (std::size_t b = row_start_[r]; b < row_start_[r + 1]; ++b)
                    m(cols_[a], cols_[b]) += values_[a] * values_[b];
        return m;
    }

private:
    void build() {
        const std::size_t n = geom_.n_pix, nd = geom_.n_detectors;
        const double side = static_cast<double>(n);
        const double span = side * std::numbers::sqrt2;  // covers every pixel at every angle
        dt_ = span / static_cast<double>(nd);
        const double t0 = -0.5 * span;
        std::vector<std::vector<std::pair<std::uint32_t, double>>> rows(ray_count());
        for (std::size_t k = 0; k < angles_.size(); ++k) {
            const double c = std::cos(angles_[k]), sn = std::sin(angles_[k]);
            const double half_w = 0.5 * (std::abs(c) + std::abs(sn));
            for (std::size_t i = 0; i < n; ++i) {
                const double py = 0.5 * side - static_cast<double>(i) - 0.5;
                for (std::size_t j = 0; j < n; ++j) {
                    const double px = static_cast<double>(j) + 0.5 - 0.5 * side;
                    const double lo = px * c + py * sn - half_w;
                    const double hi = lo + 2.0 * half_w;
                    auto d0 = static_cast<long>(std::floor((lo - t0) / dt_));
                    auto d1 = static_cast<long>(std::floor((hi - t0) / dt_));
                    d0 = std::max(d0, 0L);
                    d1 = std::min(d1, static_cast<long>(nd) - 1);
                    for (long d = d0; d <= d1; ++d) {
                        const double a = t0 + static_cast<double>(d) * dt_;
                        const double area = detail::pixel_footprint_cdf(a + dt_ - lo, 1.0, c, sn) -
                                            detail::pixel_footprint_cdf(a - lo, 1.0, c, sn);
                        if (area > 0.0)
                            rows[k * nd + static_cast<std::size_t>(d)].emplace_back(
                                static_cast<std::uint32_t>(i * n + j), area / dt_ * geom_.pixel_size);
                    }
                }
            }
        }
        row_start_.assign(1, 0);
        for (const auto& row : rows) {
            for (const auto& [col, v] : row) {
                cols_.push_back(col);
                values_.push_back(v);
            }
            row_start_.push_back(cols_.size());
        }
    }

    CtGeometry geom_;
    std::vector<double> angles_;
    double dt_ = 1.0;
    std::vector<std::size_t> row_start_;
    std::vector<std::uint32_t> cols_;
    Vector values_;
};

inline Vector radon_apply(const RadonOperator& op, std::span<const double> image) { return op.apply(image); }
inline Vector radon_adjoint(const RadonOperator& op, std::span<const double> sinogram) { return op.adjoint(sinogram); }

/// clean + e with e white noise rescaled so that ||e|| / ||clean|| = r / 100.
inline Vector add_noise_level(std::span<const double> clean, double r, Rng& rng) {
    if (!(r >= 0.0)) throw std::invalid_argument("add_noise_level: r must be >= 0");
    Vector out(clean.begin(), clean.end());
    if (r == 0.0) return out;
    const double cn = norm2(clean);
    if (cn == 0.0) throw ZeroSignal("add_noise_level: clean signal is zero");
    Vector e = sample_standard_normal(rng, clean.size());
    const double scale = r / 100.0 * cn / norm2(e);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * e[i];
    return out;
}

// ---------------------------------------------------------------------------
// Phantoms

struct Ellipse {
    double intensity;
    double a;  // semi-axis along x before rotation
    double b;  // semi-axis along y before rotation
    double x0;
    double y0;
    double phi;  // radians
};

/// Modified Shepp-Logan ellipses on [-1, 1]^2.
inline std::vector<Ellipse> shepp_logan_ellipses() {
    const double d = std::numbers::pi / 180.0;
    return {{1.0, 0.69, 0.92, 0.0, 0.0, 0.0},          {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
            {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0 * d},  {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0 * d},
            {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},         {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
            {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},       {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
            {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},     {0.1, 0.023, 0.046, 0.06, -0.605, 0.0}};
}

struct PhantomJitter {
    double center = 0.05;     // uniform shift of each center coordinate
    double axes = 0.1;        // relative uniform change of each semi-axis
    double angle = 10.0 * std::numbers::pi / 180.0;
    double intensity = 0.25;  // relative uniform change of each intensity
};

struct Phantom {
    std::size_t n_pix = 0;
    Vector values;  // row-major, row 0 at the top
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::vector<Ellipse> ellipses;
};

inline Vector rasterize_ellipses(std::span<const Ellipse> ellipses, std::size_t n) {
    Vector img(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double y = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) {
            const double x = (2.0 * static_cast<double>(j) + 1.0) / static_cast<double>(n) - 1.0;
            double v = 0.0;
            for (const auto& e : ellipses) {
                const double c = std::cos(e.phi), s = std::sin(e.phi);
                const double u = (x - e.x0) * c + (y - e.y0) * s;
                const double w = -(x - e.x0) * s + (y - e.y0) * c;
                if ((u * u) / (e.a * e.a) + (w * w) / (e.b * e.b) <= 1.0) v += e.intensity;
            }
            img[i * n + j] = std::clamp(v, 0.0, 1.0);
        }
    }
    return img;
}

inline Phantom gen_phantom(Rng& rng, std::size_t n_pix, const PhantomJitter& jitter = {}) {
    if (n_pix < 8) throw std::invalid_argument("gen_phantom: n_pix must be >= 8");
    Phantom p;
    p.n_pix = n_pix;
    p.seed = rng.seed();
    p.stream = rng.stream();
    p.ellipses = shepp_logan_ellipses();
    // The skull pair (first two ellipses) shares one jitter draw.
    auto draw = [&] {
        return std::array<double, 6>{jitter.center * rng.uniform(-1.0, 1.0), jitter.center * rng.uniform(-1.0, 1.0),
                                     1.0 + jitter.axes * rng.uniform(-1.0, 1.0),   1.0 + jitter.axes * rng.uniform(-1.0, 1.0),
                                     jitter.angle * rng.uniform(-1.0, 1.0),        1.0 + jitter.intensity * rng.uniform(-1.0, 1.0)};
    };
    std::array<double, 6> d = draw();
    for (std::size_t k = 0; k < p.ellipses.size(); ++k) {
        if (k >= 2) d = draw();
        auto& e = p.ellipses[k];
        e.x0 += d[0];
        e.y0 += d[1];
        e.a *= d[2];
        e.b *= d[3];
        e.phi += d[4];
        e.intensity *= d[5];
    }
    p.values = rasterize_ellipses(p.ellipses, n_pix);
    return p;
}

// ---------------------------------------------------------------------------
// TV-regularized reconstruction

/// Anisotropic first-order differences of an n x n image: horizontal
/// differences row by row, then vertical differences.
inline std::size_t tv_difference_count(std::size_t n) { return 2 * n * (n - 1); }

inline void tv_gradient(std::span<const double> y, std::size_t n, std::span<double> out) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j + 1 < n; ++j) out[k++] = y[i * n + j + 1] - y[i * n + j];
    for (std::size_t i = 0; i + 1 < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out[k++] = y[(i + 1) * n + j] - y[i * n + j];
}

inline void tv_gradient_adjoint(std::span<const double> w, std::size_t n, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j + 1 < n; ++j, ++k) {
            out[i * n + j + 1] += w[k];
            out[i * n + j] -= w[k];
        }
    for (std::size_t i = 0; i + 1 < n; ++i)
        for (std::size_t j = 0; j < n; ++j, ++k) {
            out[(i + 1) * n + j] += w[k];
            out[i * n + j] -= w[k];
        }
}

inline double tv_norm(std::span<const double> y, std::size_t n) {
    Vector d(tv_difference_count(n));
    tv_gradient(y, n, d);
    double s = 0.0;
    for (double v : d) s += std::abs(v);
    return s;
}

/// ||A y - b||^2 + x ||D y||_1
inline double tv_objective(const RadonOperator& op, std::span<const double> b, std::span<const double> y, double x) {
    const Vector ay = op.apply(y);
    double r = 0.0;
    for (std::size_t i = 0; i < ay.size(); ++i) r += (ay[i] - b[i]) * (ay[i] - b[i]);
    return r + x * tv_norm(y, op.image_side());
}

struct TvConfig {
    double abs_tol = 1e-4;
    double rel_tol = 1e-4;
    int max_iterations = 500;
    double rho_factor = 10.0;  // rho = rho_factor * x before snapping
    double relaxation = 1.6;  // over-relaxation of D y in the w and u updates, in (0, 2)
    int rho_per_decade = 3;   // rho is snapped to this many log-spaced values per decade; 0 disables
};

struct TvSolveReport {
    Vector y;
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double rho = 0.0;
    bool converged = false;  // false means the iteration cap was reached
};

/// Lower Cholesky factor stored row-packed in single precision. The ADMM
/// y-update only needs a few significant digits and this halves the memory
/// traffic of each solve twice over.
class PackedFactor {
public:
    explicit PackedFactor(const Matrix& l)
        : n_(l.rows()), data_(l.rows() * (l.rows() + 1) / 2), upper_(data_.size()) {
        std::size_t k = 0;
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j <= i; ++j) data_[k++] = static_cast<float>(l(i, j));
        // Row i of L^T from the diagonal onwards, stored back to front.
        k = 0;
        for (std::size_t i = n_; i-- > 0;)
            for (std::size_t j = n_; j-- > i;) upper_[k++] = static_cast<float>(l(j, i));
    }

    void solve_in_place(std::span<double> b) const {
        forward(data_.data(), b);
        // Backward pass on the reversed vector reuses the forward kernel.
        std::reverse(b.begin(), b.end());
        forward(upper_.data(), b);
        std::reverse(b.begin(), b.end());
    }

private:
    // Solves T z = b in place for a row-packed lower-triangular T.
    void forward(const float* row, std::span<double> b) const {
        for (std::size_t i = 0; i < n_; ++i, row += i) {
            double acc[8] = {};
            std::size_t k = 0;
            for (; k + 8 <= i; k += 8)
                for (std::size_t r = 0; r < 8; ++r) acc[r] += static_cast<double>(row[k + r]) * b[k + r];
            double s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
            for (; k < i; ++k) s += static_cast<double>(row[k]) * b[k];
            b[i] = (b[i] - s) / static_cast<double>(row[i]);
        }
    }

    std::size_t n_;
    std::vector<float> data_;
    std::vector<float> upper_;
};

/// ADMM state carried between solves on the same data for warm starts.
struct TvWarmStart {
    Vector y;
    Vector w;
    Vector lambda;  // unscaled dual, lambda = rho * u
};

/// Scaled-form ADMM for min ||A y - b||^2 + x ||D y||_1 with the split w = D y.
/// The y-update solves (2 A^T A + rho D^T D) y = 2 A^T b + rho D^T (w - u)
/// with a dense Cholesky factor, cached per rho value.
class TvSolver {
public:
    explicit TvSolver(const RadonOperator& op, TvConfig cfg = {})
        : op_(&op), cfg_(cfg), normal_(std::make_shared<Matrix>(op.normal_matrix())) {}

    const TvConfig& config() const { return cfg_; }

    double rho_for(double x) const {
        double rho = cfg_.rho_factor * x;
        if (cfg_.rho_per_decade > 0) {
            const double k = std::round(std::log10(rho) * cfg_.rho_per_decade);
            rho = std::pow(10.0, k / cfg_.rho_per_decade);
        }
        return rho;
    }

    TvSolveReport solve(std::span<const double> b, double x, TvWarmStart* warm = nullptr) const {
        if (!(x > 0.0)) throw std::invalid_argument("tv_admm_solve: x must be positive");
        if (b.size() != op_->ray_count()) throw ShapeMismatch("tv_admm_solve: sinogram length");
        const std::size_t n = op_->image_side(), npx = op_->image_size(), nd = tv_difference_count(n);
        const double rho = rho_for(x);
        const auto factor = factor_for(rho);

        Vector atb = op_->adjoint(b);
        for (double& v : atb) v *= 2.0;

        Vector y(npx, 0.0), w(nd, 0.0), u(nd, 0.0);
        if (warm && warm->y.size() == npx && warm->w.size() == nd && warm->lambda.size() == nd) {
            y = warm->y;
            w = warm->w;
            for (std::size_t i = 0; i < nd; ++i) u[i] = warm->lambda[i] / rho;
        }

        Vector dy(nd), rhs(npx), tmp(nd), w_old(nd), dtv(npx);
        const double thresh = x / rho;
        TvSolveReport rep;
        rep.rho = rho;
        for (int it = 1; it <= cfg_.max_iterations; ++it) {
            for (std::size_t i = 0; i < nd; ++i) tmp[i] = w[i] - u[i];
            tv_gradient_adjoint(tmp, n, dtv);
            for (std::size_t i = 0; i < npx; ++i) rhs[i] = atb[i] + rho * dtv[i];
            factor->solve_in_place(rhs);
            y = rhs;

            tv_gradient(y, n, dy);
            w_old = w;
            const double alpha = cfg_.relaxation;
            for (std::size_t i = 0; i < nd; ++i) {
                const double v = alpha * dy[i] + (1.0 - alpha) * w_old[i] + u[i];
                w[i] = v > thresh ? v - thresh : (v < -thresh ? v + thresh : 0.0);
            }
            double rn = 0.0, dyn = 0.0, wn = 0.0;
            for (std::size_t i = 0; i < nd; ++i) {
                const double r = dy[i] - w[i];
                u[i] += alpha * dy[i] + (1.0 - alpha) * w_old[i] - w[i];
                rn += r * r;
                dyn += dy[i] * dy[i];
                wn += w[i] * w[i];
                tmp[i] = w[i] - w_old[i];
            }
            tv_gradient_adjoint(tmp, n, dtv);
            const double sn = rho * norm2(dtv);
            tv_gradient_adjoint(u, n, dtv);
            const double un = rho * norm2(dtv);

            rep.iterations = it;
            rep.primal_residual = std::sqrt(rn);
            rep.dual_residual = sn;
            const double eps_pri = std::sqrt(static_cast<double>(nd)) * cfg_.abs_tol +
                                   cfg_.rel_tol * std::max(std::sqrt(dyn), std::sqrt(wn));
            const double eps_dual = std::sqrt(static_cast<double>(npx)) * cfg_.abs_tol + cfg_.rel_tol * un;
            if (rep.primal_residual <= eps_pri && rep.dual_residual <= eps_dual) {
                rep.converged = true;
                break;
            }
        }
        rep.y = y;
        if (warm) {
            warm->y = y;
            warm->w = w;
            warm->lambda.resize(nd);
            for (std::size_t i = 0; i < nd; ++i) warm->lambda[i] = rho * u[i];
        }
        return rep;
    }

private:
    std::shared_ptr<const PackedFactor> factor_for(double rho) const {
        std::lock_guard lock(cache_->mutex);
        auto it = cache_->factors.find(rho);
        if (it != cache_->factors.end()) return it->second;
        const std::size_t n = op_->image_side();
        Matrix m = *normal_;
        for (double& v : m.data()) v *= 2.0;
        // rho D^T D: graph Laplacian of the 4-neighbour pixel grid.
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t p = i * n + j;
                auto link = [&](std::size_t q) {
                    m(p, p) += rho;
                    m(q, q) += rho;
                    m(p, q) -= rho;
                    m(q, p) -= rho;
                };
                if (j + 1 < n) link(p + 1);
                if (i + 1 < n) link(p + n);
            }
        auto f = std::make_shared<const PackedFactor>(cholesky(m));
        cache_->factors.emplace(rho, f);
        return f;
    }

    struct Cache {
        std::mutex mutex;
        std::map<double, std::shared_ptr<const PackedFactor>> factors;
    };

    const RadonOperator* op_;
    TvConfig cfg_;
    std::shared_ptr<Matrix> normal_;
    std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

inline TvSolveReport tv_admm_solve(const RadonOperator& op, std::span<const double> b, double x, const TvConfig& cfg = {}) {
    return TvSolver(op, cfg).solve(b, x);
}

// ---------------------------------------------------------------------------
// Bilevel search for the regularization parameter

struct BilevelConfig {
    double log10_min = -3.0;
    double log10_max = 1.0;
    int grid_points = 13;
    double log10_width = 1e-2;  // golden-section stops once the bracket is this narrow
};

struct BilevelResult {
    double x_hat = 0.0;
    double error = 0.0;  // ||y(x_hat) - y_true||^2
    std::vector<double> xs;      // every evaluated parameter, ascending
    std::vector<double> errors;  // matching reconstruction errors
    int solves = 0;
    int unconverged = 0;
};

inline BilevelResult bilevel_oracle(const TvSolver& solver, std::span<const double> b, std::span<const double> y_true,
                                    const BilevelConfig& cfg = {}) {
    if (cfg.grid_points < 2) throw std::invalid_argument("bilevel_oracle: need at least 2 grid points");
    std::vector<std::pair<double, double>> evals;  // (log10 x, error)
    TvWarmStart warm;
    BilevelResult out;
    auto eval = [&](double lx) {
        const TvSolveReport rep = solver.solve(b, std::pow(10.0, lx), &warm);
        ++out.solves;
        if (!rep.converged) ++out.unconverged;
        double e = 0.0;
        for (std::size_t i = 0; i < rep.y.size(); ++i) e += (rep.y[i] - y_true[i]) * (rep.y[i] - y_true[i]);
        evals.emplace_back(lx, e);
        return e;
    };

    // Sweep from strong to weak regularization; warm starts follow the path.
    const double step = (cfg.log10_max - cfg.log10_min) / (cfg.grid_points - 1);
    std::vector<double> grid(static_cast<std::size_t>(cfg.grid_points)), gerr(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = cfg.log10_min + step * static_cast<double>(i);
    for (std::size_t i = grid.size(); i-- > 0;) gerr[i] = eval(grid[i]);
    const auto best = static_cast<std::size_t>(std::min_element(gerr.begin(), gerr.end()) - gerr.begin());

    double lo = grid[best > 0 ? best - 1 : 0];
    double hi = grid[std::min(best + 1, grid.size() - 1)];
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - g * (hi - lo), d = lo + g * (hi - lo);
    double fc = eval(c), fd = eval(d);
    while (hi - lo > cfg.log10_width) {
        if (fc <= fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = eval(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = eval(d);
        }
    }

    std::sort(evals.begin(), evals.end());
    auto arg = std::min_element(evals.begin(), evals.end(), [](auto& a, auto& b) { return a.second < b.second; });
    out.x_hat = std::pow(10.0, arg->first);
    out.error = arg->second;
    for (const auto& [lx, e] : evals) {
        out.xs.push_back(std::pow(10.0, lx));
        out.errors.push_back(e);
    }
    return out;
}

inline BilevelResult bilevel_oracle(const RadonOperator& op, std::span<const double> b, std::span<const double> y_true,
                                    const BilevelConfig& cfg = {}, const TvConfig& tv = {}) {
    return bilevel_oracle(TvSolver(op, tv), b, y_true, cfg);
}

// ---------------------------------------------------------------------------
// Dataset generation

struct CtDatasetConfig {
    CtGeometry geometry;
    double noise_min = 0.1;  // percent
    double noise_max = 5.0;
    PhantomJitter jitter;
    BilevelConfig search;
    TvConfig tv;
};

/// Record k uses Rng(seed, k) for its phantom and noise, so records are
/// independent of the worker count.
inline Dataset gen_ct_dataset(std::size_t J, const CtDatasetConfig& cfg, std::uint64_t seed, unsigned workers = 0) {
    if (J == 0) throw std::invalid_argument("gen_ct_dataset: J must be >= 1");
    const RadonOperator op(cfg.geometry);
    const TvSolver solver(op, cfg.tv);
    std::vector<Record> records(J);
    parallel_for(
        J,
        [&](std::size_t k) {
            Rng rng(seed, k);
            const Phantom ph = gen_phantom(rng, cfg.geometry.n_pix, cfg.jitter);
            const double r = rng.uniform(cfg.noise_min, cfg.noise_max);
            Vector b = add_noise_level(op.apply(ph.values), r, rng);
            const BilevelResult br = bilevel_oracle(solver, b, ph.values, cfg.search);
            records[k] = Record{std::move(b), {br.x_hat}, k, r};
        },
        workers == 0 ? worker_count() : workers);

    Dataset d;
    d.problem_id = "ct";
    d.m = op.ray_count();
    d.q = 1;
    d.seed = seed;
    d.noise_range = {cfg.noise_min, cfg.noise_max};
    d.meta = {{"n_pix", cfg.geometry.n_pix},
              {"n_angles", cfg.geometry.n_angles},
              {"n_detectors", cfg.geometry.n_detectors},
              {"pixel_size", cfg.geometry.pixel_size},
              {"noise_unit", "percent"}};
    for (auto& r : records) d.add(std::move(r));
    return d;
}

// ---------------------------------------------------------------------------
// CSV dumps

inline void write_grid_csv(const std::string& path, std::span<const double> values, std::size_t rows, std::size_t cols) {
    if (values.size() != rows * cols) throw ShapeMismatch("write_grid_csv: size");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os.precision(17);
    os << "row";
    for (std::size_t j = 0; j < cols; ++j) os << ",c" << j;
    os << '\n';
    for (std::size_t i = 0; i < rows; ++i) {
        os << i;
        for (std::size_t j = 0; j < cols; ++j) os << ',' << values[i * cols + j];
        os << '\n';
    }
}

inline void write_phantom_csv(const std::string& path, const Phantom& p) { write_grid_csv(path, p.values, p.n_pix, p.n_pix); }

inline void write_sinogram_csv(const std::string& path, const RadonOperator& op, std::span<const double> sinogram) {
    write_grid_csv(path, sinogram, op.angles().size(), op.detectors());
}

}  // namespace goved
