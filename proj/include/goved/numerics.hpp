#pragma once

// Dense linear algebra, a banded SPD factorization, conjugate gradients and a
// reproducible random stream. Everything else in goved is built on these.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace goved {

using Vector = std::vector<double>;

struct NotSpd : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoConvergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Numerical tolerances used across the library. Defaults are the contract
/// values; the CLI may override them from a config file before any work starts.
struct Tolerances {
    double symmetry = 1e-12;          // relative, for cholesky / sym_eig preconditions
    double reconstruction = 1e-10;    // ||L L^T - M||_F / ||M||_F
    double eig_residual = 1e-8;       // max_i ||M v_i - g_i v_i||
    double solve_residual = 1e-8;     // ||M x - b|| / ||b||
    double cg_relative = 1e-10;       // PDE solves
    int jacobi_max_sweeps = 100;
    int cg_max_iterations = 20000;
};

inline Tolerances& tolerances() {
    static Tolerances table;
    return table;
}

// ---------------------------------------------------------------------------
// Matrix

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, Vector data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw ShapeMismatch("Matrix: data length does not match rows*cols");
    }
    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw ShapeMismatch("Matrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
    static Matrix diagonal(std::span<const double> d) {
        Matrix m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool square() const { return rows_ == cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    Vector& data() { return data_; }
    const Vector& data() const { return data_; }

    Vector column(std::size_t j) const {
        Vector c(rows_);
        for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
        return c;
    }

    Matrix transpose() const {
        Matrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vector data_;
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

inline Vector operator*(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size()) throw ShapeMismatch("matvec: dimensions differ");
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto r = a.row(i);
        y[i] = std::inner_product(r.begin(), r.end(), x.begin(), 0.0);
    }
    return y;
}

inline Vector operator*(const Matrix& a, const Vector& x) { return a * std::span<const double>(x); }

/// y = A^T x without forming A^T.
inline Vector transpose_times(const Matrix& a, std::span<const double> x) {
    if (a.rows() != x.size()) throw ShapeMismatch("transpose_times: dimensions differ");
    Vector y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto r = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += r[j] * x[i];
    }
    return y;
}

inline Matrix operator+(Matrix a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatch("matrix add: shapes differ");
    for (std::size_t i = 0; i < a.data().size(); ++i) a.data()[i] += b.data()[i];
    return a;
}

inline Matrix operator-(Matrix a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatch("matrix sub: shapes differ");
    for (std::size_t i = 0; i < a.data().size(); ++i) a.data()[i] -= b.data()[i];
    return a;
}

inline Matrix operator*(double s, Matrix a) {
    for (double& v : a.data()) v *= s;
    return a;
}

inline double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Vector helpers

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeMismatch("dot: lengths differ");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Vector operator+(Vector a, const Vector& b) {
    if (a.size() != b.size()) throw ShapeMismatch("vector add: lengths differ");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

inline Vector operator-(Vector a, const Vector& b) {
    if (a.size() != b.size()) throw ShapeMismatch("vector sub: lengths differ");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
    return a;
}

inline Vector operator*(double s, Vector a) {
    for (double& v : a) v *= s;
    return a;
}

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline bool is_symmetric(const Matrix& m, double rel_tol) {
    if (!m.square()) return false;
    const double scale = std::max(frobenius_norm(m), 1e-300);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = i + 1; j < m.cols(); ++j)
            if (std::abs(m(i, j) - m(j, i)) > rel_tol * scale) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Cholesky and SPD solves

/// Lower-triangular L with L L^T = M. Throws NotSpd on a non-positive pivot.
inline Matrix cholesky(const Matrix& m) {
    if (!is_symmetric(m, tolerances().symmetry)) throw NotSpd("cholesky: matrix is not symmetric");
    const std::size_t n = m.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = m(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0)) throw NotSpd("cholesky: non-positive pivot at column " + std::to_string(j));
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = m(i, j);
            const auto li = l.row(i);
            const auto lj = l.row(j);
            for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
            l(i, j) = s / ljj;
        }
    }
    return l;
}

/// Solves L y = b in place.
inline void forward_substitute(const Matrix& l, std::span<double> b) {
    for (std::size_t i = 0; i < l.rows(); ++i) {
        double s = b[i];
        const auto li = l.row(i);
        for (std::size_t k = 0; k < i; ++k) s -= li[k] * b[k];
        b[i] = s / li[i];
    }
}

/// Solves L^T x = b in place.
inline void backward_substitute(const Matrix& l, std::span<double> b) {
    for (std::size_t ii = l.rows(); ii-- > 0;) {
        const auto li = l.row(ii);
        const double v = b[ii] / li[ii];
        b[ii] = v;
        for (std::size_t k = 0; k < ii; ++k) b[k] -= li[k] * v;
    }
}

inline Vector cholesky_solve(const Matrix& l, Vector rhs) {
    if (rhs.size() != l.rows()) throw ShapeMismatch("cholesky_solve: rhs length");
    forward_substitute(l, rhs);
    backward_substitute(l, rhs);
    return rhs;
}

/// Solves L L^T X = B column by column.
inline Matrix cholesky_solve(const Matrix& l, const Matrix& rhs) {
    if (rhs.rows() != l.rows()) throw ShapeMismatch("cholesky_solve: rhs rows");
    Matrix out(rhs.rows(), rhs.cols());
    for (std::size_t j = 0; j < rhs.cols(); ++j) {
        Vector c = cholesky_solve(l, rhs.column(j));
        for (std::size_t i = 0; i < c.size(); ++i) out(i, j) = c[i];
    }
    return out;
}

inline Vector solve_spd(const Matrix& m, std::span<const double> rhs) {
    if (!m.square() || rhs.size() != m.rows()) throw ShapeMismatch("solve_spd: dimensions differ");
    return cholesky_solve(cholesky(m), Vector(rhs.begin(), rhs.end()));
}

/// Inverse of an SPD matrix via its Cholesky factor (only used where a full
/// covariance is the requested output).
inline Matrix spd_inverse(const Matrix& m) { return cholesky_solve(cholesky(m), Matrix::identity(m.rows())); }

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)

struct SymEig {
    Vector values;   // descending
    Matrix vectors;  // column i pairs with values[i]
};

inline SymEig sym_eig(const Matrix& m) {
    if (!is_symmetric(m, std::max(tolerances().symmetry, 1e-10)))
        throw ShapeMismatch("sym_eig: matrix is not symmetric");
    const std::size_t n = m.rows();
    Matrix a = m;
    Matrix v = Matrix::identity(n);

    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
        return std::sqrt(2.0 * s);
    };
    const double scale = std::max(frobenius_norm(m), 1e-300);

    bool converged = n < 2;
    for (int sweep = 0; sweep < tolerances().jacobi_max_sweeps && !converged; ++sweep) {
        if (off_norm() <= 1e-15 * scale) {
            converged = true;
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (!converged && off_norm() > 1e-15 * scale) throw NoConvergence("sym_eig: Jacobi sweep cap reached");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    SymEig out{Vector(n), Matrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t src = order[k];
        out.values[k] = a(src, src);
        // Sign convention: the largest-magnitude entry of each eigenvector is positive.
        std::size_t arg = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (std::abs(v(i, src)) > std::abs(v(arg, src)) + 1e-12) arg = i;
        const double sign = v(arg, src) < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = sign * v(i, src);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Banded SPD factorization, for repeated solves against one stiffness matrix.

class BandedCholesky {
public:
    BandedCholesky() = default;

    /// `entry(i, j)` must return M(i, j) for |i - j| <= bandwidth, j <= i.
    template <class Entry>
    BandedCholesky(std::size_t n, std::size_t bandwidth, Entry&& entry)
        : n_(n), bw_(bandwidth), l_(n * (bandwidth + 1), 0.0) {
        for (std::size_t i = 0; i < n_; ++i) {
            const std::size_t j0 = i > bw_ ? i - bw_ : 0;
            for (std::size_t j = j0; j <= i; ++j) {
                double s = entry(i, j);
                const std::size_t k0 = std::max(j0, j > bw_ ? j - bw_ : std::size_t{0});
                for (std::size_t k = k0; k < j; ++k) s -= at(i, k) * at(j, k);
                if (j == i) {
                    if (!(s > 0.0)) throw NotSpd("banded cholesky: non-positive pivot at row " + std::to_string(i));
                    at(i, i) = std::sqrt(s);
                } else {
                    at(i, j) = s / at(j, j);
                }
            }
        }
    }

    std::size_t size() const { return n_; }

    void solve_in_place(std::span<double> b) const {
        if (b.size() != n_) throw ShapeMismatch("banded solve: rhs length");
        for (std::size_t i = 0; i < n_; ++i) {
            double s = b[i];
            const std::size_t j0 = i > bw_ ? i - bw_ : 0;
            for (std::size_t k = j0; k < i; ++k) s -= at(i, k) * b[k];
            b[i] = s / at(i, i);
        }
        for (std::size_t ii = n_; ii-- > 0;) {
            double s = b[ii];
            const std::size_t k1 = std::min(n_, ii + bw_ + 1);
            for (std::size_t k = ii + 1; k < k1; ++k) s -= at(k, ii) * b[k];
            b[ii] = s / at(ii, ii);
        }
    }

private:
    double& at(std::size_t i, std::size_t j) { return l_[i * (bw_ + 1) + (bw_ - (i - j))]; }
    double at(std::size_t i, std::size_t j) const { return l_[i * (bw_ + 1) + (bw_ - (i - j))]; }

    std::size_t n_ = 0;
    std::size_t bw_ = 0;
    Vector l_;
};

// ---------------------------------------------------------------------------
// Conjugate gradients

struct CgReport {
    int iterations = 0;
    double relative_residual = 0.0;
    bool converged = false;
};

/// Jacobi-preconditioned CG on an SPD operator. `x` is the initial guess and
/// is overwritten with the solution. An empty `inv_diag` means no preconditioner.
template <class Apply>
CgReport conjugate_gradient(Apply&& apply, std::span<const double> rhs, std::span<double> x,
                            double rel_tol, int max_iterations, std::span<const double> inv_diag = {}) {
    const std::size_t n = rhs.size();
    if (x.size() != n || (!inv_diag.empty() && inv_diag.size() != n))
        throw ShapeMismatch("conjugate_gradient: lengths differ");
    CgReport rep;
    const double bnorm = norm2(rhs);
    if (bnorm == 0.0) {
        std::fill(x.begin(), x.end(), 0.0);
        rep.converged = true;
        return rep;
    }
    Vector r(n), z(n), p(n), ap(n);
    apply(std::span<const double>(x.data(), n), std::span<double>(ap));
    for (std::size_t i = 0; i < n; ++i) r[i] = rhs[i] - ap[i];
    auto precondition = [&] {
        if (inv_diag.empty())
            z = r;
        else
            for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
    };
    precondition();
    p = z;
    double rz = dot(r, z);
    double rnorm = norm2(r);
    while (rnorm > rel_tol * bnorm && rep.iterations < max_iterations) {
        apply(std::span<const double>(p), std::span<double>(ap));
        const double pap = dot(p, ap);
        if (!(pap > 0.0)) throw NotSpd("conjugate_gradient: operator is not positive definite");
        const double alpha = rz / pap;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precondition();
        const double rz_next = dot(r, z);
        const double beta = rz_next / rz;
        rz = rz_next;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
        rnorm = norm2(r);
        ++rep.iterations;
    }
    rep.relative_residual = rnorm / bnorm;
    rep.converged = rnorm <= rel_tol * bnorm;
    return rep;
}

// ---------------------------------------------------------------------------
// Random numbers

/// Reproducible random stream keyed by (seed, stream). The engine is the
/// standard-specified mt19937_64 seeded through std::seed_seq, and normal
/// draws use the Marsaglia polar method, so the sequence is identical on
/// every conforming platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                          0x676f7665u};
        engine_.seed(seq);
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    /// Independent child stream; used to hand one stream to each record or thread.
    Rng split(std::uint64_t child) const { return Rng(seed_ ^ (0x9e3779b97f4a7c15ull * (stream_ + 1)), child); }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t r;
        do r = engine_();
        while (r >= limit);
        return static_cast<std::size_t>(r % n);
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline Vector sample_standard_normal(Rng& rng, std::size_t n) {
    if (n == 0) throw ShapeMismatch("sample_standard_normal: n must be >= 1");
    Vector out(n);
    for (double& v : out) v = rng.normal();
    return out;
}

/// Fisher-Yates shuffle driven by Rng (std::shuffle is not portable).
template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng.index(i)]);
}

}  // namespace goved
