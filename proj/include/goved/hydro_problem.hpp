#pragma once

// Small hydraulic tomography problem on the unit square: heads from a
// steady-state Darcy equation with piecewise-constant conductivity, a
// thresholded Gaussian prior built from a truncated KL expansion, and the
// well-to-well measurement map.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "goved/dataset.hpp"
#include "goved/numerics.hpp"
#include "goved/parallel.hpp"

namespace goved {

// ---------------------------------------------------------------------------
// Grid

/// n x n nodes on [0, 1]^2 with spacing h = 1 / (n - 1). Node (i, j) sits at
/// (i h, j h). Left, right and bottom nodes are Dirichlet (head 0); the top
/// row is zero-flux and stays unknown. Unknowns are i = 1..n-2, j = 1..n-1,
/// numbered row by row from the bottom: k = (j - 1) (n - 2) + (i - 1).
struct Grid2D {
    std::size_t n = 33;

    Grid2D() = default;
    explicit Grid2D(std::size_t nodes) : n(nodes) {
        if (n < 4) throw std::invalid_argument("Grid2D: need at least 4 nodes per side");
    }

    double h() const { return 1.0 / static_cast<double>(n - 1); }
    std::size_t nx() const { return n - 2; }  // unknown columns
    std::size_t ny() const { return n - 1; }  // unknown rows, top row included
    std::size_t unknowns() const { return nx() * ny(); }
    std::size_t index(std::size_t i, std::size_t j) const { return (j - 1) * nx() + (i - 1); }
    bool is_unknown(std::size_t i, std::size_t j) const { return i >= 1 && i + 1 < n && j >= 1 && j < n; }
    std::array<double, 2> position(std::size_t k) const {
        return {static_cast<double>(k % nx() + 1) * h(), static_cast<double>(k / nx() + 1) * h()};
    }
    /// Unknown nearest to (x, y); throws when that node is on the Dirichlet boundary.
    std::size_t nearest(double x, double y) const {
        const auto i = static_cast<std::size_t>(std::llround(x / h()));
        const auto j = static_cast<std::size_t>(std::llround(y / h()));
        if (!is_unknown(i, j)) throw std::invalid_argument("Grid2D: point is on the Dirichlet boundary");
        return index(i, j);
    }
};

// ---------------------------------------------------------------------------
// KL basis of C = (eps^2 I + L)^-1

struct KlBasis {
    Vector g;                    // eigenvalues of C, descending
    std::vector<Vector> v;       // orthonormal grid fields
    Vector laplacian_values;     // matching eigenvalues of L
    double eps_cl = 10.0;

    std::size_t size() const { return g.size(); }
};

/// Tridiagonal 1-D Laplacian pieces of the grid Laplacian (scaled by 1/h^2):
/// Dirichlet-Dirichlet across x, Dirichlet bottom and zero-flux top along y.
inline Matrix laplacian_1d(std::size_t size, bool neumann_end, double h) {
    Matrix m(size, size);
    const double s = 1.0 / (h * h);
    for (std::size_t i = 0; i < size; ++i) {
        m(i, i) = 2.0 * s;
        if (i + 1 < size) m(i, i + 1) = m(i + 1, i) = -s;
    }
    if (neumann_end) m(size - 1, size - 1) = s;
    return m;
}

/// The grid Laplacian L with the PDE's boundary conditions, assembled densely.
inline Matrix grid_laplacian(const Grid2D& grid) {
    const Matrix lx = laplacian_1d(grid.nx(), false, grid.h());
    const Matrix ly = laplacian_1d(grid.ny(), true, grid.h());
    const std::size_t nu = grid.unknowns();
    Matrix l(nu, nu);
    for (std::size_t b = 0; b < grid.ny(); ++b)
        for (std::size_t a = 0; a < grid.nx(); ++a) {
            const std::size_t p = b * grid.nx() + a;
            for (std::size_t a2 = 0; a2 < grid.nx(); ++a2) l(p, b * grid.nx() + a2) += lx(a, a2);
            for (std::size_t b2 = 0; b2 < grid.ny(); ++b2) l(p, b2 * grid.nx() + a) += ly(b, b2);
        }
    return l;
}

/// L is a Kronecker sum, so its eigenpairs are sums of 1-D eigenvalues with
/// tensor-product eigenvectors. C shares them with g = 1 / (eps^2 + lambda).
inline KlBasis build_kl_basis(const Grid2D& grid, double eps_cl, std::size_t n_goal) {
    if (n_goal == 0 || n_goal > grid.unknowns()) throw std::invalid_argument("build_kl_basis: N_goal out of range");
    const SymEig ex = sym_eig(laplacian_1d(grid.nx(), false, grid.h()));
    const SymEig ey = sym_eig(laplacian_1d(grid.ny(), true, grid.h()));
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    pairs.reserve(grid.unknowns());
    for (std::size_t b = 0; b < grid.ny(); ++b)
        for (std::size_t a = 0; a < grid.nx(); ++a) pairs.emplace_back(ex.values[a] + ey.values[b], b, a);
    std::sort(pairs.begin(), pairs.end());

    KlBasis basis;
    basis.eps_cl = eps_cl;
    for (std::size_t k = 0; k < n_goal; ++k) {
        const auto [lambda, b, a] = pairs[k];
        basis.laplacian_values.push_back(lambda);
        basis.g.push_back(1.0 / (eps_cl * eps_cl + lambda));
        Vector v(grid.unknowns());
        for (std::size_t jb = 0; jb < grid.ny(); ++jb)
            for (std::size_t ia = 0; ia < grid.nx(); ++ia) v[jb * grid.nx() + ia] = ey.vectors(jb, b) * ex.vectors(ia, a);
        basis.v.push_back(std::move(v));
    }
    return basis;
}

/// V = sum_i x_i sqrt(g_i) v_i
inline Vector kl_expand(const KlBasis& basis, std::span<const double> x) {
    if (x.size() != basis.size()) throw ShapeMismatch("kl_expand: coefficient length does not match basis");
    Vector field(basis.v.front().size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) axpy(x[i] * std::sqrt(basis.g[i]), basis.v[i], field);
    return field;
}

/// a_plus where V >= 0 (H(0) = 1), a_minus elsewhere.
inline Vector conductivity_field(std::span<const double> v, double a_plus = 10.0, double a_minus = 1.0) {
    if (!(a_plus > 0.0) || !(a_minus > 0.0)) throw std::invalid_argument("conductivity_field: values must be positive");
    Vector y(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) y[i] = v[i] >= 0.0 ? a_plus : a_minus;
    return y;
}

// ---------------------------------------------------------------------------
// PDE

/// Cell-centred finite-volume stiffness for -div(y grad u) on the unknowns.
/// Faces between unknowns use the harmonic mean of the two conductivities,
/// faces to a Dirichlet node use the unknown's own value, and the top row
/// has no upward face.
class Stiffness {
public:
    Stiffness(const Grid2D& grid, std::span<const double> y) : grid_(grid), diag_(grid.unknowns(), 0.0),
                                                                east_(grid.unknowns(), 0.0), north_(grid.unknowns(), 0.0) {
        if (y.size() != grid.unknowns()) throw ShapeMismatch("Stiffness: conductivity length");
        for (double v : y)
            if (!(v > 0.0)) throw std::invalid_argument("Stiffness: conductivity must be positive");
        const std::size_t nx = grid.nx(), ny = grid.ny();
        auto harmonic = [](double a, double b) { return 2.0 * a * b / (a + b); };
        for (std::size_t b = 0; b < ny; ++b)
            for (std::size_t a = 0; a < nx; ++a) {
                const std::size_t p = b * nx + a;
                const double yp = y[p];
                // west and south neighbours
                diag_[p] += a == 0 ? yp : 0.0;
                diag_[p] += b == 0 ? yp : 0.0;
                if (a + 1 < nx) {
                    const double k = harmonic(yp, y[p + 1]);
                    east_[p] = -k;
                    diag_[p] += k;
                    diag_[p + 1] += k;
                } else {
                    diag_[p] += yp;
                }
                if (b + 1 < ny) {
                    const double k = harmonic(yp, y[p + nx]);
                    north_[p] = -k;
                    diag_[p] += k;
                    diag_[p + nx] += k;
                }
            }
    }

    std::size_t size() const { return diag_.size(); }
    std::size_t bandwidth() const { return grid_.nx(); }

    void apply(std::span<const double> u, std::span<double> out) const {
        const std::size_t nx = grid_.nx(), n = size();
        for (std::size_t p = 0; p < n; ++p) out[p] = diag_[p] * u[p];
        for (std::size_t p = 0; p < n; ++p) {
            if (east_[p] != 0.0) {
                out[p] += east_[p] * u[p + 1];
                out[p + 1] += east_[p] * u[p];
            }
            if (north_[p] != 0.0) {
                out[p] += north_[p] * u[p + nx];
                out[p + nx] += north_[p] * u[p];
            }
        }
    }

    /// Entry (i, j); zero outside the 5-point stencil.
    double entry(std::size_t i, std::size_t j) const {
        if (i == j) return diag_[i];
        const std::size_t lo = std::min(i, j), hi = std::max(i, j);
        if (hi == lo + 1) return east_[lo];
        if (hi == lo + grid_.nx()) return north_[lo];
        return 0.0;
    }

    Matrix dense() const {
        Matrix m(size(), size());
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t j = 0; j < size(); ++j) m(i, j) = entry(i, j);
        return m;
    }

    const Vector& diagonal() const { return diag_; }

private:
    Grid2D grid_;
    Vector diag_;
    Vector east_;   // coupling p <-> p + 1
    Vector north_;  // coupling p <-> p + nx
};

/// Head for a point source of rate q at unknown `source`, solved with
/// Jacobi-preconditioned CG to the configured relative residual. The
/// discrete equation is h^2 L_y u = q e_source, the FV form of
/// -div(y grad u) = q / h^2 at the source node.
inline Vector pde_solve(const Grid2D& grid, std::span<const double> y, std::size_t source, double q,
                        CgReport* report = nullptr) {
    if (source >= grid.unknowns()) throw std::out_of_range("pde_solve: source index");
    const Stiffness a(grid, y);
    Vector rhs(a.size(), 0.0), u(a.size(), 0.0);
    rhs[source] = q;
    Vector inv_diag(a.size());
    for (std::size_t i = 0; i < inv_diag.size(); ++i) inv_diag[i] = 1.0 / a.diagonal()[i];
    const CgReport rep = conjugate_gradient([&](std::span<const double> in, std::span<double> out) { a.apply(in, out); },
                                            rhs, u, tolerances().cg_relative, static_cast<int>(10 * a.size()), inv_diag);
    if (report) *report = rep;
    if (!rep.converged) throw NoConvergence("pde_solve: CG did not reach the residual tolerance");
    return u;
}

// ---------------------------------------------------------------------------
// Wells and measurements

struct WellLayout {
    std::vector<std::array<double, 2>> coords;
    Vector rates;
    std::vector<std::size_t> nodes;

    std::size_t size() const { return coords.size(); }
    std::size_t measurement_count() const { return size() * (size() - 1); }

    /// Position of "head at well j while injecting at well i" in b; j != i.
    std::size_t measurement_index(std::size_t i, std::size_t j) const {
        if (i == j) throw std::invalid_argument("WellLayout: no measurement at the injecting well");
        return i * (size() - 1) + (j < i ? j : j - 1);
    }
};

/// A cols x rows lattice at (i / (cols + 1), j / (rows + 1)), unit rates.
inline WellLayout make_well_layout(const Grid2D& grid, std::size_t cols = 4, std::size_t rows = 5) {
    WellLayout w;
    for (std::size_t i = 1; i <= cols; ++i)
        for (std::size_t j = 1; j <= rows; ++j) {
            const double x = static_cast<double>(i) / static_cast<double>(cols + 1);
            const double y = static_cast<double>(j) / static_cast<double>(rows + 1);
            w.coords.push_back({x, y});
            w.rates.push_back(1.0);
            w.nodes.push_back(grid.nearest(x, y));
        }
    std::vector<std::size_t> sorted = w.nodes;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw std::invalid_argument("make_well_layout: two wells share a grid node");
    return w;
}

/// Everything needed to map KL coefficients to measurements.
struct HydroModel {
    Grid2D grid;
    WellLayout wells;
    KlBasis basis;
    double a_plus = 10.0;
    double a_minus = 1.0;
    double noise_percent = 1.0;
};

struct HydroSpec {
    std::size_t nodes = 33;
    std::size_t n_goal = 16;
    double eps_cl = 10.0;
    std::size_t well_cols = 4;
    std::size_t well_rows = 5;
    double a_plus = 10.0;
    double a_minus = 1.0;
    double noise_percent = 1.0;
};

inline HydroModel make_hydro_model(const HydroSpec& s = {}) {
    HydroModel m;
    m.grid = Grid2D(s.nodes);
    m.wells = make_well_layout(m.grid, s.well_cols, s.well_rows);
    m.basis = build_kl_basis(m.grid, s.eps_cl, s.n_goal);
    m.a_plus = s.a_plus;
    m.a_minus = s.a_minus;
    m.noise_percent = s.noise_percent;
    return m;
}

/// Noise-free heads: for each injecting well i, the head at every other well.
/// The stiffness matrix is factored once (banded Cholesky) and reused for all
/// injections.
inline Vector hydro_forward_clean(const Grid2D& grid, const WellLayout& wells, std::span<const double> y) {
    const Stiffness a(grid, y);
    const BandedCholesky f(a.size(), a.bandwidth(), [&](std::size_t i, std::size_t j) { return a.entry(i, j); });
    Vector b(wells.measurement_count());
    Vector u(a.size());
    for (std::size_t i = 0; i < wells.size(); ++i) {
        std::fill(u.begin(), u.end(), 0.0);
        u[wells.nodes[i]] = wells.rates[i];
        f.solve_in_place(u);
        for (std::size_t j = 0; j < wells.size(); ++j)
            if (j != i) b[wells.measurement_index(i, j)] = u[wells.nodes[j]];
    }
    return b;
}

/// sigma_n = ||b_clean||_2 * percent / 100.
inline double hydro_noise_sigma(std::span<const double> clean, double percent = 1.0) { return norm2(clean) * percent / 100.0; }

struct HydroMeasurement {
    Vector b;
    Vector clean;
    double sigma_n = 0.0;
};

/// Measurements for conductivity y; adds N(0, sigma_n^2 I) when `rng` is given.
inline HydroMeasurement hydro_forward(const HydroModel& m, std::span<const double> y, Rng* rng = nullptr) {
    HydroMeasurement out;
    out.clean = hydro_forward_clean(m.grid, m.wells, y);
    out.sigma_n = hydro_noise_sigma(out.clean, m.noise_percent);
    out.b = out.clean;
    if (rng)
        for (double& v : out.b) v += out.sigma_n * rng->normal();
    return out;
}

/// KL coefficients to conductivity.
inline Vector hydro_conductivity(const HydroModel& m, std::span<const double> x) {
    return conductivity_field(kl_expand(m.basis, x), m.a_plus, m.a_minus);
}

/// Record k draws x ~ N(0, I) and the noise from Rng(seed, k).
inline Dataset gen_hydro_dataset(std::size_t J, const HydroModel& m, std::uint64_t seed, unsigned workers = 0) {
    if (J == 0) throw std::invalid_argument("gen_hydro_dataset: J must be >= 1");
    std::vector<Record> records(J);
    parallel_for(
        J,
        [&](std::size_t k) {
            Rng rng(seed, k);
            Vector x = sample_standard_normal(rng, m.basis.size());
            HydroMeasurement meas = hydro_forward(m, hydro_conductivity(m, x), &rng);
            records[k] = Record{std::move(meas.b), std::move(x), k, meas.sigma_n};
        },
        workers == 0 ? worker_count() : workers);
    Dataset d;
    d.problem_id = "hydro";
    d.m = m.wells.measurement_count();
    d.q = m.basis.size();
    d.seed = seed;
    d.noise_range = {m.noise_percent, m.noise_percent};
    d.meta = {{"nodes", m.grid.n},
              {"n_goal", m.basis.size()},
              {"eps_cl", m.basis.eps_cl},
              {"wells", m.wells.size()},
              {"a_plus", m.a_plus},
              {"a_minus", m.a_minus},
              {"noise_percent", m.noise_percent},
              {"noise_level_field", "sigma_n"}};
    for (auto& r : records) d.add(std::move(r));
    return d;
}

/// Out-of-prior conductivity: a_plus inside the union of the disks centred at
/// (0.3, 0.65) radius 0.15 and (0.25, 0.65) radius 0.25, a_minus outside.
inline Vector disks_test_case(const Grid2D& grid, double a_plus = 10.0, double a_minus = 1.0) {
    Vector y(grid.unknowns());
    for (std::size_t k = 0; k < y.size(); ++k) {
        const auto [x, z] = grid.position(k);
        const bool in1 = (x - 0.3) * (x - 0.3) + (z - 0.65) * (z - 0.65) <= 0.15 * 0.15;
        const bool in2 = (x - 0.25) * (x - 0.25) + (z - 0.65) * (z - 0.65) <= 0.25 * 0.25;
        y[k] = in1 || in2 ? a_plus : a_minus;
    }
    return y;
}

/// Full n x n node field (boundary nodes filled with `boundary`), row 0 at y = 0.
inline Vector to_full_grid(const Grid2D& grid, std::span<const double> field, double boundary = 0.0) {
    if (field.size() != grid.unknowns()) throw ShapeMismatch("to_full_grid: field length");
    Vector out(grid.n * grid.n, boundary);
    for (std::size_t j = 1; j < grid.n; ++j)
        for (std::size_t i = 1; i + 1 < grid.n; ++i) out[j * grid.n + i] = field[grid.index(i, j)];
    return out;
}

}  // namespace goved
