#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "goved/ct_problem.hpp"

using namespace goved;

namespace {

CtGeometry small_geometry() {
    CtGeometry g;
    g.n_pix = 8;
    g.n_angles = 16;
    g.n_detectors = 12;
    return g;
}

Vector disk_image(std::size_t n, double cx, double cy, double r) {
    Vector img(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double x = j + 0.5, y = i + 0.5;
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) img[i * n + j] = 1.0;
        }
    return img;
}

double sq_error(const Vector& a, const Vector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace

TEST(Radon, ShapesAndGeometryDefaults) {
    const RadonOperator op(CtGeometry{});
    EXPECT_EQ(op.image_size(), 1024u);
    EXPECT_EQ(op.ray_count(), 48u * 45u);
    EXPECT_NEAR(op.detector_spacing() * 45, 32 * std::numbers::sqrt2, 1e-12);
    EXPECT_THROW(op.apply(Vector(10)), ShapeMismatch);
    EXPECT_THROW(op.adjoint(Vector(10)), ShapeMismatch);
}

TEST(Radon, ZeroImageGivesZeroSinogram) {
    const RadonOperator op(CtGeometry{});
    for (double v : op.apply(Vector(op.image_size(), 0.0))) EXPECT_EQ(v, 0.0);
}

TEST(Radon, EveryProjectionConservesMass) {
    const RadonOperator op(CtGeometry{});
    const Vector img = disk_image(32, 16.0, 14.0, 9.0);
    double mass = 0.0;
    for (double v : img) mass += v;
    const Vector s = op.apply(img);
    for (std::size_t k = 0; k < op.angles().size(); ++k) {
        double proj = 0.0;
        for (std::size_t d = 0; d < op.detectors(); ++d) proj += s[k * op.detectors() + d];
        EXPECT_NEAR(proj * op.detector_spacing(), mass, 1e-6);
    }
}

TEST(Radon, PixelSizeScalesLinearly) {
    CtGeometry g = small_geometry();
    const RadonOperator a(g);
    g.pixel_size = 2.5;
    const RadonOperator b(g);
    Rng rng(3);
    const Vector img = sample_standard_normal(rng, a.image_size());
    const Vector sa = a.apply(img), sb = b.apply(img);
    for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_NEAR(sb[i], 2.5 * sa[i], 1e-12);
}

TEST(Radon, AdjointIdentityOnRandomPairs) {
    const RadonOperator op(CtGeometry{});
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        const Vector y = sample_standard_normal(rng, op.image_size());
        const Vector z = sample_standard_normal(rng, op.ray_count());
        const double lhs = dot(op.apply(y), z), rhs = dot(y, op.adjoint(z));
        EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
    }
}

TEST(Radon, AxisAlignedProjectionOfSinglePixel) {
    // At theta = 0 a unit pixel projects onto a box of width 1 along x.
    CtGeometry g = small_geometry();
    const RadonOperator op(g, {0.0});
    Vector img(64, 0.0);
    img[3 * 8 + 2] = 1.0;
    const Vector s = op.apply(img);
    const double dt = op.detector_spacing();
    const double t0 = -0.5 * 8 * std::numbers::sqrt2;
    const double lo = 2.0 - 4.0, hi = lo + 1.0;
    for (std::size_t d = 0; d < op.detectors(); ++d) {
        const double a = t0 + d * dt, b = a + dt;
        const double overlap = std::max(0.0, std::min(b, hi) - std::max(a, lo));
        EXPECT_NEAR(s[d], overlap / dt, 1e-12);
    }
}

TEST(Radon, NormalMatrixMatchesOperator) {
    const RadonOperator op(small_geometry());
    const Matrix ata = op.normal_matrix();
    Rng rng(9);
    const Vector y = sample_standard_normal(rng, op.image_size());
    const Vector want = op.adjoint(op.apply(y)), got = ata * y;
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-10);
}

TEST(Noise, ZeroLevelReturnsCleanExactly) {
    Rng rng(1);
    const Vector clean = sample_standard_normal(rng, 50);
    EXPECT_EQ(add_noise_level(clean, 0.0, rng), clean);
}

TEST(Noise, RelativeNormMatchesLevel) {
    for (std::uint64_t seed : {11u, 12u}) {
        Rng rng(seed);
        const Vector clean = sample_standard_normal(rng, 300);
        for (double r : {0.1, 1.0, 5.0}) {
            const Vector b = add_noise_level(clean, r, rng);
            EXPECT_NEAR(std::sqrt(sq_error(b, clean)) / norm2(clean), r / 100.0, 1e-12);
        }
    }
}

TEST(Noise, ZeroSignalIsRejected) {
    Rng rng(2);
    EXPECT_THROW(add_noise_level(Vector(10, 0.0), 1.0, rng), ZeroSignal);
    EXPECT_THROW(add_noise_level(Vector(10, 1.0), -1.0, rng), std::invalid_argument);
}

TEST(Phantom, NoJitterIsTheStandardPhantom) {
    Rng rng(4);
    const Phantom p = gen_phantom(rng, 32, PhantomJitter{0.0, 0.0, 0.0, 0.0});
    EXPECT_EQ(p.values, rasterize_ellipses(shepp_logan_ellipses(), 32));
    // Outer skull ring at full intensity, background zero.
    EXPECT_EQ(p.values[0], 0.0);
    EXPECT_NEAR(p.values[1 * 32 + 16], 1.0, 1e-12);
}

TEST(Phantom, SkullShellSurvivesExtremeJitter) {
    // Brain tissue stays at a positive intensity inside the shell for every draw.
    for (std::uint64_t k = 0; k < 3000; ++k) {
        Rng rng(1, k);
        const Phantom p = gen_phantom(rng, 32, PhantomJitter{0.05, 0.1, 0.2, 0.25});
        double mass = 0.0;
        for (double v : p.values) mass += v;
        ASSERT_GT(mass, 50.0) << "stream " << k;
        EXPECT_GT(p.ellipses[0].intensity + p.ellipses[1].intensity, 0.0);
        EXPECT_GT(p.ellipses[0].a, p.ellipses[1].a);
        EXPECT_GT(p.ellipses[0].b, p.ellipses[1].b);
    }
}

TEST(Phantom, ValuesInUnitIntervalAndSeedsDiffer) {
    Rng a(1, 0), b(1, 1);
    const Phantom pa = gen_phantom(a, 32), pb = gen_phantom(b, 32);
    for (double v : pa.values) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_NE(pa.values, pb.values);
    Rng a2(1, 0);
    EXPECT_EQ(gen_phantom(a2, 32).values, pa.values);
    EXPECT_EQ(pa.stream, 0u);
    Rng tiny(1);
    EXPECT_THROW(gen_phantom(tiny, 4), std::invalid_argument);
}

TEST(TvGradient, AdjointAndNorm) {
    const std::size_t n = 6;
    Rng rng(8);
    const Vector y = sample_standard_normal(rng, n * n);
    const Vector w = sample_standard_normal(rng, tv_difference_count(n));
    Vector dy(w.size()), dtw(y.size());
    tv_gradient(y, n, dy);
    tv_gradient_adjoint(w, n, dtw);
    EXPECT_NEAR(dot(dy, w), dot(y, dtw), 1e-12);
    EXPECT_EQ(tv_norm(Vector(n * n, 3.0), n), 0.0);

    Vector step(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = n / 2; j < n; ++j) step[i * n + j] = 1.0;
    EXPECT_DOUBLE_EQ(tv_norm(step, n), static_cast<double>(n));
}

TEST(TvAdmm, LargeParameterGivesConstantImage) {
    const RadonOperator op(small_geometry());
    Rng rng(3);
    const Phantom p = gen_phantom(rng, 8);
    const Vector b = op.apply(p.values);
    const TvSolveReport rep = tv_admm_solve(op, b, 1e6);
    EXPECT_LT(tv_norm(rep.y, 8), 1e-3);
}

TEST(TvAdmm, TinyParameterMatchesLeastSquares) {
    const RadonOperator op(small_geometry());
    Rng rng(6);
    const Vector truth = sample_standard_normal(rng, op.image_size());
    const Vector b = add_noise_level(op.apply(truth), 2.0, rng);
    const Vector ls = solve_spd(op.normal_matrix(), op.adjoint(b));
    TvConfig cfg;
    cfg.abs_tol = 1e-9;
    cfg.rel_tol = 1e-9;
    cfg.max_iterations = 5000;
    const TvSolveReport rep = tv_admm_solve(op, b, 1e-8, cfg);
    for (std::size_t i = 0; i < ls.size(); ++i) EXPECT_NEAR(rep.y[i], ls[i], 1e-3);
}

TEST(TvAdmm, ObjectiveBeatsSimpleCandidates) {
    const RadonOperator op(CtGeometry{});
    Rng rng(10);
    const Phantom p = gen_phantom(rng, 32);
    const Vector b = add_noise_level(op.apply(p.values), 2.0, rng);
    for (double x : {0.01, 0.3, 3.0}) {
        const TvSolveReport rep = tv_admm_solve(op, b, x);
        const double f = tv_objective(op, b, rep.y, x);
        EXPECT_LE(f, tv_objective(op, b, Vector(op.image_size(), 0.0), x));
        EXPECT_LE(f, tv_objective(op, b, op.adjoint(b), x));
        EXPECT_LE(f, tv_objective(op, b, p.values, x) * (1 + 1e-3));
    }
}

TEST(TvAdmm, TotalVariationDecreasesWithParameter) {
    const RadonOperator op(CtGeometry{});
    Rng rng(12);
    const Phantom p = gen_phantom(rng, 32);
    const Vector b = add_noise_level(op.apply(p.values), 3.0, rng);
    double prev = std::numeric_limits<double>::infinity();
    for (double x : {0.01, 0.1, 1.0}) {
        const double tv = tv_norm(tv_admm_solve(op, b, x).y, 32);
        EXPECT_LT(tv, prev);
        prev = tv;
    }
}

TEST(TvAdmm, RejectsBadInput) {
    const RadonOperator op(small_geometry());
    EXPECT_THROW(tv_admm_solve(op, Vector(3), 1.0), ShapeMismatch);
    EXPECT_THROW(tv_admm_solve(op, Vector(op.ray_count()), -1.0), std::invalid_argument);
}

TEST(Bilevel, ReturnsTheBestEvaluatedParameter) {
    const RadonOperator op(CtGeometry{});
    Rng rng(21);
    const Phantom p = gen_phantom(rng, 32);
    const Vector b = add_noise_level(op.apply(p.values), 5.0, rng);
    const BilevelResult r = bilevel_oracle(op, b, p.values);
    ASSERT_EQ(r.xs.size(), r.errors.size());
    ASSERT_GE(r.xs.size(), 13u);
    EXPECT_TRUE(std::is_sorted(r.xs.begin(), r.xs.end()));
    for (double e : r.errors) EXPECT_GE(e, r.error);
    EXPECT_GE(r.x_hat, 1e-3);
    EXPECT_LE(r.x_hat, 10.0);
    // Error at the chosen parameter is no worse than either end of the range.
    EXPECT_LE(r.error, r.errors.front());
    EXPECT_LE(r.error, r.errors.back());
    EXPECT_EQ(r.unconverged, 0);
}

TEST(Bilevel, NoiseFreeDataPicksTheWeakestRegularization) {
    const RadonOperator op(small_geometry());
    Rng rng(22);
    const Phantom p = gen_phantom(rng, 8);
    const Vector b = op.apply(p.values);
    TvConfig tv;
    tv.abs_tol = 1e-8;
    tv.rel_tol = 1e-8;
    tv.max_iterations = 5000;
    const BilevelResult r = bilevel_oracle(op, b, p.values, {}, tv);
    EXPECT_NEAR(std::log10(r.x_hat), -3.0, 1e-9);
}

TEST(CtDataset, SmallRunIsDeterministicAndRoundTrips) {
    CtDatasetConfig cfg;
    const Dataset a = gen_ct_dataset(2, cfg, 77, 1), b = gen_ct_dataset(2, cfg, 77, 2);
    ASSERT_EQ(a.size(), 2u);
    EXPECT_EQ(a.m, 48u * 45u);
    EXPECT_EQ(a.q, 1u);
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_EQ(a.records[k].b, b.records[k].b);
        EXPECT_EQ(a.records[k].x, b.records[k].x);
        EXPECT_EQ(a.records[k].stream, k);
        EXPECT_GE(a.records[k].noise_level, 0.1);
        EXPECT_LE(a.records[k].noise_level, 5.0);
        EXPECT_GT(a.records[k].x[0], 0.0);
    }
    const auto path = std::filesystem::temp_directory_path() / "goved_ct_roundtrip.bin";
    save_dataset(path.string(), a);
    const Dataset c = load_dataset(path.string());
    std::filesystem::remove(path);
    EXPECT_EQ(c.problem_id, "ct");
    ASSERT_EQ(c.size(), 2u);
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_EQ(c.records[k].b, a.records[k].b);
        EXPECT_EQ(c.records[k].x, a.records[k].x);
        EXPECT_EQ(c.records[k].noise_level, a.records[k].noise_level);
    }
}

TEST(CtCsv, GridDumpHasHeaderAndRows) {
    const auto path = std::filesystem::temp_directory_path() / "goved_grid.csv";
    write_grid_csv(path.string(), Vector{1, 2, 3, 4, 5, 6}, 2, 3);
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "row,c0,c1,c2");
    std::getline(is, line);
    EXPECT_EQ(line, "0,1,2,3");
    std::filesystem::remove(path);
    EXPECT_THROW(write_grid_csv(path.string(), Vector{1, 2}, 2, 3), ShapeMismatch);
}
