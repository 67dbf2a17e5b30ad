#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "goved/cli.hpp"

using namespace goved;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("goved_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

nlohmann::json config(const fs::path& dir, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json over = {{"output_dir", dir.string()}, {"J", 60}, {"steps", 20}, {"minibatch", 16}, {"lr_initial", 1e-3},
                           {"lr_final", 1e-4}, {"latent_dim", 4}, {"encoder_hidden", {16}}, {"decoder_hidden", {16}}};
    over.update(extra);
    return cli::merge_config(nlohmann::json::object(), over);
}

VedModel small_model(std::uint64_t seed, LossMode loss) {
    VedArchitecture a;
    a.encoder_hidden = {8, 6};
    a.decoder_hidden = {5};
    a.latent_dim = 3;
    a.activation = Activation::tanh;
    a.loss = loss;
    Rng rng(seed);
    return make_ved(7, 2, a, rng);
}

}  // namespace

TEST(Checkpoint, RoundTripPreservesOutputs) {
    const fs::path dir = scratch("ckpt");
    for (LossMode mode : {LossMode::fixed(0.05), LossMode::heteroscedastic()}) {
        VedModel m = small_model(3, mode);
        m.step = 123;
        m.input.shift = Vector(7, 0.5);
        m.input.scale = Vector(7, 2.0);
        save_ved(dir / "m.ved", m);
        const VedModel r = load_ved(dir / "m.ved");
        EXPECT_EQ(r.step, 123u);
        EXPECT_EQ(r.loss.name(), mode.name());
        EXPECT_EQ(r.latent_dim, 3u);
        const Vector b{0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7};
        const auto e1 = encode(m, b), e2 = encode(r, b);
        for (std::size_t i = 0; i < e1.mean.size(); ++i) {
            EXPECT_EQ(e1.mean[i], e2.mean[i]);
            EXPECT_EQ(e1.stddev[i], e2.stddev[i]);
        }
        const auto d1 = decode(m, e1.mean), d2 = decode(r, e1.mean);
        for (std::size_t i = 0; i < d1.mean.size(); ++i) EXPECT_EQ(d1.mean[i], d2.mean[i]);
    }
}

TEST(Checkpoint, RoundTripKeepsInputFeatures) {
    const fs::path dir = scratch("ckpt_features");
    VedArchitecture a;
    a.encoder_hidden = {5};
    a.decoder_hidden = {4};
    a.latent_dim = 2;
    a.features = InputFeatures::with_magnitude;
    Rng rng(8);
    VedModel m = make_ved(3, 1, a, rng);
    m.input.shift = Vector(6, 0.25);
    m.input.scale = Vector(6, 1.5);
    save_ved(dir / "m.ved", m);
    const VedModel r = load_ved(dir / "m.ved");
    EXPECT_EQ(r.features, InputFeatures::with_magnitude);
    EXPECT_EQ(r.observation_size(), 3u);
    const Vector b{0.3, -0.7, 1.1};
    const auto e1 = encode(m, b), e2 = encode(r, b);
    for (std::size_t i = 0; i < e1.mean.size(); ++i) EXPECT_EQ(e1.mean[i], e2.mean[i]);
}

TEST(Checkpoint, SidecarDescribesModel) {
    const VedModel m = small_model(4, LossMode::fixed(0.2));
    const auto s = ved_sidecar(m);
    EXPECT_EQ(s.at("format"), "goved-checkpoint");
    EXPECT_EQ(s.at("loss_mode"), "fixed_eta");
    EXPECT_DOUBLE_EQ(s.at("eta").get<double>(), 0.2);
    EXPECT_EQ(s.at("latent_dim"), 3);
}

TEST(Checkpoint, SidecarStepMismatchRejected) {
    const fs::path dir = scratch("ckpt_bad");
    VedModel m = small_model(5, LossMode::fixed(0.1));
    save_ved(dir / "m.ved", m);
    auto s = read_json(sidecar_path(dir / "m.ved"));
    s["step"] = 99;
    write_json(sidecar_path(dir / "m.ved"), s);
    EXPECT_THROW(load_ved(dir / "m.ved"), std::runtime_error);
}

TEST(ConfigHash, ChangesIffConfigChanges) {
    const auto a = cli::default_config();
    auto b = a;
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
    b["seed"] = 2;
    EXPECT_NE(config_hash(a), config_hash(b));
    b["seed"] = a["seed"];
    EXPECT_EQ(config_hash(a), config_hash(b));
}

TEST(Config, OverridesAndUnknownKeys) {
    const auto cfg = cli::merge_config({{"seed", 5}, {"eta", 0.3}}, {{"seed", 7}});
    EXPECT_EQ(cfg.at("seed"), 7);
    EXPECT_DOUBLE_EQ(cfg.at("eta").get<double>(), 0.3);
    EXPECT_THROW(cli::merge_config({{"no_such_key", 1}}, nullptr), cli::ConfigError);
    const auto [k, v] = cli::parse_override("encoder_hidden=[32,32]");
    EXPECT_EQ(k, "encoder_hidden");
    EXPECT_EQ(v.size(), 2u);
    EXPECT_EQ(cli::parse_override("problem=hydro").second, "hydro");
    EXPECT_THROW(cli::parse_override("novalue"), cli::ConfigError);
}

TEST(Files, AtomicWriteCreatesDirectoriesAndReplaces) {
    const fs::path dir = scratch("atomic");
    const fs::path p = dir / "a" / "b" / "f.txt";
    write_file_atomic(p, "one");
    write_file_atomic(p, "two");
    EXPECT_EQ(read_file(p), "two");
    for (const auto& e : fs::directory_iterator(p.parent_path())) EXPECT_EQ(e.path().filename(), "f.txt");
}

TEST(Csv, SamplesRoundTrip) {
    Matrix s(3, 2);
    s(0, 0) = 0.1; s(0, 1) = -1e-17;
    s(1, 0) = 3.0; s(1, 1) = 1e300;
    s(2, 0) = -2.5; s(2, 1) = 0.0;
    std::stringstream ss;
    write_samples_csv(ss, s);
    std::string header;
    std::getline(std::istringstream(ss.str()), header);
    EXPECT_EQ(header, "sample_index,x_1,x_2");
    const Matrix r = read_samples_csv(ss);
    ASSERT_EQ(r.rows(), 3u);
    ASSERT_EQ(r.cols(), 2u);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(r(i, j), s(i, j));
}

TEST(Compare, SelfComparisonIsPerfect) {
    MethodSummary a{{1.0, 2.0, -1.0}, {0.0, 1.0, -2.0}, {2.0, 3.0, 0.0}, 2.0, 100};
    const auto r = compare_report(a, a);
    EXPECT_DOUBLE_EQ(r.at("pearson_correlation").get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(r.at("max_abs_mean_difference").get<double>(), 0.0);
    EXPECT_DOUBLE_EQ(r.at("interval_overlap_fraction").get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(r.at("speedup").get<double>(), 1.0);
}

TEST(Compare, CoordinateMismatchThrows) {
    MethodSummary a{{1.0, 2.0}, {0.0, 1.0}, {2.0, 3.0}, 1.0, 10};
    MethodSummary b{{1.0}, {0.0}, {2.0}, 1.0, 10};
    EXPECT_THROW(compare_report(a, b), ShapeMismatch);
}

TEST(Compare, PearsonKnownValues) {
    const Vector x{1, 2, 3, 4};
    EXPECT_NEAR(pearson_correlation(x, Vector{2, 4, 6, 8}), 1.0, 1e-15);
    EXPECT_NEAR(pearson_correlation(x, Vector{4, 3, 2, 1}), -1.0, 1e-15);
    // centered (-1.5,-.5,.5,1.5) vs (1,-1,-1,1): zero covariance
    EXPECT_NEAR(pearson_correlation(x, Vector{1, -1, -1, 1}), 0.0, 1e-15);
}

TEST(Commands, GenDataIsByteIdentical) {
    const fs::path d1 = scratch("gen1"), d2 = scratch("gen2");
    ASSERT_EQ(cli::run("gen-data", config(d1)), cli::kOk);
    ASSERT_EQ(cli::run("gen-data", config(d2, {{"workers", 3}})), cli::kOk);
    EXPECT_EQ(read_file(d1 / "dataset.bin"), read_file(d2 / "dataset.bin"));
    const auto man = read_json(d1 / "manifest_gen-data.json");
    EXPECT_EQ(man.at("records"), 60);
    EXPECT_EQ(man.at("config_hash"), config_hash(config(d1)));
    ASSERT_EQ(cli::run("gen-data", config(d2, {{"seed", 9}})), cli::kOk);
    EXPECT_NE(read_file(d1 / "dataset.bin"), read_file(d2 / "dataset.bin"));
}

TEST(Commands, TrainZeroStepsKeepsInitialization) {
    const fs::path dir = scratch("train0");
    ASSERT_EQ(cli::run("gen-data", config(dir)), cli::kOk);
    ASSERT_EQ(cli::run("train", config(dir, {{"steps", 0}, {"checkpoint", (dir / "a.ved").string()}})), cli::kOk);
    ASSERT_EQ(cli::run("train", config(dir, {{"steps", 0}, {"checkpoint", (dir / "b.ved").string()}})), cli::kOk);
    EXPECT_EQ(read_file(dir / "a.ved"), read_file(dir / "b.ved"));
    EXPECT_EQ(load_ved(dir / "a.ved").step, 0u);
    ASSERT_EQ(cli::run("train", config(dir, {{"checkpoint", (dir / "c.ved").string()}})), cli::kOk);
    EXPECT_NE(read_file(dir / "a.ved"), read_file(dir / "c.ved"));
}

TEST(Commands, ResumeContinuesStepCounter) {
    const fs::path dir = scratch("resume");
    ASSERT_EQ(cli::run("gen-data", config(dir)), cli::kOk);
    ASSERT_EQ(cli::run("train", config(dir)), cli::kOk);
    EXPECT_EQ(load_ved(dir / "model.ved").step, 20u);
    ASSERT_EQ(cli::run("train", config(dir, {{"steps", 15}, {"resume", true}})), cli::kOk);
    EXPECT_EQ(load_ved(dir / "model.ved").step, 35u);
    std::ifstream loss(dir / "loss.csv");
    std::string line;
    std::getline(loss, line);
    EXPECT_EQ(line, "step,loss");
    std::getline(loss, line);
    EXPECT_EQ(line.substr(0, 3), "21,");
}

TEST(Commands, ResumeWithoutCheckpointIsConfigError) {
    const fs::path dir = scratch("resume_missing");
    ASSERT_EQ(cli::run("gen-data", config(dir)), cli::kOk);
    std::ostringstream err;
    EXPECT_EQ(cli::run("train", config(dir, {{"resume", true}}), err), cli::kConfigError);
}

TEST(Commands, SampleWritesRequestedCountAndMoments) {
    const fs::path dir = scratch("sample");
    ASSERT_EQ(cli::run("gen-data", config(dir)), cli::kOk);
    ASSERT_EQ(cli::run("train", config(dir)), cli::kOk);
    ASSERT_EQ(cli::run("sample", config(dir, {{"observation_index", 3}})), cli::kOk);
    std::ifstream is(dir / "samples.csv");
    const Matrix s = read_samples_csv(is);
    ASSERT_EQ(s.rows(), 1000u);
    ASSERT_EQ(s.cols(), 2u);
    const auto mo = read_json(dir / "moments.json");
    for (std::size_t j = 0; j < 2; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < s.rows(); ++i) mean += s(i, j);
        mean /= static_cast<double>(s.rows());
        EXPECT_NEAR(mo.at("mean")[j].get<double>(), mean, 1e-12);
        EXPECT_LE(mo.at("lower")[j].get<double>(), mean);
        EXPECT_GE(mo.at("upper")[j].get<double>(), mean);
    }
    EXPECT_EQ(read_json(dir / "observation.json").at("id"), "lingauss:record3");
}

TEST(Commands, SampleRejectsWrongObservationLength) {
    const fs::path dir = scratch("sample_shape");
    ASSERT_EQ(cli::run("gen-data", config(dir)), cli::kOk);
    ASSERT_EQ(cli::run("train", config(dir)), cli::kOk);
    write_json(dir / "obs.json", {{"b", Vector(5, 0.0)}});
    std::ostringstream err;
    EXPECT_EQ(cli::run("sample", config(dir, {{"observation", "file"}, {"observation_file", (dir / "obs.json").string()}}), err),
              cli::kShapeError);
}

TEST(Commands, McmcChainLengthAndDiagnose) {
    const fs::path dir = scratch("mcmc");
    const auto cfg = config(dir, {{"problem", "hydro"}, {"scenario", "disks"}, {"mcmc_steps", 300}, {"acf_max_lag", 20}});
    ASSERT_EQ(cli::run("mcmc", cfg), cli::kOk);
    std::ifstream is(dir / "chain.csv");
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header.substr(0, 9), "step,x_1,");
    EXPECT_EQ(header.substr(header.size() - 9), ",accepted");
    std::size_t rows = 0;
    for (std::string line; std::getline(is, line);) ++rows;
    EXPECT_EQ(rows, 300u);
    const auto d = read_json(dir / "diagnostics.json");
    EXPECT_EQ(d.at("steps"), 300);
    EXPECT_EQ(d.at("mean").size(), 16u);
    ASSERT_EQ(cli::run("diagnose", cfg), cli::kOk);
    const auto dd = read_json(dir / "diagnose.json");
    for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(dd.at("mean")[j].get<double>(), d.at("mean")[j].get<double>(), 1e-12);
}

TEST(Commands, McmcRejectsOtherProblems) {
    std::ostringstream err;
    EXPECT_EQ(cli::run("mcmc", config(scratch("mcmc_lg")), err), cli::kConfigError);
}

TEST(Commands, CompareExitCodes) {
    const fs::path dir = scratch("compare");
    write_json(dir / "a" / "moments.json", {{"mean", {1.0, 2.0}}, {"lower", {0.0, 1.0}}, {"upper", {2.0, 3.0}}, {"seconds", 1.0}, {"samples", 10}});
    write_json(dir / "b" / "diagnostics.json", {{"mean", {1.0}}, {"lower", {0.0}}, {"upper", {2.0}}, {"seconds", 1.0}, {"samples", 10}});
    std::ostringstream err;
    EXPECT_EQ(cli::run("compare", config(dir, {{"ved_dir", (dir / "a").string()}, {"mcmc_dir", (dir / "b").string()}}), err),
              cli::kCoordinateMismatch);
    EXPECT_EQ(cli::run("compare", config(dir, {{"ved_dir", (dir / "a").string()}, {"mcmc_dir", (dir / "a").string()}})), cli::kOk);
    EXPECT_DOUBLE_EQ(read_json(dir / "compare.json").at("pearson_correlation").get<double>(), 1.0);
}

TEST(Commands, UnknownProblemAndCommand) {
    std::ostringstream err;
    EXPECT_EQ(cli::run("gen-data", config(scratch("bad"), {{"problem", "weather"}}), err), cli::kConfigError);
    EXPECT_EQ(cli::run("fly", config(scratch("bad2")), err), cli::kConfigError);
}

TEST(Commands, TrainingLowersValidationLoss) {
    const fs::path dir = scratch("train_val");
    const auto cfg = config(dir, {{"J", 400}, {"steps", 400}, {"lr_initial", 3e-3}, {"activation", "tanh"}});
    ASSERT_EQ(cli::run("gen-data", cfg), cli::kOk);
    ASSERT_EQ(cli::run("train", cfg), cli::kOk);
    const auto man = read_json(dir / "manifest_train.json");
    EXPECT_EQ(man.at("validation_records"), 40);
    EXPECT_LT(man.at("validation_loss_last").get<double>(), man.at("validation_loss_first").get<double>());
}

TEST(Commands, SampleAndMcmcAreDeterministicPerSeed) {
    const fs::path dir = scratch("determinism");
    ASSERT_EQ(cli::run("gen-data", config(dir)), cli::kOk);
    ASSERT_EQ(cli::run("train", config(dir)), cli::kOk);
    auto samples = [&](const std::string& sub, int seed) {
        const fs::path out = dir / sub;
        EXPECT_EQ(cli::run("sample", config(out, {{"dataset", (dir / "dataset.bin").string()},
                                                  {"checkpoint", (dir / "model.ved").string()},
                                                  {"seed", seed}})),
                  cli::kOk);
        return read_file(out / "samples.csv");
    };
    EXPECT_EQ(samples("s1", 4), samples("s2", 4));
    EXPECT_NE(samples("s1", 4), samples("s3", 5));

    auto chain = [&](const std::string& sub) {
        const fs::path out = dir / sub;
        EXPECT_EQ(cli::run("mcmc", config(out, {{"problem", "hydro"}, {"scenario", "disks"}, {"mcmc_steps", 120}, {"acf_max_lag", 10}})),
                  cli::kOk);
        return read_file(out / "chain.csv");
    };
    EXPECT_EQ(chain("m1"), chain("m2"));
}

TEST(Commands, Log10QoiTransformRoundTrip) {
    const fs::path dir = scratch("log10");
    const auto cfg = config(dir, {{"problem", "ct"}, {"J", 6}, {"ct_n_pix", 8}, {"ct_n_angles", 10}, {"ct_n_detectors", 12},
                                  {"qoi_transform", "log10"}, {"input_features", "with_magnitude"}, {"steps", 5},
                                  {"minibatch", 4}, {"L_sample", 20}, {"kappa", 5}});
    ASSERT_EQ(cli::run("gen-data", cfg), cli::kOk);
    ASSERT_EQ(cli::run("train", cfg), cli::kOk);
    const auto side = read_json(sidecar_path(dir / "model.ved"));
    EXPECT_EQ(side.at("qoi_transform"), "log10");
    EXPECT_EQ(side.at("input_features"), "with_magnitude");
    EXPECT_EQ(load_ved(dir / "model.ved").observation_size(), 120u);
    ASSERT_EQ(cli::run("sample", cfg), cli::kOk);
    std::ifstream is(dir / "samples.csv");
    const Matrix s = read_samples_csv(is);
    ASSERT_EQ(s.rows(), 100u);
    for (std::size_t i = 0; i < s.rows(); ++i) EXPECT_GT(s(i, 0), 0.0);

    std::ostringstream err;
    const fs::path lg = scratch("log10_negative");
    ASSERT_EQ(cli::run("gen-data", config(lg)), cli::kOk);
    EXPECT_EQ(cli::run("train", config(lg, {{"qoi_transform", "log10"}}), err), cli::kConfigError);
    EXPECT_EQ(cli::run("train", config(lg, {{"input_features", "squared"}}), err), cli::kConfigError);
}
