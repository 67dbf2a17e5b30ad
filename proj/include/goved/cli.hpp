#pragma once

// Experiment commands behind the goved binary. Each command takes a JSON
// config, writes its artifacts into the output directory together with a
// run manifest, and maps failures onto fixed exit codes.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <string>

#include "goved/ct_problem.hpp"
#include "goved/hydro_problem.hpp"
#include "goved/io.hpp"
#include "goved/lin_gauss.hpp"
#include "goved/mcmc.hpp"
#include "goved/ved.hpp"
#include "json.hpp"

namespace goved::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kGenerationError = 3,
    kDivergence = 4,
    kShapeError = 5,
    kPdeError = 6,
    kCoordinateMismatch = 7,
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Failure carrying the exit code it maps to.
struct CommandError : std::runtime_error {
    CommandError(int c, const std::string& what) : std::runtime_error(what), code(c) {}
    int code;
};

// ---------------------------------------------------------------------------
// Configuration

inline json default_config() {
    return {{"problem", "lingauss"},
            {"seed", 1},
            {"output_dir", "goved_out"},
            {"dataset", ""},
            {"checkpoint", ""},
            {"J", 200},
            {"workers", 0},
            {"train_fraction", 0.9},
            // lingauss
            {"lg_n", 16},
            {"lg_m", 16},
            {"lg_q", 2},
            {"lg_noise_std", 0.3},
            {"lg_correlation_length", 0.2},
            {"lg_problem_seed", 2024},
            // ct
            {"ct_n_pix", 32},
            {"ct_n_angles", 48},
            {"ct_n_detectors", 45},
            {"ct_pixel_size", 1.0},
            {"ct_noise_min", 0.1},
            {"ct_noise_max", 5.0},
            {"ct_angle_sigma_deg", 0.1},
            // hydro
            {"hydro_nodes", 33},
            {"hydro_n_goal", 16},
            {"hydro_eps_cl", 10.0},
            {"hydro_a_plus", 10.0},
            {"hydro_a_minus", 1.0},
            {"hydro_noise_percent", 1.0},
            // model
            {"latent_dim", 16},
            {"loss_mode", "fixed_eta"},
            {"eta", 0.1},
            {"activation", "relu"},
            {"input_features", "raw"},  // raw | with_magnitude
            {"encoder_hidden", {64}},
            {"decoder_hidden", {64}},
            {"L_train", 1},
            {"minibatch", 32},
            {"steps", 1000},
            {"lr_initial", 5e-2},
            {"lr_final", 1e-4},
            {"lr_schedule", "cosine"},
            {"qoi_transform", "none"},  // none | log10
            {"resume", false},
            // sampling and MCMC
            {"L_sample", 100},
            {"kappa", 10},
            {"mcmc_steps", 1000},
            {"beta", 0.2},
            {"auto_tune", true},
            {"burn_in_fraction", 0.25},
            {"acf_max_lag", 200},
            // observation selection
            {"observation", "dataset"},  // dataset | file | scenario
            {"observation_index", 0},
            {"observation_file", ""},
            {"scenario", ""},            // disks | perturbed_angles | prior
            {"noise_seed", 555},
            // compare inputs
            {"ved_dir", ""},
            {"mcmc_dir", ""},
            {"chain", ""}};
}

/// Defaults, then the config file, then flag overrides. Unknown keys are an error.
inline json merge_config(const json& file_config, const json& overrides) {
    json cfg = default_config();
    for (const json* src : {&file_config, &overrides}) {
        if (src->is_null()) continue;
        if (!src->is_object()) throw ConfigError("config must be a JSON object");
        for (const auto& [k, v] : src->items()) {
            if (!cfg.contains(k)) throw ConfigError("unknown config key: " + k);
            cfg[k] = v;
        }
    }
    return cfg;
}

/// "key=value"; value parsed as JSON when possible, else kept as a string.
inline std::pair<std::string, json> parse_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + kv);
    const std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
    json v = json::parse(raw, nullptr, false);
    if (v.is_discarded()) v = raw;
    return {key, v};
}

template <class T>
T get(const json& cfg, const std::string& key) {
    try {
        return cfg.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
    }
}

inline fs::path out_dir(const json& cfg) { return fs::path(get<std::string>(cfg, "output_dir")); }

inline unsigned workers(const json& cfg) {
    const int w = get<int>(cfg, "workers");
    return w > 0 ? static_cast<unsigned>(w) : worker_count();
}

inline LinGaussProblem lingauss_problem(const json& cfg) {
    LinGaussSpec s;
    s.n = get<std::size_t>(cfg, "lg_n");
    s.m = get<std::size_t>(cfg, "lg_m");
    s.q = get<std::size_t>(cfg, "lg_q");
    s.noise_std = get<double>(cfg, "lg_noise_std");
    s.correlation_length = get<double>(cfg, "lg_correlation_length");
    if (s.n == 0 || s.m == 0 || s.q == 0 || s.q > s.n) throw ConfigError("lingauss sizes must satisfy 1 <= q <= n, m >= 1");
    Rng rng(get<std::uint64_t>(cfg, "lg_problem_seed"));
    return make_lin_gauss_problem(s, rng);
}

inline CtDatasetConfig ct_config(const json& cfg) {
    CtDatasetConfig c;
    c.geometry.n_pix = get<std::size_t>(cfg, "ct_n_pix");
    c.geometry.n_angles = get<std::size_t>(cfg, "ct_n_angles");
    c.geometry.n_detectors = get<std::size_t>(cfg, "ct_n_detectors");
    c.geometry.pixel_size = get<double>(cfg, "ct_pixel_size");
    c.noise_min = get<double>(cfg, "ct_noise_min");
    c.noise_max = get<double>(cfg, "ct_noise_max");
    if (c.geometry.n_pix < 8 || c.geometry.n_angles == 0 || c.geometry.n_detectors == 0 || !(c.geometry.pixel_size > 0.0))
        throw ConfigError("ct geometry is invalid");
    if (!(c.noise_min >= 0.0 && c.noise_max >= c.noise_min)) throw ConfigError("ct noise range is invalid");
    return c;
}

inline HydroModel hydro_model(const json& cfg) {
    HydroSpec s;
    s.nodes = get<std::size_t>(cfg, "hydro_nodes");
    s.n_goal = get<std::size_t>(cfg, "hydro_n_goal");
    s.eps_cl = get<double>(cfg, "hydro_eps_cl");
    s.a_plus = get<double>(cfg, "hydro_a_plus");
    s.a_minus = get<double>(cfg, "hydro_a_minus");
    s.noise_percent = get<double>(cfg, "hydro_noise_percent");
    try {
        return make_hydro_model(s);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("hydro setup: ") + e.what());
    }
}

inline fs::path dataset_path(const json& cfg) {
    const auto p = get<std::string>(cfg, "dataset");
    return p.empty() ? out_dir(cfg) / "dataset.bin" : fs::path(p);
}

inline fs::path checkpoint_path(const json& cfg) {
    const auto p = get<std::string>(cfg, "checkpoint");
    return p.empty() ? out_dir(cfg) / "model.ved" : fs::path(p);
}

// ---------------------------------------------------------------------------
// Commands

inline Dataset generate_dataset(const json& cfg) {
    const auto problem = get<std::string>(cfg, "problem");
    const auto J = get<std::size_t>(cfg, "J");
    const auto seed = get<std::uint64_t>(cfg, "seed");
    if (J == 0) throw ConfigError("J must be >= 1");
    if (problem == "lingauss") {
        const auto p = lingauss_problem(cfg);
        return gen_lin_gauss_dataset(p, J, seed);
    }
    if (problem == "ct") {
        const auto c = ct_config(cfg);
        return gen_ct_dataset(J, c, seed, workers(cfg));
    }
    if (problem == "hydro") {
        const auto m = hydro_model(cfg);
        return gen_hydro_dataset(J, m, seed, workers(cfg));
    }
    throw ConfigError("unknown problem: " + problem);
}

inline int cmd_gen_data(const json& cfg) {
    RunManifest man("gen-data", cfg);
    Dataset d;
    try {
        d = man.phase("generate", [&] { return generate_dataset(cfg); });
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw CommandError(kGenerationError, std::string("generation failed: ") + e.what());
    }
    const fs::path path = dataset_path(cfg);
    man.phase("write", [&] {
        std::ostringstream os(std::ios::binary);
        write_dataset(os, d);
        write_file_atomic(path, os.str());
    });
    man.add_output(path);
    man.set("records", d.size());
    man.set("m", d.m);
    man.set("q", d.q);
    man.write(out_dir(cfg) / "manifest_gen-data.json");
    return kOk;
}

inline VedArchitecture architecture(const json& cfg) {
    VedArchitecture a;
    a.encoder_hidden = get<std::vector<std::size_t>>(cfg, "encoder_hidden");
    a.decoder_hidden = get<std::vector<std::size_t>>(cfg, "decoder_hidden");
    a.latent_dim = get<std::size_t>(cfg, "latent_dim");
    try {
        a.activation = activation_from_string(get<std::string>(cfg, "activation"));
        a.features = input_features_from_string(get<std::string>(cfg, "input_features"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const auto mode = get<std::string>(cfg, "loss_mode");
    if (mode == "fixed_eta") {
        a.loss = LossMode::fixed(get<double>(cfg, "eta"));
        if (!(a.loss.eta > 0.0)) throw ConfigError("eta must be positive");
    } else if (mode == "heteroscedastic") {
        a.loss = LossMode::heteroscedastic();
    } else {
        throw ConfigError("unknown loss_mode: " + mode);
    }
    if (a.latent_dim == 0) throw ConfigError("latent_dim must be >= 1");
    return a;
}

inline TrainConfig train_config(const json& cfg) {
    TrainConfig t;
    t.minibatch = get<std::size_t>(cfg, "minibatch");
    t.steps = get<std::uint64_t>(cfg, "steps");
    t.latent_samples = get<std::size_t>(cfg, "L_train");
    try {
        t.schedule = {get<double>(cfg, "lr_initial"), get<double>(cfg, "lr_final"), std::max<std::uint64_t>(t.steps, 1),
                      schedule_mode_from_string(get<std::string>(cfg, "lr_schedule"))};
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (t.minibatch == 0 || t.latent_samples == 0) throw ConfigError("minibatch and L_train must be >= 1");
    if (!(t.schedule.initial > 0.0 && t.schedule.final > 0.0)) throw ConfigError("learning rates must be positive");
    return t;
}

/// Applies the configured QoI transform to every record in place.
inline void transform_qoi(Dataset& d, const std::string& transform) {
    if (transform == "none") return;
    if (transform != "log10") throw ConfigError("unknown qoi_transform: " + transform);
    for (Record& r : d.records)
        for (double& v : r.x) {
            if (!(v > 0.0)) throw ConfigError("qoi_transform log10 needs positive QoI values");
            v = std::log10(v);
        }
}

inline Dataset load_dataset_or_fail(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("dataset not found: " + path.string());
    return load_dataset(path.string());
}

inline int cmd_train(const json& cfg) {
    RunManifest man("train", cfg);
    const auto seed = get<std::uint64_t>(cfg, "seed");
    const auto transform = get<std::string>(cfg, "qoi_transform");
    const Dataset data = man.phase("load", [&] {
        Dataset d = load_dataset_or_fail(dataset_path(cfg));
        transform_qoi(d, transform);
        return d;
    });
    const double frac = get<double>(cfg, "train_fraction");
    if (!(frac > 0.0 && frac <= 1.0)) throw ConfigError("train_fraction must be in (0, 1]");
    Rng split_rng(seed, 1);
    const Split split = split_indices(data.size(), frac, split_rng);
    const Dataset train_set = data.subset(split.train), val_set = data.subset(split.validation);

    const fs::path ckpt = checkpoint_path(cfg);
    VedModel model;
    const bool resume = get<bool>(cfg, "resume");
    if (resume) {
        if (!fs::exists(ckpt)) throw ConfigError("resume requested but no checkpoint at " + ckpt.string());
        model = load_ved(ckpt);
        if (read_json(sidecar_path(ckpt)).value("qoi_transform", "none") != transform)
            throw ConfigError("qoi_transform differs from the checkpoint being resumed");
        if (model.observation_size() != data.m || model.qoi_size() != data.q)
            throw CommandError(kShapeError, "checkpoint shape does not match dataset");
    } else {
        Rng init(seed, 2);
        model = make_ved(data.m, data.q, architecture(cfg), init);
        fit_input_scaling(model, train_set);
    }
    const TrainConfig tc = train_config(cfg);
    // Each resumed segment draws minibatches from its own stream.
    Rng rng(seed, 3 + model.step);
    const std::uint64_t first_step = model.step;
    TrainReport rep;
    try {
        rep = man.phase("train", [&] { return train(model, train_set, tc, rng, val_set.empty() ? nullptr : &val_set); });
    } catch (const Diverged& e) {
        throw CommandError(kDivergence, e.what());
    }
    save_ved(ckpt, model);
    {
        json side = read_json(sidecar_path(ckpt));
        side["qoi_transform"] = transform;
        write_json(sidecar_path(ckpt), side);
    }
    man.add_output(ckpt);
    man.add_output(sidecar_path(ckpt));
    const fs::path dir = out_dir(cfg);
    {
        std::ostringstream os;
        write_loss_csv(os, rep, first_step);
        write_file_atomic(dir / "loss.csv", os.str());
        std::ostringstream oe;
        write_epoch_csv(oe, rep);
        write_file_atomic(dir / "epochs.csv", oe.str());
    }
    man.add_output(dir / "loss.csv");
    man.add_output(dir / "epochs.csv");
    man.set("steps_total", model.step);
    man.set("train_records", train_set.size());
    man.set("validation_records", val_set.size());
    if (!rep.validation_loss.empty()) {
        man.set("validation_loss_first", rep.validation_loss.front());
        man.set("validation_loss_last", rep.validation_loss.back());
    }
    man.write(dir / "manifest_train.json");
    return kOk;
}

/// The observation a sample or MCMC run conditions on.
struct Observation {
    Vector b;
    double sigma_n = 0.0;  // hydro only
    Vector x_true;         // when known
    std::string id;
    json meta = json::object();
};

inline json observation_json(const Observation& o) {
    json j = {{"schema_version", kArtifactSchemaVersion}, {"id", o.id}, {"b", o.b}, {"meta", o.meta}};
    if (o.sigma_n > 0.0) j["sigma_n"] = o.sigma_n;
    if (!o.x_true.empty()) j["x_true"] = o.x_true;
    return j;
}

inline Observation scenario_observation(const json& cfg) {
    const auto problem = get<std::string>(cfg, "problem");
    const auto scenario = get<std::string>(cfg, "scenario");
    Rng rng(get<std::uint64_t>(cfg, "noise_seed"));
    Observation o;
    o.id = problem + ":" + scenario;
    if (problem == "hydro" && scenario == "disks") {
        const HydroModel m = hydro_model(cfg);
        const Vector y = disks_test_case(m.grid, m.a_plus, m.a_minus);
        HydroMeasurement meas = hydro_forward(m, y, &rng);
        o.b = std::move(meas.b);
        o.sigma_n = meas.sigma_n;
        return o;
    }
    if (problem == "hydro" && scenario == "prior") {
        const HydroModel m = hydro_model(cfg);
        o.x_true = sample_standard_normal(rng, m.basis.size());
        HydroMeasurement meas = hydro_forward(m, hydro_conductivity(m, o.x_true), &rng);
        o.b = std::move(meas.b);
        o.sigma_n = meas.sigma_n;
        return o;
    }
    if (problem == "ct" && (scenario == "perturbed_angles" || scenario == "prior")) {
        const CtDatasetConfig c = ct_config(cfg);
        const Phantom ph = gen_phantom(rng, c.geometry.n_pix, c.jitter);
        const double r = rng.uniform(c.noise_min, c.noise_max);
        std::vector<double> angles = uniform_angles(c.geometry.n_angles);
        if (scenario == "perturbed_angles")
            angles = perturbed_angles(angles, get<double>(cfg, "ct_angle_sigma_deg") * std::numbers::pi / 180.0, rng);
        const RadonOperator measure(c.geometry, angles);
        o.b = add_noise_level(measure.apply(ph.values), r, rng);
        // The reference parameter is computed with the nominal operator the VED was trained on.
        const RadonOperator nominal(c.geometry);
        o.x_true = {bilevel_oracle(nominal, o.b, ph.values, c.search, c.tv).x_hat};
        o.meta = {{"noise_percent", r}};
        return o;
    }
    if (problem == "lingauss" && scenario == "prior") {
        const LinGaussProblem p = lingauss_problem(cfg);
        const Matrix ly = cholesky(p.prior_cov), ln = cholesky(p.noise_cov);
        const Vector y = sample_gaussian(p.prior_mean, ly, rng);
        o.b = p.forward * y;
        const Vector e = sample_gaussian(Vector(p.m(), 0.0), ln, rng);
        for (std::size_t i = 0; i < o.b.size(); ++i) o.b[i] += e[i];
        o.x_true = p.prediction * y;
        const GaussianFull g = posterior_predictive(p, o.b);
        o.meta = {{"analytic_mean", g.mean}, {"analytic_std", [&] {
                       Vector s(g.mean.size());
                       for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::sqrt(g.cov(i, i));
                       return s;
                   }()}};
        return o;
    }
    throw ConfigError("unknown scenario '" + scenario + "' for problem " + problem);
}

inline Observation load_observation(const json& cfg) {
    const auto source = get<std::string>(cfg, "observation");
    if (source == "scenario" || !get<std::string>(cfg, "scenario").empty()) return scenario_observation(cfg);
    if (source == "file") {
        const fs::path p = get<std::string>(cfg, "observation_file");
        if (!fs::exists(p)) throw ConfigError("observation file not found: " + p.string());
        const json j = read_json(p);
        Observation o;
        o.b = j.at("b").get<Vector>();
        o.sigma_n = j.value("sigma_n", 0.0);
        if (j.contains("x_true")) o.x_true = j.at("x_true").get<Vector>();
        o.id = j.value("id", p.filename().string());
        return o;
    }
    if (source == "dataset") {
        const Dataset d = load_dataset_or_fail(dataset_path(cfg));
        const auto k = get<std::size_t>(cfg, "observation_index");
        if (k >= d.size()) throw ConfigError("observation_index out of range");
        Observation o;
        o.b = d.records[k].b;
        o.x_true = d.records[k].x;
        o.sigma_n = d.problem_id == "hydro" ? d.records[k].noise_level : 0.0;
        o.id = d.problem_id + ":record" + std::to_string(k);
        return o;
    }
    throw ConfigError("unknown observation source: " + source);
}

inline int cmd_sample(const json& cfg) {
    RunManifest man("sample", cfg);
    const fs::path ckpt = checkpoint_path(cfg);
    if (!fs::exists(ckpt)) throw ConfigError("checkpoint not found: " + ckpt.string());
    const VedModel model = man.phase("load", [&] { return load_ved(ckpt); });
    const Observation obs = man.phase("observation", [&] { return load_observation(cfg); });
    if (obs.b.size() != model.observation_size())
        throw CommandError(kShapeError, "observation length " + std::to_string(obs.b.size()) + " does not match checkpoint input " +
                                            std::to_string(model.observation_size()));
    const auto L = get<std::size_t>(cfg, "L_sample");
    const auto kappa = get<std::size_t>(cfg, "kappa");
    if (L == 0 || kappa == 0) throw ConfigError("L_sample and kappa must be >= 1");
    Rng rng(get<std::uint64_t>(cfg, "seed"), 0);
    const auto t0 = std::chrono::steady_clock::now();
    PredictiveSamples s = sample_predictive(model, obs.b, L, kappa, rng, obs.id);
    if (read_json(sidecar_path(ckpt)).value("qoi_transform", "none") == "log10")
        for (double& v : s.samples.data()) v = std::pow(10.0, v);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    man.record_timing("sampling", seconds);
    const Moments mo = predictive_moments(s);

    const fs::path dir = out_dir(cfg);
    std::ostringstream os;
    write_samples_csv(os, s.samples);
    write_file_atomic(dir / "samples.csv", os.str());
    json mj = moments_json(mo);
    mj["method"] = "ved";
    mj["samples"] = s.samples.rows();
    mj["seconds"] = seconds;
    mj["observation_id"] = obs.id;
    mj["lower"] = mo.quantiles.front();
    mj["upper"] = mo.quantiles.back();
    write_json(dir / "moments.json", mj);
    write_json(dir / "observation.json", observation_json(obs));
    for (const char* f : {"samples.csv", "moments.json", "observation.json"}) man.add_output(dir / f);
    man.write(dir / "manifest_sample.json");
    return kOk;
}

inline PcnConfig pcn_config(const json& cfg) {
    PcnConfig p;
    p.steps = get<std::size_t>(cfg, "mcmc_steps");
    p.beta = get<double>(cfg, "beta");
    p.auto_tune = get<bool>(cfg, "auto_tune");
    p.burn_in_fraction = get<double>(cfg, "burn_in_fraction");
    if (p.steps == 0) throw ConfigError("mcmc_steps must be >= 1");
    if (!(p.beta > 0.0 && p.beta <= 1.0)) throw ConfigError("beta must be in (0, 1]");
    if (!(p.burn_in_fraction >= 0.0 && p.burn_in_fraction < 1.0)) throw ConfigError("burn_in_fraction must be in [0, 1)");
    return p;
}

inline json chain_diagnostics(const Chain& c) {
    json j = chain_summary(c);
    j["lower"] = ergodic_quantile(c, 0.01);
    j["upper"] = ergodic_quantile(c, 0.99);
    return j;
}

inline int cmd_mcmc(const json& cfg) {
    if (get<std::string>(cfg, "problem") != "hydro") throw ConfigError("mcmc is only defined for the hydro problem");
    RunManifest man("mcmc", cfg);
    const HydroModel model = hydro_model(cfg);
    Observation obs;
    try {
        obs = man.phase("observation", [&] { return load_observation(cfg); });
    } catch (const NoConvergence& e) {
        throw CommandError(kPdeError, e.what());
    } catch (const NotSpd& e) {
        throw CommandError(kPdeError, e.what());
    }
    if (obs.b.size() != model.wells.measurement_count()) throw CommandError(kShapeError, "observation length does not match well layout");
    if (!(obs.sigma_n > 0.0)) throw ConfigError("observation carries no positive sigma_n");
    const PcnConfig pc = pcn_config(cfg);
    Rng rng(get<std::uint64_t>(cfg, "seed"), 0);
    const LogLikelihood ll = make_hydro_likelihood(model, obs.b, obs.sigma_n);
    const auto t0 = std::chrono::steady_clock::now();
    Chain chain;
    try {
        chain = run_pcn(Vector(model.basis.size(), 0.0), pc, ll, rng);
    } catch (const NoConvergence& e) {
        throw CommandError(kPdeError, e.what());
    } catch (const NotSpd& e) {
        throw CommandError(kPdeError, e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    man.record_timing("sampling", seconds);

    const fs::path dir = out_dir(cfg);
    std::ostringstream cs, as;
    write_chain_csv(cs, chain);
    write_file_atomic(dir / "chain.csv", cs.str());
    write_acf_csv(as, chain, get<std::size_t>(cfg, "acf_max_lag"));
    write_file_atomic(dir / "acf.csv", as.str());
    json dj = chain_diagnostics(chain);
    dj["method"] = "pcn";
    dj["samples"] = chain.steps;
    dj["seconds"] = seconds;
    dj["observation_id"] = obs.id;
    write_json(dir / "diagnostics.json", dj);
    write_json(dir / "observation.json", observation_json(obs));
    for (const char* f : {"chain.csv", "acf.csv", "diagnostics.json", "observation.json"}) man.add_output(dir / f);
    man.write(dir / "manifest_mcmc.json");
    return kOk;
}

/// Reads a chain CSV (step, x_1.., accepted) back into a Chain.
inline Chain read_chain_csv(const fs::path& path, double burn_in_fraction) {
    std::ifstream is(path);
    if (!is) throw ConfigError("chain file not found: " + path.string());
    const Matrix m = read_samples_csv(is);
    if (m.cols() < 2 || m.rows() == 0) throw ConfigError("chain file has no samples: " + path.string());
    Chain c;
    c.samples = Matrix(m.rows(), m.cols() - 1);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j + 1 < m.cols(); ++j) c.samples(i, j) = m(i, j);
        c.accepted.push_back(m(i, m.cols() - 1) != 0.0);
        c.acceptance_count += c.accepted.back();
    }
    c.steps = m.rows();
    c.burn_in = std::min(static_cast<std::size_t>(std::floor(burn_in_fraction * static_cast<double>(m.rows()))), m.rows() - 1);
    return c;
}

inline int cmd_diagnose(const json& cfg) {
    RunManifest man("diagnose", cfg);
    fs::path chain_path = get<std::string>(cfg, "chain");
    if (chain_path.empty()) {
        const auto mdir = get<std::string>(cfg, "mcmc_dir");
        chain_path = (mdir.empty() ? out_dir(cfg) : fs::path(mdir)) / "chain.csv";
    }
    const Chain c = man.phase("load", [&] { return read_chain_csv(chain_path, get<double>(cfg, "burn_in_fraction")); });
    const fs::path dir = out_dir(cfg);
    std::ostringstream as;
    man.phase("diagnose", [&] { write_acf_csv(as, c, get<std::size_t>(cfg, "acf_max_lag")); });
    write_file_atomic(dir / "diagnose_acf.csv", as.str());
    json dj = chain_diagnostics(c);
    dj.erase("beta");
    dj["source"] = chain_path.string();
    write_json(dir / "diagnose.json", dj);
    man.add_output(dir / "diagnose_acf.csv");
    man.add_output(dir / "diagnose.json");
    man.write(dir / "manifest_diagnose.json");
    return kOk;
}

inline MethodSummary summary_from_json(const json& j) {
    MethodSummary s;
    s.mean = j.at("mean").get<Vector>();
    s.lower = j.at("lower").get<Vector>();
    s.upper = j.at("upper").get<Vector>();
    s.seconds = j.value("seconds", 0.0);
    s.samples = j.value("samples", std::size_t{0});
    return s;
}

inline fs::path method_file(const fs::path& dir) {
    if (fs::exists(dir / "moments.json")) return dir / "moments.json";
    if (fs::exists(dir / "diagnostics.json")) return dir / "diagnostics.json";
    throw ConfigError("no moments.json or diagnostics.json in " + dir.string());
}

inline int cmd_compare(const json& cfg) {
    RunManifest man("compare", cfg);
    const auto vdir = get<std::string>(cfg, "ved_dir"), mdir = get<std::string>(cfg, "mcmc_dir");
    if (vdir.empty() || mdir.empty()) throw ConfigError("compare needs ved_dir and mcmc_dir");
    const MethodSummary a = summary_from_json(read_json(method_file(vdir)));
    const MethodSummary b = summary_from_json(read_json(method_file(mdir)));
    json report;
    try {
        report = compare_report(a, b);
    } catch (const ShapeMismatch& e) {
        throw CommandError(kCoordinateMismatch, e.what());
    }
    report["ved_source"] = vdir;
    report["mcmc_source"] = mdir;
    const fs::path out = out_dir(cfg) / "compare.json";
    write_json(out, report);
    man.add_output(out);
    man.write(out_dir(cfg) / "manifest_compare.json");
    return kOk;
}

/// Runs a command and converts failures to exit codes, reporting on `err`.
inline int run(const std::string& command, const json& cfg, std::ostream& err = std::cerr) {
    try {
        if (command == "gen-data") return cmd_gen_data(cfg);
        if (command == "train") return cmd_train(cfg);
        if (command == "sample") return cmd_sample(cfg);
        if (command == "mcmc") return cmd_mcmc(cfg);
        if (command == "diagnose") return cmd_diagnose(cfg);
        if (command == "compare") return cmd_compare(cfg);
        throw ConfigError("unknown command: " + command);
    } catch (const CommandError& e) {
        err << "goved " << command << ": " << e.what() << '\n';
        return e.code;
    } catch (const ConfigError& e) {
        err << "goved " << command << ": config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const json::exception& e) {
        err << "goved " << command << ": config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ShapeMismatch& e) {
        err << "goved " << command << ": shape mismatch: " << e.what() << '\n';
        return kShapeError;
    } catch (const std::exception& e) {
        err << "goved " << command << ": " << e.what() << '\n';
        return 1;
    }
}

}  // namespace goved::cli
