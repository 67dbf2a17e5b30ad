#pragma once

// Run artifacts: VED checkpoints with a JSON sidecar, sample and loss CSVs,
// moment summaries, the comparison report and the per-run manifest.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "goved/mcmc.hpp"
#include "goved/ved.hpp"
#include "json.hpp"

namespace goved {

inline constexpr int kArtifactSchemaVersion = 1;
inline constexpr const char* kToolVersion = "goved 1.0.0";

// ---------------------------------------------------------------------------
// Files

/// Writes through a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open " + tmp.string());
        os << contents;
        if (!os) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline nlohmann::json read_json(const std::filesystem::path& path) { return nlohmann::json::parse(read_file(path)); }

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Hashing

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Hash of the canonical (key-sorted, compact) JSON form.
inline std::string config_hash(const nlohmann::json& config) {
    std::ostringstream ss;
    ss << std::hex;
    ss.width(16);
    ss.fill('0');
    ss << fnv1a(config.dump());
    return ss.str();
}

// ---------------------------------------------------------------------------
// VED checkpoints

inline nlohmann::json ved_sidecar(const VedModel& model) {
    auto act_names = [](const DenseNet& n) {
        std::vector<std::string> out;
        for (auto a : n.activations()) out.emplace_back(to_string(a));
        return out;
    };
    return {{"schema_version", kArtifactSchemaVersion},
            {"format", "goved-checkpoint"},
            {"tool_version", kToolVersion},
            {"observation_size", model.observation_size()},
            {"qoi_size", model.qoi_size()},
            {"latent_dim", model.latent_dim},
            {"loss_mode", model.loss.name()},
            {"eta", model.loss.eta},
            {"logvar_bound", model.logvar_bound},
            {"step", model.step},
            {"encoder_sizes", model.encoder.sizes()},
            {"encoder_activations", act_names(model.encoder)},
            {"decoder_sizes", model.decoder.sizes()},
            {"decoder_activations", act_names(model.decoder)},
            {"input_features", to_string(model.features)},
            {"input_scaling", !model.input.identity()}};
}

/// Binary layout: encoder blob, decoder blob, u64 step, u64 scaling length,
/// f64 shift[], f64 scale[].
inline void write_ved(std::ostream& os, const VedModel& model) {
    write_net(os, model.encoder);
    write_net(os, model.decoder);
    detail::write_le<std::uint64_t>(os, model.step);
    detail::write_le<std::uint64_t>(os, model.input.shift.size());
    for (double v : model.input.shift) detail::write_le<double>(os, v);
    for (double v : model.input.scale) detail::write_le<double>(os, v);
}

inline VedModel read_ved(std::istream& is, const nlohmann::json& sidecar) {
    if (sidecar.value("format", "") != "goved-checkpoint") throw std::runtime_error("checkpoint: sidecar has wrong format tag");
    VedModel model;
    model.encoder = read_net(is);
    model.decoder = read_net(is);
    model.step = detail::read_le<std::uint64_t>(is);
    const auto n = detail::read_le<std::uint64_t>(is);
    model.input.shift.resize(n);
    model.input.scale.resize(n);
    for (double& v : model.input.shift) v = detail::read_le<double>(is);
    for (double& v : model.input.scale) v = detail::read_le<double>(is);
    model.latent_dim = sidecar.at("latent_dim").get<std::size_t>();
    const std::string mode = sidecar.at("loss_mode").get<std::string>();
    if (mode == "fixed_eta")
        model.loss = LossMode::fixed(sidecar.at("eta").get<double>());
    else if (mode == "heteroscedastic")
        model.loss = LossMode::heteroscedastic();
    else
        throw std::runtime_error("checkpoint: unknown loss mode " + mode);
    model.logvar_bound = sidecar.value("logvar_bound", 10.0);
    model.features = input_features_from_string(sidecar.value("input_features", "raw"));
    if (sidecar.at("step").get<std::uint64_t>() != model.step) throw std::runtime_error("checkpoint: sidecar step mismatch");
    model.validate();
    return model;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
    std::filesystem::path p = checkpoint;
    p += ".json";
    return p;
}

inline void save_ved(const std::filesystem::path& path, const VedModel& model) {
    std::ostringstream os(std::ios::binary);
    write_ved(os, model);
    write_file_atomic(path, os.str());
    write_json(sidecar_path(path), ved_sidecar(model));
}

inline VedModel load_ved(const std::filesystem::path& path) {
    const auto sidecar = read_json(sidecar_path(path));
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return read_ved(is, sidecar);
}

// ---------------------------------------------------------------------------
// CSV and JSON outputs

inline void write_samples_csv(std::ostream& os, const Matrix& samples) {
    os.precision(17);
    os << "sample_index";
    for (std::size_t j = 0; j < samples.cols(); ++j) os << ",x_" << j + 1;
    os << '\n';
    for (std::size_t i = 0; i < samples.rows(); ++i) {
        os << i;
        for (std::size_t j = 0; j < samples.cols(); ++j) os << ',' << samples(i, j);
        os << '\n';
    }
}

/// Reads the numeric columns after the first of a headed CSV.
inline Matrix read_samples_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("csv: missing header");
    const auto cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    std::vector<double> values;
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        for (std::size_t j = 0; j < cols; ++j) {
            if (!std::getline(ss, cell, ',')) throw std::runtime_error("csv: short row");
            values.push_back(std::stod(cell));
        }
        ++rows;
    }
    Matrix m(rows, cols);
    std::copy(values.begin(), values.end(), m.data().begin());
    return m;
}

inline void write_loss_csv(std::ostream& os, const TrainReport& rep, std::uint64_t first_step = 0) {
    os.precision(17);
    os << "step,loss\n";
    for (std::size_t k = 0; k < rep.step_loss.size(); ++k) os << first_step + k + 1 << ',' << rep.step_loss[k] << '\n';
}

inline void write_epoch_csv(std::ostream& os, const TrainReport& rep) {
    os.precision(17);
    os << "epoch,train_loss,validation_loss\n";
    for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) {
        os << e + 1 << ',' << rep.epoch_loss[e] << ',';
        if (e < rep.validation_loss.size()) os << rep.validation_loss[e];
        os << '\n';
    }
}

inline nlohmann::json moments_json(const Moments& mo) {
    nlohmann::json q = nlohmann::json::object();
    for (std::size_t p = 0; p < mo.probabilities.size(); ++p) {
        std::ostringstream key;
        key << "q" << mo.probabilities[p];
        q[key.str()] = mo.quantiles[p];
    }
    return {{"schema_version", kArtifactSchemaVersion},
            {"mean", mo.mean},
            {"std", mo.stddev()},
            {"variance", mo.variance},
            {"probabilities", mo.probabilities},
            {"quantiles", q}};
}

// ---------------------------------------------------------------------------
// VED vs MCMC comparison

/// Summary of one method's output for a single observation.
struct MethodSummary {
    Vector mean;
    Vector lower;  // per-coordinate lower interval end
    Vector upper;
    double seconds = 0.0;      // wall-clock of the sampling loop
    std::size_t samples = 0;   // samples (or steps) produced in that time
};

inline double pearson_correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw ShapeMismatch("pearson_correlation: need two equal-length series");
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return saa == sbb ? 1.0 : 0.0;
    return sab / std::sqrt(saa * sbb);
}

inline nlohmann::json compare_report(const MethodSummary& ved, const MethodSummary& mcmc) {
    const std::size_t q = ved.mean.size();
    if (mcmc.mean.size() != q || ved.lower.size() != q || ved.upper.size() != q || mcmc.lower.size() != q ||
        mcmc.upper.size() != q)
        throw ShapeMismatch("compare: coordinate counts differ");
    Vector diff(q);
    std::size_t overlapping = 0;
    Vector jaccard(q);
    double max_abs = 0.0;
    for (std::size_t j = 0; j < q; ++j) {
        diff[j] = ved.mean[j] - mcmc.mean[j];
        max_abs = std::max(max_abs, std::abs(diff[j]));
        const double lo = std::max(ved.lower[j], mcmc.lower[j]), hi = std::min(ved.upper[j], mcmc.upper[j]);
        const double uni = std::max(ved.upper[j], mcmc.upper[j]) - std::min(ved.lower[j], mcmc.lower[j]);
        if (hi >= lo) ++overlapping;
        jaccard[j] = uni > 0.0 ? std::max(0.0, hi - lo) / uni : 1.0;
    }
    const double ved_rate = ved.samples ? ved.seconds / static_cast<double>(ved.samples) : 0.0;
    const double mcmc_rate = mcmc.samples ? mcmc.seconds / static_cast<double>(mcmc.samples) : 0.0;
    nlohmann::json j = {{"schema_version", kArtifactSchemaVersion},
                        {"coordinates", q},
                        {"mean_difference", diff},
                        {"max_abs_mean_difference", max_abs},
                        {"pearson_correlation", q >= 2 ? pearson_correlation(ved.mean, mcmc.mean) : 1.0},
                        {"interval_overlap_fraction", q ? static_cast<double>(overlapping) / static_cast<double>(q) : 1.0},
                        {"interval_jaccard", jaccard},
                        {"ved_seconds_per_sample", ved_rate},
                        {"mcmc_seconds_per_sample", mcmc_rate}};
    if (ved_rate > 0.0 && mcmc_rate > 0.0) {
        j["timing_ratio"] = ved_rate / mcmc_rate;
        j["speedup"] = mcmc_rate / ved_rate;
    } else {
        j["timing_ratio"] = nullptr;
        j["speedup"] = nullptr;
    }
    return j;
}

// ---------------------------------------------------------------------------
// Run manifest

class RunManifest {
public:
    RunManifest(std::string command, nlohmann::json config) : command_(std::move(command)), config_(std::move(config)) {}

    /// Times `fn` as the named phase with a monotonic clock.
    template <class Fn>
    auto phase(const std::string& name, Fn&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            timings_[name] += elapsed(t0);
        } else {
            auto out = fn();
            timings_[name] += elapsed(t0);
            return out;
        }
    }

    void record_timing(const std::string& name, double seconds) { timings_[name] += seconds; }
    void add_output(const std::filesystem::path& p) { outputs_.push_back(p.string()); }
    void set(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"schema_version", kArtifactSchemaVersion},
                            {"command", command_},
                            {"config_hash", config_hash(config_)},
                            {"config", config_},
                            {"versions",
                             {{"tool", kToolVersion},
                              {"dataset_generator", kGeneratorVersion},
                              {"dataset_schema", kDatasetSchemaVersion},
                              {"artifact_schema", kArtifactSchemaVersion}}},
                            {"timings_seconds", timings_},
                            {"outputs", outputs_}};
        for (const auto& [k, v] : extra_.items()) j[k] = v;
        return j;
    }

    void write(const std::filesystem::path& path) const { write_json(path, to_json()); }

private:
    static double elapsed(std::chrono::steady_clock::time_point t0) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    std::string command_;
    nlohmann::json config_;
    std::map<std::string, double> timings_;
    std::vector<std::string> outputs_;
    nlohmann::json extra_ = nlohmann::json::object();
};

}  // namespace goved
