#pragma once

// Variational encoder-decoder for goal-oriented UQ. The encoder maps an
// observation b to a diagonal Gaussian over the latent z, the decoder maps z
// to a diagonal Gaussian over the quantity of interest x. Training minimizes
// the negative ELBO; sampling pushes latent draws through the decoder.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "goved/dataset.hpp"
#include "goved/neural.hpp"
#include "goved/numerics.hpp"

namespace goved {

struct Diverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TooFewSamples : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GaussianDiag {
    Vector mean;
    Vector stddev;

    std::size_t size() const { return mean.size(); }

    void validate() const {
        if (mean.size() != stddev.size()) throw ShapeMismatch("GaussianDiag: mean and stddev lengths differ");
        for (double s : stddev)
            if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("GaussianDiag: stddev must be positive and finite");
    }
};

struct LossMode {
    enum class Kind { fixed_eta, heteroscedastic };
    Kind kind = Kind::fixed_eta;
    double eta = 0.1;

    static LossMode fixed(double eta) { return {Kind::fixed_eta, eta}; }
    static LossMode heteroscedastic() { return {Kind::heteroscedastic, 0.0}; }

    bool is_fixed() const { return kind == Kind::fixed_eta; }
    std::string name() const { return is_fixed() ? "fixed_eta" : "heteroscedastic"; }
};

/// Encoder input built from the observation. `with_magnitude` appends |b_i|
/// to b, so sums of magnitudes over many coordinates are linear in the input.
enum class InputFeatures { raw, with_magnitude };

inline std::string to_string(InputFeatures f) { return f == InputFeatures::raw ? "raw" : "with_magnitude"; }

inline InputFeatures input_features_from_string(const std::string& s) {
    if (s == "raw") return InputFeatures::raw;
    if (s == "with_magnitude") return InputFeatures::with_magnitude;
    throw std::invalid_argument("unknown input features: " + s);
}

/// Per-coordinate affine standardization of the encoder input (after feature
/// construction). Empty vectors mean identity.
struct InputScaling {
    Vector shift;
    Vector scale;

    bool identity() const { return shift.empty(); }
};

struct VedModel {
    DenseNet encoder;  // m -> 2 * latent_dim (mean, log-variance)
    DenseNet decoder;  // latent_dim -> q (fixed eta) or 2q (heteroscedastic)
    std::size_t latent_dim = 0;
    LossMode loss;
    double logvar_bound = 10.0;  // log-variances are clamped to [-bound, bound]
    InputFeatures features = InputFeatures::raw;
    InputScaling input;
    std::uint64_t step = 0;      // optimizer steps taken so far

    std::size_t feature_size() const { return encoder.input_size(); }
    std::size_t observation_size() const {
        return features == InputFeatures::raw ? feature_size() : feature_size() / 2;
    }
    std::size_t qoi_size() const { return loss.is_fixed() ? decoder.output_size() : decoder.output_size() / 2; }

    void validate() const {
        if (encoder.output_size() != 2 * latent_dim) throw ShapeMismatch("VedModel: encoder must output 2*latent_dim");
        if (decoder.input_size() != latent_dim) throw ShapeMismatch("VedModel: decoder input must be latent_dim");
        if (!loss.is_fixed() && decoder.output_size() % 2 != 0)
            throw ShapeMismatch("VedModel: heteroscedastic decoder must output 2q values");
        if (features == InputFeatures::with_magnitude && feature_size() % 2 != 0)
            throw ShapeMismatch("VedModel: magnitude features need an even encoder input");
        if (loss.is_fixed() && !(loss.eta > 0.0)) throw std::invalid_argument("VedModel: eta must be positive");
        if (!input.identity() && (input.shift.size() != feature_size() || input.scale.size() != feature_size()))
            throw ShapeMismatch("VedModel: input scaling length");
    }
};

struct VedArchitecture {
    std::vector<std::size_t> encoder_hidden{64};
    std::vector<std::size_t> decoder_hidden{64};
    Activation activation = Activation::relu;
    std::size_t latent_dim = 16;
    LossMode loss = LossMode::fixed(0.1);
    InputFeatures features = InputFeatures::raw;
};

inline VedModel make_ved(std::size_t m, std::size_t q, const VedArchitecture& arch, Rng& rng) {
    VedModel model;
    model.latent_dim = arch.latent_dim;
    model.loss = arch.loss;
    model.features = arch.features;
    std::vector<std::size_t> enc{arch.features == InputFeatures::raw ? m : 2 * m};
    enc.insert(enc.end(), arch.encoder_hidden.begin(), arch.encoder_hidden.end());
    enc.push_back(2 * arch.latent_dim);
    std::vector<std::size_t> dec{arch.latent_dim};
    dec.insert(dec.end(), arch.decoder_hidden.begin(), arch.decoder_hidden.end());
    dec.push_back(arch.loss.is_fixed() ? q : 2 * q);
    model.encoder = DenseNet(enc, arch.activation);
    model.decoder = DenseNet(dec, arch.activation);
    model.encoder.initialize(rng);
    model.decoder.initialize(rng);
    model.validate();
    return model;
}

/// Unscaled encoder input for observation `b`.
inline Vector input_features(const VedModel& model, std::span<const double> b) {
    if (b.size() != model.observation_size()) throw ShapeMismatch("encode: observation length does not match model");
    Vector f(b.begin(), b.end());
    if (model.features == InputFeatures::with_magnitude)
        for (double v : b) f.push_back(std::abs(v));
    return f;
}

/// Standardizes every encoder input coordinate over `data`. Coordinates with
/// (near) zero spread get unit scale.
inline void fit_input_scaling(VedModel& model, const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("fit_input_scaling: empty dataset");
    if (data.m != model.observation_size()) throw ShapeMismatch("fit_input_scaling: dataset observation size");
    const std::size_t m = model.feature_size();
    std::vector<Vector> feats;
    feats.reserve(data.size());
    for (const auto& r : data.records) feats.push_back(input_features(model, r.b));
    Vector mean(m, 0.0), sq(m, 0.0);
    for (const auto& f : feats)
        for (std::size_t i = 0; i < m; ++i) mean[i] += f[i];
    for (double& v : mean) v /= static_cast<double>(data.size());
    for (const auto& f : feats)
        for (std::size_t i = 0; i < m; ++i) sq[i] += (f[i] - mean[i]) * (f[i] - mean[i]);
    double typical = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        sq[i] = std::sqrt(sq[i] / static_cast<double>(std::max<std::size_t>(1, data.size() - 1)));
        typical = std::max(typical, sq[i]);
    }
    for (double& s : sq)
        if (!(s > 1e-12 * std::max(typical, 1e-300))) s = 1.0;
    model.input.shift = std::move(mean);
    model.input.scale = std::move(sq);
}

namespace detail {

inline Vector scaled_input(const VedModel& model, std::span<const double> b) {
    Vector s = input_features(model, b);
    if (!model.input.identity())
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = (s[i] - model.input.shift[i]) / model.input.scale[i];
    return s;
}

inline double clamp_logvar(const VedModel& model, double raw) {
    return std::clamp(raw, -model.logvar_bound, model.logvar_bound);
}

inline bool logvar_active(const VedModel& model, double raw) {
    return raw >= -model.logvar_bound && raw <= model.logvar_bound;
}

inline GaussianDiag split_encoder_output(const VedModel& model, const Vector& out) {
    const std::size_t l = model.latent_dim;
    GaussianDiag g{Vector(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(l)), Vector(l)};
    for (std::size_t i = 0; i < l; ++i) g.stddev[i] = std::exp(0.5 * clamp_logvar(model, out[l + i]));
    return g;
}

inline GaussianDiag split_decoder_output(const VedModel& model, const Vector& out) {
    if (model.loss.is_fixed()) return {out, Vector(out.size(), model.loss.eta)};
    const std::size_t q = out.size() / 2;
    GaussianDiag g{Vector(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(q)), Vector(q)};
    for (std::size_t i = 0; i < q; ++i) g.stddev[i] = std::exp(0.5 * clamp_logvar(model, out[q + i]));
    return g;
}

}  // namespace detail

inline GaussianDiag encode(const VedModel& model, std::span<const double> b) {
    return detail::split_encoder_output(model, evaluate(model.encoder, detail::scaled_input(model, b)));
}

inline Vector reparameterize(const GaussianDiag& g, std::span<const double> xi) {
    if (xi.size() != g.size()) throw ShapeMismatch("reparameterize: noise length");
    Vector z(g.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = g.mean[i] + g.stddev[i] * xi[i];
    return z;
}

inline Vector reparameterize(const GaussianDiag& g, Rng& rng) {
    g.validate();
    Vector xi(g.size());
    for (double& v : xi) v = rng.normal();
    return reparameterize(g, xi);
}

inline GaussianDiag decode(const VedModel& model, std::span<const double> z) {
    if (z.size() != model.latent_dim) throw ShapeMismatch("decode: latent length does not match model");
    return detail::split_decoder_output(model, evaluate(model.decoder, z));
}

/// KL( N(mu, diag(sigma)^2) || N(0, I) ) in closed form.
inline double kl_to_standard(const GaussianDiag& g) {
    g.validate();
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double var = g.stddev[i] * g.stddev[i];
        s += -std::log(var) - 1.0 + g.mean[i] * g.mean[i] + var;
    }
    return 0.5 * s;
}

// ---------------------------------------------------------------------------
// Loss and gradients

struct ElboResult {
    double loss = 0.0;            // -ELBO: mean reconstruction NLL + KL
    double reconstruction = 0.0;  // mean over latent samples of -log pi_d(x | z)
    double kl = 0.0;
    Vector grad_encoder;
    Vector grad_decoder;
};

/// Negative ELBO for one (b, x) pair with the latent noise given explicitly:
/// `xi` holds L consecutive standard-normal vectors of length latent_dim.
/// Gradients are added into grad_* scaled by `weight` when `with_gradient`.
inline void elbo_accumulate(const VedModel& model, std::span<const double> b, std::span<const double> x,
                            std::span<const double> xi, double weight, bool with_gradient, ElboResult& acc) {
    const std::size_t l = model.latent_dim;
    const std::size_t q = model.qoi_size();
    if (x.size() != q) throw ShapeMismatch("elbo_loss: target length does not match model");
    if (xi.empty() || xi.size() % l != 0) throw ShapeMismatch("elbo_loss: latent noise must hold L*latent_dim values");
    const std::size_t n_lat = xi.size() / l;
    const double inv_l = 1.0 / static_cast<double>(n_lat);

    auto enc = forward(model.encoder, detail::scaled_input(model, b));
    const Vector& eo = enc.output;
    Vector mu(eo.begin(), eo.begin() + static_cast<std::ptrdiff_t>(l));
    Vector lv(l), sigma(l);
    for (std::size_t i = 0; i < l; ++i) {
        lv[i] = detail::clamp_logvar(model, eo[l + i]);
        sigma[i] = std::exp(0.5 * lv[i]);
    }

    double kl = 0.0;
    for (std::size_t i = 0; i < l; ++i) kl += -lv[i] - 1.0 + mu[i] * mu[i] + std::exp(lv[i]);
    kl *= 0.5;

    Vector d_mu(l, 0.0), d_sigma(l, 0.0);
    const double log2pi = std::log(2.0 * std::numbers::pi);
    double recon = 0.0;
    Vector z(l), dout;
    for (std::size_t s = 0; s < n_lat; ++s) {
        const double* e = xi.data() + s * l;
        for (std::size_t i = 0; i < l; ++i) z[i] = mu[i] + sigma[i] * e[i];
        auto dec = forward(model.decoder, z);
        const Vector& o = dec.output;
        dout.assign(o.size(), 0.0);
        double nll = 0.0;
        if (model.loss.is_fixed()) {
            const double eta = model.loss.eta;
            nll = static_cast<double>(q) * std::log(eta * std::sqrt(2.0 * std::numbers::pi));
            for (std::size_t j = 0; j < q; ++j) {
                const double r = x[j] - o[j];
                nll += r * r / (2.0 * eta * eta);
                dout[j] = -r / (eta * eta);
            }
        } else {
            nll = 0.5 * static_cast<double>(q) * log2pi;
            for (std::size_t j = 0; j < q; ++j) {
                const double raw = o[q + j];
                const double lvd = detail::clamp_logvar(model, raw);
                const double prec = std::exp(-lvd);
                const double r = x[j] - o[j];
                nll += 0.5 * lvd + 0.5 * r * r * prec;
                dout[j] = -r * prec;
                dout[q + j] = detail::logvar_active(model, raw) ? 0.5 - 0.5 * r * r * prec : 0.0;
            }
        }
        recon += nll * inv_l;
        if (with_gradient) {
            for (double& v : dout) v *= inv_l * weight;
            const Vector dz = backward_accumulate(model.decoder, dec.cache, dout, acc.grad_decoder);
            for (std::size_t i = 0; i < l; ++i) {
                d_mu[i] += dz[i];
                d_sigma[i] += dz[i] * e[i];
            }
        }
    }

    acc.loss += weight * (recon + kl);
    acc.reconstruction += weight * recon;
    acc.kl += weight * kl;

    if (with_gradient) {
        Vector denc(2 * l, 0.0);
        for (std::size_t i = 0; i < l; ++i) {
            denc[i] = d_mu[i] + weight * mu[i];
            const double d_lv = d_sigma[i] * 0.5 * sigma[i] + weight * 0.5 * (std::exp(lv[i]) - 1.0);
            denc[l + i] = detail::logvar_active(model, eo[l + i]) ? d_lv : 0.0;
        }
        backward_accumulate(model.encoder, enc.cache, denc, acc.grad_encoder);
    }
}

inline ElboResult elbo_loss(const VedModel& model, std::span<const double> b, std::span<const double> x,
                            std::span<const double> xi) {
    ElboResult r;
    r.grad_encoder.assign(model.encoder.parameter_count(), 0.0);
    r.grad_decoder.assign(model.decoder.parameter_count(), 0.0);
    elbo_accumulate(model, b, x, xi, 1.0, true, r);
    return r;
}

/// Draws L latent noise vectors from `rng` and evaluates the loss and gradients.
inline ElboResult elbo_loss(const VedModel& model, std::span<const double> b, std::span<const double> x,
                            std::size_t latent_samples, Rng& rng) {
    if (latent_samples == 0) throw std::invalid_argument("elbo_loss: L must be >= 1");
    Vector xi(latent_samples * model.latent_dim);
    for (double& v : xi) v = rng.normal();
    return elbo_loss(model, b, x, xi);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    std::size_t minibatch = 32;
    std::uint64_t steps = 1000;
    LrSchedule schedule{5e-2, 1e-4, 1000, ScheduleMode::cosine};
    std::size_t latent_samples = 1;  // L during training
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t validation_seed = 0x5eed;
};

struct TrainReport {
    std::vector<double> step_loss;        // minibatch mean loss at every step
    std::vector<double> epoch_loss;       // mean of step_loss over each epoch
    std::vector<double> validation_loss;  // one per epoch when a validation set is given
    std::uint64_t steps_taken = 0;
};

/// Mean negative ELBO over a dataset with a fixed noise stream.
inline double mean_loss(const VedModel& model, const Dataset& data, std::size_t latent_samples, std::uint64_t seed) {
    if (data.empty()) throw std::invalid_argument("mean_loss: empty dataset");
    Rng rng(seed, 0);
    ElboResult acc;
    Vector xi(latent_samples * model.latent_dim);
    for (const auto& r : data.records) {
        for (double& v : xi) v = rng.normal();
        elbo_accumulate(model, r.b, r.x, xi, 1.0, false, acc);
    }
    return acc.loss / static_cast<double>(data.size());
}

/// Minibatch ADAM on the negative ELBO. Minibatches are drawn epoch by epoch
/// from a seeded permutation; the loss is averaged over the minibatch.
inline TrainReport train(VedModel& model, const Dataset& data, const TrainConfig& cfg, Rng& rng,
                         const Dataset* validation = nullptr) {
    if (data.empty()) throw std::invalid_argument("train: dataset is empty");
    model.validate();
    if (data.m != model.observation_size() || data.q != model.qoi_size())
        throw ShapeMismatch("train: dataset shape does not match model");
    if (cfg.minibatch == 0 || cfg.latent_samples == 0) throw std::invalid_argument("train: minibatch and L must be >= 1");

    TrainReport rep;
    if (cfg.steps == 0) return rep;

    const std::size_t pe = model.encoder.parameter_count();
    const std::size_t pd = model.decoder.parameter_count();
    AdamState adam_e(pe), adam_d(pd);
    for (AdamState* a : {&adam_e, &adam_d}) {
        a->beta1 = cfg.beta1;
        a->beta2 = cfg.beta2;
        a->epsilon = cfg.epsilon;
    }

    const std::size_t n = data.size();
    const std::size_t batch = std::min(cfg.minibatch, n);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::size_t cursor = n;  // forces a shuffle on the first step
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;

    ElboResult acc;
    Vector xi(cfg.latent_samples * model.latent_dim);
    auto close_epoch = [&] {
        if (epoch_steps == 0) return;
        rep.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));
        if (validation && !validation->empty())
            rep.validation_loss.push_back(mean_loss(model, *validation, cfg.latent_samples, cfg.validation_seed));
        epoch_sum = 0.0;
        epoch_steps = 0;
    };

    for (std::uint64_t k = 0; k < cfg.steps; ++k) {
        if (cursor + batch > n) {
            close_epoch();
            shuffle(order, rng);
            cursor = 0;
        }
        acc.loss = acc.reconstruction = acc.kl = 0.0;
        acc.grad_encoder.assign(pe, 0.0);
        acc.grad_decoder.assign(pd, 0.0);
        const double w = 1.0 / static_cast<double>(batch);
        for (std::size_t j = 0; j < batch; ++j) {
            const auto& r = data.records[order[cursor + j]];
            for (double& v : xi) v = rng.normal();
            elbo_accumulate(model, r.b, r.x, xi, w, true, acc);
        }
        cursor += batch;
        if (!std::isfinite(acc.loss))
            throw Diverged("train: non-finite loss at step " + std::to_string(model.step));
        const double rate = lr_at(cfg.schedule, model.step);
        adam_step(adam_e, model.encoder.parameters(), acc.grad_encoder, rate);
        adam_step(adam_d, model.decoder.parameters(), acc.grad_decoder, rate);
        ++model.step;
        ++rep.steps_taken;
        rep.step_loss.push_back(acc.loss);
        epoch_sum += acc.loss;
        ++epoch_steps;
    }
    close_epoch();
    return rep;
}

// ---------------------------------------------------------------------------
// Posterior-predictive sampling

struct PredictiveSamples {
    Matrix samples;         // (L * kappa) x q, row l * kappa + k
    Matrix decoder_means;   // L x q, mu_d(z^l)
    std::string observation_id;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::size_t latent_draws = 0;  // L
    std::size_t per_latent = 0;    // kappa
};

/// L latent draws from the encoder distribution, then kappa output draws per
/// latent sample from the decoder distribution. All latent draws are taken
/// before any output noise, so the latent sequence does not depend on kappa.
inline PredictiveSamples sample_predictive(const VedModel& model, std::span<const double> b, std::size_t L,
                                           std::size_t kappa, Rng& rng, std::string observation_id = {}) {
    if (L == 0 || kappa == 0) throw std::invalid_argument("sample_predictive: L and kappa must be >= 1");
    const std::size_t q = model.qoi_size();
    PredictiveSamples out;
    out.samples = Matrix(L * kappa, q);
    out.decoder_means = Matrix(L, q);
    out.observation_id = std::move(observation_id);
    out.seed = rng.seed();
    out.stream = rng.stream();
    out.latent_draws = L;
    out.per_latent = kappa;

    const GaussianDiag enc = encode(model, b);
    std::vector<Vector> zs;
    zs.reserve(L);
    for (std::size_t l = 0; l < L; ++l) zs.push_back(reparameterize(enc, rng));
    for (std::size_t l = 0; l < L; ++l) {
        const GaussianDiag dec = decode(model, zs[l]);
        for (std::size_t j = 0; j < q; ++j) out.decoder_means(l, j) = dec.mean[j];
        for (std::size_t k = 0; k < kappa; ++k)
            for (std::size_t j = 0; j < q; ++j)
                out.samples(l * kappa + k, j) = dec.mean[j] + dec.stddev[j] * rng.normal();
    }
    return out;
}

/// Mean of the VED posterior predictive: average decoder mean over L latent draws.
inline Vector predictive_mean(const VedModel& model, std::span<const double> b, std::size_t L, Rng& rng) {
    if (L == 0) throw std::invalid_argument("predictive_mean: L must be >= 1");
    const GaussianDiag enc = encode(model, b);
    const std::size_t q = model.qoi_size();
    std::vector<Vector> zs;
    zs.reserve(L);
    for (std::size_t l = 0; l < L; ++l) zs.push_back(reparameterize(enc, rng));
    Vector mean(q, 0.0);
    for (const auto& z : zs) {
        const GaussianDiag dec = decode(model, z);
        for (std::size_t j = 0; j < q; ++j) mean[j] += dec.mean[j];
    }
    for (double& v : mean) v /= static_cast<double>(L);
    return mean;
}

struct Moments {
    Vector mean;
    Vector variance;                 // unbiased
    std::vector<double> probabilities;
    std::vector<Vector> quantiles;   // quantiles[p][coordinate]

    Vector stddev() const {
        Vector s(variance.size());
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::sqrt(variance[i]);
        return s;
    }
};

/// Linear interpolation between order statistics at h = (n - 1) p.
inline double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw TooFewSamples("quantile: no samples");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline Moments predictive_moments(const Matrix& samples, std::vector<double> probabilities = {0.01, 0.99}) {
    const std::size_t n = samples.rows();
    if (n < 2) throw TooFewSamples("predictive_moments: need at least 2 samples");
    const std::size_t q = samples.cols();
    Moments m;
    m.mean.assign(q, 0.0);
    m.variance.assign(q, 0.0);
    m.probabilities = std::move(probabilities);
    m.quantiles.assign(m.probabilities.size(), Vector(q, 0.0));
    Vector col(n);
    for (std::size_t j = 0; j < q; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = samples(i, j);
        double mean = 0.0;
        for (double v : col) mean += v;
        mean /= static_cast<double>(n);
        double ss = 0.0;
        for (double v : col) ss += (v - mean) * (v - mean);
        m.mean[j] = mean;
        m.variance[j] = ss / static_cast<double>(n - 1);
        std::sort(col.begin(), col.end());
        for (std::size_t p = 0; p < m.probabilities.size(); ++p)
            m.quantiles[p][j] = quantile_sorted(col, m.probabilities[p]);
    }
    return m;
}

inline Moments predictive_moments(const PredictiveSamples& s, std::vector<double> probabilities = {0.01, 0.99}) {
    return predictive_moments(s.samples, std::move(probabilities));
}

}  // namespace goved
