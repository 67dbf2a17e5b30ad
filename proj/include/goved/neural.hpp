#pragma once

// Dense feed-forward networks with hand-written backpropagation, the ADAM
// optimizer, learning-rate schedules and the binary checkpoint format.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "goved/numerics.hpp"

namespace goved {

enum class Activation : std::uint8_t { identity = 0, relu = 1, tanh = 2 };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        default: return "identity";
    }
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity" || s == "linear") return Activation::identity;
    throw std::invalid_argument("unknown activation: " + s);
}

inline double activate(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::tanh: return std::tanh(z);
        default: return z;
    }
}

/// Derivative expressed through the pre-activation z and output a = s(z).
inline double activate_derivative(Activation a, double z, double out) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::tanh: return 1.0 - out * out;
        default: return 1.0;
    }
}

/// Fully connected network b_k = s_k(W_k b_{k-1} + d_k). The last layer is
/// linear without bias. All parameters live in one flat vector so the
/// optimizer can treat them as a single theta.
class DenseNet {
public:
    struct LayerView {
        std::size_t in = 0, out = 0;
        std::size_t weight_offset = 0;  // row-major out x in
        std::size_t bias_offset = 0;    // meaningless when !has_bias
        bool has_bias = false;
        Activation activation = Activation::identity;
    };

    DenseNet() = default;

    /// `sizes` = r_0..r_{K+1}; `hidden` is the activation of every hidden layer.
    DenseNet(std::vector<std::size_t> sizes, Activation hidden)
        : DenseNet(sizes, std::vector<Activation>(sizes.size() >= 2 ? sizes.size() - 2 : 0, hidden)) {}

    DenseNet(std::vector<std::size_t> sizes, std::vector<Activation> hidden_activations)
        : sizes_(std::move(sizes)) {
        if (sizes_.size() < 2) throw ShapeMismatch("DenseNet: need at least input and output sizes");
        if (hidden_activations.size() != sizes_.size() - 2)
            throw ShapeMismatch("DenseNet: one activation per hidden layer");
        std::size_t offset = 0;
        for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) {
            LayerView l;
            l.in = sizes_[k];
            l.out = sizes_[k + 1];
            if (l.in == 0 || l.out == 0) throw ShapeMismatch("DenseNet: zero layer width");
            l.weight_offset = offset;
            offset += l.in * l.out;
            const bool output_layer = k + 2 == sizes_.size();
            l.has_bias = !output_layer;
            if (l.has_bias) {
                l.bias_offset = offset;
                offset += l.out;
            }
            l.activation = output_layer ? Activation::identity : hidden_activations[k];
            layers_.push_back(l);
        }
        theta_.assign(offset, 0.0);
    }

    std::size_t input_size() const { return sizes_.front(); }
    std::size_t output_size() const { return sizes_.back(); }
    const std::vector<std::size_t>& sizes() const { return sizes_; }
    const std::vector<LayerView>& layers() const { return layers_; }
    std::size_t parameter_count() const { return theta_.size(); }

    std::span<double> parameters() { return theta_; }
    std::span<const double> parameters() const { return theta_; }

    double& weight(std::size_t layer, std::size_t i, std::size_t j) {
        const auto& l = layers_.at(layer);
        return theta_[l.weight_offset + i * l.in + j];
    }
    double& bias(std::size_t layer, std::size_t i) {
        const auto& l = layers_.at(layer);
        if (!l.has_bias) throw std::out_of_range("DenseNet: output layer has no bias");
        return theta_[l.bias_offset + i];
    }

    /// He-normal weights for ReLU layers, Glorot-normal otherwise; zero biases.
    void initialize(Rng& rng) {
        std::fill(theta_.begin(), theta_.end(), 0.0);
        for (const auto& l : layers_) {
            const double var = l.activation == Activation::relu ? 2.0 / static_cast<double>(l.in)
                                                                : 2.0 / static_cast<double>(l.in + l.out);
            const double sd = std::sqrt(var);
            for (std::size_t i = 0; i < l.in * l.out; ++i) theta_[l.weight_offset + i] = sd * rng.normal();
        }
    }

    bool operator==(const DenseNet& o) const {
        return sizes_ == o.sizes_ && theta_ == o.theta_ && activations() == o.activations();
    }

    std::vector<Activation> activations() const {
        std::vector<Activation> a;
        for (std::size_t k = 0; k + 1 < layers_.size(); ++k) a.push_back(layers_[k].activation);
        return a;
    }

private:
    std::vector<std::size_t> sizes_;
    std::vector<LayerView> layers_;
    Vector theta_;
};

/// Per-layer inputs and pre-activations saved by forward() for backward().
struct ForwardCache {
    std::vector<Vector> inputs;          // b_{k-1}
    std::vector<Vector> preactivations;  // W_k b_{k-1} + d_k
    std::vector<Vector> outputs;         // b_k
};

struct ForwardResult {
    Vector output;
    ForwardCache cache;
};

inline ForwardResult forward(const DenseNet& net, std::span<const double> input) {
    if (input.size() != net.input_size()) throw ShapeMismatch("forward: input length does not match r_0");
    const auto theta = net.parameters();
    ForwardResult res;
    Vector a(input.begin(), input.end());
    for (const auto& l : net.layers()) {
        Vector z(l.out);
        for (std::size_t i = 0; i < l.out; ++i) {
            const double* w = theta.data() + l.weight_offset + i * l.in;
            double s = l.has_bias ? theta[l.bias_offset + i] : 0.0;
            for (std::size_t j = 0; j < l.in; ++j) s += w[j] * a[j];
            z[i] = s;
        }
        Vector out(l.out);
        for (std::size_t i = 0; i < l.out; ++i) out[i] = activate(l.activation, z[i]);
        res.cache.inputs.push_back(std::move(a));
        res.cache.preactivations.push_back(std::move(z));
        res.cache.outputs.push_back(out);
        a = std::move(out);
    }
    res.output = std::move(a);
    return res;
}

/// Output only, no cache.
inline Vector evaluate(const DenseNet& net, std::span<const double> input) {
    if (input.size() != net.input_size()) throw ShapeMismatch("evaluate: input length does not match r_0");
    const auto theta = net.parameters();
    Vector a(input.begin(), input.end()), next;
    for (const auto& l : net.layers()) {
        next.assign(l.out, 0.0);
        for (std::size_t i = 0; i < l.out; ++i) {
            const double* w = theta.data() + l.weight_offset + i * l.in;
            double s = l.has_bias ? theta[l.bias_offset + i] : 0.0;
            for (std::size_t j = 0; j < l.in; ++j) s += w[j] * a[j];
            next[i] = activate(l.activation, s);
        }
        std::swap(a, next);
    }
    return a;
}

struct Gradients {
    Vector parameters;  // same layout as DenseNet::parameters()
    Vector input;
};

/// Accumulates dLoss/dtheta into `param_grad` (must be parameter_count long)
/// and returns dLoss/dinput.
inline Vector backward_accumulate(const DenseNet& net, const ForwardCache& cache, std::span<const double> output_grad,
                                  std::span<double> param_grad) {
    const auto& layers = net.layers();
    if (cache.inputs.size() != layers.size()) throw ShapeMismatch("backward: cache does not match network");
    if (output_grad.size() != net.output_size()) throw ShapeMismatch("backward: output gradient length");
    if (param_grad.size() != net.parameter_count()) throw ShapeMismatch("backward: gradient buffer length");
    const auto theta = net.parameters();
    Vector delta(output_grad.begin(), output_grad.end());
    for (std::size_t kk = layers.size(); kk-- > 0;) {
        const auto& l = layers[kk];
        const Vector& z = cache.preactivations[kk];
        const Vector& out = cache.outputs[kk];
        const Vector& a = cache.inputs[kk];
        for (std::size_t i = 0; i < l.out; ++i) delta[i] *= activate_derivative(l.activation, z[i], out[i]);
        Vector prev(l.in, 0.0);
        for (std::size_t i = 0; i < l.out; ++i) {
            const double di = delta[i];
            if (di == 0.0) continue;
            double* gw = param_grad.data() + l.weight_offset + i * l.in;
            const double* w = theta.data() + l.weight_offset + i * l.in;
            for (std::size_t j = 0; j < l.in; ++j) {
                gw[j] += di * a[j];
                prev[j] += w[j] * di;
            }
            if (l.has_bias) param_grad[l.bias_offset + i] += di;
        }
        delta = std::move(prev);
    }
    return delta;
}

inline Gradients backward(const DenseNet& net, const ForwardCache& cache, std::span<const double> output_grad) {
    Gradients g;
    g.parameters.assign(net.parameter_count(), 0.0);
    g.input = backward_accumulate(net, cache, output_grad, g.parameters);
    return g;
}

// ---------------------------------------------------------------------------
// ADAM

struct AdamState {
    Vector m;
    Vector v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    AdamState() = default;
    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected ADAM update of theta in place.
inline void adam_step(AdamState& s, std::span<double> theta, std::span<const double> grad, double rate) {
    if (theta.size() != grad.size() || s.m.size() != theta.size() || s.v.size() != theta.size())
        throw ShapeMismatch("adam_step: lengths differ");
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grad[i];
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
        const double mhat = s.m[i] / c1;
        const double vhat = s.v[i] / c2;
        theta[i] -= rate * mhat / (std::sqrt(vhat) + s.epsilon);
    }
}

// ---------------------------------------------------------------------------
// Learning-rate schedule

enum class ScheduleMode { constant, cosine, exponential };

inline ScheduleMode schedule_mode_from_string(const std::string& s) {
    if (s == "constant") return ScheduleMode::constant;
    if (s == "cosine") return ScheduleMode::cosine;
    if (s == "exponential") return ScheduleMode::exponential;
    throw std::invalid_argument("unknown schedule mode: " + s);
}

struct LrSchedule {
    double initial = 5e-2;
    double final = 1e-4;
    std::uint64_t total_steps = 1;
    ScheduleMode mode = ScheduleMode::cosine;
};

inline double lr_at(const LrSchedule& s, std::uint64_t step) {
    if (s.mode == ScheduleMode::constant || s.total_steps == 0) return s.initial;
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(s.total_steps));
    double rate;
    if (s.mode == ScheduleMode::cosine)
        rate = s.final + (s.initial - s.final) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    else
        rate = s.initial * std::pow(s.final / s.initial, t);
    return std::clamp(rate, std::min(s.final, s.initial), std::max(s.final, s.initial));
}

// ---------------------------------------------------------------------------
// Checkpoint blob: "GOVED01", u32 layer count, u32 sizes[], u8 activations of
// the hidden layers, u64 parameter count, f64 parameters. All little-endian.

inline constexpr std::array<char, 7> kNetMagic{'G', 'O', 'V', 'E', 'D', '0', '1'};

namespace detail {

template <class T>
void write_le(std::ostream& os, T value) {
    std::uint64_t bits = 0;
    static_assert(sizeof(T) <= 8);
    std::memcpy(&bits, &value, sizeof(T));
    char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(buf, sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw std::runtime_error("checkpoint: truncated stream");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
}

}  // namespace detail

inline void write_net(std::ostream& os, const DenseNet& net) {
    os.write(kNetMagic.data(), kNetMagic.size());
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(net.sizes().size()));
    for (auto s : net.sizes()) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s));
    for (auto a : net.activations()) detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(a));
    detail::write_le<std::uint64_t>(os, net.parameter_count());
    for (double v : net.parameters()) detail::write_le<double>(os, v);
}

inline DenseNet read_net(std::istream& is) {
    std::array<char, 7> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kNetMagic)
        throw std::runtime_error("checkpoint: bad magic bytes");
    const auto count = detail::read_le<std::uint32_t>(is);
    if (count < 2 || count > 1024) throw std::runtime_error("checkpoint: implausible layer count");
    std::vector<std::size_t> sizes(count);
    for (auto& s : sizes) s = detail::read_le<std::uint32_t>(is);
    std::vector<Activation> acts(count - 2);
    for (auto& a : acts) {
        const auto tag = detail::read_le<std::uint8_t>(is);
        if (tag > 2) throw std::runtime_error("checkpoint: unknown activation tag");
        a = static_cast<Activation>(tag);
    }
    DenseNet net(sizes, acts);
    const auto n = detail::read_le<std::uint64_t>(is);
    if (n != net.parameter_count()) throw std::runtime_error("checkpoint: parameter count does not match layer sizes");
    for (double& v : net.parameters()) v = detail::read_le<double>(is);
    return net;
}

}  // namespace goved
