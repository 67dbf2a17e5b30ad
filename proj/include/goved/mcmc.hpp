#pragma once

// pCN sampling over KL coefficients with a standard-normal prior, the hydro
// likelihood, and chain diagnostics (ACF, ESS, ergodic averages).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "goved/hydro_problem.hpp"
#include "goved/numerics.hpp"
#include "goved/parallel.hpp"
#include "json.hpp"

namespace goved {

struct TooShort : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct EmptyChain : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline constexpr int kMcmcSchemaVersion = 1;

using LogLikelihood = std::function<double(std::span<const double>)>;

// ---------------------------------------------------------------------------
// Likelihood

/// -||b - F(x)||^2 / (2 sigma_n^2), F = measurements of the thresholded KL field.
inline double hydro_log_likelihood(std::span<const double> x, std::span<const double> b, const HydroModel& model,
                                   double sigma_n) {
    if (x.size() != model.basis.size()) throw ShapeMismatch("hydro_log_likelihood: coefficient length");
    if (b.size() != model.wells.measurement_count()) throw ShapeMismatch("hydro_log_likelihood: data length");
    if (!(sigma_n > 0.0)) throw std::invalid_argument("hydro_log_likelihood: sigma_n must be positive");
    const Vector f = hydro_forward_clean(model.grid, model.wells, hydro_conductivity(model, x));
    double r = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) r += (b[i] - f[i]) * (b[i] - f[i]);
    return -r / (2.0 * sigma_n * sigma_n);
}

inline LogLikelihood make_hydro_likelihood(const HydroModel& model, Vector b, double sigma_n) {
    return [&model, b = std::move(b), sigma_n](std::span<const double> x) { return hydro_log_likelihood(x, b, model, sigma_n); };
}

// ---------------------------------------------------------------------------
// pCN

struct PcnState {
    Vector x;
    double log_likelihood = 0.0;
};

/// One pCN move. Accepts with probability min(1, exp(ll(x') - ll(x))); uphill
/// moves in likelihood are always accepted.
inline bool pcn_step(PcnState& s, double beta, const LogLikelihood& loglik, Rng& rng) {
    if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("pcn_step: beta must be in (0, 1]");
    const double keep = std::sqrt(1.0 - beta * beta);
    Vector prop(s.x.size());
    for (std::size_t i = 0; i < prop.size(); ++i) prop[i] = keep * s.x[i] + beta * rng.normal();
    const double ll = loglik(prop);
    const double log_ratio = ll - s.log_likelihood;
    const bool accept = log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio;
    if (accept) {
        s.x = std::move(prop);
        s.log_likelihood = ll;
    }
    return accept;
}

struct PcnStepResult {
    Vector x;
    bool accepted = false;
};

inline PcnStepResult pcn_step(std::span<const double> x, double beta, const LogLikelihood& loglik, Rng& rng) {
    PcnState s{Vector(x.begin(), x.end()), loglik(x)};
    const bool a = pcn_step(s, beta, loglik, rng);
    return {std::move(s.x), a};
}

struct PcnConfig {
    std::size_t steps = 1000;
    double beta = 0.2;
    bool auto_tune = true;
    double target_acceptance = 0.25;
    double burn_in_fraction = 0.25;
    std::size_t adapt_interval = 50;  // steps between beta updates during burn-in
    std::size_t thin = 1;
};

struct Chain {
    Matrix samples;                   // one stored state per row
    std::vector<std::uint8_t> accepted;  // per stored row: whether the move into it was accepted
    std::vector<double> betas;           // beta used for the move into each stored row
    std::size_t acceptance_count = 0;    // over all steps
    std::size_t steps = 0;
    double beta = 0.0;                   // final (frozen) step size
    std::size_t burn_in = 0;             // first post-burn-in row

    std::size_t length() const { return samples.rows(); }
    std::size_t dimension() const { return samples.cols(); }
    std::size_t post_burn_in() const { return length() - burn_in; }

    double acceptance_rate() const {
        std::size_t a = 0;
        for (std::size_t i = burn_in; i < accepted.size(); ++i) a += accepted[i];
        return post_burn_in() == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(post_burn_in());
    }

    /// Coordinate j over the post-burn-in rows.
    Vector coordinate(std::size_t j) const {
        Vector c(post_burn_in());
        for (std::size_t i = burn_in; i < length(); ++i) c[i - burn_in] = samples(i, j);
        return c;
    }

    Matrix post_burn_in_samples() const {
        Matrix m(post_burn_in(), dimension());
        for (std::size_t i = burn_in; i < length(); ++i)
            for (std::size_t j = 0; j < dimension(); ++j) m(i - burn_in, j) = samples(i, j);
        return m;
    }
};

/// Runs `cfg.steps` moves from x0 (x0 itself is not stored). With auto-tuning,
/// log beta follows a Robbins-Monro update toward the target acceptance once
/// per adapt interval during burn-in and is frozen afterwards.
inline Chain run_pcn(std::span<const double> x0, const PcnConfig& cfg, const LogLikelihood& loglik, Rng& rng) {
    if (cfg.steps == 0) throw std::invalid_argument("run_pcn: steps must be >= 1");
    if (cfg.thin == 0) throw std::invalid_argument("run_pcn: thin must be >= 1");
    if (!(cfg.burn_in_fraction >= 0.0 && cfg.burn_in_fraction < 1.0))
        throw std::invalid_argument("run_pcn: burn-in fraction must be in [0, 1)");
    const auto burn_steps = static_cast<std::size_t>(std::floor(cfg.burn_in_fraction * static_cast<double>(cfg.steps)));
    const std::size_t rows = cfg.steps / cfg.thin;

    Chain c;
    c.samples = Matrix(rows, x0.size());
    c.steps = cfg.steps;
    c.burn_in = std::min(burn_steps / cfg.thin, rows > 0 ? rows - 1 : 0);
    PcnState s{Vector(x0.begin(), x0.end()), loglik(x0)};
    double beta = cfg.beta;
    std::size_t window_accepts = 0, window = 0, adaptations = 0;
    bool moved_since_store = false;
    for (std::size_t t = 0; t < cfg.steps; ++t) {
        const double used = beta;
        const bool a = pcn_step(s, beta, loglik, rng);
        c.acceptance_count += a;
        moved_since_store = moved_since_store || a;
        if (cfg.auto_tune && t < burn_steps) {
            window_accepts += a;
            if (++window == cfg.adapt_interval) {
                const double rate = static_cast<double>(window_accepts) / static_cast<double>(window);
                ++adaptations;
                beta *= std::exp((rate - cfg.target_acceptance) / std::sqrt(static_cast<double>(adaptations)));
                beta = std::clamp(beta, 1e-4, 1.0);
                window = window_accepts = 0;
            }
        }
        if ((t + 1) % cfg.thin == 0) {
            const std::size_t r = (t + 1) / cfg.thin - 1;
            for (std::size_t j = 0; j < s.x.size(); ++j) c.samples(r, j) = s.x[j];
            c.accepted.push_back(moved_since_store ? 1 : 0);
            c.betas.push_back(used);
            moved_since_store = false;
        }
    }
    c.beta = beta;
    return c;
}

/// Independent chains on streams 0..count-1 of `seed`.
inline std::vector<Chain> run_pcn_chains(std::size_t count, std::span<const double> x0, const PcnConfig& cfg,
                                         const LogLikelihood& loglik, std::uint64_t seed, unsigned workers = 0) {
    std::vector<Chain> out(count);
    parallel_for(
        count,
        [&](std::size_t k) {
            Rng rng(seed, k);
            out[k] = run_pcn(x0, cfg, loglik, rng);
        },
        workers == 0 ? worker_count() : workers);
    return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Biased estimator: acf(k) = sum_t (x_t - m)(x_{t+k} - m) / sum_t (x_t - m)^2.
/// A constant series is perfectly correlated at every lag.
inline Vector acf(std::span<const double> series, std::size_t max_lag) {
    const std::size_t n = series.size();
    if (n <= max_lag) throw TooShort("acf: series length must exceed max lag");
    double m = 0.0;
    for (double v : series) m += v;
    m /= static_cast<double>(n);
    Vector c(n);
    double c0 = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        c[t] = series[t] - m;
        c0 += c[t] * c[t];
    }
    Vector out(max_lag + 1, 1.0);
    if (c0 == 0.0) return out;
    for (std::size_t k = 1; k <= max_lag; ++k) {
        double s = 0.0;
        for (std::size_t t = 0; t + k < n; ++t) s += c[t] * c[t + k];
        out[k] = s / c0;
    }
    return out;
}

/// N / tau with tau = -1 + 2 sum_m Gamma_m, Gamma_m = rho(2m) + rho(2m+1),
/// summed while Gamma_m stays positive (Geyer's initial positive sequence).
/// Capped at N; a constant series has ESS 1.
inline double ess(std::span<const double> series) {
    const std::size_t n = series.size();
    if (n < 100) throw TooShort("ess: need at least 100 samples");
    double m = 0.0;
    for (double v : series) m += v;
    m /= static_cast<double>(n);
    Vector c(n);
    double c0 = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        c[t] = series[t] - m;
        c0 += c[t] * c[t];
    }
    if (c0 == 0.0) return 1.0;
    auto rho = [&](std::size_t k) {
        double s = 0.0;
        for (std::size_t t = 0; t + k < n; ++t) s += c[t] * c[t + k];
        return s / c0;
    };
    double sum = 0.0;
    for (std::size_t k = 0; k + 1 < n; k += 2) {
        const double g = (k == 0 ? 1.0 : rho(k)) + rho(k + 1);
        if (!(g > 0.0)) break;
        sum += g;
    }
    const double tau = std::max(-1.0 + 2.0 * sum, 1.0);
    return std::min(static_cast<double>(n) / tau, static_cast<double>(n));
}

/// (1 / N) sum_j f(x^j) per coordinate over post-burn-in rows.
inline Vector ergodic_estimate(const Chain& chain, const std::function<double(double)>& f) {
    if (chain.post_burn_in() == 0) throw EmptyChain("ergodic_estimate: no samples after burn-in");
    Vector out(chain.dimension(), 0.0);
    for (std::size_t i = chain.burn_in; i < chain.length(); ++i)
        for (std::size_t j = 0; j < chain.dimension(); ++j) out[j] += f(chain.samples(i, j));
    for (double& v : out) v /= static_cast<double>(chain.post_burn_in());
    return out;
}

inline Vector ergodic_mean(const Chain& chain) {
    return ergodic_estimate(chain, [](double v) { return v; });
}

/// Two-pass (1 / N) sum_j (x^j - mean)^2.
inline Vector ergodic_variance(const Chain& chain) {
    const Vector mean = ergodic_mean(chain);
    Vector out(chain.dimension(), 0.0);
    for (std::size_t i = chain.burn_in; i < chain.length(); ++i)
        for (std::size_t j = 0; j < chain.dimension(); ++j) out[j] += std::pow(chain.samples(i, j) - mean[j], 2);
    for (double& v : out) v /= static_cast<double>(chain.post_burn_in());
    return out;
}

/// Empirical quantile p of each coordinate over post-burn-in rows.
inline Vector ergodic_quantile(const Chain& chain, double p) {
    if (chain.post_burn_in() == 0) throw EmptyChain("ergodic_quantile: no samples after burn-in");
    Vector out(chain.dimension());
    for (std::size_t j = 0; j < chain.dimension(); ++j) {
        Vector c = chain.coordinate(j);
        std::sort(c.begin(), c.end());
        const double pos = p * static_cast<double>(c.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, c.size() - 1);
        out[j] = c[lo] + (pos - static_cast<double>(lo)) * (c[hi] - c[lo]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Export

inline void write_chain_csv(std::ostream& os, const Chain& chain) {
    os.precision(17);
    os << "step";
    for (std::size_t j = 0; j < chain.dimension(); ++j) os << ",x_" << j + 1;
    os << ",accepted\n";
    for (std::size_t i = 0; i < chain.length(); ++i) {
        os << i + 1;
        for (std::size_t j = 0; j < chain.dimension(); ++j) os << ',' << chain.samples(i, j);
        os << ',' << static_cast<int>(chain.accepted[i]) << '\n';
    }
}

/// Columns lag, acf_x_1.. on post-burn-in rows; max_lag is clipped to the chain length.
inline void write_acf_csv(std::ostream& os, const Chain& chain, std::size_t max_lag) {
    if (chain.post_burn_in() < 2) throw TooShort("write_acf_csv: chain too short");
    max_lag = std::min(max_lag, chain.post_burn_in() - 1);
    std::vector<Vector> cols;
    for (std::size_t j = 0; j < chain.dimension(); ++j) cols.push_back(acf(chain.coordinate(j), max_lag));
    os.precision(17);
    os << "lag";
    for (std::size_t j = 0; j < chain.dimension(); ++j) os << ",acf_x_" << j + 1;
    os << '\n';
    for (std::size_t k = 0; k <= max_lag; ++k) {
        os << k;
        for (const auto& c : cols) os << ',' << c[k];
        os << '\n';
    }
}

inline nlohmann::json chain_summary(const Chain& chain) {
    nlohmann::json e = nlohmann::json::array();
    for (std::size_t j = 0; j < chain.dimension(); ++j) {
        const Vector c = chain.coordinate(j);
        e.push_back(c.size() >= 100 ? ess(c) : static_cast<double>(c.size()));
    }
    return {{"schema_version", kMcmcSchemaVersion},
            {"steps", chain.steps},
            {"stored", chain.length()},
            {"burn_in", chain.burn_in},
            {"beta", chain.beta},
            {"acceptance_rate", chain.acceptance_rate()},
            {"acceptance_count", chain.acceptance_count},
            {"ess", e},
            {"mean", ergodic_mean(chain)},
            {"variance", ergodic_variance(chain)}};
}

}  // namespace goved
