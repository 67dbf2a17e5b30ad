#pragma once

// (b, x) pair container shared by every problem, and its on-disk format:
// one line of JSON header followed by little-endian float64 records.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "goved/neural.hpp"
#include "goved/numerics.hpp"
#include "json.hpp"

namespace goved {

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr const char* kGeneratorVersion = "goved-gen 1.0";

struct Record {
    Vector b;
    Vector x;
    std::uint64_t stream = 0;  // Rng stream the record was generated from
    double noise_level = 0.0;  // percent for ct, sigma_n for hydro, noise std for lingauss
};

struct Dataset {
    std::string problem_id;
    std::size_t m = 0;
    std::size_t q = 0;
    std::uint64_t seed = 0;
    std::array<double, 2> noise_range{0.0, 0.0};
    nlohmann::json meta = nlohmann::json::object();
    std::vector<Record> records;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    void add(Record r) {
        if (r.b.size() != m || r.x.size() != q) throw ShapeMismatch("Dataset::add: record shape does not match dataset");
        records.push_back(std::move(r));
    }

    Dataset subset(std::span<const std::size_t> indices) const {
        Dataset out = *this;
        out.records.clear();
        for (auto i : indices) out.records.push_back(records.at(i));
        return out;
    }
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

/// Seeded shuffle, first `train_fraction` of the permutation for training.
inline Split split_indices(std::size_t n, double train_fraction, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    shuffle(idx, rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    n_train = std::min(n, std::max<std::size_t>(n_train, n > 1 ? 1 : n));
    Split s;
    s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    return s;
}

inline nlohmann::json dataset_header(const Dataset& d) {
    return {{"format", "goved-dataset"},
            {"schema_version", kDatasetSchemaVersion},
            {"generator_version", kGeneratorVersion},
            {"problem_id", d.problem_id},
            {"m", d.m},
            {"q", d.q},
            {"records", d.records.size()},
            {"seed", d.seed},
            {"noise_range", {d.noise_range[0], d.noise_range[1]}},
            {"record_layout", "u64 stream, f64 noise_level, f64[m] b, f64[q] x"},
            {"meta", d.meta}};
}

inline void write_dataset(std::ostream& os, const Dataset& d) {
    os << dataset_header(d).dump() << '\n';
    for (const auto& r : d.records) {
        detail::write_le<std::uint64_t>(os, r.stream);
        detail::write_le<double>(os, r.noise_level);
        for (double v : r.b) detail::write_le<double>(os, v);
        for (double v : r.x) detail::write_le<double>(os, v);
    }
}

inline Dataset read_dataset(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("dataset: missing header");
    const auto h = nlohmann::json::parse(line);
    if (h.value("format", "") != "goved-dataset") throw std::runtime_error("dataset: not a goved dataset");
    if (h.at("schema_version").get<int>() != kDatasetSchemaVersion)
        throw std::runtime_error("dataset: unsupported schema version");
    Dataset d;
    d.problem_id = h.at("problem_id").get<std::string>();
    d.m = h.at("m").get<std::size_t>();
    d.q = h.at("q").get<std::size_t>();
    d.seed = h.at("seed").get<std::uint64_t>();
    d.noise_range = {h.at("noise_range")[0].get<double>(), h.at("noise_range")[1].get<double>()};
    d.meta = h.value("meta", nlohmann::json::object());
    const auto n = h.at("records").get<std::size_t>();
    d.records.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        Record r;
        r.stream = detail::read_le<std::uint64_t>(is);
        r.noise_level = detail::read_le<double>(is);
        r.b.resize(d.m);
        r.x.resize(d.q);
        for (double& v : r.b) v = detail::read_le<double>(is);
        for (double& v : r.x) v = detail::read_le<double>(is);
        d.records.push_back(std::move(r));
    }
    return d;
}

inline void save_dataset(const std::string& path, const Dataset& d) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("dataset: cannot open " + path);
    write_dataset(os, d);
    if (!os) throw std::runtime_error("dataset: write failed for " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("dataset: cannot open " + path);
    return read_dataset(is);
}

}  // namespace goved
