#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "obcs/sensing.hpp"

namespace obcs {

struct NoiseModel {
    enum class Kind { None, Iid, Full };
    Kind kind = Kind::None;
    double variance = 0.0;    // iid sigma^2
    DenseMatrix covariance;   // full model, m x m SPD

    static NoiseModel none() { return {}; }
    static NoiseModel iid(double sigma2) {
        NoiseModel nm;
        nm.kind = Kind::Iid;
        nm.variance = sigma2;
        return nm;
    }
    static NoiseModel full(DenseMatrix c) {
        NoiseModel nm;
        nm.kind = Kind::Full;
        nm.covariance = std::move(c);
        return nm;
    }
};

// Ground-truth sensing matrix. The wrapper type exists so recovery-side
// signatures cannot accidentally accept it: only data generation and the
// informed BIHT baseline unwrap it.
struct TrueMatrix {
    DenseMatrix value;
};

struct GenConfig {
    std::size_t n = 128;
    std::size_t m = 512;
    std::size_t sparsity = 5;  // K
    std::size_t pairs = 1000;  // B
    NoiseModel noise;
    bool normalize_signals = true;
    DenseVector tau;  // empty = zero threshold
    std::uint64_t seed = 0;

    DenseVector expanded_tau() const {
        if (tau.empty()) return DenseVector(m, 0.0);
        if (tau.size() == 1) return DenseVector(m, tau[0]);
        if (tau.size() != m) throw DimensionMismatch("GenConfig: len(tau) != m");
        return tau;
    }
};

struct Dataset {
    std::vector<SparseSignal> signals;
    std::vector<OneBitMeasurements> measurements;
    TrueMatrix true_phi;
    DenseVector threshold;
    GenConfig config;  // includes noise model and seed

    std::size_t size() const { return signals.size(); }
};

// What the learner is allowed to see: input-output pairs and the threshold.
// No member carries the true sensing matrix.
struct TrainingSet {
    std::span<const SparseSignal> signals;
    std::span<const OneBitMeasurements> measurements;
    DenseVector threshold;
    std::size_t n = 0;
    std::size_t m = 0;

    std::size_t size() const { return signals.size(); }
};

inline TrainingSet training_view(const Dataset& ds, std::size_t begin, std::size_t end) {
    if (begin > end || end > ds.size()) throw DimensionMismatch("training_view: bad slice");
    TrainingSet ts;
    ts.signals = std::span<const SparseSignal>(ds.signals).subspan(begin, end - begin);
    ts.measurements =
        std::span<const OneBitMeasurements>(ds.measurements).subspan(begin, end - begin);
    ts.threshold = ds.threshold;
    ts.n = ds.config.n;
    ts.m = ds.config.m;
    return ts;
}

inline TrainingSet training_view(const Dataset& ds) { return training_view(ds, 0, ds.size()); }

// Support drawn uniformly without replacement, nonzeros i.i.d. N(0,1),
// optional scaling to unit l2 norm.
inline SparseSignal gen_sparse_signal(std::size_t n, std::size_t k, bool normalize,
                                      SeededRng& rng) {
    if (k < 1 || k > n) throw InvalidSparsity("gen_sparse_signal: need 1 <= K <= n");
    // Partial Fisher-Yates: the first k slots become the support.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.next_index(n - i);
        std::swap(idx[i], idx[j]);
    }
    SparseSignal s;
    s.values.assign(n, 0.0);
    s.sparsity_bound = k;
    for (std::size_t i = 0; i < k; ++i) s.values[idx[i]] = rng.normal();
    if (normalize) s.values = l2_normalize(s.values);
    return s;
}

inline DenseMatrix gen_sensing_matrix(std::size_t m, std::size_t n, SeededRng& rng) {
    DenseMatrix phi(m, n);
    for (double& e : phi.data()) e = rng.normal();
    return phi;
}

namespace detail {

// Shared draw path so gen_noise and gen_dataset consume the stream
// identically; factor == nullptr covers the none/iid kinds.
inline DenseVector draw_noise(const NoiseModel& model, std::size_t m, SeededRng& rng,
                              const DenseMatrix* factor) {
    switch (model.kind) {
        case NoiseModel::Kind::None:
            return DenseVector(m, 0.0);
        case NoiseModel::Kind::Iid: {
            DenseVector out(m);
            const double sigma = std::sqrt(model.variance);
            for (double& x : out) x = sigma * rng.normal();
            return out;
        }
        case NoiseModel::Kind::Full: {
            DenseVector g(m);
            rng.fill_normal(g);
            DenseVector out(m, 0.0);
            // L g with lower-triangular L.
            for (std::size_t i = 0; i < m; ++i) {
                const double* row = factor->row(i);
                double s = 0.0;
                for (std::size_t j = 0; j <= i; ++j) s += row[j] * g[j];
                out[i] = s;
            }
            return out;
        }
    }
    return DenseVector(m, 0.0);
}

}  // namespace detail

inline DenseVector gen_noise(const NoiseModel& model, std::size_t m, SeededRng& rng) {
    if (model.kind == NoiseModel::Kind::Full) {
        if (model.covariance.rows() != m || model.covariance.cols() != m)
            throw DimensionMismatch("gen_noise: covariance is not m x m");
        const DenseMatrix factor = cholesky_lower(model.covariance);
        return detail::draw_noise(model, m, rng, &factor);
    }
    return detail::draw_noise(model, m, rng, nullptr);
}

// The true matrix is the first thing drawn from the dataset stream, so it can
// be regenerated from the recorded config alone.
inline DenseMatrix regen_true_phi(const GenConfig& cfg) {
    SeededRng rng(derive_seed(cfg.seed, 0));
    return gen_sensing_matrix(cfg.m, cfg.n, rng);
}

// One true matrix, then B pairs (fresh signal and fresh noise each), each
// quantized to one-bit measurements.
inline Dataset gen_dataset(const GenConfig& cfg) {
    if (cfg.sparsity < 1 || cfg.sparsity > cfg.n)
        throw InvalidSparsity("gen_dataset: need 1 <= K <= n");
    if (cfg.m < 1 || cfg.pairs < 1) throw DimensionMismatch("gen_dataset: need m >= 1, B >= 1");

    Dataset ds;
    ds.config = cfg;
    ds.threshold = cfg.expanded_tau();

    SeededRng rng(derive_seed(cfg.seed, 0));
    ds.true_phi.value = gen_sensing_matrix(cfg.m, cfg.n, rng);

    const DenseMatrix* factor = nullptr;
    DenseMatrix chol;
    if (cfg.noise.kind == NoiseModel::Kind::Full) {
        if (cfg.noise.covariance.rows() != cfg.m || cfg.noise.covariance.cols() != cfg.m)
            throw DimensionMismatch("gen_dataset: covariance is not m x m");
        chol = cholesky_lower(cfg.noise.covariance);
        factor = &chol;
    }

    ds.signals.reserve(cfg.pairs);
    ds.measurements.reserve(cfg.pairs);
    for (std::size_t i = 0; i < cfg.pairs; ++i) {
        SparseSignal x = gen_sparse_signal(cfg.n, cfg.sparsity, cfg.normalize_signals, rng);
        const DenseVector noise = detail::draw_noise(cfg.noise, cfg.m, rng, factor);
        ds.measurements.push_back(
            quantize_one_bit(ds.true_phi.value, x.values, ds.threshold, &noise));
        ds.signals.push_back(std::move(x));
    }
    return ds;
}

}  // namespace obcs
