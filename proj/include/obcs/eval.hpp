#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "obcs/training.hpp"

namespace obcs {

// Squared distance between the unit-normalized estimate and truth. One-bit
// measurements at zero threshold carry no amplitude, so the metric is defined
// on directions; range [0, 4] for nonzero arguments.
inline double nmse(const DenseVector& estimate, const DenseVector& truth) {
    if (estimate.size() != truth.size()) throw DimensionMismatch("nmse: length mismatch");
    const double tn = norm2(truth);
    if (tn == 0.0) throw ZeroTruth("nmse: truth vector is zero");
    const double en = norm2(estimate);
    double d2 = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double e = en > 0.0 ? estimate[i] / en : 0.0;
        const double d = e - truth[i] / tn;
        d2 += d * d;
    }
    return d2;
}

struct BaselineConfig {
    double alpha = 0.0;  // <= 0 resolves to 1/m
    bool normalize = true;
};

struct ExperimentConfig {
    GenConfig gen;  // gen.pairs is ignored; train_pairs + test_pairs are drawn
    std::size_t train_pairs = 1000;
    std::size_t test_pairs = 200;
    TrainingConfig stage1;
    TrainingConfig stage2;
    BaselineConfig biht;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

struct ExperimentResult {
    std::vector<double> axis;          // layer index (1-based) or sparsity K
    std::vector<std::string> methods;  // {"unfolded", "biht"}
    std::vector<std::vector<double>> mean_nmse;  // [method][axis]
    struct RawRow {
        double axis = 0.0;
        std::string method;
        std::size_t realization = 0;
        double nmse = 0.0;
    };
    std::vector<RawRow> raw;
    std::size_t realizations = 0;
    std::string config_snapshot;
};

namespace detail {

// Mean test NMSE per layer for both methods on one freshly drawn system:
// the trained network runs blind, the BIHT baseline gets the true matrix.
struct RealizationSeries {
    std::vector<double> unfolded;  // [layer]
    std::vector<double> biht;      // [iteration]
};

inline RealizationSeries run_realization(const ExperimentConfig& cfg, std::uint64_t seed) {
    GenConfig gen = cfg.gen;
    gen.pairs = cfg.train_pairs + cfg.test_pairs;
    gen.seed = seed;
    const Dataset ds = gen_dataset(gen);
    const TrainingSet train = training_view(ds, 0, cfg.train_pairs);
    const TrainingSet test = training_view(ds, cfg.train_pairs, ds.size());

    TrainingConfig c1 = cfg.stage1;
    c1.seed = seed;
    const TrainedModel stage1 = train_stage1(train, c1);
    TrainingConfig c2 = cfg.stage2;
    c2.seed = seed;
    c2.depth = c1.depth;
    const TrainedModel model = train_stage2(train, stage1.params.phi, c2);

    const std::size_t depth = model.depth_inference;
    const DenseVector x0(gen.n, 0.0);
    BihtConfig bc;
    bc.step_size = cfg.biht.alpha;
    bc.sparsity = model.params.sparsity;
    bc.iterations = depth;
    bc.initial_point = x0;
    bc.normalize_each_iteration = cfg.biht.normalize;

    RealizationSeries series;
    series.unfolded.assign(depth, 0.0);
    series.biht.assign(depth, 0.0);
    for (std::size_t i = 0; i < test.size(); ++i) {
        const ForwardPass pass =
            network_forward(model.params, x0, test.measurements[i], depth);
        const BihtResult base =
            biht_iterate(ds.true_phi.value, test.measurements[i], ds.threshold, bc);
        for (std::size_t layer = 0; layer < depth; ++layer) {
            series.unfolded[layer] += nmse(pass.outputs[layer], test.signals[i].values);
            series.biht[layer] += nmse(base.trajectory[layer + 1], test.signals[i].values);
        }
    }
    const double inv = 1.0 / static_cast<double>(test.size());
    for (double& v : series.unfolded) v *= inv;
    for (double& v : series.biht) v *= inv;
    return series;
}

inline void fill_means_from_raw(ExperimentResult& result) {
    result.mean_nmse.assign(result.methods.size(),
                            std::vector<double>(result.axis.size(), 0.0));
    std::vector<std::vector<std::size_t>> counts(result.methods.size(),
                                                 std::vector<std::size_t>(result.axis.size(), 0));
    for (const auto& row : result.raw) {
        for (std::size_t m = 0; m < result.methods.size(); ++m) {
            if (result.methods[m] != row.method) continue;
            for (std::size_t a = 0; a < result.axis.size(); ++a) {
                if (result.axis[a] == row.axis) {
                    result.mean_nmse[m][a] += row.nmse;
                    counts[m][a] += 1;
                }
            }
        }
    }
    for (std::size_t m = 0; m < result.methods.size(); ++m)
        for (std::size_t a = 0; a < result.axis.size(); ++a)
            if (counts[m][a] > 0)
                result.mean_nmse[m][a] /= static_cast<double>(counts[m][a]);
}

}  // namespace detail

// Per-layer convergence comparison: mean test NMSE after each layer of the
// trained network versus each iteration of true-matrix BIHT, averaged over
// seeded realizations of the whole system.
inline ExperimentResult layerwise_experiment(const ExperimentConfig& cfg,
                                             std::size_t realizations) {
    if (realizations < 1) throw ConfigError("layerwise_experiment: realizations >= 1");
    const std::size_t depth = cfg.stage2.depth_prime;
    ExperimentResult result;
    result.methods = {"unfolded", "biht"};
    result.realizations = realizations;
    for (std::size_t layer = 1; layer <= depth; ++layer)
        result.axis.push_back(static_cast<double>(layer));

    std::vector<detail::RealizationSeries> series(realizations);
    parallel_for(0, realizations, cfg.threads, [&](std::size_t r) {
        ExperimentConfig local = cfg;
        local.stage1.threads = 1;
        local.stage2.threads = 1;
        series[r] = detail::run_realization(local, cfg.seed + r);
    });

    for (std::size_t r = 0; r < realizations; ++r)
        for (std::size_t a = 0; a < depth; ++a) {
            result.raw.push_back({result.axis[a], "unfolded", r, series[r].unfolded[a]});
            result.raw.push_back({result.axis[a], "biht", r, series[r].biht[a]});
        }
    detail::fill_means_from_raw(result);
    return result;
}

// Final-layer NMSE as the sparsity level grows; the full train-and-evaluate
// pipeline runs for every K.
inline ExperimentResult sparsity_sweep(const ExperimentConfig& cfg,
                                       const std::vector<std::size_t>& k_values,
                                       std::size_t realizations) {
    if (realizations < 1) throw ConfigError("sparsity_sweep: realizations >= 1");
    if (k_values.empty()) throw ConfigError("sparsity_sweep: no sparsity levels given");
    for (std::size_t k : k_values)
        if (k < 1 || k > cfg.gen.n) throw InvalidSparsity("sparsity_sweep: K out of range");

    ExperimentResult result;
    result.methods = {"unfolded", "biht"};
    result.realizations = realizations;
    for (std::size_t k : k_values) result.axis.push_back(static_cast<double>(k));

    const std::size_t jobs = k_values.size() * realizations;
    std::vector<std::pair<double, double>> finals(jobs);  // (unfolded, biht)
    parallel_for(0, jobs, cfg.threads, [&](std::size_t j) {
        const std::size_t ki = j / realizations;
        const std::size_t r = j % realizations;
        ExperimentConfig local = cfg;
        local.gen.sparsity = k_values[ki];
        local.stage1.sparsity = k_values[ki];
        local.stage2.sparsity = k_values[ki];
        local.stage1.threads = 1;
        local.stage2.threads = 1;
        const auto series = detail::run_realization(local, cfg.seed + r);
        finals[j] = {series.unfolded.back(), series.biht.back()};
    });

    for (std::size_t ki = 0; ki < k_values.size(); ++ki)
        for (std::size_t r = 0; r < realizations; ++r) {
            const auto& f = finals[ki * realizations + r];
            result.raw.push_back({result.axis[ki], "unfolded", r, f.first});
            result.raw.push_back({result.axis[ki], "biht", r, f.second});
        }
    detail::fill_means_from_raw(result);
    return result;
}

}  // namespace obcs
