#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "obcs/datagen.hpp"
#include "obcs/parallel.hpp"
#include "obcs/unfolded.hpp"

namespace obcs {

// Adam with bias correction over one flat parameter block.
struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::size_t step_count = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState for_size(std::size_t size, double lr) {
        AdamState s;
        s.first_moment.assign(size, 0.0);
        s.second_moment.assign(size, 0.0);
        s.lr = lr;
        return s;
    }
};

inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
        params.size() != state.second_moment.size())
        throw ShapeMismatch("adam_step: parameter/gradient/state sizes disagree");
    state.step_count += 1;
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double m_corr = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
    const double v_corr = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.first_moment[i] = b1 * state.first_moment[i] + (1.0 - b1) * g;
        state.second_moment[i] = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
        const double m_hat = state.first_moment[i] / m_corr;
        const double v_hat = state.second_moment[i] / v_corr;
        params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
}

// Stage-1 objective over a batch: sum of final-estimate squared errors.
inline double loss_stage1(const std::vector<DenseVector>& final_outputs,
                          const std::vector<DenseVector>& targets) {
    if (final_outputs.size() != targets.size())
        throw ShapeMismatch("loss_stage1: batch sizes disagree");
    double total = 0.0;
    for (std::size_t i = 0; i < final_outputs.size(); ++i) {
        const DenseVector& out = final_outputs[i];
        const DenseVector& tgt = targets[i];
        if (out.size() != tgt.size()) throw ShapeMismatch("loss_stage1: vector lengths disagree");
        for (std::size_t j = 0; j < out.size(); ++j) {
            const double d = out[j] - tgt[j];
            total += d * d;
        }
    }
    return total;
}

// Stage-2 objective: squared error accumulated over every layer output, plus
// lambda * sum_i max(-alpha_i, 0) pushing the step sizes nonnegative.
inline double loss_stage2(const std::vector<std::vector<DenseVector>>& per_layer_outputs,
                          const std::vector<DenseVector>& targets,
                          const std::vector<double>& step_sizes, double lambda) {
    if (per_layer_outputs.size() != targets.size())
        throw ShapeMismatch("loss_stage2: batch sizes disagree");
    double total = 0.0;
    for (std::size_t s = 0; s < per_layer_outputs.size(); ++s) {
        if (per_layer_outputs[s].size() != step_sizes.size())
            throw ShapeMismatch("loss_stage2: layer count disagrees with step sizes");
        for (const DenseVector& out : per_layer_outputs[s]) {
            if (out.size() != targets[s].size())
                throw ShapeMismatch("loss_stage2: vector lengths disagree");
            for (std::size_t j = 0; j < out.size(); ++j) {
                const double d = out[j] - targets[s][j];
                total += d * d;
            }
        }
    }
    for (double a : step_sizes) total += lambda * std::max(-a, 0.0);
    return total;
}

struct TrainingConfig {
    int stage = 1;
    std::size_t epochs = 200;      // stage-2 callers typically use 100
    std::size_t batch_size = 32;
    double lr = 1e-4;
    double shared_alpha = 0.0;     // stage-1 step size and stage-2 initial
                                   // value; <= 0 resolves to 1/m
    std::size_t depth = 10;        // L
    std::size_t depth_prime = 10;  // L' <= L
    double lambda = 1.0;           // stage-2 step-size regularization weight
    std::uint64_t seed = 0;
    bool deterministic_reduction = true;  // kept for provenance; reduction is
                                          // always performed in sample order
    // Network settings carried through both stages.
    std::size_t sparsity = 0;  // recovery k; 0 = use the signal sparsity bound
    bool normalize_per_layer = true;
    double ste_clip = 1.0;
    std::size_t threads = 1;
};

struct TrainedModel {
    UnfoldedParams params;
    std::size_t depth_stage1 = 0;     // L used while learning phi
    std::size_t depth_inference = 0;  // L' the model runs at
    std::vector<double> loss_history;  // one entry per epoch (mean per pair)
    TrainingConfig config;
    std::string dataset_meta;  // provenance snapshot, free-form text
};

// TrainedModel-level recovery; forwards to the parameter-level entry point.
inline DenseVector recover(const TrainedModel& model, const OneBitMeasurements& y,
                           const DenseVector& x0) {
    return network_forward(model.params, x0, y, model.depth_inference).outputs.back();
}

namespace detail {

inline std::size_t effective_sparsity(const TrainingConfig& cfg, const TrainingSet& data) {
    if (cfg.sparsity > 0) return cfg.sparsity;
    std::size_t k = 1;
    for (const SparseSignal& s : data.signals) k = std::max(k, s.sparsity_bound);
    return k;
}

inline void shuffle_indices(std::vector<std::size_t>& order, SeededRng& rng) {
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = rng.next_index(i);
        std::swap(order[i - 1], order[j]);
    }
}

struct SampleResult {
    NetworkGradients grads;
    double loss = 0.0;
};

// Forward + backward for one pair. final_only selects the stage-1 upstream
// placement (last layer) versus the stage-2 accumulated placement (every
// layer); the loss reported matches the placement.
inline void sample_pass(const UnfoldedParams& params, std::size_t depth, const DenseVector& x0,
                        const SparseSignal& target, const OneBitMeasurements& y, bool final_only,
                        SampleResult& out) {
    const ForwardPass pass = network_forward(params, x0, y, depth);
    std::vector<DenseVector> upstreams(depth);
    double loss = 0.0;
    for (std::size_t i = 0; i < depth; ++i) {
        const bool contributes = !final_only || i + 1 == depth;
        if (!contributes) {
            upstreams[i].assign(params.n(), 0.0);
            continue;
        }
        upstreams[i].resize(params.n());
        for (std::size_t j = 0; j < params.n(); ++j) {
            const double d = pass.outputs[i][j] - target.values[j];
            loss += d * d;
            upstreams[i][j] = 2.0 * d;
        }
    }
    out.grads = network_backward(pass.caches, params, depth, upstreams);
    out.loss = loss;
}

struct EpochStats {
    double summed_loss = 0.0;  // summed over pairs (plus any per-batch terms)
};

// One pass over the data in mini-batches. update() receives the batch-summed
// gradients and applies the optimizer; extra_batch_loss() covers terms that
// are charged once per batch evaluation (the stage-2 regularizer).
template <class Update, class ExtraLoss>
inline EpochStats run_epoch(const UnfoldedParams& params, std::size_t depth,
                            const TrainingSet& data, const std::vector<std::size_t>& order,
                            std::size_t batch_size, bool final_only, std::size_t threads,
                            std::vector<SampleResult>& slots, Update&& update,
                            ExtraLoss&& extra_batch_loss) {
    EpochStats stats;
    const DenseVector x0(data.n, 0.0);
    const std::size_t total = order.size();
    for (std::size_t start = 0; start < total; start += batch_size) {
        const std::size_t count = std::min(batch_size, total - start);
        parallel_for(0, count, threads, [&](std::size_t s) {
            const std::size_t pair = order[start + s];
            sample_pass(params, depth, x0, data.signals[pair], data.measurements[pair],
                        final_only, slots[s]);
        });
        // Reduce in sample order: reruns are bit-identical for any thread count.
        NetworkGradients batch = std::move(slots[0].grads);
        double batch_loss = slots[0].loss;
        for (std::size_t s = 1; s < count; ++s) {
            const NetworkGradients& g = slots[s].grads;
            for (std::size_t e = 0; e < batch.grad_phi.size(); ++e)
                batch.grad_phi.data()[e] += g.grad_phi.data()[e];
            for (std::size_t i = 0; i < batch.grad_alpha.size(); ++i)
                batch.grad_alpha[i] += g.grad_alpha[i];
            batch_loss += slots[s].loss;
        }
        batch_loss += extra_batch_loss();
        stats.summed_loss += batch_loss;
        update(batch);
        slots[0].grads = std::move(batch);  // hand the buffer back for reuse
    }
    return stats;
}

}  // namespace detail

// Stage 1: learn the surrogate matrix with every layer sharing one fixed step
// size; only the final-layer estimate enters the loss.
inline TrainedModel train_stage1(const TrainingSet& data, const TrainingConfig& cfg) {
    if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("train_stage1: epochs/batch >= 1");
    if (data.size() == 0) throw ConfigError("train_stage1: empty training set");

    TrainedModel model;
    model.config = cfg;
    model.config.stage = 1;
    model.depth_stage1 = cfg.depth;
    model.depth_inference = cfg.depth;

    UnfoldedParams& p = model.params;
    SeededRng init_rng(derive_seed(cfg.seed, 1));
    p.phi = gen_sensing_matrix(data.m, data.n, init_rng);
    p.step_sizes.assign(cfg.depth, resolve_step_size(cfg.shared_alpha, data.m));
    p.sparsity = detail::effective_sparsity(cfg, data);
    p.threshold = data.threshold;
    p.normalize_per_layer = cfg.normalize_per_layer;
    p.ste_clip = cfg.ste_clip;

    AdamState adam = AdamState::for_size(p.phi.size(), cfg.lr);
    SeededRng shuffle_rng(derive_seed(cfg.seed, 2));
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<detail::SampleResult> slots(std::min(cfg.batch_size, data.size()));

    model.loss_history.reserve(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        detail::shuffle_indices(order, shuffle_rng);
        const auto stats = detail::run_epoch(
            p, cfg.depth, data, order, cfg.batch_size, /*final_only=*/true, cfg.threads, slots,
            [&](const NetworkGradients& batch) {
                adam_step(adam, std::span<double>(p.phi.data()),
                          std::span<const double>(batch.grad_phi.data()));
            },
            []() { return 0.0; });
        const double mean_loss = stats.summed_loss / static_cast<double>(data.size());
        if (!std::isfinite(mean_loss)) throw DivergenceDetected("train_stage1: loss is not finite");
        model.loss_history.push_back(mean_loss);
    }
    return model;
}

// Stage 2: freeze the learned matrix, shorten the network to depth_prime and
// learn one step size per layer under the accumulated per-layer loss.
inline TrainedModel train_stage2(const TrainingSet& data, const DenseMatrix& phi_star,
                                 const TrainingConfig& cfg) {
    if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("train_stage2: epochs/batch >= 1");
    if (data.size() == 0) throw ConfigError("train_stage2: empty training set");
    if (cfg.depth_prime < 1 || cfg.depth_prime > cfg.depth)
        throw ConfigError("train_stage2: need 1 <= L' <= L");
    if (phi_star.rows() != data.m || phi_star.cols() != data.n)
        throw DimensionMismatch("train_stage2: phi shape does not match data");

    TrainedModel model;
    model.config = cfg;
    model.config.stage = 2;
    model.depth_stage1 = cfg.depth;
    model.depth_inference = cfg.depth_prime;

    UnfoldedParams& p = model.params;
    p.phi = phi_star;
    p.step_sizes.assign(cfg.depth_prime, resolve_step_size(cfg.shared_alpha, data.m));
    p.sparsity = detail::effective_sparsity(cfg, data);
    p.threshold = data.threshold;
    p.normalize_per_layer = cfg.normalize_per_layer;
    p.ste_clip = cfg.ste_clip;

    AdamState adam = AdamState::for_size(p.step_sizes.size(), cfg.lr);
    SeededRng shuffle_rng(derive_seed(cfg.seed, 3));
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<detail::SampleResult> slots(std::min(cfg.batch_size, data.size()));

    model.loss_history.reserve(cfg.epochs);
    std::vector<double> alpha_grad(p.step_sizes.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        detail::shuffle_indices(order, shuffle_rng);
        const auto stats = detail::run_epoch(
            p, cfg.depth_prime, data, order, cfg.batch_size, /*final_only=*/false, cfg.threads,
            slots,
            [&](const NetworkGradients& batch) {
                for (std::size_t i = 0; i < alpha_grad.size(); ++i) {
                    const double reg = p.step_sizes[i] < 0.0 ? -cfg.lambda : 0.0;
                    alpha_grad[i] = batch.grad_alpha[i] + reg;
                }
                adam_step(adam, std::span<double>(p.step_sizes),
                          std::span<const double>(alpha_grad));
            },
            [&]() {
                double reg = 0.0;
                for (double a : p.step_sizes) reg += cfg.lambda * std::max(-a, 0.0);
                return reg;
            });
        const double mean_loss = stats.summed_loss / static_cast<double>(data.size());
        if (!std::isfinite(mean_loss)) throw DivergenceDetected("train_stage2: loss is not finite");
        model.loss_history.push_back(mean_loss);
    }
    return model;
}

}  // namespace obcs
