// Finite-difference gradient checking against the surrogate-forward network.
// Instances are rejection-sampled away from branch points (STE clip
// boundaries, H_k selection ties, zero norms), and every perturbed forward
// pass is additionally required to keep the exact branch pattern of the base
// point; a flip rejects the instance rather than polluting the comparison.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "obcs/datagen.hpp"
#include "obcs/unfolded.hpp"

namespace gradcheck {

using namespace obcs;

inline DenseMatrix random_matrix(std::size_t m, std::size_t n, SeededRng& rng) {
    DenseMatrix a(m, n);
    for (double& e : a.data()) e = rng.normal();
    return a;
}

inline OneBitMeasurements random_bits(std::size_t m, SeededRng& rng) {
    OneBitMeasurements y;
    y.bits.resize(m);
    for (double& b : y.bits) b = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return y;
}

struct Instance {
    UnfoldedParams params;
    DenseVector x0;
    OneBitMeasurements y;
    DenseVector target;
};

// Distances to the nearest STE boundary and H_k tie, and the smallest
// pre-normalization norm along the pass.
struct Margins {
    double ste = 1e300;
    double tie = 1e300;
    double norm = 1e300;
};

inline Margins margins_of(const UnfoldedParams& params, const ForwardPass& pass) {
    Margins mg;
    for (const LayerCache& cache : pass.caches) {
        const StepTrace& t = cache.trace;
        for (double u : t.pre_sign)
            mg.ste = std::min(mg.ste, std::abs(std::abs(u) - params.ste_clip));
        DenseVector mags(t.pre_threshold.size());
        for (std::size_t i = 0; i < mags.size(); ++i) mags[i] = std::abs(t.pre_threshold[i]);
        std::sort(mags.begin(), mags.end(), std::greater<double>());
        if (params.sparsity >= 1 && params.sparsity < mags.size())
            mg.tie = std::min(mg.tie, mags[params.sparsity - 1] - mags[params.sparsity]);
        mg.norm = std::min(mg.norm, t.pre_norm);
    }
    return mg;
}

// Branch pattern of a pass: retained masks, STE gates, and normalization
// activity. FD evaluations must reproduce it exactly.
inline std::vector<std::uint8_t> branch_signature(const UnfoldedParams& params,
                                                  const ForwardPass& pass) {
    std::vector<std::uint8_t> sig;
    for (const LayerCache& cache : pass.caches) {
        const StepTrace& t = cache.trace;
        sig.insert(sig.end(), t.retained_mask.begin(), t.retained_mask.end());
        for (double u : t.pre_sign) sig.push_back(std::abs(u) <= params.ste_clip ? 1 : 0);
        sig.push_back(t.pre_norm > 0.0 ? 1 : 0);
    }
    return sig;
}

inline Instance sample_instance(std::size_t m, std::size_t n, std::size_t k, std::size_t depth,
                                SeededRng& rng) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Instance inst;
        inst.params.phi = random_matrix(m, n, rng);
        inst.params.step_sizes.resize(depth);
        for (double& a : inst.params.step_sizes) a = 0.2 + rng.uniform();
        inst.params.sparsity = k;
        inst.params.threshold.assign(m, 0.0);
        inst.params.normalize_per_layer = true;
        inst.params.ste_clip = 1.0;
        inst.params.forward_mode = QuantizerMode::ClampSurrogate;
        inst.x0.resize(n);
        for (double& e : inst.x0) e = rng.normal();
        inst.y = random_bits(m, rng);
        inst.target = gen_sparse_signal(n, k, true, rng).values;

        const ForwardPass pass = network_forward(inst.params, inst.x0, inst.y, depth);
        const Margins mg = margins_of(inst.params, pass);
        if (mg.ste > 1e-3 && mg.tie > 1e-3 && mg.norm > 0.25) return inst;
    }
    throw std::runtime_error("gradcheck: could not sample a well-separated instance");
}

// Accumulated multi-layer squared error; final_only restricts the loss to the
// last layer (the stage-1 objective shape).
inline double objective(const UnfoldedParams& params, const Instance& inst, std::size_t depth,
                        bool final_only) {
    const ForwardPass pass = network_forward(params, inst.x0, inst.y, depth);
    double loss = 0.0;
    for (std::size_t i = 0; i < depth; ++i) {
        if (final_only && i + 1 != depth) continue;
        for (std::size_t j = 0; j < inst.target.size(); ++j) {
            const double d = pass.outputs[i][j] - inst.target[j];
            loss += d * d;
        }
    }
    return loss;
}

// Relative error between analytic network gradients and central finite
// differences over every matrix entry and step size. nullopt = a perturbed
// evaluation changed branch, caller should draw a fresh instance.
//
// The denominator is floored at 0.1: when every retained support is disjoint
// from the target the loss sits on an exact plateau (both gradients are truly
// zero) and the quotient would otherwise amplify bare FD rounding noise.
inline std::optional<double> relative_fd_error(const Instance& inst, std::size_t depth, double h,
                                               bool final_only = false) {
    const ForwardPass pass = network_forward(inst.params, inst.x0, inst.y, depth);
    const auto base_sig = branch_signature(inst.params, pass);

    std::vector<DenseVector> ups(depth);
    const std::size_t n = inst.target.size();
    for (std::size_t i = 0; i < depth; ++i) {
        ups[i].assign(n, 0.0);
        if (final_only && i + 1 != depth) continue;
        for (std::size_t j = 0; j < n; ++j)
            ups[i][j] = 2.0 * (pass.outputs[i][j] - inst.target[j]);
    }
    const NetworkGradients grads = network_backward(pass.caches, inst.params, depth, ups);

    bool flipped = false;
    auto eval = [&](const UnfoldedParams& p) {
        const ForwardPass f = network_forward(p, inst.x0, inst.y, depth);
        if (branch_signature(p, f) != base_sig) flipped = true;
        double loss = 0.0;
        for (std::size_t i = 0; i < depth; ++i) {
            if (final_only && i + 1 != depth) continue;
            for (std::size_t j = 0; j < n; ++j) {
                const double d = f.outputs[i][j] - inst.target[j];
                loss += d * d;
            }
        }
        return loss;
    };

    double diff2 = 0.0, an2 = 0.0;
    UnfoldedParams work = inst.params;
    for (std::size_t e = 0; e < work.phi.size(); ++e) {
        const double saved = work.phi.data()[e];
        work.phi.data()[e] = saved + h;
        const double fp = eval(work);
        work.phi.data()[e] = saved - h;
        const double fm = eval(work);
        work.phi.data()[e] = saved;
        if (flipped) return std::nullopt;
        const double fd = (fp - fm) / (2.0 * h);
        diff2 += (fd - grads.grad_phi.data()[e]) * (fd - grads.grad_phi.data()[e]);
        an2 += grads.grad_phi.data()[e] * grads.grad_phi.data()[e];
    }
    for (std::size_t l = 0; l < depth; ++l) {
        const double saved = work.step_sizes[l];
        work.step_sizes[l] = saved + h;
        const double fp = eval(work);
        work.step_sizes[l] = saved - h;
        const double fm = eval(work);
        work.step_sizes[l] = saved;
        if (flipped) return std::nullopt;
        const double fd = (fp - fm) / (2.0 * h);
        diff2 += (fd - grads.grad_alpha[l]) * (fd - grads.grad_alpha[l]);
        an2 += grads.grad_alpha[l] * grads.grad_alpha[l];
    }
    return std::sqrt(diff2) / std::max(std::sqrt(an2), 0.1);
}

}  // namespace gradcheck
