#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "obcs/sensing.hpp"

namespace obcs {

// Trainable parameter set of the unfolded recovery network: one shared
// surrogate sensing matrix plus a step size per layer.
struct UnfoldedParams {
    DenseMatrix phi;                 // m x n surrogate, shared across layers
    std::vector<double> step_sizes;  // alpha_i, one per layer
    std::size_t sparsity = 1;        // k of the hard-threshold activation
    DenseVector threshold;           // tau, length m
    bool normalize_per_layer = true;
    double ste_clip = 1.0;  // c; pass-through gradient only where |u| <= c
    QuantizerMode forward_mode = QuantizerMode::Sign;  // ClampSurrogate in gradient tests only

    std::size_t depth() const { return step_sizes.size(); }
    std::size_t m() const { return phi.rows(); }
    std::size_t n() const { return phi.cols(); }
};

struct LayerCache {
    StepTrace trace;
};

struct NetworkGradients {
    DenseMatrix grad_phi;
    std::vector<double> grad_alpha;
};

// Straight-through estimator for the sign nonlinearity: the upstream
// gradient passes where |u_j| <= clip (boundary included) and is zeroed
// elsewhere. clip = infinity gives the plain identity estimator.
inline DenseVector ste_backward(const DenseVector& u, const DenseVector& upstream, double clip) {
    if (u.size() != upstream.size()) throw DimensionMismatch("ste_backward: length mismatch");
    DenseVector out(u.size());
    for (std::size_t j = 0; j < u.size(); ++j)
        out[j] = std::abs(u[j]) <= clip ? upstream[j] : 0.0;
    return out;
}

struct LayerStep {
    DenseVector output;
    LayerCache cache;
};

// x_next = H_k(x + alpha_i Phi^T (y - q(Phi x - tau))), then l2 normalization
// when enabled. layer is 0-based.
inline LayerStep layer_forward(const UnfoldedParams& params, std::size_t layer,
                               const DenseVector& x, const OneBitMeasurements& y) {
    if (layer >= params.depth()) throw DimensionMismatch("layer_forward: layer index out of range");
    LayerStep step;
    step.output = biht_step(params.phi, y.bits, params.threshold, x, params.step_sizes[layer],
                            params.sparsity, params.normalize_per_layer, params.forward_mode,
                            params.ste_clip, &step.cache.trace);
    return step;
}

struct ForwardPass {
    std::vector<DenseVector> outputs;  // per-layer estimates, depth entries
    std::vector<LayerCache> caches;
};

// Composition of depth layers starting from x0. outputs[i] is the estimate
// after layer i; the final estimate is outputs.back().
inline ForwardPass network_forward(const UnfoldedParams& params, const DenseVector& x0,
                                   const OneBitMeasurements& y, std::size_t depth) {
    if (depth < 1 || depth > params.depth())
        throw DimensionMismatch("network_forward: depth out of range");
    ForwardPass pass;
    pass.outputs.reserve(depth);
    pass.caches.reserve(depth);
    const DenseVector* x = &x0;
    for (std::size_t i = 0; i < depth; ++i) {
        LayerStep step = layer_forward(params, i, *x, y);
        pass.outputs.push_back(std::move(step.output));
        pass.caches.push_back(std::move(step.cache));
        x = &pass.outputs.back();
    }
    return pass;
}

namespace detail {

inline void check_cache(const LayerCache& cache, const UnfoldedParams& params,
                        const DenseVector& upstream) {
    const StepTrace& t = cache.trace;
    if (t.input.size() != params.n() || t.pre_sign.size() != params.m() ||
        t.residual.size() != params.m() || t.pre_threshold.size() != params.n() ||
        t.retained_mask.size() != params.n() || t.thresholded.size() != params.n() ||
        upstream.size() != params.n())
        throw StaleCache("layer_backward: cache does not match parameters");
}

// Reverse-mode step for one layer. Accumulates the Phi contribution into
// grad_phi (m x n, caller-zeroed or shared across layers) and writes the
// input gradient into grad_x.
//
// With D = diag(1{|u_j| <= c}) (straight-through surrogate for sign),
// M = the retained-index projection of H_k, and N = (I - w w^T)/||z|| the
// normalization Jacobian at w = z/||z||:
//   g_v        = M N^T upstream
//   d/d alpha  = <Phi^T r, g_v>
//   d/d Phi    = alpha (r g_v^T - (D Phi g_v) x^T)
//   d/d x      = (I - alpha Phi^T D Phi) g_v
inline void layer_backward_accumulate(const LayerCache& cache, const UnfoldedParams& params,
                                      std::size_t layer, const DenseVector& upstream,
                                      DenseMatrix& grad_phi, double& grad_alpha,
                                      DenseVector& grad_x) {
    if (layer >= params.depth()) throw StaleCache("layer_backward: layer index out of range");
    check_cache(cache, params, upstream);
    const StepTrace& t = cache.trace;
    const std::size_t n = params.n();
    const std::size_t m = params.m();
    const double alpha = params.step_sizes[layer];

    // Through the normalization: g_z = (upstream - w <w, upstream>)/||z||.
    DenseVector g_z(n);
    if (params.normalize_per_layer && t.pre_norm > 0.0) {
        double w_dot_up = 0.0;
        for (std::size_t i = 0; i < n; ++i) w_dot_up += (t.thresholded[i] / t.pre_norm) * upstream[i];
        for (std::size_t i = 0; i < n; ++i) {
            const double w = t.thresholded[i] / t.pre_norm;
            g_z[i] = (upstream[i] - w * w_dot_up) / t.pre_norm;
        }
    } else {
        g_z = upstream;
    }

    // Through H_k: gradient flows only on the retained indices.
    DenseVector g_v(n);
    for (std::size_t i = 0; i < n; ++i) g_v[i] = t.retained_mask[i] ? g_z[i] : 0.0;

    grad_alpha = dot(t.phi_t_residual, g_v);

    // b = Phi g_v, then gate through the STE: g_u = -alpha D b.
    DenseVector b = matvec(params.phi, g_v);
    DenseVector g_u(m);
    for (std::size_t j = 0; j < m; ++j) {
        const double gated = std::abs(t.pre_sign[j]) <= params.ste_clip ? b[j] : 0.0;
        g_u[j] = -alpha * gated;
    }

    // d/d Phi: rank-one terms alpha r g_v^T and g_u x^T.
    for (std::size_t j = 0; j < m; ++j) {
        double* row = grad_phi.row(j);
        const double rj = alpha * t.residual[j];
        const double uj = g_u[j];
        const double* xv = t.input.data();
        for (std::size_t i = 0; i < n; ++i) row[i] += rj * g_v[i] + uj * xv[i];
    }

    // d/d x = g_v + Phi^T g_u.
    matvec_transposed_into(params.phi, g_u, grad_x);
    for (std::size_t i = 0; i < n; ++i) grad_x[i] += g_v[i];
}

}  // namespace detail

struct LayerGradients {
    DenseVector grad_x;
    DenseMatrix grad_phi;
    double grad_alpha = 0.0;
};

inline LayerGradients layer_backward(const LayerCache& cache, const UnfoldedParams& params,
                                     std::size_t layer, const DenseVector& upstream) {
    LayerGradients g;
    g.grad_phi = DenseMatrix(params.m(), params.n());
    detail::layer_backward_accumulate(cache, params, layer, upstream, g.grad_phi, g.grad_alpha,
                                      g.grad_x);
    return g;
}

// Accumulates layer contributions in reverse order, chaining each layer's
// input gradient into the upstream of the previous layer. Phi is shared, so
// its contributions sum across layers. per_layer_upstreams[i] is the direct
// loss gradient on outputs[i]; zero vectors are fine for final-only losses.
inline NetworkGradients network_backward(const std::vector<LayerCache>& caches,
                                         const UnfoldedParams& params, std::size_t depth,
                                         const std::vector<DenseVector>& per_layer_upstreams) {
    if (depth < 1 || depth > params.depth())
        throw StaleCache("network_backward: depth out of range");
    if (caches.size() < depth || per_layer_upstreams.size() != depth)
        throw StaleCache("network_backward: caches/upstreams do not match depth");

    NetworkGradients grads;
    grads.grad_phi = DenseMatrix(params.m(), params.n());
    grads.grad_alpha.assign(depth, 0.0);

    DenseVector chained;  // gradient flowing into the current layer's output
    DenseVector upstream;
    DenseVector grad_x;
    for (std::size_t i = depth; i-- > 0;) {
        upstream = per_layer_upstreams[i];
        if (upstream.size() != params.n())
            throw StaleCache("network_backward: upstream length mismatch");
        if (!chained.empty())
            for (std::size_t j = 0; j < upstream.size(); ++j) upstream[j] += chained[j];
        detail::layer_backward_accumulate(caches[i], params, i, upstream, grads.grad_phi,
                                          grads.grad_alpha[i], grad_x);
        chained = grad_x;
    }
    return grads;
}

// Blind recovery: consumes only the learned parameters, the observed bits and
// a starting point. There is deliberately no entry point that accepts the
// ground-truth sensing matrix.
inline DenseVector recover(const UnfoldedParams& params, const OneBitMeasurements& y,
                           const DenseVector& x0) {
    return network_forward(params, x0, y, params.depth()).outputs.back();
}

}  // namespace obcs
