#pragma once

#include <cstdint>
#include <vector>

#include "obcs/numerics.hpp"

namespace obcs {

// sign(0) = +1, applied everywhere a sign is taken.
inline double sign_plus(double x) { return x >= 0.0 ? 1.0 : -1.0; }

// Length-n signal with at most sparsity_bound nonzeros.
struct SparseSignal {
    DenseVector values;
    std::size_t sparsity_bound = 0;

    std::size_t nonzero_count() const {
        std::size_t c = 0;
        for (double v : values)
            if (v != 0.0) ++c;
        return c;
    }
};

// Length-m vector over {+1, -1}.
struct OneBitMeasurements {
    DenseVector bits;
};

// y = sign(Phi x + noise - tau), elementwise; noise == nullptr means the
// noise-free model.
inline OneBitMeasurements quantize_one_bit(const DenseMatrix& phi, const DenseVector& x,
                                           const DenseVector& tau,
                                           const DenseVector* noise = nullptr) {
    if (x.size() != phi.cols()) throw DimensionMismatch("quantize_one_bit: len(x) != cols");
    if (tau.size() != phi.rows()) throw DimensionMismatch("quantize_one_bit: len(tau) != rows");
    if (noise && noise->size() != phi.rows())
        throw DimensionMismatch("quantize_one_bit: len(noise) != rows");
    DenseVector u = matvec(phi, x);
    OneBitMeasurements y;
    y.bits.resize(u.size());
    for (std::size_t j = 0; j < u.size(); ++j) {
        const double level = noise ? u[j] + (*noise)[j] - tau[j] : u[j] - tau[j];
        y.bits[j] = sign_plus(level);
    }
    return y;
}

// sum_j max(-y_j (Phi x - tau)_j, 0); zero exactly when the estimate
// reproduces the observed sign pattern.
inline double consistency_objective(const DenseMatrix& phi, const DenseVector& x,
                                    const DenseVector& tau, const OneBitMeasurements& y) {
    if (y.bits.size() != phi.rows())
        throw DimensionMismatch("consistency_objective: len(y) != rows");
    if (tau.size() != phi.rows()) throw DimensionMismatch("consistency_objective: len(tau) != rows");
    DenseVector u = matvec(phi, x);
    double total = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        const double margin = y.bits[j] * (u[j] - tau[j]);
        if (margin < 0.0) total -= margin;
    }
    return total;
}

// Keeps the k largest-magnitude entries, zeros the rest. When mask_out is
// given it is filled with 1 at retained indices.
inline DenseVector hard_threshold(const DenseVector& v, std::size_t k,
                                  std::vector<std::uint8_t>* mask_out = nullptr) {
    const auto kept = top_k_indices(v, k);
    DenseVector out(v.size(), 0.0);
    if (mask_out) mask_out->assign(v.size(), 0);
    for (std::size_t idx : kept) {
        out[idx] = v[idx];
        if (mask_out) (*mask_out)[idx] = 1;
    }
    return out;
}

// How the step treats the sign nonlinearity. ClampSurrogate replaces
// sign(u) with clamp(u, -c, c), whose exact derivative equals the clipped
// straight-through rule; it exists for gradient checks only.
enum class QuantizerMode { Sign, ClampSurrogate };

// Intermediates of one thresholding step, recorded for reverse mode.
struct StepTrace {
    DenseVector input;           // x
    DenseVector pre_sign;        // u = Phi x - tau
    DenseVector residual;        // r = y - q(u)
    DenseVector phi_t_residual;  // t = Phi^T r
    DenseVector pre_threshold;   // v = x + alpha t
    std::vector<std::uint8_t> retained_mask;
    DenseVector thresholded;  // z = H_k(v), before any normalization
    double pre_norm = 0.0;    // ||z||_2
};

// One iteration x' = H_k(x + alpha Phi^T (y - q(Phi x - tau))), optionally
// followed by l2 normalization. The BIHT baseline and the unfolded layers
// share this kernel, so equal parameters give bit-identical arithmetic.
inline DenseVector biht_step(const DenseMatrix& phi, const DenseVector& y_bits,
                             const DenseVector& tau, const DenseVector& x, double alpha,
                             std::size_t k, bool normalize, QuantizerMode mode, double clip,
                             StepTrace* trace = nullptr) {
    if (x.size() != phi.cols()) throw DimensionMismatch("biht_step: len(x) != cols");
    if (y_bits.size() != phi.rows()) throw DimensionMismatch("biht_step: len(y) != rows");
    if (tau.size() != phi.rows()) throw DimensionMismatch("biht_step: len(tau) != rows");

    DenseVector u = matvec(phi, x);
    for (std::size_t j = 0; j < u.size(); ++j) u[j] -= tau[j];

    DenseVector r(u.size());
    for (std::size_t j = 0; j < u.size(); ++j) {
        const double q = mode == QuantizerMode::Sign
                             ? sign_plus(u[j])
                             : std::clamp(u[j], -clip, clip);
        r[j] = y_bits[j] - q;
    }

    DenseVector t = matvec_transposed(phi, r);
    DenseVector v(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) v[i] = x[i] + alpha * t[i];

    std::vector<std::uint8_t> mask;
    DenseVector z = hard_threshold(v, k, &mask);
    const double zn = norm2(z);

    DenseVector out;
    if (normalize && zn > 0.0) {
        out.resize(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] / zn;
    } else {
        out = z;
    }

    if (trace) {
        trace->input = x;
        trace->pre_sign = std::move(u);
        trace->residual = std::move(r);
        trace->phi_t_residual = std::move(t);
        trace->pre_threshold = std::move(v);
        trace->retained_mask = std::move(mask);
        trace->thresholded = std::move(z);
        trace->pre_norm = zn;
    }
    return out;
}

struct BihtConfig {
    double step_size = 0.0;  // <= 0 resolves to 1/m at solve time
    std::size_t sparsity = 1;
    std::size_t iterations = 0;
    DenseVector initial_point;
    bool normalize_each_iteration = true;
};

// With per-iteration normalization the iterate is unit norm, so the step has
// to be on the scale of ||Phi^T r|| ~ m to make relative progress.
inline double resolve_step_size(double configured, std::size_t m) {
    return configured > 0.0 ? configured : 1.0 / static_cast<double>(m);
}

struct BihtResult {
    DenseVector estimate;
    std::vector<DenseVector> trajectory;  // iterations + 1 entries, starts at x0
};

// Classical BIHT with a known sensing matrix.
inline BihtResult biht_iterate(const DenseMatrix& phi, const OneBitMeasurements& y,
                               const DenseVector& tau, const BihtConfig& cfg) {
    if (cfg.initial_point.size() != phi.cols())
        throw DimensionMismatch("biht_iterate: len(x0) != cols");
    BihtResult res;
    res.trajectory.reserve(cfg.iterations + 1);
    res.trajectory.push_back(cfg.initial_point);
    DenseVector x = cfg.initial_point;
    const double alpha = resolve_step_size(cfg.step_size, phi.rows());
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        x = biht_step(phi, y.bits, tau, x, alpha, cfg.sparsity, cfg.normalize_each_iteration,
                      QuantizerMode::Sign, 0.0);
        res.trajectory.push_back(x);
    }
    res.estimate = x;
    return res;
}

}  // namespace obcs
