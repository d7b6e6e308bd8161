#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "obcs/errors.hpp"

namespace obcs {

using DenseVector = std::vector<double>;

// Dense row-major matrix of doubles.
class DenseMatrix {
   public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), e_(rows * cols, fill) {}

    static DenseMatrix identity(std::size_t n) {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return e_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return e_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return e_[i * cols_ + j]; }

    double* row(std::size_t i) { return e_.data() + i * cols_; }
    const double* row(std::size_t i) const { return e_.data() + i * cols_; }

    std::vector<double>& data() { return e_; }
    const std::vector<double>& data() const { return e_; }

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

   private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> e_;
};

inline double dot(const DenseVector& a, const DenseVector& b) {
    if (a.size() != b.size()) throw DimensionMismatch("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const DenseVector& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// y = A x
inline void matvec_into(const DenseMatrix& a, const DenseVector& x, DenseVector& out) {
    if (x.size() != a.cols()) throw DimensionMismatch("matvec: cols != len(x)");
    out.resize(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* r = a.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += r[j] * x[j];
        out[i] = s;
    }
}

inline DenseVector matvec(const DenseMatrix& a, const DenseVector& x) {
    DenseVector out;
    matvec_into(a, x, out);
    return out;
}

// y = A^T r, accumulated row by row so the traversal stays contiguous.
inline void matvec_transposed_into(const DenseMatrix& a, const DenseVector& r, DenseVector& out) {
    if (r.size() != a.rows()) throw DimensionMismatch("matvec_transposed: rows != len(r)");
    out.assign(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* row = a.row(i);
        const double ri = r[i];
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += row[j] * ri;
    }
}

inline DenseVector matvec_transposed(const DenseMatrix& a, const DenseVector& r) {
    DenseVector out;
    matvec_transposed_into(a, r, out);
    return out;
}

// Indices of the k largest entries by absolute value, magnitude-descending.
// Ties break toward the lower index. k > len(v) returns all indices.
inline std::vector<std::size_t> top_k_indices(const DenseVector& v, std::size_t k) {
    k = std::min(k, v.size());
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto by_magnitude = [&v](std::size_t a, std::size_t b) {
        const double ma = std::abs(v[a]);
        const double mb = std::abs(v[b]);
        if (ma != mb) return ma > mb;
        return a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      by_magnitude);
    idx.resize(k);
    return idx;
}

// v / ||v||_2; the zero vector passes through unchanged.
inline DenseVector l2_normalize(const DenseVector& v) {
    const double n = norm2(v);
    if (n == 0.0) return v;
    DenseVector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

// Lower-triangular L with L L^T = C. Throws NotPositiveDefinite on a
// non-positive pivot. C must be square and symmetric to ~1e-12.
inline DenseMatrix cholesky_lower(const DenseMatrix& c) {
    if (c.rows() != c.cols()) throw DimensionMismatch("cholesky_lower: matrix not square");
    const std::size_t n = c.rows();
    double max_abs = 0.0;
    for (double x : c.data()) max_abs = std::max(max_abs, std::abs(x));
    const double sym_tol = 1e-12 * std::max(1.0, max_abs);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(c(i, j) - c(j, i)) > sym_tol)
                throw DimensionMismatch("cholesky_lower: matrix not symmetric");

    DenseMatrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = c(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (d <= 0.0) throw NotPositiveDefinite("cholesky_lower: pivot <= 0");
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = c(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

// Counter-based generator (splitmix64): state_i = seed + i*gamma, output is a
// fixed bit mix of the state. Identical seed => identical stream, on every
// platform. Gaussian draws come from Box-Muller on the uniform stream.
class SeededRng {
   public:
    explicit SeededRng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] keeps the log finite.
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    void fill_normal(DenseVector& out) {
        for (double& x : out) x = normal();
    }

    // Uniform integer in [0, bound).
    std::size_t next_index(std::size_t bound) {
        return std::min(bound - 1, static_cast<std::size_t>(uniform() * static_cast<double>(bound)));
    }

   private:
    std::uint64_t seed_;
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Decorrelated seed for a named substream (dataset draws vs. parameter init
// vs. shuffling must not replay each other's streams).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base ^ (0x9E3779B97F4A7C15ull * (stream + 1));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace obcs
