#pragma once

#include <stdexcept>
#include <string>

namespace obcs {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes disagree (matrix/vector sizes, layer index out of range).
struct DimensionMismatch : Error {
    using Error::Error;
};

// Cholesky pivot <= 0: the input is not positive definite.
struct NotPositiveDefinite : Error {
    using Error::Error;
};

// Sparsity level outside [1, n].
struct InvalidSparsity : Error {
    using Error::Error;
};

// Optimizer state and parameter block shapes disagree.
struct ShapeMismatch : Error {
    using Error::Error;
};

// A backward pass was handed caches that do not match the forward pass.
struct StaleCache : Error {
    using Error::Error;
};

// Training loss became non-finite.
struct DivergenceDetected : Error {
    using Error::Error;
};

// NMSE reference vector is identically zero.
struct ZeroTruth : Error {
    using Error::Error;
};

// Invalid run configuration (CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem/serialization failure (CLI exit code 3).
struct IoError : Error {
    using Error::Error;
};

}  // namespace obcs
