#pragma once

#include <stdexcept>
#include <string>

namespace coalflow {

/// Gram matrix could not be factorized even after jitter escalation;
/// the kernel is not positive definite on the requested points.
struct FactorizationFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// The support of the integrand leaves the spatial grid of a noise slab.
struct WindowTooSmall : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Noise slabs that should share a spatial grid (or a resolution) do not.
struct GridMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Paired time series of different lengths.
struct LengthMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Not enough (or unusable) data for a fit.
struct DegenerateInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Experiment configuration failed validation.
struct ConfigInvalid : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace coalflow
