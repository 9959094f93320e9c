#pragma once

#include <span>
#include <variant>

#include "lotion/quant.hpp"
#include "lotion/rng.hpp"
#include "lotion/tensor.hpp"

namespace lotion {

struct RoundToNearest {};

/// Randomized rounding; owns the stream it draws from.
struct RandomizedRounding {
  RngStream rng;
};

using RoundingMode = std::variant<RoundToNearest, RandomizedRounding>;

/// Round w to its format under the given mode. RR advances the mode's stream.
Tensor apply_rounding(const Tensor& w, const QuantFormat& fmt, RoundingMode& mode);

/// Unbiased randomized rounding: each coordinate independently becomes hi_i
/// with probability delta_i and lo_i otherwise. Representable coordinates are
/// returned unchanged and consume no randomness.
Tensor rr_sample(const Tensor& w, const QuantFormat& fmt, RngStream& rng);
Tensor rr_sample(const Tensor& w, const QuantView& view, RngStream& rng);

/// RR driven by caller-supplied uniforms (one per coordinate, used even for
/// representable coordinates). Two calls sharing `uniforms` are coupled.
Tensor rr_sample_with_uniforms(const Tensor& w, const QuantView& view, std::span<const double> uniforms);

/// Per-coordinate rounding-noise variances sigma_i^2 = (w_i - lo_i)(hi_i - w_i).
/// On a uniform lattice this is s_B^2 delta_i (1 - delta_i).
struct NoiseStats {
  Tensor sigma2;
};

NoiseStats rr_variance(const Tensor& w, const QuantFormat& fmt);
NoiseStats rr_variance(const QuantView& view, const Shape& shape);

/// d sigma_i^2 / d w_i with the block scale and neighbouring levels held
/// fixed: (hi_i - lo_i)(1 - 2 delta_i). On a lattice point the right-sided
/// limit (the gap to the next level up) is used. Coordinates on the extreme
/// level carry the block scale and stay representable as they move, so their
/// derivative is 0.
Tensor rr_variance_grad(const Tensor& w, const QuantFormat& fmt);
Tensor rr_variance_grad(const QuantView& view, const Shape& shape);

/// Gradient of sum_i weights_i * sigma_i^2(w).
///
/// With `differentiate_scale` the dependence of each block scale on its
/// absmax coordinate is propagated as well (ties resolve to the lowest index);
/// otherwise this is weights ⊙ rr_variance_grad.
Tensor weighted_variance_grad(const Tensor& w, const QuantFormat& fmt, const Tensor& weights,
                              bool differentiate_scale = false);

}  // namespace lotion
