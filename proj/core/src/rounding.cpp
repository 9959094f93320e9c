#include "lotion/rounding.hpp"

#include <cmath>
#include <stdexcept>

#include "lattice.hpp"

namespace lotion {
namespace {

void require_view_matches(const Tensor& w, const QuantView& view, const char* op) {
  if (view.size() != w.size()) {
    throw ShapeError(std::string(op) + ": view of size " + std::to_string(view.size()) +
                     " does not match tensor " + to_string(w.shape()));
  }
}

}  // namespace

Tensor apply_rounding(const Tensor& w, const QuantFormat& fmt, RoundingMode& mode) {
  if (auto* rr = std::get_if<RandomizedRounding>(&mode)) return rr_sample(w, fmt, rr->rng);
  return cast_rtn(w, fmt);
}

Tensor rr_sample(const Tensor& w, const QuantFormat& fmt, RngStream& rng) {
  Tensor out = w;
  detail::for_each_position(w, fmt, [&](std::size_t i, std::size_t, double, const detail::CoordinatePosition& p) {
    out[i] = p.lo == p.hi ? p.lo : (rng.uniform01() < p.delta ? p.hi : p.lo);
  });
  return out;
}

Tensor rr_sample(const Tensor& w, const QuantView& view, RngStream& rng) {
  require_view_matches(w, view, "rr_sample");
  Tensor out = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (view.representable(i)) {
      out[i] = view.lo[i];
      continue;
    }
    out[i] = rng.uniform01() < view.delta[i] ? view.hi[i] : view.lo[i];
  }
  return out;
}

Tensor rr_sample_with_uniforms(const Tensor& w, const QuantView& view, std::span<const double> uniforms) {
  require_view_matches(w, view, "rr_sample_with_uniforms");
  if (uniforms.size() != w.size()) throw ShapeError("rr_sample_with_uniforms: need one uniform per coordinate");
  Tensor out = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    out[i] = view.representable(i) ? view.lo[i] : (uniforms[i] < view.delta[i] ? view.hi[i] : view.lo[i]);
  }
  return out;
}

NoiseStats rr_variance(const QuantView& view, const Shape& shape) {
  Tensor sigma2(shape, 0.0);
  if (sigma2.size() != view.size()) throw ShapeError("rr_variance: view does not match shape " + to_string(shape));
  for (std::size_t i = 0; i < view.size(); ++i) {
    if (view.representable(i)) continue;
    const double gap = view.hi[i] - view.lo[i];
    const double d = view.delta[i];
    sigma2[i] = gap * gap * d * (1.0 - d);
  }
  return {std::move(sigma2)};
}

NoiseStats rr_variance(const Tensor& w, const QuantFormat& fmt) {
  Tensor sigma2(w.shape(), 0.0);
  detail::for_each_position(w, fmt, [&](std::size_t i, std::size_t, double, const detail::CoordinatePosition& p) {
    const double gap = p.hi - p.lo;
    sigma2[i] = gap * gap * p.delta * (1.0 - p.delta);
  });
  return {std::move(sigma2)};
}

Tensor rr_variance_grad(const QuantView& view, const Shape& shape) {
  Tensor grad(shape, 0.0);
  if (grad.size() != view.size()) throw ShapeError("rr_variance_grad: view does not match shape " + to_string(shape));
  for (std::size_t i = 0; i < view.size(); ++i) {
    if (view.at_extreme[i]) continue;
    if (view.representable(i)) {
      grad[i] = view.up_gap[i];
      continue;
    }
    grad[i] = (view.hi[i] - view.lo[i]) * (1.0 - 2.0 * view.delta[i]);
  }
  return grad;
}

Tensor rr_variance_grad(const Tensor& w, const QuantFormat& fmt) { return rr_variance_grad(quant_view(w, fmt), w.shape()); }

Tensor weighted_variance_grad(const Tensor& w, const QuantFormat& fmt, const Tensor& weights,
                              bool differentiate_scale) {
  if (weights.size() != w.size()) {
    throw ShapeError("weighted_variance_grad: weights " + to_string(weights.shape()) + " vs weights tensor " +
                     to_string(w.shape()));
  }
  // sigma_j^2 = (w_j - s a_j)(s b_j - w_j) with a_j, b_j the unscaled levels,
  // so d sigma_j^2 / ds = w_j (a_j + b_j) - 2 s a_j b_j. The scale moves with
  // the absmax coordinate m as ds/dw_m = sign(w_m) / L. Representable
  // coordinates contribute nothing (one-sided, measure-zero).
  Tensor grad(w.shape(), 0.0);
  const double top = fmt.max_level();
  std::size_t current = static_cast<std::size_t>(-1), argmax = 0;
  double dloss_ds = 0.0;
  auto flush = [&] {
    if (current != static_cast<std::size_t>(-1) && dloss_ds != 0.0) {
      grad[argmax] += dloss_ds * std::copysign(1.0, w[argmax]) / top;
    }
  };
  detail::for_each_position(w, fmt, [&](std::size_t i, std::size_t b, double s, const detail::CoordinatePosition& p) {
    if (b != current) {
      flush();
      current = b;
      argmax = i;
      dloss_ds = 0.0;
    }
    if (std::abs(w[i]) > std::abs(w[argmax])) argmax = i;
    if (p.at_extreme) return;
    if (p.lo == p.hi) {
      grad[i] += weights[i] * p.up_gap;
      return;
    }
    grad[i] += weights[i] * (p.hi - p.lo) * (1.0 - 2.0 * p.delta);
    if (differentiate_scale && s != 0.0) {
      const double a = p.lo / s;
      const double bj = p.hi / s;
      dloss_ds += weights[i] * (w[i] * (a + bj) - 2.0 * s * a * bj);
    }
  });
  flush();
  return grad;
}

}  // namespace lotion
