#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "lotion/quant.hpp"
#include "lotion/rng.hpp"
#include "lotion/tensor.hpp"

namespace lotion {

/// Expected loss under randomized rounding for L(w) = ½(w-w*)ᵀH(w-w*).
///
/// Rounding noise is zero-mean with diagonal covariance, so the expectation
/// is exact: L(w) + ½ Σ_i H_ii σ_i². H is either a dense d×d PSD matrix or a
/// length-d diagonal.
double smoothed_quadratic_exact(const Tensor& w, const Tensor& hessian, const Tensor& w_star,
                                const QuantFormat& fmt);

/// ½(w-w*)ᵀH(w-w*) for dense or diagonal H.
double quadratic_value(const Tensor& w, const Tensor& hessian, const Tensor& w_star);

struct LotionOptions {
  double lambda = 1.0;
  /// Propagate the regularizer gradient through the absmax block scale.
  bool differentiate_scale = false;
};

/// base_loss + (λ/2) Σ_i c_i σ_i²(w), with c the (detached) curvature diagonal.
/// Throws std::invalid_argument on a negative curvature entry or λ < 0.
double lotion_gn_loss(const Tensor& w, double base_loss, const Tensor& curvature_diag, const QuantFormat& fmt,
                      double lambda);
/// Same, with block scales held at `frozen_scales`.
double lotion_gn_loss(const Tensor& w, double base_loss, const Tensor& curvature_diag, const QuantFormat& fmt,
                      double lambda, std::span<const double> frozen_scales);

/// base_grad + (λ/2) c ⊙ dσ²/dw. The curvature is never differentiated.
Tensor lotion_gn_grad(const Tensor& w, const Tensor& base_grad, const Tensor& curvature_diag,
                      const QuantFormat& fmt, const LotionOptions& opts);
inline Tensor lotion_gn_grad(const Tensor& w, const Tensor& base_grad, const Tensor& curvature_diag,
                             const QuantFormat& fmt, double lambda) {
  return lotion_gn_grad(w, base_grad, curvature_diag, fmt, LotionOptions{lambda, false});
}

/// Diagonal empirical Fisher: an exponential moving average of squared
/// gradients with Adam-style bias correction on read.
class FisherDiag {
 public:
  explicit FisherDiag(Shape shape, double beta = 0.999);

  void update(const Tensor& grad);
  /// Bias-corrected estimate v / (1 - beta^t); zeros before the first update.
  Tensor read() const;

  double beta() const noexcept { return beta_; }
  std::uint64_t step_count() const noexcept { return steps_; }
  const Tensor& raw() const noexcept { return v_; }

 private:
  Tensor v_;
  double beta_;
  std::uint64_t steps_ = 0;
};

FisherDiag fisher_update(FisherDiag f, const Tensor& grad);

/// Where the regularizer's curvature diagonal comes from.
enum class CurvatureSource { kExactHessianDiag, kEmpiricalFisher };

struct MonteCarloEstimate {
  double mean = 0.0;
  double sd = 0.0;    // sample standard deviation of the draws
  double sem = 0.0;   // sd / sqrt(n)
  std::size_t draws = 0;
};

/// Monte-Carlo estimate of E[loss(RR(w))] from `draws` independent roundings.
MonteCarloEstimate mc_smoothed_loss(const std::function<double(const Tensor&)>& loss, const Tensor& w,
                                    const QuantFormat& fmt, RngStream& rng, std::size_t draws);

}  // namespace lotion
