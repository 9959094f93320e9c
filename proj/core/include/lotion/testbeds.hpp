#pragma once

#include <cstddef>
#include <cstdint>

#include "lotion/quant.hpp"
#include "lotion/rng.hpp"
#include "lotion/rounding.hpp"
#include "lotion/tensor.hpp"

namespace lotion {

/// Noiseless linear regression y = w*ᵀx with x ~ N(0, diag(λ)), worked in the
/// eigenbasis. λ_i = i^(-alpha) so λ_1 = 1 and the spectrum is nonincreasing.
struct PowerLawTask {
  std::size_t d = 0;
  double alpha = 1.1;
  Tensor eigenvalues;  // population Hessian diagonal
  Tensor w_star;
  std::uint64_t seed = 0;
};

/// w* is i.i.d. standard normal drawn from stream (seed, 0).
PowerLawTask make_power_law_task(std::size_t d, double alpha, std::uint64_t seed);

struct LossGrad {
  double loss = 0.0;
  Tensor grad;
};

/// Population loss ½(w-w*)ᵀH(w-w*) and gradient H(w-w*).
LossGrad quadratic_loss_grad(const Tensor& w, const PowerLawTask& task);

/// Gradient of the empirical loss on a freshly sampled minibatch.
LossGrad minibatch_loss_grad(const Tensor& w, const PowerLawTask& task, std::size_t batch, RngStream& rng);

/// f(x) = (1/k) W2 W1 x with W1: k×d and W2: 1×k, trained on a PowerLawTask.
struct TwoLayerTask {
  PowerLawTask base;
  std::size_t k = 1;
};

TwoLayerTask make_two_layer_task(std::size_t d, std::size_t k, double alpha, std::uint64_t seed);

struct TwoLayerGrads {
  double loss = 0.0;
  Tensor grad_w1;
  Tensor grad_w2;
};

/// v = (1/k)(W2 W1)ᵀ, the end-to-end linear predictor.
Tensor effective_weights(const Tensor& w1, const Tensor& w2);

/// f(x) for a single input.
double two_layer_forward(const Tensor& w1, const Tensor& w2, const Tensor& x);

/// Population loss ½(v-w*)ᵀH(v-w*) and exact chain-rule gradients.
TwoLayerGrads twolayer_loss_grads(const Tensor& w1, const Tensor& w2, const TwoLayerTask& task);

/// Exact diagonal of the population Hessian (equal to its Gauss-Newton part
/// here, since f is linear in each individual weight).
struct TwoLayerCurvature {
  Tensor w1;
  Tensor w2;
};
TwoLayerCurvature twolayer_curvature_diag(const Tensor& w1, const Tensor& w2, const TwoLayerTask& task);

/// Ground-truth construction: W2 all ones, every row of W1 equal to w*.
struct TwoLayerWeights {
  Tensor w1;
  Tensor w2;
};
TwoLayerWeights gt_weights(const TwoLayerTask& task);

/// Quantized population loss of the GT construction. Each tensor is rounded
/// on its own scale; under RR every row of W1 is an independent rounding of w*.
double gt_rounded_loss(const TwoLayerTask& task, const QuantFormat& fmt, RoundingMode& mode);

}  // namespace lotion
