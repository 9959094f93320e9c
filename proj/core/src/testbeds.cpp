#include "lotion/testbeds.hpp"

#include <cmath>
#include <stdexcept>

namespace lotion {
namespace {

void require_dim(const Tensor& w, std::size_t d, const char* op) {
  if (w.size() != d) {
    throw ShapeError(std::string(op) + ": weights " + to_string(w.shape()) + " vs task dimension " +
                     std::to_string(d));
  }
}

void require_two_layer_shapes(const Tensor& w1, const Tensor& w2, std::size_t k, std::size_t d) {
  if (w1.shape() != Shape{k, d} || w2.shape() != Shape{1, k}) {
    throw ShapeError("two-layer: expected W1 " + to_string({k, d}) + " and W2 " + to_string({1, k}) + ", got " +
                     to_string(w1.shape()) + " and " + to_string(w2.shape()));
  }
}

}  // namespace

PowerLawTask make_power_law_task(std::size_t d, double alpha, std::uint64_t seed) {
  if (d == 0) throw std::invalid_argument("power-law task: d must be >= 1");
  if (!(alpha > 0.0)) throw std::invalid_argument("power-law task: alpha must be > 0");
  PowerLawTask task;
  task.d = d;
  task.alpha = alpha;
  task.seed = seed;
  std::vector<double> eig(d);
  for (std::size_t i = 0; i < d; ++i) eig[i] = std::pow(static_cast<double>(i + 1), -alpha);
  task.eigenvalues = Tensor::vector(std::move(eig));
  RngStream rng(seed, 0);
  task.w_star = normal(rng, d);
  return task;
}

LossGrad quadratic_loss_grad(const Tensor& w, const PowerLawTask& task) {
  require_dim(w, task.d, "quadratic_loss_grad");
  LossGrad out{0.0, Tensor(w.shape(), 0.0)};
  for (std::size_t i = 0; i < task.d; ++i) {
    const double e = w[i] - task.w_star[i];
    out.grad[i] = task.eigenvalues[i] * e;
    out.loss += 0.5 * task.eigenvalues[i] * e * e;
  }
  return out;
}

LossGrad minibatch_loss_grad(const Tensor& w, const PowerLawTask& task, std::size_t batch, RngStream& rng) {
  require_dim(w, task.d, "minibatch_loss_grad");
  if (batch == 0) throw std::invalid_argument("minibatch_loss_grad: batch must be >= 1");
  LossGrad out{0.0, Tensor(w.shape(), 0.0)};
  std::vector<double> x(task.d);
  for (std::size_t b = 0; b < batch; ++b) {
    double residual = 0.0;
    for (std::size_t i = 0; i < task.d; ++i) {
      x[i] = std::sqrt(task.eigenvalues[i]) * rng.normal();
      residual += (w[i] - task.w_star[i]) * x[i];
    }
    out.loss += 0.5 * residual * residual;
    for (std::size_t i = 0; i < task.d; ++i) out.grad[i] += residual * x[i];
  }
  const double inv = 1.0 / static_cast<double>(batch);
  out.loss *= inv;
  for (auto& g : out.grad.values()) g *= inv;
  return out;
}

TwoLayerTask make_two_layer_task(std::size_t d, std::size_t k, double alpha, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("two-layer task: k must be >= 1");
  return {make_power_law_task(d, alpha, seed), k};
}

Tensor effective_weights(const Tensor& w1, const Tensor& w2) {
  if (w1.rank() != 2 || w2.rank() != 2 || w2.shape()[0] != 1 || w2.shape()[1] != w1.shape()[0]) {
    throw ShapeError("effective_weights: W1 " + to_string(w1.shape()) + " and W2 " + to_string(w2.shape()) +
                     " do not compose");
  }
  const std::size_t k = w1.shape()[0], d = w1.shape()[1];
  Tensor v({d}, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const double a = w2[j];
    for (std::size_t i = 0; i < d; ++i) v[i] += a * w1[j * d + i];
  }
  const double inv_k = 1.0 / static_cast<double>(k);
  for (auto& x : v.values()) x *= inv_k;
  return v;
}

double two_layer_forward(const Tensor& w1, const Tensor& w2, const Tensor& x) {
  const Tensor hidden = matmul(w1, x);
  return dot(w2, hidden) / static_cast<double>(w1.shape()[0]);
}

TwoLayerGrads twolayer_loss_grads(const Tensor& w1, const Tensor& w2, const TwoLayerTask& task) {
  const std::size_t k = task.k, d = task.base.d;
  require_two_layer_shapes(w1, w2, k, d);
  const Tensor v = effective_weights(w1, w2);
  // r = H (v - w*)
  std::vector<double> r(d);
  TwoLayerGrads out{0.0, Tensor(w1.shape(), 0.0), Tensor(w2.shape(), 0.0)};
  for (std::size_t i = 0; i < d; ++i) {
    const double e = v[i] - task.base.w_star[i];
    r[i] = task.base.eigenvalues[i] * e;
    out.loss += 0.5 * r[i] * e;
  }
  const double inv_k = 1.0 / static_cast<double>(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double a = w2[j] * inv_k;
    double g2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      out.grad_w1[j * d + i] = a * r[i];
      g2 += w1[j * d + i] * r[i];
    }
    out.grad_w2[j] = g2 * inv_k;
  }
  return out;
}

TwoLayerCurvature twolayer_curvature_diag(const Tensor& w1, const Tensor& w2, const TwoLayerTask& task) {
  const std::size_t k = task.k, d = task.base.d;
  require_two_layer_shapes(w1, w2, k, d);
  const double inv_k2 = 1.0 / (static_cast<double>(k) * static_cast<double>(k));
  TwoLayerCurvature c{Tensor(w1.shape(), 0.0), Tensor(w2.shape(), 0.0)};
  for (std::size_t j = 0; j < k; ++j) {
    const double a2 = w2[j] * w2[j] * inv_k2;
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = task.base.eigenvalues[i];
      const double x = w1[j * d + i];
      c.w1[j * d + i] = a2 * h;
      acc += h * x * x;
    }
    c.w2[j] = acc * inv_k2;
  }
  return c;
}

TwoLayerWeights gt_weights(const TwoLayerTask& task) {
  const std::size_t k = task.k, d = task.base.d;
  TwoLayerWeights gt{Tensor({k, d}, 0.0), Tensor({1, k}, 1.0)};
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < d; ++i) gt.w1[j * d + i] = task.base.w_star[i];
  return gt;
}

double gt_rounded_loss(const TwoLayerTask& task, const QuantFormat& fmt, RoundingMode& mode) {
  const TwoLayerWeights gt = gt_weights(task);
  const Tensor w1 = apply_rounding(gt.w1, fmt, mode);
  const Tensor w2 = apply_rounding(gt.w2, fmt, mode);
  return twolayer_loss_grads(w1, w2, task).loss;
}

}  // namespace lotion
