#include "lotion/smooth.hpp"

#include <cmath>
#include <stdexcept>

#include "lotion/rounding.hpp"

namespace lotion {
namespace {

bool is_diagonal_form(const Tensor& h, std::size_t d) { return h.rank() == 1 && h.size() == d; }

void require_hessian(const Tensor& h, std::size_t d, const char* op) {
  const bool dense = h.rank() == 2 && h.shape()[0] == d && h.shape()[1] == d;
  if (!dense && !is_diagonal_form(h, d)) {
    throw ShapeError(std::string(op) + ": hessian " + to_string(h.shape()) + " incompatible with dimension " +
                     std::to_string(d));
  }
}

double hessian_diag(const Tensor& h, std::size_t i, std::size_t d) {
  return h.rank() == 1 ? h[i] : h[i * d + i];
}

void require_curvature(const Tensor& w, const Tensor& c, double lambda, const char* op) {
  if (c.size() != w.size()) {
    throw ShapeError(std::string(op) + ": curvature " + to_string(c.shape()) + " vs weights " + to_string(w.shape()));
  }
  if (!(lambda >= 0.0)) throw std::invalid_argument(std::string(op) + ": lambda must be >= 0");
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!(c[i] >= 0.0)) {
      throw std::invalid_argument(std::string(op) + ": curvature entry " + std::to_string(i) +
                                  " is negative; the Gauss-Newton diagonal must be PSD");
    }
  }
}

double regularizer(const Tensor& sigma2, const Tensor& c) {
  double r = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) r += c[i] * sigma2[i];
  return r;
}

}  // namespace

double quadratic_value(const Tensor& w, const Tensor& hessian, const Tensor& w_star) {
  const std::size_t d = w.size();
  if (w_star.size() != d) throw ShapeError("quadratic: w " + to_string(w.shape()) + " vs w* " + to_string(w_star.shape()));
  require_hessian(hessian, d, "quadratic");
  std::vector<double> e(d);
  for (std::size_t i = 0; i < d; ++i) e[i] = w[i] - w_star[i];
  double q = 0.0;
  if (hessian.rank() == 1) {
    for (std::size_t i = 0; i < d; ++i) q += hessian[i] * e[i] * e[i];
  } else {
    for (std::size_t i = 0; i < d; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < d; ++j) row += hessian[i * d + j] * e[j];
      q += e[i] * row;
    }
  }
  return 0.5 * q;
}

double smoothed_quadratic_exact(const Tensor& w, const Tensor& hessian, const Tensor& w_star,
                                const QuantFormat& fmt) {
  const double base = quadratic_value(w, hessian, w_star);
  const Tensor sigma2 = rr_variance(w, fmt).sigma2;
  double trace = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) trace += hessian_diag(hessian, i, w.size()) * sigma2[i];
  return base + 0.5 * trace;
}

double lotion_gn_loss(const Tensor& w, double base_loss, const Tensor& curvature_diag, const QuantFormat& fmt,
                      double lambda) {
  require_curvature(w, curvature_diag, lambda, "lotion_gn_loss");
  if (lambda == 0.0) return base_loss;
  return base_loss + 0.5 * lambda * regularizer(rr_variance(w, fmt).sigma2, curvature_diag);
}

double lotion_gn_loss(const Tensor& w, double base_loss, const Tensor& curvature_diag, const QuantFormat& fmt,
                      double lambda, std::span<const double> frozen_scales) {
  require_curvature(w, curvature_diag, lambda, "lotion_gn_loss");
  if (lambda == 0.0) return base_loss;
  const Tensor sigma2 = rr_variance(quant_view(w, fmt, frozen_scales), w.shape()).sigma2;
  return base_loss + 0.5 * lambda * regularizer(sigma2, curvature_diag);
}

Tensor lotion_gn_grad(const Tensor& w, const Tensor& base_grad, const Tensor& curvature_diag,
                      const QuantFormat& fmt, const LotionOptions& opts) {
  require_curvature(w, curvature_diag, opts.lambda, "lotion_gn_grad");
  if (base_grad.shape() != w.shape()) {
    throw ShapeError("lotion_gn_grad: gradient " + to_string(base_grad.shape()) + " vs weights " +
                     to_string(w.shape()));
  }
  if (opts.lambda == 0.0) return base_grad;
  const Tensor reg = weighted_variance_grad(w, fmt, curvature_diag, opts.differentiate_scale);
  return axpy(base_grad, 0.5 * opts.lambda, reg);
}

FisherDiag::FisherDiag(Shape shape, double beta) : v_(std::move(shape), 0.0), beta_(beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("FisherDiag: beta must be in [0, 1)");
}

void FisherDiag::update(const Tensor& grad) {
  if (grad.shape() != v_.shape()) {
    throw ShapeError("FisherDiag::update: gradient " + to_string(grad.shape()) + " vs state " + to_string(v_.shape()));
  }
  if (!all_finite(grad.values())) throw std::domain_error("FisherDiag::update: non-finite gradient");
  for (std::size_t i = 0; i < v_.size(); ++i) v_[i] = beta_ * v_[i] + (1.0 - beta_) * grad[i] * grad[i];
  ++steps_;
}

Tensor FisherDiag::read() const {
  if (steps_ == 0) return v_;
  const double correction = 1.0 - std::pow(beta_, static_cast<double>(steps_));
  Tensor out = v_;
  for (auto& v : out.values()) v /= correction;
  return out;
}

FisherDiag fisher_update(FisherDiag f, const Tensor& grad) {
  f.update(grad);
  return f;
}

MonteCarloEstimate mc_smoothed_loss(const std::function<double(const Tensor&)>& loss, const Tensor& w,
                                    const QuantFormat& fmt, RngStream& rng, std::size_t draws) {
  if (draws < 2) throw std::invalid_argument("mc_smoothed_loss: need at least 2 draws");
  const QuantView view = quant_view(w, fmt);
  // Welford accumulation keeps the variance accurate for large draw counts.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t n = 1; n <= draws; ++n) {
    const double x = loss(rr_sample(w, view, rng));
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  MonteCarloEstimate est;
  est.mean = mean;
  est.sd = std::sqrt(m2 / static_cast<double>(draws - 1));
  est.sem = est.sd / std::sqrt(static_cast<double>(draws));
  est.draws = draws;
  return est;
}

}  // namespace lotion
