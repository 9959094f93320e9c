#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lotion/quant.hpp"
#include "lotion/smooth.hpp"
#include "lotion/tensor.hpp"
#include "lotion/testbeds.hpp"

namespace lotion {

/// Training methods. kPtqTarget and kGroundTruth are untrained references:
/// the quantized target w* (quadratic) and the GT two-layer construction.
enum class Method { kPtq, kQat, kRat, kLotion, kPtqTarget, kGroundTruth };

std::string to_string(Method m);
Method parse_method(const std::string& name);

/// lr0 · (ff + (1-ff)(1 + cos(π step / total)) / 2)
double cosine_lr(std::size_t step, std::size_t total, double lr0, double final_fraction);

/// Raised by sgd_step on a non-finite gradient.
class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// w - lr_now · grad.
Tensor sgd_step(const Tensor& w, const Tensor& grad, double lr_now);

/// Parameter update rule. Plain SGD is the only rule the testbeds use.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr_now) = 0;
};

class Sgd final : public Optimizer {
 public:
  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr_now) override;
};

/// A differentiable population objective over a list of weight tensors. Each
/// tensor is quantized on its own block scales.
class Problem {
 public:
  virtual ~Problem() = default;
  virtual std::vector<Tensor> initial_params() const = 0;
  /// Weights used by the untrained reference methods.
  virtual std::vector<Tensor> reference_params() const = 0;
  virtual double loss(std::span<const Tensor> params) const = 0;
  virtual double loss_grad(std::span<const Tensor> params, std::vector<Tensor>& grads) const = 0;
  /// Exact Hessian (Gauss-Newton) diagonal, one tensor per parameter.
  virtual std::vector<Tensor> curvature_diag(std::span<const Tensor> params) const = 0;
};

/// Linear regression on a PowerLawTask, starting from w = 0.
class QuadraticProblem final : public Problem {
 public:
  explicit QuadraticProblem(PowerLawTask task) : task_(std::move(task)) {}
  const PowerLawTask& task() const noexcept { return task_; }

  std::vector<Tensor> initial_params() const override;
  std::vector<Tensor> reference_params() const override;
  double loss(std::span<const Tensor> params) const override;
  double loss_grad(std::span<const Tensor> params, std::vector<Tensor>& grads) const override;
  std::vector<Tensor> curvature_diag(std::span<const Tensor> params) const override;

 private:
  PowerLawTask task_;
};

/// Two-layer linear network. W1 starts i.i.d. N(0, init_scale²) from stream
/// (seed, 1) and W2 starts at all ones.
class TwoLayerProblem final : public Problem {
 public:
  TwoLayerProblem(TwoLayerTask task, double init_scale = 1.0) : task_(std::move(task)), init_scale_(init_scale) {}
  const TwoLayerTask& task() const noexcept { return task_; }

  std::vector<Tensor> initial_params() const override;
  std::vector<Tensor> reference_params() const override;
  double loss(std::span<const Tensor> params) const override;
  double loss_grad(std::span<const Tensor> params, std::vector<Tensor>& grads) const override;
  std::vector<Tensor> curvature_diag(std::span<const Tensor> params) const override;

 private:
  TwoLayerTask task_;
  double init_scale_;
};

struct TrainConfig {
  Method method = Method::kPtq;
  double lr = 0.1;
  std::size_t total_steps = 1000;
  double final_fraction = 0.0;
  double lambda = 1.0;
  QuantFormat fmt = QuantFormat::uniform_int(4);
  std::size_t eval_every = 100;
  std::size_t rr_eval_seeds = 8;
  std::uint64_t seed = 0;
  CurvatureSource curvature = CurvatureSource::kExactHessianDiag;
  double fisher_beta = 0.999;
  /// LOTION only: also propagate the regularizer through the absmax scale.
  bool differentiate_scale = true;

  /// Throws std::invalid_argument naming the violated constraint. Reference
  /// methods ignore lr.
  void validate() const;
};

/// One evaluation of a checkpoint.
struct RunRecord {
  std::size_t step = 0;
  double fp_loss = 0.0;
  double rtn_loss = 0.0;
  double rr_loss_mean = 0.0;
  double rr_loss_sd = 0.0;
  double lr_now = 0.0;
  bool diverged = false;

  bool operator==(const RunRecord&) const = default;
};

struct TrainResult {
  std::vector<RunRecord> records;
  std::vector<Tensor> params;
  bool diverged = false;
  std::string diagnostic;
};

/// Loss above which a run counts as diverged.
inline constexpr double kDivergenceLoss = 1e12;

/// Evaluate a checkpoint: full-precision loss, RTN loss, and RR loss over
/// `rr_seeds` roundings drawn from stream (seed, eval stream for `step`).
RunRecord evaluate_checkpoint(const Problem& problem, std::span<const Tensor> params, const QuantFormat& fmt,
                              std::size_t rr_seeds, std::uint64_t seed, std::size_t step);

/// Run one configuration. Deterministic in (config, problem).
TrainResult train(const TrainConfig& config, const Problem& problem);

/// Identifies a run within a sweep.
struct RunKey {
  Method method = Method::kPtq;
  std::string fmt;
  double lr = 0.0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::size_t k = 0;  // hidden width; 0 for single-layer problems

  bool operator==(const RunKey&) const = default;
};

struct RunSummary {
  RunKey key;
  std::vector<RunRecord> records;
  bool diverged() const noexcept { return !records.empty() && records.back().diverged; }
};

enum class EvalRounding { kRtn, kRr };
std::string to_string(EvalRounding r);

/// Best run of one (method, fmt, k, seed) group under one evaluation rounding.
struct BestCurve {
  RunKey group;          // lr/lambda are those of the selected run
  EvalRounding rounding = EvalRounding::kRtn;
  std::size_t run_index = 0;  // into the input span
  double final_loss = 0.0;
};

/// For each group pick the run with the lowest final quantized loss, RTN and
/// RR independently. Diverged runs are skipped; ties go to the lower LR, then
/// the lower λ. Throws std::runtime_error when a group has no completed run.
std::vector<BestCurve> best_of_sweep(std::span<const RunSummary> runs);

}  // namespace lotion
