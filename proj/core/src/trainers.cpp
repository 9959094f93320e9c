#include "lotion/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <tuple>

#include "lotion/rounding.hpp"

namespace lotion {
namespace {

// Stream ids under the run seed. Task data uses stream 0.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTrainRoundingStream = 2;
constexpr std::uint64_t kEvalStreamBase = std::uint64_t{1} << 32;

bool is_reference(Method m) { return m == Method::kPtqTarget || m == Method::kGroundTruth; }

std::vector<Tensor> round_all(std::span<const Tensor> params, const QuantFormat& fmt, RoundingMode& mode) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(apply_rounding(p, fmt, mode));
  return out;
}

RunRecord diverged_record(std::size_t step, double lr_now) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  return {step, nan, nan, nan, nan, lr_now, true};
}

bool blown_up(double loss) { return !std::isfinite(loss) || loss > kDivergenceLoss; }

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::kPtq: return "ptq";
    case Method::kQat: return "qat";
    case Method::kRat: return "rat";
    case Method::kLotion: return "lotion";
    case Method::kPtqTarget: return "ptq-target";
    case Method::kGroundTruth: return "gt";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::kPtq, Method::kQat, Method::kRat, Method::kLotion, Method::kPtqTarget,
                   Method::kGroundTruth}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown method '" + name + "' (expected ptq, qat, rat, lotion, ptq-target, gt)");
}

std::string to_string(EvalRounding r) { return r == EvalRounding::kRtn ? "RTN" : "RR"; }

double cosine_lr(std::size_t step, std::size_t total, double lr0, double final_fraction) {
  if (total == 0 || step > total) throw std::invalid_argument("cosine_lr: need 0 <= step <= total, total >= 1");
  const double progress = static_cast<double>(step) / static_cast<double>(total);
  return lr0 * (final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

Tensor sgd_step(const Tensor& w, const Tensor& grad, double lr_now) {
  if (w.shape() != grad.shape()) {
    throw ShapeError("sgd_step: weights " + to_string(w.shape()) + " vs gradient " + to_string(grad.shape()));
  }
  if (!(lr_now > 0.0)) throw std::invalid_argument("sgd_step: lr must be > 0");
  if (!all_finite(grad.values())) throw NonFiniteGradient("sgd_step: non-finite gradient");
  Tensor out = w;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= lr_now * grad[i];
  if (!all_finite(out.values())) throw NonFiniteGradient("sgd_step: update overflowed");
  return out;
}

void Sgd::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr_now) {
  for (std::size_t p = 0; p < params.size(); ++p) params[p] = sgd_step(params[p], grads[p], lr_now);
}

// --- problems -------------------------------------------------------------

std::vector<Tensor> QuadraticProblem::initial_params() const { return {Tensor({task_.d}, 0.0)}; }

std::vector<Tensor> QuadraticProblem::reference_params() const { return {task_.w_star}; }

double QuadraticProblem::loss(std::span<const Tensor> params) const {
  return quadratic_loss_grad(params[0], task_).loss;
}

double QuadraticProblem::loss_grad(std::span<const Tensor> params, std::vector<Tensor>& grads) const {
  LossGrad lg = quadratic_loss_grad(params[0], task_);
  grads.assign(1, std::move(lg.grad));
  return lg.loss;
}

std::vector<Tensor> QuadraticProblem::curvature_diag(std::span<const Tensor>) const { return {task_.eigenvalues}; }

std::vector<Tensor> TwoLayerProblem::initial_params() const {
  RngStream rng(task_.base.seed, kInitStream);
  Tensor w1({task_.k, task_.base.d}, 0.0);
  for (auto& x : w1.values()) x = init_scale_ * rng.normal();
  return {std::move(w1), Tensor({1, task_.k}, 1.0)};
}

std::vector<Tensor> TwoLayerProblem::reference_params() const {
  TwoLayerWeights gt = gt_weights(task_);
  return {std::move(gt.w1), std::move(gt.w2)};
}

double TwoLayerProblem::loss(std::span<const Tensor> params) const {
  const Tensor v = effective_weights(params[0], params[1]);
  double l = 0.0;
  for (std::size_t i = 0; i < task_.base.d; ++i) {
    const double e = v[i] - task_.base.w_star[i];
    l += 0.5 * task_.base.eigenvalues[i] * e * e;
  }
  return l;
}

double TwoLayerProblem::loss_grad(std::span<const Tensor> params, std::vector<Tensor>& grads) const {
  TwoLayerGrads g = twolayer_loss_grads(params[0], params[1], task_);
  grads.clear();
  grads.push_back(std::move(g.grad_w1));
  grads.push_back(std::move(g.grad_w2));
  return g.loss;
}

std::vector<Tensor> TwoLayerProblem::curvature_diag(std::span<const Tensor> params) const {
  TwoLayerCurvature c = twolayer_curvature_diag(params[0], params[1], task_);
  return {std::move(c.w1), std::move(c.w2)};
}

// --- training -------------------------------------------------------------

void TrainConfig::validate() const {
  if (!is_reference(method) && (!(lr > 0.0) || !std::isfinite(lr))) throw std::invalid_argument("lr: must be a finite value > 0");
  if (total_steps < 1) throw std::invalid_argument("total_steps: must be >= 1");
  if (eval_every < 1 || total_steps % eval_every != 0) {
    throw std::invalid_argument("eval_every: must be >= 1 and divide total_steps");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda: must be a finite value >= 0");
  if (!(final_fraction >= 0.0 && final_fraction <= 1.0)) {
    throw std::invalid_argument("final_fraction: must be in [0, 1]");
  }
  if (rr_eval_seeds < 1) throw std::invalid_argument("rr_eval_seeds: must be >= 1");
  if (!(fisher_beta >= 0.0 && fisher_beta < 1.0)) throw std::invalid_argument("fisher_beta: must be in [0, 1)");
}

RunRecord evaluate_checkpoint(const Problem& problem, std::span<const Tensor> params, const QuantFormat& fmt,
                              std::size_t rr_seeds, std::uint64_t seed, std::size_t step) {
  RunRecord rec;
  rec.step = step;
  rec.fp_loss = problem.loss(params);
  RoundingMode rtn = RoundToNearest{};
  rec.rtn_loss = problem.loss(round_all(params, fmt, rtn));

  // Every arm evaluating at the same (seed, step) sees the same uniforms.
  RoundingMode rr = RandomizedRounding{RngStream(seed, kEvalStreamBase + step)};
  double mean = 0.0, m2 = 0.0;
  for (std::size_t r = 1; r <= rr_seeds; ++r) {
    const double x = problem.loss(round_all(params, fmt, rr));
    const double d = x - mean;
    mean += d / static_cast<double>(r);
    m2 += d * (x - mean);
  }
  rec.rr_loss_mean = mean;
  rec.rr_loss_sd = rr_seeds > 1 ? std::sqrt(m2 / static_cast<double>(rr_seeds - 1)) : 0.0;
  return rec;
}

TrainResult train(const TrainConfig& config, const Problem& problem) {
  config.validate();
  TrainResult result;

  if (is_reference(config.method)) {
    result.params = problem.reference_params();
    for (std::size_t step = config.eval_every; step <= config.total_steps; step += config.eval_every) {
      result.records.push_back(
          evaluate_checkpoint(problem, result.params, config.fmt, config.rr_eval_seeds, config.seed, step));
    }
    return result;
  }

  std::vector<Tensor> params = problem.initial_params();
  Sgd optimizer;
  RoundingMode train_rr = RandomizedRounding{RngStream(config.seed, kTrainRoundingStream)};
  RoundingMode train_rtn = RoundToNearest{};
  const bool regularize = config.method == Method::kLotion && config.lambda > 0.0;
  std::vector<FisherDiag> fishers;
  if (regularize && config.curvature == CurvatureSource::kEmpiricalFisher) {
    for (const auto& p : params) fishers.emplace_back(p.shape(), config.fisher_beta);
  }
  const LotionOptions lotion{config.lambda, config.differentiate_scale};

  std::vector<Tensor> grads;
  for (std::size_t t = 0; t < config.total_steps; ++t) {
    const double lr_now = cosine_lr(t, config.total_steps, config.lr, config.final_fraction);

    double loss = 0.0;
    switch (config.method) {
      case Method::kQat: loss = problem.loss_grad(round_all(params, config.fmt, train_rtn), grads); break;
      case Method::kRat: loss = problem.loss_grad(round_all(params, config.fmt, train_rr), grads); break;
      default: loss = problem.loss_grad(params, grads); break;
    }

    if (!blown_up(loss) && regularize) {
      std::vector<Tensor> curvature;
      if (fishers.empty()) {
        curvature = problem.curvature_diag(params);
      } else {
        for (std::size_t p = 0; p < params.size(); ++p) {
          fishers[p].update(grads[p]);
          curvature.push_back(fishers[p].read());
        }
      }
      for (std::size_t p = 0; p < params.size(); ++p) {
        grads[p] = lotion_gn_grad(params[p], grads[p], curvature[p], config.fmt, lotion);
      }
    }

    bool diverged = blown_up(loss);
    if (!diverged) {
      try {
        optimizer.step(params, grads, lr_now);
      } catch (const NonFiniteGradient& e) {
        diverged = true;
        result.diagnostic = e.what();
      }
    } else {
      result.diagnostic = "training loss " + std::to_string(loss) + " at step " + std::to_string(t);
    }

    const std::size_t step = t + 1;
    if (!diverged && step % config.eval_every == 0) {
      RunRecord rec = evaluate_checkpoint(problem, params, config.fmt, config.rr_eval_seeds, config.seed, step);
      rec.lr_now = lr_now;
      if (blown_up(rec.fp_loss)) {
        diverged = true;
        result.diagnostic = "evaluation loss " + std::to_string(rec.fp_loss) + " at step " + std::to_string(step);
      } else {
        result.records.push_back(rec);
      }
    }
    if (diverged) {
      result.records.push_back(diverged_record(step, lr_now));
      result.diverged = true;
      break;
    }
  }
  result.params = std::move(params);
  return result;
}

// --- sweep selection ------------------------------------------------------

std::vector<BestCurve> best_of_sweep(std::span<const RunSummary> runs) {
  struct Group {
    RunKey key;
    std::vector<std::size_t> members;
  };
  std::vector<Group> groups;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const RunKey& k = runs[i].key;
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
      return g.key.method == k.method && g.key.fmt == k.fmt && g.key.k == k.k && g.key.seed == k.seed;
    });
    if (it == groups.end()) {
      groups.push_back({k, {i}});
    } else {
      it->members.push_back(i);
    }
  }

  std::vector<BestCurve> best;
  for (const auto& g : groups) {
    for (EvalRounding rounding : {EvalRounding::kRtn, EvalRounding::kRr}) {
      std::optional<BestCurve> pick;
      for (std::size_t i : g.members) {
        const RunSummary& run = runs[i];
        if (run.records.empty() || run.diverged()) continue;
        const RunRecord& last = run.records.back();
        const double loss = rounding == EvalRounding::kRtn ? last.rtn_loss : last.rr_loss_mean;
        const auto rank = std::make_tuple(loss, run.key.lr, run.key.lambda);
        if (!pick || rank < std::make_tuple(pick->final_loss, pick->group.lr, pick->group.lambda)) {
          pick = BestCurve{run.key, rounding, i, loss};
        }
      }
      if (!pick) {
        std::string configs;
        for (std::size_t i : g.members) {
          configs += " lr=" + std::to_string(runs[i].key.lr) + ",lambda=" + std::to_string(runs[i].key.lambda) + ";";
        }
        throw std::runtime_error("best_of_sweep: every run of " + to_string(g.key.method) + "/" + g.key.fmt +
                                 " diverged:" + configs);
      }
      best.push_back(*pick);
    }
  }
  return best;
}

}  // namespace lotion
