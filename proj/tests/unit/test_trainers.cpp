#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "lotion/trainers.hpp"

using namespace lotion;

namespace {

TrainConfig quick(Method m, double lr = 0.5) {
  TrainConfig c;
  c.method = m;
  c.lr = lr;
  c.total_steps = 200;
  c.eval_every = 50;
  c.lambda = 1.0;
  return c;
}

}  // namespace

TEST(Methods, NamesRoundTrip) {
  for (Method m : {Method::kPtq, Method::kQat, Method::kRat, Method::kLotion, Method::kPtqTarget,
                   Method::kGroundTruth}) {
    EXPECT_EQ(parse_method(to_string(m)), m);
  }
  EXPECT_THROW(parse_method("adam"), std::invalid_argument);
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 0.4, 0.0), 0.4);
  EXPECT_NEAR(cosine_lr(50, 100, 0.4, 0.0), 0.2, 1e-15);
  EXPECT_NEAR(cosine_lr(100, 100, 0.4, 0.0), 0.0, 1e-15);
  EXPECT_NEAR(cosine_lr(100, 100, 0.4, 0.25), 0.1, 1e-15);
  EXPECT_THROW(cosine_lr(101, 100, 0.4, 0.0), std::invalid_argument);
  EXPECT_THROW(cosine_lr(0, 0, 0.4, 0.0), std::invalid_argument);
}

TEST(Sgd, StepAndFailureModes) {
  EXPECT_EQ(sgd_step(Tensor::vector({1, 2}), Tensor::vector({2, -2}), 0.5), Tensor::vector({0, 3}));
  EXPECT_THROW(sgd_step(Tensor::vector({1}), Tensor::vector({1, 2}), 0.5), ShapeError);
  EXPECT_THROW(sgd_step(Tensor::vector({1}), Tensor::vector({1}), 0.0), std::invalid_argument);
  EXPECT_THROW(sgd_step(Tensor::vector({1}), Tensor::vector({std::numeric_limits<double>::quiet_NaN()}), 0.1),
               NonFiniteGradient);
  std::vector<Tensor> p{Tensor::vector({1}), Tensor::vector({2})};
  Sgd().step(p, {Tensor::vector({1}), Tensor::vector({1})}, 1.0);
  EXPECT_EQ(p[0][0], 0.0);
  EXPECT_EQ(p[1][0], 1.0);
}

TEST(TrainConfig, Validation) {
  TrainConfig c = quick(Method::kQat);
  EXPECT_NO_THROW(c.validate());
  c.lr = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.method = Method::kPtqTarget;
  EXPECT_NO_THROW(c.validate());
  c = quick(Method::kQat);
  c.eval_every = 30;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = quick(Method::kLotion);
  c.lambda = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = quick(Method::kQat);
  c.final_fraction = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = quick(Method::kQat);
  c.rr_eval_seeds = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Train, RecordsAtEvalSteps) {
  const QuadraticProblem prob(make_power_law_task(32, 1.1, 0));
  const TrainResult r = train(quick(Method::kPtq), prob);
  ASSERT_EQ(r.records.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.records[i].step, 50 * (i + 1));
  EXPECT_FALSE(r.diverged);
  EXPECT_LT(r.records.back().fp_loss, r.records.front().fp_loss);
  EXPECT_LE(r.records.back().fp_loss, r.records.back().rtn_loss);
}

TEST(Train, IsDeterministic) {
  const QuadraticProblem prob(make_power_law_task(32, 1.1, 0));
  for (Method m : {Method::kQat, Method::kRat, Method::kLotion}) {
    EXPECT_EQ(train(quick(m), prob).records, train(quick(m), prob).records) << to_string(m);
  }
}

TEST(Train, LotionWithZeroLambdaEqualsPtq) {
  const TwoLayerProblem prob(make_two_layer_task(16, 2, 1.1, 0), 0.3);
  TrainConfig lotion = quick(Method::kLotion, 0.3);
  lotion.lambda = 0.0;
  EXPECT_EQ(train(lotion, prob).records, train(quick(Method::kPtq, 0.3), prob).records);
}

TEST(Train, LotionRegularizerReducesRoundingVariance) {
  const QuadraticProblem prob(make_power_law_task(64, 1.1, 0));
  TrainConfig c = quick(Method::kLotion, 0.5);
  c.total_steps = 400;
  c.eval_every = 400;
  c.lambda = 1.0;
  const RunRecord lotion = train(c, prob).records.back();
  const RunRecord ptq = train(quick(Method::kPtq, 0.5), prob).records.back();
  EXPECT_LT(lotion.rr_loss_mean - lotion.fp_loss, ptq.rr_loss_mean - ptq.fp_loss);
}

TEST(Train, EmpiricalFisherCurvatureRuns) {
  const TwoLayerProblem prob(make_two_layer_task(16, 2, 1.1, 0), 0.3);
  TrainConfig c = quick(Method::kLotion, 0.3);
  c.curvature = CurvatureSource::kEmpiricalFisher;
  const TrainResult r = train(c, prob);
  EXPECT_FALSE(r.diverged);
  EXPECT_NE(r.records, train(quick(Method::kLotion, 0.3), prob).records);
}

TEST(Train, DivergenceIsRecorded) {
  const QuadraticProblem prob(make_power_law_task(32, 1.1, 0));
  const TrainResult r = train(quick(Method::kPtq, 50.0), prob);
  ASSERT_TRUE(r.diverged);
  EXPECT_TRUE(r.records.back().diverged);
  EXPECT_FALSE(r.diagnostic.empty());
}

TEST(Train, ReferenceMethodsUseReferenceWeights) {
  const QuadraticProblem quad(make_power_law_task(32, 1.1, 0));
  TrainConfig c = quick(Method::kPtqTarget);
  const TrainResult r = train(c, quad);
  EXPECT_EQ(r.params[0], quad.task().w_star);
  EXPECT_EQ(r.records.back().fp_loss, 0.0);

  const TwoLayerProblem two(make_two_layer_task(16, 4, 1.1, 0));
  const TrainResult g = train(quick(Method::kGroundTruth), two);
  EXPECT_NEAR(g.records.back().fp_loss, 0.0, 1e-28);
  EXPECT_GT(g.records.back().rtn_loss, 0.0);
}

TEST(EvaluateCheckpoint, CommonRandomNumbers) {
  const QuadraticProblem prob(make_power_law_task(32, 1.1, 0));
  RngStream rng(0, 9);
  const std::vector<Tensor> p{normal(rng, 32)};
  const QuantFormat fmt = QuantFormat::uniform_int(4);
  const RunRecord a = evaluate_checkpoint(prob, p, fmt, 8, 3, 100);
  EXPECT_EQ(a, evaluate_checkpoint(prob, p, fmt, 8, 3, 100));
  EXPECT_NE(a.rr_loss_mean, evaluate_checkpoint(prob, p, fmt, 8, 3, 200).rr_loss_mean);
  EXPECT_GT(a.rr_loss_sd, 0.0);
  const std::vector<Tensor> lattice{cast_rtn(p[0], fmt)};
  const RunRecord b = evaluate_checkpoint(prob, lattice, fmt, 8, 3, 100);
  EXPECT_EQ(b.rr_loss_sd, 0.0);
  EXPECT_EQ(b.rr_loss_mean, b.rtn_loss);
}

TEST(BestOfSweep, SelectionAndTies) {
  auto run = [](double lr, double lambda, double rtn, double rr, bool diverged = false) {
    RunRecord rec;
    rec.step = 10;
    rec.rtn_loss = rtn;
    rec.rr_loss_mean = rr;
    rec.diverged = diverged;
    return RunSummary{RunKey{Method::kLotion, "int4", lr, lambda, 0, 0}, {rec}};
  };
  const std::vector<RunSummary> runs{run(0.3, 1, 0.5, 0.2), run(0.1, 1, 0.5, 0.4), run(0.1, 0.3, 0.7, 0.2),
                                     run(1.0, 1, 0.0, 0.0, true)};
  const auto best = best_of_sweep(runs);
  ASSERT_EQ(best.size(), 2u);
  EXPECT_EQ(best[0].rounding, EvalRounding::kRtn);
  EXPECT_EQ(best[0].run_index, 1u);
  EXPECT_EQ(best[1].rounding, EvalRounding::kRr);
  EXPECT_EQ(best[1].run_index, 2u);
  EXPECT_EQ(best[1].group.lambda, 0.3);
  const std::vector<RunSummary> bad{run(1.0, 1, 0, 0, true)};
  EXPECT_THROW(best_of_sweep(bad), std::runtime_error);
}
