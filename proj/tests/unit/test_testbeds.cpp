#include <gtest/gtest.h>

#include <cmath>

#include "lotion/testbeds.hpp"

using namespace lotion;

namespace {

Tensor random_matrix(RngStream& rng, std::size_t r, std::size_t c, double sd) {
  Tensor m = scale(normal(rng, r * c), sd);
  return Tensor({r, c}, m.storage());
}

}  // namespace

TEST(PowerLawTask, SpectrumAndDeterminism) {
  const PowerLawTask t = make_power_law_task(100, 1.1, 7);
  EXPECT_EQ(t.eigenvalues[0], 1.0);
  EXPECT_NEAR(t.eigenvalues[9], std::pow(10.0, -1.1), 1e-15);
  for (std::size_t i = 1; i < 100; ++i) ASSERT_LE(t.eigenvalues[i], t.eigenvalues[i - 1]);
  EXPECT_EQ(make_power_law_task(100, 1.1, 7).w_star, t.w_star);
  EXPECT_NE(make_power_law_task(100, 1.1, 8).w_star, t.w_star);
  RngStream rng(7, 0);
  EXPECT_EQ(t.w_star, normal(rng, 100));
  EXPECT_THROW(make_power_law_task(0, 1.1, 0), std::invalid_argument);
  EXPECT_THROW(make_power_law_task(4, 0.0, 0), std::invalid_argument);
}

TEST(QuadraticLoss, ValueAndGradient) {
  const PowerLawTask t = make_power_law_task(3, 1.0, 0);
  const Tensor w = add(t.w_star, Tensor::vector({1, 1, 1}));
  const LossGrad lg = quadratic_loss_grad(w, t);
  EXPECT_NEAR(lg.loss, 0.5 * (1 + 0.5 + 1.0 / 3), 1e-14);
  EXPECT_NEAR(lg.grad[1], 0.5, 1e-14);
  EXPECT_EQ(quadratic_loss_grad(t.w_star, t).loss, 0.0);
  EXPECT_THROW(quadratic_loss_grad(Tensor({2}, 0.0), t), ShapeError);
}

TEST(QuadraticLoss, MinibatchGradientIsUnbiased) {
  const PowerLawTask t = make_power_law_task(8, 1.1, 1);
  const Tensor w({8}, 0.0);
  const Tensor exact = quadratic_loss_grad(w, t).grad;
  RngStream rng(1, 9);
  Tensor acc({8}, 0.0);
  const int n = 4000;
  for (int i = 0; i < n; ++i) acc = add(acc, minibatch_loss_grad(w, t, 4, rng).grad);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(acc[i] / n, exact[i], 0.1 * (1 + std::abs(exact[i])));
  EXPECT_THROW(minibatch_loss_grad(w, t, 0, rng), std::invalid_argument);
}

TEST(TwoLayer, EffectiveWeightsAndForward) {
  const Tensor w1 = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor w2 = Tensor::matrix({{1, -1}});
  const Tensor v = effective_weights(w1, w2);
  EXPECT_EQ(v, Tensor::vector({-1, -1}));
  EXPECT_DOUBLE_EQ(two_layer_forward(w1, w2, Tensor::vector({1, 1})), -2.0);
  EXPECT_THROW(effective_weights(w1, Tensor::matrix({{1, 1, 1}})), ShapeError);
}

TEST(TwoLayer, GradientsMatchFiniteDifferences) {
  const TwoLayerTask task = make_two_layer_task(32, 4, 1.1, 3);
  RngStream rng(3, 5);
  Tensor w1 = random_matrix(rng, 4, 32, 0.5);
  Tensor w2 = random_matrix(rng, 1, 4, 1.0);
  const TwoLayerGrads g = twolayer_loss_grads(w1, w2, task);
  const double h = 1e-6;
  auto loss = [&](const Tensor& a, const Tensor& b) { return twolayer_loss_grads(a, b, task).loss; };
  for (std::size_t i = 0; i < w1.size(); ++i) {
    Tensor p = w1, m = w1;
    p[i] += h;
    m[i] -= h;
    const double fd = (loss(p, w2) - loss(m, w2)) / (2 * h);
    ASSERT_LE(std::abs(fd - g.grad_w1[i]), 1e-7 * std::max(1.0, std::abs(fd))) << "W1 " << i;
  }
  for (std::size_t i = 0; i < w2.size(); ++i) {
    Tensor p = w2, m = w2;
    p[i] += h;
    m[i] -= h;
    const double fd = (loss(w1, p) - loss(w1, m)) / (2 * h);
    ASSERT_LE(std::abs(fd - g.grad_w2[i]), 1e-7 * std::max(1.0, std::abs(fd))) << "W2 " << i;
  }
}

TEST(TwoLayer, CurvatureMatchesSecondDifferences) {
  const TwoLayerTask task = make_two_layer_task(16, 3, 1.1, 4);
  RngStream rng(4, 5);
  const Tensor w1 = random_matrix(rng, 3, 16, 0.5);
  const Tensor w2 = random_matrix(rng, 1, 3, 1.0);
  const TwoLayerCurvature c = twolayer_curvature_diag(w1, w2, task);
  const double h = 1e-3;
  auto grad1 = [&](const Tensor& a) { return twolayer_loss_grads(a, w2, task).grad_w1; };
  for (std::size_t i = 0; i < w1.size(); ++i) {
    Tensor p = w1, m = w1;
    p[i] += h;
    m[i] -= h;
    ASSERT_NEAR((grad1(p)[i] - grad1(m)[i]) / (2 * h), c.w1[i], 1e-9);
  }
  auto grad2 = [&](const Tensor& b) { return twolayer_loss_grads(w1, b, task).grad_w2; };
  for (std::size_t i = 0; i < w2.size(); ++i) {
    Tensor p = w2, m = w2;
    p[i] += h;
    m[i] -= h;
    ASSERT_NEAR((grad2(p)[i] - grad2(m)[i]) / (2 * h), c.w2[i], 1e-9);
  }
}

TEST(TwoLayer, GroundTruthConstruction) {
  const TwoLayerTask task = make_two_layer_task(16, 8, 1.1, 2);
  const TwoLayerWeights gt = gt_weights(task);
  EXPECT_EQ(gt.w2, Tensor({1, 8}, 1.0));
  const Tensor v = effective_weights(gt.w1, gt.w2);
  ASSERT_EQ(v.shape(), task.base.w_star.shape());
  EXPECT_LE(max_abs(sub(v, task.base.w_star)), 1e-15 * (1 + max_abs(task.base.w_star)));
  EXPECT_NEAR(twolayer_loss_grads(gt.w1, gt.w2, task).loss, 0.0, 1e-28);
}

TEST(TwoLayer, GroundTruthRtnLossDoesNotDependOnWidth) {
  const QuantFormat fmt = QuantFormat::uniform_int(4);
  RoundingMode rtn = RoundToNearest{};
  const double l1 = gt_rounded_loss(make_two_layer_task(32, 1, 1.1, 0), fmt, rtn);
  const double l16 = gt_rounded_loss(make_two_layer_task(32, 16, 1.1, 0), fmt, rtn);
  EXPECT_GT(l1, 0.0);
  EXPECT_NEAR(l1, l16, 1e-14);
}

TEST(TwoLayer, GroundTruthRrLossShrinksWithWidth) {
  const QuantFormat fmt = QuantFormat::uniform_int(4);
  auto mean_loss = [&](std::size_t k) {
    const TwoLayerTask task = make_two_layer_task(32, k, 1.1, 0);
    RoundingMode rr = RandomizedRounding{RngStream(0, 77)};
    double s = 0;
    for (int i = 0; i < 200; ++i) s += gt_rounded_loss(task, fmt, rr);
    return s / 200;
  };
  const double l1 = mean_loss(1), l16 = mean_loss(16);
  EXPECT_NEAR(l16 * 16 / l1, 1.0, 0.35);
}
