#include <gtest/gtest.h>

#include <cmath>

#include "lotion/rounding.hpp"
#include "lotion/smooth.hpp"

using namespace lotion;

TEST(QuadraticValue, DenseAndDiagonalAgree) {
  const Tensor w = Tensor::vector({1, 2});
  const Tensor ws = Tensor::vector({0, 1});
  EXPECT_DOUBLE_EQ(quadratic_value(w, Tensor::vector({2, 4}), ws), 0.5 * (2 + 4));
  EXPECT_DOUBLE_EQ(quadratic_value(w, Tensor::matrix({{2, 0}, {0, 4}}), ws), 3.0);
  EXPECT_DOUBLE_EQ(quadratic_value(w, Tensor::matrix({{2, 1}, {1, 4}}), ws), 0.5 * (2 + 2 + 4));
  EXPECT_THROW(quadratic_value(w, Tensor::vector({1, 2, 3}), ws), ShapeError);
}

TEST(SmoothedQuadratic, ExactFormula) {
  // s = 1, w_0 = 2.25 has variance 3/16, w_1 = 7 is representable.
  const Tensor w = Tensor::vector({2.25, 7});
  const Tensor h = Tensor::matrix({{2, 1}, {1, 3}});
  const Tensor ws = Tensor::vector({0, 0});
  const double expected = quadratic_value(w, h, ws) + 0.5 * 2 * 3.0 / 16.0;
  EXPECT_DOUBLE_EQ(smoothed_quadratic_exact(w, h, ws, QuantFormat::uniform_int(4)), expected);
}

TEST(SmoothedQuadratic, EqualsLossOnLattice) {
  const Tensor w = Tensor::vector({-7, 3, 1, 0});
  const Tensor h = Tensor::vector({1, 2, 3, 4});
  const Tensor ws = Tensor::vector({0.3, -1, 2, 5});
  EXPECT_EQ(smoothed_quadratic_exact(w, h, ws, QuantFormat::uniform_int(4)), quadratic_value(w, h, ws));
}

TEST(SmoothedQuadratic, MatchesMonteCarlo) {
  RngStream rng(31, 0);
  const Tensor h = add(uniform01(rng, 16), Tensor({16}, 0.1));
  const Tensor ws = normal(rng, 16);
  const Tensor w = normal(rng, 16);
  const QuantFormat fmt = QuantFormat::uniform_int(3);
  const auto mc = mc_smoothed_loss([&](const Tensor& x) { return quadratic_value(x, h, ws); }, w, fmt, rng, 50000);
  EXPECT_NEAR(mc.mean, smoothed_quadratic_exact(w, h, ws, fmt), 4 * mc.sem);
  EXPECT_EQ(mc.draws, 50000u);
  EXPECT_THROW(mc_smoothed_loss([](const Tensor&) { return 0.0; }, w, fmt, rng, 1), std::invalid_argument);
}

TEST(LotionGn, LossIsQuadraticClosedFormWhenCurvatureIsHessianDiag) {
  RngStream rng(32, 0);
  const Tensor h = add(uniform01(rng, 16), Tensor({16}, 0.1));
  const Tensor ws = normal(rng, 16);
  const Tensor w = normal(rng, 16);
  const QuantFormat fmt = QuantFormat::fp4_e2m1();
  EXPECT_NEAR(lotion_gn_loss(w, quadratic_value(w, h, ws), h, fmt, 1.0), smoothed_quadratic_exact(w, h, ws, fmt),
              1e-12);
}

TEST(LotionGn, LambdaZeroIsIdentity) {
  const Tensor w = Tensor::vector({0.3, -1.2, 2});
  const Tensor g = Tensor::vector({1, 2, 3});
  const Tensor c = Tensor::vector({1, 1, 1});
  EXPECT_EQ(lotion_gn_loss(w, 4.5, c, QuantFormat::uniform_int(4), 0.0), 4.5);
  EXPECT_EQ(lotion_gn_grad(w, g, c, QuantFormat::uniform_int(4), 0.0), g);
}

TEST(LotionGn, RejectsNegativeCurvatureAndLambda) {
  const Tensor w = Tensor::vector({0.3, -1.2});
  const Tensor g({2}, 0.0);
  EXPECT_THROW(lotion_gn_loss(w, 0, Tensor::vector({1, -1}), QuantFormat::uniform_int(4), 1.0),
               std::invalid_argument);
  EXPECT_THROW(lotion_gn_grad(w, g, Tensor::vector({1, 1}), QuantFormat::uniform_int(4), -1.0),
               std::invalid_argument);
  EXPECT_THROW(lotion_gn_grad(w, Tensor({3}, 0.0), Tensor::vector({1, 1}), QuantFormat::uniform_int(4), 1.0),
               ShapeError);
}

TEST(LotionGn, GradientMatchesFiniteDifferenceWithFrozenScales) {
  RngStream rng(33, 0);
  const QuantFormat fmt = QuantFormat::uniform_int(4, 8);
  for (int trial = 0; trial < 25; ++trial) {
    const Tensor w = normal(rng, 32);
    const Tensor c = uniform01(rng, 32);
    const QuantView view = quant_view(w, fmt);
    const Tensor g = lotion_gn_grad(w, Tensor({32}, 0.0), c, fmt, LotionOptions{2.0, false});
    for (std::size_t i = 0; i < 32; ++i) {
      const double s = view.scales[view.block_of[i]];
      if (view.at_extreme[i] || view.representable(i) ||
          std::min(w[i] - view.lo[i], view.hi[i] - w[i]) < 1e-3 * s) {
        continue;
      }
      Tensor p = w, m = w;
      p[i] += 1e-6 * s;
      m[i] -= 1e-6 * s;
      const double fd =
          (lotion_gn_loss(p, 0, c, fmt, 2.0, view.scales) - lotion_gn_loss(m, 0, c, fmt, 2.0, view.scales)) /
          (2e-6 * s);
      ASSERT_NEAR(fd, g[i], 1e-6 * (1 + std::abs(g[i])));
    }
  }
}

TEST(FisherDiag, BiasCorrectedEma) {
  FisherDiag f({2}, 0.9);
  EXPECT_EQ(f.read(), Tensor({2}, 0.0));
  f.update(Tensor::vector({1, 2}));
  // After one step the bias-corrected estimate equals g².
  EXPECT_NEAR(f.read()[0], 1.0, 1e-12);
  EXPECT_NEAR(f.read()[1], 4.0, 1e-12);
  f.update(Tensor::vector({3, 0}));
  const double corr = 1 - 0.81;
  EXPECT_NEAR(f.read()[0], (0.9 * 0.1 * 1 + 0.1 * 9) / corr, 1e-12);
  EXPECT_EQ(f.step_count(), 2u);
  const FisherDiag g = fisher_update(f, Tensor::vector({1, 1}));
  EXPECT_EQ(g.step_count(), 3u);
  EXPECT_EQ(f.step_count(), 2u);
  EXPECT_THROW(FisherDiag({2}, 1.0), std::invalid_argument);
  EXPECT_THROW(f.update(Tensor({3}, 0.0)), ShapeError);
}

TEST(FisherDiag, ConstantGradientConvergesToSquare) {
  FisherDiag f({1}, 0.999);
  for (int i = 0; i < 50; ++i) f.update(Tensor::vector({-2}));
  EXPECT_NEAR(f.read()[0], 4.0, 1e-9);
}
