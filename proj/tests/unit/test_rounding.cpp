#include <gtest/gtest.h>

#include <cmath>

#include "lotion/rounding.hpp"

using namespace lotion;

namespace {

double weighted_variance(const Tensor& w, const QuantFormat& fmt, const Tensor& c) {
  const Tensor s2 = rr_variance(w, fmt).sigma2;
  return dot(s2, c);
}

/// Random point whose non-absmax coordinates sit at least `margin` (in scaled
/// units) away from every level.
Tensor clear_point(RngStream& rng, const QuantFormat& fmt, std::size_t n, double margin) {
  for (;;) {
    Tensor w = normal(rng, n);
    const QuantView v = quant_view(w, fmt);
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (v.at_extreme[i]) continue;
      const double s = v.scales[v.block_of[i]];
      ok = !v.representable(i) && std::min(w[i] - v.lo[i], v.hi[i] - w[i]) > margin * s;
    }
    if (ok) return w;
  }
}

}  // namespace

TEST(RrSample, LatticePointsAreFixedAndConsumeNoRandomness) {
  const QuantFormat fmt = QuantFormat::uniform_int(4);
  const Tensor w = Tensor::vector({-7, -3, 0, 2, 7});
  RngStream rng(3, 0);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(rr_sample(w, fmt, rng), w);
  EXPECT_EQ(rng.position(), 0u);
}

TEST(RrSample, OutputsAreAdjacentLevels) {
  const QuantFormat fmt = QuantFormat::fp4_e2m1(8);
  RngStream data(4, 0), rng(4, 1);
  const Tensor w = normal(data, 64);
  const QuantView view = quant_view(w, fmt);
  for (int n = 0; n < 200; ++n) {
    const Tensor q = rr_sample(w, view, rng);
    for (std::size_t i = 0; i < w.size(); ++i) ASSERT_TRUE(q[i] == view.lo[i] || q[i] == view.hi[i]);
  }
}

TEST(RrSample, FormatAndViewOverloadsAgree) {
  const QuantFormat fmt = QuantFormat::parse("int3/b4");
  RngStream data(5, 0);
  const Tensor w = normal(data, 32);
  RngStream a(5, 1), b(5, 1);
  EXPECT_EQ(rr_sample(w, fmt, a), rr_sample(w, quant_view(w, fmt), b));
}

TEST(RrSample, CoupledUniforms) {
  const QuantFormat fmt = QuantFormat::uniform_int(4);
  const Tensor w = Tensor::vector({1, 7});
  const Tensor v = Tensor::vector({1.25, 7});
  const QuantView view = quant_view(v, fmt);
  EXPECT_EQ(rr_sample_with_uniforms(v, view, std::vector<double>{0.2, 0.9})[0], 2.0);
  EXPECT_EQ(rr_sample_with_uniforms(v, view, std::vector<double>{0.3, 0.9})[0], 1.0);
  EXPECT_THROW(rr_sample_with_uniforms(v, view, std::vector<double>{0.5}), ShapeError);
  EXPECT_EQ(rr_sample_with_uniforms(w, quant_view(w, fmt), std::vector<double>{0.0, 0.0}), w);
}

TEST(ApplyRounding, DispatchesOnMode) {
  const QuantFormat fmt = QuantFormat::uniform_int(4);
  const Tensor w = Tensor::vector({0.4, 7});
  RoundingMode rtn = RoundToNearest{};
  EXPECT_EQ(apply_rounding(w, fmt, rtn), Tensor::vector({0, 7}));
  RoundingMode rr = RandomizedRounding{RngStream(1, 0)};
  const Tensor q = apply_rounding(w, fmt, rr);
  EXPECT_TRUE(q[0] == 0.0 || q[0] == 1.0);
  EXPECT_EQ(std::get<RandomizedRounding>(rr).rng.position(), 1u);
}

TEST(RrVariance, ClosedForms) {
  // INT4 with s = 1: w = 2.25 has delta 1/4, variance 3/16.
  const Tensor w = Tensor::vector({2.25, 7, 3});
  const Tensor s2 = rr_variance(w, QuantFormat::uniform_int(4)).sigma2;
  EXPECT_DOUBLE_EQ(s2[0], 3.0 / 16.0);
  EXPECT_EQ(s2[1], 0.0);
  EXPECT_EQ(s2[2], 0.0);
  // FP4 with s = 1: 2.5 between 2 and 3 has variance 1/4.
  const Tensor f = Tensor::vector({2.5, 6});
  EXPECT_DOUBLE_EQ(rr_variance(f, QuantFormat::fp4_e2m1()).sigma2[0], 0.25);
}

TEST(RrVarianceGrad, InteriorLatticeAndExtreme) {
  const QuantFormat fmt = QuantFormat::uniform_int(4);
  const Tensor w = Tensor::vector({2.25, 3, -7, 7});
  const Tensor g = rr_variance_grad(w, fmt);
  EXPECT_DOUBLE_EQ(g[0], 0.5);  // gap (1 - 2 delta)
  EXPECT_EQ(g[1], 1.0);         // right limit on a level
  EXPECT_EQ(g[2], 0.0);         // extreme
  EXPECT_EQ(g[3], 0.0);
}

TEST(WeightedVarianceGrad, DetachedMatchesFiniteDifferenceWithFrozenScale) {
  RngStream rng(21, 0);
  for (const char* name : {"int4", "int3/b8", "fp4"}) {
    const QuantFormat fmt = QuantFormat::parse(name);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor w = clear_point(rng, fmt, 32, 1e-3);
      const Tensor c = uniform01(rng, 32);
      const QuantView view = quant_view(w, fmt);
      const Tensor g = weighted_variance_grad(w, fmt, c, false);
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (view.at_extreme[i]) continue;
        const double h = 1e-6 * view.scales[view.block_of[i]];
        Tensor p = w, m = w;
        p[i] += h;
        m[i] -= h;
        const double fd = (dot(rr_variance(quant_view(p, fmt, view.scales), w.shape()).sigma2, c) -
                           dot(rr_variance(quant_view(m, fmt, view.scales), w.shape()).sigma2, c)) /
                          (2 * h);
        ASSERT_NEAR(fd, g[i], 1e-6 * (1 + std::abs(g[i]))) << name << " coord " << i;
      }
    }
  }
}

TEST(WeightedVarianceGrad, ScaleGradientMatchesFiniteDifferenceOfLiveScale) {
  RngStream rng(22, 0);
  for (const char* name : {"int4", "int4/b8", "fp4/b16"}) {
    const QuantFormat fmt = QuantFormat::parse(name);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor w = clear_point(rng, fmt, 32, 1e-3);
      const Tensor c = uniform01(rng, 32);
      const QuantView view = quant_view(w, fmt);
      const Tensor g = weighted_variance_grad(w, fmt, c, true);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double h = 1e-7 * view.scales[view.block_of[i]];
        Tensor p = w, m = w;
        p[i] += h;
        m[i] -= h;
        const double fd = (weighted_variance(p, fmt, c) - weighted_variance(m, fmt, c)) / (2 * h);
        ASSERT_NEAR(fd, g[i], 1e-5 * (1 + std::abs(g[i]))) << name << " coord " << i;
      }
    }
  }
}

TEST(WeightedVarianceGrad, RejectsMismatchedWeights) {
  EXPECT_THROW(weighted_variance_grad(Tensor({4}, 1.0), QuantFormat::uniform_int(4), Tensor({3}, 1.0), false),
               ShapeError);
}
