#include <benchmark/benchmark.h>

#include "lotion/rounding.hpp"
#include "lotion/smooth.hpp"
#include "lotion/trainers.hpp"

using namespace lotion;

namespace {

Tensor weights(std::size_t n) {
  RngStream rng(1, 0);
  return normal(rng, n);
}

const char* const kFormats[] = {"int4", "int8/b64", "fp4"};

}  // namespace

static void BM_QuantView(benchmark::State& state) {
  const Tensor w = weights(state.range(0));
  const QuantFormat fmt = QuantFormat::parse(kFormats[state.range(1)]);
  for (auto _ : state) benchmark::DoNotOptimize(quant_view(w, fmt));
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.SetLabel(kFormats[state.range(1)]);
}
BENCHMARK(BM_QuantView)->ArgsProduct({{512, 1 << 16}, {0, 1, 2}});

static void BM_CastRtn(benchmark::State& state) {
  const Tensor w = weights(state.range(0));
  const QuantFormat fmt = QuantFormat::parse(kFormats[state.range(1)]);
  for (auto _ : state) benchmark::DoNotOptimize(cast_rtn(w, fmt));
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.SetLabel(kFormats[state.range(1)]);
}
BENCHMARK(BM_CastRtn)->ArgsProduct({{512, 1 << 16}, {0, 1, 2}});

static void BM_RrSample(benchmark::State& state) {
  const Tensor w = weights(state.range(0));
  const QuantFormat fmt = QuantFormat::parse(kFormats[state.range(1)]);
  RngStream rng(2, 0);
  for (auto _ : state) benchmark::DoNotOptimize(rr_sample(w, fmt, rng));
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.SetLabel(kFormats[state.range(1)]);
}
BENCHMARK(BM_RrSample)->ArgsProduct({{512, 1 << 16}, {0, 1, 2}});

static void BM_LotionGnGrad(benchmark::State& state) {
  const std::size_t n = state.range(0);
  const Tensor w = weights(n);
  const Tensor g(Shape{n}, 0.1);
  const Tensor c(Shape{n}, 1.0);
  const QuantFormat fmt = QuantFormat::uniform_int(4);
  const LotionOptions opts{1.0, state.range(1) != 0};
  for (auto _ : state) benchmark::DoNotOptimize(lotion_gn_grad(w, g, c, fmt, opts));
  state.SetItemsProcessed(state.iterations() * n);
  state.SetLabel(opts.differentiate_scale ? "scale-aware" : "detached");
}
BENCHMARK(BM_LotionGnGrad)->ArgsProduct({{512, 1 << 16}, {0, 1}});

static void BM_TrainQuadratic(benchmark::State& state) {
  const QuadraticProblem prob(make_power_law_task(512, 1.1, 0));
  TrainConfig c;
  c.method = static_cast<Method>(state.range(0));
  c.lr = 0.5;
  c.total_steps = 100;
  c.eval_every = 100;
  for (auto _ : state) benchmark::DoNotOptimize(train(c, prob));
  state.SetLabel(to_string(c.method));
}
BENCHMARK(BM_TrainQuadratic)
    ->Arg(static_cast<int>(Method::kPtq))
    ->Arg(static_cast<int>(Method::kQat))
    ->Arg(static_cast<int>(Method::kLotion))
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
