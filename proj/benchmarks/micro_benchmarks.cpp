// Hot paths of meta-training at the default calibration network size.

#include <benchmark/benchmark.h>

#include "metacal/meta.hpp"
#include "metacal/random.hpp"

namespace {

using namespace metacal;

Batch make_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Batch b{Eigen::MatrixXd(n, d), Eigen::VectorXd(n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) b.inputs(i, j) = rng.normal();
    b.targets(i) = rng.normal();
  }
  return b;
}

const MlpSpec kSpec{};

void BM_Forward(benchmark::State& state) {
  const auto p = init_params(kSpec, 1);
  const auto b = make_batch(state.range(0), kSpec.input_dim, 2);
  for (auto _ : state) benchmark::DoNotOptimize(forward(p, b.inputs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(48)->Arg(360);

void BM_LossAndGrad(benchmark::State& state) {
  const auto p = init_params(kSpec, 1);
  const auto b = make_batch(state.range(0), kSpec.input_dim, 2);
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grad(p, b));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGrad)->Arg(48)->Arg(360);

void BM_Hvp(benchmark::State& state) {
  const auto p = init_params(kSpec, 1);
  const auto v = init_params(kSpec, 3);
  const auto b = make_batch(state.range(0), kSpec.input_dim, 2);
  for (auto _ : state) benchmark::DoNotOptimize(hvp(p, b, v));
}
BENCHMARK(BM_Hvp)->Arg(48);

void BM_MetaGradient(benchmark::State& state) {
  MetaConfig cfg;
  cfg.mode = state.range(0) ? MetaGradMode::Exact : MetaGradMode::FirstOrder;
  cfg.inner_steps = static_cast<std::size_t>(state.range(1));
  const auto p = init_params(kSpec, 1);
  const auto s = make_batch(48, kSpec.input_dim, 2);
  const auto q = make_batch(48, kSpec.input_dim, 3);
  for (auto _ : state) benchmark::DoNotOptimize(meta_gradient(p, s, q, cfg));
}
BENCHMARK(BM_MetaGradient)->ArgsProduct({{0, 1}, {1, 5}});

}  // namespace

BENCHMARK_MAIN();
