#include <benchmark/benchmark.h>

#include <vector>

#include "dit/analysis.hpp"
#include "dit/model.hpp"
#include "dit/ops.hpp"
#include "dit/rng.hpp"
#include "dit/sampler.hpp"
#include "dit/schedule.hpp"
#include "dit/trainer.hpp"

using namespace dit;

namespace {

Tensor<float> noise(Shape shape, std::uint64_t seed) {
  KeyedRng rng({seed, static_cast<std::uint64_t>(Stream::kFixture)});
  return Tensor<float>::randn(std::move(shape), rng);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = noise({n, n}, 1), b = noise({n, n}, 2);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(256);

void BM_MiniForward(benchmark::State& state) {
  const auto variant = static_cast<BlockVariant>(state.range(0));
  const auto config = mini_config(variant);
  const auto batch = static_cast<std::size_t>(state.range(1));
  auto params = init_parameters<float>(config, 0);
  perturb_parameters(params, 0, 0.02);
  const auto z = noise({batch, 8, 8, 2}, 3);
  std::vector<double> t(batch, 500.0);
  std::vector<std::int64_t> labels(batch, 1);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(forward(config, params, z, t, labels));
  state.SetLabel(std::string(variant_name(variant)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_MiniForward)->ArgsProduct({{0, 1, 2, 3}, {32}});

void BM_TrainStep(benchmark::State& state) {
  const auto config = mini_config();
  TrainConfig tc;
  tc.batch_size = static_cast<int>(state.range(0));
  tc.checkpoint_every = 0;
  Trainer trainer(TrainState::fresh(config, tc), make_dataset(config, tc));
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step());
}
BENCHMARK(BM_TrainStep)->Arg(32);

void BM_SamplerStep(benchmark::State& state) {
  const auto schedule = DiffusionSchedule::standard();
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto xt = noise({batch, 8, 8, 2}, 4), eps = noise({batch, 8, 8, 2}, 5), v = noise({batch, 8, 8, 2}, 6);
  const auto z = noise({batch, 8, 8, 2}, 7);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(p_sample_step(schedule, eps, v, xt, 500, z));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_SamplerStep)->Arg(32)->Arg(512);

void BM_SampleMini(benchmark::State& state) {
  const auto config = mini_config();
  auto params = init_parameters<float>(config, 0);
  perturb_parameters(params, 0, 0.02);
  SampleRequest req;
  req.count = 64;
  req.labels = {0};
  req.num_steps = static_cast<int>(state.range(0));
  req.guidance_scale = 4.0;
  const auto schedule = DiffusionSchedule::standard();
  for (auto _ : state) benchmark::DoNotOptimize(sample(params, config, schedule, req));
}
BENCHMARK(BM_SampleMini)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_CountFlops(benchmark::State& state) {
  const auto configs = standard_configs();
  for (auto _ : state) {
    std::uint64_t total = 0;
    for (const auto& c : configs) total += count_flops(c.config).total() + count_params(c.config).total();
    benchmark::DoNotOptimize(total);
  }
}
BENCHMARK(BM_CountFlops);

}  // namespace

BENCHMARK_MAIN();
