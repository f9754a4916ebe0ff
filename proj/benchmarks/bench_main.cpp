#include <benchmark/benchmark.h>

#include <vector>

#include "layoutsynth/dataset.hpp"
#include "layoutsynth/networks.hpp"
#include "layoutsynth/ops.hpp"
#include "layoutsynth/rng.hpp"
#include "layoutsynth/tensor.hpp"
#include "layoutsynth/trainer.hpp"

namespace {

using layoutsynth::Shape;
using layoutsynth::Tensor;

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  layoutsynth::Prng rng(seed);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<float> data(n);
  for (auto& v : data) v = static_cast<float>(rng.normal());
  return Tensor<float>(std::move(shape), std::move(data));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor(Shape{n, n}, 1);
  const auto b = random_tensor(Shape{n, n}, 2);
  layoutsynth::NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(layoutsynth::matmul(a, b));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor(Shape{8, c, 16, 16}, 3);
  const auto k = random_tensor(Shape{c, c, 3, 3}, 4);
  layoutsynth::NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(layoutsynth::conv2d(x, k, 1, 1));
  }
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(32)->Arg(64);

layoutsynth::RunConfig desk_config() {
  layoutsynth::RunConfig c;
  c.seed = 7;
  c.model.mask_size = 16;
  return c;
}

void BM_GeneratorForward(benchmark::State& state) {
  const auto config = desk_config();
  const auto ds = layoutsynth::make_dataset(config.data, config.seed);
  const layoutsynth::Generator<float> gen(config.model, config.seed);
  std::vector<layoutsynth::Layout> layouts;
  std::vector<layoutsynth::StyleCodes> styles;
  for (std::size_t i = 0; i < 8; ++i) {
    layouts.push_back(layoutsynth::with_background(ds.samples[i].layout));
    styles.push_back(layoutsynth::sample_styles(layouts.back(), config.model.d_img,
                                                config.model.d_obj, i));
  }
  layoutsynth::NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(gen.forward(layouts, styles, {}));
  }
}
BENCHMARK(BM_GeneratorForward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto config = desk_config();
  const auto ds = layoutsynth::make_dataset(config.data, config.seed);
  layoutsynth::Trainer trainer(
      config, layoutsynth::make_examples(ds, config, layoutsynth::TrainMode::kFully));
  for (auto _ : state) {
    benchmark::DoNotOptimize(trainer.step());
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond)->Iterations(5);

}  // namespace

BENCHMARK_MAIN();
