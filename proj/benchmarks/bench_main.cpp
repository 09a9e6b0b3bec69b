#include <benchmark/benchmark.h>

#include <vector>

#include "gemm.hpp"
#include "lumenseg/data.hpp"
#include "lumenseg/inference.hpp"
#include "lumenseg/models.hpp"
#include "lumenseg/ops.hpp"
#include "lumenseg/random.hpp"
#include "lumenseg/runtime.hpp"

namespace {

using lumenseg::Rng;
using lumenseg::Shape;
using lumenseg::Tensor;
namespace models = lumenseg::models;
namespace ops = lumenseg::ops;

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Tensor<float> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<float> a(n * n, 0.5f), b(n * n, 0.25f), c(n * n);
  for (auto _ : state) {
    lumenseg::detail::gemm(false, false, n, n, n, 1.0f, a.data(), b.data(), 0.0f, c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(256)->Arg(512);

void BM_Conv2dForward(benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0));
  const auto channels = static_cast<std::size_t>(state.range(1));
  const auto x = random_tensor({8, size, size, channels}, 1);
  const auto k = random_tensor({3, 3, channels, channels}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, k, 1, 1));
}
BENCHMARK(BM_Conv2dForward)->Args({64, 16})->Args({32, 32})->Args({16, 64});

void BM_Conv2dBackward(benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0));
  const auto channels = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({8, size, size, channels}, 1);
  auto k = random_tensor({3, 3, channels, channels}, 2);
  x.set_requires_grad(true);
  k.set_requires_grad(true);
  for (auto _ : state) {
    auto loss = ops::sum(ops::conv2d(x, k, 1, 1));
    loss.backward();
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({64, 16})->Args({32, 32});

void BM_ModelPredict(benchmark::State& state) {
  const auto variant = models::kAllVariants[state.range(0)];
  const models::Model<float> model(
      models::is_temporal(variant)
          ? models::extend_temporal(models::default_config(models::core_of(variant)), 8)
          : models::default_config(variant),
      0);
  const auto& c = model.config();
  const Shape shape = models::is_temporal(variant) ? Shape{1, 3, c.height, c.width, c.channels}
                                                   : Shape{1, c.height, c.width, c.channels};
  const auto x = random_tensor(shape, 3);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(x));
  state.SetLabel(std::string(models::name(variant)));
}
BENCHMARK(BM_ModelPredict)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_EnsemblePredict(benchmark::State& state) {
  std::vector<models::Model<float>> owned;
  for (auto v : models::kAllVariants) {
    owned.emplace_back(models::is_temporal(v) ? models::extend_temporal(models::default_config(models::core_of(v)), 8)
                                              : models::default_config(v),
                       0);
  }
  std::vector<lumenseg::inference::Member> members;
  for (std::size_t i = 0; i < owned.size(); ++i) members.push_back({std::string(models::name(owned[i].config().variant)), &owned[i]});
  lumenseg::data::VideoSpec spec;
  spec.n_frames = 3;
  const auto triplets = lumenseg::data::make_triplets(lumenseg::data::generate_synthetic_video(spec));
  const std::span<const lumenseg::data::FrameTriplet> one(triplets.data(), 1);
  for (auto _ : state) benchmark::DoNotOptimize(lumenseg::inference::ensemble_maps(members, one));
}
BENCHMARK(BM_EnsemblePredict)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  models::Model<float> model(models::default_config(models::Variant::kResUNet, 32, 32), 0);
  const auto x = random_tensor({8, 32, 32, 3}, 4);
  Tensor<float> target({8, 32, 32, 1});
  for (std::size_t i = 0; i < target.data().size(); ++i) target.data()[i] = (i / 7) % 2 ? 1.0f : 0.0f;
  for (auto _ : state) {
    model.zero_grad();
    auto loss = ops::dice_loss(model.forward(x), target);
    loss.backward();
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  lumenseg::configure_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
