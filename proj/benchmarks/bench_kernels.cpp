#include <benchmark/benchmark.h>

#include "neurovol/kernels.hpp"
#include "neurovol/phantom.hpp"
#include "neurovol/preprocess.hpp"
#include "neurovol/rng.hpp"

using namespace neurovol;

namespace {

Tensor<float> noise(Shape s, std::uint64_t seed) {
  Tensor<float> t(std::move(s));
  RngStream rng(seed);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

// Desk encoder's first stage: [16,1,20,24,20] input, 8 filters, k=3, same padding.
void BM_Conv3dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = noise({16, c, 20, 24, 20}, 1);
  const auto k = noise({8, c, 3, 3, 3}, 2);
  const auto g = kernels::conv3d_geometry(x.shape(), k.shape(), 1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv3d_forward<float>(x, k, nullptr, g));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(x.size()));
}
BENCHMARK(BM_Conv3dForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_Conv3dBackwardInput(benchmark::State& state) {
  const auto x = noise({16, 8, 10, 12, 10}, 1);
  const auto k = noise({16, 8, 3, 3, 3}, 2);
  const auto g = kernels::conv3d_geometry(x.shape(), k.shape(), 1, 1);
  const auto gy = noise(g.output_shape(), 3);
  for (auto _ : state) {
    Tensor<float> gx(x.shape());
    kernels::conv3d_backward_input(gy, k, g, gx);
    benchmark::DoNotOptimize(gx);
  }
}
BENCHMARK(BM_Conv3dBackwardInput)->Unit(benchmark::kMillisecond);

void BM_Conv3dBackwardKernel(benchmark::State& state) {
  const auto x = noise({16, 8, 10, 12, 10}, 1);
  const auto k = noise({16, 8, 3, 3, 3}, 2);
  const auto g = kernels::conv3d_geometry(x.shape(), k.shape(), 1, 1);
  const auto gy = noise(g.output_shape(), 3);
  for (auto _ : state) {
    Tensor<float> gk(k.shape());
    kernels::conv3d_backward_kernel(x, gy, g, gk);
    benchmark::DoNotOptimize(gk);
  }
}
BENCHMARK(BM_Conv3dBackwardKernel)->Unit(benchmark::kMillisecond);

void BM_AvgPoolUpsample(benchmark::State& state) {
  const auto x = noise({16, 8, 20, 24, 20}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::upsample3d_nearest(kernels::avg_pool3d(x, 2), 2));
}
BENCHMARK(BM_AvgPoolUpsample)->Unit(benchmark::kMillisecond);

void BM_PhantomDesk(benchmark::State& state) {
  PhantomConfig c;
  c.shape = {20, 24, 20};
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_phantom(c, seed++, ClassLabel::ms));
}
BENCHMARK(BM_PhantomDesk)->Unit(benchmark::kMicrosecond);

void BM_PreprocessRaw(benchmark::State& state) {
  PhantomConfig c;
  c.shape = {182, 218, 182};
  const auto raw = generate_phantom(c, 1, ClassLabel::leuk2).volume;
  for (auto _ : state) benchmark::DoNotOptimize(preprocess_volume(raw, PreprocessParams{}));
}
BENCHMARK(BM_PreprocessRaw)->Unit(benchmark::kMillisecond);

}  // namespace
