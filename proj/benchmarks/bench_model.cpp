#include <benchmark/benchmark.h>

#include "neurovol/model.hpp"
#include "neurovol/optimizer.hpp"
#include "neurovol/train.hpp"

using namespace neurovol;

namespace {

Tensor<float> batch(std::size_t n) {
  Tensor<float> x({n, 1, 20, 24, 20});
  RngStream rng(7);
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform());
  return x;
}

void BM_VaeStepDesk(benchmark::State& state) {
  Vae<float> model(ArchitectureConfig::desk(8), 1);
  Optimizer<float> opt(OptimizerConfig{});
  const auto x = batch(16);
  RngStream rng(3);
  for (auto _ : state) {
    const auto r = vae_step(model, x, LossOptions{}, rng);
    opt.step(model.parameters(), r.gradients);
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_VaeStepDesk)->Unit(benchmark::kMillisecond);

void BM_IvaeStepPairDesk(benchmark::State& state) {
  Vae<float> model(ArchitectureConfig::desk(32), 1);
  Optimizer<float> enc(OptimizerConfig{}), dec(OptimizerConfig{});
  const auto x = batch(16);
  Tensor<float> z({16, 32}, 0.1f);
  RngStream rng(3);
  for (auto _ : state) {
    const auto e = ivae_encoder_step(model, x, z, LossOptions{}, rng);
    enc.step(model.parameters(), e.gradients);
    const auto g = ivae_generator_step(model, x, z, LossOptions{}, rng);
    dec.step(model.parameters(), g.gradients);
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_IvaeStepPairDesk)->Unit(benchmark::kMillisecond);

void BM_EncodeEvalDesk(benchmark::State& state) {
  Vae<float> model(ArchitectureConfig::desk(8), 1);
  std::vector<Volume> vols;
  const auto x = batch(32);
  for (std::size_t i = 0; i < 32; ++i) vols.push_back(volume_from_batch(x, i));
  RngStream rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(encode(model, vols, rng));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_EncodeEvalDesk)->Unit(benchmark::kMillisecond);

}  // namespace
