#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "neurovol/losses.hpp"
#include "neurovol/model.hpp"
#include "neurovol/train.hpp"
#include "test_support.hpp"

namespace neurovol::testing {

/// 4x4x4 input, one conv stage, tiny dense layer: every parameter is cheap to probe.
inline ArchitectureConfig toy_architecture(std::size_t latent = 2) {
  ArchitectureConfig a;
  a.input = {4, 4, 4};
  a.channels = {2};
  a.dense_widths = {3};
  a.latent_dim = latent;
  return a;
}

template <typename T>
Tensor<T> toy_batch(const ArchitectureConfig& a, std::size_t n, std::uint64_t seed) {
  return random_tensor<T>({n, 1, a.input.nz, a.input.ny, a.input.nx}, seed, 0.0, 1.0);
}

/// Full VAE loss on a fixed noise stream; batch-norm running stats are left alone.
template <typename T>
double toy_vae_loss(Vae<T>& model, const Tensor<T>& x, std::uint64_t noise_seed, Binding<T>* keep = nullptr,
                    Tape<T>* tape_out = nullptr) {
  Tape<T> local;
  Tape<T>& tape = tape_out ? *tape_out : local;
  auto b = model.bind(tape, keep ? GradTargets::both() : GradTargets::none());
  RngStream rng(noise_seed);
  ForwardOptions fo{Mode::train, false};
  auto fns = model_fns(model, b, fo, fo, rng);
  LossOptions opt;
  auto loss = vae_loss(tape.constant(x), fns, opt, rng);
  if (keep) {
    tape.backward(loss.total);
    *keep = b;
  }
  return static_cast<double>(loss.total.value().item());
}

/// Norm-wise relative error of the analytic gradient of every trainable
/// parameter tensor of `model` against central differences taken on
/// `reference` (same parameters, possibly higher precision); returns the
/// worst tensor. Tensors whose true gradient vanishes (biases feeding batch
/// norm) are measured against 1% of the global gradient norm.
template <typename T, typename R>
double composed_grad_error(Vae<T>& model, Vae<R>& reference, std::uint64_t seed, double step) {
  const auto& arch = model.config();
  const auto x = toy_batch<T>(arch, 3, seed + 1000);
  const auto x_ref = toy_batch<R>(arch, 3, seed + 1000);
  Tape<T> tape;
  Binding<T> b;
  toy_vae_loss(model, x, seed + 2000, &b, &tape);
  const auto grads = b.gradients();
  std::vector<std::pair<double, double>> per_tensor;
  double global2 = 0;
  for (auto& p : reference.parameters().entries()) {
    if (!p.trainable) continue;
    const auto& g = grads.at(p.name);
    double diff2 = 0, num2 = 0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const R orig = p.value[i];
      p.value[i] = static_cast<R>(orig + step);
      const double up = toy_vae_loss(reference, x_ref, seed + 2000);
      p.value[i] = static_cast<R>(orig - step);
      const double down = toy_vae_loss(reference, x_ref, seed + 2000);
      p.value[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double d = static_cast<double>(g[i]) - numeric;
      diff2 += d * d;
      num2 += numeric * numeric;
    }
    per_tensor.emplace_back(std::sqrt(diff2), std::sqrt(num2));
    global2 += num2;
  }
  const double floor = std::max(1e-2 * std::sqrt(global2), 1e-8);
  double worst = 0;
  for (const auto& [diff, num] : per_tensor) worst = std::max(worst, diff / std::max(num, floor));
  return worst;
}

/// Composed encoder, decoder and loss check. At f32 the analytic gradient is
/// compared with f64 central differences on identical parameter values.
template <typename T>
double composed_grad_check(std::uint64_t seed, double step = 1e-6) {
  const auto arch = toy_architecture();
  Vae<T> model(arch, seed);
  Vae<double> reference(arch, seed);
  auto& dst = reference.parameters().entries();
  const auto& src = model.parameters().entries();
  for (std::size_t k = 0; k < src.size(); ++k) {
    for (std::size_t i = 0; i < src[k].value.size(); ++i) dst[k].value[i] = static_cast<double>(src[k].value[i]);
  }
  return composed_grad_error(model, reference, seed, step);
}

}  // namespace neurovol::testing
