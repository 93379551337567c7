#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "neurovol/losses.hpp"
#include "neurovol/model.hpp"
#include "neurovol/optimizer.hpp"

namespace neurovol {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  /// Checkpoint every k epochs; the final epoch is always checkpointed. 0 = final only.
  std::size_t checkpoint_every = 0;
  OptimizerConfig optimizer;
  LossOptions loss;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
std::string train_config_digest(const TrainConfig& c);

/// Binds a model's encoder/decoder on `b` as loss-ready functions.
template <typename T>
ModelFns<T> model_fns(Vae<T>& model, const Binding<T>& b, ForwardOptions encoder_opt,
                      ForwardOptions decoder_opt, RngStream& rng);

/// Loss values of one step and the gradients of the partition it trains.
template <typename T>
struct StepResult {
  double total = 0;
  double recon = 0;
  double kl = 0;
  double energy_fake = 0;
  double hinge = 0;
  Gradients<T> gradients;
};

/// vae_loss with gradients for every trainable parameter.
template <typename T>
StepResult<T> vae_step(Vae<T>& model, const Tensor<T>& x, const LossOptions& opt, RngStream& rng,
                       Mode mode = Mode::train);

/// ivae_encoder_loss; gradients for encoder parameters only. Decoder batch-norm
/// running statistics are left untouched.
template <typename T>
StepResult<T> ivae_encoder_step(Vae<T>& model, const Tensor<T>& x, const Tensor<T>& z_prior,
                                const LossOptions& opt, RngStream& rng, Mode mode = Mode::train);

/// ivae_generator_loss; gradients for decoder parameters only. Encoder batch-norm
/// running statistics are left untouched.
template <typename T>
StepResult<T> ivae_generator_step(Vae<T>& model, const Tensor<T>& x, const Tensor<T>& z_prior,
                                  const LossOptions& opt, RngStream& rng, Mode mode = Mode::train);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_total = 0;
  double loss_recon = 0;
  double loss_kl = 0;
  /// IntroVAE only.
  std::optional<double> loss_e, loss_g, energy_fake;
};

struct BatchRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::vector<std::size_t> indices;
};

template <typename T>
struct TrainHooks {
  std::function<void(const BatchRecord&)> on_batch;
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(std::size_t epoch, const Vae<T>&)> on_checkpoint;
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  bool diverged = false;
  std::string message;
  /// Epoch of the parameters left in the model (0 = initial).
  std::size_t last_good_epoch = 0;
};

/// Epoch order comes from RngStream(seed).fork(2*epoch); step noise (dropout,
/// reparameterisation, prior draws) from fork(2*epoch + 1). A trailing batch of
/// one sample is merged into the previous batch. On a non-finite loss or
/// gradient, training stops and the model is restored to its last checkpoint.
template <typename T>
TrainResult train_vae(Vae<T>& model, std::span<const Volume> data, const TrainConfig& config,
                      const TrainHooks<T>& hooks = {});

/// Alternates per batch: encoder step on ivae_encoder_loss, then decoder step on
/// ivae_generator_loss, sharing one prior draw.
template <typename T>
TrainResult train_ivae(Vae<T>& model, std::span<const Volume> data, const TrainConfig& config,
                       const TrainHooks<T>& hooks = {});

/// Batch order for one epoch (exposed for logging and tests).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch);

}  // namespace neurovol
