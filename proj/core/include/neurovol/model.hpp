#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "neurovol/autodiff.hpp"
#include "neurovol/volume.hpp"

namespace neurovol {

/// Encoder: per stage conv3d(k, stride 1, same padding) -> batch_norm -> act ->
/// avg_pool(2); then dense layers (affine -> batch_norm -> act -> dropout) and
/// two affine heads for mu and log_sigma. The decoder mirrors it with
/// upsample(2) -> conv3d_transpose and a sigmoid output.
struct ArchitectureConfig {
  Extents input{20, 24, 20};
  std::vector<std::size_t> channels{8, 16};
  std::size_t kernel_size = 3;
  std::vector<std::size_t> dense_widths{128};
  std::size_t latent_dim = 8;
  double dropout = 0.1;
  Activation hidden_activation = Activation::leaky_relu(0.2);
  bool batch_norm = true;
  double log_sigma_min = -30.0;
  double log_sigma_max = 10.0;

  /// Small CPU-friendly network: 20x24x20 input, two stages (8, 16 channels).
  static ArchitectureConfig desk(std::size_t latent_dim);
  /// 40x48x40 input reduced by three stages to 5x6x5x64.
  static ArchitectureConfig full_scale(std::size_t latent_dim);

  std::size_t stages() const noexcept { return channels.size(); }
  /// Spatial grid entering the dense layers.
  Extents bottleneck() const;
  std::size_t bottleneck_features() const;

  void validate() const;

  friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

void to_json(nlohmann::json& j, const ArchitectureConfig& c);
void from_json(const nlohmann::json& j, ArchitectureConfig& c);
void to_json(nlohmann::json& j, const Activation& a);
void from_json(const nlohmann::json& j, Activation& a);

std::string architecture_digest(const ArchitectureConfig& c);

enum class Component { encoder, decoder };

template <typename T>
struct Parameter {
  std::string name;
  Component component;
  Tensor<T> value;
  /// False for batch-norm running statistics.
  bool trainable = true;
};

/// Named tensors in insertion order.
template <typename T>
class ParameterStore {
 public:
  void add(std::string name, Component component, Tensor<T> value, bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Parameter<T>& at(const std::string& name);
  const Parameter<T>& at(const std::string& name) const;
  std::vector<Parameter<T>>& entries() noexcept { return entries_; }
  const std::vector<Parameter<T>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.component != y.component || x.trainable != y.trainable ||
          !(x.value == y.value)) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Parameter<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
using Gradients = std::map<std::string, Tensor<T>>;

/// Which parameter partitions receive gradients on a tape.
struct GradTargets {
  bool encoder = false;
  bool decoder = false;
  static GradTargets none() { return {false, false}; }
  static GradTargets both() { return {true, true}; }
  static GradTargets encoder_only() { return {true, false}; }
  static GradTargets decoder_only() { return {false, true}; }
};

template <typename T>
struct EncodeResult {
  Var<T> mu;
  Var<T> log_sigma;
};

template <typename T>
class Vae;

/// Parameter leaves of one model on one tape; shared by every forward pass
/// recorded on that tape.
template <typename T>
class Binding {
 public:
  Tape<T>& tape() const { return *tape_; }
  const Var<T>& var(const std::string& name) const { return vars_.at(name); }
  GradTargets targets() const { return targets_; }
  /// Gradients of trainable parameters that required grad, after tape.backward().
  Gradients<T> gradients() const;

 private:
  friend class Vae<T>;
  Tape<T>* tape_ = nullptr;
  GradTargets targets_;
  std::map<std::string, Var<T>> vars_;
};

/// Per-forward switches.
struct ForwardOptions {
  Mode mode = Mode::eval;
  /// Whether train-mode batch norm writes its running statistics back.
  bool update_running = true;
};

template <typename T>
class Vae {
 public:
  /// Glorot-uniform weights drawn from RngStream(init_seed).fork(parameter index); zero biases.
  Vae(ArchitectureConfig config, std::uint64_t init_seed);
  /// Wraps an existing store (e.g. from a checkpoint). Names and shapes are verified.
  Vae(ArchitectureConfig config, ParameterStore<T> params);

  const ArchitectureConfig& config() const noexcept { return config_; }
  ParameterStore<T>& parameters() noexcept { return params_; }
  const ParameterStore<T>& parameters() const noexcept { return params_; }

  Binding<T> bind(Tape<T>& tape, GradTargets targets) const;

  /// x: [N,1,nz,ny,nx] -> mu, log_sigma: [N, latent_dim]
  EncodeResult<T> encode(const Binding<T>& b, const Var<T>& x, ForwardOptions opt, RngStream& rng);
  /// z: [N, latent_dim] -> [N,1,nz,ny,nx] in (0,1)
  Var<T> decode(const Binding<T>& b, const Var<T>& z, ForwardOptions opt, RngStream& rng);

 private:
  Var<T> norm_act(const Binding<T>& b, const std::string& prefix, const Var<T>& h,
                  ForwardOptions opt);

  ArchitectureConfig config_;
  ParameterStore<T> params_;
};

/// Encoder posterior and a drawn sample, all [N, latent_dim].
template <typename T>
struct LatentCode {
  Tensor<T> mu;
  Tensor<T> log_sigma;
  Tensor<T> epsilon;
  Tensor<T> sample;
};

/// z = mu + exp(log_sigma) * eps with eps ~ N(0, I) from rng.
template <typename T>
LatentCode<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& log_sigma, RngStream& rng);

/// Differentiable variant; eps is a constant on the tape.
template <typename T>
Var<T> reparameterize(const Var<T>& mu, const Var<T>& log_sigma, RngStream& rng);

// Inference helpers; eval mode, no gradients.

template <typename T>
LatentCode<T> encode(Vae<T>& model, std::span<const Volume> volumes, RngStream& rng);

template <typename T>
std::vector<Volume> decode(Vae<T>& model, const Tensor<T>& z);

template <typename T>
std::vector<Volume> sample_prior(Vae<T>& model, std::size_t n, RngStream& rng);

/// use_mean decodes mu directly (deterministic); otherwise decodes a sample.
template <typename T>
std::vector<Volume> reconstruct(Vae<T>& model, std::span<const Volume> volumes, bool use_mean,
                                RngStream& rng);

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class Binding<float>;
extern template class Binding<double>;
extern template class Vae<float>;
extern template class Vae<double>;

}  // namespace neurovol
