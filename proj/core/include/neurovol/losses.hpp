#pragma once

#include <functional>
#include <span>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "neurovol/model.hpp"

namespace neurovol {

enum class Reconstruction { mse, bce };

std::string_view to_string(Reconstruction r);
Reconstruction parse_reconstruction(std::string_view name);

/// Closed-form KL(N(mu, diag(exp(log_sigma))^2) || N(0, I)), summed over dimensions.
double kl_divergence(std::span<const double> mu, std::span<const double> log_sigma);

struct LossOptions {
  Reconstruction reconstruction = Reconstruction::mse;
  /// Weight on the KL term (the IntroVAE encoder energy of real data).
  double beta = 1.0;
  /// Hinge margin m of the IntroVAE encoder loss.
  double margin = 5.0;
  /// Weight on the adversarial energy terms of both IntroVAE losses.
  double adversarial_weight = 1.0;
  /// Also feed reconstructions to the adversarial terms, as in the original
  /// IntroVAE formulation. Off by default.
  bool adversarial_on_reconstructions = false;

  friend bool operator==(const LossOptions&, const LossOptions&) = default;
};

void to_json(nlohmann::json& j, const LossOptions& o);
void from_json(const nlohmann::json& j, LossOptions& o);

/// Encoder/decoder as plain functions over tape values, so the losses can be
/// composed from a Vae or from test doubles.
template <typename T>
struct ModelFns {
  std::function<EncodeResult<T>(const Var<T>&)> encode;
  std::function<Var<T>(const Var<T>&)> decode;
};

template <typename T>
Var<T> reconstruction_loss(const Var<T>& x_hat, const Var<T>& x, Reconstruction kind);

/// Batch mean of the per-sample KL, shape [1].
template <typename T>
Var<T> kl_term(const Var<T>& mu, const Var<T>& log_sigma);

template <typename T>
struct VaeLoss {
  Var<T> total, recon, kl;
};

/// recon(decode(z), x) + beta * KL with z reparameterised from encode(x).
template <typename T>
VaeLoss<T> vae_loss(const Var<T>& x, const ModelFns<T>& fns, const LossOptions& opt, RngStream& rng);

template <typename T>
struct IvaeEncoderLoss {
  /// beta * E(x) + w * mean(max(0, m - E(G(z_prior)))) + L_AE(x)
  Var<T> total;
  Var<T> energy_real;
  Var<T> hinge;
  Var<T> energy_fake;
  Var<T> recon;
};

/// G(z_prior) passes through stop_gradient before re-encoding, so nothing
/// upstream of the generated sample receives gradient from the hinge.
template <typename T>
IvaeEncoderLoss<T> ivae_encoder_loss(const Var<T>& x, const Var<T>& z_prior, const ModelFns<T>& fns,
                                     const LossOptions& opt, RngStream& rng);

template <typename T>
struct IvaeGeneratorLoss {
  /// w * E(G(z_prior)) + L_AE(x)
  Var<T> total;
  Var<T> energy_fake;
  Var<T> recon;
};

template <typename T>
IvaeGeneratorLoss<T> ivae_generator_loss(const Var<T>& x, const Var<T>& z_prior,
                                         const ModelFns<T>& fns, const LossOptions& opt,
                                         RngStream& rng);

/// Value of the GAN minimax expression: mean log d_real + mean log(1 - d_fake).
/// Discriminator outputs must lie in (0, 1).
double gan_objective_value(std::span<const double> d_real, std::span<const double> d_fake);

}  // namespace neurovol
