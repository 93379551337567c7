#include "neurovol/losses.hpp"

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "neurovol/error.hpp"

namespace neurovol {

std::string_view to_string(Reconstruction r) {
  return r == Reconstruction::mse ? "mse" : "bce";
}

Reconstruction parse_reconstruction(std::string_view name) {
  if (name == "mse") return Reconstruction::mse;
  if (name == "bce") return Reconstruction::bce;
  throw ValidationError("unknown reconstruction loss '" + std::string(name) + "'");
}

double kl_divergence(std::span<const double> mu, std::span<const double> log_sigma) {
  if (mu.size() != log_sigma.size()) {
    throw ValidationError("kl_divergence: mu and log_sigma lengths differ");
  }
  double acc = 0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double ls = log_sigma[i];
    acc += mu[i] * mu[i] + std::exp(2.0 * ls) - 1.0 - 2.0 * ls;
  }
  return 0.5 * acc;
}

void to_json(nlohmann::json& j, const LossOptions& o) {
  j = {{"reconstruction", to_string(o.reconstruction)},
       {"beta", o.beta},
       {"margin", o.margin},
       {"adversarial_weight", o.adversarial_weight},
       {"adversarial_on_reconstructions", o.adversarial_on_reconstructions}};
}

void from_json(const nlohmann::json& j, LossOptions& o) {
  if (j.contains("reconstruction")) {
    o.reconstruction = parse_reconstruction(j.at("reconstruction").get<std::string>());
  }
  if (j.contains("beta")) j.at("beta").get_to(o.beta);
  if (j.contains("margin")) j.at("margin").get_to(o.margin);
  if (j.contains("adversarial_weight")) j.at("adversarial_weight").get_to(o.adversarial_weight);
  if (j.contains("adversarial_on_reconstructions")) {
    j.at("adversarial_on_reconstructions").get_to(o.adversarial_on_reconstructions);
  }
  if (o.margin < 0) throw ValidationError("margin must be >= 0");
  if (o.beta < 0) throw ValidationError("beta must be >= 0");
}

template <typename T>
Var<T> reconstruction_loss(const Var<T>& x_hat, const Var<T>& x, Reconstruction kind) {
  return kind == Reconstruction::mse ? ad::mse(x_hat, x) : ad::binary_cross_entropy(x_hat, x);
}

template <typename T>
Var<T> kl_term(const Var<T>& mu, const Var<T>& log_sigma) {
  return ad::mean(ad::kl_divergence_rows(mu, log_sigma));
}

template <typename T>
VaeLoss<T> vae_loss(const Var<T>& x, const ModelFns<T>& fns, const LossOptions& opt, RngStream& rng) {
  const auto enc = fns.encode(x);
  const Var<T> z = reparameterize(enc.mu, enc.log_sigma, rng);
  const Var<T> recon = reconstruction_loss(fns.decode(z), x, opt.reconstruction);
  const Var<T> kl = kl_term(enc.mu, enc.log_sigma);
  return {ad::add(recon, ad::scale(kl, opt.beta)), recon, kl};
}

template <typename T>
IvaeEncoderLoss<T> ivae_encoder_loss(const Var<T>& x, const Var<T>& z_prior, const ModelFns<T>& fns,
                                     const LossOptions& opt, RngStream& rng) {
  if (opt.margin < 0) throw ValidationError("margin must be >= 0");
  const auto enc = fns.encode(x);
  const Var<T> z = reparameterize(enc.mu, enc.log_sigma, rng);
  const Var<T> x_hat = fns.decode(z);
  const Var<T> recon = reconstruction_loss(x_hat, x, opt.reconstruction);
  const Var<T> energy_real = kl_term(enc.mu, enc.log_sigma);

  auto fake_energy_rows = [&](const Var<T>& generated) {
    const auto e = fns.encode(ad::stop_gradient(generated));
    return ad::kl_divergence_rows(e.mu, e.log_sigma);
  };
  auto hinge_of = [&](const Var<T>& rows) {
    return ad::mean(ad::relu(ad::add_scalar(ad::scale(rows, -1.0), opt.margin)));
  };
  const Var<T> rows = fake_energy_rows(fns.decode(z_prior));
  Var<T> hinge = hinge_of(rows);
  const Var<T> energy_fake = ad::mean(rows);
  if (opt.adversarial_on_reconstructions) hinge = ad::add(hinge, hinge_of(fake_energy_rows(x_hat)));

  Var<T> total = ad::add(ad::scale(energy_real, opt.beta), ad::scale(hinge, opt.adversarial_weight));
  total = ad::add(total, recon);
  return {total, energy_real, hinge, energy_fake, recon};
}

template <typename T>
IvaeGeneratorLoss<T> ivae_generator_loss(const Var<T>& x, const Var<T>& z_prior,
                                         const ModelFns<T>& fns, const LossOptions& opt,
                                         RngStream& rng) {
  const auto enc = fns.encode(x);
  const Var<T> z = reparameterize(enc.mu, enc.log_sigma, rng);
  const Var<T> x_hat = fns.decode(z);
  const Var<T> recon = reconstruction_loss(x_hat, x, opt.reconstruction);
  const auto enc_fake = fns.encode(fns.decode(z_prior));
  const Var<T> energy_fake = kl_term(enc_fake.mu, enc_fake.log_sigma);
  Var<T> adversarial = energy_fake;
  if (opt.adversarial_on_reconstructions) {
    const auto enc_rec = fns.encode(x_hat);
    adversarial = ad::add(adversarial, kl_term(enc_rec.mu, enc_rec.log_sigma));
  }
  return {ad::add(ad::scale(adversarial, opt.adversarial_weight), recon), energy_fake, recon};
}

double gan_objective_value(std::span<const double> d_real, std::span<const double> d_fake) {
  if (d_real.empty() || d_fake.empty()) {
    throw ValidationError("gan_objective_value needs non-empty discriminator outputs");
  }
  auto mean_log = [](std::span<const double> v, bool complement) {
    double acc = 0;
    for (double p : v) {
      if (!(p > 0.0 && p < 1.0)) {
        throw ValidationError("discriminator output " + std::to_string(p) + " is outside (0, 1)");
      }
      acc += std::log(complement ? 1.0 - p : p);
    }
    return acc / static_cast<double>(v.size());
  };
  return mean_log(d_real, false) + mean_log(d_fake, true);
}

#define NEUROVOL_INSTANTIATE(T)                                                                  \
  template Var<T> reconstruction_loss(const Var<T>&, const Var<T>&, Reconstruction);            \
  template Var<T> kl_term(const Var<T>&, const Var<T>&);                                         \
  template VaeLoss<T> vae_loss(const Var<T>&, const ModelFns<T>&, const LossOptions&, RngStream&); \
  template IvaeEncoderLoss<T> ivae_encoder_loss(const Var<T>&, const Var<T>&, const ModelFns<T>&, \
                                                const LossOptions&, RngStream&);                 \
  template IvaeGeneratorLoss<T> ivae_generator_loss(const Var<T>&, const Var<T>&,                \
                                                    const ModelFns<T>&, const LossOptions&,      \
                                                    RngStream&);

NEUROVOL_INSTANTIATE(float)
NEUROVOL_INSTANTIATE(double)
#undef NEUROVOL_INSTANTIATE

}  // namespace neurovol
