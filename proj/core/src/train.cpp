#include "neurovol/train.hpp"

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "neurovol/digest.hpp"
#include "neurovol/error.hpp"

namespace neurovol {

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"optimizer", c.optimizer},
       {"loss", c.loss}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("checkpoint_every")) j.at("checkpoint_every").get_to(c.checkpoint_every);
  if (j.contains("optimizer")) j.at("optimizer").get_to(c.optimizer);
  if (j.contains("loss")) j.at("loss").get_to(c.loss);
}

std::string train_config_digest(const TrainConfig& c) { return sha256_hex(nlohmann::json(c).dump()); }

template <typename T>
ModelFns<T> model_fns(Vae<T>& model, const Binding<T>& b, ForwardOptions encoder_opt,
                      ForwardOptions decoder_opt, RngStream& rng) {
  return {[&model, &b, encoder_opt, &rng](const Var<T>& x) { return model.encode(b, x, encoder_opt, rng); },
          [&model, &b, decoder_opt, &rng](const Var<T>& z) { return model.decode(b, z, decoder_opt, rng); }};
}

template <typename T>
StepResult<T> vae_step(Vae<T>& model, const Tensor<T>& x, const LossOptions& opt, RngStream& rng,
                       Mode mode) {
  Tape<T> tape;
  const auto b = model.bind(tape, GradTargets::both());
  const auto fns = model_fns(model, b, {mode, true}, {mode, true}, rng);
  const auto loss = vae_loss(tape.constant(x), fns, opt, rng);
  tape.backward(loss.total);
  StepResult<T> r;
  r.total = loss.total.value().item();
  r.recon = loss.recon.value().item();
  r.kl = loss.kl.value().item();
  r.gradients = b.gradients();
  return r;
}

template <typename T>
StepResult<T> ivae_encoder_step(Vae<T>& model, const Tensor<T>& x, const Tensor<T>& z_prior,
                                const LossOptions& opt, RngStream& rng, Mode mode) {
  Tape<T> tape;
  const auto b = model.bind(tape, GradTargets::encoder_only());
  const auto fns = model_fns(model, b, {mode, true}, {mode, false}, rng);
  const auto loss = ivae_encoder_loss(tape.constant(x), tape.constant(z_prior), fns, opt, rng);
  tape.backward(loss.total);
  StepResult<T> r;
  r.total = loss.total.value().item();
  r.recon = loss.recon.value().item();
  r.kl = loss.energy_real.value().item();
  r.energy_fake = loss.energy_fake.value().item();
  r.hinge = loss.hinge.value().item();
  r.gradients = b.gradients();
  return r;
}

template <typename T>
StepResult<T> ivae_generator_step(Vae<T>& model, const Tensor<T>& x, const Tensor<T>& z_prior,
                                  const LossOptions& opt, RngStream& rng, Mode mode) {
  Tape<T> tape;
  const auto b = model.bind(tape, GradTargets::decoder_only());
  const auto fns = model_fns(model, b, {mode, false}, {mode, true}, rng);
  const auto loss = ivae_generator_loss(tape.constant(x), tape.constant(z_prior), fns, opt, rng);
  tape.backward(loss.total);
  StepResult<T> r;
  r.total = loss.total.value().item();
  r.recon = loss.recon.value().item();
  r.energy_fake = loss.energy_fake.value().item();
  r.gradients = b.gradients();
  return r;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch) {
  if (batch_size < 2) throw ValidationError("batch_size must be at least 2");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RngStream(seed).fork(2 * epoch).shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

namespace {

template <typename T>
bool all_finite(const StepResult<T>& r) {
  if (!std::isfinite(r.total)) return false;
  for (const auto& [name, g] : r.gradients) {
    for (T v : g.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <typename T>
Tensor<T> gather(std::span<const Volume> data, const std::vector<std::size_t>& idx) {
  std::vector<Volume> picked;
  picked.reserve(idx.size());
  for (auto i : idx) picked.push_back(data[i]);
  return to_batch_tensor<T>(picked);
}

void check_inputs(const ArchitectureConfig& arch, std::span<const Volume> data,
                  const TrainConfig& config) {
  if (data.size() < 2) throw ValidationError("training needs at least 2 volumes");
  if (config.batch_size < 2) throw ValidationError("batch_size must be at least 2");
  if (config.epochs == 0) throw ValidationError("epochs must be positive");
  for (const auto& v : data) {
    if (v.extents() != arch.input) {
      throw ValidationError("training volume " + to_string(v.extents()) +
                            " does not match model input " + to_string(arch.input));
    }
  }
}

struct Sums {
  double weight = 0, total = 0, recon = 0, kl = 0, loss_e = 0, loss_g = 0, fake = 0;
};

/// Shared driver: `run_batch` performs the updates for one batch and returns
/// false on divergence.
template <typename T, typename RunBatch>
TrainResult train_loop(Vae<T>& model, std::span<const Volume> data, const TrainConfig& config,
                       const TrainHooks<T>& hooks, bool adversarial, RunBatch run_batch) {
  check_inputs(model.config(), data, config);
  TrainResult result;
  ParameterStore<T> last_good = model.parameters();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = epoch_batches(data.size(), config.batch_size, config.seed, epoch);
    RngStream rng = RngStream(config.seed).fork(2 * epoch + 1);
    Sums sums;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      if (hooks.on_batch) hooks.on_batch({epoch, bi, batches[bi]});
      const Tensor<T> x = gather<T>(data, batches[bi]);
      if (!run_batch(x, rng, sums)) {
        model.parameters() = last_good;
        result.diverged = true;
        result.message = "non-finite loss or gradient at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(bi) + "; parameters restored to epoch " +
                         std::to_string(result.last_good_epoch);
        spdlog::error("{}", result.message);
        return result;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss_total = sums.total / sums.weight;
    rec.loss_recon = sums.recon / sums.weight;
    rec.loss_kl = sums.kl / sums.weight;
    if (adversarial) {
      rec.loss_e = sums.loss_e / sums.weight;
      rec.loss_g = sums.loss_g / sums.weight;
      rec.energy_fake = sums.fake / sums.weight;
      spdlog::info("epoch {:3d} total {:.6f} recon {:.6f} kl {:.4f} L_E {:.4f} L_G {:.4f} E(G(z)) {:.4f}",
                   epoch, rec.loss_total, rec.loss_recon, rec.loss_kl, *rec.loss_e, *rec.loss_g,
                   *rec.energy_fake);
    } else {
      spdlog::info("epoch {:3d} total {:.6f} recon {:.6f} kl {:.4f}", epoch, rec.loss_total,
                   rec.loss_recon, rec.loss_kl);
    }
    result.curve.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    const bool due = epoch == config.epochs ||
                     (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0);
    if (due) {
      if (hooks.on_checkpoint) hooks.on_checkpoint(epoch, model);
      last_good = model.parameters();
      result.last_good_epoch = epoch;
    }
  }
  return result;
}

}  // namespace

template <typename T>
TrainResult train_vae(Vae<T>& model, std::span<const Volume> data, const TrainConfig& config,
                      const TrainHooks<T>& hooks) {
  Optimizer<T> optimizer(config.optimizer);
  return train_loop(model, data, config, hooks, false,
                    [&](const Tensor<T>& x, RngStream& rng, Sums& sums) {
                      const auto r = vae_step(model, x, config.loss, rng);
                      if (!all_finite(r)) return false;
                      optimizer.step(model.parameters(), r.gradients);
                      const double w = static_cast<double>(x.extent(0));
                      sums.weight += w;
                      sums.total += w * r.total;
                      sums.recon += w * r.recon;
                      sums.kl += w * r.kl;
                      return true;
                    });
}

template <typename T>
TrainResult train_ivae(Vae<T>& model, std::span<const Volume> data, const TrainConfig& config,
                       const TrainHooks<T>& hooks) {
  Optimizer<T> enc_opt(config.optimizer);
  Optimizer<T> dec_opt(config.optimizer);
  const std::size_t latent = model.config().latent_dim;
  return train_loop(model, data, config, hooks, true,
                    [&](const Tensor<T>& x, RngStream& rng, Sums& sums) {
                      const std::size_t n = x.extent(0);
                      Tensor<T> z_prior(Shape{n, latent});
                      for (auto& v : z_prior.data()) v = static_cast<T>(rng.normal());
                      const auto e = ivae_encoder_step(model, x, z_prior, config.loss, rng);
                      if (!all_finite(e)) return false;
                      enc_opt.step(model.parameters(), e.gradients);
                      const auto g = ivae_generator_step(model, x, z_prior, config.loss, rng);
                      if (!all_finite(g)) return false;
                      dec_opt.step(model.parameters(), g.gradients);
                      const double w = static_cast<double>(n);
                      sums.weight += w;
                      sums.total += w * (e.recon + config.loss.beta * e.kl);
                      sums.recon += w * e.recon;
                      sums.kl += w * e.kl;
                      sums.loss_e += w * e.total;
                      sums.loss_g += w * g.total;
                      sums.fake += w * g.energy_fake;
                      return true;
                    });
}

#define NEUROVOL_INSTANTIATE(T)                                                                   \
  template ModelFns<T> model_fns(Vae<T>&, const Binding<T>&, ForwardOptions, ForwardOptions,      \
                                 RngStream&);                                                     \
  template StepResult<T> vae_step(Vae<T>&, const Tensor<T>&, const LossOptions&, RngStream&, Mode); \
  template StepResult<T> ivae_encoder_step(Vae<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                           const LossOptions&, RngStream&, Mode);                 \
  template StepResult<T> ivae_generator_step(Vae<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                             const LossOptions&, RngStream&, Mode);               \
  template TrainResult train_vae(Vae<T>&, std::span<const Volume>, const TrainConfig&,            \
                                 const TrainHooks<T>&);                                           \
  template TrainResult train_ivae(Vae<T>&, std::span<const Volume>, const TrainConfig&,           \
                                  const TrainHooks<T>&);

NEUROVOL_INSTANTIATE(float)
NEUROVOL_INSTANTIATE(double)
#undef NEUROVOL_INSTANTIATE

}  // namespace neurovol
