#include "neurovol/model.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "neurovol/digest.hpp"
#include "neurovol/error.hpp"

namespace neurovol {

ArchitectureConfig ArchitectureConfig::desk(std::size_t latent_dim) {
  ArchitectureConfig c;
  c.latent_dim = latent_dim;
  return c;
}

ArchitectureConfig ArchitectureConfig::full_scale(std::size_t latent_dim) {
  ArchitectureConfig c;
  c.input = {40, 48, 40};
  c.channels = {16, 32, 64};
  c.dense_widths = {256};
  c.latent_dim = latent_dim;
  return c;
}

Extents ArchitectureConfig::bottleneck() const {
  const std::size_t f = std::size_t{1} << stages();
  return {input.nx / f, input.ny / f, input.nz / f};
}

std::size_t ArchitectureConfig::bottleneck_features() const {
  return bottleneck().voxels() * channels.back();
}

void ArchitectureConfig::validate() const {
  if (channels.empty()) throw ValidationError("architecture needs at least one conv stage");
  if (std::find(channels.begin(), channels.end(), 0u) != channels.end()) {
    throw ValidationError("architecture channel counts must be positive");
  }
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw ValidationError("kernel_size must be odd, got " + std::to_string(kernel_size));
  }
  if (latent_dim == 0) throw ValidationError("latent_dim must be positive");
  if (std::find(dense_widths.begin(), dense_widths.end(), 0u) != dense_widths.end()) {
    throw ValidationError("dense widths must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must be in [0, 1)");
  if (!(log_sigma_min < log_sigma_max)) throw ValidationError("log_sigma_min must be < log_sigma_max");
  if (stages() > 8) throw ValidationError("too many conv stages");
  const std::size_t f = std::size_t{1} << stages();
  const std::pair<const char*, std::size_t> axes[] = {
      {"x", input.nx}, {"y", input.ny}, {"z", input.nz}};
  for (const auto& [name, n] : axes) {
    if (n == 0 || n % f != 0) {
      throw ValidationError("input extent " + to_string(input) + " on axis " + name +
                            " is not divisible by " + std::to_string(f));
    }
  }
}

void to_json(nlohmann::json& j, const Activation& a) {
  const char* kind = "identity";
  switch (a.kind) {
    case Activation::Kind::identity: kind = "identity"; break;
    case Activation::Kind::relu: kind = "relu"; break;
    case Activation::Kind::leaky_relu: kind = "leaky_relu"; break;
    case Activation::Kind::sigmoid: kind = "sigmoid"; break;
  }
  j = {{"kind", kind}, {"alpha", a.alpha}};
}

void from_json(const nlohmann::json& j, Activation& a) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "identity") a.kind = Activation::Kind::identity;
  else if (kind == "relu") a.kind = Activation::Kind::relu;
  else if (kind == "leaky_relu") a.kind = Activation::Kind::leaky_relu;
  else if (kind == "sigmoid") a.kind = Activation::Kind::sigmoid;
  else throw ValidationError("unknown activation '" + kind + "'");
  a.alpha = j.value("alpha", 0.0);
}

void to_json(nlohmann::json& j, const ArchitectureConfig& c) {
  j = {{"input", {c.input.nx, c.input.ny, c.input.nz}},
       {"channels", c.channels},
       {"kernel_size", c.kernel_size},
       {"dense_widths", c.dense_widths},
       {"latent_dim", c.latent_dim},
       {"dropout", c.dropout},
       {"hidden_activation", c.hidden_activation},
       {"batch_norm", c.batch_norm},
       {"log_sigma_min", c.log_sigma_min},
       {"log_sigma_max", c.log_sigma_max}};
}

void from_json(const nlohmann::json& j, ArchitectureConfig& c) {
  if (j.contains("input")) {
    const auto e = j.at("input").get<std::array<std::size_t, 3>>();
    c.input = {e[0], e[1], e[2]};
  }
  if (j.contains("channels")) j.at("channels").get_to(c.channels);
  if (j.contains("kernel_size")) j.at("kernel_size").get_to(c.kernel_size);
  if (j.contains("dense_widths")) j.at("dense_widths").get_to(c.dense_widths);
  if (j.contains("latent_dim")) j.at("latent_dim").get_to(c.latent_dim);
  if (j.contains("dropout")) j.at("dropout").get_to(c.dropout);
  if (j.contains("hidden_activation")) j.at("hidden_activation").get_to(c.hidden_activation);
  if (j.contains("batch_norm")) j.at("batch_norm").get_to(c.batch_norm);
  if (j.contains("log_sigma_min")) j.at("log_sigma_min").get_to(c.log_sigma_min);
  if (j.contains("log_sigma_max")) j.at("log_sigma_max").get_to(c.log_sigma_max);
}

std::string architecture_digest(const ArchitectureConfig& c) {
  return sha256_hex(nlohmann::json(c).dump());
}

// ---------------------------------------------------------------------------

template <typename T>
void ParameterStore<T>::add(std::string name, Component component, Tensor<T> value, bool trainable) {
  if (index_.count(name)) throw ValidationError("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), component, std::move(value), trainable});
}

template <typename T>
Parameter<T>& ParameterStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

template <typename T>
const Parameter<T>& ParameterStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

template <typename T>
Gradients<T> Binding<T>::gradients() const {
  Gradients<T> out;
  for (const auto& [name, v] : vars_) {
    if (v.requires_grad()) out.emplace(name, tape_->grad(v));
  }
  return out;
}

namespace {

enum class InitKind { glorot, zero, one };

struct ParamSpec {
  std::string name;
  Component component;
  Shape shape;
  InitKind init;
  bool trainable;
  std::size_t fan_in = 0, fan_out = 0;
};

void add_norm(std::vector<ParamSpec>& out, const std::string& prefix, Component comp,
              std::size_t channels, bool enabled) {
  if (!enabled) return;
  out.push_back({prefix + ".bn.gamma", comp, {channels}, InitKind::one, true});
  out.push_back({prefix + ".bn.beta", comp, {channels}, InitKind::zero, true});
  out.push_back({prefix + ".bn.running_mean", comp, {channels}, InitKind::zero, false});
  out.push_back({prefix + ".bn.running_var", comp, {channels}, InitKind::one, false});
}

void add_affine(std::vector<ParamSpec>& out, const std::string& prefix, Component comp,
                std::size_t in, std::size_t outw) {
  out.push_back({prefix + ".weight", comp, {in, outw}, InitKind::glorot, true, in, outw});
  out.push_back({prefix + ".bias", comp, {outw}, InitKind::zero, true});
}

std::vector<ParamSpec> layout(const ArchitectureConfig& c) {
  std::vector<ParamSpec> out;
  const std::size_t k = c.kernel_size;
  const std::size_t k3 = k * k * k;
  const auto enc = Component::encoder;
  const auto dec = Component::decoder;

  std::size_t in_ch = 1;
  for (std::size_t s = 0; s < c.stages(); ++s) {
    const std::string p = "enc.conv" + std::to_string(s);
    const std::size_t oc = c.channels[s];
    out.push_back({p + ".weight", enc, {oc, in_ch, k, k, k}, InitKind::glorot, true, in_ch * k3, oc * k3});
    out.push_back({p + ".bias", enc, {oc}, InitKind::zero, true});
    add_norm(out, p, enc, oc, c.batch_norm);
    in_ch = oc;
  }
  std::size_t width = c.bottleneck_features();
  for (std::size_t i = 0; i < c.dense_widths.size(); ++i) {
    const std::string p = "enc.dense" + std::to_string(i);
    add_affine(out, p, enc, width, c.dense_widths[i]);
    add_norm(out, p, enc, c.dense_widths[i], c.batch_norm);
    width = c.dense_widths[i];
  }
  add_affine(out, "enc.mu", enc, width, c.latent_dim);
  add_affine(out, "enc.log_sigma", enc, width, c.latent_dim);

  width = c.latent_dim;
  for (std::size_t i = c.dense_widths.size(); i-- > 0;) {
    const std::string p = "dec.dense" + std::to_string(i);
    add_affine(out, p, dec, width, c.dense_widths[i]);
    add_norm(out, p, dec, c.dense_widths[i], c.batch_norm);
    width = c.dense_widths[i];
  }
  add_affine(out, "dec.project", dec, width, c.bottleneck_features());
  add_norm(out, "dec.project", dec, c.bottleneck_features(), c.batch_norm);
  for (std::size_t s = c.stages(); s-- > 0;) {
    const std::string p = "dec.deconv" + std::to_string(s);
    const std::size_t ic = c.channels[s];
    const std::size_t oc = s == 0 ? 1 : c.channels[s - 1];
    out.push_back({p + ".weight", dec, {ic, oc, k, k, k}, InitKind::glorot, true, ic * k3, oc * k3});
    out.push_back({p + ".bias", dec, {oc}, InitKind::zero, true});
    if (s > 0) add_norm(out, p, dec, oc, c.batch_norm);
  }
  return out;
}

}  // namespace

template <typename T>
Vae<T>::Vae(ArchitectureConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  const RngStream root(init_seed);
  const auto specs = layout(config_);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    Tensor<T> value(s.shape);
    switch (s.init) {
      case InitKind::zero: break;
      case InitKind::one: value.fill(T(1)); break;
      case InitKind::glorot: {
        const double limit = std::sqrt(6.0 / static_cast<double>(s.fan_in + s.fan_out));
        RngStream rng = root.fork(i);
        for (auto& v : value.data()) v = static_cast<T>(rng.uniform(-limit, limit));
        break;
      }
    }
    params_.add(s.name, s.component, std::move(value), s.trainable);
  }
}

template <typename T>
Vae<T>::Vae(ArchitectureConfig config, ParameterStore<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto specs = layout(config_);
  if (specs.size() != params_.size()) {
    throw ValidationError("parameter set has " + std::to_string(params_.size()) +
                          " tensors, architecture expects " + std::to_string(specs.size()));
  }
  for (const auto& s : specs) {
    if (!params_.contains(s.name)) throw ValidationError("missing parameter '" + s.name + "'");
    auto& p = params_.at(s.name);
    if (p.value.shape() != s.shape) {
      throw ValidationError("parameter '" + s.name + "' has shape " + to_string(p.value.shape()) +
                            ", expected " + to_string(s.shape));
    }
    p.component = s.component;
    p.trainable = s.trainable;
  }
}

template <typename T>
Binding<T> Vae<T>::bind(Tape<T>& tape, GradTargets targets) const {
  Binding<T> b;
  b.tape_ = &tape;
  b.targets_ = targets;
  for (const auto& p : params_.entries()) {
    if (!p.trainable) continue;
    const bool req = p.component == Component::encoder ? targets.encoder : targets.decoder;
    b.vars_.emplace(p.name, tape.leaf(p.value, req));
  }
  return b;
}

template <typename T>
Var<T> Vae<T>::norm_act(const Binding<T>& b, const std::string& prefix, const Var<T>& h,
                        ForwardOptions opt) {
  Var<T> y = h;
  if (config_.batch_norm) {
    auto& rm = params_.at(prefix + ".bn.running_mean");
    auto& rv = params_.at(prefix + ".bn.running_var");
    BatchNormStats<T> stats{rm.value, rv.value};
    BatchNormOptions bo;
    bo.update_running = opt.update_running;
    y = ad::batch_norm(h, b.var(prefix + ".bn.gamma"), b.var(prefix + ".bn.beta"), stats, opt.mode, bo);
    if (opt.mode == Mode::train && opt.update_running) {
      rm.value = std::move(stats.mean);
      rv.value = std::move(stats.var);
    }
  }
  return ad::activation(y, config_.hidden_activation);
}

template <typename T>
EncodeResult<T> Vae<T>::encode(const Binding<T>& b, const Var<T>& x, ForwardOptions opt,
                               RngStream& rng) {
  const auto& in = config_.input;
  const Shape expect{x.shape().empty() ? 0 : x.shape()[0], 1, in.nz, in.ny, in.nx};
  if (x.shape() != expect) {
    throw ValidationError("encoder input shape " + to_string(x.shape()) + " does not match " +
                          to_string(expect));
  }
  const std::size_t n = expect[0];
  const std::size_t pad = config_.kernel_size / 2;
  Var<T> h = x;
  for (std::size_t s = 0; s < config_.stages(); ++s) {
    const std::string p = "enc.conv" + std::to_string(s);
    h = ad::conv3d(h, b.var(p + ".weight"), b.var(p + ".bias"), 1, pad);
    h = norm_act(b, p, h, opt);
    h = ad::avg_pool3d(h, 2);
  }
  h = ad::reshape(h, Shape{n, config_.bottleneck_features()});
  for (std::size_t i = 0; i < config_.dense_widths.size(); ++i) {
    const std::string p = "enc.dense" + std::to_string(i);
    h = ad::affine(h, b.var(p + ".weight"), b.var(p + ".bias"));
    h = norm_act(b, p, h, opt);
    if (config_.dropout > 0) h = ad::dropout(h, config_.dropout, rng, opt.mode);
  }
  Var<T> mu = ad::affine(h, b.var("enc.mu.weight"), b.var("enc.mu.bias"));
  Var<T> ls = ad::affine(h, b.var("enc.log_sigma.weight"), b.var("enc.log_sigma.bias"));
  ls = ad::clamp(ls, config_.log_sigma_min, config_.log_sigma_max);
  return {mu, ls};
}

template <typename T>
Var<T> Vae<T>::decode(const Binding<T>& b, const Var<T>& z, ForwardOptions opt, RngStream& rng) {
  if (z.shape().size() != 2 || z.shape()[1] != config_.latent_dim) {
    throw ValidationError("decoder input shape " + to_string(z.shape()) + " must be [N, " +
                          std::to_string(config_.latent_dim) + "]");
  }
  const std::size_t n = z.shape()[0];
  const std::size_t pad = config_.kernel_size / 2;
  Var<T> h = z;
  for (std::size_t i = config_.dense_widths.size(); i-- > 0;) {
    const std::string p = "dec.dense" + std::to_string(i);
    h = ad::affine(h, b.var(p + ".weight"), b.var(p + ".bias"));
    h = norm_act(b, p, h, opt);
    if (config_.dropout > 0) h = ad::dropout(h, config_.dropout, rng, opt.mode);
  }
  h = ad::affine(h, b.var("dec.project.weight"), b.var("dec.project.bias"));
  h = norm_act(b, "dec.project", h, opt);
  const Extents g = config_.bottleneck();
  h = ad::reshape(h, Shape{n, config_.channels.back(), g.nz, g.ny, g.nx});
  for (std::size_t s = config_.stages(); s-- > 0;) {
    const std::string p = "dec.deconv" + std::to_string(s);
    h = ad::upsample3d_nearest(h, 2);
    h = ad::conv3d_transpose(h, b.var(p + ".weight"), b.var(p + ".bias"), 1, pad);
    h = s > 0 ? norm_act(b, p, h, opt) : ad::sigmoid(h);
  }
  return h;
}

template <typename T>
LatentCode<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& log_sigma, RngStream& rng) {
  if (mu.shape() != log_sigma.shape()) {
    throw ValidationError("reparameterize: mu " + to_string(mu.shape()) + " vs log_sigma " +
                          to_string(log_sigma.shape()));
  }
  LatentCode<T> code{mu, log_sigma, Tensor<T>(mu.shape()), Tensor<T>(mu.shape())};
  for (std::size_t i = 0; i < mu.size(); ++i) {
    code.epsilon[i] = static_cast<T>(rng.normal());
    code.sample[i] = mu[i] + std::exp(log_sigma[i]) * code.epsilon[i];
  }
  return code;
}

template <typename T>
Var<T> reparameterize(const Var<T>& mu, const Var<T>& log_sigma, RngStream& rng) {
  if (mu.shape() != log_sigma.shape()) {
    throw ValidationError("reparameterize: mu " + to_string(mu.shape()) + " vs log_sigma " +
                          to_string(log_sigma.shape()));
  }
  Tensor<T> eps(mu.shape());
  for (auto& e : eps.data()) e = static_cast<T>(rng.normal());
  Var<T> e = mu.tape().constant(std::move(eps));
  return ad::add(mu, ad::mul(ad::exp(log_sigma), e));
}

namespace {

constexpr std::size_t kInferenceChunk = 32;

}  // namespace

template <typename T>
LatentCode<T> encode(Vae<T>& model, std::span<const Volume> volumes, RngStream& rng) {
  if (volumes.empty()) throw ValidationError("encode needs at least one volume");
  const std::size_t n = volumes.size();
  const std::size_t l = model.config().latent_dim;
  Tensor<T> mu(Shape{n, l}), ls(Shape{n, l});
  RngStream unused(0);
  for (std::size_t start = 0; start < n; start += kInferenceChunk) {
    const std::size_t count = std::min(kInferenceChunk, n - start);
    Tape<T> tape;
    const auto b = model.bind(tape, GradTargets::none());
    Var<T> x = tape.constant(to_batch_tensor<T>(volumes.subspan(start, count)));
    const auto r = model.encode(b, x, {Mode::eval, false}, unused);
    std::copy(r.mu.value().data().begin(), r.mu.value().data().end(), mu.data().begin() + start * l);
    std::copy(r.log_sigma.value().data().begin(), r.log_sigma.value().data().end(),
              ls.data().begin() + start * l);
  }
  return reparameterize(mu, ls, rng);
}

template <typename T>
std::vector<Volume> decode(Vae<T>& model, const Tensor<T>& z) {
  const std::size_t l = model.config().latent_dim;
  if (z.rank() != 2 || z.extent(1) != l) {
    throw ValidationError("decode: latent shape " + to_string(z.shape()) + " must be [N, " +
                          std::to_string(l) + "]");
  }
  const std::size_t n = z.extent(0);
  std::vector<Volume> out;
  out.reserve(n);
  RngStream unused(0);
  for (std::size_t start = 0; start < n; start += kInferenceChunk) {
    const std::size_t count = std::min(kInferenceChunk, n - start);
    Tape<T> tape;
    const auto b = model.bind(tape, GradTargets::none());
    std::vector<T> chunk(z.data().begin() + start * l, z.data().begin() + (start + count) * l);
    Var<T> zv = tape.constant(Tensor<T>(Shape{count, l}, std::move(chunk)));
    Var<T> y = model.decode(b, zv, {Mode::eval, false}, unused);
    for (std::size_t i = 0; i < count; ++i) out.push_back(volume_from_batch(y.value(), i));
  }
  return out;
}

template <typename T>
std::vector<Volume> sample_prior(Vae<T>& model, std::size_t n, RngStream& rng) {
  if (n == 0) return {};
  Tensor<T> z(Shape{n, model.config().latent_dim});
  for (auto& v : z.data()) v = static_cast<T>(rng.normal());
  return decode(model, z);
}

template <typename T>
std::vector<Volume> reconstruct(Vae<T>& model, std::span<const Volume> volumes, bool use_mean,
                                RngStream& rng) {
  const LatentCode<T> code = encode(model, volumes, rng);
  return decode(model, use_mean ? code.mu : code.sample);
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Binding<float>;
template class Binding<double>;
template class Vae<float>;
template class Vae<double>;

#define NEUROVOL_INSTANTIATE(T)                                                                  \
  template LatentCode<T> reparameterize(const Tensor<T>&, const Tensor<T>&, RngStream&);         \
  template Var<T> reparameterize(const Var<T>&, const Var<T>&, RngStream&);                      \
  template LatentCode<T> encode(Vae<T>&, std::span<const Volume>, RngStream&);                   \
  template std::vector<Volume> decode(Vae<T>&, const Tensor<T>&);                                \
  template std::vector<Volume> sample_prior(Vae<T>&, std::size_t, RngStream&);                   \
  template std::vector<Volume> reconstruct(Vae<T>&, std::span<const Volume>, bool, RngStream&);

NEUROVOL_INSTANTIATE(float)
NEUROVOL_INSTANTIATE(double)
#undef NEUROVOL_INSTANTIATE

}  // namespace neurovol
