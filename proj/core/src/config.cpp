#include "neurovol/config.hpp"

#include <nlohmann/json.hpp>

#include "neurovol/digest.hpp"
#include "neurovol/error.hpp"
#include "neurovol/io.hpp"

namespace neurovol {

std::string_view to_string(ModelKind k) { return k == ModelKind::vae ? "vae" : "ivae"; }

ModelKind parse_model_kind(std::string_view name) {
  if (name == "vae") return ModelKind::vae;
  if (name == "ivae") return ModelKind::ivae;
  throw ValidationError("unknown model '" + std::string(name) + "' (expected vae or ivae)");
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.phantom.shape = {20, 24, 20};
  c.vae.architecture = ArchitectureConfig::desk(8);
  c.ivae.architecture = ArchitectureConfig::desk(32);
  return c;
}

TrainConfig ExperimentConfig::train_config(ModelKind k) const {
  TrainConfig t = model(k).train;
  t.seed = mix_seed(seed, 3);
  return t;
}

void ExperimentConfig::validate() const {
  phantom.validate();
  vae.architecture.validate();
  ivae.architecture.validate();
  if (!(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0)) {
    throw ValidationError("dataset.train_fraction must be in (0, 1)");
  }
  if (dataset.n_patients < kNumClasses) {
    throw ValidationError("dataset.n_patients must be at least " + std::to_string(kNumClasses));
  }
  if (analysis.lda_epsilon && *analysis.lda_epsilon < 0) {
    throw ValidationError("analysis.lda_epsilon must be >= 0");
  }
}

namespace {

nlohmann::json extents_json(const Extents& e) { return {e.nx, e.ny, e.nz}; }

Extents extents_from(const nlohmann::json& j) {
  const auto a = j.get<std::array<std::size_t, 3>>();
  return {a[0], a[1], a[2]};
}

template <typename V>
void get_optional(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

nlohmann::json model_json(const ModelSpec& m) {
  nlohmann::json train = m.train;
  train.erase("seed");  // derived from the experiment seed
  return {{"architecture", m.architecture}, {"train", train}};
}

void model_from(const nlohmann::json& j, ModelSpec& m) {
  if (j.contains("architecture")) {
    ArchitectureConfig a = m.architecture;
    from_json(j.at("architecture"), a);
    m.architecture = a;
  }
  if (j.contains("train")) {
    TrainConfig t = m.train;
    from_json(j.at("train"), t);
    m.train = t;
  }
}

}  // namespace

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json analysis = {{"traversal_values", c.analysis.traversal_values},
                             {"traversal_top_k", c.analysis.traversal_top_k},
                             {"bias_flag_multiple", c.analysis.bias.flag_multiple},
                             {"bias_histogram_bins", c.analysis.bias.histogram_bins}};
  analysis["lda_epsilon"] = c.analysis.lda_epsilon ? nlohmann::json(*c.analysis.lda_epsilon) : nlohmann::json();
  j = {{"seed", c.seed},
       {"dataset",
        {{"n_patients", c.dataset.n_patients},
         {"train_fraction", c.dataset.train_fraction},
         {"max_images_per_patient", c.dataset.images.max_images},
         {"raw_mode", c.dataset.raw_mode},
         {"raw_shape", extents_json(c.dataset.raw_shape)}}},
       {"phantom", c.phantom},
       {"preprocess", c.preprocess},
       {"vae", model_json(c.vae)},
       {"ivae", model_json(c.ivae)},
       {"analysis", analysis}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig::desk();
  get_optional(j, "seed", c.seed);
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    get_optional(d, "n_patients", c.dataset.n_patients);
    get_optional(d, "train_fraction", c.dataset.train_fraction);
    get_optional(d, "max_images_per_patient", c.dataset.images.max_images);
    get_optional(d, "raw_mode", c.dataset.raw_mode);
    if (d.contains("raw_shape")) c.dataset.raw_shape = extents_from(d.at("raw_shape"));
  }
  if (j.contains("phantom")) {
    PhantomConfig p = c.phantom;
    from_json(j.at("phantom"), p);
    c.phantom = p;
  }
  if (j.contains("preprocess")) {
    PreprocessParams p = c.preprocess;
    from_json(j.at("preprocess"), p);
    c.preprocess = p;
  }
  if (j.contains("vae")) model_from(j.at("vae"), c.vae);
  if (j.contains("ivae")) model_from(j.at("ivae"), c.ivae);
  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    if (a.contains("lda_epsilon")) {
      const auto& e = a.at("lda_epsilon");
      c.analysis.lda_epsilon = e.is_null() ? std::nullopt : std::optional<double>(e.get<double>());
    }
    get_optional(a, "traversal_values", c.analysis.traversal_values);
    get_optional(a, "traversal_top_k", c.analysis.traversal_top_k);
    get_optional(a, "bias_flag_multiple", c.analysis.bias.flag_multiple);
    get_optional(a, "bias_histogram_bins", c.analysis.bias.histogram_bins);
  }
}

std::string config_text(const ExperimentConfig& c) { return nlohmann::json(c).dump(2) + "\n"; }

ExperimentConfig parse_config(std::string_view text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ValidationError("configuration is not a JSON object");
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid configuration: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  try {
    return parse_config(io::read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string config_digest(const ExperimentConfig& c) { return sha256_hex(config_text(c)); }

}  // namespace neurovol
