#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "neurovol/dataset.hpp"
#include "neurovol/latent_analysis.hpp"
#include "neurovol/model.hpp"
#include "neurovol/phantom.hpp"
#include "neurovol/preprocess.hpp"
#include "neurovol/train.hpp"

namespace neurovol {

enum class ModelKind { vae, ivae };
std::string_view to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view name);

struct DatasetParams {
  std::size_t n_patients = 300;
  double train_fraction = 0.9;
  ImagesPerPatientRule images;
  /// Generate at raw_shape instead of phantom.shape, for the preprocess pipeline.
  bool raw_mode = false;
  Extents raw_shape{182, 218, 182};

  friend bool operator==(const DatasetParams&, const DatasetParams&) = default;
};

struct ModelSpec {
  ArchitectureConfig architecture;
  TrainConfig train;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct AnalysisParams {
  /// nullopt: default shrinkage 1e-6 * trace(S_w) / dim.
  std::optional<double> lda_epsilon;
  std::vector<double> traversal_values{-1.25, 0.0, 1.25};
  std::size_t traversal_top_k = 2;
  BiasOptions bias;

  friend bool operator==(const AnalysisParams& a, const AnalysisParams& b) {
    return a.lda_epsilon == b.lda_epsilon && a.traversal_values == b.traversal_values &&
           a.traversal_top_k == b.traversal_top_k && a.bias.flag_multiple == b.bias.flag_multiple &&
           a.bias.histogram_bins == b.bias.histogram_bins;
  }
};

/// Everything a run depends on. Sub-seeds derive from `seed`:
/// dataset = seed, split = mix_seed(seed, 1), init = mix_seed(seed, 2),
/// training = mix_seed(seed, 3), sampling = mix_seed(seed, 4).
struct ExperimentConfig {
  std::uint64_t seed = 1;
  DatasetParams dataset;
  PhantomConfig phantom;
  PreprocessParams preprocess;
  ModelSpec vae;
  ModelSpec ivae;
  AnalysisParams analysis;

  /// Desk-scale defaults: 20x24x20 phantoms, VAE latent 8, IntroVAE latent 32.
  static ExperimentConfig desk();

  const ModelSpec& model(ModelKind k) const { return k == ModelKind::vae ? vae : ivae; }
  ModelSpec& model(ModelKind k) { return k == ModelKind::vae ? vae : ivae; }
  /// The model's TrainConfig with its seed derived from `seed`.
  TrainConfig train_config(ModelKind k) const;

  void validate() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Missing keys keep their desk() defaults.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Canonical text form (sorted keys, 2-space indent, trailing newline).
std::string config_text(const ExperimentConfig& c);
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// SHA-256 of the canonical text form.
std::string config_digest(const ExperimentConfig& c);

}  // namespace neurovol
