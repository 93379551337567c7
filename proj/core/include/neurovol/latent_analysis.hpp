#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "neurovol/dataset.hpp"
#include "neurovol/model.hpp"

namespace neurovol {

/// Per dimension: size-weighted variance of the class means divided by the
/// size-weighted mean of the within-class (population) variances. A dimension
/// with zero within-class variance but distinct class means scores +infinity;
/// one that is constant everywhere scores 0.
std::vector<double> fisher_score_per_dim(const Tensor<double>& latents,
                                         std::span<const std::size_t> labels);

/// Indices of the k largest scores, highest first; ties keep the lower index.
std::vector<std::size_t> top_dimensions(std::span<const double> scores, std::size_t k);

/// Decodes value * e_dim for each value, all other coordinates zero.
template <typename T>
std::vector<Volume> latent_traversal(Vae<T>& model, std::size_t dim, std::span<const double> values);

struct BiasOptions {
  /// Flag a class pair when |mean_a - mean_b| > flag_multiple * pooled sd.
  double flag_multiple = 1.0;
  std::size_t histogram_bins = 10;
};

struct ClassAttributeSummary {
  std::string class_label;
  std::size_t count = 0;
  double mean = 0;
  /// Sample standard deviation (0 for a single value).
  double sd = 0;
  std::vector<std::size_t> histogram;
};

struct BiasFlag {
  std::string class_a, class_b;
  double gap = 0;
  double pooled_sd = 0;
};

struct AttributeReport {
  std::string attribute;
  double histogram_min = 0, histogram_max = 0;
  std::vector<ClassAttributeSummary> classes;
  std::vector<BiasFlag> flags;
};

struct BiasReport {
  BiasOptions options;
  std::vector<AttributeReport> attributes;
  std::vector<std::string> warnings;

  const AttributeReport* find(std::string_view attribute) const;
};

/// Summaries of tr_ms, te_ms, pixel_bandwidth_hz and age_years per class over
/// manifest records. Non-finite values are skipped with a warning.
BiasReport metadata_bias_report(const DatasetManifest& manifest, const BiasOptions& options = {});

void to_json(nlohmann::json& j, const BiasReport& r);

}  // namespace neurovol
