#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "neurovol/volume.hpp"

namespace neurovol {

enum class ClassLabel { healthy, ms, leuk1, leuk2, leuk3 };

inline constexpr std::size_t kNumClasses = 5;
inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::healthy, ClassLabel::ms, ClassLabel::leuk1, ClassLabel::leuk2, ClassLabel::leuk3};

std::string_view to_string(ClassLabel label);
ClassLabel parse_class_label(std::string_view name);
constexpr std::size_t class_index(ClassLabel label) { return static_cast<std::size_t>(label); }
constexpr bool is_leuk(ClassLabel label) {
  return label == ClassLabel::leuk1 || label == ClassLabel::leuk2 || label == ClassLabel::leuk3;
}

struct AcquisitionMetadata {
  double tr_ms = 0;
  double te_ms = 0;
  double pixel_bandwidth_hz = 0;
  double age_years = 0;

  friend bool operator==(const AcquisitionMetadata&, const AcquisitionMetadata&) = default;
};

struct NormalSpec {
  double mean = 0;
  double sd = 0;
  friend bool operator==(const NormalSpec&, const NormalSpec&) = default;
};

struct MetadataProfile {
  NormalSpec tr_ms;
  NormalSpec te_ms;
  NormalSpec pixel_bandwidth_hz;
  NormalSpec age_years;
  friend bool operator==(const MetadataProfile&, const MetadataProfile&) = default;
};

/// Lesion morphology. Lengths are in normalised brain coordinates where the
/// volume spans [-1, 1] on every axis.
struct LesionParams {
  // MS-like: focal bright spheres touching the ventricle surface.
  std::size_t ms_count_min = 3;
  std::size_t ms_count_max = 9;
  double ms_radius_min = 0.08;
  double ms_radius_max = 0.15;
  double ms_intensity_min = 0.85;
  double ms_intensity_max = 1.0;
  // Leukoencephalopathy-like: confluent periventricular halo per grade 1..3.
  std::array<double, 3> leuk_extent{0.12, 0.20, 0.30};
  std::array<double, 3> leuk_peak{0.85, 0.90, 0.95};
  /// Per-patient multiplicative spread of the halo extent, uniform in [1-s, 1+s].
  double leuk_extent_spread = 0.15;

  friend bool operator==(const LesionParams&, const LesionParams&) = default;
};

struct PhantomConfig {
  Extents shape{40, 48, 40};
  /// Patient fractions per class (healthy, ms, leuk1, leuk2, leuk3); default is
  /// the clinical cohort 1855/616/384/40/201 normalised to 1.
  std::array<double, kNumClasses> class_proportions{1855.0 / 3096, 616.0 / 3096, 384.0 / 3096,
                                                    40.0 / 3096, 201.0 / 3096};
  LesionParams lesions;
  double lesion_threshold = 0.7;
  double jitter = 0.03;
  double noise_sigma = 0.02;

  double gray_matter = 0.38;
  double white_matter = 0.50;
  double csf = 0.10;

  std::array<MetadataProfile, kNumClasses> metadata = default_metadata();
  /// Tissue contrast gain per relative TE offset: tissue *= 1 + k*(te - te_ref)/te_ref.
  double contrast_coupling = 0.0;
  double contrast_reference_te_ms = 90.0;

  static std::array<MetadataProfile, kNumClasses> default_metadata();

  /// Throws ValidationError on inconsistent settings.
  void validate() const;

  friend bool operator==(const PhantomConfig&, const PhantomConfig&) = default;
};

void to_json(nlohmann::json& j, const NormalSpec& n);
void from_json(const nlohmann::json& j, NormalSpec& n);
void to_json(nlohmann::json& j, const MetadataProfile& m);
void from_json(const nlohmann::json& j, MetadataProfile& m);
void to_json(nlohmann::json& j, const LesionParams& l);
void from_json(const nlohmann::json& j, LesionParams& l);
void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);

/// SHA-256 of the canonical JSON form.
std::string phantom_config_hash(const PhantomConfig& config);

struct PhantomSample {
  Volume volume;
  AcquisitionMetadata metadata;
  std::size_t lesion_count = 0;
  /// Voxels strictly above config.lesion_threshold in the final volume.
  std::size_t supra_threshold_voxels = 0;
};

/// Deterministic phantom. Anatomy and lesions depend on (patient_seed, label);
/// acquisition metadata, pose jitter and noise additionally on image_index, so
/// repeated scans of one patient share their lesions.
PhantomSample generate_phantom(const PhantomConfig& config, std::uint64_t patient_seed,
                               ClassLabel label, std::size_t image_index = 0);

}  // namespace neurovol
