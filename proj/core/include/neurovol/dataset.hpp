#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "neurovol/phantom.hpp"

namespace neurovol {

enum class Split { train, test, unassigned };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct ImageRecord {
  std::string image_id;
  std::string patient_id;
  ClassLabel class_label = ClassLabel::healthy;
  Split split = Split::unassigned;
  AcquisitionMetadata metadata;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

void to_json(nlohmann::json& j, const ImageRecord& r);
void from_json(const nlohmann::json& j, ImageRecord& r);

struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::uint64_t seed = 0;
  std::string config_hash;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Throws ValidationError on duplicate image ids, a patient with mixed labels or
/// splits, or a patient present in both train and test.
void validate_manifest(const DatasetManifest& manifest);

/// Images per patient are drawn uniformly from [1, max_images[class]].
struct ImagesPerPatientRule {
  std::array<std::size_t, kNumClasses> max_images{1, 4, 1, 1, 1};
  friend bool operator==(const ImagesPerPatientRule&, const ImagesPerPatientRule&) = default;
};

/// Largest-remainder apportionment of n_patients over the class proportions.
/// Ties in the remainder go to the earlier class.
std::array<std::size_t, kNumClasses> class_counts(std::size_t n_patients,
                                                  const std::array<double, kNumClasses>& proportions);

/// Per-patient seed: mix_seed(master_seed, patient_index).
std::uint64_t patient_seed(std::uint64_t master_seed, std::size_t patient_index);

std::string patient_id(std::size_t patient_index);
std::string image_id(std::string_view patient, std::size_t image_index);

using VolumeSink = std::function<void(const ImageRecord&, const Volume&)>;

/// Generates patients with class-conditioned phantoms, handing every volume to
/// `sink` in manifest order. Records come back with split = unassigned.
DatasetManifest generate_dataset(const PhantomConfig& config, std::size_t n_patients,
                                 const ImagesPerPatientRule& rule, std::uint64_t master_seed,
                                 const VolumeSink& sink);

struct SplitResult {
  DatasetManifest manifest;
  std::vector<std::string> warnings;
};

/// Stratified patient-level split. Within each class, patients (in order of
/// first appearance) are shuffled with a stream derived from `seed` and the
/// first ceil(train_fraction * P) are marked train. Classes with fewer than two
/// patients go wholly to train with a warning.
SplitResult split_by_patient(const DatasetManifest& manifest, double train_fraction,
                             std::uint64_t seed);

}  // namespace neurovol
