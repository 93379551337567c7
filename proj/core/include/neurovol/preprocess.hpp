#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>

#include <nlohmann/json_fwd.hpp>

#include "neurovol/volume.hpp"

namespace neurovol {

/// Linear interpolation between order statistics at rank q/100 * (n-1).
double percentile(std::span<const float> values, double q);
double percentile(std::span<const double> values, double q);

struct PreprocessParams {
  double percentile_q = 99.5;
  Extents trim_target{160, 192, 160};
  std::size_t block = 4;

  friend bool operator==(const PreprocessParams&, const PreprocessParams&) = default;
};

void to_json(nlohmann::json& j, const PreprocessParams& p);
void from_json(const nlohmann::json& j, PreprocessParams& p);

struct VolumeStats {
  double min = 0, max = 0, mean = 0;
};

struct PreprocessReport {
  double clamp_threshold = 0;
  VolumeStats before;
  VolumeStats after;
  PreprocessParams params;
};

void to_json(nlohmann::json& j, const PreprocessReport& r);

VolumeStats volume_stats(const Volume& v);

/// Clamps voxels above the q-percentile, then maps x -> (x - min) / max with
/// min/max taken on the clamped volume. A clamped max <= 1e-12 yields zeros.
Volume bound_and_normalize(const Volume& volume, double q, PreprocessReport* report = nullptr);

/// Centered crop; on odd margins the extra voxel is dropped on the high side.
Volume trim_center(const Volume& volume, Extents target);

/// Block-average downsampling (avg_pool3d on the volume grid).
Volume downsample_avg(const Volume& volume, std::size_t block = 4);

/// trim -> downsample -> bound_and_normalize.
Volume preprocess_volume(const Volume& raw, const PreprocessParams& params,
                         PreprocessReport* report = nullptr);

/// Streaming voxelwise mean; memory is independent of the number of volumes.
class MeanVolumeAccumulator {
 public:
  void add(const Volume& v);
  std::size_t count() const noexcept { return count_; }
  Volume result() const;

 private:
  Extents extents_;
  std::vector<double> sum_;
  std::size_t count_ = 0;
};

/// Mean of the volumes produced by `next` until it returns nullopt.
Volume mean_volume(const std::function<std::optional<Volume>()>& next);
Volume mean_volume(std::span<const Volume> volumes);

/// Mean forward-difference gradient magnitude sqrt(dx^2 + dy^2 + dz^2) over
/// voxels where all three forward neighbours exist.
double sharpness_score(const Volume& v);

/// Mean |forward difference| along x, y, z separately.
std::array<double, 3> sharpness_per_axis(const Volume& v);

}  // namespace neurovol
