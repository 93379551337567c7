#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "neurovol/tensor.hpp"

namespace neurovol {

/// Grid extents in voxel units; x is the fastest-varying axis in memory.
struct Extents {
  std::size_t nx = 0, ny = 0, nz = 0;

  std::size_t voxels() const noexcept { return nx * ny * nz; }
  friend bool operator==(const Extents&, const Extents&) = default;
};

std::string to_string(const Extents& e);

/// Dense scalar volume. Voxel (x,y,z) lives at (z*ny + y)*nx + x, which is
/// exactly the row-major layout of a [nz, ny, nx] tensor.
class Volume {
 public:
  Volume() = default;
  explicit Volume(Extents extents, float fill = 0.0f);
  Volume(Extents extents, std::vector<float> data);

  const Extents& extents() const noexcept { return extents_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return (z * extents_.ny + y) * extents_.nx + x;
  }
  float& at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  float at(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Extents extents_;
  std::vector<float> data_;
};

/// Packs volumes of identical extents into a [N, 1, nz, ny, nx] tensor.
template <typename T>
Tensor<T> to_batch_tensor(std::span<const Volume> volumes);

/// Extracts sample `index` (channel 0) of a [N, 1, nz, ny, nx] tensor.
template <typename T>
Volume volume_from_batch(const Tensor<T>& batch, std::size_t index);

}  // namespace neurovol
