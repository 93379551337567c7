#include "neurovol/volume.hpp"

#include "neurovol/error.hpp"

namespace neurovol {

std::string to_string(const Extents& e) {
  return std::to_string(e.nx) + "x" + std::to_string(e.ny) + "x" + std::to_string(e.nz);
}

Volume::Volume(Extents extents, float fill) : extents_(extents), data_(extents.voxels(), fill) {
  if (extents.voxels() == 0) throw ValidationError("volume extents must be positive");
}

Volume::Volume(Extents extents, std::vector<float> data)
    : extents_(extents), data_(std::move(data)) {
  if (extents.voxels() == 0) throw ValidationError("volume extents must be positive");
  if (data_.size() != extents.voxels()) {
    throw ValidationError("volume data length " + std::to_string(data_.size()) +
                          " does not match extents " + to_string(extents));
  }
}

template <typename T>
Tensor<T> to_batch_tensor(std::span<const Volume> volumes) {
  if (volumes.empty()) throw ValidationError("cannot batch zero volumes");
  const Extents e = volumes.front().extents();
  std::vector<T> data;
  data.reserve(volumes.size() * e.voxels());
  for (const auto& v : volumes) {
    if (v.extents() != e) {
      throw ValidationError("batch volumes differ in extents: " + to_string(e) + " vs " +
                            to_string(v.extents()));
    }
    data.insert(data.end(), v.data().begin(), v.data().end());
  }
  return Tensor<T>(Shape{volumes.size(), 1, e.nz, e.ny, e.nx}, std::move(data));
}

template <typename T>
Volume volume_from_batch(const Tensor<T>& batch, std::size_t index) {
  const Shape& s = batch.shape();
  if (s.size() != 5 || s[1] != 1) {
    throw ValidationError("expected a [N,1,D,H,W] tensor, got " + to_string(s));
  }
  if (index >= s[0]) throw ValidationError("batch index out of range");
  const Extents e{s[4], s[3], s[2]};
  const std::size_t n = e.voxels();
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(batch[index * n + i]);
  return Volume(e, std::move(data));
}

template Tensor<float> to_batch_tensor<float>(std::span<const Volume>);
template Tensor<double> to_batch_tensor<double>(std::span<const Volume>);
template Volume volume_from_batch<float>(const Tensor<float>&, std::size_t);
template Volume volume_from_batch<double>(const Tensor<double>&, std::size_t);

}  // namespace neurovol
