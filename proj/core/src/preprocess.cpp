#include "neurovol/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurovol/error.hpp"
#include "neurovol/kernels.hpp"

namespace neurovol {

namespace {

template <typename T>
double percentile_impl(std::span<const T> values, double q) {
  if (values.empty()) throw ValidationError("percentile of an empty list");
  if (!(q >= 0.0 && q <= 100.0)) throw ValidationError("percentile q must be in [0, 100]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double rank = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

double percentile(std::span<const float> values, double q) { return percentile_impl(values, q); }
double percentile(std::span<const double> values, double q) { return percentile_impl(values, q); }

void to_json(nlohmann::json& j, const PreprocessParams& p) {
  j = {{"percentile_q", p.percentile_q},
       {"trim_target", {p.trim_target.nx, p.trim_target.ny, p.trim_target.nz}},
       {"block", p.block}};
}

void from_json(const nlohmann::json& j, PreprocessParams& p) {
  if (j.contains("percentile_q")) j.at("percentile_q").get_to(p.percentile_q);
  if (j.contains("trim_target")) {
    const auto t = j.at("trim_target").get<std::array<std::size_t, 3>>();
    p.trim_target = {t[0], t[1], t[2]};
  }
  if (j.contains("block")) j.at("block").get_to(p.block);
}

void to_json(nlohmann::json& j, const PreprocessReport& r) {
  auto stats = [](const VolumeStats& s) {
    return nlohmann::json{{"min", s.min}, {"max", s.max}, {"mean", s.mean}};
  };
  j = {{"clamp_threshold", r.clamp_threshold},
       {"before", stats(r.before)},
       {"after", stats(r.after)},
       {"params", r.params}};
}

VolumeStats volume_stats(const Volume& v) {
  VolumeStats s;
  const auto d = v.data();
  if (d.empty()) return s;
  s.min = s.max = d[0];
  double acc = 0;
  for (float x : d) {
    s.min = std::min<double>(s.min, x);
    s.max = std::max<double>(s.max, x);
    acc += x;
  }
  s.mean = acc / static_cast<double>(d.size());
  return s;
}

Volume bound_and_normalize(const Volume& volume, double q, PreprocessReport* report) {
  for (float x : volume.data()) {
    if (!std::isfinite(x)) throw ValidationError("bound_and_normalize: volume has non-finite voxels");
  }
  const double threshold = percentile(volume.data(), q);
  std::vector<double> clamped(volume.size());
  double lo = 0, hi = 0;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    clamped[i] = std::min<double>(volume.data()[i], threshold);
    if (i == 0 || clamped[i] < lo) lo = clamped[i];
    if (i == 0 || clamped[i] > hi) hi = clamped[i];
  }
  Volume out(volume.extents());
  if (hi > 1e-12) {
    for (std::size_t i = 0; i < volume.size(); ++i) {
      out.data()[i] = static_cast<float>((clamped[i] - lo) / hi);
    }
  }
  if (report) {
    report->clamp_threshold = threshold;
    report->before = volume_stats(volume);
    report->after = volume_stats(out);
    report->params.percentile_q = q;
  }
  return out;
}

Volume trim_center(const Volume& volume, Extents target) {
  const Extents src = volume.extents();
  const std::size_t s[3] = {src.nx, src.ny, src.nz};
  const std::size_t t[3] = {target.nx, target.ny, target.nz};
  const char* axis[3] = {"x", "y", "z"};
  std::size_t start[3];
  for (int a = 0; a < 3; ++a) {
    if (t[a] == 0 || t[a] > s[a]) {
      throw ValidationError("trim target " + to_string(target) + " exceeds source " +
                            to_string(src) + " on axis " + axis[a]);
    }
    start[a] = (s[a] - t[a]) / 2;
  }
  Volume out(target);
  for (std::size_t z = 0; z < target.nz; ++z) {
    for (std::size_t y = 0; y < target.ny; ++y) {
      for (std::size_t x = 0; x < target.nx; ++x) {
        out.at(x, y, z) = volume.at(x + start[0], y + start[1], z + start[2]);
      }
    }
  }
  return out;
}

Volume downsample_avg(const Volume& volume, std::size_t block) {
  const Extents e = volume.extents();
  Tensor<float> t(Shape{e.nz, e.ny, e.nx},
                  std::vector<float>(volume.data().begin(), volume.data().end()));
  Tensor<float> pooled = kernels::avg_pool3d(t, block);
  const Extents out{pooled.extent(2), pooled.extent(1), pooled.extent(0)};
  return Volume(out, pooled.storage());
}

Volume preprocess_volume(const Volume& raw, const PreprocessParams& params, PreprocessReport* report) {
  Volume v = downsample_avg(trim_center(raw, params.trim_target), params.block);
  Volume out = bound_and_normalize(v, params.percentile_q, report);
  if (report) {
    report->before = volume_stats(raw);
    report->params = params;
  }
  return out;
}

void MeanVolumeAccumulator::add(const Volume& v) {
  if (count_ == 0) {
    extents_ = v.extents();
    sum_.assign(v.size(), 0.0);
  } else if (v.extents() != extents_) {
    throw ValidationError("mean_volume: shape mismatch " + to_string(v.extents()) + " vs " +
                          to_string(extents_));
  }
  for (std::size_t i = 0; i < v.size(); ++i) sum_[i] += v.data()[i];
  ++count_;
}

Volume MeanVolumeAccumulator::result() const {
  if (count_ == 0) throw ValidationError("mean_volume needs at least one volume");
  Volume out(extents_);
  const double n = static_cast<double>(count_);
  for (std::size_t i = 0; i < sum_.size(); ++i) out.data()[i] = static_cast<float>(sum_[i] / n);
  return out;
}

Volume mean_volume(const std::function<std::optional<Volume>()>& next) {
  MeanVolumeAccumulator acc;
  while (auto v = next()) acc.add(*v);
  return acc.result();
}

Volume mean_volume(std::span<const Volume> volumes) {
  MeanVolumeAccumulator acc;
  for (const auto& v : volumes) acc.add(v);
  return acc.result();
}

double sharpness_score(const Volume& v) {
  const Extents e = v.extents();
  if (e.nx < 2 || e.ny < 2 || e.nz < 2) {
    throw ValidationError("sharpness_score needs at least 2 voxels per axis");
  }
  double acc = 0;
  for (std::size_t z = 0; z + 1 < e.nz; ++z) {
    for (std::size_t y = 0; y + 1 < e.ny; ++y) {
      for (std::size_t x = 0; x + 1 < e.nx; ++x) {
        const double c = v.at(x, y, z);
        const double dx = v.at(x + 1, y, z) - c;
        const double dy = v.at(x, y + 1, z) - c;
        const double dz = v.at(x, y, z + 1) - c;
        acc += std::sqrt(dx * dx + dy * dy + dz * dz);
      }
    }
  }
  return acc / static_cast<double>((e.nx - 1) * (e.ny - 1) * (e.nz - 1));
}

std::array<double, 3> sharpness_per_axis(const Volume& v) {
  const Extents e = v.extents();
  std::array<double, 3> acc{};
  std::array<std::size_t, 3> count{};
  for (std::size_t z = 0; z < e.nz; ++z) {
    for (std::size_t y = 0; y < e.ny; ++y) {
      for (std::size_t x = 0; x < e.nx; ++x) {
        const double c = v.at(x, y, z);
        if (x + 1 < e.nx) {
          acc[0] += std::abs(v.at(x + 1, y, z) - c);
          ++count[0];
        }
        if (y + 1 < e.ny) {
          acc[1] += std::abs(v.at(x, y + 1, z) - c);
          ++count[1];
        }
        if (z + 1 < e.nz) {
          acc[2] += std::abs(v.at(x, y, z + 1) - c);
          ++count[2];
        }
      }
    }
  }
  for (int a = 0; a < 3; ++a) acc[a] = count[a] ? acc[a] / static_cast<double>(count[a]) : 0.0;
  return acc;
}

}  // namespace neurovol
