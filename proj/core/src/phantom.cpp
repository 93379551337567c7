#include "neurovol/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurovol/digest.hpp"
#include "neurovol/error.hpp"
#include "neurovol/rng.hpp"

namespace neurovol {

namespace {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
Vec3 hadamard(Vec3 a, Vec3 b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }
Vec3 divide(Vec3 a, Vec3 b) { return {a.x / b.x, a.y / b.y, a.z / b.z}; }
double norm(Vec3 a) { return std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z); }

// Fixed anatomy template in normalised coordinates.
constexpr Vec3 kBrainRadii{0.85, 0.88, 0.82};
constexpr double kRimStart = 0.80;  // normalised ellipsoidal radius where the gray rim begins
constexpr Vec3 kLobeCenter[2] = {{-0.13, 0.0, 0.05}, {0.13, 0.0, 0.05}};
constexpr Vec3 kLobeRadii{0.09, 0.30, 0.14};
constexpr double kVentricleScaleMin = 0.9;
constexpr double kVentricleScaleMax = 1.1;

// Smallest white-matter shell thickness between the largest ventricle and the gray rim.
double white_matter_gap() {
  const Vec3 reach{std::abs(kLobeCenter[1].x) + kLobeRadii.x * kVentricleScaleMax,
                   std::abs(kLobeCenter[1].y) + kLobeRadii.y * kVentricleScaleMax,
                   std::abs(kLobeCenter[1].z) + kLobeRadii.z * kVentricleScaleMax};
  const Vec3 inner = kBrainRadii * kRimStart;
  return std::min({inner.x - reach.x, inner.y - reach.y, inner.z - reach.z});
}

struct Sphere {
  Vec3 center;
  double radius;
  double intensity;
};

// Stream indices for forked generators; documented so outputs are reproducible.
enum StreamId : std::uint64_t {
  kAnatomyStream = 1,
  kLesionStream = 2,
  kAcquisitionBase = 1000,
};

}  // namespace

std::string_view to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::healthy: return "healthy";
    case ClassLabel::ms: return "ms";
    case ClassLabel::leuk1: return "leuk1";
    case ClassLabel::leuk2: return "leuk2";
    case ClassLabel::leuk3: return "leuk3";
  }
  return "unknown";
}

ClassLabel parse_class_label(std::string_view name) {
  for (auto c : kAllClasses) {
    if (to_string(c) == name) return c;
  }
  throw ValidationError("unknown class label '" + std::string(name) + "'");
}

std::array<MetadataProfile, kNumClasses> PhantomConfig::default_metadata() {
  // Ages follow the cohort table; MS scans use a distinct protocol (TR/TE/bandwidth).
  const NormalSpec tr_other{9000, 300}, te_other{90, 8}, bw_other{220, 20};
  const NormalSpec tr_ms{6500, 300}, te_ms{120, 8}, bw_ms{290, 20};
  return {{
      {tr_other, te_other, bw_other, {39, 24}},
      {tr_ms, te_ms, bw_ms, {46, 14}},
      {tr_other, te_other, bw_other, {73, 10}},
      {tr_other, te_other, bw_other, {76, 9}},
      {tr_other, te_other, bw_other, {81, 8}},
  }};
}

void PhantomConfig::validate() const {
  if (shape.voxels() == 0) throw ValidationError("phantom shape must be positive on every axis");
  double total = 0;
  for (double p : class_proportions) {
    if (!(p >= 0)) throw ValidationError("class proportions must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ValidationError("class proportions must sum to 1, got " + std::to_string(total));
  }
  const auto& l = lesions;
  if (l.ms_count_min > l.ms_count_max) throw ValidationError("ms_count_min > ms_count_max");
  if (!(l.ms_radius_min > 0 && l.ms_radius_min <= l.ms_radius_max)) {
    throw ValidationError("ms lesion radius range is invalid");
  }
  const double gap = white_matter_gap();
  if (2.0 * l.ms_radius_max > gap) {
    throw ValidationError("ms lesion radius " + std::to_string(l.ms_radius_max) +
                          " does not fit the white-matter shell (max " + std::to_string(gap / 2) +
                          ")");
  }
  if (!(l.leuk_extent_spread >= 0 && l.leuk_extent_spread < 1)) {
    throw ValidationError("leuk_extent_spread must be in [0, 1)");
  }
  for (std::size_t g = 0; g < 3; ++g) {
    if (!(l.leuk_extent[g] > 0)) throw ValidationError("leuk extents must be positive");
    if (l.leuk_extent[g] * (1 + l.leuk_extent_spread) > gap) {
      throw ValidationError("leuk grade " + std::to_string(g + 1) + " extent " +
                            std::to_string(l.leuk_extent[g]) +
                            " does not fit the white-matter shell (max " + std::to_string(gap) + ")");
    }
    if (g > 0 && !(l.leuk_extent[g] > l.leuk_extent[g - 1] && l.leuk_peak[g] > l.leuk_peak[g - 1])) {
      throw ValidationError("leuk extent and peak must increase strictly with grade");
    }
  }
  auto unit = [](double v) { return v >= 0 && v <= 1; };
  if (!unit(l.ms_intensity_min) || !unit(l.ms_intensity_max) || l.ms_intensity_min > l.ms_intensity_max) {
    throw ValidationError("ms lesion intensity range must lie in [0, 1]");
  }
  for (double p : l.leuk_peak) {
    if (!unit(p)) throw ValidationError("leuk peak intensity must lie in [0, 1]");
  }
  if (!unit(gray_matter) || !unit(white_matter) || !unit(csf)) {
    throw ValidationError("tissue intensities must lie in [0, 1]");
  }
  if (!(noise_sigma >= 0) || !(jitter >= 0)) throw ValidationError("noise and jitter must be >= 0");
  if (!(contrast_reference_te_ms > 0)) throw ValidationError("contrast reference TE must be > 0");
}

PhantomSample generate_phantom(const PhantomConfig& config, std::uint64_t patient_seed,
                               ClassLabel label, std::size_t image_index) {
  config.validate();
  PhantomSample out;

  const RngStream root(patient_seed);
  RngStream anatomy = root.fork(kAnatomyStream);
  RngStream lesion_rng = root.fork(kLesionStream);
  RngStream acq = root.fork(kAcquisitionBase + image_index);
  RngStream noise = acq.fork(0);

  // Acquisition metadata for this scan.
  const MetadataProfile& prof = config.metadata[class_index(label)];
  auto& md = out.metadata;
  md.tr_ms = std::max(1.0, acq.normal(prof.tr_ms.mean, prof.tr_ms.sd));
  md.te_ms = std::max(1.0, acq.normal(prof.te_ms.mean, prof.te_ms.sd));
  md.pixel_bandwidth_hz = std::max(1.0, acq.normal(prof.pixel_bandwidth_hz.mean, prof.pixel_bandwidth_hz.sd));
  md.age_years = std::clamp(acq.normal(prof.age_years.mean, prof.age_years.sd), 1.0, 100.0);

  // Pose jitter of this scan: inverse map p = R(-theta) (u - t) / s.
  auto jit = [&](double scale) { return scale * std::clamp(acq.normal(), -3.0, 3.0); };
  const double pose_scale = 1.0 + jit(config.jitter);
  const double theta = jit(config.jitter);
  const Vec3 shift{jit(config.jitter), jit(config.jitter), jit(config.jitter)};
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);

  // Patient anatomy.
  const double vent_scale = anatomy.uniform(kVentricleScaleMin, kVentricleScaleMax);
  const Vec3 lobe_r = kLobeRadii * vent_scale;

  // Lesions.
  std::vector<Sphere> ms_lesions;
  double halo_extent = 0, halo_peak = 0;
  const auto& lp = config.lesions;
  if (label == ClassLabel::ms) {
    const std::size_t count =
        lp.ms_count_min + lesion_rng.below(lp.ms_count_max - lp.ms_count_min + 1);
    for (std::size_t i = 0; i < count; ++i) {
      const Vec3 c = kLobeCenter[lesion_rng.below(2)];
      Vec3 d{lesion_rng.normal(), lesion_rng.normal(), lesion_rng.normal()};
      d = d * (1.0 / std::max(norm(d), 1e-12));
      const double radius = lesion_rng.uniform(lp.ms_radius_min, lp.ms_radius_max);
      const double intensity = lesion_rng.uniform(lp.ms_intensity_min, lp.ms_intensity_max);
      const Vec3 surface = c + hadamard(lobe_r, d);
      Vec3 normal = divide(d, lobe_r);
      normal = normal * (1.0 / norm(normal));
      ms_lesions.push_back({surface + normal * radius, radius, intensity});
    }
    out.lesion_count = count;
  } else if (is_leuk(label)) {
    const std::size_t grade = class_index(label) - class_index(ClassLabel::leuk1);
    const double spread = lesion_rng.uniform(1.0 - lp.leuk_extent_spread, 1.0 + lp.leuk_extent_spread);
    halo_extent = lp.leuk_extent[grade] * spread;
    halo_peak = lp.leuk_peak[grade];
  }

  const double contrast =
      1.0 + config.contrast_coupling * (md.te_ms - config.contrast_reference_te_ms) /
                config.contrast_reference_te_ms;
  const double gm = std::clamp(config.gray_matter * contrast, 0.0, 1.0);
  const double wm = std::clamp(config.white_matter * contrast, 0.0, 1.0);
  const double csf = std::clamp(config.csf * contrast, 0.0, 1.0);

  const Extents e = config.shape;
  Volume vol(e);
  for (std::size_t z = 0; z < e.nz; ++z) {
    for (std::size_t y = 0; y < e.ny; ++y) {
      for (std::size_t x = 0; x < e.nx; ++x) {
        const Vec3 u{2.0 * (x + 0.5) / e.nx - 1.0, 2.0 * (y + 0.5) / e.ny - 1.0,
                     2.0 * (z + 0.5) / e.nz - 1.0};
        const Vec3 q = u - shift;
        const Vec3 p = Vec3{cos_t * q.x + sin_t * q.y, -sin_t * q.x + cos_t * q.y, q.z} *
                       (1.0 / pose_scale);
        const double rho = norm(divide(p, kBrainRadii));
        double v = 0.0;
        if (rho <= 1.0) {
          v = rho > kRimStart ? gm : wm;
          bool in_ventricle = false;
          double to_ventricle = 1e9;
          for (const auto& c : kLobeCenter) {
            const Vec3 rel = p - c;
            const double qn = norm(divide(rel, lobe_r));
            if (qn <= 1.0) {
              in_ventricle = true;
            } else {
              to_ventricle = std::min(to_ventricle, norm(rel) * (1.0 - 1.0 / qn));
            }
          }
          if (in_ventricle) {
            v = csf;
          } else if (rho <= kRimStart) {
            for (const auto& s : ms_lesions) {
              if (norm(p - s.center) <= s.radius) v = std::max(v, s.intensity);
            }
            if (halo_extent > 0 && to_ventricle < halo_extent) {
              v = std::max(v, wm + (halo_peak - wm) * (1.0 - to_ventricle / halo_extent));
            }
          }
        }
        vol.at(x, y, z) = static_cast<float>(v);
      }
    }
  }

  for (auto& voxel : vol.data()) {
    const double noisy = voxel + config.noise_sigma * noise.normal();
    voxel = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    if (voxel > config.lesion_threshold) ++out.supra_threshold_voxels;
  }
  out.volume = std::move(vol);
  return out;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const NormalSpec& n) { j = {{"mean", n.mean}, {"sd", n.sd}}; }
void from_json(const nlohmann::json& j, NormalSpec& n) {
  j.at("mean").get_to(n.mean);
  j.at("sd").get_to(n.sd);
}

void to_json(nlohmann::json& j, const MetadataProfile& m) {
  j = {{"tr_ms", m.tr_ms},
       {"te_ms", m.te_ms},
       {"pixel_bandwidth_hz", m.pixel_bandwidth_hz},
       {"age_years", m.age_years}};
}
void from_json(const nlohmann::json& j, MetadataProfile& m) {
  j.at("tr_ms").get_to(m.tr_ms);
  j.at("te_ms").get_to(m.te_ms);
  j.at("pixel_bandwidth_hz").get_to(m.pixel_bandwidth_hz);
  j.at("age_years").get_to(m.age_years);
}

void to_json(nlohmann::json& j, const LesionParams& l) {
  j = {{"ms_count_min", l.ms_count_min},
       {"ms_count_max", l.ms_count_max},
       {"ms_radius_min", l.ms_radius_min},
       {"ms_radius_max", l.ms_radius_max},
       {"ms_intensity_min", l.ms_intensity_min},
       {"ms_intensity_max", l.ms_intensity_max},
       {"leuk_extent", l.leuk_extent},
       {"leuk_peak", l.leuk_peak},
       {"leuk_extent_spread", l.leuk_extent_spread}};
}

namespace {

template <typename V>
void get_optional(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void from_json(const nlohmann::json& j, LesionParams& l) {
  get_optional(j, "ms_count_min", l.ms_count_min);
  get_optional(j, "ms_count_max", l.ms_count_max);
  get_optional(j, "ms_radius_min", l.ms_radius_min);
  get_optional(j, "ms_radius_max", l.ms_radius_max);
  get_optional(j, "ms_intensity_min", l.ms_intensity_min);
  get_optional(j, "ms_intensity_max", l.ms_intensity_max);
  get_optional(j, "leuk_extent", l.leuk_extent);
  get_optional(j, "leuk_peak", l.leuk_peak);
  get_optional(j, "leuk_extent_spread", l.leuk_extent_spread);
}

void to_json(nlohmann::json& j, const PhantomConfig& c) {
  nlohmann::json meta = nlohmann::json::object();
  for (auto label : kAllClasses) meta[std::string(to_string(label))] = c.metadata[class_index(label)];
  nlohmann::json props = nlohmann::json::object();
  for (auto label : kAllClasses) props[std::string(to_string(label))] = c.class_proportions[class_index(label)];
  j = {{"shape", {c.shape.nx, c.shape.ny, c.shape.nz}},
       {"class_proportions", props},
       {"lesions", c.lesions},
       {"lesion_threshold", c.lesion_threshold},
       {"jitter", c.jitter},
       {"noise_sigma", c.noise_sigma},
       {"gray_matter", c.gray_matter},
       {"white_matter", c.white_matter},
       {"csf", c.csf},
       {"metadata", meta},
       {"contrast_coupling", c.contrast_coupling},
       {"contrast_reference_te_ms", c.contrast_reference_te_ms}};
}

void from_json(const nlohmann::json& j, PhantomConfig& c) {
  if (j.contains("shape")) {
    const auto s = j.at("shape").get<std::array<std::size_t, 3>>();
    c.shape = {s[0], s[1], s[2]};
  }
  if (j.contains("class_proportions")) {
    for (auto label : kAllClasses) {
      j.at("class_proportions").at(std::string(to_string(label))).get_to(c.class_proportions[class_index(label)]);
    }
  }
  get_optional(j, "lesions", c.lesions);
  get_optional(j, "lesion_threshold", c.lesion_threshold);
  get_optional(j, "jitter", c.jitter);
  get_optional(j, "noise_sigma", c.noise_sigma);
  get_optional(j, "gray_matter", c.gray_matter);
  get_optional(j, "white_matter", c.white_matter);
  get_optional(j, "csf", c.csf);
  if (j.contains("metadata")) {
    for (auto label : kAllClasses) {
      const std::string key(to_string(label));
      if (j.at("metadata").contains(key)) j.at("metadata").at(key).get_to(c.metadata[class_index(label)]);
    }
  }
  get_optional(j, "contrast_coupling", c.contrast_coupling);
  get_optional(j, "contrast_reference_te_ms", c.contrast_reference_te_ms);
}

std::string phantom_config_hash(const PhantomConfig& config) {
  nlohmann::json j = config;
  return sha256_hex(j.dump());
}

}  // namespace neurovol
