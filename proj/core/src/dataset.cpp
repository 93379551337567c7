#include "neurovol/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "neurovol/error.hpp"
#include "neurovol/rng.hpp"

namespace neurovol {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "unassigned";
}

Split parse_split(std::string_view name) {
  for (auto s : {Split::train, Split::test, Split::unassigned}) {
    if (to_string(s) == name) return s;
  }
  throw ValidationError("unknown split '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const ImageRecord& r) {
  j = {{"image_id", r.image_id},
       {"patient_id", r.patient_id},
       {"class_label", to_string(r.class_label)},
       {"split", to_string(r.split)},
       {"metadata",
        {{"tr_ms", r.metadata.tr_ms},
         {"te_ms", r.metadata.te_ms},
         {"pixel_bandwidth_hz", r.metadata.pixel_bandwidth_hz},
         {"age_years", r.metadata.age_years}}}};
}

void from_json(const nlohmann::json& j, ImageRecord& r) {
  j.at("image_id").get_to(r.image_id);
  j.at("patient_id").get_to(r.patient_id);
  r.class_label = parse_class_label(j.at("class_label").get<std::string>());
  r.split = parse_split(j.at("split").get<std::string>());
  const auto& m = j.at("metadata");
  m.at("tr_ms").get_to(r.metadata.tr_ms);
  m.at("te_ms").get_to(r.metadata.te_ms);
  m.at("pixel_bandwidth_hz").get_to(r.metadata.pixel_bandwidth_hz);
  m.at("age_years").get_to(r.metadata.age_years);
}

void validate_manifest(const DatasetManifest& manifest) {
  std::set<std::string> ids;
  std::map<std::string, const ImageRecord*> first;
  for (const auto& r : manifest.records) {
    if (!ids.insert(r.image_id).second) {
      throw ValidationError("duplicate image id '" + r.image_id + "'");
    }
    auto [it, inserted] = first.emplace(r.patient_id, &r);
    if (inserted) continue;
    if (it->second->class_label != r.class_label) {
      throw ValidationError("patient '" + r.patient_id + "' has images with different labels");
    }
    if (it->second->split != r.split) {
      throw ValidationError("patient '" + r.patient_id + "' spans splits " +
                            std::string(to_string(it->second->split)) + " and " +
                            std::string(to_string(r.split)));
    }
  }
}

std::array<std::size_t, kNumClasses> class_counts(std::size_t n_patients,
                                                  const std::array<double, kNumClasses>& proportions) {
  std::array<std::size_t, kNumClasses> counts{};
  std::array<double, kNumClasses> remainder{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double quota = proportions[c] * static_cast<double>(n_patients);
    counts[c] = static_cast<std::size_t>(std::floor(quota));
    remainder[c] = quota - static_cast<double>(counts[c]);
    assigned += counts[c];
  }
  std::array<std::size_t, kNumClasses> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n_patients; ++i, ++assigned) ++counts[order[i % kNumClasses]];
  return counts;
}

std::uint64_t patient_seed(std::uint64_t master_seed, std::size_t patient_index) {
  return mix_seed(master_seed, patient_index);
}

std::string patient_id(std::size_t patient_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "P%05zu", patient_index);
  return buf;
}

std::string image_id(std::string_view patient, std::size_t image_index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_I%02zu", image_index);
  return std::string(patient) + buf;
}

DatasetManifest generate_dataset(const PhantomConfig& config, std::size_t n_patients,
                                 const ImagesPerPatientRule& rule, std::uint64_t master_seed,
                                 const VolumeSink& sink) {
  config.validate();
  if (n_patients < kNumClasses) {
    throw ValidationError("n_patients must be at least " + std::to_string(kNumClasses));
  }
  for (auto m : rule.max_images) {
    if (m < 1) throw ValidationError("images per patient must allow at least one image");
  }

  const auto counts = class_counts(n_patients, config.class_proportions);
  std::vector<ClassLabel> labels;
  labels.reserve(n_patients);
  for (auto c : kAllClasses) labels.insert(labels.end(), counts[class_index(c)], c);

  // Stream 0 orders patients, stream 1 draws image counts; patient seeds use the index.
  RngStream order_rng = RngStream(master_seed).fork(0);
  RngStream count_rng = RngStream(master_seed).fork(1);
  order_rng.shuffle(std::span<ClassLabel>(labels));

  DatasetManifest manifest;
  manifest.seed = master_seed;
  manifest.config_hash = phantom_config_hash(config);
  for (std::size_t p = 0; p < n_patients; ++p) {
    const ClassLabel label = labels[p];
    const std::string pid = patient_id(p);
    const std::size_t n_images = 1 + count_rng.below(rule.max_images[class_index(label)]);
    const std::uint64_t seed = patient_seed(master_seed, p);
    for (std::size_t i = 0; i < n_images; ++i) {
      PhantomSample sample = generate_phantom(config, seed, label, i);
      ImageRecord rec{image_id(pid, i), pid, label, Split::unassigned, sample.metadata};
      if (sink) sink(rec, sample.volume);
      manifest.records.push_back(std::move(rec));
    }
  }
  return manifest;
}

SplitResult split_by_patient(const DatasetManifest& manifest, double train_fraction,
                             std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train_fraction must be in (0, 1), got " + std::to_string(train_fraction));
  }
  std::array<std::vector<std::string>, kNumClasses> patients;
  std::set<std::string> seen;
  for (const auto& r : manifest.records) {
    if (seen.insert(r.patient_id).second) patients[class_index(r.class_label)].push_back(r.patient_id);
  }

  SplitResult result;
  std::map<std::string, Split> assignment;
  const RngStream root(seed);
  for (auto label : kAllClasses) {
    auto& list = patients[class_index(label)];
    if (list.empty()) continue;
    if (list.size() < 2) {
      result.warnings.push_back("class " + std::string(to_string(label)) + " has " +
                                std::to_string(list.size()) +
                                " patient(s); placed wholly in the training split");
      for (const auto& p : list) assignment[p] = Split::train;
      continue;
    }
    RngStream rng = root.fork(class_index(label));
    rng.shuffle(std::span<std::string>(list));
    const double quota = train_fraction * static_cast<double>(list.size());
    const auto n_train = static_cast<std::size_t>(std::floor(quota + 0.5));
    for (std::size_t i = 0; i < list.size(); ++i) {
      assignment[list[i]] = i < n_train ? Split::train : Split::test;
    }
  }

  result.manifest = manifest;
  for (auto& r : result.manifest.records) r.split = assignment.at(r.patient_id);
  return result;
}

}  // namespace neurovol
