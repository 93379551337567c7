#include <gtest/gtest.h>

#include <set>

#include "manifest_support.hpp"
#include "neurovol/dataset.hpp"
#include "neurovol/error.hpp"
#include "neurovol/phantom.hpp"

using namespace neurovol;

namespace {

PhantomConfig desk_phantom() {
  PhantomConfig c;
  c.shape = {20, 24, 20};
  return c;
}

}  // namespace

TEST(Phantom, Deterministic) {
  const auto c = desk_phantom();
  for (auto label : kAllClasses) {
    const auto a = generate_phantom(c, 17, label, 1);
    const auto b = generate_phantom(c, 17, label, 1);
    EXPECT_EQ(a.volume, b.volume);
    EXPECT_EQ(a.metadata, b.metadata);
  }
}

TEST(Phantom, ShapeAndRange) {
  const auto c = desk_phantom();
  const auto s = generate_phantom(c, 3, ClassLabel::ms);
  EXPECT_EQ(s.volume.extents(), c.shape);
  for (float v : s.volume.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Phantom, HealthyHasNoSupraThresholdVoxels) {
  const auto c = desk_phantom();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_phantom(c, seed, ClassLabel::healthy);
    std::size_t count = 0;
    for (float v : s.volume.data()) count += v > c.lesion_threshold;
    EXPECT_EQ(count, 0u) << "seed " << seed;
    EXPECT_EQ(s.supra_threshold_voxels, count);
  }
}

TEST(Phantom, LesionsExceedThreshold) {
  const auto c = desk_phantom();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    EXPECT_GT(generate_phantom(c, seed, ClassLabel::ms).supra_threshold_voxels, 0u);
  }
}

TEST(Phantom, Leuk3HasMoreLesionVoxelsThanLeuk1) {
  const auto c = desk_phantom();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto g1 = generate_phantom(c, seed, ClassLabel::leuk1);
    const auto g3 = generate_phantom(c, seed, ClassLabel::leuk3);
    EXPECT_GT(g3.supra_threshold_voxels, g1.supra_threshold_voxels) << "seed " << seed;
  }
}

TEST(Phantom, RepeatScansShareLesions) {
  const auto c = desk_phantom();
  const auto a = generate_phantom(c, 5, ClassLabel::ms, 0);
  const auto b = generate_phantom(c, 5, ClassLabel::ms, 1);
  EXPECT_EQ(a.lesion_count, b.lesion_count);
  EXPECT_NE(a.volume, b.volume);
}

TEST(Phantom, ValidateRejectsBadProportions) {
  auto c = desk_phantom();
  c.class_proportions = {0.5, 0.5, 0.5, 0.0, 0.0};
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Dataset, LargestRemainderCounts) {
  const auto counts = class_counts(100, PhantomConfig{}.class_proportions);
  EXPECT_EQ(counts, (std::array<std::size_t, kNumClasses>{60, 20, 12, 1, 7}));
}

TEST(Dataset, CountsSumToTotal) {
  for (std::size_t n : {5u, 17u, 300u, 3096u}) {
    const auto counts = class_counts(n, PhantomConfig{}.class_proportions);
    std::size_t total = 0;
    for (auto c : counts) total += c;
    EXPECT_EQ(total, n);
  }
}

TEST(Dataset, SameSeedSameManifest) {
  PhantomConfig c = desk_phantom();
  c.shape = {8, 8, 8};
  ImagesPerPatientRule rule;
  const auto a = generate_dataset(c, 40, rule, 9, [](const ImageRecord&, const Volume&) {});
  const auto b = generate_dataset(c, 40, rule, 9, [](const ImageRecord&, const Volume&) {});
  EXPECT_EQ(a, b);
}

TEST(Dataset, MsTeOffsetMatchesProfile) {
  PhantomConfig c = desk_phantom();
  c.shape = {8, 8, 8};
  const auto m = generate_dataset(c, 600, ImagesPerPatientRule{}, 4, [](const ImageRecord&, const Volume&) {});
  double sum[2] = {0, 0};
  std::size_t n[2] = {0, 0};
  for (const auto& r : m.records) {
    if (r.class_label == ClassLabel::healthy || r.class_label == ClassLabel::ms) {
      const int k = r.class_label == ClassLabel::ms;
      sum[k] += r.metadata.te_ms;
      ++n[k];
    }
  }
  const auto& prof = c.metadata;
  const double expected = prof[class_index(ClassLabel::ms)].te_ms.mean - prof[0].te_ms.mean;
  const double observed = sum[1] / static_cast<double>(n[1]) - sum[0] / static_cast<double>(n[0]);
  const double sd = prof[0].te_ms.sd;
  const double se = sd * std::sqrt(1.0 / static_cast<double>(n[0]) + 1.0 / static_cast<double>(n[1]));
  EXPECT_NEAR(observed, expected, 4 * se);
}

TEST(Split, TenPatients) {
  DatasetManifest m;
  for (std::size_t p = 0; p < 10; ++p) {
    ImageRecord r;
    r.patient_id = patient_id(p);
    r.image_id = image_id(r.patient_id, 0);
    m.records.push_back(r);
  }
  const auto s = split_by_patient(m, 0.9, 3).manifest;
  std::size_t train = 0;
  for (const auto& r : s.records) train += r.split == Split::train;
  EXPECT_EQ(train, 9u);
}

TEST(Split, PatientImagesShareSplit) {
  DatasetManifest m;
  for (std::size_t p = 0; p < 6; ++p) {
    const auto pid = patient_id(p);
    for (std::size_t i = 0; i < 5; ++i) {
      ImageRecord r;
      r.patient_id = pid;
      r.image_id = image_id(pid, i);
      r.class_label = ClassLabel::ms;
      m.records.push_back(r);
    }
  }
  const auto s = split_by_patient(m, 0.5, 11).manifest;
  EXPECT_FALSE(neurovol::testing::audit_split(s, 0.5).patient_spans_splits);
  EXPECT_NO_THROW(validate_manifest(s));
}

TEST(Split, SameSeedSameAssignment) {
  const auto m = neurovol::testing::random_manifest(5);
  EXPECT_EQ(split_by_patient(m, 0.9, 1).manifest, split_by_patient(m, 0.9, 1).manifest);
}

TEST(Split, HundredRandomManifests) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = split_by_patient(neurovol::testing::random_manifest(seed), 0.9, seed * 7 + 1).manifest;
    const auto a = neurovol::testing::audit_split(s, 0.9);
    EXPECT_FALSE(a.patient_spans_splits) << "seed " << seed;
    EXPECT_FALSE(a.unassigned) << "seed " << seed;
    EXPECT_LE(a.worst_class_deviation, 1.0) << "seed " << seed;
  }
}

TEST(Split, SinglePatientClassWarns) {
  DatasetManifest m;
  ImageRecord r;
  r.patient_id = patient_id(0);
  r.image_id = image_id(r.patient_id, 0);
  r.class_label = ClassLabel::leuk2;
  m.records.push_back(r);
  const auto s = split_by_patient(m, 0.9, 1);
  EXPECT_EQ(s.manifest.records[0].split, Split::train);
  EXPECT_FALSE(s.warnings.empty());
}

TEST(Manifest, ValidateRejectsLeakage) {
  DatasetManifest m;
  for (std::size_t i = 0; i < 2; ++i) {
    ImageRecord r;
    r.patient_id = "P1";
    r.image_id = image_id("P1", i);
    r.split = i == 0 ? Split::train : Split::test;
    m.records.push_back(r);
  }
  EXPECT_THROW(validate_manifest(m), ValidationError);
}
