#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "model_support.hpp"
#include "neurovol/error.hpp"
#include "neurovol/io.hpp"
#include "test_support.hpp"

using namespace neurovol;
using neurovol::testing::TempDir;

namespace {

Volume random_volume(Extents e, std::uint64_t seed) {
  const auto t = neurovol::testing::random_tensor<float>({e.nz, e.ny, e.nx}, seed, 0.0, 1.0);
  return Volume(e, t.storage());
}

}  // namespace

TEST(VolumeFile, RoundTripIsByteIdentical) {
  TempDir dir("io");
  const auto v = random_volume({5, 6, 7}, 1);
  const auto path = dir.path() / "a.v3f";
  io::write_volume(path, v);
  const auto back = io::read_volume(path);
  EXPECT_EQ(back, v);
  io::write_volume(dir.path() / "b.v3f", back);
  EXPECT_EQ(io::read_file(path), io::read_file(dir.path() / "b.v3f"));
  EXPECT_EQ(io::read_file(path).size(), 16u + 4u * 5 * 6 * 7);
  EXPECT_EQ(io::read_file(path).substr(0, 4), "V3F1");
}

TEST(VolumeFile, RejectsCorruptData) {
  auto bytes = io::encode_volume(random_volume({2, 2, 2}, 2));
  EXPECT_THROW(io::decode_volume(bytes.substr(0, bytes.size() - 1)), IoError);
  bytes[0] = 'X';
  EXPECT_THROW(io::decode_volume(bytes), IoError);
  EXPECT_THROW(io::read_volume("/nonexistent/volume.v3f"), IoError);
}

TEST(Slices, PlanesAndPgmDimensions) {
  const auto v = random_volume({5, 6, 7}, 3);
  const auto ax = io::center_slice(v, io::Plane::axial);
  EXPECT_EQ(ax.width, 5u);
  EXPECT_EQ(ax.height, 6u);
  EXPECT_EQ(ax.pixels[2 * 5 + 1], v.at(1, 2, 3));
  const auto co = io::center_slice(v, io::Plane::coronal);
  EXPECT_EQ(co.width, 5u);
  EXPECT_EQ(co.height, 7u);
  const auto sa = io::center_slice(v, io::Plane::sagittal);
  EXPECT_EQ(sa.width, 6u);
  EXPECT_EQ(sa.height, 7u);
  const auto [h, px] = io::decode_pgm(io::encode_pgm(sa, "config_digest abc"));
  EXPECT_EQ(h.width, 6u);
  EXPECT_EQ(h.height, 7u);
  EXPECT_EQ(h.maxval, 255u);
  EXPECT_EQ(px.size(), 42u);
}

TEST(Pgm, QuantisationRoundsHalfUp) {
  io::Image img{4, 1, {0.0f, 1.0f, 0.5f, 2.0f}};
  const auto [h, px] = io::decode_pgm(io::encode_pgm(img));
  EXPECT_EQ(px, (std::vector<std::uint8_t>{0, 255, 128, 255}));
}

TEST(Pgm, CenterSliceFilesPerPlane) {
  TempDir dir("pgm");
  const auto files = io::write_center_slices(dir.path(), "x", random_volume({4, 4, 4}, 1), "config_digest 00");
  ASSERT_EQ(files.size(), 3u);
  for (const auto& f : files) {
    EXPECT_TRUE(std::filesystem::exists(f));
    EXPECT_NE(io::read_file(f).find("# config_digest 00"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripPreservesParameters) {
  TempDir dir("ckpt");
  Vae<float> model(neurovol::testing::toy_architecture(), 4);
  const auto path = dir.path() / "m.nvck";
  io::write_checkpoint(path, model, {{"epoch", 3}});
  const auto ck = io::read_checkpoint(path);
  EXPECT_EQ(ck.architecture, model.config());
  EXPECT_EQ(ck.parameters, model.parameters());
  EXPECT_EQ(ck.header["epoch"], 3);
  const auto loaded = io::load_model(path);
  EXPECT_EQ(io::encode_checkpoint(loaded, ck.header), io::read_file(path));
}

TEST(Checkpoint, ArchitectureMismatchNamesDigests) {
  TempDir dir("ckpt");
  Vae<float> model(neurovol::testing::toy_architecture(), 4);
  const auto path = dir.path() / "m.nvck";
  io::write_checkpoint(path, model, nlohmann::json::object());
  const auto other = neurovol::testing::toy_architecture(5);
  try {
    io::load_model(path, &other);
    FAIL() << "expected a mismatch";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(architecture_digest(other)), std::string::npos);
    EXPECT_NE(msg.find(architecture_digest(model.config())), std::string::npos);
  }
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  TempDir dir("ckpt");
  Vae<float> model(neurovol::testing::toy_architecture(), 4);
  const auto bytes = io::encode_checkpoint(model, nlohmann::json::object());
  io::write_file_atomic(dir.path() / "t.nvck", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(io::read_checkpoint(dir.path() / "t.nvck"), IoError);
}

TEST(Manifest, RoundTrip) {
  TempDir dir("manifest");
  PhantomConfig c;
  c.shape = {4, 4, 4};
  auto m = generate_dataset(c, 12, ImagesPerPatientRule{}, 5, [](const ImageRecord&, const Volume&) {});
  m = split_by_patient(m, 0.9, 2).manifest;
  io::write_manifest(dir.path() / "manifest.jsonl", m, "digest");
  const auto back = io::read_manifest(dir.path());
  EXPECT_EQ(back.records, m.records);
}
