#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurovol/dataset.hpp"
#include "neurovol/model.hpp"
#include "neurovol/volume.hpp"

namespace neurovol::io {

namespace fs = std::filesystem;

/// Writes to `path`.tmp and renames over `path`.
void write_file_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

// Volume files: "V3F1", three little-endian u32 extents (x, y, z), then
// little-endian f32 voxels, x fastest. Size is exactly 16 + 4 * voxels.

std::string encode_volume(const Volume& v);
Volume decode_volume(std::string_view bytes, const fs::path& origin = {});
void write_volume(const fs::path& path, const Volume& v);
Volume read_volume(const fs::path& path);

enum class Plane { axial, coronal, sagittal };
std::string_view to_string(Plane p);
inline constexpr Plane kAllPlanes[] = {Plane::axial, Plane::coronal, Plane::sagittal};

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<float> pixels;  // row-major, `height` rows of `width`
};

/// axial: fixed z, rows y, cols x. coronal: fixed y, rows z, cols x.
/// sagittal: fixed x, rows z, cols y.
Image extract_slice(const Volume& v, Plane plane, std::size_t index);
/// Slice through the centre voxel (extent / 2) of the fixed axis.
Image center_slice(const Volume& v, Plane plane);

/// Binary PGM (P5, maxval 255); [0,1] maps linearly to [0,255] with clamping
/// and round-half-up. A non-empty comment is written as a '#' line.
std::string encode_pgm(const Image& image, std::string_view comment = {});
void write_pgm(const fs::path& path, const Image& image, std::string_view comment = {});

struct PgmHeader {
  std::size_t width = 0, height = 0, maxval = 0;
};
/// Parses a P5 header and returns it with the pixel bytes.
std::pair<PgmHeader, std::vector<std::uint8_t>> decode_pgm(std::string_view bytes);

/// Writes three centre-slice PGMs `<stem>_<plane>.pgm` into `dir`; returns their paths.
std::vector<fs::path> write_center_slices(const fs::path& dir, const std::string& stem,
                                          const Volume& v, std::string_view comment = {});

// Dataset directories: manifest.jsonl (one ImageRecord per line, plus a
// config_digest field), dataset.json, volumes/<image_id>.v3f.

fs::path volume_path(const fs::path& dataset_dir, const std::string& image_id);
void write_manifest(const fs::path& path, const DatasetManifest& manifest, const std::string& config_digest);
/// Reads manifest.jsonl plus the seed and config hash from dataset.json when present.
DatasetManifest read_manifest(const fs::path& dataset_dir);

/// Volumes of `records`, in order, from `dataset_dir`.
std::vector<Volume> load_volumes(const fs::path& dataset_dir, const std::vector<ImageRecord>& records);

// Checkpoints: "NVCK", u32 version, u32 header length, header JSON, u32 tensor
// count, then per tensor: u32 name length, name, u32 rank, u32 extents, f32 data.
// All integers and floats little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json header;
  ArchitectureConfig architecture;
  ParameterStore<float> parameters;
};

std::string encode_checkpoint(const Vae<float>& model, nlohmann::json header);
void write_checkpoint(const fs::path& path, const Vae<float>& model, nlohmann::json header);
Checkpoint read_checkpoint(const fs::path& path);

/// Loads a model; when `expected` is given its digest must match the checkpoint's.
Vae<float> load_model(const fs::path& path, const ArchitectureConfig* expected = nullptr);

}  // namespace neurovol::io
