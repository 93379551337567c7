#include "neurovol/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "neurovol/error.hpp"

namespace neurovol::io {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

/// Bounds-checked little-endian reader over a byte buffer.
class Reader {
 public:
  Reader(std::string_view bytes, fs::path origin) : bytes_(bytes), origin_(std::move(origin)) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw IoError(origin_, std::string("truncated file reading ") + what);
  }
  std::string_view bytes_;
  fs::path origin_;
  std::size_t pos_ = 0;
};

constexpr std::string_view kVolumeMagic = "V3F1";
constexpr std::string_view kCheckpointMagic = "NVCK";

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp, "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(tmp, "write failed");
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError(path, "rename failed: " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError(path, "read failed");
  return std::move(ss).str();
}

std::string encode_volume(const Volume& v) {
  const Extents e = v.extents();
  std::string out;
  out.reserve(16 + 4 * v.size());
  out.append(kVolumeMagic);
  put_u32(out, static_cast<std::uint32_t>(e.nx));
  put_u32(out, static_cast<std::uint32_t>(e.ny));
  put_u32(out, static_cast<std::uint32_t>(e.nz));
  for (float x : v.data()) put_f32(out, x);
  return out;
}

Volume decode_volume(std::string_view bytes, const fs::path& origin) {
  Reader r(bytes, origin);
  if (r.take(4, "magic") != kVolumeMagic) throw IoError(origin, "bad volume magic (expected V3F1)");
  const std::uint64_t nx = r.u32("extent x"), ny = r.u32("extent y"), nz = r.u32("extent z");
  if (nx == 0 || ny == 0 || nz == 0) throw IoError(origin, "volume has a zero extent");
  const std::uint64_t voxels = nx * ny * nz;
  if (r.remaining() != 4 * voxels) {
    throw IoError(origin, "volume file is " + std::to_string(bytes.size()) + " bytes, expected " +
                              std::to_string(16 + 4 * voxels));
  }
  std::vector<float> data(voxels);
  for (auto& x : data) x = r.f32("voxels");
  return Volume(Extents{nx, ny, nz}, std::move(data));
}

void write_volume(const fs::path& path, const Volume& v) { write_file_atomic(path, encode_volume(v)); }

Volume read_volume(const fs::path& path) { return decode_volume(read_file(path), path); }

std::string_view to_string(Plane p) {
  switch (p) {
    case Plane::axial: return "axial";
    case Plane::coronal: return "coronal";
    case Plane::sagittal: return "sagittal";
  }
  return "axial";
}

Image extract_slice(const Volume& v, Plane plane, std::size_t index) {
  const Extents e = v.extents();
  Image img;
  switch (plane) {
    case Plane::axial:
      if (index >= e.nz) throw ValidationError("axial slice index out of range");
      img.width = e.nx;
      img.height = e.ny;
      for (std::size_t y = 0; y < e.ny; ++y)
        for (std::size_t x = 0; x < e.nx; ++x) img.pixels.push_back(v.at(x, y, index));
      break;
    case Plane::coronal:
      if (index >= e.ny) throw ValidationError("coronal slice index out of range");
      img.width = e.nx;
      img.height = e.nz;
      for (std::size_t z = 0; z < e.nz; ++z)
        for (std::size_t x = 0; x < e.nx; ++x) img.pixels.push_back(v.at(x, index, z));
      break;
    case Plane::sagittal:
      if (index >= e.nx) throw ValidationError("sagittal slice index out of range");
      img.width = e.ny;
      img.height = e.nz;
      for (std::size_t z = 0; z < e.nz; ++z)
        for (std::size_t y = 0; y < e.ny; ++y) img.pixels.push_back(v.at(index, y, z));
      break;
  }
  return img;
}

Image center_slice(const Volume& v, Plane plane) {
  const Extents e = v.extents();
  const std::size_t index = plane == Plane::axial ? e.nz / 2 : plane == Plane::coronal ? e.ny / 2 : e.nx / 2;
  return extract_slice(v, plane, index);
}

std::string encode_pgm(const Image& image, std::string_view comment) {
  if (image.pixels.size() != image.width * image.height) {
    throw ValidationError("image pixel count does not match its dimensions");
  }
  std::string out = "P5\n";
  if (!comment.empty()) {
    out += "# ";
    out += comment;
    out += '\n';
  }
  out += std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  for (float p : image.pixels) {
    const double scaled = std::floor(static_cast<double>(p) * 255.0 + 0.5);
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0))));
  }
  return out;
}

void write_pgm(const fs::path& path, const Image& image, std::string_view comment) {
  write_file_atomic(path, encode_pgm(image, comment));
}

std::pair<PgmHeader, std::vector<std::uint8_t>> decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space_and_comments();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
      ++digits;
    }
    if (digits == 0) throw ValidationError("malformed PGM header");
    return v;
  };
  if (bytes.substr(0, 2) != "P5") throw ValidationError("not a binary PGM (P5)");
  pos = 2;
  PgmHeader h;
  h.width = number();
  h.height = number();
  h.maxval = number();
  ++pos;  // single whitespace before raster
  if (bytes.size() < pos || bytes.size() - pos != h.width * h.height) {
    throw ValidationError("PGM raster size does not match header");
  }
  std::vector<std::uint8_t> px(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return {h, std::move(px)};
}

std::vector<fs::path> write_center_slices(const fs::path& dir, const std::string& stem,
                                          const Volume& v, std::string_view comment) {
  std::vector<fs::path> out;
  for (Plane p : kAllPlanes) {
    fs::path path = dir / (stem + "_" + std::string(to_string(p)) + ".pgm");
    write_pgm(path, center_slice(v, p), comment);
    out.push_back(std::move(path));
  }
  return out;
}

fs::path volume_path(const fs::path& dataset_dir, const std::string& image_id) {
  return dataset_dir / "volumes" / (image_id + ".v3f");
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest, const std::string& config_digest) {
  std::string out;
  for (const auto& r : manifest.records) {
    nlohmann::json j = r;
    j["config_digest"] = config_digest;
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

DatasetManifest read_manifest(const fs::path& dataset_dir) {
  const fs::path path = dataset_dir / "manifest.jsonl";
  const std::string text = read_file(path);
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      m.records.push_back(nlohmann::json::parse(line).get<ImageRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  const fs::path meta = dataset_dir / "dataset.json";
  if (fs::exists(meta)) {
    const auto j = nlohmann::json::parse(read_file(meta), nullptr, false);
    if (j.is_discarded()) throw IoError(meta, "invalid JSON");
    m.seed = j.value("seed", std::uint64_t{0});
    m.config_hash = j.value("config_hash", std::string{});
  }
  return m;
}

std::vector<Volume> load_volumes(const fs::path& dataset_dir, const std::vector<ImageRecord>& records) {
  std::vector<Volume> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(read_volume(volume_path(dataset_dir, r.image_id)));
  return out;
}

std::string encode_checkpoint(const Vae<float>& model, nlohmann::json header) {
  header["format_version"] = kCheckpointVersion;
  header["architecture"] = model.config();
  header["architecture_digest"] = architecture_digest(model.config());
  const std::string h = header.dump();
  std::string out;
  out.append(kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  const auto& entries = model.parameters().entries();
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& p : entries) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto e : p.value.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (float x : p.value.data()) put_f32(out, x);
  }
  return out;
}

void write_checkpoint(const fs::path& path, const Vae<float>& model, nlohmann::json header) {
  write_file_atomic(path, encode_checkpoint(model, std::move(header)));
}

Checkpoint read_checkpoint(const fs::path& path) {
  const std::string bytes = read_file(path);
  Reader r(bytes, path);
  if (r.take(4, "magic") != kCheckpointMagic) throw IoError(path, "bad checkpoint magic (expected NVCK)");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw IoError(path, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto hlen = r.u32("header length");
  Checkpoint ck;
  ck.header = nlohmann::json::parse(r.take(hlen, "header"), nullptr, false);
  if (ck.header.is_discarded()) throw IoError(path, "checkpoint header is not valid JSON");
  try {
    ck.architecture = ck.header.at("architecture").get<ArchitectureConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path, std::string("checkpoint header lacks a valid architecture: ") + e.what());
  }
  const std::string recorded = ck.header.value("architecture_digest", std::string{});
  const std::string actual = architecture_digest(ck.architecture);
  if (recorded != actual) {
    throw ValidationError("checkpoint " + path.string() + " records architecture digest " + recorded +
                          " but its architecture hashes to " + actual);
  }
  const auto count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.take(r.u32("name length"), "name"));
    const auto rank = r.u32("rank");
    Shape shape(rank);
    for (auto& e : shape) e = r.u32("extent");
    std::vector<float> data(numel(shape));
    for (auto& x : data) x = r.f32("tensor data");
    const Component component = name.starts_with("enc.") ? Component::encoder : Component::decoder;
    const bool trainable = name.find("running_") == std::string::npos;
    ck.parameters.add(std::move(name), component, Tensor<float>(std::move(shape), std::move(data)), trainable);
  }
  if (r.remaining() != 0) throw IoError(path, "trailing bytes after checkpoint tensors");
  return ck;
}

Vae<float> load_model(const fs::path& path, const ArchitectureConfig* expected) {
  Checkpoint ck = read_checkpoint(path);
  const std::string have = architecture_digest(ck.architecture);
  if (expected) {
    const std::string want = architecture_digest(*expected);
    if (have != want) {
      throw ValidationError("checkpoint " + path.string() + " has architecture digest " + have +
                            ", configuration expects " + want);
    }
  }
  try {
    return Vae<float>(ck.architecture, std::move(ck.parameters));
  } catch (const ValidationError& e) {
    throw ValidationError("checkpoint " + path.string() + " (architecture digest " + have +
                          ") does not match its architecture: " + e.what());
  }
}

}  // namespace neurovol::io
