#pragma once

// On-disk dataset layout:
//   <dir>/manifest.json   config echo, normalization, per-sample entries
//                         {id, times, truth, file, shape}
//   <dir>/<id>.f32        float32 little-endian, frame-major then row-major

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdemix/datagen.hpp"
#include "pdemix/json_support.hpp"
#include "pdemix/sample.hpp"

namespace pdemix {

namespace fs = std::filesystem;

class DatasetError : public std::runtime_error {
 public:
  enum class Kind { Io, MalformedManifest, ShapeMismatch, TruncatedArray };

  DatasetError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr int kFormatVersion = 1;

struct ManifestEntry {
  std::string id;
  std::vector<double> times;
  std::optional<GroundTruth> truth;
  std::string file;
  std::size_t frames = 0, rows = 0, cols = 0;
};

struct Manifest {
  Split split = Split::Test;
  Normalization normalization;
  GenConfig provenance;
  std::vector<ManifestEntry> entries;
};

// --- raw arrays ----------------------------------------------------------

inline void write_f32(const fs::path& path, const std::vector<ScalarField>& frames) {
  std::vector<char> bytes;
  std::size_t total = 0;
  for (const auto& f : frames) total += f.size();
  bytes.resize(total * 4);
  std::size_t off = 0;
  for (const auto& f : frames)
    for (double v : f.values()) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      std::memcpy(bytes.data() + off, &bits, 4);
      off += 4;
    }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError(DatasetError::Kind::Io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw DatasetError(DatasetError::Kind::Io, "write failed: " + path.string());
}

inline std::vector<ScalarField> read_f32(const fs::path& path, std::size_t frames, std::size_t rows,
                                         std::size_t cols) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw DatasetError(DatasetError::Kind::Io, "cannot stat " + path.string());
  const std::size_t frame_bytes = rows * cols * 4;
  if (frame_bytes == 0 || size % frame_bytes != 0)
    throw DatasetError(DatasetError::Kind::TruncatedArray,
                       path.string() + ": " + std::to_string(size) +
                           " bytes is not a whole number of " + std::to_string(rows) + "x" +
                           std::to_string(cols) + " frames");
  if (size / frame_bytes != frames)
    throw DatasetError(DatasetError::Kind::ShapeMismatch,
                       path.string() + ": holds " + std::to_string(size / frame_bytes) +
                           " frames, manifest declares " + std::to_string(frames));
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes(size);
  if (!in.read(bytes.data(), std::streamsize(size)))
    throw DatasetError(DatasetError::Kind::Io, "read failed: " + path.string());
  std::vector<ScalarField> out;
  out.reserve(frames);
  std::size_t off = 0;
  for (std::size_t f = 0; f < frames; ++f) {
    ScalarField field(rows, cols);
    for (double& v : field.values()) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + off, 4);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      v = double(std::bit_cast<float>(bits));
      off += 4;
    }
    out.push_back(std::move(field));
  }
  return out;
}

// --- manifest ------------------------------------------------------------

inline json truth_to_json(const std::optional<GroundTruth>& t) {
  if (!t) return nullptr;
  return {{"component_id", t->component_id}, {"z_x", t->z_x}, {"z_r", t->z_r}};
}

inline json manifest_to_json(const Manifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"id", e.id},
                       {"times", e.times},
                       {"truth", truth_to_json(e.truth)},
                       {"file", e.file},
                       {"shape", json::array({e.frames, e.rows, e.cols})}});
  }
  return {{"format_version", kFormatVersion},
          {"split", to_string(m.split)},
          {"normalization", {{"min", m.normalization.min}, {"max", m.normalization.max}}},
          {"config", to_json(m.provenance)},
          {"samples", entries}};
}

inline Manifest manifest_from_json(const json& j) {
  auto bad = [](const std::string& msg) {
    return DatasetError(DatasetError::Kind::MalformedManifest, "manifest: " + msg);
  };
  try {
    require_known_keys(j, {"format_version", "split", "normalization", "config", "samples"},
                       "manifest");
    if (j.at("format_version").get<int>() != kFormatVersion) throw bad("unsupported format_version");
    Manifest m;
    m.split = split_from_string(j.at("split").get<std::string>());
    m.normalization.min = j.at("normalization").at("min").get<double>();
    m.normalization.max = j.at("normalization").at("max").get<double>();
    m.provenance = gen_config_from_json(j.at("config"), "manifest.config");
    for (const auto& e : j.at("samples")) {
      require_known_keys(e, {"id", "times", "truth", "file", "shape"}, "manifest.samples[]");
      ManifestEntry me;
      me.id = e.at("id").get<std::string>();
      me.times = e.at("times").get<std::vector<double>>();
      if (!e.at("truth").is_null()) {
        const auto& t = e.at("truth");
        me.truth = GroundTruth{t.at("component_id").get<std::size_t>(), t.at("z_x").get<double>(),
                               t.at("z_r").get<double>()};
      }
      me.file = e.at("file").get<std::string>();
      const auto& s = e.at("shape");
      if (!s.is_array() || s.size() != 3) throw bad("shape must be [frames, rows, cols]");
      me.frames = s[0].get<std::size_t>();
      me.rows = s[1].get<std::size_t>();
      me.cols = s[2].get<std::size_t>();
      if (me.frames != me.times.size())
        throw DatasetError(DatasetError::Kind::ShapeMismatch,
                           "manifest: sample '" + me.id + "' has " + std::to_string(me.times.size()) +
                               " times but " + std::to_string(me.frames) + " frames");
      if (me.file.find('/') != std::string::npos || me.file.find("..") != std::string::npos)
        throw bad("sample file must be a plain file name: '" + me.file + "'");
      m.entries.push_back(std::move(me));
    }
    return m;
  } catch (const DatasetError&) {
    throw;
  } catch (const std::exception& e) {
    throw bad(e.what());
  }
}

inline Manifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw DatasetError(DatasetError::Kind::Io, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError(DatasetError::Kind::MalformedManifest,
                       path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

inline SampleRecord load_sample(const fs::path& dir, const ManifestEntry& e) {
  SampleRecord rec;
  rec.id = e.id;
  rec.times = e.times;
  rec.truth = e.truth;
  rec.frames = read_f32(dir / e.file, e.frames, e.rows, e.cols);
  return rec;
}

// --- datasets ------------------------------------------------------------

inline void write_dataset(const Dataset& ds, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DatasetError(DatasetError::Kind::Io, "cannot create " + dir.string() + ": " + ec.message());
  Manifest m;
  m.split = ds.split;
  m.normalization = ds.normalization;
  m.provenance = ds.provenance;
  for (const auto& s : ds.samples) {
    ManifestEntry e;
    e.id = s.id;
    e.times = s.times;
    e.truth = s.truth;
    e.file = s.id + ".f32";
    e.frames = s.frames.size();
    e.rows = s.rows();
    e.cols = s.cols();
    write_f32(dir / e.file, s.frames);
    m.entries.push_back(std::move(e));
  }
  std::ofstream out(dir / kManifestName, std::ios::trunc);
  if (!out) throw DatasetError(DatasetError::Kind::Io, "cannot write manifest in " + dir.string());
  out << manifest_to_json(m).dump(2) << '\n';
}

/// Strict read: any broken sample fails the whole call.
inline Dataset read_dataset(const fs::path& dir) {
  Manifest m = read_manifest(dir);
  Dataset ds;
  ds.split = m.split;
  ds.normalization = m.normalization;
  ds.provenance = m.provenance;
  for (const auto& e : m.entries) ds.samples.push_back(load_sample(dir, e));
  return ds;
}

/// Writes <dir>/train, <dir>/val and <dir>/test.
inline void write_splits(const DatasetSplits& splits, const fs::path& dir) {
  write_dataset(splits.train, dir / "train");
  write_dataset(splits.val, dir / "val");
  write_dataset(splits.test, dir / "test");
}

}  // namespace pdemix
