// Binary motion/feature files, checkpoints and JSON documents.
//
//   GDNC: "GDNC" u32 version=1, u32 N, u32 T, u32 D=147, f32 fps,
//         N*T*D f32 in [dancer][frame][dim] order
//   MFTR: "MFTR" u32 version=1, u32 T, u32 D=438, f32 fps, T*D f32
//   CDCK: "CDCK" u32 version=1, u32 meta_len, meta (JSON text), u32 count,
//         count x { u32 name_len, name, u32 rows, u32 cols, rows*cols f32 }
// All integers and floats are little-endian.
#pragma once

#include "cohedance/audio.hpp"
#include "cohedance/autodiff.hpp"
#include "cohedance/datapipe.hpp"
#include "cohedance/metrics.hpp"
#include "cohedance/motion.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cohedance {

namespace fs = std::filesystem;
using json = nlohmann::json;

class MissingFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io_detail {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xFFu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void expect_end() const {
    if (pos_ != data_.size()) throw FormatError(what_ + ": trailing bytes after payload");
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError(what_ + ": truncated file");
  }
  std::string data_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::string read_file(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError("file not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write: " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// GDNC / MFTR

inline std::string encode_gdnc(const GroupDanceSequence& seq) {
  validate(seq);
  io_detail::Writer w;
  w.bytes("GDNC");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(seq.dancers));
  w.u32(static_cast<std::uint32_t>(seq.frames));
  w.u32(kPoseDim);
  w.f32(static_cast<float>(seq.fps));
  for (Eigen::Index r = 0; r < seq.data.rows(); ++r)
    for (Eigen::Index c = 0; c < kPoseDim; ++c) w.f32(static_cast<float>(seq.data(r, c)));
  return w.str();
}

inline GroupDanceSequence decode_gdnc(const std::string& bytes, const std::string& what = "GDNC") {
  io_detail::Reader r(bytes, what);
  if (r.bytes(4) != "GDNC") throw FormatError(what + ": bad magic");
  if (r.u32() != 1) throw FormatError(what + ": unsupported version");
  const std::uint32_t n = r.u32(), t = r.u32(), d = r.u32();
  const float fps = r.f32();
  if (d != kPoseDim) throw FormatError(what + ": pose width must be 147");
  if (n < 1 || t < 1) throw FormatError(what + ": empty sequence");
  if (!(fps > 0.0f) || !std::isfinite(fps)) throw FormatError(what + ": invalid fps");
  if (r.remaining() != static_cast<std::size_t>(n) * t * d * 4) throw FormatError(what + ": payload size mismatch");
  GroupDanceSequence seq(static_cast<int>(n), static_cast<int>(t), fps);
  for (Eigen::Index row = 0; row < seq.data.rows(); ++row)
    for (Eigen::Index c = 0; c < kPoseDim; ++c) seq.data(row, c) = r.f32();
  r.expect_end();
  if (!seq.data.allFinite()) throw FormatError(what + ": non-finite values");
  return seq;
}

inline void write_gdnc(const fs::path& path, const GroupDanceSequence& seq) { io_detail::write_file(path, encode_gdnc(seq)); }

inline GroupDanceSequence read_gdnc(const fs::path& path) { return decode_gdnc(io_detail::read_file(path), path.string()); }

inline std::string encode_mftr(const MusicFeatureSequence& m) {
  validate(m);
  io_detail::Writer w;
  w.bytes("MFTR");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(m.frames()));
  w.u32(kMusicDim);
  w.f32(static_cast<float>(m.fps));
  for (Eigen::Index r = 0; r < m.feats.rows(); ++r)
    for (Eigen::Index c = 0; c < kMusicDim; ++c) w.f32(static_cast<float>(m.feats(r, c)));
  return w.str();
}

inline MusicFeatureSequence decode_mftr(const std::string& bytes, const std::string& what = "MFTR") {
  io_detail::Reader r(bytes, what);
  if (r.bytes(4) != "MFTR") throw FormatError(what + ": bad magic");
  if (r.u32() != 1) throw FormatError(what + ": unsupported version");
  const std::uint32_t t = r.u32(), d = r.u32();
  const float fps = r.f32();
  if (d != kMusicDim) throw FormatError(what + ": feature width must be 438");
  if (t < 1) throw FormatError(what + ": empty sequence");
  if (!(fps > 0.0f) || !std::isfinite(fps)) throw FormatError(what + ": invalid fps");
  if (r.remaining() != static_cast<std::size_t>(t) * d * 4) throw FormatError(what + ": payload size mismatch");
  MusicFeatureSequence m(static_cast<int>(t), fps);
  for (Eigen::Index row = 0; row < m.feats.rows(); ++row)
    for (Eigen::Index c = 0; c < kMusicDim; ++c) m.feats(row, c) = r.f32();
  r.expect_end();
  if (!m.feats.allFinite()) throw FormatError(what + ": non-finite values");
  return m;
}

inline void write_mftr(const fs::path& path, const MusicFeatureSequence& m) { io_detail::write_file(path, encode_mftr(m)); }

inline MusicFeatureSequence read_mftr(const fs::path& path) { return decode_mftr(io_detail::read_file(path), path.string()); }

/// Optional `{name, genre, source}` sidecar next to a GDNC file.
struct MotionSidecar {
  std::string name;
  std::string genre;
  std::string source;
};

inline fs::path sidecar_path(const fs::path& gdnc) {
  fs::path p = gdnc;
  p.replace_extension(".json");
  return p;
}

inline void write_sidecar(const fs::path& gdnc, const MotionSidecar& s) {
  io_detail::write_file(sidecar_path(gdnc), json{{"name", s.name}, {"genre", s.genre}, {"source", s.source}}.dump(2) + "\n");
}

inline MotionSidecar read_sidecar(const fs::path& gdnc) {
  const fs::path p = sidecar_path(gdnc);
  MotionSidecar s;
  if (!fs::exists(p)) return s;
  try {
    const json j = json::parse(io_detail::read_file(p));
    s.name = j.value("name", "");
    s.genre = j.value("genre", "");
    s.source = j.value("source", "");
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  json meta = json::object();
  std::map<std::string, Mat<float>> tensors;

  void add(const ParamStore<float>& store) {
    for (const auto& [k, v] : store.values) tensors[k] = v;
  }

  /// Fills every parameter already present in `store` (names and shapes
  /// must match).
  void load_into(ParamStore<float>& store) const {
    for (auto& [k, v] : store.values) {
      auto it = tensors.find(k);
      if (it == tensors.end()) throw FormatError("checkpoint: missing tensor " + k);
      if (it->second.rows() != v.rows() || it->second.cols() != v.cols()) throw FormatError("checkpoint: shape mismatch for " + k);
      v = it->second;
    }
  }
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  io_detail::Writer w;
  w.bytes("CDCK");
  w.u32(1);
  const std::string meta = ck.meta.dump();
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta);
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, m] : ck.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f32(m.data()[i]);
  }
  return w.str();
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint") {
  io_detail::Reader r(bytes, what);
  if (r.bytes(4) != "CDCK") throw FormatError(what + ": bad magic");
  if (r.u32() != 1) throw FormatError(what + ": unsupported version");
  Checkpoint ck;
  const std::uint32_t meta_len = r.u32();
  try {
    ck.meta = json::parse(r.bytes(meta_len));
  } catch (const json::exception& e) {
    throw FormatError(what + ": bad metadata: " + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.bytes(r.u32());
    const std::uint32_t rows = r.u32(), cols = r.u32();
    Mat<float> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f32();
    ck.tensors[name] = std::move(m);
  }
  r.expect_end();
  return ck;
}

inline void write_checkpoint(const fs::path& path, const Checkpoint& ck) { io_detail::write_file(path, encode_checkpoint(ck)); }

inline Checkpoint read_checkpoint(const fs::path& path) { return decode_checkpoint(io_detail::read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// JSON documents

inline json to_json(const ClipEntry& c) {
  return json{{"name", c.name},         {"motion", c.motion}, {"music", c.music},   {"genre", c.genre},
              {"duration", c.duration}, {"dancers", c.dancers}, {"frames", c.frames}, {"split", c.split}};
}

inline json to_json(const DatasetManifest& m) {
  json clips = json::array();
  for (const auto& c : m.clips) clips.push_back(to_json(c));
  json fr = json::array();
  for (const auto& [name, f] : m.fractions) fr.push_back(json{{"split", name}, {"fraction", f}});
  return json{{"version", 1}, {"split_seed", m.split_seed}, {"fractions", fr}, {"clips", clips}};
}

inline DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  try {
    m.split_seed = j.value("split_seed", std::uint64_t{0});
    if (j.contains("fractions"))
      for (const auto& f : j.at("fractions")) m.fractions.emplace_back(f.at("split").get<std::string>(), f.at("fraction").get<double>());
    for (const auto& c : j.at("clips")) {
      ClipEntry e;
      e.name = c.at("name").get<std::string>();
      e.motion = c.at("motion").get<std::string>();
      e.music = c.value("music", "");
      e.genre = c.value("genre", "");
      e.duration = c.value("duration", 0.0);
      e.dancers = c.value("dancers", 0);
      e.frames = c.value("frames", 0);
      e.split = c.value("split", "");
      m.clips.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return m;
}

inline void write_manifest(const fs::path& path, const DatasetManifest& m) { io_detail::write_file(path, to_json(m).dump(2) + "\n"); }

inline DatasetManifest read_manifest(const fs::path& path) {
  const std::string text = io_detail::read_file(path);
  try {
    return manifest_from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline constexpr int kMetricSchemaVersion = 1;

inline json to_json(const MetricReport& r) {
  return json{{"schema_version", kMetricSchemaVersion}, {"fid", r.fid}, {"m_dist", r.m_dist}, {"mm_dist", r.mm_dist},
              {"div", r.div}, {"mda", r.mda}, {"gda", r.gda}, {"clips", r.clips}};
}

inline json to_json(const AnomalyReport& r) {
  json flags = json::array();
  for (const auto& f : r.flags)
    flags.push_back(json{{"dancer", f.dancer}, {"frame", f.frame}, {"signal", to_string(f.signal)}, {"magnitude", f.magnitude}});
  return json{{"clip", r.clip}, {"flags", flags}};
}

}  // namespace cohedance
