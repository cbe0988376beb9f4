#pragma once

// File formats.
//
// F32R float raster, all integers little-endian:
//   bytes 0..3   "F32R"
//   bytes 4..7   width (u32)
//   bytes 8..11  height (u32)
//   bytes 12..15 channels (u32); 1 = score map, 12 = affinity field
//   then channels * height * width binary32 values, channel-planar,
//   each plane row-major. Nothing may follow the payload.
//
// Masks and label maps are binary 8-bit PGM ("P5", maxval 255). Binary masks
// store 1 as 255; label maps store label k as byte k.

#include <bit>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "craf.hpp"
#include "error.hpp"
#include "labels.hpp"
#include "learning.hpp"
#include "pipeline.hpp"
#include "propagation.hpp"
#include "raster.hpp"

namespace spnseg {

namespace io {

inline constexpr std::string_view kRasterMagic = "F32R";
inline constexpr std::size_t kRasterHeaderBytes = 16;
/// Upper bound on channels * height * width accepted by the decoder.
inline constexpr std::uint64_t kMaxRasterElements = std::uint64_t{1} << 30;

[[nodiscard]] inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError("cannot create " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw FormatError("write failed: " + path.string());
  }
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

inline std::string encode_planes(std::size_t height, std::size_t width, std::size_t channels,
                                 std::span<const double> values) {
  if (height > std::numeric_limits<std::uint32_t>::max() || width > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError("raster dimensions exceed 32 bits");
  }
  std::string out;
  out.reserve(kRasterHeaderBytes + 4 * values.size());
  out.append(kRasterMagic);
  put_u32(out, static_cast<std::uint32_t>(width));
  put_u32(out, static_cast<std::uint32_t>(height));
  put_u32(out, static_cast<std::uint32_t>(channels));
  for (const double v : values) {
    const auto f = static_cast<float>(v);
    if (!std::isfinite(f)) {
      throw FormatError("raster value is not representable as a finite binary32");
    }
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

}  // namespace detail

[[nodiscard]] inline std::string encode_raster(const ScoreMap& s) {
  return detail::encode_planes(s.height(), s.width(), 1, s.values());
}

[[nodiscard]] inline std::string encode_raster(const AffinityField& w) {
  return detail::encode_planes(w.height(), w.width(), kAffinityChannels, w.values());
}

using Raster = std::variant<ScoreMap, AffinityField>;

[[nodiscard]] inline Raster decode_raster(std::string_view bytes) {
  if (bytes.size() < kRasterHeaderBytes) {
    throw FormatError("truncated header (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (bytes.substr(0, 4) != kRasterMagic) {
    throw FormatError("bad magic");
  }
  const std::uint32_t width = detail::get_u32(bytes, 4);
  const std::uint32_t height = detail::get_u32(bytes, 8);
  const std::uint32_t channels = detail::get_u32(bytes, 12);
  if (channels != 1 && channels != kAffinityChannels) {
    throw FormatError("unsupported channel count " + std::to_string(channels) + " (expected 1 or 12)");
  }
  if (width == 0 || height == 0) {
    throw FormatError("zero raster dimension");
  }
  const std::uint64_t plane = std::uint64_t{width} * height;
  if (plane > kMaxRasterElements / channels) {
    throw FormatError("dimension overflow (" + std::to_string(width) + "x" + std::to_string(height) + "x" +
                      std::to_string(channels) + ")");
  }
  const std::uint64_t count = plane * channels;
  const std::uint64_t expected = 4 * count;
  const std::uint64_t actual = bytes.size() - kRasterHeaderBytes;
  if (actual < expected) {
    throw FormatError("truncated payload (expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(actual) + ")");
  }
  if (actual > expected) {
    throw FormatError("trailing bytes after payload (expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(actual) + ")");
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float f = std::bit_cast<float>(detail::get_u32(bytes, kRasterHeaderBytes + 4 * i));
    if (!std::isfinite(f)) {
      throw FormatError("non-finite value at element " + std::to_string(i));
    }
    values[i] = f;
  }
  if (channels == 1) return ScoreMap(height, width, std::move(values));
  return AffinityField(height, width, std::move(values));
}

[[nodiscard]] inline Raster read_raster(const std::filesystem::path& path) {
  try {
    return decode_raster(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

[[nodiscard]] inline ScoreMap read_score_map(const std::filesystem::path& path) {
  auto r = read_raster(path);
  if (auto* s = std::get_if<ScoreMap>(&r)) return std::move(*s);
  throw FormatError(path.string() + ": expected a 1-channel score map, found 12 channels");
}

[[nodiscard]] inline AffinityField read_affinity(const std::filesystem::path& path) {
  auto r = read_raster(path);
  if (auto* w = std::get_if<AffinityField>(&r)) return std::move(*w);
  throw FormatError(path.string() + ": expected a 12-channel affinity field, found 1 channel");
}

inline void write_raster(const std::filesystem::path& path, const ScoreMap& s) { write_file(path, encode_raster(s)); }
inline void write_raster(const std::filesystem::path& path, const AffinityField& w) {
  write_file(path, encode_raster(w));
}

// ---------------------------------------------------------------------------
// PGM

[[nodiscard]] inline std::string encode_pgm(const Grid<std::uint8_t>& pixels) {
  std::string out = "P5 " + std::to_string(pixels.width()) + " " + std::to_string(pixels.height()) + " 255\n";
  out.reserve(out.size() + pixels.size());
  for (const auto v : pixels) out.push_back(static_cast<char>(v));
  return out;
}

namespace detail {

class PgmHeaderReader {
 public:
  explicit PgmHeaderReader(std::string_view bytes) : bytes_(bytes) {}

  void skip_whitespace_and_comments() {
    while (pos_ < bytes_.size()) {
      const char ch = bytes_[pos_];
      if (ch == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(ch)) != 0) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::uint64_t number(const char* what) {
    skip_whitespace_and_comments();
    const std::size_t start = pos_;
    std::uint64_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_])) != 0) {
      v = v * 10 + static_cast<std::uint64_t>(bytes_[pos_] - '0');
      if (v > std::numeric_limits<std::uint32_t>::max()) {
        throw FormatError(std::string("PGM ") + what + " out of range");
      }
      ++pos_;
    }
    if (pos_ == start) {
      throw FormatError(std::string("PGM header: missing ") + what);
    }
    return v;
  }

  // Exactly one whitespace byte separates the header from the raster.
  void single_whitespace() {
    if (pos_ >= bytes_.size() || std::isspace(static_cast<unsigned char>(bytes_[pos_])) == 0) {
      throw FormatError("PGM header: expected whitespace after maxval");
    }
    ++pos_;
  }

  [[nodiscard]] std::size_t position() const noexcept { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 2;
};

}  // namespace detail

[[nodiscard]] inline Grid<std::uint8_t> decode_pgm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes.substr(0, 2) != "P5") {
    throw FormatError("not a binary PGM (expected P5)");
  }
  detail::PgmHeaderReader reader(bytes);
  if (bytes.size() > 2 && std::isspace(static_cast<unsigned char>(bytes[2])) == 0 && bytes[2] != '#') {
    throw FormatError("not a binary PGM (expected P5)");
  }
  const auto width = reader.number("width");
  const auto height = reader.number("height");
  const auto maxval = reader.number("maxval");
  if (maxval != 255) {
    throw FormatError("unsupported PGM maxval " + std::to_string(maxval) + " (expected 255)");
  }
  reader.single_whitespace();
  if (width == 0 || height == 0) {
    throw FormatError("zero PGM dimension");
  }
  if (width * height > kMaxRasterElements) {
    throw FormatError("PGM dimension overflow");
  }
  const std::uint64_t expected = width * height;
  const std::uint64_t actual = bytes.size() - reader.position();
  if (actual != expected) {
    throw FormatError("PGM size mismatch (expected " + std::to_string(expected) + " pixel bytes, got " +
                      std::to_string(actual) + ")");
  }
  std::vector<std::uint8_t> px(bytes.begin() + static_cast<std::ptrdiff_t>(reader.position()), bytes.end());
  return Grid<std::uint8_t>(height, width, std::move(px));
}

[[nodiscard]] inline BinaryMask decode_binary_mask(std::string_view bytes) {
  auto px = decode_pgm(bytes);
  for (auto& v : px) {
    if (v != 0 && v != 255) {
      throw FormatError("binary mask contains value " + std::to_string(v) + " (expected 0 or 255)");
    }
    v = v == 255 ? 1 : 0;
  }
  return px;
}

[[nodiscard]] inline LabelMap decode_label_map(std::string_view bytes) {
  const auto px = decode_pgm(bytes);
  LabelMap labels(px.height(), px.width());
  for (std::size_t i = 0; i < px.size(); ++i) labels[i] = px[i];
  return labels;
}

[[nodiscard]] inline std::string encode_binary_mask(const BinaryMask& m) {
  Grid<std::uint8_t> px(m.height(), m.width());
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] > 1) throw DomainError("binary mask holds a value other than 0 or 1");
    px[i] = m[i] != 0 ? 255 : 0;
  }
  return encode_pgm(px);
}

[[nodiscard]] inline std::string encode_label_map(const LabelMap& labels) {
  Grid<std::uint8_t> px(labels.height(), labels.width());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 255) {
      throw DomainError("label " + std::to_string(labels[i]) + " does not fit an 8-bit PGM");
    }
    px[i] = static_cast<std::uint8_t>(labels[i]);
  }
  return encode_pgm(px);
}

[[nodiscard]] inline BinaryMask read_binary_mask(const std::filesystem::path& path) {
  try {
    return decode_binary_mask(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

[[nodiscard]] inline LabelMap read_label_map(const std::filesystem::path& path) {
  try {
    return decode_label_map(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_binary_mask(const std::filesystem::path& path, const BinaryMask& m) {
  write_file(path, encode_binary_mask(m));
}

inline void write_label_map(const std::filesystem::path& path, const LabelMap& labels) {
  write_file(path, encode_label_map(labels));
}

}  // namespace io

// ---------------------------------------------------------------------------
// Run configuration: plain-text `key = value` lines, `#` starts a comment.

struct RunConfig {
  CrafParams craf;
  double bg_threshold = kDefaultBackgroundThreshold;
  FitConfig fit;
  bool craf_enabled = true;
  bool spn_enabled = true;

  [[nodiscard]] PipelineParams pipeline() const { return {craf, bg_threshold, craf_enabled, spn_enabled}; }

  void validate() const {
    craf.validate();
    fit.validate();
    if (!(bg_threshold >= 0.0 && bg_threshold <= 1.0)) {
      throw ConfigError("bg_threshold must lie in [0, 1]");
    }
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto not_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) == 0; };
  while (!s.empty() && !not_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && !not_space(s.back())) s.remove_suffix(1);
  return s;
}

inline double parse_real(std::string_view key, std::string_view text) {
  const std::string s(text);
  std::istringstream in(s);
  in.imbue(std::locale::classic());
  double v = 0.0;
  in >> v;
  if (in.fail() || !in.eof() || !std::isfinite(v)) {
    throw ConfigError("invalid number for " + std::string(key) + ": '" + s + "'");
  }
  return v;
}

inline bool parse_switch(std::string_view key, std::string_view text) {
  if (text == "on" || text == "true" || text == "1") return true;
  if (text == "off" || text == "false" || text == "0") return false;
  throw ConfigError("invalid switch for " + std::string(key) + ": '" + std::string(text) + "' (use on/off)");
}

}  // namespace detail

/// Applies one setting; unknown keys are rejected. Range checks happen in
/// RunConfig::validate.
inline void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  key = detail::trim(key);
  value = detail::trim(value);
  if (key == "alpha") {
    cfg.craf.alpha = detail::parse_real(key, value);
  } else if (key == "beta") {
    cfg.craf.beta = detail::parse_real(key, value);
  } else if (key == "gamma") {
    cfg.craf.gamma = detail::parse_real(key, value);
  } else if (key == "delta") {
    cfg.craf.delta = detail::parse_real(key, value);
  } else if (key == "connectivity") {
    if (value == "4") {
      cfg.craf.connectivity = Connectivity::Four;
    } else if (value == "8") {
      cfg.craf.connectivity = Connectivity::Eight;
    } else {
      throw ConfigError("connectivity must be 4 or 8, got '" + std::string(value) + "'");
    }
  } else if (key == "bg_threshold") {
    cfg.bg_threshold = detail::parse_real(key, value);
  } else if (key == "eps") {
    cfg.fit.loss_clamp_epsilon = detail::parse_real(key, value);
  } else if (key == "learning_rate") {
    cfg.fit.learning_rate = detail::parse_real(key, value);
  } else if (key == "iterations") {
    const double v = detail::parse_real(key, value);
    if (v != std::floor(v) || v < 1 || v > std::numeric_limits<int>::max()) {
      throw ConfigError("iterations must be a positive integer");
    }
    cfg.fit.iterations = static_cast<int>(v);
  } else if (key == "craf") {
    cfg.craf_enabled = detail::parse_switch(key, value);
  } else if (key == "spn") {
    cfg.spn_enabled = detail::parse_switch(key, value);
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

/// Parses `key = value` text; missing keys keep their defaults.
[[nodiscard]] inline RunConfig parse_config(std::string_view text, RunConfig cfg = {}) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    try {
      apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

[[nodiscard]] inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open config " + path.string());
  }
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_config(text);
}

}  // namespace spnseg
