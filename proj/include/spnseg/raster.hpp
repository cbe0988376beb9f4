#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace spnseg {

/// Dense row-major 2D grid. Origin is the top-left pixel; `(r, c)` addresses
/// row r in [0, height) and column c in [0, width).
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;

  Grid(std::size_t height, std::size_t width, T fill = T{})
      : height_(height), width_(width), values_(checked_area(height, width), fill) {}

  Grid(std::size_t height, std::size_t width, std::vector<T> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != checked_area(height, width)) {
      throw ShapeError("grid value count " + std::to_string(values_.size()) +
                       " does not match " + std::to_string(height) + "x" +
                       std::to_string(width));
    }
  }

  [[nodiscard]] std::size_t height() const noexcept { return height_; }
  [[nodiscard]] std::size_t width() const noexcept { return width_; }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] bool empty() const noexcept { return values_.empty(); }

  [[nodiscard]] T& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * width_ + c]; }
  [[nodiscard]] const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return values_[r * width_ + c];
  }
  [[nodiscard]] T& operator[](std::size_t i) noexcept { return values_[i]; }
  [[nodiscard]] const T& operator[](std::size_t i) const noexcept { return values_[i]; }

  [[nodiscard]] std::span<T> values() noexcept { return values_; }
  [[nodiscard]] std::span<const T> values() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  template <typename U>
  [[nodiscard]] bool same_shape(const Grid<U>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  static std::size_t checked_area(std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) {
      throw ShapeError("grid dimensions must be positive");
    }
    return height * width;
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> values_;
};

/// Per-instance objectness likelihood; also used for unclamped hidden maps.
using ScoreMap = Grid<double>;
using HiddenMap = Grid<double>;
/// Values are exactly 0 or 1.
using BinaryMask = Grid<std::uint8_t>;
/// 0 is background, k in 1..N is instance k.
using LabelMap = Grid<int>;

/// Previous-frame region of one instance, carried from frame to frame.
struct TrackedRegion {
  BinaryMask region;
  std::size_t area = 0;
};

/// Entry i belongs to instance i + 1.
struct SequenceState {
  std::vector<TrackedRegion> instances;

  [[nodiscard]] std::size_t size() const noexcept { return instances.size(); }
};

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + ")");
  }
}

[[nodiscard]] inline std::size_t popcount(const BinaryMask& m) noexcept {
  std::size_t n = 0;
  for (auto v : m) n += v != 0;
  return n;
}

[[nodiscard]] inline std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "intersection");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += (a[i] != 0 && b[i] != 0);
  return n;
}

[[nodiscard]] inline TrackedRegion make_tracked(BinaryMask region) {
  const auto area = popcount(region);
  return {std::move(region), area};
}

/// Intersection over union. Two empty masks score 0 so that an empty track
/// never wins a region comparison.
[[nodiscard]] inline double jaccard(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "jaccard");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0;
    const bool y = b[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Fraction of `b` lying inside `a`: |a ∩ b| / |b|.
[[nodiscard]] inline double coverage(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "coverage");
  const auto denom = popcount(b);
  if (denom == 0) {
    throw DomainError("coverage: reference mask is empty");
  }
  return static_cast<double>(intersection_count(a, b)) / static_cast<double>(denom);
}

[[nodiscard]] inline ScoreMap gate_foreground(const ScoreMap& s, const BinaryMask& fg) {
  require_same_shape(s, fg, "gate_foreground");
  ScoreMap out(s.height(), s.width());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = fg[i] != 0 ? s[i] : 0.0;
  return out;
}

/// Inclusive binarization: 1 iff s(p) >= t.
[[nodiscard]] inline BinaryMask threshold(const ScoreMap& s, double t) {
  if (!std::isfinite(t)) {
    throw DomainError("threshold: non-finite threshold");
  }
  BinaryMask out(s.height(), s.width());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] >= t ? 1 : 0;
  return out;
}

/// Pixels of `a` that are not in `b`.
[[nodiscard]] inline BinaryMask subtract(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "subtract");
  BinaryMask out(a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] != 0 && b[i] == 0) ? 1 : 0;
  return out;
}

[[nodiscard]] inline ScoreMap clamp_unit(const HiddenMap& h) {
  ScoreMap out(h.height(), h.width());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = std::clamp(h[i], 0.0, 1.0);
  return out;
}

[[nodiscard]] inline bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace spnseg
