#pragma once

// Linear 2D propagation under per-pixel three-neighbor affinities.
//
// Each direction processes the image one scanline at a time. For a pixel q on
// scanline i with in-range neighbors K on scanline i-1,
//
//   h_q = (1 - sum_K p_q^K) x_q + sum_K p_q^K h_K
//
// The first scanline has no neighbors and copies the input. Neighbors falling
// outside the image are dropped from both sums. Four directional hidden maps
// are merged by a per-pixel maximum.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "error.hpp"
#include "raster.hpp"

namespace spnseg {

/// Canonical order; ties between directions always resolve to the earliest.
enum class Direction : std::uint8_t { LeftToRight = 0, RightToLeft = 1, TopToBottom = 2, BottomToTop = 3 };

inline constexpr std::array<Direction, 4> kDirections{Direction::LeftToRight, Direction::RightToLeft,
                                                      Direction::TopToBottom, Direction::BottomToTop};
inline constexpr std::size_t kNeighbors = 3;
inline constexpr std::size_t kAffinityChannels = kDirections.size() * kNeighbors;

[[nodiscard]] constexpr std::string_view to_string(Direction d) noexcept {
  switch (d) {
    case Direction::LeftToRight: return "left-to-right";
    case Direction::RightToLeft: return "right-to-left";
    case Direction::TopToBottom: return "top-to-bottom";
    case Direction::BottomToTop: return "bottom-to-top";
  }
  return "?";
}

/// Twelve weights per pixel stored channel-planar. Channel
/// `3 * direction + k` holds neighbor k of that direction, where k = 0, 1, 2
/// addresses the previous-scanline pixel at offset -1, 0, +1 along the
/// scanline (rows for horizontal scans, columns for vertical scans).
class AffinityField {
 public:
  AffinityField() = default;

  AffinityField(std::size_t height, std::size_t width)
      : height_(height), width_(width), weights_(checked_count(height, width), 0.0) {}

  AffinityField(std::size_t height, std::size_t width, std::vector<double> planar)
      : height_(height), width_(width), weights_(std::move(planar)) {
    if (weights_.size() != checked_count(height, width)) {
      throw ShapeError("affinity field needs " + std::to_string(kAffinityChannels * height * width) +
                       " weights, got " + std::to_string(weights_.size()));
    }
  }

  [[nodiscard]] std::size_t height() const noexcept { return height_; }
  [[nodiscard]] std::size_t width() const noexcept { return width_; }

  [[nodiscard]] static constexpr std::size_t channel(Direction d, std::size_t k) noexcept {
    return static_cast<std::size_t>(d) * kNeighbors + k;
  }

  [[nodiscard]] double& at(Direction d, std::size_t k, std::size_t r, std::size_t c) noexcept {
    return weights_[(channel(d, k) * height_ + r) * width_ + c];
  }
  [[nodiscard]] double at(Direction d, std::size_t k, std::size_t r, std::size_t c) const noexcept {
    return weights_[(channel(d, k) * height_ + r) * width_ + c];
  }

  [[nodiscard]] std::span<double> values() noexcept { return weights_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return weights_; }

  template <typename T>
  [[nodiscard]] bool same_shape(const Grid<T>& g) const noexcept {
    return height_ == g.height() && width_ == g.width();
  }

  friend bool operator==(const AffinityField&, const AffinityField&) = default;

 private:
  static std::size_t checked_count(std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) {
      throw ShapeError("affinity dimensions must be positive");
    }
    return kAffinityChannels * height * width;
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> weights_;
};

namespace detail {

/// Maps (scanline, position) coordinates of a direction onto image pixels.
struct ScanGeometry {
  Direction dir;
  std::size_t rows;
  std::size_t cols;

  [[nodiscard]] bool horizontal() const noexcept {
    return dir == Direction::LeftToRight || dir == Direction::RightToLeft;
  }
  [[nodiscard]] std::size_t scanlines() const noexcept { return horizontal() ? cols : rows; }
  [[nodiscard]] std::size_t length() const noexcept { return horizontal() ? rows : cols; }

  [[nodiscard]] std::pair<std::size_t, std::size_t> pixel(std::size_t i, std::size_t j) const noexcept {
    switch (dir) {
      case Direction::LeftToRight: return {j, i};
      case Direction::RightToLeft: return {j, cols - 1 - i};
      case Direction::TopToBottom: return {i, j};
      case Direction::BottomToTop: return {rows - 1 - i, j};
    }
    return {0, 0};
  }
};

inline constexpr double kStabilityTolerance = 1e-9;

template <typename T>
void require_affinity_shape(const AffinityField& w, const Grid<T>& g, const char* what) {
  if (!w.same_shape(g)) {
    throw ShapeError(std::string(what) + ": affinity is " + std::to_string(w.height()) + "x" +
                     std::to_string(w.width()) + ", map is " + std::to_string(g.height()) + "x" +
                     std::to_string(g.width()));
  }
}

/// One directional pass without precondition checks.
[[nodiscard]] inline HiddenMap propagate_unchecked(const ScoreMap& x, const AffinityField& w, Direction d) {
  const ScanGeometry geo{d, x.height(), x.width()};
  const std::size_t lines = geo.scanlines();
  const std::size_t len = geo.length();
  HiddenMap h(x.height(), x.width());
  for (std::size_t j = 0; j < len; ++j) {
    const auto [r, c] = geo.pixel(0, j);
    h(r, c) = x(r, c);
  }
  for (std::size_t i = 1; i < lines; ++i) {
    for (std::size_t j = 0; j < len; ++j) {
      const auto [r, c] = geo.pixel(i, j);
      double retained = 0.0;
      double carried = 0.0;
      for (std::size_t k = 0; k < kNeighbors; ++k) {
        if ((k == 0 && j == 0) || (k == 2 && j + 1 == len)) continue;
        const auto [nr, nc] = geo.pixel(i - 1, j + k - 1);
        const double p = w.at(d, k, r, c);
        retained += p;
        carried += p * h(nr, nc);
      }
      h(r, c) = (1.0 - retained) * x(r, c) + carried;
    }
  }
  return h;
}

}  // namespace detail

/// Largest |p-1| + |p0| + |p+1| over all pixels and directions, i.e. the
/// largest absolute row sum of any transition matrix.
[[nodiscard]] inline double max_row_sum(const AffinityField& w) noexcept {
  double worst = 0.0;
  const std::size_t plane = w.height() * w.width();
  const auto v = w.values();
  for (std::size_t d = 0; d < kDirections.size(); ++d) {
    for (std::size_t q = 0; q < plane; ++q) {
      const double s = std::abs(v[(d * 3 + 0) * plane + q]) + std::abs(v[(d * 3 + 1) * plane + q]) +
                       std::abs(v[(d * 3 + 2) * plane + q]);
      worst = std::max(worst, s);
    }
  }
  return worst;
}

[[nodiscard]] inline bool is_stable(const AffinityField& w) noexcept {
  return all_finite(w.values()) && max_row_sum(w) <= 1.0 + detail::kStabilityTolerance;
}

/// Rescales every weight triple whose absolute sum exceeds 1 onto the unit
/// l1 sphere; feasible triples pass through untouched.
[[nodiscard]] inline AffinityField project_stable(AffinityField w) {
  if (!all_finite(w.values())) {
    throw DomainError("project_stable: non-finite affinity weight");
  }
  const std::size_t plane = w.height() * w.width();
  auto v = w.values();
  for (std::size_t d = 0; d < kDirections.size(); ++d) {
    double* p0 = v.data() + (d * 3 + 0) * plane;
    double* p1 = v.data() + (d * 3 + 1) * plane;
    double* p2 = v.data() + (d * 3 + 2) * plane;
    for (std::size_t q = 0; q < plane; ++q) {
      const double s = std::abs(p0[q]) + std::abs(p1[q]) + std::abs(p2[q]);
      if (s > 1.0) {
        p0[q] /= s;
        p1[q] /= s;
        p2[q] /= s;
      }
    }
  }
  return w;
}

inline void require_stable(const AffinityField& w, const char* what) {
  if (!all_finite(w.values())) {
    throw DomainError(std::string(what) + ": non-finite affinity weight");
  }
  if (const double s = max_row_sum(w); s > 1.0 + detail::kStabilityTolerance) {
    throw DomainError(std::string(what) + ": affinity not projected (row sum " + std::to_string(s) + " > 1)");
  }
}

/// One directional pass. `w` must already satisfy the stability bound.
[[nodiscard]] inline HiddenMap propagate_direction(const ScoreMap& x, const AffinityField& w, Direction d) {
  detail::require_affinity_shape(w, x, "propagate_direction");
  require_stable(w, "propagate_direction");
  return detail::propagate_unchecked(x, w, d);
}

struct Integration {
  HiddenMap value;
  Grid<Direction> argmax;
};

/// Node-wise maximum of the four directional maps, given in canonical order.
[[nodiscard]] inline Integration integrate_directions(const HiddenMap& ltr, const HiddenMap& rtl,
                                                      const HiddenMap& ttb, const HiddenMap& btt) {
  require_same_shape(ltr, rtl, "integrate_directions");
  require_same_shape(ltr, ttb, "integrate_directions");
  require_same_shape(ltr, btt, "integrate_directions");
  const std::array<const HiddenMap*, 4> maps{&ltr, &rtl, &ttb, &btt};
  Integration out{HiddenMap(ltr.height(), ltr.width()), Grid<Direction>(ltr.height(), ltr.width())};
  for (std::size_t i = 0; i < ltr.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t d = 1; d < maps.size(); ++d) {
      if ((*maps[d])[i] > (*maps[best])[i]) best = d;
    }
    out.value[i] = (*maps[best])[i];
    out.argmax[i] = kDirections[best];
  }
  return out;
}

/// Everything the backward pass needs from a forward evaluation.
struct ForwardTrace {
  std::array<HiddenMap, 4> hidden;
  HiddenMap output;  // pre-clamp
  Grid<Direction> argmax;
};

namespace detail {

[[nodiscard]] inline ForwardTrace forward_unchecked(const ScoreMap& x, const AffinityField& w) {
  ForwardTrace t;
  for (std::size_t d = 0; d < kDirections.size(); ++d) {
    t.hidden[d] = propagate_unchecked(x, w, kDirections[d]);
  }
  auto merged = integrate_directions(t.hidden[0], t.hidden[1], t.hidden[2], t.hidden[3]);
  t.output = std::move(merged.value);
  t.argmax = std::move(merged.argmax);
  return t;
}

}  // namespace detail

/// Four passes plus integration; no clamping. `w` must be projected.
[[nodiscard]] inline ForwardTrace forward(const ScoreMap& x, const AffinityField& w) {
  detail::require_affinity_shape(w, x, "forward");
  require_stable(w, "forward");
  return detail::forward_unchecked(x, w);
}

/// Projects the affinities, propagates in all four directions, integrates
/// and clamps the result to [0, 1].
[[nodiscard]] inline ScoreMap refine(const ScoreMap& x, const AffinityField& w) {
  detail::require_affinity_shape(w, x, "refine");
  const auto projected = project_stable(w);
  return clamp_unit(detail::forward_unchecked(x, projected).output);
}

}  // namespace spnseg
