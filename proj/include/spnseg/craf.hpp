#pragma once

// Connected region-aware filter. Per frame and per object:
//   1. keep the connected region that best matches the previous frame,
//   2. strip regions another object's selection almost fully covers,
//   3. rescue an object whose selection collapsed by switching to another of
//      its regions that still matches the previous frame.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "labels.hpp"
#include "raster.hpp"

namespace spnseg {

enum class Connectivity : std::uint8_t { Four = 4, Eight = 8 };

struct CrafParams {
  double alpha = 0.2;  // minimum area ratio of the best-matching region
  double beta = 0.9;   // coverage above which overlap is removed
  double gamma = 0.1;  // selection smaller than gamma * previous area triggers rescue
  double delta = 0.4;  // jaccard a rescued region must exceed
  Connectivity connectivity = Connectivity::Eight;

  void validate() const {
    const auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(alpha) || !in_unit(beta) || !in_unit(gamma) || !in_unit(delta)) {
      throw ConfigError("CRAF thresholds must lie in [0, 1]");
    }
    if (connectivity != Connectivity::Four && connectivity != Connectivity::Eight) {
      throw ConfigError("connectivity must be 4 or 8");
    }
  }
};

struct Region {
  std::vector<std::size_t> pixels;  // row-major indices, ascending
  double jaccard = 0.0;             // against the previous-frame region

  [[nodiscard]] std::size_t area() const noexcept { return pixels.size(); }
};

/// Connected regions of one mask, ordered by their first row-major pixel.
struct RegionSet {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Region> regions;

  [[nodiscard]] bool empty() const noexcept { return regions.empty(); }
  [[nodiscard]] std::size_t size() const noexcept { return regions.size(); }

  [[nodiscard]] BinaryMask mask(std::size_t index) const {
    BinaryMask m(height, width);
    for (const auto p : regions.at(index).pixels) m[p] = 1;
    return m;
  }
};

[[nodiscard]] inline RegionSet connected_components(const BinaryMask& m, Connectivity conn) {
  RegionSet set{m.height(), m.width(), {}};
  const auto h = static_cast<std::ptrdiff_t>(m.height());
  const auto w = static_cast<std::ptrdiff_t>(m.width());
  const bool diagonal = conn == Connectivity::Eight;
  std::vector<std::uint8_t> seen(m.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < m.size(); ++start) {
    if (m[start] == 0 || seen[start] != 0) continue;
    Region region;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      region.pixels.push_back(p);
      const auto r = static_cast<std::ptrdiff_t>(p) / w;
      const auto c = static_cast<std::ptrdiff_t>(p) % w;
      for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
          if ((dr == 0 && dc == 0) || (!diagonal && dr != 0 && dc != 0)) continue;
          const auto nr = r + dr;
          const auto nc = c + dc;
          if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
          const auto q = static_cast<std::size_t>(nr * w + nc);
          if (m[q] != 0 && seen[q] == 0) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
      }
    }
    std::sort(region.pixels.begin(), region.pixels.end());
    set.regions.push_back(std::move(region));
  }
  return set;
}

/// Fills each region's jaccard against `prev`.
inline void score_regions(RegionSet& set, const BinaryMask& prev) {
  if (prev.height() != set.height || prev.width() != set.width) {
    throw ShapeError("score_regions: previous region has different dimensions");
  }
  const std::size_t prev_area = popcount(prev);
  for (auto& region : set.regions) {
    std::size_t inter = 0;
    for (const auto p : region.pixels) inter += prev[p] != 0;
    const std::size_t uni = region.area() + prev_area - inter;
    region.jaccard = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
}

namespace detail {

// Higher jaccard wins, then larger area, then earlier region.
inline bool better_match(const Region& a, const Region& b) noexcept {
  if (a.jaccard != b.jaccard) return a.jaccard > b.jaccard;
  return a.area() > b.area();
}

}  // namespace detail

/// Step 1 on a scored region set; returns the index of the chosen region.
/// If the best-matching region is too small relative to the largest one
/// (area ratio <= alpha), the largest region is taken instead.
[[nodiscard]] inline std::size_t select_best_region_index(const RegionSet& set, const CrafParams& params) {
  if (set.empty()) {
    throw DomainError("select_best_region: no regions");
  }
  std::size_t best = 0;
  std::size_t largest = 0;
  for (std::size_t k = 1; k < set.size(); ++k) {
    if (detail::better_match(set.regions[k], set.regions[best])) best = k;
    if (set.regions[k].area() > set.regions[largest].area()) largest = k;
  }
  const double ratio =
      static_cast<double>(set.regions[best].area()) / static_cast<double>(set.regions[largest].area());
  return ratio > params.alpha ? best : largest;
}

[[nodiscard]] inline BinaryMask select_best_region(RegionSet set, const BinaryMask& prev, const CrafParams& params) {
  score_regions(set, prev);
  return set.mask(select_best_region_index(set, params));
}

/// Step 2. For ordered pairs (i, j) in ascending order, removes CRS_j from
/// CRS_i when more than beta of CRS_j lies inside CRS_i.
[[nodiscard]] inline std::vector<BinaryMask> resolve_overlaps(std::vector<BinaryMask> selected,
                                                              const CrafParams& params) {
  for (std::size_t i = 0; i < selected.size(); ++i) {
    for (std::size_t j = 0; j < selected.size(); ++j) {
      if (i == j || popcount(selected[j]) == 0) continue;
      if (coverage(selected[i], selected[j]) > params.beta) {
        selected[i] = subtract(selected[i], selected[j]);
      }
    }
  }
  return selected;
}

/// Candidate regions of one object together with its Step 1 pick.
struct ObjectRegions {
  RegionSet regions;                 // scored against the object's previous region
  std::optional<std::size_t> chosen;  // empty when the object has no region
};

/// Step 3. An object whose selection shrank below gamma times its previous
/// area switches to its best unselected region with jaccard above delta.
/// Step 2 is re-run once if any object switched.
[[nodiscard]] inline std::vector<BinaryMask> rescue_small_regions(std::vector<BinaryMask> selected,
                                                                  std::span<const ObjectRegions> objects,
                                                                  const SequenceState& prev,
                                                                  const CrafParams& params) {
  if (objects.size() != selected.size() || prev.size() != selected.size()) {
    throw DomainError("rescue_small_regions: object count mismatch");
  }
  bool rescued = false;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const double floor = params.gamma * static_cast<double>(prev.instances[i].area);
    if (!(static_cast<double>(popcount(selected[i])) < floor)) continue;
    const auto& set = objects[i].regions;
    std::optional<std::size_t> pick;
    for (std::size_t k = 0; k < set.size(); ++k) {
      if (objects[i].chosen == k || !(set.regions[k].jaccard > params.delta)) continue;
      if (!pick || detail::better_match(set.regions[k], set.regions[*pick])) pick = k;
    }
    if (pick) {
      selected[i] = set.mask(*pick);
      rescued = true;
    }
  }
  return rescued ? resolve_overlaps(std::move(selected), params) : selected;
}

struct CrafResult {
  std::vector<ScoreMap> scores;     // input scores zeroed outside each selection
  std::vector<BinaryMask> selected;  // final CRS per object
  SequenceState state;
};

/// Full filter over all objects of one frame. Scores are binarized at
/// `score_threshold`; the returned state holds each object's region in the
/// label map assembled from the filtered scores.
[[nodiscard]] inline CrafResult apply_craf(std::span<const ScoreMap> scores, const SequenceState& state,
                                           const CrafParams& params,
                                           double score_threshold = kDefaultBackgroundThreshold) {
  params.validate();
  if (scores.empty()) {
    throw DomainError("apply_craf: no score maps");
  }
  if (state.size() != scores.size()) {
    throw DomainError("apply_craf: state has " + std::to_string(state.size()) + " instances, got " +
                      std::to_string(scores.size()) + " score maps");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    require_same_shape(scores.front(), scores[i], "apply_craf");
    require_same_shape(scores.front(), state.instances[i].region, "apply_craf");
  }

  const std::size_t n = scores.size();
  std::vector<ObjectRegions> objects(n);
  std::vector<BinaryMask> selected;
  selected.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& obj = objects[i];
    obj.regions = connected_components(threshold(scores[i], score_threshold), params.connectivity);
    if (obj.regions.empty()) {
      selected.emplace_back(scores[i].height(), scores[i].width());
      continue;
    }
    score_regions(obj.regions, state.instances[i].region);
    obj.chosen = select_best_region_index(obj.regions, params);
    selected.push_back(obj.regions.mask(*obj.chosen));
  }

  selected = resolve_overlaps(std::move(selected), params);
  selected = rescue_small_regions(std::move(selected), objects, state, params);

  CrafResult result;
  result.scores.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ScoreMap masked(scores[i].height(), scores[i].width());
    for (std::size_t p = 0; p < masked.size(); ++p) masked[p] = selected[i][p] != 0 ? scores[i][p] : 0.0;
    result.scores.push_back(std::move(masked));
  }
  result.state = advance_state(state, assemble_labels(result.scores, score_threshold));
  result.selected = std::move(selected);
  return result;
}

}  // namespace spnseg
