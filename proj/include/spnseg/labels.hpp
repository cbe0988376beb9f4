#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "error.hpp"
#include "raster.hpp"

namespace spnseg {

inline constexpr double kDefaultBackgroundThreshold = 0.5;

/// Per-pixel argmax over instances. A pixel whose best score is below
/// `bg_threshold` is background; ties go to the lowest instance id.
[[nodiscard]] inline LabelMap assemble_labels(std::span<const ScoreMap> scores,
                                              double bg_threshold = kDefaultBackgroundThreshold) {
  if (scores.empty()) {
    throw DomainError("assemble_labels: no score maps");
  }
  for (const auto& s : scores) require_same_shape(scores.front(), s, "assemble_labels");
  const auto& first = scores.front();
  LabelMap labels(first.height(), first.width(), 0);
  for (std::size_t i = 0; i < first.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < scores.size(); ++k) {
      if (scores[k][i] > scores[best][i]) best = k;
    }
    labels[i] = scores[best][i] < bg_threshold ? 0 : static_cast<int>(best) + 1;
  }
  return labels;
}

[[nodiscard]] inline BinaryMask label_region(const LabelMap& labels, int label) {
  BinaryMask m(labels.height(), labels.width());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == label ? 1 : 0;
  return m;
}

[[nodiscard]] inline int max_label(const LabelMap& labels) {
  int n = 0;
  for (const int v : labels) {
    if (v < 0) throw DomainError("label map contains a negative label");
    n = std::max(n, v);
  }
  return n;
}

/// One tracked region per instance 1..N taken straight from a label map.
[[nodiscard]] inline SequenceState state_from_labels(const LabelMap& labels, std::size_t instances) {
  SequenceState state;
  state.instances.reserve(instances);
  for (std::size_t k = 1; k <= instances; ++k) {
    state.instances.push_back(make_tracked(label_region(labels, static_cast<int>(k))));
  }
  return state;
}

/// Next-frame state: each instance takes its region in `labels`, except that
/// an instance with no labeled pixel keeps its previous region.
[[nodiscard]] inline SequenceState advance_state(const SequenceState& previous, const LabelMap& labels) {
  SequenceState next = state_from_labels(labels, previous.size());
  for (std::size_t i = 0; i < next.size(); ++i) {
    if (next.instances[i].area == 0) next.instances[i] = previous.instances[i];
  }
  return next;
}

}  // namespace spnseg
