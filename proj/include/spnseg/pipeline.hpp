#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "craf.hpp"
#include "error.hpp"
#include "labels.hpp"
#include "propagation.hpp"
#include "raster.hpp"

namespace spnseg {

struct PipelineParams {
  CrafParams craf;
  double bg_threshold = kDefaultBackgroundThreshold;
  bool craf_enabled = true;
  bool spn_enabled = true;
};

/// Inputs of one frame. All rasters share one size; `scores[k]` belongs to
/// instance k + 1.
struct FrameBundle {
  std::size_t index = 0;
  BinaryMask foreground;
  std::vector<ScoreMap> scores;
  AffinityField affinity;
};

struct FrameResult {
  LabelMap labels;
  std::vector<ScoreMap> scores;  // per instance, after refinement and filtering
  SequenceState state;
};

namespace detail {

inline void validate_bundle(const FrameBundle& bundle, bool needs_affinity) {
  if (bundle.scores.empty()) {
    throw DomainError("frame " + std::to_string(bundle.index) + ": no instance score maps");
  }
  for (const auto& s : bundle.scores) require_same_shape(bundle.foreground, s, "frame bundle");
  if (needs_affinity && !bundle.affinity.same_shape(bundle.foreground)) {
    throw ShapeError("frame " + std::to_string(bundle.index) + ": affinity dimensions differ from the frame");
  }
}

}  // namespace detail

/// gate -> refine -> gate -> CRAF -> label assembly for one frame. CRAF is
/// skipped on frame 0 and when disabled.
[[nodiscard]] inline FrameResult process_frame(const FrameBundle& bundle, const SequenceState& state,
                                               const PipelineParams& params) {
  detail::validate_bundle(bundle, params.spn_enabled);
  if (state.size() != bundle.scores.size()) {
    throw DomainError("frame " + std::to_string(bundle.index) + ": expected " + std::to_string(state.size()) +
                      " instances, got " + std::to_string(bundle.scores.size()));
  }

  std::vector<ScoreMap> refined;
  refined.reserve(bundle.scores.size());
  for (const auto& s : bundle.scores) {
    auto gated = gate_foreground(s, bundle.foreground);
    if (params.spn_enabled) {
      // Propagation can carry score across the foreground boundary.
      gated = gate_foreground(refine(gated, bundle.affinity), bundle.foreground);
    }
    refined.push_back(std::move(gated));
  }

  FrameResult out;
  if (params.craf_enabled && bundle.index > 0) {
    auto filtered = apply_craf(refined, state, params.craf, params.bg_threshold);
    out.scores = std::move(filtered.scores);
  } else {
    out.scores = std::move(refined);
  }
  out.labels = assemble_labels(out.scores, params.bg_threshold);
  out.state = advance_state(state, out.labels);
  return out;
}

/// Frame 0 reproduces the annotation; every later frame is processed in
/// order with state carried forward.
[[nodiscard]] inline std::vector<LabelMap> process_sequence(std::span<const FrameBundle> frames,
                                                            const LabelMap& annotation,
                                                            const PipelineParams& params) {
  if (frames.empty()) {
    throw DomainError("process_sequence: empty sequence");
  }
  const std::size_t n = frames.front().scores.size();
  if (max_label(annotation) != static_cast<int>(n)) {
    throw DomainError("process_sequence: annotation has " + std::to_string(max_label(annotation)) +
                      " instances, frames carry " + std::to_string(n));
  }
  SequenceState state = state_from_labels(annotation, n);
  for (std::size_t k = 0; k < n; ++k) {
    if (state.instances[k].area == 0) {
      throw DomainError("process_sequence: annotation is missing instance " + std::to_string(k + 1));
    }
  }

  std::vector<LabelMap> labels;
  labels.reserve(frames.size());
  labels.push_back(annotation);
  for (std::size_t f = 1; f < frames.size(); ++f) {
    require_same_shape(annotation, frames[f].foreground, "process_sequence");
    auto result = process_frame(frames[f], state, params);
    labels.push_back(std::move(result.labels));
    state = std::move(result.state);
  }
  return labels;
}

}  // namespace spnseg
