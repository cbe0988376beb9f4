#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "propagation.hpp"
#include "raster.hpp"

namespace spnseg {

struct GradientBundle {
  Grid<double> d_input;
  AffinityField d_weights;
};

struct FitConfig {
  double learning_rate = 0.1;
  int iterations = 200;
  double loss_clamp_epsilon = 1e-7;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning_rate must be a positive finite number");
    }
    if (iterations < 1) {
      throw ConfigError("iterations must be at least 1");
    }
    if (!(loss_clamp_epsilon > 0.0 && loss_clamp_epsilon < 0.5)) {
      throw ConfigError("eps must lie in (0, 0.5)");
    }
  }
};

namespace detail {

struct ClassBalance {
  std::size_t foreground = 0;
  std::size_t background = 0;
  double weight = 0.0;  // |fg| / (|fg| + |bg|)
};

inline ClassBalance class_balance(const ScoreMap& pred, const BinaryMask& target, double eps, const char* what) {
  require_same_shape(pred, target, what);
  if (!(eps > 0.0 && eps < 0.5)) {
    throw DomainError(std::string(what) + ": eps must lie in (0, 0.5)");
  }
  if (!all_finite(pred.values())) {
    throw DomainError(std::string(what) + ": non-finite prediction");
  }
  ClassBalance b;
  b.foreground = popcount(target);
  b.background = target.size() - b.foreground;
  if (b.foreground == 0 || b.background == 0) {
    throw DomainError(std::string(what) + ": target must contain both foreground and background pixels");
  }
  b.weight = static_cast<double>(b.foreground) / static_cast<double>(target.size());
  return b;
}

}  // namespace detail

/// Class-balanced binary cross-entropy. Foreground pixels are weighted by
/// 1 - w and background pixels by w, with w the foreground proportion.
/// Predictions are clamped to [eps, 1 - eps] before the logarithm, so
/// unclamped propagation output is accepted.
[[nodiscard]] inline double weighted_loss(const ScoreMap& pred, const BinaryMask& target, double eps) {
  const auto bal = detail::class_balance(pred, target, eps, "weighted_loss");
  double fg = 0.0;
  double bg = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (target[i] != 0) {
      fg += std::log(std::clamp(pred[i], eps, 1.0 - eps));
    } else {
      bg += std::log(std::clamp(1.0 - pred[i], eps, 1.0 - eps));
    }
  }
  return -(1.0 - bal.weight) * fg - bal.weight * bg;
}

/// dL/dpred of weighted_loss. Pixels inside a clamp zone get zero.
[[nodiscard]] inline Grid<double> loss_gradient(const ScoreMap& pred, const BinaryMask& target, double eps) {
  const auto bal = detail::class_balance(pred, target, eps, "loss_gradient");
  Grid<double> g(pred.height(), pred.width());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (target[i] != 0) {
      const double p = pred[i];
      g[i] = (p > eps && p < 1.0 - eps) ? -(1.0 - bal.weight) / p : 0.0;
    } else {
      const double q = 1.0 - pred[i];
      g[i] = (q > eps && q < 1.0 - eps) ? bal.weight / q : 0.0;
    }
  }
  return g;
}

/// Reverse pass of one direction. `theta` holds the error arriving at each
/// hidden node from above; it is consumed scanline by scanline, last first.
inline void backward_direction(const ScoreMap& x, const AffinityField& w, Direction d, const HiddenMap& h,
                               Grid<double> theta, GradientBundle& grads) {
  const detail::ScanGeometry geo{d, x.height(), x.width()};
  const std::size_t lines = geo.scanlines();
  const std::size_t len = geo.length();
  for (std::size_t i = lines; i-- > 1;) {
    for (std::size_t j = 0; j < len; ++j) {
      const auto [r, c] = geo.pixel(i, j);
      const double t = theta(r, c);
      if (t == 0.0) continue;
      double retained = 0.0;
      for (std::size_t k = 0; k < kNeighbors; ++k) {
        if ((k == 0 && j == 0) || (k == 2 && j + 1 == len)) continue;
        const auto [nr, nc] = geo.pixel(i - 1, j + k - 1);
        const double p = w.at(d, k, r, c);
        retained += p;
        grads.d_weights.at(d, k, r, c) += t * (h(nr, nc) - x(r, c));
        theta(nr, nc) += t * p;
      }
      grads.d_input(r, c) += t * (1.0 - retained);
    }
  }
  for (std::size_t j = 0; j < len; ++j) {
    const auto [r, c] = geo.pixel(0, j);
    grads.d_input(r, c) += theta(r, c);
  }
}

/// Gradients of sum(upstream * forward(x, w).output) using a recorded trace.
///
/// The error at each pixel flows into the direction that produced the
/// maximum. Where several directions hold exactly the maximal value it is
/// shared equally among them; at the zero-affinity start all four directions
/// tie everywhere, and a single canonical winner would leave the other three
/// without any gradient.
[[nodiscard]] inline GradientBundle backward(const ScoreMap& x, const AffinityField& w, const ForwardTrace& trace,
                                             const Grid<double>& upstream) {
  require_same_shape(x, upstream, "backward");
  require_same_shape(x, trace.output, "backward");
  detail::require_affinity_shape(w, x, "backward");
  if (!all_finite(upstream.values())) {
    throw DomainError("backward: non-finite upstream gradient");
  }
  std::array<Grid<double>, 4> theta;
  std::array<bool, 4> active{};
  for (auto& t : theta) t = Grid<double>(x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (upstream[i] == 0.0) continue;
    int tied = 0;
    for (const auto& h : trace.hidden) tied += h[i] == trace.output[i];
    const double share = upstream[i] / tied;
    for (std::size_t d = 0; d < kDirections.size(); ++d) {
      if (trace.hidden[d][i] == trace.output[i]) {
        theta[d][i] = share;
        active[d] = true;
      }
    }
  }
  GradientBundle grads{Grid<double>(x.height(), x.width()), AffinityField(x.height(), x.width())};
  for (std::size_t d = 0; d < kDirections.size(); ++d) {
    if (active[d]) backward_direction(x, w, kDirections[d], trace.hidden[d], std::move(theta[d]), grads);
  }
  return grads;
}

/// Gradients of refine's pre-clamp output. The forward pass is recomputed.
[[nodiscard]] inline GradientBundle backward(const ScoreMap& x, const AffinityField& w, const Grid<double>& upstream) {
  return backward(x, w, forward(x, w), upstream);
}

// ---------------------------------------------------------------------------
// Finite-difference verification

enum class CoordinateKind : std::uint8_t { Input, Weight };

struct Coordinate {
  CoordinateKind kind = CoordinateKind::Input;
  std::size_t channel = 0;  // affinity channel; 0 for inputs
  std::size_t row = 0;
  std::size_t col = 0;

  friend bool operator==(const Coordinate&, const Coordinate&) = default;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_input_error = 0.0;
  double max_weight_error = 0.0;
  Coordinate worst;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates = 0;

  friend bool operator==(const GradCheckReport&, const GradCheckReport&) = default;
};

inline constexpr double kFiniteDiffStep = 1e-4;
inline constexpr double kRelativeErrorFloor = 1e-6;
inline constexpr std::size_t kMaxGradCheckSide = 16;

[[nodiscard]] inline double relative_error(double analytic, double numeric) noexcept {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares backward() against central differences of
/// sum(upstream * output) over every input and weight coordinate. The
/// upstream gradient is drawn from `seed`.
[[nodiscard]] inline GradCheckReport finite_diff_check(const ScoreMap& x, const AffinityField& w, std::uint64_t seed,
                                                       double step = kFiniteDiffStep) {
  if (x.height() > kMaxGradCheckSide || x.width() > kMaxGradCheckSide) {
    throw DomainError("finite_diff_check: maps larger than 16x16 are not supported");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Grid<double> upstream(x.height(), x.width());
  for (auto& g : upstream) g = unit(rng);

  const auto analytic = backward(x, w, upstream);

  auto objective = [&upstream](const ScoreMap& xs, const AffinityField& ws) {
    const auto out = detail::forward_unchecked(xs, ws).output;
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += upstream[i] * out[i];
    return acc;
  };

  GradCheckReport report;
  auto record = [&report](const Coordinate& at, double a, double n) {
    ++report.coordinates;
    const double e = relative_error(a, n);
    double& part = at.kind == CoordinateKind::Input ? report.max_input_error : report.max_weight_error;
    part = std::max(part, e);
    if (e > report.max_relative_error || report.coordinates == 1) {
      report.max_relative_error = e;
      report.worst = at;
      report.analytic_at_worst = a;
      report.numeric_at_worst = n;
    }
  };

  ScoreMap xs = x;
  for (std::size_t r = 0; r < x.height(); ++r) {
    for (std::size_t c = 0; c < x.width(); ++c) {
      const double saved = xs(r, c);
      xs(r, c) = saved + step;
      const double up = objective(xs, w);
      xs(r, c) = saved - step;
      const double down = objective(xs, w);
      xs(r, c) = saved;
      record({CoordinateKind::Input, 0, r, c}, analytic.d_input(r, c), (up - down) / (2.0 * step));
    }
  }

  AffinityField ws = w;
  for (const Direction d : kDirections) {
    for (std::size_t k = 0; k < kNeighbors; ++k) {
      for (std::size_t r = 0; r < x.height(); ++r) {
        for (std::size_t c = 0; c < x.width(); ++c) {
          double& slot = ws.at(d, k, r, c);
          const double saved = slot;
          slot = saved + step;
          const double up = objective(x, ws);
          slot = saved - step;
          const double down = objective(x, ws);
          slot = saved;
          record({CoordinateKind::Weight, AffinityField::channel(d, k), r, c}, analytic.d_weights.at(d, k, r, c),
                 (up - down) / (2.0 * step));
        }
      }
    }
  }
  return report;
}

struct GradCheckInstance {
  ScoreMap input;
  AffinityField weights;
};

/// Smallest non-zero gap between the two largest directional values at any
/// pixel. Central differences straddle the max kink when this is small.
[[nodiscard]] inline double min_direction_gap(const ForwardTrace& t) {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < t.output.size(); ++i) {
    std::array<double, 4> v{t.hidden[0][i], t.hidden[1][i], t.hidden[2][i], t.hidden[3][i]};
    std::sort(v.begin(), v.end());
    const double g = v[3] - v[2];
    if (g > 0.0) gap = std::min(gap, g);
  }
  return gap;
}

inline constexpr double kKinkMargin = 1e-3;

/// Random input in [0,1) with signed projected affinities. Draws are repeated
/// until no pixel sits within kKinkMargin of a switch in the max integration,
/// so the instance is differentiable across the finite-difference stencil.
[[nodiscard]] inline GradCheckInstance make_gradcheck_instance(std::size_t height, std::size_t width,
                                                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> signed_unit(-1.0, 1.0);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    ScoreMap x(height, width);
    for (auto& v : x) v = unit(rng);
    AffinityField w(height, width);
    for (auto& v : w.values()) v = signed_unit(rng);
    w = project_stable(std::move(w));
    if (min_direction_gap(forward(x, w)) > kKinkMargin) return {std::move(x), std::move(w)};
  }
  throw NumericalError("make_gradcheck_instance: could not draw a kink-free instance");
}

// ---------------------------------------------------------------------------
// Affinity fitting

struct FitResult {
  AffinityField weights;
  /// losses[0] is the loss of the identity operator; losses[k] the loss after
  /// k gradient steps.
  std::vector<double> losses;
};

/// Gradient descent on per-pixel affinities, starting from the zero field
/// (identity operator). Each step is followed by stability projection.
[[nodiscard]] inline FitResult fit_guidance(const ScoreMap& coarse, const BinaryMask& target, const FitConfig& cfg) {
  cfg.validate();
  require_same_shape(coarse, target, "fit_guidance");
  const double eps = cfg.loss_clamp_epsilon;

  FitResult result{AffinityField(coarse.height(), coarse.width()), {}};
  result.losses.reserve(static_cast<std::size_t>(cfg.iterations) + 1);
  for (int it = 0;; ++it) {
    const auto trace = detail::forward_unchecked(coarse, result.weights);
    const double loss = weighted_loss(trace.output, target, eps);
    if (!std::isfinite(loss)) {
      throw NumericalError("fit_guidance: loss became non-finite at iteration " + std::to_string(it));
    }
    result.losses.push_back(loss);
    if (it == cfg.iterations) break;

    const auto upstream = loss_gradient(trace.output, target, eps);
    const auto grads = backward(coarse, result.weights, trace, upstream);
    auto weights = result.weights.values();
    const auto step = grads.d_weights.values();
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] -= cfg.learning_rate * step[i];
    if (!all_finite(weights)) {
      throw NumericalError("fit_guidance: weights became non-finite at iteration " + std::to_string(it));
    }
    result.weights = project_stable(std::move(result.weights));
  }
  return result;
}

}  // namespace spnseg
