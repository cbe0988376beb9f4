#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage or configuration
// error, 2 I/O or format error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "craf.hpp"
#include "error.hpp"
#include "io.hpp"
#include "labels.hpp"
#include "learning.hpp"
#include "pipeline.hpp"
#include "propagation.hpp"
#include "raster.hpp"

namespace spnseg {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitIo = 2, kExitNumerical = 3 };

namespace fs = std::filesystem;

/// Sequence directory naming.
namespace layout {

inline std::string numbered(const char* pattern, std::size_t a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

inline std::string numbered(const char* pattern, std::size_t a, std::size_t b) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a, b);
  return buf;
}

inline std::string foreground(std::size_t frame) { return numbered("frame%05zu.fg.pgm", frame); }
inline std::string instance_scores(std::size_t frame, std::size_t obj) {
  return numbered("frame%05zu.obj%02zu.f32r", frame, obj);
}
inline std::string frame_affinity(std::size_t frame) { return numbered("frame%05zu.aff.f32r", frame); }
inline std::string shared_affinity() { return "affinity.f32r"; }
inline std::string labels(std::size_t frame) { return numbered("frame%05zu.labels.pgm", frame); }

// Single-frame CRAF directories.
inline std::string object_scores(std::size_t obj) { return numbered("obj%02zu.f32r", obj); }
inline std::string object_region(std::size_t obj) { return numbered("obj%02zu.pgm", obj); }
inline std::string frame_labels() { return "labels.pgm"; }

}  // namespace layout

/// Loads every frame of a sequence directory. Frames are numbered from 0
/// and enumerated until the first missing foreground mask.
[[nodiscard]] inline std::vector<FrameBundle> load_sequence(const fs::path& dir, std::size_t instances,
                                                            bool needs_affinity) {
  if (!fs::is_directory(dir)) {
    throw FormatError("sequence directory not found: " + dir.string());
  }
  std::optional<AffinityField> shared;
  if (fs::exists(dir / layout::shared_affinity())) shared = io::read_affinity(dir / layout::shared_affinity());

  std::vector<FrameBundle> frames;
  for (std::size_t f = 0; fs::exists(dir / layout::foreground(f)); ++f) {
    FrameBundle b;
    b.index = f;
    b.foreground = io::read_binary_mask(dir / layout::foreground(f));
    for (std::size_t k = 1; k <= instances; ++k) {
      b.scores.push_back(io::read_score_map(dir / layout::instance_scores(f, k)));
    }
    if (needs_affinity) {
      if (fs::exists(dir / layout::frame_affinity(f))) {
        b.affinity = io::read_affinity(dir / layout::frame_affinity(f));
      } else if (shared) {
        b.affinity = *shared;
      } else {
        throw FormatError("no affinity for frame " + std::to_string(f) + " in " + dir.string());
      }
    }
    frames.push_back(std::move(b));
  }
  if (frames.empty()) {
    throw FormatError("no frames in " + dir.string() + " (expected " + layout::foreground(0) + ")");
  }
  return frames;
}

namespace detail {

inline RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    }
    apply_setting(cfg, std::string_view(kv).substr(0, eq), std::string_view(kv).substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

inline std::vector<std::size_t> count_objects(const fs::path& dir, std::string (*name)(std::size_t)) {
  std::vector<std::size_t> ids;
  for (std::size_t k = 1; fs::exists(dir / name(k)); ++k) ids.push_back(k);
  return ids;
}

}  // namespace detail

/// Runs the CLI on `args` (program name excluded).
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mask refinement with spatial propagation and connected region-aware filtering", "spnseg"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value configuration file");
    sub->add_option("--set", overrides, "override one configuration key (key=value)");
  };

  std::string input, affinity, output;
  auto* propagate = app.add_subcommand("propagate", "refine a score map with an affinity field");
  propagate->add_option("--input", input, "1-channel F32R score map")->required();
  propagate->add_option("--affinity", affinity, "12-channel F32R affinity field")->required();
  propagate->add_option("--output", output, "refined F32R score map")->required();

  std::string scores_dir, state_dir;
  auto* craf = app.add_subcommand("craf", "filter one frame's instance score maps");
  craf->add_option("--scores", scores_dir, "directory with obj01.f32r, obj02.f32r, ...")->required();
  craf->add_option("--state", state_dir, "directory with previous regions obj01.pgm, obj02.pgm, ...")->required();
  craf->add_option("--output", output, "output directory")->required();
  add_config(craf);

  std::string sequence_dir, annotation;
  auto* pipeline = app.add_subcommand("pipeline", "segment a whole sequence");
  pipeline->add_option("--sequence", sequence_dir, "sequence directory")->required();
  pipeline->add_option("--annotation", annotation, "first-frame label PGM")->required();
  pipeline->add_option("--output", output, "output directory")->required();
  add_config(pipeline);

  std::string coarse, target;
  auto* fit = app.add_subcommand("fit", "fit per-pixel affinities to a target mask");
  fit->add_option("--coarse", coarse, "coarse F32R score map")->required();
  fit->add_option("--target", target, "binary target mask PGM")->required();
  fit->add_option("--output", output, "fitted 12-channel F32R affinity field")->required();
  add_config(fit);

  std::size_t size = 8;
  std::uint64_t seed = 1;
  auto* gradcheck = app.add_subcommand("gradcheck", "verify analytic gradients against finite differences");
  gradcheck->add_option("--size", size, "side length of the random instance")->check(CLI::Range(1, 16));
  gradcheck->add_option("--seed", seed, "random seed");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "spnseg: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (propagate->parsed()) {
      const auto x = io::read_score_map(input);
      const auto w = io::read_affinity(affinity);
      io::write_raster(output, refine(x, w));
    } else if (craf->parsed()) {
      const auto cfg = detail::resolve_config(config_path, overrides);
      const fs::path sdir(scores_dir);
      const fs::path pdir(state_dir);
      const auto ids = detail::count_objects(sdir, layout::object_scores);
      if (ids.empty()) throw FormatError("no " + layout::object_scores(1) + " in " + sdir.string());
      std::vector<ScoreMap> maps;
      SequenceState state;
      for (const auto k : ids) {
        maps.push_back(io::read_score_map(sdir / layout::object_scores(k)));
        state.instances.push_back(make_tracked(io::read_binary_mask(pdir / layout::object_region(k))));
      }
      const auto result = apply_craf(maps, state, cfg.craf, cfg.bg_threshold);
      const fs::path odir(output);
      fs::create_directories(odir);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        io::write_raster(odir / layout::object_scores(ids[i]), result.scores[i]);
        io::write_binary_mask(odir / layout::object_region(ids[i]), result.state.instances[i].region);
      }
      io::write_label_map(odir / layout::frame_labels(), assemble_labels(result.scores, cfg.bg_threshold));
    } else if (pipeline->parsed()) {
      const auto cfg = detail::resolve_config(config_path, overrides);
      const auto first = io::read_label_map(annotation);
      const auto n = static_cast<std::size_t>(max_label(first));
      if (n == 0) throw FormatError(annotation + ": annotation contains no instances");
      const auto frames = load_sequence(sequence_dir, n, cfg.spn_enabled);
      const auto labels = process_sequence(frames, first, cfg.pipeline());
      const fs::path odir(output);
      fs::create_directories(odir);
      for (std::size_t f = 0; f < labels.size(); ++f) io::write_label_map(odir / layout::labels(f), labels[f]);
      out << "wrote " << labels.size() << " label maps to " << odir.string() << "\n";
    } else if (fit->parsed()) {
      const auto cfg = detail::resolve_config(config_path, overrides);
      const auto c = io::read_score_map(coarse);
      const auto t = io::read_binary_mask(target);
      const auto result = fit_guidance(c, t, cfg.fit);
      io::write_raster(output, result.weights);
      out << std::setprecision(9) << "initial loss " << result.losses.front() << "\nfinal loss "
          << result.losses.back() << "\n";
    } else if (gradcheck->parsed()) {
      const auto instance = make_gradcheck_instance(size, size, seed);
      const auto report = finite_diff_check(instance.input, instance.weights, seed);
      out << std::setprecision(6) << std::scientific << "max relative error " << report.max_relative_error
          << " over " << report.coordinates << " coordinates\n";
      if (!(report.max_relative_error <= 1e-4)) {
        err << "spnseg: gradient check failed\n";
        return kExitNumerical;
      }
    }
  } catch (const ConfigError& e) {
    err << "spnseg: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "spnseg: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    err << "spnseg: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "spnseg: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

inline int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + (argc > 0 ? 1 : 0), argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace spnseg
