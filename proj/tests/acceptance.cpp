// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <spnseg/cli.hpp>
#include <spnseg/spnseg.hpp>

#include "oracles/craf_oracle.hpp"
#include "support/convert.hpp"
#include "support/random.hpp"
#include "support/toy_sequence.hpp"

namespace {

namespace fs = std::filesystem;
using namespace spnseg;
using testing::Rng;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  Rng rng(1001);
  double worst = 0.0;
  std::size_t coords = 0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const std::size_t h = rng.index(3, 8);
    const std::size_t w = rng.index(3, 8);
    const auto inst = make_gradcheck_instance(h, w, 5000 + i);
    const auto report = finite_diff_check(inst.input, inst.weights, 7000 + i);
    worst = std::max(worst, report.max_relative_error);
    coords += report.coordinates;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs <= 30.0,
          fmt("max relative error %.3e over %zu coordinates, %.2f s", worst, coords, secs)};
}

Outcome identity() {
  Rng rng(1002);
  for (int i = 0; i < 20; ++i) {
    const std::size_t h = rng.index(1, 16);
    const std::size_t w = rng.index(1, 16);
    const auto x = testing::random_scores(rng, h, w, -0.5, 1.5);
    const auto trace = forward(x, AffinityField(h, w));
    if (std::memcmp(trace.output.values().data(), x.values().data(), x.size() * sizeof(double)) != 0) {
      return {false, fmt("input %d differs", i)};
    }
  }
  return {true, "20 inputs reproduced bit-exactly"};
}

Outcome boundedness() {
  Rng rng(1003);
  double excess = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t h = rng.index(1, 16);
    const std::size_t w = rng.index(1, 16);
    const auto x = testing::random_scores(rng, h, w, -1, 1);
    const auto wts = testing::random_convex_affinity(rng, h, w, rng.uniform(0.5, 1.0));
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    for (const auto& hidden : forward(x, wts).hidden)
      for (const double v : hidden) excess = std::max({excess, *lo - v, v - *hi});
  }
  return {excess <= 1e-12, fmt("largest excursion outside [min, max] %.3e", excess)};
}

Outcome impulse_decay() {
  constexpr std::size_t n = 17;  // scanlines 0..16
  double worst = -1.0;
  for (const double lambda : {0.5, 0.9, 1.0}) {
    for (const double sign : {1.0, -1.0}) {
      AffinityField w(n, n);
      for (const Direction d : kDirections)
        for (std::size_t k = 0; k < kNeighbors; ++k)
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) w.at(d, k, r, c) = sign * lambda / 3.0;
      for (const Direction d : kDirections) {
        const detail::ScanGeometry geo{d, n, n};
        ScoreMap x(n, n);
        const auto [r0, c0] = geo.pixel(0, n / 2);
        x(r0, c0) = 1.0;
        const auto h = propagate_direction(x, w, d);
        for (std::size_t line = 0; line < geo.scanlines(); ++line) {
          double m = 0.0;
          for (std::size_t j = 0; j < geo.length(); ++j) {
            const auto [r, c] = geo.pixel(line, j);
            m = std::max(m, std::abs(h(r, c)));
          }
          worst = std::max(worst, m - std::pow(lambda, static_cast<double>(line)));
        }
      }
    }
  }
  return {worst <= 1e-12, fmt("max of (|hidden| - lambda^n) over n <= 16: %.3e", worst)};
}

Outcome craf_equivalence() {
  Rng rng(1005);
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t h = rng.index(2, 16);
    const std::size_t w = rng.index(2, 16);
    const std::size_t objects = rng.index(1, 3);
    const auto p = t % 4 == 0 ? CrafParams{} : testing::random_craf_params(rng);
    const double thr = rng.coin() ? 0.5 : rng.uniform(0.2, 0.8);
    const oracle::CrafSettings s{p.alpha, p.beta, p.gamma, p.delta, p.connectivity == Connectivity::Eight, thr};
    const testing::RectPool pool(rng, h, w);
    const bool pooled = rng.coin(0.75);
    const auto draw = [&] { return pooled ? pool.draw(rng) : testing::blobby_scores(rng, h, w); };

    SequenceState state;
    std::vector<oracle::Mask> prev;
    for (std::size_t i = 0; i < objects; ++i) {
      const auto m = threshold(draw(), thr);
      state.instances.push_back(make_tracked(m));
      prev.push_back(testing::to_bytes(m));
    }
    for (int frame = 0; frame < 3; ++frame) {
      std::vector<ScoreMap> scores;
      std::vector<std::vector<double>> plain;
      for (std::size_t i = 0; i < objects; ++i) {
        scores.push_back(draw());
        plain.push_back(testing::to_vector(scores.back()));
      }
      const auto got = apply_craf(scores, state, p, thr);
      const auto want = oracle::craf(plain, h, w, prev, s);
      bool same = true;
      for (std::size_t i = 0; i < objects; ++i) {
        same = same && testing::to_vector(got.scores[i]) == want.scores[i] &&
               testing::to_bytes(got.state.instances[i].region) == want.next_prev[i];
      }
      mismatches += !same;
      state = got.state;
      prev = want.next_prev;
    }
  }
  return {mismatches == 0, fmt("%d of 600 frames differ from the oracle", mismatches)};
}

Outcome connected_components_equivalence() {
  Rng rng(1006);
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const auto m = testing::random_mask(rng, 16, 16, rng.uniform(0.1, 0.8));
    for (const bool eight : {false, true}) {
      const auto set = connected_components(m, eight ? Connectivity::Eight : Connectivity::Four);
      const auto want = oracle::components(testing::to_bytes(m), 16, 16, eight);
      bool same = set.size() == want.size();
      for (std::size_t k = 0; same && k < want.size(); ++k) same = set.regions[k].pixels == want[k];
      mismatches += !same;
    }
  }
  return {mismatches == 0, fmt("%d of 400 labelings differ from union-find", mismatches)};
}

Outcome loss_fixture() {
  BinaryMask target(2, 2);
  target(0, 0) = 1;
  const double loss = weighted_loss(ScoreMap(2, 2, 0.5), target, 1e-7);
  const double err = std::abs(loss - 1.5 * std::numbers::ln2);
  return {err <= 1e-12, fmt("loss %.17g, error %.3e", loss, err)};
}

Outcome fit_demo() {
  constexpr std::size_t n = 32, top = 10, left = 10, side = 12;
  BinaryMask target(n, n);
  ScoreMap coarse(n, n, 0.2);
  for (std::size_t r = top; r < top + side; ++r)
    for (std::size_t c = left; c < left + side; ++c) {
      target(r, c) = 1;
      coarse(r, c + 2) = 0.8;
    }
  const auto t0 = Clock::now();
  const auto result = fit_guidance(coarse, target, FitConfig{0.1, 200, 1e-7});
  const double secs = seconds_since(t0);
  const double ratio = result.losses.back() / result.losses.front();
  const double iou0 = jaccard(threshold(coarse, 0.5), target);
  const double iou1 = jaccard(threshold(refine(coarse, result.weights), 0.5), target);
  return {ratio <= 0.5 && iou1 > iou0 && secs <= 60.0,
          fmt("loss ratio %.3f, IoU %.3f -> %.3f, %.2f s", ratio, iou0, iou1, secs)};
}

Outcome pipeline_golden() {
  const fs::path data = fs::path(SPNSEG_DATA_DIR) / "toy_sequence";
  const fs::path out = fs::temp_directory_path() / "spnseg_acceptance_toy";
  fs::remove_all(out);
  std::ostringstream sink;
  const auto run = [&](const fs::path& dest, bool craf_on) {
    return run_cli({"pipeline", "--sequence", data.string(), "--annotation", (data / "annotation.pgm").string(),
                    "--config", (data / "run.cfg").string(), "--set", craf_on ? "craf=on" : "craf=off", "--output",
                    dest.string()},
                   sink, sink);
  };
  if (run(out / "on", true) != kExitOk || run(out / "off", false) != kExitOk) {
    return {false, "pipeline command failed: " + sink.str()};
  }

  int differing = 0;
  for (std::size_t f = 0; f < toy::kFrames; ++f) {
    differing += io::read_file(out / "on" / layout::labels(f)) != io::read_file(data / "golden" / layout::labels(f));
    differing += io::read_file(out / "off" / layout::labels(f)) !=
                 io::read_file(data / "golden" / "no_craf" / layout::labels(f));
  }

  // Leaked blob: object 2's high-scoring patch inside object 1.
  const auto toy = toy::build();
  std::size_t kept_off = 0, kept_on = 0;
  for (std::size_t f = 1; f < toy::kFrames; ++f) {
    const auto on = io::read_label_map(out / "on" / layout::labels(f));
    const auto off = io::read_label_map(out / "off" / layout::labels(f));
    const auto& blob_scores = toy.frames[f].scores[1];
    const auto& host_scores = toy.frames[f].scores[0];
    for (std::size_t p = 0; p < blob_scores.size(); ++p) {
      if (blob_scores[p] < 0.9 || host_scores[p] < 0.5) continue;
      kept_off += off[p] == 2;
      kept_on += on[p] == 2;
    }
  }
  fs::remove_all(out);
  return {differing == 0 && kept_off > 0 && kept_on == 0,
          fmt("%d golden files differ; blob pixels labeled 2: %zu without filter, %zu with", differing, kept_off,
              kept_on)};
}

// Structured header corruptions. Each returns the corrupted file and the
// argument position it is passed in.
std::string corrupt_raster(Rng& rng, std::string bytes) {
  auto put = [&](std::size_t off, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes[off + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  };
  switch (rng.index(0, 7)) {
    case 0:
      bytes[rng.index(0, 3)] ^= static_cast<char>(rng.index(1, 255));
      break;
    case 1:
      bytes.resize(rng.index(0, 15));
      break;
    case 2: {
      std::uint32_t c = 0;
      while (c == 1 || c == 12) c = static_cast<std::uint32_t>(rng.index(0, 1000));
      put(12, c);
      break;
    }
    case 3:
      put(rng.coin() ? 4 : 8, 0);
      break;
    case 4:
      put(4, 0xFFFFFFFFu);
      put(8, static_cast<std::uint32_t>(rng.index(1u << 12, 0xFFFFFFFFu)));
      break;
    case 5:
      put(rng.coin() ? 4 : 8, static_cast<std::uint32_t>(rng.index(9, 64)));  // payload too short
      break;
    case 6:
      bytes.resize(bytes.size() - rng.index(1, bytes.size() - 16));
      break;
    default:
      bytes.append(rng.index(1, 8), '\0');
      break;
  }
  return bytes;
}

std::string corrupt_pgm(Rng& rng, const BinaryMask& m) {
  const std::string body(m.size(), '\0');
  const auto w = std::to_string(m.width());
  const auto h = std::to_string(m.height());
  switch (rng.index(0, 6)) {
    case 0:
      return "P2 " + w + " " + h + " 255\n" + body;
    case 1:
      return "P5 " + w + " " + h + " " + std::to_string(rng.index(256, 65535)) + "\n" + body;
    case 2:
      return "P5 " + w + " " + h + " 255\n" + body.substr(0, body.size() - 1);
    case 3:
      return "P5 " + w + " " + h + " 255\n" + body + std::string(rng.index(1, 5), '\0');
    case 4:
      return "P5 " + w + " 255\n" + body;
    case 5:
      return "P5 0 " + h + " 255\n" + body;
    default:
      return "P5 " + w + " " + h + " 255" + body;  // no separator
  }
}

Outcome format_fuzz() {
  Rng rng(1010);
  int roundtrip_failures = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t h = rng.index(1, 12);
    const std::size_t w = rng.index(1, 12);
    std::string bytes;
    switch (t % 3) {
      case 0: {
        ScoreMap s(h, w);
        for (auto& v : s) {
          float f = 0;
          do {
            f = std::bit_cast<float>(static_cast<std::uint32_t>(rng.index(0, 0xFFFFFFFFu)));
          } while (!std::isfinite(f));
          v = f;
        }
        bytes = io::encode_raster(s);
        const auto back = std::get<ScoreMap>(io::decode_raster(bytes));
        roundtrip_failures += io::encode_raster(back) != bytes || !(back == s);
        break;
      }
      case 1: {
        AffinityField a(h, w, std::vector<double>(kAffinityChannels * h * w));
        std::vector<double> v(kAffinityChannels * h * w);
        for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
        a = AffinityField(h, w, v);
        bytes = io::encode_raster(a);
        roundtrip_failures += io::encode_raster(std::get<AffinityField>(io::decode_raster(bytes))) != bytes;
        break;
      }
      default: {
        LabelMap l(h, w);
        for (auto& x : l) x = static_cast<int>(rng.index(0, 255));
        bytes = io::encode_label_map(l);
        roundtrip_failures += !(io::decode_label_map(bytes) == l) || io::encode_label_map(io::decode_label_map(bytes)) != bytes;
        break;
      }
    }
  }

  const fs::path dir = fs::temp_directory_path() / "spnseg_acceptance_fuzz";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path good_x = dir / "x.f32r", good_w = dir / "w.f32r", good_t = dir / "t.pgm", bad = dir / "bad";
  io::write_raster(good_x, ScoreMap(4, 4, 0.3));
  io::write_raster(good_w, AffinityField(4, 4));
  BinaryMask target(4, 4);
  target(1, 1) = 1;
  io::write_binary_mask(good_t, target);

  int wrong_exit = 0;
  std::ostringstream sink;
  for (int t = 0; t < 100; ++t) {
    std::vector<std::string> args;
    if (t % 2 == 0) {
      const bool score = rng.coin();
      const auto base = score ? io::encode_raster(ScoreMap(4, 4, 0.3)) : io::encode_raster(AffinityField(4, 4));
      io::write_file(bad, corrupt_raster(rng, base));
      args = {"propagate", "--input", (score ? bad : good_x).string(), "--affinity", (score ? good_w : bad).string(),
              "--output", (dir / "y.f32r").string()};
    } else {
      io::write_file(bad, corrupt_pgm(rng, target));
      args = {"fit", "--coarse", good_x.string(), "--target", bad.string(), "--output", (dir / "y.f32r").string(),
              "--set", "iterations=1"};
    }
    wrong_exit += run_cli(args, sink, sink) != kExitIo;
  }
  fs::remove_all(dir);
  return {roundtrip_failures == 0 && wrong_exit == 0,
          fmt("%d of 1000 round-trips differ; %d of 100 corrupted inputs not rejected with exit 2",
              roundtrip_failures, wrong_exit)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"identity", identity},
      {"boundedness", boundedness},
      {"impulse decay", impulse_decay},
      {"CRAF oracle equivalence", craf_equivalence},
      {"connected components", connected_components_equivalence},
      {"loss fixture", loss_fixture},
      {"fit demo", fit_demo},
      {"pipeline golden", pipeline_golden},
      {"format fuzz", format_fuzz},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %-26s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
