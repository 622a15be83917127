// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "ssp/analysis.hpp"
#include "ssp/errors.hpp"

using namespace ssp;
using ssp::test::activate_prompts;
using ssp::test::random_tensor;
using ssp::test::random_video;
using ssp::test::tiny_config;

namespace {

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

std::size_t dist(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

// Shortest route without a graph search: either walk the chain, or walk to a
// sampled token, jump through a hub to any slot, then walk on.
std::size_t hop_oracle(const ConnectivityGraph& g, std::size_t from, std::size_t to,
                       const std::vector<std::size_t>& picks) {
  std::size_t best = dist(from, to);
  const auto& layout = g.layout();
  for (std::size_t s = 0; s < layout.size(); ++s) {
    if (layout[s].kind != PositionTag::Kind::kFrame ||
        std::find(picks.begin(), picks.end(), layout[s].patch) == picks.end())
      continue;
    for (std::size_t q = 0; q < layout.size(); ++q)
      if (layout[q].kind == PositionTag::Kind::kPrompt) best = std::min(best, dist(from, s) + 2 + dist(q, to));
  }
  return best;
}

ForwardTrace traced(const ModelConfig& c, const ModelParams& p, const Tensor& video, const ForwardOptions& o = {}) {
  Tape tape;
  ForwardTrace trace;
  forward(tape, video, c, p, o, &trace);
  return trace;
}

}  // namespace

TEST_CASE("transmission examples") {
  const Tensor ones({6, 2}, std::vector<double>(12, 1.0));
  for (std::size_t i = 0; i < 6; ++i) CHECK(transmission(ones, -1.0, i, i, 0) == 1.0);
  CHECK(std::abs(transmission(ones, -1.0, 1, 4, 1) - std::exp(-3.0)) < 1e-12);
  CHECK(transmission(ones, -1.0, 1, 4, 1) == doctest::Approx(0.049787).epsilon(1e-5));
  const Tensor deltas({3, 1}, {9.0, 0.5, 0.25});
  CHECK(std::abs(transmission(deltas, -2.0, 0, 2, 0) - std::exp(-1.5)) < 1e-12);
  CHECK(transmission(deltas, -2.0, 0, 2, 0) == doctest::Approx(0.223130).epsilon(1e-5));
  CHECK_THROWS_AS(transmission(ones, -1.0, 3, 2, 0), ContractError);
  CHECK_THROWS_AS(transmission(ones, -1.0, 0, 6, 0), ContractError);
  CHECK_THROWS_AS(transmission(ones, -1.0, 0, 1, 2), ContractError);

  const Tensor a_log({2, 3}, {0.0, std::log(2.0), 0.5, 0.1, 0.2, 0.3});
  CHECK(std::abs(transmission(deltas, a_log, 0, 2, 0, 1) - std::exp(-1.5)) < 1e-12);
}

TEST_CASE("transmission invariants") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(1e-3, 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor deltas({12, 3});
    for (double& v : deltas.data()) v = u(rng);
    const double a = -u(rng) * 4.0;
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t j = i; j < 12; ++j) {
        const double tij = transmission(deltas, a, i, j, 1);
        CHECK(tij > 0.0);
        CHECK(tij <= 1.0);
        if (j > i) CHECK(tij < 1.0);
        if (j + 1 < 12) CHECK(transmission(deltas, a, i, j + 1, 1) <= tij);
        // Direct product of forget gates.
        double prod = 1.0;
        for (std::size_t k = i + 1; k <= j; ++k) prod *= std::exp(deltas.at(k, 1) * a);
        CHECK(std::abs(prod - tij) < 1e-12);
        for (std::size_t k = j; k < 12; ++k) {
          const double tik = transmission(deltas, a, i, k, 1);
          const double tjk = transmission(deltas, a, j, k, 1);
          CHECK(std::abs(std::log(tik) - (std::log(tij) + std::log(tjk))) < 1e-12);
        }
      }
  }
}

TEST_CASE("decay curves on a recorded trace") {
  const ModelConfig c;  // toy reference configuration
  ModelParams p = init_model(c, 3);
  activate_prompts(p, 4);
  const ForwardTrace trace = traced(c, p, random_video(c, 5));
  const std::size_t n = c.patches();
  for (std::size_t layer = 0; layer < c.L; ++layer) {
    const ScanCapture& cap = trace.layers[layer].block.fwd;
    for (std::size_t ch = 0; ch < c.channels(); ++ch) {
      const DecayCurve curve = decay_curve(trace, layer, ch);
      CHECK(curve.mean[0] == 1.0);
      CHECK(is_monotone(curve));
      REQUIRE(curve.mean.size() > n);
      double min_delta = 1e300;
      for (std::size_t s = 0; s < cap.delta.dim(0); ++s) min_delta = std::min(min_delta, cap.delta.at(s, ch));
      for (std::size_t st = 0; st < c.D; ++st) {
        const double factor = std::exp(static_cast<double>(n - 1) * min_delta * std::abs(cap.a.at(ch, st)));
        CHECK(curve.per_state[n][st] * factor <= curve.per_state[1][st] * (1.0 + 1e-12));
      }
    }
  }
  CHECK_THROWS_AS(decay_curve(trace, c.L, 0), ContractError);
  CHECK_THROWS_AS(decay_curve(trace, 0, c.channels()), ContractError);
  CHECK_THROWS_AS(decay_curve(ForwardTrace{}, 0, 0), ContractError);

  const std::string csv = decay_csv(decay_curve(trace, 1, 2));
  const auto rows = csv_rows(csv);
  CHECK(rows.size() == 1 + decay_curve(trace, 1, 2).mean.size());
  CHECK(std::stod(rows[1][1]) == 1.0);
}

TEST_CASE("path length without prompts follows the scan chain") {
  ModelConfig c = tiny_config();
  c.T = 4;
  c.H = 10;
  c.W = 2;
  c.patch_h = 2;
  c.patch_w = 2;  // N = 5
  REQUIRE(c.patches() == 5);
  const ConnectivityGraph g(4, 5, false);
  CHECK(path_length(c, 1, 4, false) == g.first_token(4) - g.first_token(1));
  CHECK(path_length(c, 1, 4, false) == 15);
  CHECK(path_length(c, 2, 2, false) == 0);
  CHECK(path_length(c, 2, 2, true) == 0);
  CHECK_THROWS_AS(path_length(c, 3, 2, false), ContractError);
  CHECK_THROWS_AS(path_length(c, 1, 5, false), ContractError);
  CHECK(g.max_sequence_hops() == g.sequence_length() - 1);
  CHECK(g.sequence_length() == 1 + 4 * 5);
}

TEST_CASE("path length with inter-frame prompts matches the closed-form route") {
  ModelConfig c = tiny_config();
  c.T = 4;
  c.H = 10;
  c.W = 2;
  for (SamplingStrategy s : {SamplingStrategy::kLastForward, SamplingStrategy::kMiddle,
                             SamplingStrategy::kBidirection, SamplingStrategy::kBiIndependent}) {
    c.strategy = s;
    const ConnectivityGraph g(4, 5, true, c.n_ifs, s);
    const auto picks = sampled_patches(s, 5);
    const std::size_t with = path_length(c, 1, 4, true);
    CHECK(with == hop_oracle(g, g.first_token(1), g.first_token(4), picks));
    CHECK(with <= 5 + 2 + 5);
    CHECK(with < path_length(c, 1, 4, false));
  }
}

TEST_CASE("path length scaling across T and N") {
  for (std::size_t n : {1u, 2u, 5u, 16u, 64u}) {
    for (std::size_t t = 4; t <= 16; ++t) {
      const ConnectivityGraph plain(t, n, false);
      const ConnectivityGraph prompted(t, n, true);
      const auto picks = sampled_patches(SamplingStrategy::kLastForward, n);
      std::size_t max_with = 0;
      for (std::size_t i = 1; i <= t; ++i) {
        // Every frame-to-frame distance is exactly (j - i) * N without prompts.
        for (std::size_t j = i; j <= t; ++j) {
          const std::size_t h = plain.hops(plain.first_token(i), plain.first_token(j));
          CHECK(h == (j - i) * n);
          const std::size_t hw = prompted.hops(prompted.first_token(i), prompted.first_token(j));
          if (n <= 16) CHECK(hw == hop_oracle(prompted, prompted.first_token(i), prompted.first_token(j), picks));
          max_with = std::max(max_with, hw);
        }
      }
      CHECK(max_with <= 2 * n + 2);
      CHECK(plain.hops(plain.first_token(1), plain.first_token(t)) == (t - 1) * n);
      CHECK(plain.max_sequence_hops() == plain.sequence_length() - 1);
    }
  }
}

TEST_CASE("graph structure invariants") {
  const std::size_t t = 5, n = 6;
  const ConnectivityGraph plain(t, n, false);
  CHECK(plain.node_count() == plain.sequence_length());
  for (std::size_t v = 0; v < plain.node_count(); ++v) {
    const auto& succ = plain.successors(v);
    CHECK(succ.size() == ((v == 0 || v + 1 == plain.node_count()) ? 1u : 2u));
  }
  for (std::size_t hubs : {1u, 3u}) {
    for (SamplingStrategy s : {SamplingStrategy::kLastForward, SamplingStrategy::kBidirection}) {
      const ConnectivityGraph g(t, n, true, hubs, s);
      CHECK(g.node_count() == g.sequence_length() + hubs);
      const auto picks = sampled_patches(s, n);
      const auto& layout = g.layout();
      for (std::size_t pos = 0; pos < layout.size(); ++pos) {
        if (layout[pos].kind != PositionTag::Kind::kFrame ||
            std::find(picks.begin(), picks.end(), layout[pos].patch) == picks.end())
          continue;
        for (std::size_t q = 0; q < layout.size(); ++q) {
          if (layout[q].kind != PositionTag::Kind::kPrompt) continue;
          // Exactly two unless the slot sits right next to the sampled token.
          const std::size_t expected = dist(pos, q) == 1 ? 1 : 2;
          CHECK(g.hops(pos, q) == expected);
          std::size_t via_hub = 100;
          for (std::size_t h : g.successors(pos))
            if (h >= g.sequence_length()) {
              const auto& out = g.successors(h);
              if (std::find(out.begin(), out.end(), q) != out.end()) via_hub = 2;
            }
          CHECK(via_hub == 2);
        }
      }
    }
  }
  CHECK_THROWS_AS(ConnectivityGraph(0, 4, false), ContractError);
  CHECK_THROWS_AS(plain.first_token(0), ContractError);
  CHECK_THROWS_AS(plain.first_token(t + 1), ContractError);
}

TEST_CASE("paths_csv lists every frame pair") {
  const ModelConfig c;
  const auto rows = csv_rows(paths_csv(c));
  CHECK(rows[0] == std::vector<std::string>{"from_frame", "to_frame", "frame_distance", "hops_without_ifs",
                                            "hops_with_ifs"});
  CHECK(rows.size() == 1 + c.T * (c.T + 1) / 2);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::size_t gap = std::stoul(rows[r][2]);
    CHECK(std::stoul(rows[r][3]) == gap * c.patches());
    CHECK(std::stoul(rows[r][4]) <= 2 * c.patches() + 2);
  }
}

TEST_CASE("update gate export") {
  const ModelConfig c = tiny_config();
  const std::size_t n = c.patches();
  const std::size_t per_row = c.W / c.patch_w;

  SUBCASE("row count and range") {
    ModelParams p = init_model(c, 1);
    activate_prompts(p, 2);
    const ForwardTrace trace = traced(c, p, random_video(c, 3));
    for (std::size_t layer = 0; layer < c.L; ++layer) {
      const auto rows = csv_rows(update_gates_csv(trace, layer, per_row));
      CHECK(rows[0] == std::vector<std::string>{"frame", "patch", "row", "col", "gate_fwd", "gate_bwd"});
      REQUIRE(rows.size() == 1 + c.T * n);
      std::vector<double> frame_max(c.T, 0.0);
      for (std::size_t r = 1; r < rows.size(); ++r) {
        const double g = std::stod(rows[r][4]);
        CHECK(g >= 0.0);
        CHECK(g <= 1.0);
        const std::size_t f = std::stoul(rows[r][0]), patch = std::stoul(rows[r][1]);
        CHECK(std::stoul(rows[r][2]) == patch / per_row);
        CHECK(std::stoul(rows[r][3]) == patch % per_row);
        frame_max[f] = std::max(frame_max[f], g);
      }
      for (double m : frame_max) CHECK(m == 1.0);
    }
  }
  SUBCASE("constant field normalizes to one") {
    ModelParams p = init_model(c, 1);
    // Keep only the current conv tap so each gate depends on its own token.
    for (MambaLayerParams& l : p.layers)
      for (SelectiveParams* s : {&l.fwd, &l.bwd})
        for (std::size_t t = 0; t + 1 < kCausalConvWidth; ++t)
          for (std::size_t ch = 0; ch < s->conv_kernel.dim(1); ++ch) s->conv_kernel.at(t, ch) = 0.0;
    Tensor video({c.T, c.C, c.H, c.W}, std::vector<double>(c.T * c.C * c.H * c.W, 0.4));
    const ForwardTrace trace = traced(c, p, video, backbone_only());
    const auto rows = csv_rows(update_gates_csv(trace, 0, per_row));
    REQUIRE(rows.size() == 1 + c.T * n);
    for (std::size_t r = 1; r < rows.size(); ++r) {
      CHECK(std::stod(rows[r][4]) == 1.0);
      CHECK(std::stod(rows[r][5]) == 1.0);
    }
  }
  SUBCASE("prompts change the gates") {
    ModelParams p = init_model(c, 1);
    activate_prompts(p, 2);
    const Tensor video = random_video(c, 9);
    const std::string prompted = update_gates_csv(traced(c, p, video), 1, per_row);
    const std::string plain = update_gates_csv(traced(c, p, video, backbone_only()), 1, per_row);
    CHECK(prompted != plain);
  }
  SUBCASE("errors") {
    ModelParams p = init_model(c, 1);
    const ForwardTrace trace = traced(c, p, random_video(c, 3));
    CHECK_THROWS_AS(update_gates_csv(trace, c.L, per_row), ContractError);
    CHECK_THROWS_AS(update_gates_csv(ForwardTrace{}, 0, per_row), ContractError);
  }
}

TEST_CASE("prompt export") {
  const ModelConfig c = tiny_config();
  ModelParams p = init_model(c, 1);
  activate_prompts(p, 2);
  const ForwardTrace trace = traced(c, p, random_video(c, 3));
  const auto rows = csv_rows(prompts_csv(trace, 0));
  CHECK(rows[0] == std::vector<std::string>{"layer", "frame", "channel", "w", "v", "mean_abs_ps", "abs_pt"});
  CHECK(rows.size() == 1 + c.T * c.d);
  CHECK_THROWS_AS(prompts_csv(traced(c, p, random_video(c, 3), backbone_only()), 0), ContractError);
}
