// SPDX-License-Identifier: Apache-2.0
#include "ssp/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <sstream>

#include "ssp/errors.hpp"

namespace ssp {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const LayerTrace& layer_of(const ForwardTrace& trace, std::size_t layer) {
  if (layer >= trace.layers.size()) {
    throw ContractError("layer " + std::to_string(layer) + " out of range for a trace of " +
                        std::to_string(trace.layers.size()) + " layers");
  }
  return trace.layers[layer];
}

const ScanCapture& forward_capture(const ForwardTrace& trace, std::size_t layer) {
  const ScanCapture& c = layer_of(trace, layer).block.fwd;
  if (c.delta.empty()) throw ContractError("trace has no scan capture for layer " + std::to_string(layer));
  return c;
}

}  // namespace

double transmission(const Tensor& deltas, double a, std::size_t i, std::size_t j, std::size_t channel) {
  if (i > j) throw ContractError("transmission: i=" + std::to_string(i) + " > j=" + std::to_string(j));
  if (deltas.rank() != 2 || j >= deltas.dim(0) || channel >= deltas.dim(1)) {
    throw ContractError("transmission: index outside deltas " + to_string(deltas.shape()));
  }
  double log_t = 0.0;
  for (std::size_t k = i + 1; k <= j; ++k) log_t += deltas.at(k, channel) * a;
  return std::exp(log_t);
}

double transmission(const Tensor& deltas, const Tensor& a_log, std::size_t i, std::size_t j, std::size_t channel,
                    std::size_t state) {
  return transmission(deltas, -std::exp(a_log.at(channel, state)), i, j, channel);
}

DecayCurve decay_curve(const ForwardTrace& trace, std::size_t layer, std::size_t channel,
                       std::optional<std::size_t> max_delta) {
  const ScanCapture& cap = forward_capture(trace, layer);
  const std::size_t s = cap.delta.dim(0), e = cap.delta.dim(1), n = cap.a.dim(1);
  if (channel >= e) throw ContractError("decay_curve: channel " + std::to_string(channel) + " out of range");
  const std::size_t lag_max = std::min(max_delta.value_or(s / 2), s - 1);
  const std::size_t origins = s - lag_max;

  DecayCurve curve;
  curve.layer = layer;
  curve.channel = channel;
  curve.origins = origins;
  curve.per_state.assign(lag_max + 1, std::vector<double>(n, 0.0));
  curve.mean.assign(lag_max + 1, 0.0);
  for (std::size_t st = 0; st < n; ++st) {
    const double a = cap.a.at(channel, st);
    for (std::size_t i = 0; i < origins; ++i) {
      // Running log-space sum along the lag for a fixed origin.
      double log_t = 0.0;
      for (std::size_t lag = 0; lag <= lag_max; ++lag) {
        if (lag > 0) log_t += cap.delta.at(i + lag, channel) * a;
        curve.per_state[lag][st] += std::exp(log_t);
      }
    }
  }
  for (std::size_t lag = 0; lag <= lag_max; ++lag) {
    double total = 0.0;
    for (double& v : curve.per_state[lag]) {
      v /= static_cast<double>(origins);
      total += v;
    }
    curve.mean[lag] = total / static_cast<double>(n);
  }
  return curve;
}

bool is_monotone(const DecayCurve& curve) {
  for (std::size_t lag = 1; lag < curve.mean.size(); ++lag) {
    if (curve.mean[lag] > curve.mean[lag - 1]) return false;
    for (std::size_t st = 0; st < curve.per_state[lag].size(); ++st)
      if (curve.per_state[lag][st] > curve.per_state[lag - 1][st]) return false;
  }
  return true;
}

std::string decay_csv(const DecayCurve& curve) {
  std::ostringstream out;
  out << "delta,mean";
  const std::size_t n = curve.per_state.empty() ? 0 : curve.per_state[0].size();
  for (std::size_t st = 0; st < n; ++st) out << ",state" << st;
  out << '\n';
  for (std::size_t lag = 0; lag < curve.mean.size(); ++lag) {
    out << lag << ',' << num(curve.mean[lag]);
    for (double v : curve.per_state[lag]) out << ',' << num(v);
    out << '\n';
  }
  return out.str();
}

std::string decay_pairs_csv(const ForwardTrace& trace, std::size_t layer, std::size_t channel, std::size_t state) {
  const ScanCapture& cap = forward_capture(trace, layer);
  if (channel >= cap.delta.dim(1) || state >= cap.a.dim(1)) throw ContractError("decay_pairs: index out of range");
  const std::size_t s = cap.delta.dim(0);
  const double a = cap.a.at(channel, state);
  std::ostringstream out;
  out << "i,j,value\n";
  for (std::size_t i = 0; i < s; ++i) {
    double log_t = 0.0;
    for (std::size_t j = i; j < s; ++j) {
      if (j > i) log_t += cap.delta.at(j, channel) * a;
      out << i << ',' << j << ',' << num(std::exp(log_t)) << '\n';
    }
  }
  return out.str();
}

ConnectivityGraph::ConnectivityGraph(std::size_t frames, std::size_t patches, bool with_ifs, std::size_t hubs,
                                     SamplingStrategy strategy)
    : frames_(frames), patches_(patches),
      layout_(with_ifs ? slotted_layout(frames, patches) : plain_layout(frames, patches)) {
  if (frames == 0 || patches == 0) throw ContractError("ConnectivityGraph: empty sequence");
  const std::size_t s = layout_.size();
  adjacency_.assign(s + (with_ifs ? hubs : 0), {});
  for (std::size_t i = 0; i + 1 < s; ++i) {
    adjacency_[i].push_back(i + 1);
    adjacency_[i + 1].push_back(i);
  }
  if (!with_ifs) return;
  const std::vector<std::size_t> picks = sampled_patches(strategy, patches);
  for (std::size_t h = 0; h < hubs; ++h) {
    const std::size_t hub = s + h;
    for (std::size_t pos = 0; pos < s; ++pos) {
      const PositionTag& tag = layout_[pos];
      if (tag.kind == PositionTag::Kind::kFrame &&
          std::find(picks.begin(), picks.end(), tag.patch) != picks.end()) {
        adjacency_[pos].push_back(hub);
      } else if (tag.kind == PositionTag::Kind::kPrompt) {
        adjacency_[hub].push_back(pos);
      }
    }
  }
}

std::size_t ConnectivityGraph::first_token(std::size_t frame) const {
  if (frame == 0 || frame > frames_) {
    throw ContractError("frame " + std::to_string(frame) + " outside 1.." + std::to_string(frames_));
  }
  for (std::size_t pos = 0; pos < layout_.size(); ++pos) {
    const PositionTag& t = layout_[pos];
    if (t.kind == PositionTag::Kind::kFrame && t.frame == frame - 1 && t.patch == 0) return pos;
  }
  throw ContractError("frame has no tokens");
}

std::vector<std::size_t> ConnectivityGraph::bfs(std::size_t from) const {
  constexpr std::size_t kUnseen = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(adjacency_.size(), kUnseen);
  std::deque<std::size_t> queue{from};
  dist[from] = 0;
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (std::size_t v : adjacency_[u]) {
      if (dist[v] != kUnseen) continue;
      dist[v] = dist[u] + 1;
      queue.push_back(v);
    }
  }
  return dist;
}

std::size_t ConnectivityGraph::hops(std::size_t from, std::size_t to) const {
  if (from >= node_count() || to >= node_count()) throw ContractError("hops: node out of range");
  const std::size_t d = bfs(from)[to];
  if (d == std::numeric_limits<std::size_t>::max()) {
    throw ContractError("node " + std::to_string(to) + " unreachable from " + std::to_string(from));
  }
  return d;
}

std::size_t ConnectivityGraph::max_sequence_hops() const {
  std::size_t best = 0;
  for (std::size_t u = 0; u < layout_.size(); ++u) {
    const std::vector<std::size_t> dist = bfs(u);
    for (std::size_t v = 0; v < layout_.size(); ++v) {
      if (dist[v] == std::numeric_limits<std::size_t>::max()) throw ContractError("graph is not connected");
      best = std::max(best, dist[v]);
    }
  }
  return best;
}

std::size_t path_length(const ModelConfig& config, std::size_t from_frame, std::size_t to_frame, bool with_ifs) {
  if (from_frame > to_frame) throw ContractError("path_length: from_frame must not exceed to_frame");
  ConnectivityGraph g(config.T, config.patches(), with_ifs, config.n_ifs, config.strategy);
  return g.hops(g.first_token(from_frame), g.first_token(to_frame));
}

std::string paths_csv(const ModelConfig& config) {
  const ConnectivityGraph plain(config.T, config.patches(), false);
  const ConnectivityGraph prompted(config.T, config.patches(), true, config.n_ifs, config.strategy);
  std::ostringstream out;
  out << "from_frame,to_frame,frame_distance,hops_without_ifs,hops_with_ifs\n";
  for (std::size_t i = 1; i <= config.T; ++i)
    for (std::size_t j = i; j <= config.T; ++j)
      out << i << ',' << j << ',' << (j - i) << ',' << plain.hops(plain.first_token(i), plain.first_token(j)) << ','
          << prompted.hops(prompted.first_token(i), prompted.first_token(j)) << '\n';
  return out.str();
}

std::string update_gates_csv(const ForwardTrace& trace, std::size_t layer, std::size_t patches_per_row) {
  const LayerTrace& lt = layer_of(trace, layer);
  const auto& fwd = lt.block.fwd.update_gate_norm;
  const auto& bwd = lt.block.bwd.update_gate_norm;
  if (fwd.empty() || bwd.empty()) throw ContractError("update gates were not captured for layer " + std::to_string(layer));
  if (patches_per_row == 0) throw ContractError("update_gates_csv: zero patches per row");

  std::size_t frames = 0;
  for (const PositionTag& t : lt.positions)
    if (t.kind == PositionTag::Kind::kFrame) frames = std::max(frames, t.frame + 1);
  std::vector<double> max_f(frames, 0.0), max_b(frames, 0.0);
  for (std::size_t pos = 0; pos < lt.positions.size(); ++pos) {
    const PositionTag& t = lt.positions[pos];
    if (t.kind != PositionTag::Kind::kFrame) continue;
    max_f[t.frame] = std::max(max_f[t.frame], fwd[pos]);
    max_b[t.frame] = std::max(max_b[t.frame], bwd[pos]);
  }
  std::ostringstream out;
  out << "frame,patch,row,col,gate_fwd,gate_bwd\n";
  for (std::size_t pos = 0; pos < lt.positions.size(); ++pos) {
    const PositionTag& t = lt.positions[pos];
    if (t.kind != PositionTag::Kind::kFrame) continue;
    const double gf = max_f[t.frame] > 0 ? fwd[pos] / max_f[t.frame] : 0.0;
    const double gb = max_b[t.frame] > 0 ? bwd[pos] / max_b[t.frame] : 0.0;
    out << t.frame << ',' << t.patch << ',' << t.patch / patches_per_row << ',' << t.patch % patches_per_row << ','
        << num(gf) << ',' << num(gb) << '\n';
  }
  return out.str();
}

std::string prompts_csv(const ForwardTrace& trace, std::size_t layer) {
  const LayerTrace& lt = layer_of(trace, layer);
  if (!lt.prompts) throw ContractError("no prompts recorded for layer " + std::to_string(layer));
  const PromptState& ps = *lt.prompts;
  std::ostringstream out;
  out << "layer,frame,channel,w,v,mean_abs_ps,abs_pt\n";
  const std::size_t frames = ps.w.dim(0), d = ps.w.dim(1);
  const std::size_t n = ps.p_s.empty() ? 0 : ps.p_s.dim(1);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t c = 0; c < d; ++c) {
      double mean_ps = 0.0;
      for (std::size_t k = 0; k < n; ++k) mean_ps += std::abs(ps.p_s[(f * n + k) * d + c]);
      if (n) mean_ps /= static_cast<double>(n);
      const double pt = ps.p_t.empty() ? 0.0 : std::abs(ps.p_t.at(f, c));
      out << layer << ',' << f << ',' << c << ',' << num(ps.w.at(f, c)) << ',' << num(ps.v.at(f, c)) << ','
          << num(mean_ps) << ',' << num(pt) << '\n';
    }
  }
  return out.str();
}

}  // namespace ssp
