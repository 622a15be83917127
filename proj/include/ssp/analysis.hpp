// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssp/model.hpp"
#include "ssp/prompt.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

/// exp(sum_{k=i+1..j} delta[k, channel] * a), accumulated in log space.
/// Throws ContractError if i > j or an index is out of range.
double transmission(const Tensor& deltas, double a, std::size_t i, std::size_t j, std::size_t channel);

/// Same with a = -exp(a_log[channel, state]).
double transmission(const Tensor& deltas, const Tensor& a_log, std::size_t i, std::size_t j, std::size_t channel,
                    std::size_t state);

struct DecayCurve {
  std::size_t layer = 0;
  std::size_t channel = 0;
  std::vector<std::vector<double>> per_state;  // [delta][state]
  std::vector<double> mean;                    // mean over states, per delta
  std::size_t origins = 0;                     // number of start positions averaged
};

/// Mean transmission over start positions i in [0, S-1-max_delta] for each
/// lag 0..max_delta, using the forward-scan deltas recorded at `layer`.
/// The shared origin set makes every curve non-increasing. max_delta
/// defaults to S/2. Throws ContractError for an unknown layer or channel or
/// a trace without captures.
DecayCurve decay_curve(const ForwardTrace& trace, std::size_t layer, std::size_t channel,
                       std::optional<std::size_t> max_delta = std::nullopt);

/// True if mean and every per-state column are non-increasing in the lag.
bool is_monotone(const DecayCurve& curve);

std::string decay_csv(const DecayCurve& curve);
/// Every (i, i + lag) transmission for one channel and state, for inspection.
std::string decay_pairs_csv(const ForwardTrace& trace, std::size_t layer, std::size_t channel, std::size_t state);

/// Directed graph over scan positions plus one hub per inter-frame boundary.
class ConnectivityGraph {
 public:
  /// Promptless (with_ifs = false) or with prompt slots and hubs.
  ConnectivityGraph(std::size_t frames, std::size_t patches, bool with_ifs, std::size_t hubs = 1,
                    SamplingStrategy strategy = SamplingStrategy::kLastForward);

  std::size_t node_count() const { return adjacency_.size(); }
  std::size_t sequence_length() const { return layout_.size(); }
  const std::vector<PositionTag>& layout() const { return layout_; }
  const std::vector<std::size_t>& successors(std::size_t node) const { return adjacency_.at(node); }
  /// Sequence index of the first token of 1-based frame `frame`.
  std::size_t first_token(std::size_t frame) const;

  /// Breadth-first hop count; throws ContractError if unreachable.
  std::size_t hops(std::size_t from, std::size_t to) const;
  /// Largest shortest-path length between any two sequence positions.
  std::size_t max_sequence_hops() const;

 private:
  std::vector<std::size_t> bfs(std::size_t from) const;

  std::size_t frames_;
  std::size_t patches_;
  std::vector<PositionTag> layout_;
  std::vector<std::vector<std::size_t>> adjacency_;
};

/// Hops from the first token of frame i to the first token of frame j
/// (1-based, i <= j <= T). Throws ContractError on bad frame indices.
std::size_t path_length(const ModelConfig& config, std::size_t from_frame, std::size_t to_frame, bool with_ifs);

/// from_frame,to_frame,frame_distance,hops_without_ifs,hops_with_ifs for all i <= j.
std::string paths_csv(const ModelConfig& config);

/// Per frame token: frame,patch,row,col,gate_fwd,gate_bwd with the update
/// gate norms max-normalized within each frame. Throws ContractError when
/// the trace has no capture for `layer`.
std::string update_gates_csv(const ForwardTrace& trace, std::size_t layer, std::size_t patches_per_row);

/// layer,frame,channel,w,v,mean_abs_ps,abs_pt for one layer; empty prompt
/// fields are written as 0. Throws ContractError if the layer has no prompts.
std::string prompts_csv(const ForwardTrace& trace, std::size_t layer);

}  // namespace ssp
