// SPDX-License-Identifier: Apache-2.0
#include "ssp/tape.hpp"

#include <algorithm>

#include "ssp/errors.hpp"

namespace ssp {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParam: return "param";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kSilu: return "silu";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kNeg: return "neg";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kClampMin: return "clamp_min";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kSumAll: return "sum";
    case OpKind::kSumAxis: return "sum_axis";
    case OpKind::kMeanAxis: return "mean_axis";
    case OpKind::kMaxAxis: return "max_axis";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kBroadcastTo: return "broadcast_to";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kReverseRows: return "reverse_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kRmsNorm: return "rmsnorm";
    case OpKind::kConv2dDepthwise: return "conv2d_depthwise";
    case OpKind::kCausalConv1d: return "causal_conv1d";
    case OpKind::kSelectiveScan: return "selective_scan";
    case OpKind::kCrossEntropy: return "cross_entropy";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape->value(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::constant(Tensor value) {
  Node n;
  n.kind = OpKind::kConstant;
  n.value = std::move(value);
  n.value.set_requires_grad(false);
  n.value.set_tape_id(nodes_.size());
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::param(const Tensor& tensor) {
  if (auto it = bound_params_.find(&tensor); it != bound_params_.end()) return {this, it->second};
  Node n;
  n.kind = OpKind::kParam;
  n.external = &tensor;
  n.requires_grad = tensor.requires_grad();
  nodes_.push_back(std::move(n));
  bound_params_.emplace(&tensor, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::record(OpKind kind, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward) {
  Node n;
  n.kind = kind;
  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape != this) throw ContractError(std::string(op_name(kind)) + ": input belongs to a different tape");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    in.push_back(&node_value(nodes_[v.id]));
  }
  n.value = forward(in);
  n.value.set_tape_id(nodes_.size());
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const { return node_value(nodes_.at(id)); }

std::span<const double> Tape::grad(std::size_t id) const { return nodes_.at(id).grad; }

void Tape::backward(Var out) {
  if (out.value().numel() != 1) {
    throw ContractError("backward() without a seed needs a single-element output, got " +
                        to_string(out.shape()));
  }
  const double one = 1.0;
  backward(out, std::span<const double>(&one, 1));
}

void Tape::backward(Var out, std::span<const double> seed) {
  if (out.tape != this) throw ContractError("backward: output belongs to a different tape");
  Node& top = nodes_.at(out.id);
  if (seed.size() != node_value(top).numel()) throw DimensionError("backward: seed size mismatch");
  if (!top.requires_grad) return;
  for (auto& n : nodes_) n.grad.clear();
  top.grad.assign(seed.begin(), seed.end());
  run_backward(out.id);
}

void Tape::run_backward(std::size_t top) {
  std::vector<const Tensor*> in;
  std::vector<double*> gin;
  for (std::size_t k = top + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    in.clear();
    gin.clear();
    for (std::size_t id : n.inputs) {
      Node& src = nodes_[id];
      in.push_back(&node_value(src));
      if (src.requires_grad) {
        if (src.grad.empty()) src.grad.assign(node_value(src).numel(), 0.0);
        gin.push_back(src.grad.data());
      } else {
        gin.push_back(nullptr);
      }
    }
    n.backward(BackwardArgs{in, node_value(n), n.grad, gin});
  }
}

std::vector<std::pair<const Tensor*, std::span<const double>>> Tape::param_grads() const {
  std::vector<std::pair<const Tensor*, std::span<const double>>> out;
  for (const auto& [ptr, id] : bound_params_) {
    const Node& n = nodes_[id];
    if (n.requires_grad && !n.grad.empty()) out.emplace_back(ptr, std::span<const double>(n.grad));
  }
  std::sort(out.begin(), out.end(),
            [this](const auto& a, const auto& b) { return bound_params_.at(a.first) < bound_params_.at(b.first); });
  return out;
}

bool Tape::replay_matches() const {
  std::vector<const Tensor*> in;
  for (const Node& n : nodes_) {
    if (!n.forward) continue;
    in.clear();
    for (std::size_t id : n.inputs) in.push_back(&node_value(nodes_[id]));
    Tensor again = n.forward(in);
    if (!again.bitwise_equal(n.value)) return false;
  }
  return true;
}

}  // namespace ssp
