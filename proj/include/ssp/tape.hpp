// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ssp/tensor.hpp"

namespace ssp {

enum class OpKind {
  kConstant,
  kParam,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kSilu,
  kSoftplus,
  kExp,
  kLog,
  kNeg,
  kSigmoid,
  kScale,
  kAddScalar,
  kClampMin,
  kSoftmax,
  kSumAll,
  kSumAxis,
  kMeanAxis,
  kMaxAxis,
  kReshape,
  kTranspose,
  kBroadcastTo,
  kGatherRows,
  kReverseRows,
  kSliceCols,
  kRmsNorm,
  kConv2dDepthwise,
  kCausalConv1d,
  kSelectiveScan,
  kCrossEntropy,
};

std::string_view op_name(OpKind kind);

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// What a backward rule sees: input values, its own output and incoming
/// gradient, and one writable gradient slot per input (null when that input
/// does not need a gradient). Rules accumulate with +=.
struct BackwardArgs {
  std::span<const Tensor* const> in;
  const Tensor& out;
  std::span<const double> gout;
  std::span<double* const> gin;
};

using ForwardFn = std::function<Tensor(std::span<const Tensor* const>)>;
using BackwardFn = std::function<void(const BackwardArgs&)>;

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order;
/// backward() walks them in strictly decreasing order. A tape is confined to
/// one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a value that never receives a gradient.
  Var constant(Tensor value);
  /// Binds an externally owned parameter. Repeated binds of the same tensor
  /// return the same node. The tensor must outlive the tape.
  Var param(const Tensor& tensor);

  Var record(OpKind kind, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward);

  /// Seeds d(out)/d(out) = 1 for a single-element output and propagates.
  void backward(Var out);
  /// Propagates an explicit seed gradient of out's shape.
  void backward(Var out, std::span<const double> seed);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  /// Gradient of a node after backward(); empty if none was produced.
  std::span<const double> grad(std::size_t id) const;

  /// (parameter, gradient) for every bound parameter that requires grad.
  std::vector<std::pair<const Tensor*, std::span<const double>>> param_grads() const;

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  std::span<const std::size_t> inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  /// Re-runs every recorded forward rule from its recorded inputs and
  /// reports whether each output matches bitwise.
  bool replay_matches() const;

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    const Tensor* external = nullptr;
    bool requires_grad = false;
    std::vector<double> grad;
    ForwardFn forward;
    BackwardFn backward;
  };

  const Tensor& node_value(const Node& n) const { return n.external ? *n.external : n.value; }
  void run_backward(std::size_t top);

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> bound_params_;
};

}  // namespace ssp
