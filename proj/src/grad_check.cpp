// SPDX-License-Identifier: Apache-2.0
#include "ssp/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "ssp/errors.hpp"

namespace ssp {

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw DimensionError("max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

std::vector<double> numeric_gradient(const std::function<double()>& f, Tensor& target, double step,
                                     Stencil stencil) {
  std::vector<double> g(target.numel());
  for (std::size_t i = 0; i < target.numel(); ++i) {
    const double orig = target[i];
    auto at = [&](double offset) {
      target[i] = orig + offset;
      return f();
    };
    if (stencil == Stencil::kSecondOrder) {
      g[i] = (at(step) - at(-step)) / (2.0 * step);
    } else {
      g[i] = (8.0 * (at(step) - at(-step)) - (at(2.0 * step) - at(-2.0 * step))) / (12.0 * step);
    }
    target[i] = orig;
  }
  return g;
}

double grad_check(const ScalarFn& f, const Tensor& x, double step) {
  if (!(step >= 1e-7 && step <= 1e-3)) throw ContractError("grad_check: step must lie in [1e-7, 1e-3]");

  Tensor leaf = x;
  leaf.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape tape;
    Var in = tape.param(leaf);
    Var out = f(tape, in);
    if (out.value().numel() != 1) {
      throw ContractError("grad_check: function must be scalar, got " + to_string(out.shape()));
    }
    tape.backward(out);
    auto g = tape.grad(in.id);
    analytic.assign(g.begin(), g.end());
    if (analytic.empty()) analytic.assign(leaf.numel(), 0.0);
  }

  auto eval = [&]() {
    Tape tape;
    return f(tape, tape.param(leaf)).value().item();
  };
  const std::vector<double> numeric = numeric_gradient(eval, leaf, step);
  return max_relative_error(analytic, numeric);
}

}  // namespace ssp
