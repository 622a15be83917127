// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ssp/tape.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8)
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Builds a scalar function on a fresh tape from a leaf bound to x.
using ScalarFn = std::function<Var(Tape&, Var)>;

/// Compares the tape gradient of f at x against central differences with the
/// given step, returning the max relative error over elements.
/// step must lie in [1e-7, 1e-3]; f must produce a single-element output.
double grad_check(const ScalarFn& f, const Tensor& x, double step);

enum class Stencil {
  kSecondOrder,  // (f(x+h) - f(x-h)) / 2h
  kFourthOrder,  // (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h
};

/// Central-difference gradient of a scalar function of externally owned
/// tensors, perturbing each element of `target` in place and restoring it.
std::vector<double> numeric_gradient(const std::function<double()>& f, Tensor& target, double step,
                                     Stencil stencil = Stencil::kSecondOrder);

}  // namespace ssp
