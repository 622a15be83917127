// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ssp {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// A tensor that does not require gradients never owns a grad buffer;
/// switching requires_grad off discards any buffer it had.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 element access.
  double& at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }
  double at(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }

  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on);

  bool has_grad() const noexcept { return grad_.has_value(); }
  std::span<double> grad();
  std::span<const double> grad() const;
  /// Allocates (if needed) and zeroes the grad buffer. No-op when frozen.
  void zero_grad();
  void accumulate_grad(std::span<const double> g);

  std::optional<std::size_t> tape_id() const noexcept { return tape_id_; }
  void set_tape_id(std::optional<std::size_t> id) noexcept { tape_id_ = id; }

  /// Same shape and bitwise-identical payload.
  bool bitwise_equal(const Tensor& other) const;

  /// Reinterpret with a new shape of equal element count.
  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
  std::optional<std::size_t> tape_id_;
};

/// i.i.d. N(0, stddev^2) entries.
Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng);
/// i.i.d. U(-bound, bound) entries.
Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng);

}  // namespace ssp
