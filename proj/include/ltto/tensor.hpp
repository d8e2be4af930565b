// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ltto {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Handle into a recording tape. `tape_uid` identifies the tape, `index` the node.
struct NodeRef {
  std::uint64_t tape_uid = 0;
  std::size_t index = 0;
  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

/// Dense row-major array of doubles. A tensor produced on a tape carries a
/// NodeRef; a tensor without one is a plain value (a constant when fed to an op).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor({}, {value}); }
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double item() const;

  bool on_tape() const { return has_node_; }
  const NodeRef& node() const;
  void attach(NodeRef ref) {
    node_ = ref;
    has_node_ = true;
  }
  /// Copy of the values with the tape handle dropped.
  Tensor detached() const { return Tensor(shape_, data_); }

  /// Same values, new shape of equal element count. Not recorded.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  /// Exact equality of shape and every bit of the data.
  bool bitwise_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  NodeRef node_;
  bool has_node_ = false;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or a diverged optimization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ltto
