// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

// Define-by-run reverse-mode differentiation. A Tape records one node per op
// in execution order (which is a topological order), and backward() walks it
// once in reverse.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "ltto/tensor.hpp"

namespace ltto {

enum class OpKind {
  leaf,
  matmul,
  transpose,
  add,
  mul,
  relu,
  sum,
  mean,
  square,
  scalar_mul,
  reshape,
  gather,
  resample,
  exp,
  clamp,
  affine,
  align_scale_shift,
};

std::string_view op_name(OpKind kind);

/// Fixed spatial linear operator on H×W×C maps: every output pixel is a
/// weighted sum of input pixels, applied identically to each channel.
/// Bilinear resizing and box smoothing are both expressed this way.
struct ResampleMap {
  struct Tap {
    std::uint32_t src;
    double weight;
  };
  std::size_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  std::vector<std::uint32_t> row_start;  // out_h*out_w + 1 offsets into taps
  std::vector<Tap> taps;

  std::size_t tap_count() const { return taps.size(); }
};

/// Half-pixel-centred bilinear interpolation (align_corners = false).
std::shared_ptr<const ResampleMap> bilinear_resize_map(std::size_t in_h, std::size_t in_w,
                                                       std::size_t out_h, std::size_t out_w);
/// (2·radius+1)² box average with edge renormalisation.
std::shared_ptr<const ResampleMap> box_smoothing_map(std::size_t h, std::size_t w,
                                                     std::size_t radius);

struct OpAttrs {
  double a = 0.0;  // scalar_mul factor, affine scale, clamp lower bound
  double b = 0.0;  // affine shift, clamp upper bound
  Shape shape;     // reshape target
  std::vector<std::size_t> indices;          // gather
  std::shared_ptr<const ResampleMap> map;    // resample
  std::vector<double> target;                // align_scale_shift measurements
  bool fallback = false;                     // align_scale_shift: shift-only
};

class Gradients;
class Tape;
Gradients backward(Tape& tape, const Tensor& loss);

struct FlopCount {
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
  std::uint64_t total() const { return forward + backward; }
};

class Tape {
 public:
  enum class Mode { record, no_grad };

  explicit Tape(Mode mode = Mode::record);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::record; }
  std::uint64_t uid() const { return uid_; }
  std::size_t size() const { return nodes_.size(); }

  /// Leaf that never receives a gradient.
  Tensor constant(const Tensor& value);
  /// Leaf registered as trainable; backward() returns its gradient.
  Tensor parameter(const Tensor& value);

  Tensor record(OpKind kind, std::span<const Tensor> inputs, OpAttrs attrs = {});

  const FlopCount& flops() const { return flops_; }

  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<std::size_t> inputs;
    OpAttrs attrs;
    Tensor value;
    bool trainable = false;
  };
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  friend class Gradients;
  friend Gradients backward(Tape& tape, const Tensor& loss);

  std::size_t input_node(const Tensor& t);
  Tensor push(OpKind kind, std::vector<std::size_t> inputs, OpAttrs attrs, Tensor value,
              bool trainable);

  Mode mode_;
  std::uint64_t uid_;
  std::vector<Node> nodes_;
  FlopCount flops_;
};

/// Gradients of a scalar with respect to every parameter registered on a tape.
class Gradients {
 public:
  bool contains(const Tensor& param) const;
  const Tensor& of(const Tensor& param) const;
  std::size_t size() const { return grads_.size(); }
  const std::map<std::size_t, Tensor>& entries() const { return grads_; }

 private:
  friend Gradients backward(Tape& tape, const Tensor& loss);
  std::uint64_t tape_uid_ = 0;
  std::map<std::size_t, Tensor> grads_;
};

/// Reverse sweep from a scalar loss recorded on `tape`.
Gradients backward(Tape& tape, const Tensor& loss);

/// Central differences (f(θ+h·e_i) − f(θ−h·e_i)) / 2h for every coordinate.
std::vector<double> finite_difference_grad(
    const std::function<double(std::span<const double>)>& f, std::span<const double> theta,
    double h);

// Op helpers. Each records one node on `tape` (or just evaluates in no_grad mode).
namespace ops {

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);
/// Same-shape add, or `b` broadcast over the leading axes of `a` (bias add).
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor relu(Tape& tape, const Tensor& a);
Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);
Tensor square(Tape& tape, const Tensor& a);
Tensor scalar_mul(Tape& tape, const Tensor& a, double c);
Tensor reshape(Tape& tape, const Tensor& a, Shape shape);
Tensor gather(Tape& tape, const Tensor& a, std::vector<std::size_t> flat_indices);
Tensor resample(Tape& tape, const Tensor& a, std::shared_ptr<const ResampleMap> map);
Tensor exp(Tape& tape, const Tensor& a);
Tensor clamp(Tape& tape, const Tensor& a, double lo, double hi);
/// a·x + b with constant a, b.
Tensor affine(Tape& tape, const Tensor& x, double a, double b);
/// Least-squares scale–shift alignment of a 1-D prediction to a constant
/// target, differentiable through the fitted (a, b). With `fallback` the scale
/// is pinned to 1 and only the mean shift is applied.
Tensor align_scale_shift(Tape& tape, const Tensor& pred, std::vector<double> target,
                         bool fallback = false);

}  // namespace ops
}  // namespace ltto
