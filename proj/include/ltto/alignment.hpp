// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <stdexcept>

#include "ltto/tape.hpp"
#include "ltto/world.hpp"

namespace ltto::align {

/// Variance floor below which a prediction cannot determine a scale.
inline constexpr double kVarianceEpsilon = 1e-12;

struct ScaleShift {
  double a = 1.0;  // scale
  double b = 0.0;  // shift, metres
};

class AlignmentError : public std::invalid_argument {
 public:
  enum class Reason { insufficient_observations, degenerate_prediction };
  AlignmentError(Reason reason, const char* what) : std::invalid_argument(what), reason_(reason) {}
  Reason reason() const { return reason_; }

 private:
  Reason reason_;
};

/// argmin_{a,b} Σ (a·pred_k + b − s_k)² via the 2×2 normal equations:
/// a = cov(pred, s) / var(pred), b = mean(s) − a·mean(pred).
ScaleShift fit_scale_shift(std::span<const double> pred_at_omega,
                           std::span<const double> measurements);
ScaleShift fit_scale_shift(const Tensor& pred, const world::SparseObservation& obs);

struct FitOutcome {
  ScaleShift ss;
  bool fallback = false;  // degenerate prediction: a = 1, b = mean difference
};

/// fit_scale_shift, except a degenerate prediction falls back to a pure
/// shift instead of throwing. Still throws for fewer than two observations.
FitOutcome fit_or_fallback(std::span<const double> pred_at_omega,
                           std::span<const double> measurements);

/// a·pred + b elementwise.
Tensor apply(const Tensor& pred, ScaleShift ss);

/// Prediction values at the observed pixels.
std::vector<double> values_at(const Tensor& pred, const world::SparseObservation& obs);

/// Recorded alignment of a depth map to the sparse measurements, returning
/// the aligned values at Ω. With `detach` the fitted (a, b) enter as constants;
/// otherwise gradients flow through the least-squares solve.
Tensor aligned_at_omega(Tape& tape, const Tensor& pred, const world::SparseObservation& obs,
                        bool detach, FitOutcome* fit = nullptr);

}  // namespace ltto::align
