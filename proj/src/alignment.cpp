// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#include "ltto/alignment.hpp"

namespace ltto::align {
namespace {

struct Moments {
  double mp = 0.0, ms = 0.0, var = 0.0, cov = 0.0;
};

// Same summation order as the recorded align_scale_shift op, so the (a, b)
// reported here are bitwise those applied on the tape.
Moments moments(std::span<const double> p, std::span<const double> s) {
  Moments m;
  const double n = static_cast<double>(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    m.mp += p[k];
    m.ms += s[k];
  }
  m.mp /= n;
  m.ms /= n;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double dp = p[k] - m.mp;
    m.var += dp * dp;
    m.cov += dp * (s[k] - m.ms);
  }
  m.var /= n;
  m.cov /= n;
  return m;
}

void check_sizes(std::span<const double> p, std::span<const double> s) {
  if (p.size() != s.size()) {
    throw std::invalid_argument("fit_scale_shift: prediction and measurement counts differ");
  }
  if (p.size() < 2) {
    throw AlignmentError(AlignmentError::Reason::insufficient_observations,
                         "fit_scale_shift: insufficient observations (need at least 2)");
  }
}

}  // namespace

ScaleShift fit_scale_shift(std::span<const double> pred_at_omega,
                           std::span<const double> measurements) {
  check_sizes(pred_at_omega, measurements);
  const Moments m = moments(pred_at_omega, measurements);
  if (!(m.var > kVarianceEpsilon)) {
    throw AlignmentError(AlignmentError::Reason::degenerate_prediction,
                         "fit_scale_shift: degenerate prediction (variance at observed pixels "
                         "below 1e-12)");
  }
  const double a = m.cov / m.var;
  return {a, m.ms - a * m.mp};
}

ScaleShift fit_scale_shift(const Tensor& pred, const world::SparseObservation& obs) {
  const auto p = values_at(pred, obs);
  return fit_scale_shift(p, obs.values);
}

FitOutcome fit_or_fallback(std::span<const double> pred_at_omega,
                           std::span<const double> measurements) {
  check_sizes(pred_at_omega, measurements);
  const Moments m = moments(pred_at_omega, measurements);
  if (!(m.var > kVarianceEpsilon)) return {{1.0, m.ms - 1.0 * m.mp}, true};
  const double a = m.cov / m.var;
  return {{a, m.ms - a * m.mp}, false};
}

Tensor apply(const Tensor& pred, ScaleShift ss) {
  Tensor out = pred.detached();
  for (double& v : out.storage()) v = ss.a * v + ss.b;
  return out;
}

std::vector<double> values_at(const Tensor& pred, const world::SparseObservation& obs) {
  std::vector<double> out;
  out.reserve(obs.size());
  for (std::size_t i : obs.flat_indices()) {
    if (i >= pred.numel()) throw std::out_of_range("values_at: observation outside prediction");
    out.push_back(pred[i]);
  }
  return out;
}

Tensor aligned_at_omega(Tape& tape, const Tensor& pred, const world::SparseObservation& obs,
                        bool detach, FitOutcome* fit) {
  const Tensor at_omega = ops::gather(tape, pred, obs.flat_indices());
  const FitOutcome outcome = fit_or_fallback(at_omega.data(), obs.values);
  if (fit) *fit = outcome;
  if (detach) return ops::affine(tape, at_omega, outcome.ss.a, outcome.ss.b);
  return ops::align_scale_shift(tape, at_omega, obs.values, outcome.fallback);
}

}  // namespace ltto::align
