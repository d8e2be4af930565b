// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference computations used by the unit tests and the
// acceptance runner. None of these call the code paths they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include "ltto/tape.hpp"

namespace ltto::testing {

// ---- random computation graphs ------------------------------------------

// A scalar function of one parameter tensor built from a random chain of
// ops. `margin` receives the smallest distance of any relu/clamp input to its
// kink, so callers can reject graphs where finite differences would straddle
// one.
struct RandomGraph {
  Shape param_shape;
  std::vector<double> theta;
  std::set<OpKind> kinds;
  std::function<Tensor(Tape&, const Tensor&, double&)> build;
};

namespace detail {

inline std::vector<double> normals(std::size_t n, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> d(0.0, s);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline void near_kink(const Tensor& x, double kink, double& margin) {
  for (double v : x.data()) margin = std::min(margin, std::abs(v - kink));
}

}  // namespace detail

using Step = std::function<Tensor(Tape&, const Tensor&, double&)>;

inline RandomGraph random_graph(std::mt19937_64& rng) {
  using detail::normals;
  std::uniform_int_distribution<std::size_t> dim(2, 6);
  RandomGraph g;
  std::size_t r = dim(rng), c = dim(rng);
  g.param_shape = {r, c};
  g.theta = normals(r * c, rng);

  std::vector<Step> steps;
  std::uniform_int_distribution<int> pick(0, 15);
  std::uniform_int_distribution<std::size_t> len(3, 7);
  const std::size_t n_steps = len(rng);
  for (std::size_t s = 0; s < n_steps; ++s) {
    const int op = pick(rng);
    switch (op) {
      case 0: {  // matmul with a constant
        const std::size_t k = dim(rng);
        const Tensor m({c, k}, normals(c * k, rng, 1.0 / std::sqrt(static_cast<double>(c))));
        steps.push_back([m](Tape& t, const Tensor& x, double&) { return ops::matmul(t, x, m); });
        g.kinds.insert(OpKind::matmul);
        c = k;
        break;
      }
      case 1:
        steps.push_back([](Tape& t, const Tensor& x, double&) { return ops::transpose(t, x); });
        g.kinds.insert(OpKind::transpose);
        std::swap(r, c);
        break;
      case 2: {  // bias add over the leading axis
        const Tensor b = Tensor::vector(normals(c, rng));
        steps.push_back([b](Tape& t, const Tensor& x, double&) { return ops::add(t, x, b); });
        g.kinds.insert(OpKind::add);
        break;
      }
      case 3: {
        const Tensor b({r, c}, normals(r * c, rng));
        steps.push_back([b](Tape& t, const Tensor& x, double&) { return ops::sub(t, x, b); });
        g.kinds.insert(OpKind::add);
        break;
      }
      case 4:  // x ⊙ x exercises both input slots of mul
        steps.push_back([](Tape& t, const Tensor& x, double&) { return ops::mul(t, x, x); });
        g.kinds.insert(OpKind::mul);
        break;
      case 5:
        steps.push_back([](Tape& t, const Tensor& x, double& margin) {
          detail::near_kink(x, 0.0, margin);
          return ops::relu(t, x);
        });
        g.kinds.insert(OpKind::relu);
        break;
      case 6:
        steps.push_back([](Tape& t, const Tensor& x, double&) { return ops::square(t, x); });
        g.kinds.insert(OpKind::square);
        break;
      case 7: {
        const double k = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
        steps.push_back([k](Tape& t, const Tensor& x, double&) { return ops::scalar_mul(t, x, k); });
        g.kinds.insert(OpKind::scalar_mul);
        break;
      }
      case 8: {
        const std::size_t rr = c, cc = r;
        steps.push_back([rr, cc](Tape& t, const Tensor& x, double&) { return ops::reshape(t, x, {rr, cc}); });
        g.kinds.insert(OpKind::reshape);
        std::swap(r, c);
        break;
      }
      case 9: {  // gather a subset, then back to a column
        std::vector<std::size_t> idx(r * c);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::max<std::size_t>(2, idx.size() / 2));
        const std::size_t n = idx.size();
        steps.push_back([idx, n](Tape& t, const Tensor& x, double&) {
          return ops::reshape(t, ops::gather(t, x, idx), {n, 1});
        });
        g.kinds.insert(OpKind::gather);
        g.kinds.insert(OpKind::reshape);
        r = n;
        c = 1;
        break;
      }
      case 10: {  // bilinear resize of the matrix viewed as an r×c×1 map
        const std::size_t r2 = dim(rng), c2 = dim(rng);
        const auto map = bilinear_resize_map(r, c, r2, c2);
        const std::size_t rr = r, cc = c;
        steps.push_back([map, rr, cc, r2, c2](Tape& t, const Tensor& x, double&) {
          const Tensor m = ops::reshape(t, x, {rr, cc, 1});
          return ops::reshape(t, ops::resample(t, m, map), {r2, c2});
        });
        g.kinds.insert(OpKind::resample);
        g.kinds.insert(OpKind::reshape);
        r = r2;
        c = c2;
        break;
      }
      case 11:
        steps.push_back([](Tape& t, const Tensor& x, double&) {
          return ops::exp(t, ops::scalar_mul(t, x, 0.25));
        });
        g.kinds.insert(OpKind::exp);
        g.kinds.insert(OpKind::scalar_mul);
        break;
      case 12: {
        const double lo = std::uniform_real_distribution<double>(-1.5, -0.2)(rng);
        const double hi = std::uniform_real_distribution<double>(0.2, 1.5)(rng);
        steps.push_back([lo, hi](Tape& t, const Tensor& x, double& margin) {
          detail::near_kink(x, lo, margin);
          detail::near_kink(x, hi, margin);
          return ops::clamp(t, x, lo, hi);
        });
        g.kinds.insert(OpKind::clamp);
        break;
      }
      case 13: {
        const double a = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
        const double b = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        steps.push_back([a, b](Tape& t, const Tensor& x, double&) { return ops::affine(t, x, a, b); });
        g.kinds.insert(OpKind::affine);
        break;
      }
      case 14: {  // least-squares alignment to a fixed target, through (a, b)
        const std::size_t n = r * c, rr = r, cc = c;
        const auto target = normals(n, rng);
        steps.push_back([target, n, rr, cc](Tape& t, const Tensor& x, double&) {
          const Tensor v = ops::reshape(t, x, {n});
          return ops::reshape(t, ops::align_scale_shift(t, v, target), {rr, cc});
        });
        g.kinds.insert(OpKind::align_scale_shift);
        g.kinds.insert(OpKind::reshape);
        break;
      }
      default: {
        const Tensor m({r, c}, normals(r * c, rng));
        steps.push_back([m](Tape& t, const Tensor& x, double&) { return ops::mul(t, x, m); });
        g.kinds.insert(OpKind::mul);
        break;
      }
    }
  }
  const bool use_mean = std::bernoulli_distribution(0.5)(rng);
  g.kinds.insert(use_mean ? OpKind::mean : OpKind::sum);
  // A random linear readout keeps every element's gradient distinct.
  const Tensor w({r, c}, normals(r * c, rng));
  g.build = [steps, use_mean, w](Tape& t, const Tensor& theta, double& margin) {
    Tensor x = theta;
    for (const auto& s : steps) x = s(t, x, margin);
    x = ops::mul(t, x, w);
    return use_mean ? ops::mean(t, x) : ops::sum(t, x);
  };
  return g;
}

struct GradientCheck {
  double relative_error = 0.0;  // ‖analytic − fd‖∞ / max(‖fd‖∞, 1e-8)
  double margin = 0.0;
  // ‖fd‖∞. Chains that make the loss constant in θ (an alignment of a
  // two-dimensional affine family, say) leave only roundoff here.
  double scale = 0.0;
};

inline GradientCheck check_gradient(const RandomGraph& g, double h = 1e-6) {
  GradientCheck out;
  out.margin = std::numeric_limits<double>::infinity();
  Tape tape;
  const Tensor p = tape.parameter(Tensor(g.param_shape, g.theta));
  const Tensor loss = g.build(tape, p, out.margin);
  const Tensor grad = backward(tape, loss).of(p);

  auto f = [&](std::span<const double> th) {
    Tape t(Tape::Mode::no_grad);
    double unused = 0.0;
    return g.build(t, Tensor(g.param_shape, std::vector<double>(th.begin(), th.end())), unused).item();
  };
  const auto fd = finite_difference_grad(f, g.theta, h);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    num = std::max(num, std::abs(grad[i] - fd[i]));
    den = std::max(den, std::abs(fd[i]));
  }
  out.scale = den;
  out.relative_error = num / std::max(den, 1e-8);
  return out;
}

// ---- least-squares alignment by search ----------------------------------

struct SearchFit {
  double a = 0.0, b = 0.0;
  double grid_a = 0.0, grid_b = 0.0;  // best point on the 1e-3 grid
};

// Minimises Σ(a·p + b − s)² over a ∈ [0, 4], b ∈ [−2, 2] by a coarse grid,
// a 1e-3 grid around the coarse winner, then a pattern search: a local grid
// is re-centred until its best point is interior, then shrunk. Re-centring
// matters because a and b are strongly coupled when mean(p) is far from 0.
inline double residual_loss(const std::vector<double>& p, const std::vector<double>& s, double a, double b) {
  double l = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) l += (a * p[i] + b - s[i]) * (a * p[i] + b - s[i]);
  return l;
}

inline SearchFit grid_search_fit(const std::vector<double>& p, const std::vector<double>& s) {
  double n = static_cast<double>(p.size()), sp = 0, ss = 0, spp = 0, sps = 0, sss = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sp += p[i];
    ss += s[i];
    spp += p[i] * p[i];
    sps += p[i] * s[i];
    sss += s[i] * s[i];
  }
  // Moment form, O(1) per point; fine for the coarse levels only.
  auto moments = [&](double a, double b) {
    return a * a * spp + 2 * a * b * sp + n * b * b - 2 * a * sps - 2 * b * ss + sss;
  };
  auto scan = [&](double a0, double a1, double b0, double b1, double step, double& ba, double& bb) {
    double best = std::numeric_limits<double>::infinity();
    const long na = std::lround((a1 - a0) / step), nb = std::lround((b1 - b0) / step);
    for (long i = 0; i <= na; ++i) {
      for (long j = 0; j <= nb; ++j) {
        const double a = a0 + i * step, b = b0 + j * step, l = moments(a, b);
        if (l < best) {
          best = l;
          ba = a;
          bb = b;
        }
      }
    }
  };
  SearchFit out;
  double a = 0, b = 0;
  scan(0.0, 4.0, -2.0, 2.0, 1e-2, a, b);
  scan(std::max(0.0, a - 0.05), std::min(4.0, a + 0.05), std::max(-2.0, b - 0.05), std::min(2.0, b + 0.05),
       1e-3, a, b);
  out.grid_a = a;
  out.grid_b = b;

  constexpr long kHalf = 8;
  for (double step = 2.5e-4; step > 1e-11; step /= 4.0) {
    for (int recentre = 0; recentre < 64; ++recentre) {
      double best = std::numeric_limits<double>::infinity();
      long bi = 0, bj = 0;
      for (long i = -kHalf; i <= kHalf; ++i) {
        for (long j = -kHalf; j <= kHalf; ++j) {
          const double l = residual_loss(p, s, a + i * step, b + j * step);
          if (l < best) {
            best = l;
            bi = i;
            bj = j;
          }
        }
      }
      a += bi * step;
      b += bj * step;
      if (std::abs(bi) < kHalf && std::abs(bj) < kHalf) break;
    }
  }
  out.a = a;
  out.b = b;
  return out;
}

}  // namespace ltto::testing
