// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ltto/tape.hpp"
#include "support/oracles.hpp"

namespace ltto {
namespace {

TEST(Ops, MatmulIdentity) {
  Tape t;
  const Tensor y = ops::matmul(t, Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1, 0}, {0, 1}}));
  EXPECT_TRUE(y.bitwise_equal(Tensor::matrix({{1, 2}, {3, 4}})));
}

TEST(Ops, ReluDefinition) {
  Tape t;
  const Tensor y = ops::relu(t, Tensor::vector({-1, 0, 2}));
  EXPECT_TRUE(y.bitwise_equal(Tensor::vector({0, 0, 2})));
}

TEST(Ops, GatherSelectsIndices) {
  Tape t;
  const Tensor y = ops::gather(t, Tensor::vector({5, 6, 7, 8}), {0, 3});
  EXPECT_TRUE(y.bitwise_equal(Tensor::vector({5, 8})));
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  Tape t;
  try {
    ops::matmul(t, Tensor({2, 3}), Tensor({2, 3}));
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2"), std::string::npos) << msg;
  }
  EXPECT_THROW(ops::add(t, Tensor({2, 3}), Tensor({4})), ShapeError);
  EXPECT_THROW(ops::mul(t, Tensor({2}), Tensor({3})), ShapeError);
}

TEST(Backward, SumOfSquares) {
  Tape t;
  const Tensor w = t.parameter(Tensor::vector({1, 2, 3}));
  const Tensor loss = ops::sum(t, ops::square(t, w));
  EXPECT_TRUE(backward(t, loss).of(w).bitwise_equal(Tensor::vector({2, 4, 6})));
}

TEST(Backward, ZeroResidualGivesZeroGradient) {
  Tape t;
  const Tensor p = t.parameter(Tensor::vector({1.0, 2.0, 4.0}));
  const std::vector<double> s = {3.0, 5.0, 9.0};  // exactly 2p + 1
  const Tensor aligned = ops::align_scale_shift(t, p, s);
  const Tensor loss = ops::mean(t, ops::square(t, ops::sub(t, aligned, Tensor::vector(s))));
  const Tensor g = backward(t, loss).of(p);
  for (double v : g.data()) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(Backward, ErrorsForNonScalarOrForeignLoss) {
  Tape t;
  const Tensor w = t.parameter(Tensor::vector({1, 2}));
  EXPECT_ANY_THROW(backward(t, ops::square(t, w)));
  Tape other;
  const Tensor v = other.parameter(Tensor::vector({1, 2}));
  const Tensor l = ops::sum(other, v);
  EXPECT_ANY_THROW(backward(t, l));
  EXPECT_ANY_THROW(backward(t, Tensor::scalar(1.0)));
}

TEST(Backward, ConstantsGetNoEntry) {
  Tape t;
  const Tensor w = t.parameter(Tensor::vector({1, 2}));
  const Tensor c = t.constant(Tensor::vector({3, 4}));
  const Gradients g = backward(t, ops::sum(t, ops::mul(t, w, c)));
  EXPECT_TRUE(g.contains(w));
  EXPECT_FALSE(g.contains(c));
  EXPECT_EQ(g.size(), 1u);
}

TEST(Backward, ThreeLayerReluNetMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  auto draw = [&](std::size_t k) {
    std::vector<double> v(k);
    for (double& x : v) x = n(rng);
    return v;
  };
  const Tensor x({6, 4}, draw(24));
  // Five parameters: W1, b1, W2, b2, W3.
  const std::vector<Shape> shapes = {{4, 5}, {5}, {5, 3}, {3}, {3, 1}};
  std::vector<std::vector<double>> values;
  std::vector<double> flat;
  for (const auto& s : shapes) {
    values.push_back(draw(s.size() == 1 ? s[0] : s[0] * s[1]));
    flat.insert(flat.end(), values.back().begin(), values.back().end());
  }
  auto forward = [&](Tape& t, const std::vector<Tensor>& p) {
    Tensor h = ops::relu(t, ops::add(t, ops::matmul(t, x, p[0]), p[1]));
    h = ops::relu(t, ops::add(t, ops::matmul(t, h, p[2]), p[3]));
    return ops::mean(t, ops::square(t, ops::matmul(t, h, p[4])));
  };
  Tape t;
  std::vector<Tensor> params;
  for (std::size_t i = 0; i < shapes.size(); ++i) params.push_back(t.parameter(Tensor(shapes[i], values[i])));
  const Gradients g = backward(t, forward(t, params));
  std::vector<double> analytic;
  for (const auto& p : params) analytic.insert(analytic.end(), g.of(p).data().begin(), g.of(p).data().end());

  auto f = [&](std::span<const double> th) {
    Tape nt(Tape::Mode::no_grad);
    std::vector<Tensor> p;
    std::size_t off = 0;
    for (const auto& s : shapes) {
      const std::size_t k = s.size() == 1 ? s[0] : s[0] * s[1];
      p.emplace_back(s, std::vector<double>(th.begin() + off, th.begin() + off + k));
      off += k;
    }
    return forward(nt, p).item();
  };
  const auto fd = finite_difference_grad(f, flat, 1e-6);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    num = std::max(num, std::abs(analytic[i] - fd[i]));
    den = std::max(den, std::abs(fd[i]));
  }
  EXPECT_LT(num / den, 1e-5);
}

TEST(FiniteDifference, Basics) {
  const auto g = finite_difference_grad([](std::span<const double> th) { return th[0] * th[0]; },
                                        std::vector<double>{3.0}, 1e-6);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
  const auto z = finite_difference_grad([](std::span<const double>) { return 2.5; },
                                        std::vector<double>{1.0, -1.0}, 1e-6);
  EXPECT_EQ(z[0], 0.0);
  EXPECT_EQ(z[1], 0.0);
}

TEST(Backward, RandomGraphsCoverEveryOp) {
  std::mt19937_64 rng(11);
  std::set<OpKind> covered;
  std::size_t accepted = 0;
  while (accepted < 60) {
    const auto g = testing::random_graph(rng);
    testing::GradientCheck c;
    try {
      c = testing::check_gradient(g);
    } catch (const std::invalid_argument&) {
      continue;  // degenerate alignment input; draw another graph
    }
    if (c.margin < 1e-3 || c.scale < 1e-6) continue;
    ++accepted;
    covered.insert(g.kinds.begin(), g.kinds.end());
    EXPECT_LT(c.relative_error, 1e-5);
  }
  for (OpKind k : {OpKind::matmul, OpKind::transpose, OpKind::add, OpKind::mul, OpKind::relu, OpKind::sum,
                   OpKind::mean, OpKind::square, OpKind::scalar_mul, OpKind::reshape, OpKind::gather,
                   OpKind::resample, OpKind::exp, OpKind::clamp, OpKind::affine, OpKind::align_scale_shift}) {
    EXPECT_TRUE(covered.count(k)) << op_name(k);
  }
}

TEST(Backward, LinearInUpstreamScale) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = testing::random_graph(rng);
    const double c = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
    double m = 0;
    Tape t1;
    const Tensor p1 = t1.parameter(Tensor(g.param_shape, g.theta));
    Tensor l1;
    try {
      l1 = g.build(t1, p1, m);
    } catch (const std::invalid_argument&) {
      continue;
    }
    const Tensor g1 = backward(t1, l1).of(p1);
    Tape t2;
    const Tensor p2 = t2.parameter(Tensor(g.param_shape, g.theta));
    const Tensor g2 = backward(t2, ops::scalar_mul(t2, g.build(t2, p2, m), c)).of(p2);
    for (std::size_t i = 0; i < g1.numel(); ++i)
      EXPECT_NEAR(g2[i], c * g1[i], 1e-12 * (1.0 + std::abs(c * g1[i])));
  }
}

TEST(Backward, DeterministicRerun) {
  std::mt19937_64 a(21), b(21);
  const auto ga = testing::random_graph(a);
  const auto gb = testing::random_graph(b);
  double m = 0;
  Tape ta, tb;
  const Tensor pa = ta.parameter(Tensor(ga.param_shape, ga.theta));
  const Tensor pb = tb.parameter(Tensor(gb.param_shape, gb.theta));
  const Tensor la = ga.build(ta, pa, m), lb = gb.build(tb, pb, m);
  EXPECT_TRUE(la.bitwise_equal(lb));
  EXPECT_TRUE(backward(ta, la).of(pa).bitwise_equal(backward(tb, lb).of(pb)));
}

TEST(Backward, LinearLayerGradientIsOuterProduct) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> w(5 * 7), x(7), c(5);
  for (double& v : w) v = n(rng);
  for (double& v : x) v = n(rng);
  for (double& v : c) v = n(rng);
  Tape t;
  const Tensor W = t.parameter(Tensor({5, 7}, w));
  const Tensor y = ops::matmul(t, Tensor({1, 7}, x), ops::transpose(t, W));  // 1×5
  // L = Σ c_i y_i + ½ Σ y_i², so g = c + y.
  const Tensor loss = ops::add(t, ops::sum(t, ops::mul(t, y, Tensor({1, 5}, c))),
                               ops::scalar_mul(t, ops::sum(t, ops::square(t, y)), 0.5));
  const Tensor grad = backward(t, loss).of(W);
  for (std::size_t i = 0; i < 5; ++i) {
    const double gi = c[i] + y[i];
    for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(grad[i * 7 + j], gi * x[j], 1e-12);
  }
}

TEST(Flops, MatmulCountsMultiplyAdds) {
  Tape t;
  ops::matmul(t, Tensor({3, 4}), Tensor({4, 5}));
  EXPECT_EQ(t.flops().forward, 2u * 3 * 4 * 5);
}

TEST(Tape, NoGradRecordsNothing) {
  Tape t(Tape::Mode::no_grad);
  const Tensor y = ops::relu(t, Tensor::vector({1, -1}));
  EXPECT_FALSE(t.recording());
  EXPECT_EQ(t.size(), 0u);
  EXPECT_FALSE(y.on_tape());
  EXPECT_ANY_THROW(t.parameter(Tensor::vector({1})));
}

}  // namespace
}  // namespace ltto
