// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "ltto/model.hpp"

namespace ltto {
namespace {

using model::FoundationModel;
using model::LayerId;
using model::Part;

const FoundationModel& small_model() {
  static const FoundationModel m = [] {
    model::ModelConfig c;
    c.encoder_width = 32;
    c.encoder_hidden = 48;
    c.encoder_blocks = 2;
    c.decoder_widths = {16, 8, 8, 8};
    c.seed = 3;
    return FoundationModel::random_init(c);
  }();
  return m;
}

Tensor features_of(const FoundationModel& m, const Tensor& image) {
  Tape t(Tape::Mode::no_grad);
  return model::encode(m, t, image);
}

TEST(Lora, FreshAdaptersDecodeBitwiseEqual) {
  const auto& m = small_model();
  std::mt19937_64 rng(1);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto s = world::generate_scene(static_cast<world::SceneKind>(seed), 32, 32, seed);
    const Tensor f = features_of(m, s.image);
    std::map<std::size_t, model::LoraAdapter> adapters;
    for (std::size_t l = 0; l <= m.decoder().stages.size(); ++l) {
      const auto& lin = m.linear({Part::decoder, l});
      adapters.emplace(l, model::LoraAdapter::create(lin.in(), lin.out(), 8, rng));
    }
    Tape t(Tape::Mode::no_grad);
    EXPECT_TRUE(model::decode_with_adapters(m, f, adapters).bitwise_equal(model::decode(m, t, f)));
  }
}

TEST(Lora, CreateInvariants) {
  std::mt19937_64 rng(2);
  const auto a = model::LoraAdapter::create(40, 24, 8, rng);
  EXPECT_EQ(a.a.shape(), (Shape{8, 40}));
  EXPECT_EQ(a.b.shape(), (Shape{24, 8}));
  EXPECT_EQ(a.alpha, 8.0);
  EXPECT_EQ(a.scale(), 1.0);
  for (double v : a.b.data()) EXPECT_EQ(v, 0.0);
  double ss = 0;
  for (double v : a.a.data()) ss += v * v;
  EXPECT_NEAR(ss / a.a.numel(), 1.0 / 8.0, 0.03);
  const Matrix d = model::effective_delta(a);
  EXPECT_EQ(max_abs(d), 0.0);
}

TEST(Lora, EffectiveDeltaOuterProduct) {
  model::LoraAdapter a;
  a.a = Tensor({1, 3}, {0, 1, 0});  // e₂ᵀ
  a.b = Tensor({2, 1}, {1, 0});     // e₁
  a.alpha = 1.0;
  const Matrix d = model::effective_delta(a);
  ASSERT_EQ(d.rows, 2u);
  ASSERT_EQ(d.cols, 3u);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(d(i, j), i == 0 && j == 1 ? 1.0 : 0.0);
}

TEST(Lora, RankBoundedByR) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = model::LoraAdapter::create(64, 32, 8, rng);
    for (double& v : a.b.data()) v = n(rng);
    const auto sv = svd(model::effective_delta(a)).values;
    EXPECT_LT(sv[8] / sv[0], 1e-12);
    EXPECT_GT(sv[7] / sv[0], 1e-6);
  }
}

TEST(Encode, ShapeCounterAndDeterminism) {
  const auto& m = small_model();
  const auto s = world::generate_scene(world::SceneKind::mixed, 32, 32, 0);
  const auto before = m.encoder_calls();
  const Tensor a = features_of(m, s.image), b = features_of(m, s.image);
  EXPECT_EQ(m.encoder_calls() - before, 2u);
  EXPECT_EQ(a.shape(), (Shape{8, 8, 32}));
  EXPECT_TRUE(a.bitwise_equal(b));

  const auto big = FoundationModel::random_init({});
  EXPECT_EQ(features_of(big, s.image).shape(), (Shape{8, 8, 128}));
}

TEST(Encode, ZeroImageGivesConstantMap) {
  const auto& m = small_model();
  const Tensor f = features_of(m, Tensor::zeros({32, 32, 3}));
  const std::size_t c = f.dim(2);
  for (std::size_t p = 1; p < f.dim(0) * f.dim(1); ++p)
    for (std::size_t k = 0; k < c; ++k) EXPECT_NEAR(f[p * c + k], f[k], 1e-12);
}

TEST(Encode, RejectsIndivisibleOrWrongShape) {
  const auto& m = small_model();
  EXPECT_ANY_THROW(features_of(m, Tensor::zeros({30, 32, 3})));
  EXPECT_ANY_THROW(features_of(m, Tensor::zeros({32, 32})));
}

TEST(Encode, NoTrainableParametersRecorded) {
  const auto& m = small_model();
  Tape t;
  model::encode(m, t, Tensor::zeros({16, 16, 3}));
  for (const auto& node : t.nodes()) EXPECT_FALSE(node.trainable);
}

TEST(Decode, OutputRangeAndShape) {
  const auto& m = small_model();
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto s = world::generate_scene(world::SceneKind::steps, 32, 32, seed);
    const Tensor d = model::predict(m, s.image);
    ASSERT_EQ(d.shape(), (Shape{32, 32}));
    for (double v : d.data()) {
      EXPECT_GE(v, model::kDepthFloor);
      EXPECT_LE(v, model::kDepthCeiling);
    }
  }
}

TEST(Decode, IdentityProjectionChangesNothing) {
  const auto& m = small_model();
  const auto s = world::generate_scene(world::SceneKind::spheres, 32, 32, 1);
  const Tensor f = features_of(m, s.image);
  const std::size_t c = m.decoder().stages[0].out();
  Tensor eye({c, c});
  for (std::size_t i = 0; i < c; ++i) eye.at(i, i) = 1.0;
  const model::FeatureMap id{1, eye, Tensor::zeros({c})};
  Tape t1(Tape::Mode::no_grad), t2(Tape::Mode::no_grad);
  model::DecodeOptions opt;
  opt.projection = &id;
  const Tensor a = model::decode(m, t1, f, opt), b = model::decode(m, t2, f);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Decode, AdapterShapeMismatchThrows) {
  const auto& m = small_model();
  std::mt19937_64 rng(0);
  std::map<std::size_t, model::LoraAdapter> adapters;
  adapters.emplace(0, model::LoraAdapter::create(5, 7, 2, rng));
  const Tensor f = features_of(m, Tensor::zeros({32, 32, 3}));
  EXPECT_ANY_THROW(model::decode_with_adapters(m, f, adapters));
}

// One-stage toy: a full-rank factorization (alpha/r)·B·A = −W found from
// the SVD of W cancels the layer, so its pre-activation is the bias alone.
TEST(Decode, FullRankAdapterNegatingWeightZeroesPreactivation) {
  model::ModelConfig c;
  c.encoder_width = 6;
  c.encoder_hidden = 8;
  c.encoder_blocks = 1;
  c.decoder_widths = {4};
  c.seed = 5;
  const auto base = FoundationModel::random_init(c);
  model::Decoder dec = base.decoder();
  dec.stages[0].bias = Tensor::zeros({4});
  const FoundationModel m(base.encoder(), dec);

  const Matrix w = Matrix::from_tensor(m.decoder().stages[0].weight);  // 4×6
  const auto sv = svd(w);
  const std::size_t r = 4;
  Tensor a({r, 6}), b({4, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < 6; ++j) a.at(i, j) = sv.right(j, i);
    for (std::size_t j = 0; j < 4; ++j) b.at(j, i) = -sv.left(j, i) * sv.values[i];
  }
  model::Bindings bind;
  bind[{Part::decoder, 0}] = {std::nullopt, std::nullopt, a, b, 1.0};

  const auto s = world::generate_scene(world::SceneKind::mixed, 16, 16, 2);
  const Tensor f = features_of(m, s.image);
  model::Trace trace;
  model::DecodeOptions opt;
  opt.bindings = &bind;
  opt.trace = &trace;
  Tape t(Tape::Mode::no_grad);
  model::decode(m, t, f, opt);
  const auto it = std::find_if(trace.layers.begin(), trace.layers.end(),
                               [](const auto& e) { return e.name == "dec.stage0"; });
  ASSERT_NE(it, trace.layers.end());
  double worst = 0, scale = 0;
  for (double v : it->preactivation.data()) worst = std::max(worst, std::abs(v));
  for (double v : f.data()) scale = std::max(scale, std::abs(v));
  EXPECT_LT(worst, 1e-12 * std::max(1.0, scale * max_abs(w)));
}

TEST(Model, SaveLoadRoundTripAndDigests) {
  const auto& m = small_model();
  const auto dir = std::filesystem::temp_directory_path() / "ltto_test_model";
  std::filesystem::create_directories(dir);
  m.save(dir / "m.ltto");
  const auto back = FoundationModel::load(dir / "m.ltto");
  EXPECT_EQ(back.digest(Part::encoder), m.digest(Part::encoder));
  EXPECT_EQ(back.digest(Part::decoder), m.digest(Part::decoder));
  EXPECT_NE(m.digest(Part::encoder), m.digest(Part::decoder));
  const auto s = world::generate_scene(world::SceneKind::planes, 32, 32, 4);
  EXPECT_TRUE(model::predict(back, s.image).bitwise_equal(model::predict(m, s.image)));
  EXPECT_EQ(m.layer_name({Part::decoder, 0}), "dec.stage0");
  EXPECT_EQ(m.layer_name({Part::decoder, 4}), "dec.head");
  EXPECT_EQ(m.layer_name({Part::encoder, 0}), "enc.embed");
}

TEST(Cache, HitRequiresMatchingDigest) {
  const auto& m = small_model();
  model::FeatureCache cache;
  const auto s1 = world::generate_scene(world::SceneKind::planes, 32, 32, 1);
  const auto s2 = world::generate_scene(world::SceneKind::planes, 32, 32, 2);
  const auto before = m.encoder_calls();
  const Tensor a = cache.features(m, s1.image);
  const Tensor b = cache.features(m, s1.image);
  EXPECT_TRUE(a.bitwise_equal(b));
  EXPECT_EQ(m.encoder_calls() - before, 1u);
  cache.features(m, s2.image);
  EXPECT_EQ(cache.hits(), 1u);
  EXPECT_EQ(cache.misses(), 2u);
  EXPECT_NE(model::image_digest(s1.image), model::image_digest(s2.image));
}

TEST(Pretrain, DeterministicInSeed) {
  const auto pop = world::make_population(12, 32, 32, 1);
  model::PretrainConfig cfg;
  cfg.model.encoder_width = 32;
  cfg.model.encoder_hidden = 48;
  cfg.model.encoder_blocks = 2;
  cfg.epochs = 3;
  const auto a = model::pretrain(pop, cfg);
  const auto b = model::pretrain(pop, cfg);
  EXPECT_EQ(a.model.digest(Part::decoder), b.model.digest(Part::decoder));
  EXPECT_EQ(a.model.digest(Part::encoder), b.model.digest(Part::encoder));
  EXPECT_EQ(a.report.epoch_loss, b.report.epoch_loss);
  EXPECT_EQ(a.report.epoch_loss.size(), 3u);
  EXPECT_GE(a.report.validation_scenes, 1u);
  // The encoder is never trained.
  EXPECT_EQ(a.model.digest(Part::encoder), FoundationModel::random_init(cfg.model).digest(Part::encoder));
  EXPECT_THROW(model::pretrain({}, cfg), std::invalid_argument);
}

TEST(Pretrain, ZeroEpochsIsRandomInit) {
  const auto pop = world::make_population(4, 32, 32, 1);
  model::PretrainConfig cfg;
  cfg.model.encoder_width = 32;
  cfg.model.encoder_hidden = 48;
  cfg.model.encoder_blocks = 2;
  cfg.epochs = 0;
  cfg.stage_rms = 0.0;
  const auto p = model::pretrain(pop, cfg);
  EXPECT_TRUE(p.report.epoch_loss.empty());
  // Only the head bias calibration may move the decoder.
  const auto init = FoundationModel::random_init(cfg.model);
  for (std::size_t l = 0; l < init.decoder().stages.size(); ++l)
    EXPECT_TRUE(p.model.decoder().stages[l].weight.bitwise_equal(init.decoder().stages[l].weight));
}

}  // namespace
}  // namespace ltto
