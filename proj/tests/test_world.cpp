// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <string>

#include "ltto/io.hpp"
#include "ltto/world.hpp"

namespace ltto {
namespace {

using world::SceneKind;

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ltto_test_world_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Local maxima of a 16-bin histogram holding at least 5% of the pixels.
std::size_t histogram_modes(const Tensor& depth) {
  const auto [lo, hi] = std::minmax_element(depth.data().begin(), depth.data().end());
  constexpr std::size_t kBins = 16;
  std::vector<std::size_t> h(kBins, 0);
  const double span = std::max(*hi - *lo, 1e-12);
  for (double v : depth.data()) h[std::min(kBins - 1, static_cast<std::size_t>((v - *lo) / span * kBins))]++;
  const std::size_t floor = depth.numel() / 20;
  std::size_t modes = 0;
  for (std::size_t i = 0; i < kBins; ++i) {
    const std::size_t left = i == 0 ? 0 : h[i - 1];
    const std::size_t right = i + 1 == kBins ? 0 : h[i + 1];
    if (h[i] >= floor && h[i] > left && h[i] >= right) ++modes;
  }
  return modes;
}

TEST(Scene, DeterministicInArguments) {
  for (auto kind : {SceneKind::planes, SceneKind::spheres, SceneKind::steps, SceneKind::mixed}) {
    const auto a = world::generate_scene(kind, 32, 32, 9);
    const auto b = world::generate_scene(kind, 32, 32, 9);
    EXPECT_TRUE(a.depth.bitwise_equal(b.depth));
    EXPECT_TRUE(a.image.bitwise_equal(b.image));
    const auto c = world::generate_scene(kind, 32, 32, 10);
    EXPECT_FALSE(a.depth.bitwise_equal(c.depth));
  }
}

TEST(Scene, RangesAndShapes) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    for (auto kind : {SceneKind::planes, SceneKind::spheres, SceneKind::steps, SceneKind::mixed}) {
      const auto s = world::generate_scene(kind, 32, 48, seed);
      ASSERT_EQ(s.depth.shape(), (Shape{32, 48}));
      ASSERT_EQ(s.image.shape(), (Shape{32, 48, 3}));
      for (double v : s.depth.data()) {
        EXPECT_GE(v, world::kMinDepth);
        EXPECT_LE(v, world::kMaxDepth);
      }
      for (double v : s.image.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Scene, PlanesIsSmoothSlant) {
  const auto s = world::generate_scene(SceneKind::planes, 32, 32, 0);
  // A single plane has constant second differences along each row.
  double worst = 0.0;
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 1; j + 1 < 32; ++j)
      worst = std::max(worst, std::abs(s.depth.at(i, j - 1) - 2 * s.depth.at(i, j) + s.depth.at(i, j + 1)));
  EXPECT_LT(worst, 0.1);
}

TEST(Scene, StepsHistogramIsMultimodal) {
  const auto s = world::generate_scene(SceneKind::steps, 32, 32, 1);
  EXPECT_GE(histogram_modes(s.depth), 2u);
}

TEST(Scene, RejectsSmallOrUnknown) {
  EXPECT_THROW(world::generate_scene(SceneKind::planes, 8, 32, 0), std::invalid_argument);
  try {
    world::parse_scene_kind("cubes");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("cubes"), std::string::npos);
  }
  EXPECT_EQ(world::parse_scene_kind("steps"), SceneKind::steps);
}

TEST(Sparse, FullSamplingWithIdentitySensorIsDepth) {
  const auto s = world::generate_scene(SceneKind::mixed, 16, 16, 3);
  const auto obs = world::sample_sparse(s, 256, 1.0, 0.0, 0.0, 4);
  ASSERT_EQ(obs.size(), 256u);
  const auto idx = obs.flat_indices();
  for (std::size_t k = 0; k < idx.size(); ++k) EXPECT_EQ(obs.values[k], s.depth[idx[k]]);
}

TEST(Sparse, LeastSquaresRecoversSensorModel) {
  const auto s = world::generate_scene(SceneKind::spheres, 32, 32, 5);
  const auto obs = world::sample_sparse(s, 100, 2.0, 1.0, 0.0, 6);
  // Closed-form LS of values on true depths, computed here from scratch.
  const auto idx = obs.flat_indices();
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    mx += s.depth[idx[k]];
    my += obs.values[k];
  }
  mx /= idx.size();
  my /= idx.size();
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    sxy += (s.depth[idx[k]] - mx) * (obs.values[k] - my);
    sxx += (s.depth[idx[k]] - mx) * (s.depth[idx[k]] - mx);
  }
  const double a = sxy / sxx, b = my - a * mx;
  EXPECT_NEAR(a, 2.0, 1e-10);
  EXPECT_NEAR(b, 1.0, 1e-10);
}

TEST(Sparse, UniqueSortedInBounds) {
  const auto s = world::generate_scene(SceneKind::steps, 32, 32, 2);
  const auto obs = world::sample_sparse(s, 5, 1.25, 0.4, 0.01, 8);
  ASSERT_EQ(obs.size(), 5u);
  const auto idx = obs.flat_indices();
  std::set<std::size_t> seen(idx.begin(), idx.end());
  EXPECT_EQ(seen.size(), 5u);
  for (const auto& p : obs.omega) {
    EXPECT_LT(p.row, 32u);
    EXPECT_LT(p.col, 32u);
  }
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
}

TEST(Sparse, NoiseMatchesSigma) {
  const auto s = world::generate_scene(SceneKind::planes, 64, 64, 2);
  const auto obs = world::sample_sparse(s, 4096, 1.0, 0.0, 0.05, 8);
  const auto idx = obs.flat_indices();
  double ss = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) ss += std::pow(obs.values[k] - s.depth[idx[k]], 2);
  EXPECT_NEAR(std::sqrt(ss / idx.size()), 0.05, 0.005);
}

TEST(Sparse, Errors) {
  const auto s = world::generate_scene(SceneKind::planes, 16, 16, 0);
  EXPECT_THROW(world::sample_sparse(s, 257, 1, 0, 0, 0), std::invalid_argument);
  EXPECT_THROW(world::sample_sparse(s, 0, 1, 0, 0, 0), std::invalid_argument);
}

TEST(Metrics, Examples) {
  const Tensor t = Tensor::matrix({{1, 2}, {3, 4}});
  auto m = world::mae_rmse(t, t);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  m = world::mae_rmse(Tensor::matrix({{2, 3}, {4, 5}}), t);
  EXPECT_DOUBLE_EQ(m.mae, 1.0);
  EXPECT_DOUBLE_EQ(m.rmse, 1.0);
  m = world::mae_rmse(Tensor::matrix({{1, 5}, {0, 4}}), t);
  EXPECT_DOUBLE_EQ(m.mae, 1.5);
  EXPECT_NEAR(m.rmse, std::sqrt(4.5), 1e-15);
  const std::vector<std::size_t> mask = {1};
  m = world::mae_rmse(Tensor::matrix({{1, 5}, {0, 4}}), t, mask);
  EXPECT_DOUBLE_EQ(m.mae, 3.0);
  EXPECT_THROW(world::mae_rmse(t, t, std::span<const std::size_t>{}), std::invalid_argument);
  EXPECT_THROW(world::mae_rmse(t, Tensor::vector({1, 2, 3, 4})), std::invalid_argument);
}

TEST(Metrics, RmseDominatesMae) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a({4, 5}), b({4, 5});
    for (std::size_t i = 0; i < 20; ++i) {
      a[i] = n(rng);
      b[i] = n(rng);
    }
    const auto m = world::mae_rmse(a, b);
    EXPECT_GE(m.rmse, m.mae);
  }
}

TEST(Formats, TensorFileRoundTrip) {
  const auto dir = scratch_dir("ltto");
  const io::NamedTensors in = {{"w", Tensor::matrix({{1.5, -2}, {1e-300, 3}})},
                               {"s", Tensor::scalar(0.1)},
                               {"v", Tensor::vector({})}};
  io::write_tensor_file(dir / "a.ltto", in);
  const auto out = io::read_tensor_file(dir / "a.ltto");
  ASSERT_EQ(out.size(), in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    EXPECT_EQ(out[i].first, in[i].first);
    EXPECT_TRUE(out[i].second.bitwise_equal(in[i].second));
  }
  const auto bytes = io::encode_tensors(in);
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LTTO");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(io::decode_tensors(bad), io::FormatError);
  bad = bytes;
  bad.resize(bad.size() - 3);
  EXPECT_THROW(io::decode_tensors(bad), io::FormatError);
}

TEST(Formats, PfmRoundTrip) {
  const auto s = world::generate_scene(SceneKind::mixed, 16, 24, 1);
  const Tensor d = io::decode_pfm(io::encode_pfm(s.depth));
  ASSERT_EQ(d.shape(), s.depth.shape());
  for (std::size_t i = 0; i < d.numel(); ++i)
    EXPECT_EQ(d[i], static_cast<double>(static_cast<float>(s.depth[i])));
  const Tensor im = io::decode_pfm(io::encode_pfm(s.image));
  ASSERT_EQ(im.shape(), s.image.shape());
  const auto bytes = io::encode_pfm(s.depth);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 2), "Pf");
  // Bottom row first: the first float is depth(15, 0).
  const std::string header = "Pf\n24 16\n-1.0\n";
  float first = 0.0f;
  std::memcpy(&first, bytes.data() + header.size(), 4);
  EXPECT_EQ(first, static_cast<float>(s.depth.at(15, 0)));
}

TEST(Formats, ObservationCsvRoundTrip) {
  const auto dir = scratch_dir("csv");
  const auto s = world::generate_scene(SceneKind::steps, 16, 16, 3);
  const auto obs = world::sample_sparse(s, 20, 1.25, 0.4, 0.01, 1);
  io::write_observations_csv(dir / "o.csv", obs);
  std::ifstream f(dir / "o.csv");
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "row,col,value");
  const auto back = io::read_observations_csv(dir / "o.csv", 16);
  EXPECT_EQ(back.omega, obs.omega);
  EXPECT_EQ(back.values, obs.values);
}

TEST(Formats, SceneBundleRoundTrip) {
  const auto s = world::generate_scene(SceneKind::spheres, 16, 16, 0xFFFFFFFF12345ull);
  const auto obs = world::sample_sparse(s, 30, 1.25, 0.4, 0.01, 0xABCDEF0123456789ull);
  const auto [s2, o2] = io::read_scene_bundle(io::decode_tensors(io::encode_tensors(io::scene_bundle(s, obs))));
  EXPECT_TRUE(s2.depth.bitwise_equal(s.depth));
  EXPECT_TRUE(s2.image.bitwise_equal(s.image));
  EXPECT_EQ(s2.kind, s.kind);
  EXPECT_EQ(s2.seed, s.seed);
  EXPECT_EQ(o2.omega, obs.omega);
  EXPECT_EQ(o2.values, obs.values);
  EXPECT_EQ(o2.seed, obs.seed);
  EXPECT_EQ(o2.sensor_scale, obs.sensor_scale);
  EXPECT_EQ(o2.noise_sigma, obs.noise_sigma);
}

TEST(Formats, Sha256KnownVectors) {
  const std::string abc = "abc";
  EXPECT_EQ(io::sha256_hex({reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()}),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(io::sha256_hex({}), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Formats, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678}) EXPECT_EQ(std::stod(io::format_double(v)), v);
}

}  // namespace
}  // namespace ltto
