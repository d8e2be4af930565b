// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic scenes: piecewise-smooth depth, an RGB-like rendering of it, and
// sparse sensor measurements with a scale/shift bias and Gaussian noise.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ltto/tensor.hpp"

namespace ltto::world {

inline constexpr double kMinDepth = 0.5;
inline constexpr double kMaxDepth = 10.0;

enum class SceneKind { planes, spheres, steps, mixed };

std::string_view to_string(SceneKind kind);
/// Throws std::invalid_argument naming the unknown kind.
SceneKind parse_scene_kind(std::string_view name);

struct SceneSample {
  Tensor image;  // H×W×3, values in [0, 1]
  Tensor depth;  // H×W metres, in [kMinDepth, kMaxDepth]
  SceneKind kind = SceneKind::planes;
  std::uint64_t seed = 0;

  std::size_t height() const { return depth.dim(0); }
  std::size_t width() const { return depth.dim(1); }
};

struct Pixel {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

struct SparseObservation {
  std::vector<Pixel> omega;    // unique, sorted row-major
  std::vector<double> values;  // S at omega
  double sensor_scale = 1.0;   // a*
  double sensor_shift = 0.0;   // b*, metres
  double noise_sigma = 0.0;    // metres
  std::uint64_t seed = 0;
  std::size_t width = 0;       // image width, for flat indexing

  std::size_t size() const { return omega.size(); }
  std::vector<std::size_t> flat_indices() const;
};

/// Default sensor corruption for test scenes.
struct SensorModel {
  double scale = 1.25;
  double shift = 0.4;
  double noise_sigma = 0.01;
};

/// Deterministic in (kind, height, width, seed). Requires height, width ≥ 16.
SceneSample generate_scene(SceneKind kind, std::size_t height, std::size_t width,
                           std::uint64_t seed);

/// `n` distinct pixels drawn uniformly without replacement, measured as
/// a*·depth + b* + N(0, σ²).
SparseObservation sample_sparse(const SceneSample& scene, std::size_t n, double sensor_scale,
                                double sensor_shift, double noise_sigma, std::uint64_t seed);

/// The noiseless dense depth the sensor would report: a*·D + b*.
Tensor sensor_frame_depth(const SceneSample& scene, const SparseObservation& obs);

struct ErrorMetrics {
  double mae = 0.0;
  double rmse = 0.0;
};

/// MAE and RMSE over `mask` (flat pixel indices), or over every pixel.
ErrorMetrics mae_rmse(const Tensor& pred, const Tensor& truth,
                      std::optional<std::span<const std::size_t>> mask = std::nullopt);

/// `count` scenes cycling through all kinds, seeds derived from `seed`.
std::vector<SceneSample> make_population(std::size_t count, std::size_t height,
                                         std::size_t width, std::uint64_t seed);

}  // namespace ltto::world
