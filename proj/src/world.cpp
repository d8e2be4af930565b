// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#include "ltto/world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "ltto/seed.hpp"

namespace ltto::world {
namespace {

constexpr std::uint64_t kDepthStream = 1;
constexpr std::uint64_t kImageStream = 2;
constexpr std::uint64_t kSparseStream = 3;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

struct Plane {
  double base, gx, gy;
  double at(double u, double v) const { return base + gx * (u - 0.5) + gy * (v - 0.5); }
};

// Slanted plane with all four corners inside [lo, hi].
Plane random_plane(std::mt19937_64& rng, double lo, double hi, double base_lo, double base_hi) {
  Plane p{uniform(rng, base_lo, base_hi), uniform(rng, -6.0, 6.0), uniform(rng, -2.0, 8.0)};
  const double reach = 0.5 * (std::abs(p.gx) + std::abs(p.gy));
  const double room = std::min(p.base - lo, hi - p.base);
  if (reach > room && reach > 0.0) {
    const double shrink = room / reach;
    p.gx *= shrink;
    p.gy *= shrink;
  }
  return p;
}

void add_spheres(std::mt19937_64& rng, std::vector<double>& depth, std::size_t h, std::size_t w,
                 int count) {
  for (int s = 0; s < count; ++s) {
    const double cu = uniform(rng, 0.15, 0.85);
    const double cv = uniform(rng, 0.15, 0.85);
    const double radius = uniform(rng, 0.22, 0.38);
    const double bulge = uniform(rng, 0.5, 1.5);
    // Rim sits a fixed step in front of the background behind the centre.
    const auto cy = std::min(h - 1, static_cast<std::size_t>(cv * static_cast<double>(h)));
    const auto cx = std::min(w - 1, static_cast<std::size_t>(cu * static_cast<double>(w)));
    const double rim = depth[cy * w + cx] - uniform(rng, 0.3, 0.8);
    const double near = std::max(kMinDepth, rim - bulge * radius);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
        const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
        const double r2 = (u - cu) * (u - cu) + (v - cv) * (v - cv);
        if (r2 >= radius * radius) continue;
        const double surface = near + bulge * (radius - std::sqrt(radius * radius - r2));
        double& d = depth[y * w + x];
        d = std::min(d, surface);
      }
    }
  }
}

void fill_steps(std::mt19937_64& rng, std::vector<double>& depth, std::size_t h, std::size_t w) {
  const int regions = static_cast<int>(std::uniform_int_distribution<int>(2, 3)(rng));
  // Well-separated levels so the depth histogram is multi-modal.
  std::vector<double> levels;
  while (static_cast<int>(levels.size()) < regions) {
    const double cand = uniform(rng, 1.5, 8.0);
    bool ok = true;
    for (double l : levels) ok &= std::abs(l - cand) >= 1.5;
    if (ok) levels.push_back(cand);
  }
  const double angle = uniform(rng, 0.0, std::numbers::pi);
  const double dx = std::cos(angle), dy = std::sin(angle);
  std::vector<double> cuts;
  for (int k = 1; k < regions; ++k) cuts.push_back(uniform(rng, -0.45, 0.45));
  std::sort(cuts.begin(), cuts.end());
  const double slope = uniform(rng, -1.5, 1.5);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w) - 0.5;
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h) - 0.5;
      const double t = u * dx + v * dy;
      const auto region = static_cast<std::size_t>(
          std::upper_bound(cuts.begin(), cuts.end(), t) - cuts.begin());
      depth[y * w + x] = levels[region] + slope * v;
    }
  }
}

// Pushes everything beyond a random straight cut back by a constant factor.
void add_ledge(std::mt19937_64& rng, std::vector<double>& depth, std::size_t h, std::size_t w) {
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double dx = std::cos(angle), dy = std::sin(angle);
  const double cut = uniform(rng, -0.25, 0.25);
  const double factor = uniform(rng, 1.15, 1.3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w) - 0.5;
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h) - 0.5;
      if (u * dx + v * dy > cut) depth[y * w + x] *= factor;
    }
  }
}

}  // namespace

std::string_view to_string(SceneKind kind) {
  switch (kind) {
    case SceneKind::planes: return "planes";
    case SceneKind::spheres: return "spheres";
    case SceneKind::steps: return "steps";
    case SceneKind::mixed: return "mixed";
  }
  return "unknown";
}

SceneKind parse_scene_kind(std::string_view name) {
  for (SceneKind k : {SceneKind::planes, SceneKind::spheres, SceneKind::steps, SceneKind::mixed}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown scene kind '" + std::string(name) + "'");
}

std::vector<std::size_t> SparseObservation::flat_indices() const {
  std::vector<std::size_t> out;
  out.reserve(omega.size());
  for (const auto& p : omega) out.push_back(std::size_t{p.row} * width + p.col);
  return out;
}

SceneSample generate_scene(SceneKind kind, std::size_t height, std::size_t width,
                           std::uint64_t seed) {
  if (height < 16 || width < 16) {
    throw std::invalid_argument("generate_scene: height and width must be at least 16");
  }
  auto rng = make_rng(seed, kDepthStream);
  std::vector<double> depth(height * width);

  auto fill_plane = [&](const Plane& p) {
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        depth[y * width + x] = p.at((static_cast<double>(x) + 0.5) / static_cast<double>(width),
                                    (static_cast<double>(y) + 0.5) / static_cast<double>(height));
  };

  switch (kind) {
    case SceneKind::planes:
      fill_plane(random_plane(rng, 0.6, 9.5, 2.5, 7.0));
      break;
    case SceneKind::spheres:
      fill_plane(random_plane(rng, 1.5, 9.5, 3.5, 6.5));
      add_spheres(rng, depth, height, width, std::uniform_int_distribution<int>(1, 3)(rng));
      break;
    case SceneKind::steps:
      fill_steps(rng, depth, height, width);
      break;
    case SceneKind::mixed:
      fill_plane(random_plane(rng, 1.5, 9.5, 3.5, 6.5));
      add_ledge(rng, depth, height, width);
      add_spheres(rng, depth, height, width, std::uniform_int_distribution<int>(1, 2)(rng));
      break;
  }
  for (double& d : depth) d = std::clamp(d, kMinDepth, kMaxDepth);

  // Rendering: per-scene illumination falloff linear in log-depth,
  // 0.5 − γ·ln(D/τ)/10, times a per-channel albedo, plus a low-frequency colour
  // pattern and pixel noise. γ and τ vary per scene, so brightness determines
  // depth only up to a scene-specific power and scale.
  auto irng = make_rng(seed, kImageStream);
  const double gamma = std::exp(uniform(irng, std::log(0.3), std::log(2.4)));
  const double tau = uniform(irng, 1.5, 3.5);
  double albedo[3], amp[3], fu[3], fv[3], phase[3];
  for (int c = 0; c < 3; ++c) {
    albedo[c] = uniform(irng, 0.92, 1.0);
    amp[c] = uniform(irng, 0.02, 0.08);
    fu[c] = uniform(irng, -3.0, 3.0);
    fv[c] = uniform(irng, -3.0, 3.0);
    phase[c] = uniform(irng, 0.0, 2.0 * std::numbers::pi);
  }
  std::normal_distribution<double> noise(0.0, 0.005);
  Tensor image({height, width, 3});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
      const double shade = 0.5 - gamma * std::log(depth[y * width + x] / tau) / 10.0;
      // The pattern is chromatic: it sums to zero over the channels.
      double pattern[3], mean = 0.0;
      for (int c = 0; c < 3; ++c) {
        pattern[c] = amp[c] * std::sin(2.0 * std::numbers::pi * (fu[c] * u + fv[c] * v) + phase[c]);
        mean += pattern[c] / 3.0;
      }
      for (int c = 0; c < 3; ++c) {
        const double value = albedo[c] * shade + pattern[c] - mean + noise(irng);
        image[(y * width + x) * 3 + static_cast<std::size_t>(c)] = std::clamp(value, 0.0, 1.0);
      }
    }
  }

  SceneSample s;
  s.image = std::move(image);
  s.depth = Tensor({height, width}, std::move(depth));
  s.kind = kind;
  s.seed = seed;
  return s;
}

SparseObservation sample_sparse(const SceneSample& scene, std::size_t n, double sensor_scale,
                                double sensor_shift, double noise_sigma, std::uint64_t seed) {
  const std::size_t h = scene.height(), w = scene.width();
  const std::size_t total = h * w;
  if (n < 1 || n > total) {
    throw std::invalid_argument("sample_sparse: n must lie in [1, " + std::to_string(total) +
                                "], got " + std::to_string(n));
  }
  auto rng = make_rng(seed, kSparseStream);
  std::vector<std::size_t> pool(total);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(n);
  std::sort(pool.begin(), pool.end());

  SparseObservation obs;
  obs.sensor_scale = sensor_scale;
  obs.sensor_shift = sensor_shift;
  obs.noise_sigma = noise_sigma;
  obs.seed = seed;
  obs.width = w;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t flat : pool) {
    obs.omega.push_back({static_cast<std::uint32_t>(flat / w), static_cast<std::uint32_t>(flat % w)});
    const double eta = noise_sigma * normal(rng);
    obs.values.push_back(sensor_scale * scene.depth[flat] + sensor_shift + eta);
  }
  return obs;
}

Tensor sensor_frame_depth(const SceneSample& scene, const SparseObservation& obs) {
  Tensor out = scene.depth.detached();
  for (double& d : out.storage()) d = obs.sensor_scale * d + obs.sensor_shift;
  return out;
}

ErrorMetrics mae_rmse(const Tensor& pred, const Tensor& truth,
                      std::optional<std::span<const std::size_t>> mask) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("mae_rmse: shapes " + shape_str(pred.shape()) + " and " +
                     shape_str(truth.shape()) + " differ");
  }
  double abs_sum = 0.0, sq_sum = 0.0;
  std::size_t count = 0;
  auto visit = [&](std::size_t i) {
    const double e = pred[i] - truth[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    ++count;
  };
  if (mask) {
    for (std::size_t i : *mask) {
      if (i >= pred.numel()) throw std::out_of_range("mae_rmse: mask index out of range");
      visit(i);
    }
  } else {
    for (std::size_t i = 0; i < pred.numel(); ++i) visit(i);
  }
  if (count == 0) throw std::invalid_argument("mae_rmse: empty mask");
  return {abs_sum / static_cast<double>(count), std::sqrt(sq_sum / static_cast<double>(count))};
}

std::vector<SceneSample> make_population(std::size_t count, std::size_t height,
                                         std::size_t width, std::uint64_t seed) {
  static constexpr SceneKind kinds[] = {SceneKind::planes, SceneKind::spheres, SceneKind::steps,
                                        SceneKind::mixed};
  std::vector<SceneSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(generate_scene(kinds[i % 4], height, width, mix_seed(seed, 1000 + i)));
  }
  return out;
}

}  // namespace ltto::world
