// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#include "ltto/experiments.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "ltto/seed.hpp"

namespace ltto::experiments {
namespace {

constexpr std::uint64_t kSceneStream = 11;
constexpr std::uint64_t kObservationStream = 12;

SweepRow summarize(std::string label, const std::vector<tto::AdaptResult>& runs,
                   const TestSet& set) {
  SweepRow row;
  row.label = std::move(label);
  std::vector<double> mae;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    mae.push_back(runs[i].metrics->mae);
    row.mean_mae += runs[i].metrics->mae;
    row.mean_rmse += runs[i].metrics->rmse;
    row.mean_final_loss += tto::sparse_loss(runs[i].aligned, set.observations[i]);
  }
  const double n = static_cast<double>(runs.size());
  row.mean_mae /= n;
  row.mean_rmse /= n;
  row.mean_final_loss /= n;
  row.median_mae = median(mae);
  return row;
}

std::vector<tto::AdaptResult> run_all(const model::FoundationModel& model, const TestSet& set,
                                      const tto::AdaptConfig& config) {
  std::vector<tto::AdaptResult> out;
  out.reserve(set.scenes.size());
  for (std::size_t i = 0; i < set.scenes.size(); ++i)
    out.push_back(tto::adapt(model, set.scenes[i], set.observations[i], config));
  return out;
}

Tensor frozen_features(const model::FoundationModel& model, const Tensor& image) {
  Tape tape(Tape::Mode::no_grad);
  return model::encode(model, tape, image).detached();
}

}  // namespace

TestSet make_test_set(const TestSetConfig& config) {
  if (config.scenes == 0) throw std::invalid_argument("scenes must be at least 1");
  TestSet set;
  for (std::size_t i = 0; i < config.scenes; ++i) {
    const auto kind = static_cast<world::SceneKind>(i % 4);
    set.scenes.push_back(world::generate_scene(kind, config.height, config.width,
                                               mix_seed(mix_seed(config.seed, kSceneStream), i)));
    set.observations.push_back(world::sample_sparse(
        set.scenes.back(), config.points, config.sensor.scale, config.sensor.shift,
        config.sensor.noise_sigma, mix_seed(mix_seed(config.seed, kObservationStream), i)));
  }
  return set;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

EfficacyReport efficacy(const model::FoundationModel& model, const TestSet& set,
                        const tto::AdaptConfig& config) {
  EfficacyReport rep;
  std::vector<double> reductions;
  for (std::size_t i = 0; i < set.scenes.size(); ++i) {
    const auto& scene = set.scenes[i];
    const auto& obs = set.observations[i];
    const auto base = tto::zero_shot_baseline(model, scene, obs);
    const auto run = tto::adapt(model, scene, obs, config);
    EfficacyRow row;
    row.scene = i;
    row.kind = std::string(world::to_string(scene.kind));
    row.baseline_mae = base.metrics->mae;
    row.baseline_rmse = base.metrics->rmse;
    row.adapted_mae = run.metrics->mae;
    row.adapted_rmse = run.metrics->rmse;
    row.initial_loss = tto::sparse_loss(base.aligned, obs, config.unnormalized);
    row.final_loss = tto::sparse_loss(run.aligned, obs, config.unnormalized);
    row.reduction = 1.0 - row.adapted_mae / row.baseline_mae;
    if (row.final_loss < row.initial_loss) ++rep.loss_decreased;
    reductions.push_back(row.reduction);
    rep.rows.push_back(row);
  }
  rep.median_reduction = median(reductions);
  return rep;
}

std::vector<SweepRow> rank_sweep(const model::FoundationModel& model, const TestSet& set,
                                 const tto::AdaptConfig& base, const std::vector<std::size_t>& ranks) {
  std::vector<SweepRow> rows;
  for (std::size_t r : ranks) {
    tto::AdaptConfig cfg = base;
    cfg.rank = r;
    rows.push_back(summarize("r=" + std::to_string(r), run_all(model, set, cfg), set));
  }
  return rows;
}

std::vector<SweepRow> projection_ablation(const model::FoundationModel& model, const TestSet& set,
                                          const tto::AdaptConfig& base,
                                          const std::vector<std::string>& labels,
                                          const ProjectionOptions& options) {
  std::vector<Tensor> features;
  if (options.population) {
    for (const auto& s : set.scenes) features.push_back(frozen_features(model, s.image));
  }
  std::vector<SweepRow> rows;
  for (const auto& label : labels) {
    analysis::ProjectionSpec spec = analysis::parse_projection(label);
    spec.layer = options.layer;
    spec.center = options.center;
    std::optional<model::FeatureMap> shared;
    if (options.population && spec.mode != analysis::ProjectionSpec::Mode::none) {
      spec.seed = base.seed;
      shared = analysis::population_projection_hook(model, features, spec);
    }
    std::vector<tto::AdaptResult> runs;
    for (std::size_t i = 0; i < set.scenes.size(); ++i) {
      tto::AdaptConfig cfg = base;
      if (spec.mode != analysis::ProjectionSpec::Mode::none) {
        analysis::ProjectionSpec scene_spec = spec;
        scene_spec.seed = mix_seed(base.seed, i);
        cfg.projection = scene_spec;
        cfg.projection_map = shared;
      }
      runs.push_back(tto::adapt(model, set.scenes[i], set.observations[i], cfg));
    }
    rows.push_back(summarize(label, runs, set));
  }
  return rows;
}

EnergyRow single_layer_energy(const model::FoundationModel& model, const world::SceneSample& scene,
                              const world::SparseObservation& obs, std::size_t layer,
                              std::optional<std::size_t> confined_rank, std::size_t iterations,
                              double learning_rate) {
  tto::AdaptConfig cfg;
  cfg.scope = tto::Scope::decoder_ft;
  cfg.decoder_layers = std::vector<std::size_t>{layer};
  cfg.iterations = iterations;
  cfg.learning_rate = learning_rate;
  if (confined_rank) {
    analysis::ProjectionSpec spec;
    spec.mode = analysis::ProjectionSpec::Mode::top_k;
    spec.k = *confined_rank;
    spec.layer = layer;
    spec.center = false;
    cfg.projection = spec;
  }
  const auto run = tto::adapt(model, scene.image, obs, cfg);
  EnergyRow row;
  row.layer = model.layer_name({model::Part::decoder, layer});
  row.confined_rank = confined_rank.value_or(0);
  row.iterations = iterations;
  row.delta = run.deltas.at(row.layer);
  row.energy_at_4 = energy_fraction(row.delta, 4);
  row.energy_at_8 = energy_fraction(row.delta, 8);
  row.initial_loss = run.trace.iterations.empty() ? 0.0 : run.trace.iterations.front().loss;
  row.final_loss = tto::sparse_loss(run.aligned, obs);
  return row;
}

std::vector<AlignmentRow> covariance_alignment(const model::FoundationModel& model,
                                               const world::SceneSample& scene,
                                               const world::SparseObservation& obs,
                                               const tto::AdaptConfig& config, std::size_t k) {
  const auto run = tto::adapt(model, scene.image, obs, config);
  const Tensor f = frozen_features(model, scene.image);
  std::vector<AlignmentRow> rows;
  const std::size_t n = model.decoder().stages.size() + 1;
  for (std::size_t l = 0; l < n; ++l) {
    const std::string name = model.layer_name({model::Part::decoder, l});
    const auto it = run.deltas.find(name);
    if (it == run.deltas.end()) continue;
    const Tensor x = analysis::decoder_layer_input(model, f, l);
    rows.push_back({name, analysis::covariance_update_alignment(x, it->second, std::min(k, x.dim(2)))});
  }
  return rows;
}

std::vector<CorrelationRow> correlation_profile(const model::FoundationModel& model,
                                                const std::vector<world::SceneSample>& scenes) {
  std::vector<CorrelationRow> rows;
  for (const auto& scene : scenes) {
    const auto traced = analysis::traced_forward(model, scene.image);
    const auto corr = analysis::layer_correlation(traced.trace, traced.depth);
    if (rows.empty()) {
      for (const auto& c : corr) rows.push_back({c.name, 0.0, 0});
    }
    for (std::size_t i = 0; i < corr.size(); ++i) {
      rows[i].mean_correlation += corr[i].correlation;
      if (corr[i].degenerate) ++rows[i].degenerate;
    }
  }
  for (auto& r : rows) r.mean_correlation /= static_cast<double>(scenes.size());
  return rows;
}

std::vector<SparsityRow> sparsity_sweep(const model::FoundationModel& model,
                                        const world::SceneSample& scene,
                                        const std::vector<std::size_t>& points,
                                        const world::SensorModel& sensor, std::uint64_t seed,
                                        const tto::AdaptConfig& config) {
  std::vector<SparsityRow> rows;
  for (std::size_t n : points) {
    const auto obs = world::sample_sparse(scene, n, sensor.scale, sensor.shift, sensor.noise_sigma,
                                          mix_seed(seed, n));
    const auto base = tto::zero_shot_baseline(model, scene, obs);
    const auto run = tto::adapt(model, scene, obs, config);
    rows.push_back({n, base.metrics->mae, base.metrics->rmse, run.metrics->mae, run.metrics->rmse});
  }
  return rows;
}

}  // namespace ltto::experiments
