// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-scene experiment protocols shared by the CLI and the acceptance
// runner: test sets, TTO efficacy, rank and projection sweeps, single-layer
// update spectra and the sparsity sweep.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ltto/analysis.hpp"
#include "ltto/tto.hpp"
#include "ltto/world.hpp"

namespace ltto::experiments {

struct TestSetConfig {
  std::size_t scenes = 20;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t points = 100;
  world::SensorModel sensor;
  std::uint64_t seed = 2;
};

struct TestSet {
  std::vector<world::SceneSample> scenes;
  std::vector<world::SparseObservation> observations;
};

/// Scene i has kind i mod 4; scene and observation seeds are derived from
/// `seed` and i only.
TestSet make_test_set(const TestSetConfig& config);

double median(std::vector<double> values);

struct EfficacyRow {
  std::size_t scene = 0;
  std::string kind;
  double baseline_mae = 0.0;
  double baseline_rmse = 0.0;
  double adapted_mae = 0.0;
  double adapted_rmse = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double reduction = 0.0;  // 1 − adapted/baseline MAE
};

struct EfficacyReport {
  std::vector<EfficacyRow> rows;
  double median_reduction = 0.0;
  std::size_t loss_decreased = 0;
};

/// Zero-shot baseline and adapt() per scene.
EfficacyReport efficacy(const model::FoundationModel& model, const TestSet& set,
                        const tto::AdaptConfig& config);

struct SweepRow {
  std::string label;
  double median_mae = 0.0;
  double mean_mae = 0.0;
  double mean_rmse = 0.0;
  double mean_final_loss = 0.0;
};

/// One row per LoRA rank.
std::vector<SweepRow> rank_sweep(const model::FoundationModel& model, const TestSet& set,
                                 const tto::AdaptConfig& base, const std::vector<std::size_t>& ranks);

inline const std::vector<std::string> kProjectionLabels = {
    "none", "top_4", "top_8", "top_16", "orth_8", "orth_16", "rand_8", "rand_16"};

struct ProjectionOptions {
  std::size_t layer = 1;      // decoder layer whose input is projected
  bool center = true;
  bool population = false;    // basis from the pooled covariance of the whole set
};

/// One row per projection label. random_k frames are seeded per scene.
std::vector<SweepRow> projection_ablation(const model::FoundationModel& model, const TestSet& set,
                                          const tto::AdaptConfig& base,
                                          const std::vector<std::string>& labels,
                                          const ProjectionOptions& options = {});

struct EnergyRow {
  std::string layer;
  std::size_t confined_rank = 0;  // 0: unconstrained features
  std::size_t iterations = 0;
  double energy_at_4 = 0.0;
  double energy_at_8 = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  Matrix delta;
};

/// Fine-tunes decoder layer `layer` alone on one scene's sparse loss and takes
/// the spectrum of W_T − W_0. With `confined_rank` the layer's input is
/// projected onto its top principal directions, without centring, so every
/// input lies exactly in that subspace.
EnergyRow single_layer_energy(const model::FoundationModel& model, const world::SceneSample& scene,
                              const world::SparseObservation& obs, std::size_t layer,
                              std::optional<std::size_t> confined_rank, std::size_t iterations = 200,
                              double learning_rate = 0.01);

struct AlignmentRow {
  std::string layer;
  analysis::CovarianceUpdateAlignment alignment;
};

/// Decoder LoRA run on one scene, then per decoder layer the alignment of its
/// input covariance with its update (k capped by the layer's input width).
std::vector<AlignmentRow> covariance_alignment(const model::FoundationModel& model,
                                               const world::SceneSample& scene,
                                               const world::SparseObservation& obs,
                                               const tto::AdaptConfig& config, std::size_t k);

struct CorrelationRow {
  std::string layer;
  double mean_correlation = 0.0;
  std::size_t degenerate = 0;  // scenes with a constant PC1 map
};

/// Mean |corr(PC1 map, predicted depth)| per traced layer over the scenes.
std::vector<CorrelationRow> correlation_profile(const model::FoundationModel& model,
                                                const std::vector<world::SceneSample>& scenes);

struct SparsityRow {
  std::size_t points = 0;
  double baseline_mae = 0.0;
  double baseline_rmse = 0.0;
  double adapted_mae = 0.0;
  double adapted_rmse = 0.0;
};

/// Re-samples the observations of one scene at each density.
std::vector<SparsityRow> sparsity_sweep(const model::FoundationModel& model,
                                        const world::SceneSample& scene,
                                        const std::vector<std::size_t>& points,
                                        const world::SensorModel& sensor, std::uint64_t seed,
                                        const tto::AdaptConfig& config);

}  // namespace ltto::experiments
