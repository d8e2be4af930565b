// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

// Per-scene test-time optimization: encode once, then repeatedly decode,
// align to the sparse measurements and take a gradient step on the adapted
// parameters.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ltto/alignment.hpp"
#include "ltto/analysis.hpp"
#include "ltto/model.hpp"

namespace ltto::tto {

enum class Scope { decoder_lora, encoder_lora, full_lora, decoder_ft, encoder_ft, full_ft };

std::string_view to_string(Scope scope);
Scope parse_scope(std::string_view name);

struct AdaptConfig {
  std::size_t iterations = 40;
  double learning_rate = 0.01;
  std::size_t rank = 8;
  Scope scope = Scope::decoder_lora;
  bool detach_alignment = false;
  bool unnormalized = false;       // literal sum over Ω instead of the mean
  double momentum = 0.0;           // heavy-ball coefficient; 0 is plain gradient descent
  bool cache_features = true;
  bool record_gradients = false;   // keep per-step parameter gradients in the trace
  std::optional<std::vector<std::size_t>> decoder_layers;  // restrict decoder scopes
  std::optional<analysis::ProjectionSpec> projection;
  /// Precomputed projection (e.g. a population basis); overrides `projection`.
  std::optional<model::FeatureMap> projection_map;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct IterationRecord {
  std::size_t t = 0;
  double loss = 0.0;
  double a = 1.0;
  double b = 0.0;
  bool fallback = false;
  std::uint64_t flops = 0;  // forward + backward of this iteration
};

/// Gradient of every adapted tensor at one step, keyed by parameter name.
using StepGradients = std::map<std::string, Tensor>;

struct AdaptTrace {
  std::vector<IterationRecord> iterations;
  std::uint64_t encoder_calls = 0;
  std::uint64_t encoder_flops = 0;  // one encoder forward
  std::vector<StepGradients> gradients;  // when record_gradients
  double wall_seconds = 0.0;
};

struct AdaptResult {
  Tensor depth;    // final unaligned prediction D̂
  Tensor aligned;  // a·D̂ + b
  align::ScaleShift scale_shift;
  bool fallback = false;
  std::optional<world::ErrorMetrics> metrics;  // vs sensor-frame truth
  AdaptTrace trace;

  /// Adapted tensors at t = 0 and t = T, keyed by parameter name
  /// ("dec.stage0.lora_a", "dec.head.weight", ...).
  std::map<std::string, Tensor> initial_parameters;
  std::map<std::string, Tensor> final_parameters;
  /// Final ΔW per adapted layer: (alpha/r)·B·A for LoRA, W_T − W_0 for fine-tuning.
  std::map<std::string, Matrix> deltas;
  double lora_scale = 1.0;
};

/// Σ_Ω (aligned − S)², divided by |Ω| unless `unnormalized`.
double sparse_loss(const Tensor& aligned, const world::SparseObservation& obs,
                   bool unnormalized = false);

AdaptResult adapt(const model::FoundationModel& model, const Tensor& image,
                  const world::SparseObservation& obs, const AdaptConfig& config);

/// adapt() plus MAE/RMSE against the scene's depth in the sensor frame.
AdaptResult adapt(const model::FoundationModel& model, const world::SceneSample& scene,
                  const world::SparseObservation& obs, const AdaptConfig& config);

/// Frozen prediction with one least-squares alignment.
AdaptResult zero_shot_baseline(const model::FoundationModel& model, const Tensor& image,
                               const world::SparseObservation& obs);
AdaptResult zero_shot_baseline(const model::FoundationModel& model,
                               const world::SceneSample& scene,
                               const world::SparseObservation& obs);

struct ScopeRow {
  std::string scope;
  std::size_t iterations = 0;
  double learning_rate = 0.0;
  std::size_t scenes = 0;     // completed
  std::size_t failures = 0;   // aborted on a numerical failure
  double mean_mae = 0.0;
  double mean_rmse = 0.0;
  double mean_encoder_calls = 0.0;
  double mean_flops = 0.0;    // per scene, all iterations
  double wall_seconds = 0.0;
  bool unstable = false;
};

struct SweepReport {
  std::vector<ScopeRow> rows;
  std::vector<std::string> log;
};

SweepReport scope_sweep(const model::FoundationModel& model,
                        const std::vector<world::SceneSample>& scenes,
                        const std::vector<world::SparseObservation>& observations,
                        const std::vector<AdaptConfig>& configs);

}  // namespace ltto::tto
