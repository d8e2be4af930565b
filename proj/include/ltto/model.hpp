// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

// The synthetic depth model F = d ∘ e. The encoder is a fixed random-feature
// patch network; the decoder is a stack of per-pixel linear+ReLU stages with
// bilinear upsampling between them and an exp-clamped depth head.

#pragma once

#include <atomic>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ltto/io.hpp"
#include "ltto/linalg.hpp"
#include "ltto/tape.hpp"
#include "ltto/world.hpp"

namespace ltto::model {

inline constexpr double kDepthFloor = world::kMinDepth / 4.0;
inline constexpr double kDepthCeiling = world::kMaxDepth * 4.0;

/// y = x·Wᵀ + b applied to each row of x. weight is out×in.
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t in() const { return weight.dim(1); }
  std::size_t out() const { return weight.dim(0); }
};

struct EncoderBlock {
  Linear expand;   // C → hidden, ReLU
  Linear project;  // hidden → C, residual
};

struct Encoder {
  std::size_t patch_size = 4;
  Linear embed;  // 3·p² → C
  std::vector<EncoderBlock> blocks;

  std::size_t width() const { return embed.out(); }
};

struct Decoder {
  std::vector<Linear> stages;
  Linear head;  // C_L → 1, log-depth
};

struct ModelConfig {
  std::size_t patch_size = 4;
  std::size_t encoder_width = 128;
  std::size_t encoder_hidden = 256;
  std::size_t encoder_blocks = 4;
  std::vector<std::size_t> decoder_widths = {64, 32, 16, 16};
  std::uint64_t seed = 7;
};

enum class Part { encoder, decoder };

/// Encoder linears are numbered embed = 0, block k expand = 2k+1, project = 2k+2.
/// Decoder linears are the stages in order, then the head.
struct LayerId {
  Part part = Part::decoder;
  std::size_t index = 0;
  auto operator<=>(const LayerId&) const = default;
};

class FoundationModel {
 public:
  FoundationModel(Encoder encoder, Decoder decoder);
  FoundationModel(const FoundationModel& other);
  FoundationModel& operator=(const FoundationModel& other);

  static FoundationModel random_init(const ModelConfig& config);

  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }

  std::vector<LayerId> layers(Part part) const;
  const Linear& linear(LayerId id) const;
  std::string layer_name(LayerId id) const;

  /// Number of encoder forward passes run on this object so far.
  std::uint64_t encoder_calls() const { return encoder_calls_.load(); }
  void count_encoder_call() const { encoder_calls_.fetch_add(1); }

  io::NamedTensors to_tensors() const;
  static FoundationModel from_tensors(const io::NamedTensors& tensors);
  void save(const std::filesystem::path& path) const;
  static FoundationModel load(const std::filesystem::path& path);

  /// SHA-256 over the serialized weights of one part.
  std::string digest(Part part) const;

 private:
  Encoder encoder_;
  Decoder decoder_;
  mutable std::atomic<std::uint64_t> encoder_calls_{0};
};

/// Low-rank update ΔW = (alpha/r)·B·A for one linear layer.
struct LoraAdapter {
  Tensor a;  // r × in
  Tensor b;  // out × r
  double alpha = 1.0;

  std::size_t rank() const { return a.dim(0); }
  double scale() const { return alpha / static_cast<double>(rank()); }

  /// B = 0, A ~ N(0, 1/r), alpha = r.
  static LoraAdapter create(std::size_t in, std::size_t out, std::size_t rank,
                            std::mt19937_64& rng);
};

Matrix effective_delta(const LoraAdapter& adapter);

/// Tape tensors standing in for one layer's frozen weights. Any field left
/// empty falls back to the frozen value.
struct LayerParams {
  std::optional<Tensor> weight;
  std::optional<Tensor> bias;
  std::optional<Tensor> lora_a;
  std::optional<Tensor> lora_b;
  double lora_scale = 1.0;
};
using Bindings = std::map<LayerId, LayerParams>;

/// Fixed linear map x ↦ x·M + c applied to every pixel of the input of
/// decoder layer `layer` (M is C×C).
struct FeatureMap {
  std::size_t layer = 0;
  Tensor matrix;
  Tensor offset;
};

struct TraceEntry {
  std::string name;
  Tensor features;        // h×w×C after the nonlinearity
  Tensor preactivation;   // h×w×C before it (empty for the head)
};

struct Trace {
  std::vector<TraceEntry> layers;
  std::vector<Tensor> decoder_inputs;  // h×w×C input of each decoder layer, before projection
};

struct EncodeOptions {
  const Bindings* bindings = nullptr;
  Trace* trace = nullptr;
};

struct DecodeOptions {
  const Bindings* bindings = nullptr;
  const FeatureMap* projection = nullptr;
  Trace* trace = nullptr;
};

/// e(I): H×W×3 → (H/p)×(W/p)×C. Counts one encoder call.
Tensor encode(const FoundationModel& model, Tape& tape, const Tensor& image,
              const EncodeOptions& options = {});

/// Log-depth before the exp-clamp, H×W.
Tensor decode_log_depth(const FoundationModel& model, Tape& tape, const Tensor& features,
                        const DecodeOptions& options = {});

/// d(f): depth map H×W in [kDepthFloor, kDepthCeiling].
Tensor decode(const FoundationModel& model, Tape& tape, const Tensor& features,
              const DecodeOptions& options = {});

/// Decode with plain adapters attached to the given decoder layers.
Tensor decode_with_adapters(const FoundationModel& model, const Tensor& features,
                            const std::map<std::size_t, LoraAdapter>& adapters,
                            const FeatureMap* projection = nullptr);

/// Untaped e then d.
Tensor predict(const FoundationModel& model, const Tensor& image);

/// Digest-keyed single-entry cache of encoder features.
class FeatureCache {
 public:
  const Tensor& features(const FoundationModel& model, const Tensor& image);
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  std::string source_hash_;
  Tensor features_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

std::string image_digest(const Tensor& image);

struct PretrainConfig {
  ModelConfig model;
  std::size_t epochs = 15;
  double learning_rate = 3e-3;
  std::size_t batch_size = 4;
  std::uint64_t seed = 7;
  double stage_rms = 0.3;  // decoder stage output RMS after rebalancing; 0 keeps Adam's scale
};

struct PretrainReport {
  std::vector<double> epoch_loss;
  std::size_t train_scenes = 0;
  std::size_t validation_scenes = 0;
  double validation_aligned_rmse = 0.0;
  double validation_median_rmse = 0.0;
};

struct Pretrained {
  FoundationModel model;
  PretrainReport report;
};

/// Trains the decoder with Adam under a scale-invariant log-depth loss on cached
/// encoder features. The last tenth of the population (at least one scene when
/// there are two or more) is held out for validation.
Pretrained pretrain(const std::vector<world::SceneSample>& population,
                    const PretrainConfig& config);

struct ValidationScores {
  double aligned_rmse = 0.0;  // mean over scenes, dense LS alignment to truth
  double median_rmse = 0.0;   // mean over scenes, constant-median predictor
};
ValidationScores evaluate_depth(const FoundationModel& model,
                                const std::vector<world::SceneSample>& scenes);

}  // namespace ltto::model
