// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

// Representation analyses over traced feature maps: per-scene PCA, PC1 maps,
// layer-to-output correlation, subspace projections and the alignment
// between feature covariance and weight-update spectra.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltto/linalg.hpp"
#include "ltto/model.hpp"

namespace ltto::analysis {

struct FeaturePca {
  std::vector<double> mean;         // C
  std::vector<double> eigenvalues;  // C, descending
  Matrix basis;                     // C×C eigenvectors as columns
  Tensor pc1_map;                   // h×w projections onto the first column

  /// C×k leading eigenvectors.
  Matrix top(std::size_t k) const { return basis.left_columns(k); }
};

/// Channel covariance over the spatial positions of an h×w×C map.
/// Throws std::invalid_argument for C < 2 or an all-constant map.
FeaturePca feature_pca(const Tensor& features);

Tensor pca_pc1_map(const Tensor& features);

/// Σ_{i≤k} λ_i / Σ λ_i of the feature covariance.
double feature_energy(const FeaturePca& pca, std::size_t k);

struct ProjectionSpec {
  enum class Mode { none, top_k, orthogonal_to_top_k, random_k };
  Mode mode = Mode::none;
  std::size_t k = 8;
  std::size_t layer = 1;     // decoder layer whose input features are projected
  bool center = true;        // project around the feature mean
  std::uint64_t seed = 0;    // random_k frame
};

/// "none", "top_8", "orth_8", "rand_8".
std::string projection_label(const ProjectionSpec& spec);
/// Inverse of projection_label; layer, center and seed keep their defaults.
ProjectionSpec parse_projection(const std::string& label);

/// x ↦ x·M + c with M = PPᵀ (or I − PPᵀ) and c = μ(I − M) when centring.
struct Projector {
  Matrix matrix;
  std::vector<double> offset;
};

/// Builds the projector whose basis comes from `basis_features` (h×w×C).
Projector make_projector(const Tensor& basis_features, const ProjectionSpec& spec);
Tensor apply_projector(const Tensor& features, const Projector& projector);
/// Projection with the basis taken from the features themselves.
Tensor project_features(const Tensor& features, const ProjectionSpec& spec);

/// Decoder hook at `spec.layer`, with the basis taken from the frozen
/// decoder's input to that layer on encoder features `features`.
model::FeatureMap projection_hook(const model::FoundationModel& model, const Tensor& features,
                                  const ProjectionSpec& spec);

/// Same hook with the basis taken from the pooled layer inputs of several
/// scenes: covariance across the population instead of per scene.
model::FeatureMap population_projection_hook(const model::FoundationModel& model,
                                             const std::vector<Tensor>& features,
                                             const ProjectionSpec& spec);

struct LayerCorrelation {
  std::string name;
  double correlation = 0.0;  // |Pearson(PC1 map resized to H×W, depth)|
  bool degenerate = false;   // constant PC1 map, correlation set to 0
};

/// |Pearson| between two equally sized maps; 0 with `degenerate` set when
/// either is constant.
double abs_pearson(const Tensor& x, const Tensor& y, bool* degenerate = nullptr);

/// Per traced layer: PC1 map, bilinear resize to the depth map size, |corr|.
/// Single-channel layers use the centred map itself.
std::vector<LayerCorrelation> layer_correlation(const model::Trace& trace, const Tensor& depth);

/// Encoder and decoder traces for one image, plus the final depth.
struct TracedForward {
  model::Trace trace;
  Tensor depth;
};
TracedForward traced_forward(const model::FoundationModel& model, const Tensor& image);

struct CovarianceUpdateAlignment {
  double feature_energy = 0.0;
  double update_energy = 0.0;
  double affinity = 0.0;
};

/// features h×w×C, delta out×C.
CovarianceUpdateAlignment covariance_update_alignment(const Tensor& features, const Matrix& delta,
                                                      std::size_t k);

/// Input features seen by decoder layer `layer` (h×w×C), from the frozen model.
Tensor decoder_layer_input(const model::FoundationModel& model, const Tensor& features,
                           std::size_t layer, const model::FeatureMap* projection = nullptr);

}  // namespace ltto::analysis
