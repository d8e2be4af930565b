// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#include "ltto/analysis.hpp"

#include <cmath>
#include <stdexcept>

#include "ltto/seed.hpp"

namespace ltto::analysis {
namespace {

constexpr std::uint64_t kRandomFrameStream = 31;

std::size_t channels_of(const Tensor& features, const char* who) {
  if (features.rank() != 3) {
    throw ShapeError(std::string(who) + ": expected h×w×C features, got " +
                     shape_str(features.shape()));
  }
  return features.dim(2);
}

}  // namespace

FeaturePca feature_pca(const Tensor& features) {
  const std::size_t c = channels_of(features, "feature_pca");
  if (c < 2) throw std::invalid_argument("feature_pca: need at least 2 channels");
  const std::size_t n = features.dim(0) * features.dim(1);

  FeaturePca out;
  out.mean.assign(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out.mean[j] += features[i * c + j];
  for (double& m : out.mean) m /= static_cast<double>(n);

  Matrix cov(c, c);
  std::vector<double> row(c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) row[j] = features[i * c + j] - out.mean[j];
    for (std::size_t a = 0; a < c; ++a) {
      if (row[a] == 0.0) continue;
      for (std::size_t b = a; b < c; ++b) cov(a, b) += row[a] * row[b];
    }
  }
  double trace = 0.0;
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = a; b < c; ++b) {
      cov(a, b) /= static_cast<double>(n);
      cov(b, a) = cov(a, b);
    }
    trace += cov(a, a);
  }
  if (!(trace > 0.0)) throw std::invalid_argument("feature_pca: features have zero variance");

  SpectralDecomposition eig = jacobi_eigen(cov);
  out.eigenvalues = std::move(eig.values);
  out.basis = std::move(eig.left);

  out.pc1_map = Tensor({features.dim(0), features.dim(1)});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (features[i * c + j] - out.mean[j]) * out.basis(j, 0);
    out.pc1_map[i] = s;
  }
  return out;
}

Tensor pca_pc1_map(const Tensor& features) { return feature_pca(features).pc1_map; }

double feature_energy(const FeaturePca& pca, std::size_t k) {
  double top = 0.0, total = 0.0;
  for (std::size_t i = 0; i < pca.eigenvalues.size(); ++i) {
    const double l = std::max(0.0, pca.eigenvalues[i]);
    total += l;
    if (i < k) top += l;
  }
  return total > 0.0 ? top / total : 1.0;
}

std::string projection_label(const ProjectionSpec& spec) {
  const std::string k = std::to_string(spec.k);
  switch (spec.mode) {
    case ProjectionSpec::Mode::none: return "none";
    case ProjectionSpec::Mode::top_k: return "top_" + k;
    case ProjectionSpec::Mode::orthogonal_to_top_k: return "orth_" + k;
    case ProjectionSpec::Mode::random_k: return "rand_" + k;
  }
  return "none";
}

ProjectionSpec parse_projection(const std::string& label) {
  ProjectionSpec spec;
  if (label == "none") return spec;
  const auto us = label.find('_');
  if (us == std::string::npos) throw std::invalid_argument("projection: bad label '" + label + "'");
  const std::string mode = label.substr(0, us);
  if (mode == "top") {
    spec.mode = ProjectionSpec::Mode::top_k;
  } else if (mode == "orth") {
    spec.mode = ProjectionSpec::Mode::orthogonal_to_top_k;
  } else if (mode == "rand") {
    spec.mode = ProjectionSpec::Mode::random_k;
  } else {
    throw std::invalid_argument("projection: unknown mode '" + mode + "'");
  }
  try {
    std::size_t used = 0;
    spec.k = std::stoul(label.substr(us + 1), &used);
    if (used != label.size() - us - 1) throw std::invalid_argument("trailing");
  } catch (const std::logic_error&) {
    throw std::invalid_argument("projection: bad k in '" + label + "'");
  }
  return spec;
}

Projector make_projector(const Tensor& basis_features, const ProjectionSpec& spec) {
  const std::size_t c = channels_of(basis_features, "make_projector");
  Projector p;
  p.matrix = Matrix::identity(c);
  p.offset.assign(c, 0.0);
  if (spec.mode == ProjectionSpec::Mode::none) return p;
  if (spec.k < 1 || spec.k > c) {
    throw std::invalid_argument("projection: k = " + std::to_string(spec.k) + " outside [1, " +
                                std::to_string(c) + "]");
  }

  const FeaturePca pca = feature_pca(basis_features);
  Matrix basis;
  if (spec.mode == ProjectionSpec::Mode::random_k) {
    auto rng = make_rng(spec.seed, kRandomFrameStream);
    basis = random_orthonormal(c, spec.k, rng);
  } else {
    basis = pca.top(spec.k);
  }
  const Matrix ppt = basis * transpose(basis);
  p.matrix = spec.mode == ProjectionSpec::Mode::orthogonal_to_top_k ? Matrix::identity(c) - ppt : ppt;
  if (spec.center) {
    // c = μ − μ·M
    for (std::size_t j = 0; j < c; ++j) {
      double mm = 0.0;
      for (std::size_t i = 0; i < c; ++i) mm += pca.mean[i] * p.matrix(i, j);
      p.offset[j] = pca.mean[j] - mm;
    }
  }
  return p;
}

Tensor apply_projector(const Tensor& features, const Projector& projector) {
  const std::size_t c = channels_of(features, "apply_projector");
  if (projector.matrix.rows != c) {
    throw ShapeError("apply_projector: projector is " + std::to_string(projector.matrix.rows) +
                     "-dimensional, features have " + std::to_string(c) + " channels");
  }
  Tensor out(features.shape());
  const std::size_t n = features.numel() / c;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      double s = projector.offset[j];
      for (std::size_t a = 0; a < c; ++a) s += features[i * c + a] * projector.matrix(a, j);
      out[i * c + j] = s;
    }
  }
  return out;
}

Tensor project_features(const Tensor& features, const ProjectionSpec& spec) {
  if (spec.mode == ProjectionSpec::Mode::none) return features.detached();
  return apply_projector(features, make_projector(features, spec));
}

Tensor decoder_layer_input(const model::FoundationModel& model, const Tensor& features,
                           std::size_t layer, const model::FeatureMap* projection) {
  if (layer > model.decoder().stages.size()) {
    throw std::out_of_range("decoder_layer_input: no decoder layer " + std::to_string(layer));
  }
  Tape tape(Tape::Mode::no_grad);
  model::Trace trace;
  model::DecodeOptions opt;
  opt.trace = &trace;
  opt.projection = projection;
  model::decode(model, tape, features, opt);
  return trace.decoder_inputs.at(layer);
}

model::FeatureMap projection_hook(const model::FoundationModel& model, const Tensor& features,
                                  const ProjectionSpec& spec) {
  const Projector p = make_projector(decoder_layer_input(model, features, spec.layer), spec);
  model::FeatureMap map;
  map.layer = spec.layer;
  map.matrix = p.matrix.to_tensor();
  map.offset = Tensor::vector(p.offset);
  return map;
}

model::FeatureMap population_projection_hook(const model::FoundationModel& model,
                                             const std::vector<Tensor>& features,
                                             const ProjectionSpec& spec) {
  if (features.empty()) throw std::invalid_argument("population_projection_hook: no scenes");
  // Stack the scenes along the row axis; PCA only sees pixels.
  std::vector<double> pooled;
  std::size_t rows = 0, w = 0, c = 0;
  for (const auto& f : features) {
    const Tensor x = decoder_layer_input(model, f, spec.layer);
    if (w == 0) {
      w = x.dim(1);
      c = x.dim(2);
    } else if (x.dim(1) != w || x.dim(2) != c) {
      throw ShapeError("population_projection_hook: scenes differ in shape");
    }
    rows += x.dim(0);
    pooled.insert(pooled.end(), x.storage().begin(), x.storage().end());
  }
  const Projector p = make_projector(Tensor({rows, w, c}, std::move(pooled)), spec);
  model::FeatureMap map;
  map.layer = spec.layer;
  map.matrix = p.matrix.to_tensor();
  map.offset = Tensor::vector(p.offset);
  return map;
}

double abs_pearson(const Tensor& x, const Tensor& y, bool* degenerate) {
  if (x.numel() != y.numel() || x.numel() == 0) {
    throw ShapeError("abs_pearson: sizes " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
  }
  const double n = static_cast<double>(x.numel());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  const bool flat = !(sxx > 0.0) || !(syy > 0.0);
  if (degenerate) *degenerate = flat;
  if (flat) return 0.0;
  return std::min(1.0, std::abs(sxy) / std::sqrt(sxx * syy));
}

std::vector<LayerCorrelation> layer_correlation(const model::Trace& trace, const Tensor& depth) {
  if (depth.rank() != 2) throw ShapeError("layer_correlation: depth must be H×W");
  const std::size_t hh = depth.dim(0), ww = depth.dim(1);
  std::vector<LayerCorrelation> out;
  for (const auto& entry : trace.layers) {
    LayerCorrelation lc;
    lc.name = entry.name;
    const Tensor& f = entry.features;
    Tensor map;
    if (f.dim(2) >= 2) {
      try {
        map = feature_pca(f).pc1_map;
      } catch (const std::invalid_argument&) {
        lc.degenerate = true;
        out.push_back(lc);
        continue;
      }
    } else {
      map = f.reshaped({f.dim(0), f.dim(1)});
    }
    Tape tape(Tape::Mode::no_grad);
    const Tensor grid = map.reshaped({f.dim(0), f.dim(1), 1});
    const Tensor resized =
        ops::resample(tape, grid, bilinear_resize_map(f.dim(0), f.dim(1), hh, ww));
    lc.correlation = abs_pearson(resized, depth, &lc.degenerate);
    out.push_back(lc);
  }
  return out;
}

TracedForward traced_forward(const model::FoundationModel& model, const Tensor& image) {
  TracedForward out;
  Tape tape(Tape::Mode::no_grad);
  model::EncodeOptions eo;
  eo.trace = &out.trace;
  const Tensor f = model::encode(model, tape, image, eo);
  model::DecodeOptions dopt;
  dopt.trace = &out.trace;
  out.depth = model::decode(model, tape, f, dopt).detached();
  return out;
}

CovarianceUpdateAlignment covariance_update_alignment(const Tensor& features, const Matrix& delta,
                                                      std::size_t k) {
  const std::size_t c = channels_of(features, "covariance_update_alignment");
  if (delta.cols != c) {
    throw ShapeError("covariance_update_alignment: update has " + std::to_string(delta.cols) +
                     " input columns, features have " + std::to_string(c) + " channels");
  }
  if (k < 1 || k > c) throw std::invalid_argument("covariance_update_alignment: k outside [1, C]");
  const FeaturePca pca = feature_pca(features);
  CovarianceUpdateAlignment out;
  out.feature_energy = feature_energy(pca, k);
  const SpectralDecomposition s = svd(delta);
  out.update_energy = energy_fraction(s.values, k);

  const Matrix pf = pca.top(k);
  const std::size_t ku = std::min(k, s.right.cols);
  const Matrix cross = transpose(pf) * s.right.left_columns(ku);
  const double f = frobenius_norm(cross);
  out.affinity = std::min(1.0, f * f / static_cast<double>(k));
  return out;
}

}  // namespace ltto::analysis
