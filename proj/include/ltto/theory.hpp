// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

// Numerical checks of the low-rank structure of gradients when a linear
// layer's inputs live in a subspace, and of local linearity of the ReLU
// decoder. Every check returns a Verdict rather than throwing, so a grid of
// checks can be reported in one pass.

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ltto/linalg.hpp"
#include "ltto/model.hpp"
#include "ltto/tape.hpp"

namespace ltto::theory {

inline constexpr double kRankTolerance = 1e-10;
inline constexpr double kIdentityTolerance = 1e-12;

struct Verdict {
  std::string check;    // "prop1", "prop2", "corollary", "linearity", ...
  std::string cell;     // parameters, e.g. "d=16 r=4 m=8 T=10"
  bool pass = false;
  std::vector<std::pair<std::string, double>> values;
  std::string message;  // why it failed, or a note
};

/// Inputs x_n = P·z_n + ε_n to a layer W (m×d), with output-side signals g_n.
struct SubspaceScenario {
  Matrix basis;                           // d×r, orthonormal columns
  std::vector<std::vector<double>> z;     // r each
  std::vector<std::vector<double>> eps;   // d each; empty means exact
  std::vector<std::vector<double>> g;     // m each
  Matrix weight;                          // m×d

  std::size_t dim() const { return basis.rows; }
  std::size_t rank() const { return basis.cols; }
  std::size_t outputs() const { return weight.rows; }
  std::size_t samples() const { return z.size(); }
  bool exact() const { return eps.empty(); }

  /// Sample n: P·z_n + ε_n.
  std::vector<double> input(std::size_t n) const;

  /// Gaussian draws; `eps_scale` 0 gives an exact scenario.
  static SubspaceScenario random(std::size_t d, std::size_t r, std::size_t m, std::size_t samples,
                                 double eps_scale, std::mt19937_64& rng);
};

/// Builds a scalar loss from the batched layer output Y (samples × m).
using LossBuilder = std::function<Tensor(Tape&, const Tensor&)>;

/// Σ_n ⟨c_n, y_n⟩ + ½ Σ_n ‖y_n − t_n‖² with random c, t: a generic smooth loss.
LossBuilder random_quadratic_loss(std::size_t samples, std::size_t m, std::mt19937_64& rng);

/// Σ_n ⟨g_n, y_n⟩, so that ∂L/∂y_n = g_n exactly.
LossBuilder linear_loss(const SubspaceScenario& scenario);

/// ∂L/∂W through Y = X·Wᵀ on a recorded tape.
Matrix layer_gradient(const SubspaceScenario& scenario, const LossBuilder& loss);

/// σ_{k+1}/σ₁ of a matrix, 0 when rank k already covers every dimension or
/// the matrix is zero.
double tail_ratio(const Matrix& m, std::size_t k);
/// max over nonzero rows of ‖(I − PPᵀ)·rowᵀ‖ / ‖row‖.
double row_leakage(const Matrix& m, const Matrix& basis);

/// Exact scenario: the gradient has rank ≤ r and its rows lie in span(P).
/// With `strict` the rank assertion is applied even when ε ≠ 0 (a negative
/// control that should fail).
Verdict check_prop1(const SubspaceScenario& scenario, const LossBuilder& loss, bool strict = false);

/// Residual identity ‖gεᵀ‖_F = ‖g‖‖ε‖ per sample, the single-sample
/// decomposition ∂L/∂W = g zᵀPᵀ + g εᵀ, and the rank-r approximation bound.
Verdict check_prop2(const SubspaceScenario& scenario);

/// Largest relative violation of ‖gεᵀ‖_F = ‖g‖‖ε‖ over random pairs.
double prop2_identity_violation(std::size_t trials, std::size_t m, std::size_t d,
                                std::mt19937_64& rng);

/// T steps of gradient descent on W with per-step rates `etas` (cycled),
/// loss ½‖W x_t − y_t‖² on sample t mod n. Reports A_T = ΔW·P.
Verdict check_corollary(const SubspaceScenario& scenario, std::size_t steps,
                        const std::vector<double>& etas, bool strict = false);

struct GridSpec {
  std::vector<std::size_t> d = {16, 64};
  std::vector<std::size_t> r = {1, 4, 8};
  std::vector<std::size_t> m = {8, 32};
  std::vector<std::size_t> steps = {1, 10, 40};
  std::size_t samples = 10;
  double eps_scale = 0.0;  // nonzero injects off-subspace residuals
  bool strict = false;     // assert the exact rank bound regardless of ε
};

/// The gradient rank check per (d, r, m) and the accumulated-update check
/// per (d, r, m, T), each with a constant rate 0.01 and, for the
/// accumulated update, a random schedule too.
std::vector<Verdict> run_grid(const GridSpec& grid, std::uint64_t seed);

/// The gradient rank check on the model's first decoder stage: encoder
/// features confined to their top-r principal subspace (no centring), one
/// sparse-loss gradient.
Verdict check_prop1_on_model(const model::FoundationModel& model, const world::SceneSample& scene,
                             const world::SparseObservation& obs, std::size_t r);

struct LinearityReport {
  bool found = false;       // some δ kept every decoder activation sign fixed
  double delta = 0.0;       // largest such δ from the tested list
  double defect = 0.0;      // max |z(f+δu/2) − (z(f) + z(f+δu))/2| over pixels
  double control_defect = 0.0;  // same defect on a segment forced across a kink
  Verdict verdict;
};

/// Descending radii 2^0 … 2^-40.
std::vector<double> default_radii();

/// Random unit direction u in feature space; the decoder is probed on the
/// segment f + s·u, s ∈ [0, δ], on pre-exp log-depth.
LinearityReport linearity_probe(const model::FoundationModel& model, const Tensor& features,
                                std::uint64_t seed, const std::vector<double>& radii = default_radii());

}  // namespace ltto::theory
