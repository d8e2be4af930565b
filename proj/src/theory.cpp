// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#include "ltto/theory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ltto/analysis.hpp"
#include "ltto/seed.hpp"
#include "ltto/tto.hpp"

namespace ltto::theory {
namespace {

constexpr std::uint64_t kGridStream = 41;
constexpr std::uint64_t kProbeStream = 42;
constexpr double kControlFloor = 1e-6;

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<double> normal_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

Matrix outer(std::span<const double> a, std::span<const double> b) {
  Matrix out(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out(i, j) = a[i] * b[j];
  return out;
}

// X with one input per row.
Tensor input_rows(const SubspaceScenario& s) {
  Tensor x({s.samples(), s.dim()});
  for (std::size_t n = 0; n < s.samples(); ++n) {
    const auto row = s.input(n);
    std::copy(row.begin(), row.end(), x.storage().begin() + static_cast<std::ptrdiff_t>(n * s.dim()));
  }
  return x;
}

// Root of the energy beyond the first k singular values.
double tail_energy(const Matrix& m, std::size_t k) {
  const auto s = svd(m).values;
  double e = 0.0;
  for (std::size_t i = k; i < s.size(); ++i) e += s[i] * s[i];
  return std::sqrt(e);
}

std::string cell_name(std::size_t d, std::size_t r, std::size_t m) {
  std::ostringstream os;
  os << "d=" << d << " r=" << r << " m=" << m;
  return os.str();
}

Tensor log_depth_at(const model::FoundationModel& model, const Tensor& f, model::Trace* trace) {
  Tape tape(Tape::Mode::no_grad);
  model::DecodeOptions opt;
  opt.trace = trace;
  return model::decode_log_depth(model, tape, f, opt).detached();
}

std::vector<std::vector<bool>> activation_signs(const model::FoundationModel& model, const Tensor& f) {
  model::Trace trace;
  log_depth_at(model, f, &trace);
  std::vector<std::vector<bool>> out;
  for (const auto& e : trace.layers) {
    if (e.preactivation.numel() == 0) continue;
    std::vector<bool> s(e.preactivation.numel());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = e.preactivation[i] > 0.0;
    out.push_back(std::move(s));
  }
  return out;
}

Tensor along(const Tensor& f, const Tensor& u, double s) {
  Tensor out = f.detached();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += s * u[i];
  return out;
}

double midpoint_defect(const model::FoundationModel& model, const Tensor& f, const Tensor& u,
                       double delta) {
  const Tensor z0 = log_depth_at(model, f, nullptr);
  const Tensor zh = log_depth_at(model, along(f, u, 0.5 * delta), nullptr);
  const Tensor z1 = log_depth_at(model, along(f, u, delta), nullptr);
  double worst = 0.0;
  for (std::size_t i = 0; i < z0.numel(); ++i) {
    worst = std::max(worst, std::abs(zh[i] - 0.5 * (z0[i] + z1[i])));
  }
  return worst;
}

// Moves one pixel's encoder feature straight at a live stage-0 unit so the
// unit switches off a quarter of the way along the segment.
double forced_kink_defect(const model::FoundationModel& model, const Tensor& f) {
  const model::Linear& lin = model.decoder().stages.front();
  const std::size_t c = f.dim(2), pixels = f.numel() / c, units = lin.out();
  struct Candidate {
    double margin;
    std::size_t pixel, unit;
  };
  std::vector<Candidate> live;
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t j = 0; j < units; ++j) {
      double pre = lin.bias[j], wn = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        pre += f[p * c + k] * lin.weight[j * c + k];
        wn += lin.weight[j * c + k] * lin.weight[j * c + k];
      }
      wn = std::sqrt(wn);
      if (pre > 0.0 && wn > 0.0 && pre / wn >= 0.05) live.push_back({pre / wn, p, j});
    }
  }
  std::sort(live.begin(), live.end(), [](const Candidate& a, const Candidate& b) {
    return a.margin != b.margin ? a.margin < b.margin : a.pixel * 1000003 + a.unit < b.pixel * 1000003 + b.unit;
  });
  if (live.size() > 32) live.resize(32);

  double worst = 0.0;
  for (const auto& cand : live) {
    Tensor u(f.shape());
    double wn = 0.0;
    for (std::size_t k = 0; k < c; ++k) wn += lin.weight[cand.unit * c + k] * lin.weight[cand.unit * c + k];
    wn = std::sqrt(wn);
    for (std::size_t k = 0; k < c; ++k) u[cand.pixel * c + k] = -lin.weight[cand.unit * c + k] / wn;
    worst = std::max(worst, midpoint_defect(model, f, u, 4.0 * cand.margin));
  }
  return worst;
}

}  // namespace

std::vector<double> SubspaceScenario::input(std::size_t n) const {
  std::vector<double> x(dim(), 0.0);
  for (std::size_t i = 0; i < dim(); ++i) {
    for (std::size_t k = 0; k < rank(); ++k) x[i] += basis(i, k) * z[n][k];
    if (!exact()) x[i] += eps[n][i];
  }
  return x;
}

SubspaceScenario SubspaceScenario::random(std::size_t d, std::size_t r, std::size_t m,
                                          std::size_t samples, double eps_scale,
                                          std::mt19937_64& rng) {
  if (r < 1 || r > d) throw std::invalid_argument("scenario: need 1 ≤ r ≤ d");
  if (m < 1 || samples < 1) throw std::invalid_argument("scenario: need m ≥ 1 and samples ≥ 1");
  SubspaceScenario s;
  s.basis = random_orthonormal(d, r, rng);
  for (std::size_t n = 0; n < samples; ++n) {
    s.z.push_back(normal_vector(r, rng));
    s.g.push_back(normal_vector(m, rng));
    if (eps_scale > 0.0) s.eps.push_back(normal_vector(d, rng, eps_scale));
  }
  s.weight = Matrix(m, d, normal_vector(m * d, rng, 1.0 / std::sqrt(static_cast<double>(d))));
  return s;
}

LossBuilder random_quadratic_loss(std::size_t samples, std::size_t m, std::mt19937_64& rng) {
  const Tensor c({samples, m}, normal_vector(samples * m, rng));
  const Tensor t({samples, m}, normal_vector(samples * m, rng));
  return [c, t](Tape& tape, const Tensor& y) {
    const Tensor lin = ops::sum(tape, ops::mul(tape, y, c));
    const Tensor quad = ops::sum(tape, ops::square(tape, ops::sub(tape, y, t)));
    return ops::add(tape, lin, ops::scalar_mul(tape, quad, 0.5));
  };
}

LossBuilder linear_loss(const SubspaceScenario& scenario) {
  Tensor g({scenario.samples(), scenario.outputs()});
  for (std::size_t n = 0; n < scenario.samples(); ++n)
    for (std::size_t i = 0; i < scenario.outputs(); ++i) g[n * scenario.outputs() + i] = scenario.g[n][i];
  return [g](Tape& tape, const Tensor& y) { return ops::sum(tape, ops::mul(tape, y, g)); };
}

Matrix layer_gradient(const SubspaceScenario& scenario, const LossBuilder& loss) {
  Tape tape;
  const Tensor w = tape.parameter(scenario.weight.to_tensor());
  const Tensor y = ops::matmul(tape, input_rows(scenario), ops::transpose(tape, w));
  const Tensor l = loss(tape, y);
  return Matrix::from_tensor(backward(tape, l).of(w));
}

double tail_ratio(const Matrix& m, std::size_t k) {
  const auto s = svd(m).values;
  if (s.empty() || k >= s.size() || !(s[0] > 0.0)) return 0.0;
  return s[k] / s[0];
}

double row_leakage(const Matrix& m, const Matrix& basis) {
  double worst = 0.0;
  std::vector<double> row(m.cols), coef(basis.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) row[j] = m(i, j);
    const double rn = norm(row);
    if (!(rn > 0.0)) continue;
    std::fill(coef.begin(), coef.end(), 0.0);
    for (std::size_t k = 0; k < basis.cols; ++k)
      for (std::size_t j = 0; j < m.cols; ++j) coef[k] += basis(j, k) * row[j];
    double off = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      double v = row[j];
      for (std::size_t k = 0; k < basis.cols; ++k) v -= basis(j, k) * coef[k];
      off += v * v;
    }
    worst = std::max(worst, std::sqrt(off) / rn);
  }
  return worst;
}

Verdict check_prop1(const SubspaceScenario& scenario, const LossBuilder& loss, bool strict) {
  Verdict v;
  v.check = "prop1";
  v.cell = cell_name(scenario.dim(), scenario.rank(), scenario.outputs());
  if (!scenario.exact() && !strict) {
    v.message = "precondition: residuals must be zero";
    return v;
  }
  const Matrix grad = layer_gradient(scenario, loss);
  const double ratio = tail_ratio(grad, scenario.rank());
  const double leak = row_leakage(grad, scenario.basis);
  v.values = {{"tail_ratio", ratio}, {"row_leakage", leak}};
  v.pass = ratio < kRankTolerance && leak < kRankTolerance;
  if (!v.pass) {
    const auto s = svd(grad).values;
    std::ostringstream os;
    os << "rank bound violated: sigma_1=" << s.front() << " sigma_{r+1}="
       << (scenario.rank() < s.size() ? s[scenario.rank()] : 0.0) << " leakage=" << leak;
    v.message = os.str();
  }
  return v;
}

Verdict check_prop2(const SubspaceScenario& scenario) {
  Verdict v;
  v.check = "prop2";
  v.cell = cell_name(scenario.dim(), scenario.rank(), scenario.outputs());
  const std::size_t d = scenario.dim(), m = scenario.outputs();
  double identity = 0.0, decomposition = 0.0, bound_gap = -INFINITY;

  Matrix residual_sum(m, d);
  for (std::size_t n = 0; n < scenario.samples(); ++n) {
    const std::vector<double> eps = scenario.exact() ? std::vector<double>(d, 0.0) : scenario.eps[n];
    const Matrix ge = outer(scenario.g[n], eps);
    residual_sum = residual_sum + ge;
    const double fro = frobenius_norm(ge), prod = norm(scenario.g[n]) * norm(eps);
    identity = std::max(identity, prod > 0.0 ? std::abs(fro - prod) / prod : fro);

    // One sample through a linear loss, so ∂L/∂y = g exactly.
    SubspaceScenario one;
    one.basis = scenario.basis;
    one.weight = scenario.weight;
    one.z = {scenario.z[n]};
    one.g = {scenario.g[n]};
    if (!scenario.exact()) one.eps = {eps};
    const Matrix grad = layer_gradient(one, linear_loss(one));
    std::vector<double> pz(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < scenario.rank(); ++k) pz[i] += scenario.basis(i, k) * scenario.z[n][k];
    const Matrix expected = outer(scenario.g[n], pz) + ge;
    decomposition = std::max(decomposition, frobenius_norm(grad - expected));
    bound_gap = std::max(bound_gap, tail_energy(grad, scenario.rank()) - fro);
  }
  const Matrix batch = layer_gradient(scenario, linear_loss(scenario));
  bound_gap = std::max(bound_gap, tail_energy(batch, scenario.rank()) - frobenius_norm(residual_sum));

  v.values = {{"identity_violation", identity},
              {"decomposition_error", decomposition},
              {"rank_r_excess", bound_gap}};
  const bool ok_identity = identity < kIdentityTolerance;
  const bool ok_decomp = decomposition < kRankTolerance;
  const bool ok_bound = bound_gap <= kRankTolerance;
  v.pass = ok_identity && ok_decomp && ok_bound;
  if (!ok_identity) v.message = "residual norm identity violated";
  else if (!ok_decomp) v.message = "gradient does not split into subspace and residual terms";
  else if (!ok_bound) v.message = "rank-r approximation error exceeds the residual norm";
  return v;
}

double prop2_identity_violation(std::size_t trials, std::size_t m, std::size_t d,
                                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> log_scale(-5.0, 5.0);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto g = normal_vector(m, rng, std::exp(log_scale(rng)));
    const auto e = normal_vector(d, rng, std::exp(log_scale(rng)));
    const double fro = frobenius_norm(outer(g, e));
    const double prod = norm(g) * norm(e);
    worst = std::max(worst, std::abs(fro - prod) / prod);
  }
  return worst;
}

Verdict check_corollary(const SubspaceScenario& scenario, std::size_t steps,
                        const std::vector<double>& etas, bool strict) {
  if (etas.empty()) throw std::invalid_argument("check_corollary: empty rate schedule");
  Verdict v;
  v.check = "corollary";
  v.cell = cell_name(scenario.dim(), scenario.rank(), scenario.outputs()) + " T=" + std::to_string(steps);
  const std::size_t d = scenario.dim(), m = scenario.outputs(), n = scenario.samples();

  // Targets chosen so the first error signal on sample t is g_t.
  std::vector<std::vector<double>> target(n, std::vector<double>(m));
  std::vector<std::vector<double>> inputs(n);
  for (std::size_t s = 0; s < n; ++s) {
    inputs[s] = scenario.input(s);
    for (std::size_t i = 0; i < m; ++i) {
      double y = 0.0;
      for (std::size_t j = 0; j < d; ++j) y += scenario.weight(i, j) * inputs[s][j];
      target[s][i] = y - scenario.g[s][i];
    }
  }

  Matrix w = scenario.weight;
  double off_bound = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t s = t % n;
    const double eta = etas[t % etas.size()];
    Tape tape;
    const Tensor wt = tape.parameter(w.to_tensor());
    const Tensor x({1, d}, inputs[s]);
    const Tensor y = ops::matmul(tape, x, ops::transpose(tape, wt));
    const Tensor err = ops::sub(tape, y, Tensor({1, m}, target[s]));
    const Tensor loss = ops::scalar_mul(tape, ops::sum(tape, ops::square(tape, err)), 0.5);
    const Tensor grad = backward(tape, loss).of(wt);
    for (std::size_t k = 0; k < w.data.size(); ++k) w.data[k] -= eta * grad[k];
    if (!scenario.exact()) off_bound += eta * norm(err.storage()) * norm(scenario.eps[s]);
  }
  const Matrix delta = w - scenario.weight;
  const Matrix a_t = delta * scenario.basis;  // A_T, m×r
  const Matrix off = delta - a_t * transpose(scenario.basis);
  const double dn = frobenius_norm(delta);
  const double ratio = tail_ratio(delta, scenario.rank());
  const double leak = row_leakage(delta, scenario.basis);
  v.values = {{"tail_ratio", ratio},
              {"row_leakage", leak},
              {"reconstruction_error", dn > 0.0 ? frobenius_norm(off) / dn : 0.0},
              {"a_t_norm", frobenius_norm(a_t)}};
  if (scenario.exact() || strict) {
    v.pass = ratio < kRankTolerance && leak < kRankTolerance;
    if (!v.pass) {
      std::ostringstream os;
      os << "accumulated update exceeds rank " << scenario.rank() << ": tail ratio " << ratio
         << ", leakage " << leak;
      v.message = os.str();
    }
  } else {
    const double off_norm = frobenius_norm(off);
    v.values.push_back({"off_subspace_norm", off_norm});
    v.values.push_back({"off_subspace_bound", off_bound});
    v.pass = off_norm <= off_bound + kRankTolerance;
    if (!v.pass) v.message = "off-subspace component exceeds the accumulated residual bound";
  }
  return v;
}

std::vector<Verdict> run_grid(const GridSpec& grid, std::uint64_t seed) {
  std::vector<Verdict> out;
  for (std::size_t d : grid.d) {
    for (std::size_t r : grid.r) {
      for (std::size_t m : grid.m) {
        // Per-cell stream, so a cell's draws do not depend on the rest of the grid.
        auto rng = make_rng(mix_seed(seed, kGridStream), d * 1000003 + r * 1009 + m);
        if (r > d) {
          Verdict v;
          v.check = "grid";
          v.cell = cell_name(d, r, m);
          v.message = "r exceeds d";
          out.push_back(v);
          continue;
        }
        const auto scenario = SubspaceScenario::random(d, r, m, grid.samples, grid.eps_scale, rng);
        const bool exact_checks = scenario.exact() || grid.strict;
        if (exact_checks) {
          out.push_back(check_prop1(scenario, random_quadratic_loss(grid.samples, m, rng), grid.strict));
        } else {
          out.push_back(check_prop2(scenario));
        }
        for (std::size_t t : grid.steps) {
          Verdict fixed = check_corollary(scenario, t, {0.01}, grid.strict);
          fixed.cell += " eta=const";
          out.push_back(std::move(fixed));
          std::uniform_real_distribution<double> rate(0.001, 0.02);
          std::vector<double> schedule(t);
          for (double& e : schedule) e = rate(rng);
          Verdict varied = check_corollary(scenario, t, schedule, grid.strict);
          varied.cell += " eta=random";
          out.push_back(std::move(varied));
        }
      }
    }
  }
  return out;
}

Verdict check_prop1_on_model(const model::FoundationModel& model, const world::SceneSample& scene,
                             const world::SparseObservation& obs, std::size_t r) {
  Verdict v;
  v.check = "prop1_model";
  v.cell = "dec.stage0 r=" + std::to_string(r);
  tto::AdaptConfig cfg;
  cfg.scope = tto::Scope::decoder_ft;
  cfg.decoder_layers = std::vector<std::size_t>{0};
  cfg.iterations = 1;
  cfg.record_gradients = true;
  analysis::ProjectionSpec spec;
  spec.mode = analysis::ProjectionSpec::Mode::top_k;
  spec.k = r;
  spec.layer = 0;
  spec.center = false;
  cfg.projection = spec;
  const tto::AdaptResult res = tto::adapt(model, scene.image, obs, cfg);
  const Matrix grad = Matrix::from_tensor(res.trace.gradients.at(0).at("dec.stage0.weight"));

  Tape tape(Tape::Mode::no_grad);
  const Tensor f = model::encode(model, tape, scene.image);
  const Matrix basis = analysis::feature_pca(f).top(r);
  const double ratio = tail_ratio(grad, r);
  const double leak = row_leakage(grad, basis);
  v.values = {{"tail_ratio", ratio}, {"row_leakage", leak}};
  v.pass = ratio < kRankTolerance && leak < kRankTolerance;
  if (!v.pass) v.message = "decoder stage gradient leaves the projected feature subspace";
  return v;
}

std::vector<double> default_radii() {
  std::vector<double> out;
  for (int k = 0; k <= 40; ++k) out.push_back(std::ldexp(1.0, -k));
  return out;
}

LinearityReport linearity_probe(const model::FoundationModel& model, const Tensor& features,
                                std::uint64_t seed, const std::vector<double>& radii) {
  LinearityReport rep;
  rep.verdict.check = "linearity";
  rep.verdict.cell = "seed=" + std::to_string(seed);

  auto rng = make_rng(seed, kProbeStream);
  Tensor u(features.shape(), normal_vector(features.numel(), rng));
  const double un = norm(u.storage());
  for (double& x : u.storage()) x /= un;

  const auto base = activation_signs(model, features);
  for (double delta : radii) {
    if (!(delta > 0.0)) continue;
    bool fixed = true;
    for (double frac : {0.25, 0.5, 0.75, 1.0}) {
      if (activation_signs(model, along(features, u, frac * delta)) != base) {
        fixed = false;
        break;
      }
    }
    if (fixed) {
      rep.found = true;
      rep.delta = delta;
      break;
    }
  }
  if (rep.found) rep.defect = midpoint_defect(model, features, u, rep.delta);
  rep.control_defect = forced_kink_defect(model, features);

  const bool affine = !rep.found || rep.defect < kRankTolerance;
  const bool control = rep.control_defect > kControlFloor;
  rep.verdict.values = {{"delta", rep.delta},
                        {"defect", rep.defect},
                        {"control_defect", rep.control_defect},
                        {"found", rep.found ? 1.0 : 0.0}};
  rep.verdict.pass = affine && control;
  if (!rep.found) rep.verdict.message = "no linear neighborhood at tolerance";
  else if (!affine) rep.verdict.message = "decoder not affine on a sign-stable segment";
  else if (!control) rep.verdict.message = "negative control did not break collinearity";
  return rep;
}

}  // namespace ltto::theory
