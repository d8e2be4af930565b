// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#include "ltto/tape.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

namespace ltto {
namespace {

std::atomic<std::uint64_t> g_next_tape_uid{1};

[[noreturn]] void shape_mismatch(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": incompatible shapes " + shape_str(a) +
                   " and " + shape_str(b));
}

[[noreturn]] void bad_shape(OpKind kind, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op_name(kind)) + ": shape " + shape_str(a) + " " + why);
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - small.size());
}

// C[n×m] += A[n×k]·B[k×m]
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * m;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[n×k] += dC[n×m]·Bᵀ
void gemm_nt(const double* dc, const double* b, double* da, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* drow = dc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * m;
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += drow[j] * brow[j];
      da[i * k + p] += acc;
    }
  }
}

// dB[k×m] += Aᵀ·dC
void gemm_tn(const double* a, const double* dc, double* db, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* drow = dc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* dbrow = db + p * m;
      for (std::size_t j = 0; j < m; ++j) dbrow[j] += av * drow[j];
    }
  }
}

struct AlignStats {
  double a = 1.0, b = 0.0, mp = 0.0, ms = 0.0, var = 0.0;
};

AlignStats align_stats(std::span<const double> p, std::span<const double> s, bool fallback) {
  AlignStats st;
  const double n = static_cast<double>(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    st.mp += p[k];
    st.ms += s[k];
  }
  st.mp /= n;
  st.ms /= n;
  double cov = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double dp = p[k] - st.mp;
    st.var += dp * dp;
    cov += dp * (s[k] - st.ms);
  }
  st.var /= n;
  cov /= n;
  st.a = fallback ? 1.0 : cov / st.var;
  st.b = st.ms - st.a * st.mp;
  return st;
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::relu: return "relu";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::square: return "square";
    case OpKind::scalar_mul: return "scalar_mul";
    case OpKind::reshape: return "reshape";
    case OpKind::gather: return "gather";
    case OpKind::resample: return "resample";
    case OpKind::exp: return "exp";
    case OpKind::clamp: return "clamp";
    case OpKind::affine: return "affine";
    case OpKind::align_scale_shift: return "align_scale_shift";
  }
  return "unknown";
}

std::shared_ptr<const ResampleMap> bilinear_resize_map(std::size_t in_h, std::size_t in_w,
                                                       std::size_t out_h, std::size_t out_w) {
  auto map = std::make_shared<ResampleMap>();
  map->in_h = in_h;
  map->in_w = in_w;
  map->out_h = out_h;
  map->out_w = out_w;
  map->row_start.reserve(out_h * out_w + 1);
  map->row_start.push_back(0);

  auto axis = [](std::size_t out, std::size_t n_in, std::size_t n_out, std::size_t& i0,
                 std::size_t& i1, double& frac) {
    const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
    double src = (static_cast<double>(out) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
    i0 = static_cast<std::size_t>(std::floor(src));
    i1 = std::min(i0 + 1, n_in - 1);
    frac = src - static_cast<double>(i0);
  };

  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    axis(y, in_h, out_h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      axis(x, in_w, out_w, x0, x1, fx);
      const std::size_t before = map->taps.size();
      auto add = [&](std::size_t yy, std::size_t xx, double w) {
        if (w == 0.0) return;
        const auto src = static_cast<std::uint32_t>(yy * in_w + xx);
        for (std::size_t t = before; t < map->taps.size(); ++t) {
          if (map->taps[t].src == src) {
            map->taps[t].weight += w;
            return;
          }
        }
        map->taps.push_back({src, w});
      };
      add(y0, x0, (1.0 - fy) * (1.0 - fx));
      add(y0, x1, (1.0 - fy) * fx);
      add(y1, x0, fy * (1.0 - fx));
      add(y1, x1, fy * fx);
      map->row_start.push_back(static_cast<std::uint32_t>(map->taps.size()));
    }
  }
  return map;
}

std::shared_ptr<const ResampleMap> box_smoothing_map(std::size_t h, std::size_t w,
                                                     std::size_t radius) {
  auto map = std::make_shared<ResampleMap>();
  map->in_h = map->out_h = h;
  map->in_w = map->out_w = w;
  map->row_start.push_back(0);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t before = map->taps.size();
      for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
          const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
          const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) ||
              xx >= static_cast<std::ptrdiff_t>(w)) {
            continue;
          }
          map->taps.push_back({static_cast<std::uint32_t>(yy * static_cast<std::ptrdiff_t>(w) + xx), 1.0});
        }
      }
      const double norm = 1.0 / static_cast<double>(map->taps.size() - before);
      for (std::size_t t = before; t < map->taps.size(); ++t) map->taps[t].weight = norm;
      map->row_start.push_back(static_cast<std::uint32_t>(map->taps.size()));
    }
  }
  return map;
}

Tape::Tape(Mode mode) : mode_(mode), uid_(g_next_tape_uid.fetch_add(1)) {}

Tensor Tape::push(OpKind kind, std::vector<std::size_t> inputs, OpAttrs attrs, Tensor value,
                  bool trainable) {
  if (!recording()) return value;
  Node node;
  node.kind = kind;
  node.inputs = std::move(inputs);
  node.attrs = std::move(attrs);
  node.trainable = trainable;
  node.value = value.detached();
  nodes_.push_back(std::move(node));
  value.attach({uid_, nodes_.size() - 1});
  return value;
}

Tensor Tape::constant(const Tensor& value) {
  return push(OpKind::leaf, {}, {}, value.detached(), false);
}

Tensor Tape::parameter(const Tensor& value) {
  if (!recording()) {
    throw std::logic_error("tape: parameters cannot be registered in no_grad mode");
  }
  return push(OpKind::leaf, {}, {}, value.detached(), true);
}

std::size_t Tape::input_node(const Tensor& t) {
  if (t.on_tape()) {
    if (t.node().tape_uid != uid_) {
      throw std::logic_error("tape: input tensor was recorded on a different tape");
    }
    return t.node().index;
  }
  constant(t);
  return nodes_.size() - 1;
}

Tensor Tape::record(OpKind kind, std::span<const Tensor> in, OpAttrs attrs) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw std::invalid_argument(std::string(op_name(kind)) + ": expects " +
                                  std::to_string(n) + " inputs");
    }
  };

  Tensor out;
  std::uint64_t flops = 0;

  switch (kind) {
    case OpKind::leaf:
      throw std::invalid_argument("record: use constant() or parameter() for leaves");

    case OpKind::matmul: {
      need(2);
      const auto& a = in[0];
      const auto& b = in[1];
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        shape_mismatch(kind, a.shape(), b.shape());
      }
      const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
      out = Tensor({n, m});
      gemm_nn(a.data().data(), b.data().data(), out.data().data(), n, k, m);
      flops = 2ull * n * k * m;
      break;
    }

    case OpKind::transpose: {
      need(1);
      const auto& a = in[0];
      if (a.rank() != 2) bad_shape(kind, a.shape(), "is not a matrix");
      const std::size_t r = a.dim(0), c = a.dim(1);
      out = Tensor({c, r});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
      break;
    }

    case OpKind::add: {
      need(2);
      const auto& a = in[0];
      const auto& b = in[1];
      if (!is_suffix(b.shape(), a.shape())) shape_mismatch(kind, a.shape(), b.shape());
      out = a.detached();
      const std::size_t inner = b.numel();
      if (inner > 0) {
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i % inner];
      }
      flops = out.numel();
      break;
    }

    case OpKind::mul: {
      need(2);
      if (in[0].shape() != in[1].shape()) shape_mismatch(kind, in[0].shape(), in[1].shape());
      out = in[0].detached();
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= in[1][i];
      flops = out.numel();
      break;
    }

    case OpKind::relu: {
      need(1);
      out = in[0].detached();
      for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
      flops = out.numel();
      break;
    }

    case OpKind::sum:
    case OpKind::mean: {
      need(1);
      double acc = 0.0;
      for (double v : in[0].data()) acc += v;
      if (kind == OpKind::mean) {
        if (in[0].numel() == 0) bad_shape(kind, in[0].shape(), "is empty");
        acc /= static_cast<double>(in[0].numel());
      }
      out = Tensor::scalar(acc);
      flops = in[0].numel();
      break;
    }

    case OpKind::square: {
      need(1);
      out = in[0].detached();
      for (double& v : out.storage()) v *= v;
      flops = out.numel();
      break;
    }

    case OpKind::scalar_mul: {
      need(1);
      out = in[0].detached();
      for (double& v : out.storage()) v *= attrs.a;
      flops = out.numel();
      break;
    }

    case OpKind::affine: {
      need(1);
      out = in[0].detached();
      for (double& v : out.storage()) v = attrs.a * v + attrs.b;
      flops = 2ull * out.numel();
      break;
    }

    case OpKind::reshape: {
      need(1);
      if (shape_numel(attrs.shape) != in[0].numel()) {
        shape_mismatch(kind, in[0].shape(), attrs.shape);
      }
      out = in[0].reshaped(attrs.shape);
      break;
    }

    case OpKind::gather: {
      need(1);
      const auto& a = in[0];
      out = Tensor({attrs.indices.size()});
      for (std::size_t k = 0; k < attrs.indices.size(); ++k) {
        if (attrs.indices[k] >= a.numel()) {
          bad_shape(kind, a.shape(), "has no flat index " + std::to_string(attrs.indices[k]));
        }
        out[k] = a[attrs.indices[k]];
      }
      break;
    }

    case OpKind::resample: {
      need(1);
      const auto& a = in[0];
      const auto& map = *attrs.map;
      if (a.rank() != 3 || a.dim(0) != map.in_h || a.dim(1) != map.in_w) {
        shape_mismatch(kind, a.shape(), Shape{map.in_h, map.in_w, 0});
      }
      const std::size_t c = a.dim(2);
      out = Tensor({map.out_h, map.out_w, c});
      for (std::size_t p = 0; p + 1 < map.row_start.size(); ++p) {
        double* dst = out.data().data() + p * c;
        for (std::uint32_t t = map.row_start[p]; t < map.row_start[p + 1]; ++t) {
          const double w = map.taps[t].weight;
          const double* src = a.data().data() + std::size_t{map.taps[t].src} * c;
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += w * src[ch];
        }
      }
      flops = 2ull * map.tap_count() * c;
      break;
    }

    case OpKind::exp: {
      need(1);
      out = in[0].detached();
      for (double& v : out.storage()) v = std::exp(v);
      flops = out.numel();
      break;
    }

    case OpKind::clamp: {
      need(1);
      out = in[0].detached();
      for (double& v : out.storage()) v = std::clamp(v, attrs.a, attrs.b);
      flops = out.numel();
      break;
    }

    case OpKind::align_scale_shift: {
      need(1);
      const auto& p = in[0];
      if (p.rank() != 1 || p.numel() != attrs.target.size()) {
        shape_mismatch(kind, p.shape(), Shape{attrs.target.size()});
      }
      if (p.numel() == 0) bad_shape(kind, p.shape(), "is empty");
      const AlignStats st = align_stats(p.data(), attrs.target, attrs.fallback);
      out = p.detached();
      for (double& v : out.storage()) v = st.a * v + st.b;
      flops = 8ull * p.numel();
      break;
    }
  }

#ifndef NDEBUG
  if (!out.all_finite()) {
    throw NumericalError(std::string(op_name(kind)) + ": non-finite output");
  }
#endif

  flops_.forward += flops;
  if (!recording()) return out;

  std::vector<std::size_t> ids;
  ids.reserve(in.size());
  for (const auto& t : in) ids.push_back(input_node(t));
  return push(kind, std::move(ids), std::move(attrs), std::move(out), false);
}

bool Gradients::contains(const Tensor& param) const {
  return param.on_tape() && param.node().tape_uid == tape_uid_ &&
         grads_.count(param.node().index) > 0;
}

const Tensor& Gradients::of(const Tensor& param) const {
  if (!contains(param)) throw std::out_of_range("gradients: tensor is not a parameter");
  return grads_.at(param.node().index);
}

Gradients backward(Tape& tape, const Tensor& loss) {
  if (!loss.on_tape() || loss.node().tape_uid != tape.uid()) {
    throw std::invalid_argument("backward: loss was not recorded on this tape");
  }
  if (loss.numel() != 1 || loss.rank() != 0) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  }

  auto& nodes = tape.nodes_;
  const std::size_t root = loss.node().index;

  // A node needs an adjoint only if some trainable leaf feeds it.
  std::vector<char> live(root + 1, 0);
  for (std::size_t i = 0; i <= root; ++i) {
    if (nodes[i].kind == OpKind::leaf) {
      live[i] = nodes[i].trainable;
    } else {
      for (auto j : nodes[i].inputs) live[i] |= live[j];
    }
  }

  std::vector<std::vector<double>> adj(root + 1);
  auto adjoint = [&](std::size_t i) -> std::vector<double>& {
    if (adj[i].empty()) adj[i].assign(nodes[i].value.numel(), 0.0);
    return adj[i];
  };
  adjoint(root)[0] = 1.0;

  std::uint64_t flops = 0;
  for (std::size_t idx = root + 1; idx-- > 0;) {
    const auto& node = nodes[idx];
    if (!live[idx] || node.kind == OpKind::leaf || adj[idx].empty()) continue;
    const std::vector<double>& up = adj[idx];
    const auto& attrs = node.attrs;
    auto input_value = [&](std::size_t k) -> const Tensor& { return nodes[node.inputs[k]].value; };
    auto wants = [&](std::size_t k) { return live[node.inputs[k]] != 0; };

    switch (node.kind) {
      case OpKind::leaf:
        break;

      case OpKind::matmul: {
        const auto& a = input_value(0);
        const auto& b = input_value(1);
        const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
        if (wants(0)) {
          gemm_nt(up.data(), b.data().data(), adjoint(node.inputs[0]).data(), n, k, m);
          flops += 2ull * n * k * m;
        }
        if (wants(1)) {
          gemm_tn(a.data().data(), up.data(), adjoint(node.inputs[1]).data(), n, k, m);
          flops += 2ull * n * k * m;
        }
        break;
      }

      case OpKind::transpose: {
        if (!wants(0)) break;
        const auto& a = input_value(0);
        const std::size_t r = a.dim(0), c = a.dim(1);
        auto& g = adjoint(node.inputs[0]);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += up[j * r + i];
        break;
      }

      case OpKind::add: {
        if (wants(0)) {
          auto& g = adjoint(node.inputs[0]);
          for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i];
          flops += up.size();
        }
        if (wants(1)) {
          auto& g = adjoint(node.inputs[1]);
          const std::size_t inner = g.size();
          for (std::size_t i = 0; i < up.size(); ++i) g[i % inner] += up[i];
          flops += up.size();
        }
        break;
      }

      case OpKind::mul: {
        for (std::size_t k = 0; k < 2; ++k) {
          if (!wants(k)) continue;
          const auto& other = input_value(1 - k);
          auto& g = adjoint(node.inputs[k]);
          for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * other[i];
          flops += 2ull * up.size();
        }
        break;
      }

      case OpKind::relu: {
        if (!wants(0)) break;
        const auto& x = input_value(0);
        auto& g = adjoint(node.inputs[0]);
        for (std::size_t i = 0; i < up.size(); ++i)
          if (x[i] > 0.0) g[i] += up[i];
        flops += up.size();
        break;
      }

      case OpKind::sum:
      case OpKind::mean: {
        if (!wants(0)) break;
        auto& g = adjoint(node.inputs[0]);
        const double s =
            node.kind == OpKind::mean ? up[0] / static_cast<double>(g.size()) : up[0];
        for (double& v : g) v += s;
        flops += g.size();
        break;
      }

      case OpKind::square: {
        if (!wants(0)) break;
        const auto& x = input_value(0);
        auto& g = adjoint(node.inputs[0]);
        for (std::size_t i = 0; i < up.size(); ++i) g[i] += 2.0 * x[i] * up[i];
        flops += 3ull * up.size();
        break;
      }

      case OpKind::scalar_mul:
      case OpKind::affine: {
        if (!wants(0)) break;
        auto& g = adjoint(node.inputs[0]);
        for (std::size_t i = 0; i < up.size(); ++i) g[i] += attrs.a * up[i];
        flops += 2ull * up.size();
        break;
      }

      case OpKind::reshape: {
        if (!wants(0)) break;
        auto& g = adjoint(node.inputs[0]);
        for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i];
        break;
      }

      case OpKind::gather: {
        if (!wants(0)) break;
        auto& g = adjoint(node.inputs[0]);
        for (std::size_t k = 0; k < up.size(); ++k) g[attrs.indices[k]] += up[k];
        flops += up.size();
        break;
      }

      case OpKind::resample: {
        if (!wants(0)) break;
        const auto& map = *attrs.map;
        const std::size_t c = input_value(0).dim(2);
        auto& g = adjoint(node.inputs[0]);
        for (std::size_t p = 0; p + 1 < map.row_start.size(); ++p) {
          const double* src = up.data() + p * c;
          for (std::uint32_t t = map.row_start[p]; t < map.row_start[p + 1]; ++t) {
            const double w = map.taps[t].weight;
            double* dst = g.data() + std::size_t{map.taps[t].src} * c;
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += w * src[ch];
          }
        }
        flops += 2ull * map.tap_count() * c;
        break;
      }

      case OpKind::exp: {
        if (!wants(0)) break;
        auto& g = adjoint(node.inputs[0]);
        for (std::size_t i = 0; i < up.size(); ++i) g[i] += node.value[i] * up[i];
        flops += up.size();
        break;
      }

      case OpKind::clamp: {
        if (!wants(0)) break;
        const auto& x = input_value(0);
        auto& g = adjoint(node.inputs[0]);
        for (std::size_t i = 0; i < up.size(); ++i)
          if (x[i] >= attrs.a && x[i] <= attrs.b) g[i] += up[i];
        flops += up.size();
        break;
      }

      case OpKind::align_scale_shift: {
        if (!wants(0)) break;
        const auto& p = input_value(0);
        const auto& s = attrs.target;
        const std::size_t n = p.numel();
        const AlignStats st = align_stats(p.data(), s, attrs.fallback);
        double ubar = 0.0;
        for (double u : up) ubar += u;
        ubar /= static_cast<double>(n);
        auto& g = adjoint(node.inputs[0]);
        if (attrs.fallback) {
          for (std::size_t j = 0; j < n; ++j) g[j] += up[j] - ubar;
          flops += 2ull * n;
          break;
        }
        // out_k = ms + a·(p_k − mp) with a = cov/var, so
        // ∂L/∂p_j = a·(u_j − ū) + c·∂a/∂p_j, c = Σ_k u_k (p_k − mp),
        // ∂a/∂p_j = ((s_j − ms) − 2a(p_j − mp)) / (n·var).
        double c = 0.0;
        for (std::size_t k = 0; k < n; ++k) c += up[k] * (p[k] - st.mp);
        const double denom = static_cast<double>(n) * st.var;
        for (std::size_t j = 0; j < n; ++j) {
          const double da = ((s[j] - st.ms) - 2.0 * st.a * (p[j] - st.mp)) / denom;
          g[j] += st.a * (up[j] - ubar) + c * da;
        }
        flops += 16ull * n;
        break;
      }
    }
  }
  tape.flops_.backward += flops;

  Gradients out;
  out.tape_uid_ = tape.uid();
  for (std::size_t i = 0; i <= root; ++i) {
    if (nodes[i].kind != OpKind::leaf || !nodes[i].trainable) continue;
    Tensor g(nodes[i].value.shape());
    if (!adj[i].empty()) g.storage() = std::move(adj[i]);
    out.grads_.emplace(i, std::move(g));
  }
  // Parameters registered after the loss node do not influence it.
  for (std::size_t i = root + 1; i < nodes.size(); ++i) {
    if (nodes[i].kind == OpKind::leaf && nodes[i].trainable) {
      out.grads_.emplace(i, Tensor(nodes[i].value.shape()));
    }
  }
  return out;
}

std::vector<double> finite_difference_grad(
    const std::function<double(std::span<const double>)>& f, std::span<const double> theta,
    double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_grad: step must be positive");
  std::vector<double> x(theta.begin(), theta.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

namespace ops {
namespace {
Tensor unary(Tape& tape, OpKind kind, const Tensor& a, OpAttrs attrs = {}) {
  const Tensor in[] = {a};
  return tape.record(kind, in, std::move(attrs));
}
Tensor binary(Tape& tape, OpKind kind, const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  return tape.record(kind, in);
}
}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(tape, OpKind::matmul, a, b);
}
Tensor transpose(Tape& tape, const Tensor& a) { return unary(tape, OpKind::transpose, a); }
Tensor add(Tape& tape, const Tensor& a, const Tensor& b) { return binary(tape, OpKind::add, a, b); }
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch(OpKind::add, a.shape(), b.shape());
  return add(tape, a, scalar_mul(tape, b, -1.0));
}
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) { return binary(tape, OpKind::mul, a, b); }
Tensor relu(Tape& tape, const Tensor& a) { return unary(tape, OpKind::relu, a); }
Tensor sum(Tape& tape, const Tensor& a) { return unary(tape, OpKind::sum, a); }
Tensor mean(Tape& tape, const Tensor& a) { return unary(tape, OpKind::mean, a); }
Tensor square(Tape& tape, const Tensor& a) { return unary(tape, OpKind::square, a); }

Tensor scalar_mul(Tape& tape, const Tensor& a, double c) {
  OpAttrs attrs;
  attrs.a = c;
  return unary(tape, OpKind::scalar_mul, a, std::move(attrs));
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return unary(tape, OpKind::reshape, a, std::move(attrs));
}

Tensor gather(Tape& tape, const Tensor& a, std::vector<std::size_t> flat_indices) {
  OpAttrs attrs;
  attrs.indices = std::move(flat_indices);
  return unary(tape, OpKind::gather, a, std::move(attrs));
}

Tensor resample(Tape& tape, const Tensor& a, std::shared_ptr<const ResampleMap> map) {
  OpAttrs attrs;
  attrs.map = std::move(map);
  return unary(tape, OpKind::resample, a, std::move(attrs));
}

Tensor exp(Tape& tape, const Tensor& a) { return unary(tape, OpKind::exp, a); }

Tensor clamp(Tape& tape, const Tensor& a, double lo, double hi) {
  OpAttrs attrs;
  attrs.a = lo;
  attrs.b = hi;
  return unary(tape, OpKind::clamp, a, std::move(attrs));
}

Tensor affine(Tape& tape, const Tensor& x, double a, double b) {
  OpAttrs attrs;
  attrs.a = a;
  attrs.b = b;
  return unary(tape, OpKind::affine, x, std::move(attrs));
}

Tensor align_scale_shift(Tape& tape, const Tensor& pred, std::vector<double> target,
                         bool fallback) {
  OpAttrs attrs;
  attrs.target = std::move(target);
  attrs.fallback = fallback;
  return unary(tape, OpKind::align_scale_shift, pred, std::move(attrs));
}

}  // namespace ops
}  // namespace ltto
