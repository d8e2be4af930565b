// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#include "ltto/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ltto {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw ShapeError("matrix: value count does not match extents");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_tensor(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("matrix: tensor " + shape_str(t.shape()) + " is not 2-D");
  return Matrix(t.dim(0), t.dim(1), t.storage());
}

Tensor Matrix::to_tensor() const { return Tensor({rows, cols}, data); }

std::vector<double> Matrix::column(std::size_t c) const {
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::set_column(std::size_t c, std::span<const double> values) {
  for (std::size_t r = 0; r < rows; ++r) (*this)(r, c) = values[r];
}

Matrix Matrix::left_columns(std::size_t k) const {
  Matrix out(rows, k);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < k; ++c) out(r, c) = (*this)(r, c);
  return out;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw ShapeError("matrix product: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " times " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t p = 0; p < a.cols; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += av * b(p, j);
    }
  }
  return c;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw ShapeError("matrix sum: extents differ");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
  return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) { return a + (-1.0) * b; }

Matrix operator*(double s, const Matrix& a) {
  Matrix c = a;
  for (double& v : c.data) v *= s;
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data) s += v * v;
  return std::sqrt(s);
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data) m = std::max(m, std::abs(v));
  return m;
}

double orthonormality_error(const Matrix& a) {
  const Matrix g = transpose(a) * a;
  double err = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i)
    for (std::size_t j = 0; j < g.cols; ++j)
      err = std::max(err, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  return err;
}

Matrix SpectralDecomposition::reconstruct() const {
  Matrix scaled = left;
  for (std::size_t r = 0; r < scaled.rows; ++r)
    for (std::size_t c = 0; c < scaled.cols; ++c) scaled(r, c) *= values[c];
  return scaled * transpose(right);
}

SpectralDecomposition jacobi_eigen(const Matrix& symmetric) {
  const std::size_t n = symmetric.rows;
  if (symmetric.cols != n) throw std::invalid_argument("jacobi_eigen: matrix is not square");
  const double scale = std::max(1.0, max_abs(symmetric));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(symmetric(i, j) - symmetric(j, i)) > 1e-10 * scale) {
        throw std::invalid_argument("jacobi_eigen: matrix is not symmetric at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }

  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (symmetric(i, j) + symmetric(j, i));
  Matrix v = Matrix::identity(n);
  const double norm = frobenius_norm(a);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off == 0.0 || std::sqrt(2.0 * off) <= 1e-17 * norm) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p), aqq = a(q, q);
        // Negligible against both diagonal entries: drop it.
        if (sweep > 3 && std::abs(app) + 100.0 * std::abs(apq) == std::abs(app) &&
            std::abs(aqq) + 100.0 * std::abs(apq) == std::abs(aqq)) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

  SpectralDecomposition out;
  out.values.resize(n);
  out.left = Matrix(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t src = order[c];
    out.values[c] = a(src, src);
    // Sign convention: largest-magnitude component positive.
    std::size_t arg = 0;
    for (std::size_t r = 0; r < n; ++r)
      if (std::abs(v(r, src)) > std::abs(v(arg, src))) arg = r;
    const double sign = v(arg, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < n; ++r) out.left(r, c) = sign * v(r, src);
  }
  out.right = out.left;
  return out;
}

void orthonormalize_columns(Matrix& a) {
  const std::size_t m = a.rows;
  std::size_t next_unit = 0;
  for (std::size_t c = 0; c < a.cols; ++c) {
    std::vector<double> col = a.column(c);
    const double original = std::sqrt(std::inner_product(col.begin(), col.end(), col.begin(), 0.0));
    for (int attempt = 0;; ++attempt) {
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < c; ++k) {
          double dot = 0.0;
          for (std::size_t r = 0; r < m; ++r) dot += a(r, k) * col[r];
          for (std::size_t r = 0; r < m; ++r) col[r] -= dot * a(r, k);
        }
      }
      const double norm = std::sqrt(std::inner_product(col.begin(), col.end(), col.begin(), 0.0));
      if (norm > 1e-8 * std::max(original, 1e-300) && norm > 1e-150) {
        for (double& x : col) x /= norm;
        break;
      }
      if (next_unit >= m || attempt > static_cast<int>(m)) {
        throw std::runtime_error("orthonormalize_columns: more columns than dimensions");
      }
      std::fill(col.begin(), col.end(), 0.0);
      col[next_unit++] = 1.0;
    }
    a.set_column(c, col);
  }
}

SpectralDecomposition svd(const Matrix& m) {
  if (m.cols > m.rows) {
    SpectralDecomposition t = svd(transpose(m));
    std::swap(t.left, t.right);
    return t;
  }
  const std::size_t n = m.cols;
  const Matrix gram = transpose(m) * m;
  const SpectralDecomposition eig = jacobi_eigen(gram);
  Matrix mv = m * eig.left;  // rows × n, column i = M v_i

  std::vector<double> sigma(n);
  for (std::size_t c = 0; c < n; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) s += mv(r, c) * mv(r, c);
    sigma[c] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SpectralDecomposition out;
  out.values.resize(n);
  out.right = Matrix(n, n);
  out.left = Matrix(m.rows, n);
  const double top = n ? sigma[order[0]] : 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t src = order[c];
    out.values[c] = sigma[src];
    for (std::size_t r = 0; r < n; ++r) out.right(r, c) = eig.left(r, src);
    const bool resolved = sigma[src] > 1e-14 * top && sigma[src] > 1e-300;
    for (std::size_t r = 0; r < m.rows; ++r) {
      out.left(r, c) = resolved ? mv(r, src) / sigma[src] : 0.0;
    }
  }
  orthonormalize_columns(out.left);
  return out;
}

double energy_fraction(std::span<const double> singular_values, std::size_t r) {
  if (r == 0) throw std::invalid_argument("energy_fraction: rank must be at least 1");
  double head = 0.0, total = 0.0;
  for (std::size_t i = 0; i < singular_values.size(); ++i) {
    const double e = singular_values[i] * singular_values[i];
    total += e;
    if (i < r) head += e;
  }
  if (total == 0.0) return 1.0;
  return head / total;
}

double energy_fraction(const Matrix& m, std::size_t r) {
  return energy_fraction(svd(m).values, r);
}

Matrix random_orthonormal(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  if (k > n) throw std::invalid_argument("random_orthonormal: k exceeds dimension");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix a(n, k);
  for (double& v : a.data) v = normal(rng);
  orthonormalize_columns(a);
  return a;
}

double subspace_affinity(const Matrix& p1, const Matrix& p2) {
  if (p1.rows != p2.rows || p1.cols != p2.cols || p1.cols == 0) {
    throw ShapeError("subspace_affinity: bases must share extents");
  }
  const Matrix cross = transpose(p1) * p2;
  const double f = frobenius_norm(cross);
  return f * f / static_cast<double>(p1.cols);
}

}  // namespace ltto
