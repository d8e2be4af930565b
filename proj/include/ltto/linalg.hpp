// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

// Small dense linear algebra for the spectral analyses: a row-major Matrix,
// cyclic Jacobi eigendecomposition and an SVD built on it.

#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "ltto/tensor.hpp"

namespace ltto {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  static Matrix identity(std::size_t n);
  static Matrix from_tensor(const Tensor& t);
  Tensor to_tensor() const;

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::vector<double> column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> values);
  /// First `k` columns.
  Matrix left_columns(std::size_t k) const;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);
Matrix transpose(const Matrix& a);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
/// max |AᵀA − I|.
double orthonormality_error(const Matrix& a);

/// Values in descending order with matching basis columns. For an
/// eigendecomposition `left` and `right` are the same eigenvector matrix;
/// for an SVD they are U and V of the thin factorization M = U·diag(values)·Vᵀ.
struct SpectralDecomposition {
  std::vector<double> values;
  Matrix left;
  Matrix right;

  Matrix reconstruct() const;
};

/// Cyclic Jacobi rotations until the off-diagonal mass is at rounding level.
/// Throws std::invalid_argument for a non-symmetric input.
SpectralDecomposition jacobi_eigen(const Matrix& symmetric);

/// Thin SVD via the eigendecomposition of the smaller Gram matrix.
SpectralDecomposition svd(const Matrix& m);

/// Σ_{i≤r} σ_i² / Σ σ_i²; 1.0 for an all-zero spectrum.
double energy_fraction(std::span<const double> singular_values, std::size_t r);
double energy_fraction(const Matrix& m, std::size_t r);

/// Orthonormal columns spanning a uniformly random k-dimensional subspace of R^n.
Matrix random_orthonormal(std::size_t n, std::size_t k, std::mt19937_64& rng);

/// Gram–Schmidt (two passes) in place; columns that collapse are replaced by
/// unit vectors orthogonal to all previous ones.
void orthonormalize_columns(Matrix& a);

/// ‖P₁ᵀP₂‖_F² / k for two n×k orthonormal bases: mean squared cosine of the
/// principal angles between the spanned subspaces.
double subspace_affinity(const Matrix& p1, const Matrix& p2);

}  // namespace ltto
