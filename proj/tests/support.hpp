#pragma once

// Shared generators and brute-force oracles for the unit tests. Nothing in
// here calls into the library's numerics, so it can serve as an
// independent reference.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "ncforge/dataset.hpp"
#include "ncforge/matrix.hpp"

namespace testing {

using ncf::Labels;
using ncf::Matrix;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                            double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = g(rng);
  return m;
}

// Labels 0..K-1 cycling, so every class is present when n >= K.
inline Labels cyclic_labels(std::size_t n, std::size_t k) {
  Labels y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % k);
  return y;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline Matrix naive_transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline double frob(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

inline double rel_frob_diff(const Matrix& a, const Matrix& b) {
  double num = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    num += d * d;
  }
  return std::sqrt(num) / std::max(1e-300, frob(b));
}

// Solves A x = B (A square, well conditioned) by Gauss-Jordan elimination
// with partial pivoting.
inline Matrix gauss_solve(Matrix a, Matrix b) {
  const std::size_t n = a.rows();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (std::abs(a(piv, col)) < 1e-300) throw std::runtime_error("gauss_solve: singular");
    for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
    for (std::size_t c = 0; c < b.cols(); ++c) std::swap(b(col, c), b(piv, c));
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) a(r, c) -= f * a(col, c);
      for (std::size_t c = 0; c < b.cols(); ++c) b(r, c) -= f * b(col, c);
    }
  }
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < b.cols(); ++c) b(r, c) /= a(r, r);
  return b;
}

// Class means as K x P, by direct accumulation.
inline Matrix naive_class_means(const Matrix& h, const Labels& y, std::size_t k) {
  Matrix mu(k, h.cols());
  std::vector<double> n(k, 0.0);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    const auto c = static_cast<std::size_t>(y[i]);
    n[c] += 1.0;
    for (std::size_t j = 0; j < h.cols(); ++j) mu(c, j) += h(i, j);
  }
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < h.cols(); ++j) mu(c, j) /= n[c];
  return mu;
}

inline double dotv(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> row_of(const Matrix& m, std::size_t r) {
  return std::vector<double>(m.row(r).begin(), m.row(r).end());
}

inline std::vector<double> col_of(const Matrix& m, std::size_t c) {
  std::vector<double> v(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) v[r] = m(r, c);
  return v;
}

inline double cosv(const std::vector<double>& a, const std::vector<double>& b) {
  return dotv(a, b) / std::sqrt(dotv(a, a) * dotv(b, b));
}

// Random orthogonal n x n matrix (Gram-Schmidt of a Gaussian matrix).
inline Matrix random_rotation(std::size_t n, std::uint64_t seed) {
  Matrix q = random_matrix(n, n, seed);
  for (std::size_t c = 0; c < n; ++c) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t p = 0; p < c; ++p) {
        double d = 0.0;
        for (std::size_t r = 0; r < n; ++r) d += q(r, c) * q(r, p);
        for (std::size_t r = 0; r < n; ++r) q(r, c) -= d * q(r, p);
      }
    }
    double len = 0.0;
    for (std::size_t r = 0; r < n; ++r) len += q(r, c) * q(r, c);
    len = std::sqrt(len);
    for (std::size_t r = 0; r < n; ++r) q(r, c) /= len;
  }
  return q;
}

// Central differences of f at x.
template <typename F>
std::vector<double> numeric_grad(F&& f, std::vector<double> x, double eps = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f(x);
    x[i] = keep - eps;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

}  // namespace testing
