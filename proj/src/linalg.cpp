#include "ncforge/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ncforge/error.hpp"

namespace ncf {

namespace {

// Jacobi on the rows of `w` (each row is one column of the matrix being
// decomposed). On return rows of `w` are mutually orthogonal and `v`
// accumulates the rotations.
void orthogonalize_rows(Matrix& w, Matrix& v) {
  const std::size_t n = w.rows();
  constexpr int kMaxSweeps = 80;
  constexpr double kEps = 1e-15;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto wp = w.row(p);
        auto wq = w.row(q);
        const double alpha = dot(wp, wp);
        const double beta = dot(wq, wq);
        const double gamma = dot(wp, wq);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kEps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < wp.size(); ++i) {
          const double a = wp[i];
          const double b = wq[i];
          wp[i] = c * a - s * b;
          wq[i] = s * a + c * b;
        }
        auto vp = v.row(p);
        auto vq = v.row(q);
        for (std::size_t i = 0; i < vp.size(); ++i) {
          const double a = vp[i];
          const double b = vq[i];
          vp[i] = c * a - s * b;
          vq[i] = s * a + c * b;
        }
      }
    }
    if (!rotated) return;
  }
}

// SVD for a tall-or-square matrix (rows >= cols).
Svd svd_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix w = a.transpose();  // n x m
  Matrix vt = Matrix::identity(n);  // row i = i-th column of V
  orthogonalize_rows(w, vt);

  std::vector<double> sv(n);
  for (std::size_t i = 0; i < n; ++i) sv[i] = norm(w.row(i));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sv[x] > sv[y]; });

  Svd out{Matrix(m, n), Vector(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.s[k] = sv[src];
    for (std::size_t i = 0; i < m; ++i) {
      out.u(i, k) = sv[src] > 0.0 ? w(src, i) / sv[src] : 0.0;
    }
    for (std::size_t i = 0; i < n; ++i) out.v(i, k) = vt(src, i);
  }
  return out;
}

}  // namespace

Svd svd(const Matrix& a) {
  if (!a.all_finite()) throw InvalidInput("svd: non-finite input");
  if (a.rows() >= a.cols()) return svd_tall(a);
  Svd t = svd_tall(a.transpose());
  return Svd{std::move(t.v), std::move(t.s), std::move(t.u)};
}

Matrix pinv(const Matrix& m, double tol) {
  if (!(tol > 0.0)) throw InvalidInput("pinv: tolerance must be positive");
  if (!m.all_finite()) throw InvalidInput("pinv: non-finite input");
  Matrix out(m.cols(), m.rows());
  if (m.empty()) return out;
  const Svd d = svd(m);
  const double cutoff = tol * (d.s.empty() ? 0.0 : d.s.front());
  for (std::size_t k = 0; k < d.s.size(); ++k) {
    if (d.s[k] <= cutoff || d.s[k] == 0.0) continue;
    const double inv = 1.0 / d.s[k];
    for (std::size_t i = 0; i < m.cols(); ++i) {
      const double vik = d.v(i, k) * inv;
      if (vik == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < m.rows(); ++j) orow[j] += vik * d.u(j, k);
    }
  }
  return out;
}

std::size_t rank(const Matrix& m, double tol) {
  if (m.empty()) return 0;
  const Svd d = svd(m);
  const double cutoff = tol * d.s.front();
  return static_cast<std::size_t>(std::count_if(
      d.s.begin(), d.s.end(), [&](double s) { return s > cutoff && s > 0.0; }));
}

Matrix orthonormal_columns(const Matrix& a) {
  Matrix q = a.transpose();  // work on rows
  for (std::size_t j = 0; j < q.rows(); ++j) {
    auto qj = q.row(j);
    const double original = norm(qj);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < j; ++i) {
        auto qi = q.row(i);
        const double proj = dot(qi, qj);
        for (std::size_t c = 0; c < qj.size(); ++c) qj[c] -= proj * qi[c];
      }
    }
    const double len = norm(qj);
    if (!(len > 1e-12 * std::max(1.0, original))) {
      throw DegenerateGeometry("orthonormal_columns: column " + std::to_string(j) +
                               " is linearly dependent on the previous ones");
    }
    for (double& v : qj) v /= len;
  }
  return q.transpose();
}

}  // namespace ncf
