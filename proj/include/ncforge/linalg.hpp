#pragma once

#include "ncforge/matrix.hpp"

namespace ncf {

// Thin singular value decomposition a = u * diag(s) * v^T, with
// u: m x r, s: r, v: n x r, r = min(m, n). Singular values are sorted
// in non-increasing order.
struct Svd {
  Matrix u;
  Vector s;
  Matrix v;
};

// One-sided Jacobi SVD. Accurate to working precision at the sizes used
// here (up to a few hundred rows/columns).
Svd svd(const Matrix& a);

inline constexpr double kDefaultPinvTol = 1e-10;

// Moore-Penrose pseudoinverse. Singular values below tol * s_max are
// treated as zero. Throws InvalidInput on non-finite input or tol <= 0.
Matrix pinv(const Matrix& m, double tol = kDefaultPinvTol);

// Numerical rank under the same relative cutoff as pinv.
std::size_t rank(const Matrix& m, double tol = kDefaultPinvTol);

// Orthonormalizes the columns of a (modified Gram-Schmidt, two passes).
// Throws DegenerateGeometry if the columns are linearly dependent.
Matrix orthonormal_columns(const Matrix& a);

}  // namespace ncf
