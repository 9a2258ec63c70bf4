#pragma once

// Independent oracles for tests: they build the orthogonal complements
// U_perp, V_perp explicitly and evaluate the block formulas directly, which
// the library itself never does.

#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>

#include "lowrank/core.hpp"
#include "lowrank/objective.hpp"

namespace lowrank::testing {

/// Columns r..m-1 of the full Householder Q of u (m x r, orthonormal).
inline Matrix full_complement(const Matrix& u) {
  const Index m = u.rows();
  const Index r = u.cols();
  if (r == 0) return Matrix::Identity(m, m);
  Eigen::HouseholderQR<Matrix> qr(u);
  const Matrix q = qr.householderQ() * Matrix::Identity(m, m);
  return q.rightCols(m - r);
}

/// Best rank-k approximation from a full SVD, no rank policy.
inline Matrix best_rank(const Matrix& z, Index k) {
  if (k <= 0 || z.size() == 0) return Matrix::Zero(z.rows(), z.cols());
  Eigen::JacobiSVD<Matrix> svd(z, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Index kk = std::min<Index>(k, svd.singularValues().size());
  return svd.matrixU().leftCols(kk) * svd.singularValues().head(kk).asDiagonal() *
         svd.matrixV().leftCols(kk).transpose();
}

struct Blocks {
  Matrix U, Up, V, Vp;
  Matrix A, B, C, D;
};

inline Blocks blocks(const Matrix& z, const FactoredMatrix& x) {
  Blocks b;
  b.U = x.U();
  b.V = x.V();
  b.Up = full_complement(b.U);
  b.Vp = full_complement(b.V);
  b.A = b.U.transpose() * z * b.V;
  b.B = b.U.transpose() * z * b.Vp;
  b.C = b.Up.transpose() * z * b.V;
  b.D = b.Up.transpose() * z * b.Vp;
  return b;
}

inline Matrix reassemble(const Blocks& b, const Matrix& a, const Matrix& bb, const Matrix& c,
                         const Matrix& d) {
  return b.U * a * b.V.transpose() + b.U * bb * b.Vp.transpose() + b.Up * c * b.V.transpose() +
         b.Up * d * b.Vp.transpose();
}

/// Projection onto the tangent cone at X of rank rx <= r: [[A, B], [C, D_{r-rx}]].
inline Matrix tangent_projection(const Matrix& z, const FactoredMatrix& x, Index r) {
  if (x.rank() == 0) return best_rank(z, r);
  const Blocks b = blocks(z, x);
  return reassemble(b, b.A, b.B, b.C, best_rank(b.D, r - x.rank()));
}

/// Projection onto the restricted tangent cone: the larger of B, C kept
/// (B when the norms tie).
inline Matrix restricted_projection(const Matrix& z, const FactoredMatrix& x, Index r) {
  if (x.rank() == 0) return best_rank(z, r);
  const Blocks b = blocks(z, x);
  const Matrix dk = best_rank(b.D, r - x.rank());
  if (b.B.norm() >= b.C.norm()) {
    return reassemble(b, b.A, b.B, Matrix::Zero(b.C.rows(), b.C.cols()), dk);
  }
  return reassemble(b, b.A, Matrix::Zero(b.B.rows(), b.B.cols()), b.C, dk);
}

/// U diag(s) V^T by explicit loops.
inline Matrix loop_product(const Matrix& u, const Vector& s, const Matrix& v) {
  Matrix out = Matrix::Zero(u.rows(), v.rows());
  for (Index i = 0; i < u.rows(); ++i)
    for (Index j = 0; j < v.rows(); ++j) {
      double acc = 0.0;
      for (Index k = 0; k < s.size(); ++k) acc += u(i, k) * s(k) * v(j, k);
      out(i, j) = acc;
    }
  return out;
}

/// Central finite difference of f at x along h with step t.
inline double central_difference(const Objective& obj, const Matrix& x, const Matrix& h, double t) {
  return (obj.value(x + t * h) - obj.value(x - t * h)) / (2.0 * t);
}

}  // namespace lowrank::testing
