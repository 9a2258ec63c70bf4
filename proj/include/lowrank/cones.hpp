#pragma once

// Block decomposition of an ambient matrix relative to a foot point X = U S V^T
// and the projections built on it:
//
//   Z = [U U_perp] [A B; C D] [V V_perp]^T
//
// The orthogonal complements U_perp, V_perp are never formed. Instead the
// off-diagonal blocks are carried as U^T Z (I - V V^T) = B V_perp^T and
// (I - U U^T) Z V = U_perp C, and the lower-right block as the ambient residual
// (I - U U^T) Z (I - V V^T) = U_perp D V_perp^T, which has the same singular
// values as D.

#include <algorithm>
#include <cmath>
#include <string>

#include "lowrank/core.hpp"

namespace lowrank {

enum class Branch { b_kept, c_kept, full_tangent, zero_foot };

inline const char* to_string(Branch b) {
  switch (b) {
    case Branch::b_kept: return "B_kept";
    case Branch::c_kept: return "C_kept";
    case Branch::full_tangent: return "full_tangent";
    case Branch::zero_foot: return "zero_foot";
  }
  return "unknown";
}

/// Squared-norm differences below this fraction of ||Z||^2 count as a tie
/// between the B and C blocks; ties keep B.
inline constexpr double kBranchTieTolerance = 1e-13;

inline bool keeps_row_block(double b_sq, double c_sq, double scale_sq) {
  return b_sq - c_sq >= -kBranchTieTolerance * scale_sq;
}

struct TangentDecomposition {
  Matrix A;           // U^T Z V
  Matrix G1;          // U^T Z
  Matrix G2;          // Z V
  Matrix B_part;      // G1 - A V^T  (= B V_perp^T)
  Matrix C_part;      // G2 - U A    (= U_perp C)
  Matrix D_residual;  // Z - U G1 + (U A - G2) V^T  (= U_perp D V_perp^T)
  double norm_A = 0.0;
  double norm_B = 0.0;
  double norm_C = 0.0;
};

struct ConeProjection {
  FactoredMatrix value;
  double norm = 0.0;
  Branch branch = Branch::full_tangent;
  double norm_A = 0.0;
  double norm_B = 0.0;
  double norm_C = 0.0;
  double norm_D_kept = 0.0;  // ||truncation of D||
  Index d_rank = 0;
};

namespace detail {

inline void check_shapes(const Matrix& z, const FactoredMatrix& x, const char* who) {
  if (z.rows() != x.rows() || z.cols() != x.cols()) {
    throw PreconditionError(std::string(who) + ": Z and X have different shapes");
  }
}

inline void check_rank_bound(const FactoredMatrix& x, Index r, const char* who) {
  if (r < 1 || r > std::min(x.rows(), x.cols())) {
    throw PreconditionError(std::string(who) + ": rank bound outside [1, min(m, n)]");
  }
  if (x.rank() > r) {
    throw PreconditionError(std::string(who) + ": rank(X) exceeds the rank bound");
  }
}

}  // namespace detail

inline TangentDecomposition decompose(const Matrix& z, const FactoredMatrix& x) {
  detail::check_shapes(z, x, "decompose");
  if (x.rank() == 0) {
    throw PreconditionError(
        "decompose: foot point has rank 0; use project_zero_foot instead");
  }
  const Matrix& u = x.U();
  const Matrix& v = x.V();
  TangentDecomposition d;
  d.G1 = u.transpose() * z;
  d.G2 = z * v;
  d.A = d.G1 * v;
  d.B_part = d.G1 - d.A * v.transpose();
  d.C_part = d.G2 - u * d.A;
  d.D_residual = z - u * d.G1 - d.C_part * v.transpose();
  d.norm_A = d.A.norm();
  d.norm_B = d.B_part.norm();
  d.norm_C = d.C_part.norm();
  return d;
}

/// Projection onto R_{<=r}, the tangent cone at the zero matrix.
inline ConeProjection project_zero_foot(const Matrix& z, Index r,
                                        const RankPolicy& policy = {}) {
  if (r < 1) throw PreconditionError("project_zero_foot: rank bound must be >= 1");
  ConeProjection p;
  p.value = truncated_svd(z, std::min<Index>(r, std::min(z.rows(), z.cols())), policy);
  p.norm = p.value.norm();
  p.norm_D_kept = p.norm;
  p.d_rank = p.value.rank();
  p.branch = Branch::zero_foot;
  return p;
}

/// Projection onto the tangent cone of R_{<=r} at X: keeps A, B, C and the
/// best rank-(r - rank X) approximation of D.
inline ConeProjection project_tangent(const Matrix& z, const FactoredMatrix& x, Index r,
                                      const RankPolicy& policy = {}) {
  detail::check_shapes(z, x, "project_tangent");
  detail::check_rank_bound(x, r, "project_tangent");
  if (x.rank() == 0) return project_zero_foot(z, r, policy);

  const Index rx = x.rank();
  const auto d = decompose(z, x);
  const FactoredMatrix dk = truncated_svd(d.D_residual, r - rx, policy);
  const Matrix dense = x.U() * d.G1 + d.C_part * x.V().transpose() + dk.dense();

  ConeProjection p;
  p.value = truncated_svd(dense, std::min(r + rx, std::min(z.rows(), z.cols())), policy);
  p.norm_A = d.norm_A;
  p.norm_B = d.norm_B;
  p.norm_C = d.norm_C;
  p.norm_D_kept = dk.norm();
  p.d_rank = dk.rank();
  p.norm = std::sqrt(d.norm_A * d.norm_A + d.norm_B * d.norm_B + d.norm_C * d.norm_C +
                     p.norm_D_kept * p.norm_D_kept);
  p.branch = Branch::full_tangent;
  return p;
}

/// Projection onto the restricted tangent cone at X: keeps A, the larger of
/// the two off-diagonal blocks (B on ties), and the rank-(r - rank X)
/// truncation of D. At a rank-0 foot point this is project_zero_foot.
inline ConeProjection project_restricted(const Matrix& z, const FactoredMatrix& x, Index r,
                                         const RankPolicy& policy = {}) {
  detail::check_shapes(z, x, "project_restricted");
  detail::check_rank_bound(x, r, "project_restricted");
  if (x.rank() == 0) {
    throw PreconditionError(
        "project_restricted: foot point has rank 0; use project_zero_foot instead");
  }

  const Index rx = x.rank();
  const auto d = decompose(z, x);
  const FactoredMatrix dk = truncated_svd(d.D_residual, r - rx, policy);
  const bool keep_b = keeps_row_block(d.norm_B * d.norm_B, d.norm_C * d.norm_C,
                                      z.squaredNorm());
  Matrix dense = keep_b ? Matrix(x.U() * d.G1) : Matrix(d.G2 * x.V().transpose());
  dense += dk.dense();

  ConeProjection p;
  p.value = truncated_svd(dense, r, policy);
  p.norm_A = d.norm_A;
  p.norm_B = d.norm_B;
  p.norm_C = d.norm_C;
  p.norm_D_kept = dk.norm();
  p.d_rank = dk.rank();
  const double off = keep_b ? d.norm_B : d.norm_C;
  p.norm = std::sqrt(d.norm_A * d.norm_A + off * off + p.norm_D_kept * p.norm_D_kept);
  p.branch = keep_b ? Branch::b_kept : Branch::c_kept;
  return p;
}

/// Norm of the projection of -g onto the tangent cone at X. Only the norm is
/// unique; the projected matrix may not be when D has tied singular values.
inline double stationarity_measure(const FactoredMatrix& x, const Matrix& g, Index r,
                                   const RankPolicy& policy = {}) {
  detail::check_shapes(g, x, "stationarity_measure");
  detail::check_rank_bound(x, r, "stationarity_measure");
  if (x.rank() == 0) {
    return truncated_svd(-g, std::min<Index>(r, std::min(g.rows(), g.cols())), policy)
        .norm();
  }
  const auto d = decompose(-g, x);
  const double tail = truncated_svd(d.D_residual, r - x.rank(), policy).norm();
  return std::sqrt(d.norm_A * d.norm_A + d.norm_B * d.norm_B + d.norm_C * d.norm_C +
                   tail * tail);
}

}  // namespace lowrank
