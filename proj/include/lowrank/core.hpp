#pragma once

// Factored low-rank matrices and the dense linear-algebra primitives used by
// every solver: truncated SVD (small and large scale) and thin QR with column
// pivoting. Rank decisions are made by a RankPolicy so that a numerically
// negligible singular value never survives as a factor.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "lowrank/random.hpp"

namespace lowrank {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a caller violates an operation's documented precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Singular values sigma_i <= max(abs_tol, rel_tol * sigma_1) are treated as
/// zero. The same rule decides the numerical rank of pivoted QR factors, with
/// |R(i,i)| in place of sigma_i.
struct RankPolicy {
  double abs_tol = 0.0;
  double rel_tol = 1e-12;

  void validate() const {
    if (!std::isfinite(abs_tol) || !std::isfinite(rel_tol) || abs_tol < 0.0 ||
        rel_tol < 0.0) {
      throw PreconditionError("RankPolicy: tolerances must be finite and >= 0");
    }
  }

  double threshold(double largest) const {
    return std::max(abs_tol, rel_tol * largest);
  }

  /// Number of leading entries of a nonincreasing sequence above threshold.
  template <class Derived>
  Index numerical_rank(const Eigen::MatrixBase<Derived>& values) const {
    if (values.size() == 0) return 0;
    const double thr = threshold(std::abs(values(0)));
    Index k = 0;
    while (k < values.size() && std::abs(values(k)) > thr) ++k;
    return k;
  }
};

/// Thin SVD triple U diag(sigma) V^T of a rank-k matrix. The zero matrix is
/// represented with k = 0 and empty factors, never with zero singular values.
class FactoredMatrix {
 public:
  FactoredMatrix() = default;

  FactoredMatrix(Matrix U, Vector sigma, Matrix V)
      : U_(std::move(U)), sigma_(std::move(sigma)), V_(std::move(V)) {
    const Index k = sigma_.size();
    if (U_.cols() != k || V_.cols() != k) {
      throw PreconditionError("FactoredMatrix: factor widths disagree with rank");
    }
    if (k > std::min(U_.rows(), V_.rows())) {
      throw PreconditionError("FactoredMatrix: rank exceeds min(m, n)");
    }
    for (Index i = 0; i < k; ++i) {
      if (!(sigma_(i) > 0.0) || !std::isfinite(sigma_(i))) {
        throw PreconditionError(
            "FactoredMatrix: singular values must be finite and positive");
      }
      if (i > 0 && sigma_(i) > sigma_(i - 1)) {
        throw PreconditionError(
            "FactoredMatrix: singular values must be nonincreasing");
      }
    }
  }

  static FactoredMatrix zero(Index m, Index n) {
    return FactoredMatrix(Matrix(m, 0), Vector(0), Matrix(n, 0));
  }

  Index rows() const { return U_.rows(); }
  Index cols() const { return V_.rows(); }
  Index rank() const { return sigma_.size(); }
  bool is_zero() const { return sigma_.size() == 0; }

  const Matrix& U() const { return U_; }
  const Vector& sigma() const { return sigma_; }
  const Matrix& V() const { return V_; }

  /// k-th largest singular value (1-based, as sigma_k); zero beyond the rank.
  double singular_value(Index k) const {
    return (k >= 1 && k <= rank()) ? sigma_(k - 1) : 0.0;
  }

  double norm() const { return sigma_.norm(); }

  /// The first k singular triples, i.e. a metric projection onto rank <= k.
  /// When sigma_k = sigma_{k+1} the trailing triple is dropped by index.
  FactoredMatrix leading(Index k) const {
    k = std::clamp<Index>(k, 0, rank());
    return FactoredMatrix(U_.leftCols(k), sigma_.head(k), V_.leftCols(k));
  }

  FactoredMatrix scaled(double alpha) const {
    if (!(alpha > 0.0)) throw PreconditionError("FactoredMatrix::scaled: alpha must be > 0");
    return FactoredMatrix(U_, sigma_ * alpha, V_);
  }

  Matrix dense() const {
    return U_ * sigma_.asDiagonal() * V_.transpose();
  }

  /// max(||U^T U - I||_F, ||V^T V - I||_F).
  double orthonormality_residual() const {
    const Index k = rank();
    if (k == 0) return 0.0;
    const double ru = (U_.transpose() * U_ - Matrix::Identity(k, k)).norm();
    const double rv = (V_.transpose() * V_ - Matrix::Identity(k, k)).norm();
    return std::max(ru, rv);
  }

 private:
  Matrix U_{Matrix(0, 0)};
  Vector sigma_{Vector(0)};
  Matrix V_{Matrix(0, 0)};
};

inline Matrix assemble(const FactoredMatrix& x) { return x.dense(); }

/// Thrown by iterative backends that did not reach the requested accuracy.
/// Carries the best iterate so the caller can decide whether to use it.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, FactoredMatrix best, double residual)
      : Error(what), best_(std::move(best)), residual_(residual) {}
  const FactoredMatrix& best() const { return best_; }
  double residual() const { return residual_; }

 private:
  FactoredMatrix best_;
  double residual_;
};

/// Small-scale means the smallest dimension of the decomposed matrix is at
/// most 2r; every other truncated SVD is large scale.
inline bool is_small_scale(Index rows, Index cols, Index r) {
  return std::min(rows, cols) <= 2 * r;
}

namespace detail {

/// Keeps min(k, numerical rank) leading triples of a full thin SVD.
inline FactoredMatrix keep_leading(const Matrix& U, const Vector& s, const Matrix& V,
                                   Index k, const RankPolicy& policy) {
  const Index kept = std::min<Index>(k, policy.numerical_rank(s));
  return FactoredMatrix(U.leftCols(kept), s.head(kept), V.leftCols(kept));
}

}  // namespace detail

/// Best rank-<=k approximation of z (Eckart-Young), with the rank further
/// capped by the numerical rank of z under `policy`.
inline FactoredMatrix truncated_svd(const Matrix& z, Index k,
                                    const RankPolicy& policy = {}) {
  const Index m = z.rows();
  const Index n = z.cols();
  if (k < 0 || k > std::min(m, n)) {
    throw PreconditionError("truncated_svd: rank budget outside [0, min(m, n)]");
  }
  if (k == 0 || z.size() == 0 || z.isZero(0.0)) return FactoredMatrix::zero(m, n);
  if (std::min(m, n) <= 32) {
    Eigen::JacobiSVD<Matrix> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return detail::keep_leading(svd.matrixU(), svd.singularValues(), svd.matrixV(), k,
                                policy);
  }
  Eigen::BDCSVD<Matrix> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return detail::keep_leading(svd.matrixU(), svd.singularValues(), svd.matrixV(), k,
                              policy);
}

/// Thin QR with column pivoting, Z P = Q R, truncated to the numerical rank.
struct PivotedQR {
  Matrix Q;  // m x rank, orthonormal columns
  Matrix R;  // rank x k, upper trapezoidal in pivoted column order
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic> permutation;
  Index rank = 0;

  /// R P^T, so that Z ~= Q * r_unpivoted().
  Matrix r_unpivoted() const { return R * permutation.transpose(); }
};

inline PivotedQR pivoted_qr(const Matrix& z, const RankPolicy& policy = {}) {
  PivotedQR out;
  const Index m = z.rows();
  const Index k = z.cols();
  if (z.size() == 0 || z.isZero(0.0)) {
    out.Q = Matrix(m, 0);
    out.R = Matrix(0, k);
    out.permutation.setIdentity(k);
    return out;
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(z);
  const Index diag = std::min(m, k);
  const Matrix& packed = qr.matrixQR();
  const double thr = policy.threshold(std::abs(packed(0, 0)));
  Index rho = 0;
  while (rho < diag && std::abs(packed(rho, rho)) > thr) ++rho;
  out.rank = rho;
  out.Q = qr.householderQ() * Matrix::Identity(m, rho);
  out.R = packed.topRows(rho).triangularView<Eigen::Upper>();
  out.permutation = qr.colsPermutation();
  return out;
}

/// Orthonormal basis of the column space of z under `policy`.
inline Matrix orthonormal_basis(const Matrix& z, const RankPolicy& policy = {}) {
  return pivoted_qr(z, policy).Q;
}

// -- Operators for large-scale truncated SVDs -------------------------------

template <class Op>
concept LinearOperator = requires(const Op& op, const Matrix& x) {
  { op.rows() } -> std::convertible_to<Index>;
  { op.cols() } -> std::convertible_to<Index>;
  { op.apply(x) } -> std::convertible_to<Matrix>;            // Z x
  { op.apply_transpose(x) } -> std::convertible_to<Matrix>;  // Z^T x
};

/// Non-owning view of a dense matrix as an operator.
class DenseOperator {
 public:
  explicit DenseOperator(const Matrix& z) : z_(&z) {}
  Index rows() const { return z_->rows(); }
  Index cols() const { return z_->cols(); }
  Matrix apply(const Matrix& x) const { return *z_ * x; }
  Matrix apply_transpose(const Matrix& x) const { return z_->transpose() * x; }
  const Matrix& matrix() const { return *z_; }

 private:
  const Matrix* z_;
};

/// S + L R^T with S sparse and L, R thin dense factors.
class SparsePlusLowRank {
 public:
  SparsePlusLowRank(Eigen::SparseMatrix<double> sparse, Matrix left, Matrix right)
      : s_(std::move(sparse)), l_(std::move(left)), r_(std::move(right)) {
    if (l_.cols() != r_.cols() || l_.rows() != s_.rows() || r_.rows() != s_.cols()) {
      throw PreconditionError("SparsePlusLowRank: inconsistent shapes");
    }
  }
  Index rows() const { return s_.rows(); }
  Index cols() const { return s_.cols(); }
  Matrix apply(const Matrix& x) const { return s_ * x + l_ * (r_.transpose() * x); }
  Matrix apply_transpose(const Matrix& x) const {
    return s_.transpose() * x + r_ * (l_.transpose() * x);
  }
  Matrix dense() const { return Matrix(s_) + l_ * r_.transpose(); }

 private:
  Eigen::SparseMatrix<double> s_;
  Matrix l_;
  Matrix r_;
};

enum class LargeSvdBackend { dense, block_power };

struct LargeSvdOptions {
  LargeSvdBackend backend = LargeSvdBackend::dense;
  Index oversample = 8;
  int max_iterations = 500;
  // Converged once ||Z v_i - sigma_i u_i|| <= tolerance * sigma_1 for every
  // retained triple.
  double tolerance = 1e-11;
  std::uint64_t seed = 0x9e3779b97f4a7c15ULL;
};

/// Truncated SVD without the small-scale assumption. The dense backend
/// materializes the operator; the block-power backend runs randomized
/// subspace iteration with Rayleigh-Ritz extraction.
template <LinearOperator Op>
FactoredMatrix large_truncated_svd(const Op& op, Index k, const RankPolicy& policy = {},
                                   const LargeSvdOptions& options = {}) {
  const Index m = op.rows();
  const Index n = op.cols();
  if (k < 0 || k > std::min(m, n)) {
    throw PreconditionError("large_truncated_svd: rank budget outside [0, min(m, n)]");
  }
  if (k == 0 || m == 0 || n == 0) return FactoredMatrix::zero(m, n);

  if (options.backend == LargeSvdBackend::dense) {
    if constexpr (std::same_as<Op, DenseOperator>) {
      return truncated_svd(op.matrix(), k, policy);
    } else {
      return truncated_svd(op.apply(Matrix::Identity(n, n)), k, policy);
    }
  }

  const Index width = std::min(k + std::max<Index>(options.oversample, 0), std::min(m, n));
  Rng rng(options.seed);
  Matrix q = orthonormal_basis(op.apply(gaussian_matrix(rng, n, width)), policy);
  FactoredMatrix best = FactoredMatrix::zero(m, n);
  double best_residual = std::numeric_limits<double>::infinity();

  for (int it = 0; it < options.max_iterations; ++it) {
    if (q.cols() == 0) return FactoredMatrix::zero(m, n);
    // Rayleigh-Ritz on span(q): Z^T q = W S Y^T, so Z ~ (q Y) S W^T.
    const Matrix bt = op.apply_transpose(q);
    Eigen::JacobiSVD<Matrix> svd(bt, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    const Index kept = std::min<Index>(k, policy.numerical_rank(s));
    if (kept == 0) return FactoredMatrix::zero(m, n);
    const Matrix u = q * svd.matrixV();
    const Matrix& w = svd.matrixU();

    const Matrix resid = op.apply(w.leftCols(kept)) - u.leftCols(kept) * s.head(kept).asDiagonal();
    const double worst = resid.colwise().norm().maxCoeff() / s(0);
    if (worst < best_residual) {
      best_residual = worst;
      best = FactoredMatrix(u.leftCols(kept), s.head(kept), w.leftCols(kept));
    }
    if (worst <= options.tolerance) return best;
    q = orthonormal_basis(op.apply(w), policy);
  }
  throw ConvergenceError("large_truncated_svd: block power iteration did not converge",
                         std::move(best), best_residual);
}

inline FactoredMatrix large_truncated_svd(const Matrix& z, Index k,
                                          const RankPolicy& policy = {},
                                          const LargeSvdOptions& options = {}) {
  return large_truncated_svd(DenseOperator(z), k, policy, options);
}

}  // namespace lowrank
