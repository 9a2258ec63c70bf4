#pragma once

// Factored implementations of the P2GD, P2GDR, RFD and RFDR maps.
//
// The iterate enters and leaves as a thin SVD (U, S, V). Apart from the
// gradient and the objective (which the Objective interface evaluates on
// dense matrices), all work happens on m x r or r x n panels, small core
// matrices, and at most one truncated SVD of the ambient residual
//
//   G_res = (I - U U^T) G (I - V V^T),   G = -grad f(X).
//
// Every operation that the per-iteration cost accounting tracks is recorded
// in the returned StepReport::counters.

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include "lowrank/cones.hpp"
#include "lowrank/core.hpp"
#include "lowrank/maps.hpp"
#include "lowrank/objective.hpp"
#include "lowrank/op_counter.hpp"

namespace lowrank {

struct DetailedOptions {
  RankPolicy policy;
  LargeSvdOptions large_svd;
  // ||G_res|| <= residual_zero_tol * ||G|| counts as G_res = 0.
  double residual_zero_tol = 1e-12;
};

namespace detail {

/// Orthonormal basis of span(z) with the components along the columns of the
/// `exclude` bases removed. Entries of the pivoted R below `abs_floor` count
/// as zero. The basis is re-orthogonalized against `exclude` so that
/// [exclude..., Q] stays orthonormal to working precision even when z is
/// nearly contained in span(exclude).
inline Matrix complement_basis(Matrix z, std::initializer_list<const Matrix*> exclude,
                               double abs_floor, const RankPolicy& policy) {
  for (int pass = 0; pass < 2; ++pass)
    for (const Matrix* b : exclude)
      if (b->cols() > 0) z -= *b * (b->transpose() * z);
  RankPolicy p = policy;
  p.abs_tol = std::max(p.abs_tol, abs_floor);
  Matrix q = pivoted_qr(z, p).Q;
  if (q.cols() == 0) return q;
  for (const Matrix* b : exclude)
    if (b->cols() > 0) q -= *b * (b->transpose() * q);
  Eigen::HouseholderQR<Matrix> h(q);
  Matrix out = h.householderQ() * Matrix::Identity(q.rows(), q.cols());
  const Matrix& packed = h.matrixQR();
  for (Index j = 0; j < out.cols(); ++j)
    if (packed(j, j) < 0.0) out.col(j) *= -1.0;
  return out;
}

/// Left singular vectors of a residual are orthogonal to `exclude` only up to
/// noise / sigma; this restores exact orthogonality while leaving the
/// factorization unchanged to working precision.
inline Matrix reorthogonalize(Matrix q, const Matrix& exclude) {
  if (q.cols() == 0) return q;
  for (int pass = 0; pass < 2; ++pass) q -= exclude * (exclude.transpose() * q);
  Eigen::HouseholderQR<Matrix> h(q);
  Matrix out = h.householderQ() * Matrix::Identity(q.rows(), q.cols());
  const Matrix& packed = h.matrixQR();
  for (Index j = 0; j < out.cols(); ++j)
    if (packed(j, j) < 0.0) out.col(j) *= -1.0;
  return out;
}

inline Matrix hcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

inline Matrix hcat(const Matrix& a, const Matrix& b, const Matrix& c) {
  Matrix out(a.rows(), a.cols() + b.cols() + c.cols());
  out << a, b, c;
  return out;
}

inline Matrix vcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

/// Ambient residual (I - U U^T) g (I - V V^T), projected twice.
inline Matrix ambient_residual(const Matrix& g, const Matrix& u, const Matrix& v,
                               const Matrix& g1, const Matrix& g2) {
  Matrix res = g - u * g1 + (u * (g1 * v) - g2) * v.transpose();
  res -= u * (u.transpose() * res);
  res -= (res * v) * v.transpose();
  return res;
}

struct ResidualSvd {
  Matrix U;  // m x r0, orthogonal to the iterate's U
  Vector sigma;
  Matrix V;  // n x r0, orthogonal to the iterate's V
  bool present = false;
};

inline ResidualSvd residual_svd(const Matrix& g, const FactoredMatrix& x, const Matrix& g1,
                                const Matrix& g2, Index budget, const DetailedOptions& opts,
                                OpCounter& counters, Index r) {
  ResidualSvd out;
  const Matrix res = ambient_residual(g, x.U(), x.V(), g1, g2);
  counters.record_gemm(x.rows(), x.cols(), 2 * x.rank());
  if (res.norm() <= opts.residual_zero_tol * g.norm()) return out;
  const FactoredMatrix t = large_truncated_svd(res, budget, opts.policy, opts.large_svd);
  counters.record_svd(res.rows(), res.cols(), r);
  out.U = reorthogonalize(t.U(), x.U());
  out.sigma = t.sigma();
  out.V = reorthogonalize(t.V(), x.V());
  out.present = t.rank() > 0;
  return out;
}

inline void check_detailed_input(const FactoredMatrix& x, const Objective& obj, Index r,
                                 const char* who) {
  if (x.rows() != obj.rows() || x.cols() != obj.cols()) {
    throw PreconditionError(std::string(who) + ": iterate and objective shapes differ");
  }
  if (x.rank() < 1) throw PreconditionError(std::string(who) + ": input must have rank >= 1");
  check_rank_bound(x, r, who);
}

inline void check_direction(double s, const Matrix& g, const char* who) {
  if (std::sqrt(s) <= stationarity_floor(g)) {
    std::ostringstream msg;
    msg << who << ": input is stationary (||G|| = " << std::sqrt(s) << "), no step taken";
    throw StationaryPointError(msg.str(), std::sqrt(s));
  }
}

/// Backtracking on a parameterized point. `point(alpha)` must return the
/// candidate in factored form and bump whatever counters its construction
/// needs (the small SVDs of P2GD).
template <class PointFn>
StepReport detailed_backtrack(const Objective& obj, const Matrix& x_dense, double s, double alpha0,
                              const LineSearchParams& params, OpCounter& counters,
                              PointFn&& point, const char* who) {
  const double f0 = obj.value(x_dense);
  ++counters.f_baseline_evals;
  double alpha = alpha0;
  for (int k = 0;; ++k) {
    auto [dense, factored] = point(alpha);
    const double f = obj.value(dense);
    ++counters.f_evals;
    if (!(f > f0 - params.c * alpha * s)) {
      StepReport rep;
      rep.next = std::move(factored);
      rep.f_before = f0;
      rep.f_after = f;
      rep.decrease = f0 - f;
      rep.initial_alpha = alpha0;
      rep.accepted_alpha = alpha;
      rep.backtracks = k;
      rep.direction_norm = std::sqrt(s);
      rep.counters = counters;
      return rep;
    }
    if (k == params.max_backtracks) {
      std::ostringstream msg;
      msg << who << ": Armijo test still failing after " << k << " backtracks (alpha = "
          << alpha << ", f(X) = " << f0 << ", ||G|| = " << std::sqrt(s) << ")";
      throw BacktrackLimitError(msg.str(), alpha, k, f0, std::sqrt(s));
    }
    alpha *= params.beta;
  }
}

/// Picks the reduced candidate on strictly smaller f, merging counters.
inline void keep_better_detailed(StepReport& incumbent, StepReport candidate) {
  incumbent.counters += candidate.counters;
  incumbent.reduction_attempts += 1;
  if (candidate.f_after < incumbent.f_after) {
    const OpCounter merged = incumbent.counters;
    const int attempts = incumbent.reduction_attempts;
    const double f_input = incumbent.f_before;
    const double s = incumbent.stationarity;
    incumbent = std::move(candidate);
    incumbent.counters = merged;
    incumbent.reduction_attempts = attempts;
    incumbent.f_before = f_input;
    incumbent.decrease = f_input - incumbent.f_after;
    incumbent.stationarity = s;
    incumbent.rank_reduction_taken = true;
  }
}

}  // namespace detail

/// All four maps given the zero matrix: one gradient, one truncated SVD of
/// -grad f(0), then backtracking on the scale of that truncation.
inline StepReport detailed_zero_input(const Objective& obj, Index r, const LineSearchParams& params,
                                      std::optional<double> alpha = {},
                                      const DetailedOptions& opts = {}) {
  params.validate();
  const double a0 = alpha.value_or(params.alpha_hi);
  if (!(a0 > 0.0)) throw PreconditionError("detailed_zero_input: alpha must be > 0");
  const Index m = obj.rows();
  const Index n = obj.cols();
  if (r < 1 || r > std::min(m, n)) {
    throw PreconditionError("detailed_zero_input: rank bound outside [1, min(m, n)]");
  }
  OpCounter counters;
  const Matrix zero = Matrix::Zero(m, n);
  const Matrix g = -obj.gradient(zero);
  ++counters.grad_evals;
  const FactoredMatrix t = large_truncated_svd(g, r, opts.policy, opts.large_svd);
  counters.record_svd(m, n, r);
  const double s = t.sigma().squaredNorm();
  detail::check_direction(s, g, "detailed_zero_input");
  StepReport rep = detail::detailed_backtrack(
      obj, zero, s, a0, params, counters,
      [&](double a) {
        FactoredMatrix y = t.scaled(a);
        Matrix dense = y.dense();
        return std::pair<Matrix, FactoredMatrix>(std::move(dense), std::move(y));
      },
      "detailed_zero_input");
  rep.branch = Branch::zero_foot;
  rep.stationarity = std::sqrt(s);
  return rep;
}

/// Factored RFD map. The branch keeps U^T G (rows, the B block) when
/// ||U^T G||^2 >= ||G V||^2 up to the shared tie tolerance, else G V.
inline StepReport detailed_rfd(const FactoredMatrix& x, const Objective& obj, Index r,
                               const LineSearchParams& params, std::optional<double> alpha = {},
                               const DetailedOptions& opts = {}) {
  params.validate();
  detail::check_detailed_input(x, obj, r, "detailed_rfd");
  const double a0 = alpha.value_or(params.alpha_hi);
  const Index m = x.rows();
  const Index n = x.cols();
  const Index rx = x.rank();
  const Matrix& u = x.U();
  const Matrix& v = x.V();

  OpCounter counters;
  const Matrix x_dense = x.dense();
  const Matrix g = -obj.gradient(x_dense);
  ++counters.grad_evals;
  const Matrix g1 = u.transpose() * g;  // r x n
  const Matrix g2 = g * v;              // m x r
  counters.record_gemm(rx, n, m);
  counters.record_gemm(m, rx, n);
  const double s1 = g1.squaredNorm();
  const double s2 = g2.squaredNorm();
  const bool rows = keeps_row_block(s1, s2, g.squaredNorm());
  double s = rows ? s1 : s2;

  detail::ResidualSvd res;
  if (rx < r) {
    res = detail::residual_svd(g, x, g1, g2, r - rx, opts, counters, r);
    if (res.present) s += res.sigma.squaredNorm();
  }
  detail::check_direction(s, g, "detailed_rfd");

  // Row branch: X + a G = [U U_res] [S V^T + a G1; a S_res V_res^T].
  // Column branch: X + a G = [U S + a G2, a U_res S_res] [V V_res]^T.
  const Matrix base = rows ? Matrix(x.sigma().asDiagonal() * v.transpose())
                           : Matrix(u * x.sigma().asDiagonal());
  const Matrix& dir = rows ? g1 : g2;
  auto core = [&](double a) -> Matrix {
    if (!res.present) return base + a * dir;
    if (rows) return detail::vcat(base + a * dir, a * res.sigma.asDiagonal() * res.V.transpose());
    return detail::hcat(base + a * dir, a * res.U * res.sigma.asDiagonal());
  };
  const Matrix left = res.present && rows ? detail::hcat(u, res.U) : u;
  const Matrix right = res.present && !rows ? detail::hcat(v, res.V) : v;

  double accepted = a0;
  StepReport rep = detail::detailed_backtrack(
      obj, x_dense, s, a0, params, counters,
      [&](double a) {
        accepted = a;
        Matrix dense = rows ? Matrix(left * core(a)) : Matrix(core(a) * right.transpose());
        return std::pair<Matrix, FactoredMatrix>(std::move(dense), FactoredMatrix{});
      },
      "detailed_rfd");

  // One small SVD of the accepted core turns the result back into a thin SVD.
  const Matrix c = core(accepted);
  const FactoredMatrix small = truncated_svd(c, std::min(c.rows(), c.cols()), opts.policy);
  rep.counters.record_svd(c.rows(), c.cols(), r);
  rep.next = rows ? FactoredMatrix(left * small.U(), small.sigma(), small.V())
                  : FactoredMatrix(small.U(), small.sigma(), right * small.V());
  rep.branch = rows ? Branch::b_kept : Branch::c_kept;
  rep.stationarity = std::numeric_limits<double>::quiet_NaN();
  return rep;
}

/// Factored P2GD map. Builds orthonormal complements of the column and row
/// spaces touched by the tangent direction with pivoted QRs, so every trial
/// point is a small (<= 2r) core matrix whose rank-r truncation is the
/// metric projection of X + alpha G.
inline StepReport detailed_p2gd(const FactoredMatrix& x, const Objective& obj, Index r,
                                const LineSearchParams& params, std::optional<double> alpha = {},
                                const DetailedOptions& opts = {}) {
  params.validate();
  detail::check_detailed_input(x, obj, r, "detailed_p2gd");
  const double a0 = alpha.value_or(params.alpha_hi);
  const Index m = x.rows();
  const Index n = x.cols();
  const Index rx = x.rank();
  const Matrix& u = x.U();
  const Matrix& v = x.V();

  OpCounter counters;
  const Matrix x_dense = x.dense();
  const Matrix g = -obj.gradient(x_dense);
  ++counters.grad_evals;
  const double gnorm = g.norm();
  const Matrix g1 = u.transpose() * g;  // r x n
  const Matrix g2 = g * v;              // m x r
  const Matrix gc = g1 * v;             // r x r core U^T G V
  counters.record_gemm(rx, n, m);
  counters.record_gemm(m, rx, n);

  // (I - U U^T) G V = U_p R1 and (I - V V^T) G^T U = V_p R2.
  const Matrix up = detail::complement_basis(g2 - u * gc, {&u}, opts.residual_zero_tol * gnorm,
                                             opts.policy);
  ++counters.pivoted_qrs;
  const Matrix vp = detail::complement_basis(g1.transpose() - v * gc.transpose(), {&v},
                                             opts.residual_zero_tol * gnorm, opts.policy);
  ++counters.pivoted_qrs;
  const Matrix r1 = up.transpose() * (g2 - u * gc);                  // r1 x r
  const Matrix r2 = vp.transpose() * (g1.transpose() - v * gc.transpose());  // r2 x r
  double s = gc.squaredNorm() + r1.squaredNorm() + r2.squaredNorm();

  detail::ResidualSvd res;
  if (rx < r) res = detail::residual_svd(g, x, g1, g2, r - rx, opts, counters, r);

  Matrix left;
  Matrix right;
  std::function<Matrix(double)> core;
  const Matrix sig = x.sigma().asDiagonal();
  const Index k1 = up.cols();
  const Index k2 = vp.cols();

  if (!res.present) {
    left = detail::hcat(u, up);
    right = detail::hcat(v, vp);
    core = [&, k1, k2](double a) {
      Matrix c = Matrix::Zero(rx + k1, rx + k2);
      c.topLeftCorner(rx, rx) = sig + a * gc;
      c.topRightCorner(rx, k2) = a * r2.transpose();
      c.bottomLeftCorner(k1, rx) = a * r1;
      return c;
    };
  } else {
    s += res.sigma.squaredNorm();
    // [U_p U_res] = [U_p U_b] [I R11; 0 R12], likewise for V.
    const Matrix ub = detail::complement_basis(res.U, {&u, &up}, opts.residual_zero_tol,
                                               opts.policy);
    ++counters.pivoted_qrs;
    const Matrix vb = detail::complement_basis(res.V, {&v, &vp}, opts.residual_zero_tol,
                                               opts.policy);
    ++counters.pivoted_qrs;
    const Matrix r11 = up.transpose() * res.U;
    const Matrix r12 = ub.transpose() * res.U;
    const Matrix r21 = vp.transpose() * res.V;
    const Matrix r22 = vb.transpose() * res.V;
    const Matrix ssig = res.sigma.asDiagonal();
    const Index k3 = ub.cols();
    const Index k4 = vb.cols();
    left = detail::hcat(u, up, ub);
    right = detail::hcat(v, vp, vb);
    core = [=, &sig, &gc, &r1, &r2](double a) {
      Matrix c = Matrix::Zero(rx + k1 + k3, rx + k2 + k4);
      c.block(0, 0, rx, rx) = sig + a * gc;
      c.block(0, rx, rx, k2) = a * r2.transpose();
      c.block(rx, 0, k1, rx) = a * r1;
      c.block(rx, rx, k1, k2) = a * r11 * ssig * r21.transpose();
      c.block(rx, rx + k2, k1, k4) = a * r11 * ssig * r22.transpose();
      c.block(rx + k1, rx, k3, k2) = a * r12 * ssig * r21.transpose();
      c.block(rx + k1, rx + k2, k3, k4) = a * r12 * ssig * r22.transpose();
      return c;
    };
  }
  detail::check_direction(s, g, "detailed_p2gd");

  StepReport rep = detail::detailed_backtrack(
      obj, x_dense, s, a0, params, counters,
      [&](double a) {
        const Matrix c = core(a);
        const FactoredMatrix t = truncated_svd(c, std::min<Index>(r, std::min(c.rows(), c.cols())),
                                               opts.policy);
        counters.record_svd(c.rows(), c.cols(), r);
        FactoredMatrix y(left * t.U(), t.sigma(), right * t.V());
        Matrix dense = y.dense();
        return std::pair<Matrix, FactoredMatrix>(std::move(dense), std::move(y));
      },
      "detailed_p2gd");
  rep.counters = counters;
  rep.branch = Branch::full_tangent;
  rep.stationarity = std::sqrt(s);
  return rep;
}

/// Factored P2GDR map: P2GD on X and on each truncation X(1:rank-j) for the
/// j singular values <= delta, the full reduction going through the zero
/// input map. Keeps the candidate with the smallest f.
inline StepReport detailed_p2gdr(const FactoredMatrix& x, const Objective& obj, Index r,
                                 const LineSearchParams& params, std::optional<double> alpha = {},
                                 const DetailedOptions& opts = {}) {
  StepReport best = detailed_p2gd(x, obj, r, params, alpha, opts);
  const Index rx = x.rank();
  Index above = 0;
  for (Index j = 1; j <= rx; ++j)
    if (x.singular_value(j) > params.delta) ++above;
  for (Index j = 1; j <= rx - above; ++j) {
    try {
      detail::keep_better_detailed(best, j < rx ? detailed_p2gd(x.leading(rx - j), obj, r, params,
                                                                alpha, opts)
                                                : detailed_zero_input(obj, r, params, alpha, opts));
    } catch (const StationaryPointError&) {
      best.reduction_attempts += 1;
    }
  }
  return best;
}

/// Factored RFDR map: RFD on X and, when rank X = r and sigma_r <= delta, on
/// X(1:r-1) (the zero matrix when r = 1).
inline StepReport detailed_rfdr(const FactoredMatrix& x, const Objective& obj, Index r,
                                const LineSearchParams& params, std::optional<double> alpha = {},
                                const DetailedOptions& opts = {}) {
  StepReport best = detailed_rfd(x, obj, r, params, alpha, opts);
  if (x.rank() == r && x.singular_value(r) <= params.delta) {
    try {
      detail::keep_better_detailed(best, r > 1 ? detailed_rfd(x.leading(r - 1), obj, r, params,
                                                              alpha, opts)
                                               : detailed_zero_input(obj, r, params, alpha, opts));
    } catch (const StationaryPointError&) {
      best.reduction_attempts += 1;
    }
  }
  return best;
}

}  // namespace lowrank
