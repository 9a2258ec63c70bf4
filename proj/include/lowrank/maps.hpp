#pragma once

// Reference iteration maps on R_{<=r}: RFD, RFDR, P2GD and P2GDR.
//
// These operate on dense ambient matrices (the iterate is assembled, the
// search direction is a dense projection) and serve as the ground truth for
// the factored implementations in detailed.hpp. Every map backtracks along
// alpha0, alpha0 beta, alpha0 beta^2, ... until the Armijo test
//
//   f(Y(alpha)) <= f(X) - c alpha ||G||^2
//
// passes, where Y(alpha) = X + alpha G for RFD and the rank-r truncation of
// X + alpha G for P2GD.

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include "lowrank/cones.hpp"
#include "lowrank/core.hpp"
#include "lowrank/objective.hpp"
#include "lowrank/op_counter.hpp"

namespace lowrank {

struct LineSearchParams {
  double alpha_lo = 1.0;   // lower end of the initial step-size interval
  double alpha_hi = 1.0;   // upper end; also the default initial step size
  double beta = 0.5;       // backtracking factor
  double c = 1e-4;         // Armijo constant
  double delta = 0.1;      // rank-reduction threshold on singular values
  int max_backtracks = 100;

  void validate() const {
    if (!(alpha_lo > 0.0 && alpha_lo <= alpha_hi && std::isfinite(alpha_hi))) {
      throw PreconditionError("LineSearchParams: need 0 < alpha_lo <= alpha_hi < inf");
    }
    if (!(beta > 0.0 && beta < 1.0)) throw PreconditionError("LineSearchParams: beta must lie in (0, 1)");
    if (!(c > 0.0 && c < 1.0)) throw PreconditionError("LineSearchParams: c must lie in (0, 1)");
    if (!(delta > 0.0 && std::isfinite(delta))) {
      throw PreconditionError("LineSearchParams: delta must be positive and finite");
    }
    if (max_backtracks < 1) throw PreconditionError("LineSearchParams: max_backtracks must be >= 1");
  }
};

/// The input is stationary to working precision, so no step can be taken.
class StationaryPointError : public PreconditionError {
 public:
  StationaryPointError(const std::string& what, double stationarity)
      : PreconditionError(what), stationarity_(stationarity) {}
  double stationarity() const { return stationarity_; }

 private:
  double stationarity_;
};

/// Backtracking exceeded max_backtracks: usually a wrong gradient or a step
/// size interval far off the local curvature.
class BacktrackLimitError : public Error {
 public:
  BacktrackLimitError(const std::string& what, double alpha, int backtracks, double f0,
                      double direction_norm)
      : Error(what), alpha_(alpha), backtracks_(backtracks), f0_(f0),
        direction_norm_(direction_norm) {}
  double alpha() const { return alpha_; }
  int backtracks() const { return backtracks_; }
  double f0() const { return f0_; }
  double direction_norm() const { return direction_norm_; }

 private:
  double alpha_;
  int backtracks_;
  double f0_;
  double direction_norm_;
};

struct StepReport {
  FactoredMatrix next;
  double f_before = 0.0;
  double f_after = 0.0;
  double decrease = 0.0;  // f_before - f_after
  double initial_alpha = 0.0;
  double accepted_alpha = 0.0;
  int backtracks = 0;
  double direction_norm = 0.0;  // ||G|| of the branch returned
  double stationarity = 0.0;    // s(X) at the input
  bool rank_reduction_taken = false;
  int reduction_attempts = 0;
  Branch branch = Branch::full_tangent;
  OpCounter counters;
};

/// Threshold under which the stationarity measure counts as zero.
inline double stationarity_floor(const Matrix& gradient) {
  return 1e-12 * (1.0 + gradient.norm());
}

namespace detail {

struct Probe {
  Matrix x_dense;
  Matrix gradient;
  double f0 = 0.0;
  double stationarity = 0.0;
};

inline Probe probe(const FactoredMatrix& x, const Objective& obj, Index r,
                   const RankPolicy& policy, OpCounter& counters, const char* who) {
  if (x.rows() != obj.rows() || x.cols() != obj.cols()) {
    throw PreconditionError(std::string(who) + ": iterate and objective shapes differ");
  }
  check_rank_bound(x, r, who);
  Probe p;
  p.x_dense = x.dense();
  p.gradient = obj.gradient(p.x_dense);
  ++counters.grad_evals;
  p.stationarity = stationarity_measure(x, p.gradient, r, policy);
  if (p.stationarity <= stationarity_floor(p.gradient)) {
    std::ostringstream msg;
    msg << who << ": input is stationary (s = " << p.stationarity << "), no step taken";
    throw StationaryPointError(msg.str(), p.stationarity);
  }
  p.f0 = obj.value(p.x_dense);
  ++counters.f_baseline_evals;
  return p;
}

struct SearchResult {
  FactoredMatrix point;
  double f = 0.0;
  double alpha = 0.0;
  int backtracks = 0;
};

/// Armijo backtracking; `trial` maps a step size to the candidate point in
/// factored form together with its dense assembly.
inline SearchResult backtrack(const Objective& obj, double f0, double gnorm_sq, double alpha0,
                              const LineSearchParams& params, OpCounter& counters,
                              const std::function<std::pair<Matrix, FactoredMatrix>(double)>& trial,
                              const char* who) {
  double alpha = alpha0;
  for (int k = 0;; ++k) {
    auto [dense, point] = trial(alpha);
    const double f = obj.value(dense);
    ++counters.f_evals;
    if (!(f > f0 - params.c * alpha * gnorm_sq)) {
      return SearchResult{std::move(point), f, alpha, k};
    }
    if (k == params.max_backtracks) {
      std::ostringstream msg;
      msg << who << ": Armijo test still failing after " << k << " backtracks (alpha = "
          << alpha << ", f(X) = " << f0 << ", ||G|| = " << std::sqrt(gnorm_sq) << ")";
      throw BacktrackLimitError(msg.str(), alpha, k, f0, std::sqrt(gnorm_sq));
    }
    alpha *= params.beta;
  }
}

inline double checked_alpha0(std::optional<double> alpha0, const LineSearchParams& params) {
  params.validate();
  const double a = alpha0.value_or(params.alpha_hi);
  if (!(a >= params.alpha_lo && a <= params.alpha_hi)) {
    throw PreconditionError("initial step size outside [alpha_lo, alpha_hi]");
  }
  return a;
}

inline StepReport make_report(const Probe& p, SearchResult s, double alpha0, double gnorm,
                              Branch branch, OpCounter counters) {
  StepReport rep;
  rep.next = std::move(s.point);
  rep.f_before = p.f0;
  rep.f_after = s.f;
  rep.decrease = p.f0 - s.f;
  rep.initial_alpha = alpha0;
  rep.accepted_alpha = s.alpha;
  rep.backtracks = s.backtracks;
  rep.direction_norm = gnorm;
  rep.stationarity = p.stationarity;
  rep.branch = branch;
  rep.counters = counters;
  return rep;
}

/// Keeps `candidate` over `incumbent` only on strictly smaller f.
inline void keep_better(StepReport& incumbent, StepReport candidate, double f_input) {
  incumbent.counters += candidate.counters;
  incumbent.reduction_attempts += 1;
  if (candidate.f_after < incumbent.f_after) {
    const OpCounter merged = incumbent.counters;
    const int attempts = incumbent.reduction_attempts;
    const double s = incumbent.stationarity;
    incumbent = std::move(candidate);
    incumbent.counters = merged;
    incumbent.reduction_attempts = attempts;
    incumbent.stationarity = s;
    incumbent.f_before = f_input;
    incumbent.decrease = f_input - incumbent.f_after;
    incumbent.rank_reduction_taken = true;
  }
}

}  // namespace detail

/// RFD map: G is the projection of -grad f(X) onto the restricted tangent cone
/// (onto R_{<=r} when X = 0), and the step X + alpha G needs no retraction.
inline StepReport rfd_step(const FactoredMatrix& x, const Objective& obj, Index r,
                           const LineSearchParams& params, std::optional<double> alpha0 = {},
                           const RankPolicy& policy = {}) {
  const double a0 = detail::checked_alpha0(alpha0, params);
  OpCounter counters;
  const auto p = detail::probe(x, obj, r, policy, counters, "rfd_step");
  const ConeProjection g = x.rank() == 0 ? project_zero_foot(-p.gradient, r, policy)
                                         : project_restricted(-p.gradient, x, r, policy);
  if (g.value.is_zero()) throw StationaryPointError("rfd_step: zero search direction", 0.0);
  const Matrix g_dense = g.value.dense();
  auto s = detail::backtrack(
      obj, p.f0, g.norm * g.norm, a0, params, counters,
      [&](double alpha) {
        Matrix y = p.x_dense + alpha * g_dense;
        return std::pair<Matrix, FactoredMatrix>(std::move(y), FactoredMatrix{});
      },
      "rfd_step");
  s.point = truncated_svd(p.x_dense + s.alpha * g_dense, r, policy);
  return detail::make_report(p, std::move(s), a0, g.norm, g.branch, counters);
}

/// P2GD map: G is the projection onto the full tangent cone and every trial
/// point is the rank-r truncation (metric projection) of X + alpha G.
inline StepReport p2gd_step(const FactoredMatrix& x, const Objective& obj, Index r,
                            const LineSearchParams& params, std::optional<double> alpha0 = {},
                            const RankPolicy& policy = {}) {
  const double a0 = detail::checked_alpha0(alpha0, params);
  OpCounter counters;
  const auto p = detail::probe(x, obj, r, policy, counters, "p2gd_step");
  const ConeProjection g = project_tangent(-p.gradient, x, r, policy);
  if (g.value.is_zero()) throw StationaryPointError("p2gd_step: zero search direction", 0.0);
  const Matrix g_dense = g.value.dense();
  auto s = detail::backtrack(
      obj, p.f0, g.norm * g.norm, a0, params, counters,
      [&](double alpha) {
        FactoredMatrix y = truncated_svd(p.x_dense + alpha * g_dense, r, policy);
        Matrix dense = y.dense();
        return std::pair<Matrix, FactoredMatrix>(std::move(dense), std::move(y));
      },
      "p2gd_step");
  return detail::make_report(p, std::move(s), a0, g.norm, g.branch, counters);
}

/// RFDR map: one RFD step from X and, when rank X = r and sigma_r(X) <= delta,
/// one more from X with its smallest singular triple dropped; the candidate
/// with smaller f wins, ties going to the unreduced step.
inline StepReport rfdr_step(const FactoredMatrix& x, const Objective& obj, Index r,
                            const LineSearchParams& params, std::optional<double> alpha0 = {},
                            const RankPolicy& policy = {}) {
  StepReport best = rfd_step(x, obj, r, params, alpha0, policy);
  if (x.rank() == r && x.singular_value(r) <= params.delta) {
    try {
      detail::keep_better(best, rfd_step(x.leading(r - 1), obj, r, params, alpha0, policy),
                          best.f_before);
    } catch (const StationaryPointError&) {
      // The reduced point cannot move; it is still one attempt.
      best.reduction_attempts += 1;
    }
  }
  return best;
}

/// P2GDR map: P2GD from X and from every truncation of X that drops
/// singular values <= delta (down to the zero matrix), keeping the best.
inline StepReport p2gdr_step(const FactoredMatrix& x, const Objective& obj, Index r,
                             const LineSearchParams& params, std::optional<double> alpha0 = {},
                             const RankPolicy& policy = {}) {
  StepReport best = p2gd_step(x, obj, r, params, alpha0, policy);
  const double f_input = best.f_before;
  Index above = 0;
  for (Index j = 1; j <= x.rank(); ++j)
    if (x.singular_value(j) > params.delta) ++above;
  for (Index j = 1; j <= x.rank() - above; ++j) {
    try {
      detail::keep_better(best, p2gd_step(x.leading(x.rank() - j), obj, r, params, alpha0, policy),
                          f_input);
    } catch (const StationaryPointError&) {
      best.reduction_attempts += 1;
    }
  }
  return best;
}

}  // namespace lowrank
