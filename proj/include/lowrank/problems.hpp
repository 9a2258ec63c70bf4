#pragma once

// Test objectives and seeded instance generators.
//
// The apocalypse instance
// -----------------------
// For a rank bound r the instance lives on (r+1) x (r+1) matrices:
//
//   f(X) = 1/2 sum_{(i,j) != (r,r)} (X_ij - E_ij)^2 + 1/4 X_rr^4,
//   E = diag(1, ..., 1, 0, 1)        (E_rr = 0, E_{r+1,r+1} = 1),
//
// started from X_0 = diag(1, ..., 1, eps_0, 0) of rank r. At every
// X = diag(1, ..., 1, eps, 0) the negative gradient is
// diag(0, ..., 0, -eps^3, 1). Both tangent-cone projections reduce to
// -eps^3 e_r e_r^T because the (r+1, r+1) entry lies in the block D, which is
// dropped at full rank r. RFD and P2GD therefore iterate
// eps <- eps - alpha eps^3, so sigma_r -> 0 and the stationarity measure
// eps^3 -> 0, while the limit diag(1, ..., 1, 0, 0) has rank r - 1 and
// stationarity 1 (the D block now admits the e_{r+1} e_{r+1}^T direction).
// Dropping the small singular value, as the rank-reduction maps do, exposes
// that direction and reaches the global minimizer E in one step.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lowrank/core.hpp"
#include "lowrank/objective.hpp"
#include "lowrank/random.hpp"

namespace lowrank {

/// f(X) = 1/2 ||X - T||^2; the gradient is 1-Lipschitz everywhere.
inline Objective make_least_squares(Matrix target) {
  auto t = std::make_shared<const Matrix>(std::move(target));
  const Index m = t->rows();
  const Index n = t->cols();
  return Objective(
      m, n, [t](const Matrix& x) { return 0.5 * (x - *t).squaredNorm(); },
      [t](const Matrix& x) { return Matrix(x - *t); },
      [](const Matrix&, double) { return 1.0; }, "least_squares",
      {{"target_norm", t->norm()}});
}

/// f(X) = 1/2 ||mask o (X - M)||^2 with a 0/1 mask.
inline Objective make_completion(Matrix observed, Matrix mask) {
  if (observed.rows() != mask.rows() || observed.cols() != mask.cols()) {
    throw PreconditionError("make_completion: mask and data shapes differ");
  }
  for (Index j = 0; j < mask.cols(); ++j)
    for (Index i = 0; i < mask.rows(); ++i)
      if (mask(i, j) != 0.0 && mask(i, j) != 1.0)
        throw PreconditionError("make_completion: mask entries must be 0 or 1");
  const double density = mask.size() ? mask.sum() / static_cast<double>(mask.size()) : 0.0;
  struct Data {
    Matrix m;
    Matrix mask;
  };
  auto d = std::make_shared<const Data>(Data{std::move(observed), std::move(mask)});
  return Objective(
      d->m.rows(), d->m.cols(),
      [d](const Matrix& x) { return 0.5 * d->mask.cwiseProduct(x - d->m).squaredNorm(); },
      [d](const Matrix& x) { return Matrix(d->mask.cwiseProduct(x - d->m)); },
      [](const Matrix&, double) { return 1.0; }, "matrix_completion",
      {{"mask_density", density}});
}

/// f(X) = 1/2 sum_i (<A_i, X> - b_i)^2. The gradient Lipschitz constant is the
/// largest eigenvalue of the Gram matrix G_ij = <A_i, A_j>.
inline Objective make_sensing(const std::vector<Matrix>& operators, Vector measurements) {
  if (operators.empty()) throw PreconditionError("make_sensing: no operators");
  if (static_cast<Index>(operators.size()) != measurements.size()) {
    throw PreconditionError("make_sensing: one measurement per operator required");
  }
  const Index m = operators.front().rows();
  const Index n = operators.front().cols();
  const Index p = measurements.size();
  // Row i holds vec(A_i), so A(X) = stacked * vec(X).
  Matrix stacked(p, m * n);
  for (Index i = 0; i < p; ++i) {
    const Matrix& a = operators[static_cast<std::size_t>(i)];
    if (a.rows() != m || a.cols() != n) {
      throw PreconditionError("make_sensing: operators have inconsistent shapes");
    }
    stacked.row(i) = Eigen::Map<const Vector>(a.data(), m * n).transpose();
  }
  const Matrix gram = stacked * stacked.transpose();
  const double lmax = Eigen::SelfAdjointEigenSolver<Matrix>(gram, Eigen::EigenvaluesOnly)
                          .eigenvalues()
                          .maxCoeff();
  struct Data {
    Matrix a;
    Vector b;
  };
  auto d = std::make_shared<const Data>(Data{std::move(stacked), std::move(measurements)});
  auto residual = [d](const Matrix& x) -> Vector {
    return d->a * Eigen::Map<const Vector>(x.data(), x.size()) - d->b;
  };
  return Objective(
      m, n, [residual](const Matrix& x) { return 0.5 * residual(x).squaredNorm(); },
      [d, residual, m, n](const Matrix& x) {
        const Vector g = d->a.transpose() * residual(x);
        return Matrix(Eigen::Map<const Matrix>(g.data(), m, n));
      },
      [lmax](const Matrix&, double) { return lmax; }, "matrix_sensing",
      {{"measurements", p}, {"lipschitz", lmax}});
}

/// Objective and initial point of the apocalypse instance described at the
/// top of this file. Any rank bound r >= 1 is supported; `eps0` in (0, 1) is
/// the initial r-th singular value.
inline std::pair<Objective, FactoredMatrix> make_apocalypse(Index r, double eps0 = 0.5) {
  if (r < 1) {
    throw PreconditionError("make_apocalypse: supported rank bounds are r >= 1");
  }
  if (!(eps0 > 0.0 && eps0 < 1.0)) {
    throw PreconditionError("make_apocalypse: initial singular value must lie in (0, 1)");
  }
  const Index dim = r + 1;
  const Index q = r - 1;  // 0-based index of the quartic entry
  Matrix target = Matrix::Zero(dim, dim);
  for (Index i = 0; i < dim; ++i) target(i, i) = 1.0;
  target(q, q) = 0.0;
  auto t = std::make_shared<const Matrix>(target);

  Objective obj(
      dim, dim,
      [t, q](const Matrix& x) {
        Matrix diff = x - *t;
        diff(q, q) = 0.0;
        const double xq2 = x(q, q) * x(q, q);
        return 0.5 * diff.squaredNorm() + 0.25 * xq2 * xq2;
      },
      [t, q](const Matrix& x) {
        Matrix g = x - *t;
        g(q, q) = x(q, q) * x(q, q) * x(q, q);
        return g;
      },
      // Hessian is diagonal with entries 1 and 3 X_qq^2.
      [q](const Matrix& center, double radius) {
        const double reach = std::abs(center(q, q)) + radius;
        return std::max(1.0, 3.0 * reach * reach);
      },
      "apocalypse", {{"r", r}, {"eps0", eps0}});

  // Singular triples in nonincreasing order: the r-1 unit values, then eps0.
  Matrix u = Matrix::Zero(dim, r);
  Vector s(r);
  for (Index i = 0; i < q; ++i) {
    u(i, i) = 1.0;
    s(i) = 1.0;
  }
  u(q, q) = 1.0;
  s(q) = eps0;
  return {std::move(obj), FactoredMatrix(u, s, u)};
}

// -- Seeded instances --------------------------------------------------------

enum class InstanceKind { target_least_squares, matrix_completion, matrix_sensing, apocalypse };

NLOHMANN_JSON_SERIALIZE_ENUM(InstanceKind,
                             {{InstanceKind::target_least_squares, "target_least_squares"},
                              {InstanceKind::matrix_completion, "matrix_completion"},
                              {InstanceKind::matrix_sensing, "matrix_sensing"},
                              {InstanceKind::apocalypse, "apocalypse"}})

enum class InitKind { zero, random };

NLOHMANN_JSON_SERIALIZE_ENUM(InitKind, {{InitKind::zero, "zero"}, {InitKind::random, "random"}})

struct InstanceSpec {
  InstanceKind kind = InstanceKind::target_least_squares;
  Index m = 20;
  Index n = 20;
  Index rank = 2;          // rank bound r of the feasible set
  Index planted_rank = 2;  // rank of the planted / target matrix
  std::uint64_t seed = 1;
  double mask_density = 0.5;          // matrix_completion
  Index measurements = 0;             // matrix_sensing; 0 means 3 r (m + n)
  std::vector<double> target_spectrum;  // overrides the random planted spectrum
  double noise = 0.0;                 // dense Gaussian perturbation of the target
  InitKind init = InitKind::zero;
  double init_scale = 1.0;
  double apocalypse_eps0 = 0.5;

  friend bool operator==(const InstanceSpec&, const InstanceSpec&) = default;
};

inline void to_json(nlohmann::json& j, const InstanceSpec& s) {
  j = nlohmann::json{{"kind", s.kind},
                     {"m", s.m},
                     {"n", s.n},
                     {"rank", s.rank},
                     {"planted_rank", s.planted_rank},
                     {"seed", s.seed},
                     {"mask_density", s.mask_density},
                     {"measurements", s.measurements},
                     {"target_spectrum", s.target_spectrum},
                     {"noise", s.noise},
                     {"init", s.init},
                     {"init_scale", s.init_scale},
                     {"apocalypse_eps0", s.apocalypse_eps0}};
}

inline void from_json(const nlohmann::json& j, InstanceSpec& s) {
  const InstanceSpec d;
  s.kind = j.value("kind", d.kind);
  s.m = j.value("m", d.m);
  s.n = j.value("n", d.n);
  s.rank = j.value("rank", d.rank);
  s.planted_rank = j.value("planted_rank", d.planted_rank);
  s.seed = j.value("seed", d.seed);
  s.mask_density = j.value("mask_density", d.mask_density);
  s.measurements = j.value("measurements", d.measurements);
  s.target_spectrum = j.value("target_spectrum", d.target_spectrum);
  s.noise = j.value("noise", d.noise);
  s.init = j.value("init", d.init);
  s.init_scale = j.value("init_scale", d.init_scale);
  s.apocalypse_eps0 = j.value("apocalypse_eps0", d.apocalypse_eps0);
}

struct Instance {
  InstanceSpec spec;
  Objective objective;
  FactoredMatrix initial;
  std::optional<Matrix> planted;
};

namespace detail {

/// Orthonormal factor of a Gaussian matrix via unpivoted Householder QR, so
/// the result depends only on the random stream.
inline Matrix random_stiefel(Rng& rng, Index rows, Index cols) {
  const Matrix g = gaussian_matrix(rng, rows, cols);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
  // Fix signs so that diag(R) > 0.
  const Matrix& packed = qr.matrixQR();
  for (Index j = 0; j < cols; ++j)
    if (packed(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

inline Matrix planted_matrix(Rng& rng, const InstanceSpec& s) {
  if (!s.target_spectrum.empty()) {
    const Index k = static_cast<Index>(s.target_spectrum.size());
    const Matrix u = random_stiefel(rng, s.m, k);
    const Matrix v = random_stiefel(rng, s.n, k);
    const Vector sigma = Eigen::Map<const Vector>(s.target_spectrum.data(), k);
    return u * sigma.asDiagonal() * v.transpose();
  }
  const Matrix l = gaussian_matrix(rng, s.m, s.planted_rank);
  const Matrix r = gaussian_matrix(rng, s.n, s.planted_rank);
  return l * r.transpose() / std::sqrt(static_cast<double>(s.planted_rank));
}

inline void validate(const InstanceSpec& s) {
  if (s.kind == InstanceKind::apocalypse) {
    if (s.rank < 1) throw PreconditionError("instance: apocalypse needs rank >= 1");
    return;
  }
  if (s.m < 2 || s.n < 2) throw PreconditionError("instance: m, n must be >= 2");
  if (s.rank < 1 || s.rank >= std::min(s.m, s.n)) {
    throw PreconditionError("instance: rank bound must lie in [1, min(m, n) - 1]");
  }
  if (s.target_spectrum.empty() &&
      (s.planted_rank < 1 || s.planted_rank > std::min(s.m, s.n))) {
    throw PreconditionError("instance: planted_rank outside [1, min(m, n)]");
  }
  for (Index i = 0; i < static_cast<Index>(s.target_spectrum.size()); ++i) {
    const double v = s.target_spectrum[static_cast<std::size_t>(i)];
    if (!(v > 0.0) || (i > 0 && v > s.target_spectrum[static_cast<std::size_t>(i - 1)]))
      throw PreconditionError("instance: target_spectrum must be positive and nonincreasing");
  }
  if (static_cast<Index>(s.target_spectrum.size()) > std::min(s.m, s.n)) {
    throw PreconditionError("instance: target_spectrum longer than min(m, n)");
  }
  if (!(s.mask_density >= 0.0 && s.mask_density <= 1.0)) {
    throw PreconditionError("instance: mask_density must lie in [0, 1]");
  }
  if (s.measurements < 0) throw PreconditionError("instance: measurements must be >= 0");
  if (!(s.init_scale > 0.0)) throw PreconditionError("instance: init_scale must be > 0");
}

}  // namespace detail

/// Builds the instance described by `spec`; the result is a pure function of
/// the InstanceSpec (including the seed).
inline Instance make_instance(const InstanceSpec& spec) {
  detail::validate(spec);
  if (spec.kind == InstanceKind::apocalypse) {
    auto [obj, x0] = make_apocalypse(spec.rank, spec.apocalypse_eps0);
    InstanceSpec s = spec;
    s.m = s.n = spec.rank + 1;
    return Instance{s, std::move(obj), std::move(x0), std::nullopt};
  }

  Rng rng(spec.seed);
  Matrix planted = detail::planted_matrix(rng, spec);
  std::optional<Objective> obj;
  switch (spec.kind) {
    case InstanceKind::target_least_squares: {
      Matrix target = planted;
      if (spec.noise > 0.0) target += spec.noise * gaussian_matrix(rng, spec.m, spec.n);
      obj.emplace(make_least_squares(std::move(target)));
      break;
    }
    case InstanceKind::matrix_completion: {
      Matrix mask(spec.m, spec.n);
      for (Index j = 0; j < spec.n; ++j)
        for (Index i = 0; i < spec.m; ++i) mask(i, j) = rng.bernoulli(spec.mask_density) ? 1.0 : 0.0;
      Matrix observed = planted;
      if (spec.noise > 0.0) observed += spec.noise * gaussian_matrix(rng, spec.m, spec.n);
      obj.emplace(make_completion(std::move(observed), std::move(mask)));
      break;
    }
    case InstanceKind::matrix_sensing: {
      const Index p = spec.measurements > 0 ? spec.measurements
                                            : 3 * spec.rank * (spec.m + spec.n);
      std::vector<Matrix> ops;
      Vector b(p);
      const double scale = 1.0 / std::sqrt(static_cast<double>(p));
      for (Index i = 0; i < p; ++i) {
        ops.push_back(scale * gaussian_matrix(rng, spec.m, spec.n));
        b(i) = ops.back().cwiseProduct(planted).sum();
        if (spec.noise > 0.0) b(i) += spec.noise * rng.normal();
      }
      obj.emplace(make_sensing(ops, std::move(b)));
      break;
    }
    case InstanceKind::apocalypse:
      break;
  }

  FactoredMatrix x0 = FactoredMatrix::zero(spec.m, spec.n);
  if (spec.init == InitKind::random) {
    const Matrix u = detail::random_stiefel(rng, spec.m, spec.rank);
    const Matrix v = detail::random_stiefel(rng, spec.n, spec.rank);
    std::vector<double> vals;
    for (Index i = 0; i < spec.rank; ++i) vals.push_back(spec.init_scale * rng.uniform(0.5, 1.5));
    std::sort(vals.begin(), vals.end(), std::greater<>());
    x0 = FactoredMatrix(u, Eigen::Map<const Vector>(vals.data(), spec.rank), v);
  }
  return Instance{spec, std::move(*obj), std::move(x0), std::move(planted)};
}

}  // namespace lowrank
