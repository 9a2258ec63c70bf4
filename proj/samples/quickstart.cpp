// Library walkthrough: projections at a foot point, single steps of the four
// maps, then a full RFDR run on a seeded completion instance.

#include <cstdio>

#include "lowrank/lowrank.hpp"

using namespace lowrank;

int main() {
  // X = e1 e1^T in R^{2x2}, Z = [[1, 2], [3, 4]].
  Matrix e1 = Matrix::Zero(2, 1);
  e1(0, 0) = 1.0;
  const FactoredMatrix x(e1, Vector::Ones(1), e1);
  Matrix z(2, 2);
  z << 1, 2, 3, 4;

  const ConeProjection tangent = project_tangent(z, x, 1);
  const ConeProjection restricted = project_restricted(z, x, 1);
  std::printf("tangent norm %.6f, restricted norm %.6f (%s)\n", tangent.norm, restricted.norm,
              to_string(restricted.branch));

  // One step of each map on f = 1/2 ||X - T||^2 from a rank-1 point.
  Rng rng(42);
  const Matrix t = gaussian_matrix(rng, 8, 6);
  const Objective obj = make_least_squares(t);
  const FactoredMatrix x0 = truncated_svd(gaussian_matrix(rng, 8, 6), 1);
  const LineSearchParams params;
  const Index r = 2;
  for (const auto& [name, step] :
       {std::pair{"rfd", rfd_step(x0, obj, r, params)}, std::pair{"rfdr", rfdr_step(x0, obj, r, params)},
        std::pair{"p2gd", p2gd_step(x0, obj, r, params)},
        std::pair{"p2gdr", p2gdr_step(x0, obj, r, params)}}) {
    std::printf("%-6s f: %.6f -> %.6f  alpha %.3g  rank %ld\n", name, step.f_before, step.f_after,
                step.accepted_alpha, static_cast<long>(step.next.rank()));
  }

  // Factored RFD gives the same point and reports its operation counts.
  const StepReport d = detailed_rfd(x0, obj, r, params);
  std::printf("detailed rfd: |dense difference| %.2e, grads %ld, small SVDs %ld, large SVDs %ld\n",
              (d.next.dense() - rfd_step(x0, obj, r, params).next.dense()).norm(),
              d.counters.grad_evals, d.counters.small_svds, d.counters.large_svds);

  RunConfig cfg;
  cfg.solver = Solver::rfdr;
  cfg.instance.kind = InstanceKind::matrix_completion;
  cfg.instance.m = cfg.instance.n = 40;
  cfg.instance.rank = cfg.instance.planted_rank = 3;
  cfg.instance.seed = 7;
  cfg.stop.max_iters = 2000;
  const RunResult res = run(cfg);
  std::printf("rfdr on completion: %s after %ld iterations, f = %.3e, s = %.3e\n",
              to_string(res.reason), res.iterations(), res.last().f_value, res.last().stationarity);
  return 0;
}
