#pragma once

#include <json.hpp>

#include "lowrank/core.hpp"

namespace lowrank {

/// Tallies of the operations a map performs. Categories follow the
/// per-iteration cost table for the detailed maps: `f_evals` counts Armijo
/// trial evaluations, while `f_baseline_evals` counts evaluations of f at the
/// map's input (the right-hand side of the Armijo test), which an iterative
/// caller normally has cached already.
struct OpCounter {
  long f_evals = 0;
  long f_baseline_evals = 0;
  long grad_evals = 0;
  long pivoted_qrs = 0;
  long small_svds = 0;
  long large_svds = 0;
  double matmul_flops = 0.0;

  /// Small when min(rows, cols) <= 2r.
  void record_svd(Index rows, Index cols, Index r) {
    if (is_small_scale(rows, cols, r)) {
      ++small_svds;
    } else {
      ++large_svds;
    }
  }

  void record_gemm(Index m, Index n, Index k) {
    matmul_flops += 2.0 * static_cast<double>(m) * static_cast<double>(n) *
                    static_cast<double>(k);
  }

  OpCounter& operator+=(const OpCounter& o) {
    f_evals += o.f_evals;
    f_baseline_evals += o.f_baseline_evals;
    grad_evals += o.grad_evals;
    pivoted_qrs += o.pivoted_qrs;
    small_svds += o.small_svds;
    large_svds += o.large_svds;
    matmul_flops += o.matmul_flops;
    return *this;
  }

  friend OpCounter operator+(OpCounter a, const OpCounter& b) { return a += b; }

  friend bool operator==(const OpCounter&, const OpCounter&) = default;
};

inline void to_json(nlohmann::json& j, const OpCounter& c) {
  j = nlohmann::json{{"f_evals", c.f_evals},         {"f_baseline_evals", c.f_baseline_evals},
                     {"grad_evals", c.grad_evals},   {"pivoted_qrs", c.pivoted_qrs},
                     {"small_svds", c.small_svds},   {"large_svds", c.large_svds},
                     {"matmul_flops", c.matmul_flops}};
}

inline void from_json(const nlohmann::json& j, OpCounter& c) {
  c.f_evals = j.value("f_evals", 0L);
  c.f_baseline_evals = j.value("f_baseline_evals", 0L);
  c.grad_evals = j.value("grad_evals", 0L);
  c.pivoted_qrs = j.value("pivoted_qrs", 0L);
  c.small_svds = j.value("small_svds", 0L);
  c.large_svds = j.value("large_svds", 0L);
  c.matmul_flops = j.value("matmul_flops", 0.0);
}

}  // namespace lowrank
