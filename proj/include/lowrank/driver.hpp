#pragma once

// Iterative drivers for RFD, RFDR, P2GD and P2GDR, paired-run comparison, and
// the trace / summary / operation-table / plot outputs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lowrank/cones.hpp"
#include "lowrank/core.hpp"
#include "lowrank/detailed.hpp"
#include "lowrank/io.hpp"
#include "lowrank/maps.hpp"
#include "lowrank/op_counter.hpp"
#include "lowrank/problems.hpp"

namespace lowrank {

enum class Solver { rfd, rfdr, p2gd, p2gdr };
enum class Implementation { reference, detailed };
enum class StopMode { scaled, absolute };
enum class AlphaPolicy { constant, previous };
enum class Termination { stationary, max_iters, wall_time };

NLOHMANN_JSON_SERIALIZE_ENUM(Solver, {{Solver::rfd, "rfd"},
                                      {Solver::rfdr, "rfdr"},
                                      {Solver::p2gd, "p2gd"},
                                      {Solver::p2gdr, "p2gdr"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Implementation, {{Implementation::reference, "reference"},
                                              {Implementation::detailed, "detailed"}})
NLOHMANN_JSON_SERIALIZE_ENUM(StopMode, {{StopMode::scaled, "scaled"},
                                        {StopMode::absolute, "absolute"}})
NLOHMANN_JSON_SERIALIZE_ENUM(AlphaPolicy, {{AlphaPolicy::constant, "constant"},
                                           {AlphaPolicy::previous, "previous"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Termination, {{Termination::stationary, "stationary"},
                                           {Termination::max_iters, "max_iters"},
                                           {Termination::wall_time, "wall_time"}})
NLOHMANN_JSON_SERIALIZE_ENUM(LargeSvdBackend, {{LargeSvdBackend::dense, "dense"},
                                               {LargeSvdBackend::block_power, "block_power"}})

inline const char* to_string(Solver s) {
  switch (s) {
    case Solver::rfd: return "rfd";
    case Solver::rfdr: return "rfdr";
    case Solver::p2gd: return "p2gd";
    case Solver::p2gdr: return "p2gdr";
  }
  return "?";
}

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::stationary: return "stationary";
    case Termination::max_iters: return "max_iters";
    case Termination::wall_time: return "wall_time";
  }
  return "?";
}

struct StopCriteria {
  // In scaled mode the threshold is eps_stationarity * (1 + ||grad f(X_0)||).
  double eps_stationarity = 1e-8;
  StopMode mode = StopMode::scaled;
  long max_iters = 1000;
  std::optional<double> max_wall_time;  // seconds
};

struct OutputConfig {
  std::string dir;  // empty: nothing written
  int verbosity = 0;
  bool table1 = false;
  bool plot = false;
  bool export_planted = false;
};

struct RunConfig {
  std::string name;
  Solver solver = Solver::rfdr;
  Implementation implementation = Implementation::reference;
  LineSearchParams params;
  StopCriteria stop;
  InstanceSpec instance;
  OutputConfig output;
  RankPolicy rank_policy;
  AlphaPolicy alpha_policy = AlphaPolicy::constant;
  LargeSvdBackend large_svd = LargeSvdBackend::dense;

  void validate() const {
    params.validate();
    rank_policy.validate();
    if (!(stop.eps_stationarity > 0.0 && std::isfinite(stop.eps_stationarity))) {
      throw PreconditionError("RunConfig: eps_stationarity must be positive and finite");
    }
    if (stop.max_iters < 1) throw PreconditionError("RunConfig: max_iters must be >= 1");
    if (stop.max_wall_time && !(*stop.max_wall_time > 0.0)) {
      throw PreconditionError("RunConfig: max_wall_time must be positive");
    }
  }

  std::string label() const {
    if (!name.empty()) return name;
    return std::string(to_string(solver)) +
           (implementation == Implementation::detailed ? "-detailed" : "-reference");
  }
};

inline void to_json(nlohmann::json& j, const LineSearchParams& p) {
  j = {{"alpha_lo", p.alpha_lo}, {"alpha_hi", p.alpha_hi}, {"beta", p.beta},
       {"c", p.c},               {"delta", p.delta},       {"max_backtracks", p.max_backtracks}};
}

inline void from_json(const nlohmann::json& j, LineSearchParams& p) {
  const LineSearchParams d;
  p.alpha_lo = j.value("alpha_lo", d.alpha_lo);
  p.alpha_hi = j.value("alpha_hi", d.alpha_hi);
  p.beta = j.value("beta", d.beta);
  p.c = j.value("c", d.c);
  p.delta = j.value("delta", d.delta);
  p.max_backtracks = j.value("max_backtracks", d.max_backtracks);
}

inline void to_json(nlohmann::json& j, const RankPolicy& p) {
  j = {{"abs_tol", p.abs_tol}, {"rel_tol", p.rel_tol}};
}

inline void from_json(const nlohmann::json& j, RankPolicy& p) {
  const RankPolicy d;
  p.abs_tol = j.value("abs_tol", d.abs_tol);
  p.rel_tol = j.value("rel_tol", d.rel_tol);
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"name", c.name},
       {"solver", c.solver},
       {"implementation", c.implementation},
       {"params", c.params},
       {"stop",
        {{"eps_stationarity", c.stop.eps_stationarity},
         {"mode", c.stop.mode},
         {"max_iters", c.stop.max_iters}}},
       {"instance", c.instance},
       {"output",
        {{"dir", c.output.dir},
         {"verbosity", c.output.verbosity},
         {"table1", c.output.table1},
         {"plot", c.output.plot},
         {"export_planted", c.output.export_planted}}},
       {"rank_policy", c.rank_policy},
       {"alpha_policy", c.alpha_policy},
       {"large_svd", c.large_svd}};
  if (c.stop.max_wall_time) j["stop"]["max_wall_time"] = *c.stop.max_wall_time;
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  const RunConfig d;
  c.name = j.value("name", d.name);
  c.solver = j.value("solver", d.solver);
  c.implementation = j.value("implementation", d.implementation);
  c.params = j.value("params", d.params);
  if (auto it = j.find("stop"); it != j.end()) {
    c.stop.eps_stationarity = it->value("eps_stationarity", d.stop.eps_stationarity);
    c.stop.mode = it->value("mode", d.stop.mode);
    c.stop.max_iters = it->value("max_iters", d.stop.max_iters);
    if (it->contains("max_wall_time") && !(*it)["max_wall_time"].is_null()) {
      c.stop.max_wall_time = (*it)["max_wall_time"].get<double>();
    }
  }
  c.instance = j.value("instance", d.instance);
  if (auto it = j.find("output"); it != j.end()) {
    c.output.dir = it->value("dir", d.output.dir);
    c.output.verbosity = it->value("verbosity", d.output.verbosity);
    c.output.table1 = it->value("table1", d.output.table1);
    c.output.plot = it->value("plot", d.output.plot);
    c.output.export_planted = it->value("export_planted", d.output.export_planted);
  }
  c.rank_policy = j.value("rank_policy", d.rank_policy);
  c.alpha_policy = j.value("alpha_policy", d.alpha_policy);
  c.large_svd = j.value("large_svd", d.large_svd);
}

/// One line of the trace. Record 0 describes the initial point; record i > 0
/// describes X_i and the step that produced it.
struct IterationRecord {
  long i = 0;
  double f_value = 0.0;
  double stationarity = 0.0;
  Index rank = 0;
  double sigma_r = 0.0;  // sigma_r(X_i), 0 when rank X_i < r
  double accepted_alpha = 0.0;
  int backtracks = 0;
  bool rank_reduction_taken = false;
  int reduction_attempts = 0;
  Branch branch = Branch::full_tangent;
  OpCounter step_counters;
  OpCounter counters;  // cumulative over steps, excluding monitoring

  friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

inline void to_json(nlohmann::json& j, const IterationRecord& r) {
  j = {{"i", r.i},
       {"f", r.f_value},
       {"stationarity", r.stationarity},
       {"rank", r.rank},
       {"sigma_r", r.sigma_r},
       {"alpha", r.accepted_alpha},
       {"backtracks", r.backtracks},
       {"rank_reduction_taken", r.rank_reduction_taken},
       {"reduction_attempts", r.reduction_attempts},
       {"branch", to_string(r.branch)},
       {"step_counters", r.step_counters},
       {"counters", r.counters}};
}

struct RunResult {
  RunConfig config;
  InstanceSpec instance;  // as built (apocalypse fixes m, n)
  nlohmann::json objective;
  FactoredMatrix final_point;
  std::vector<IterationRecord> records;
  Termination reason = Termination::max_iters;
  double eps = 0.0;  // threshold actually applied
  OpCounter counters;
  long monitor_grad_evals = 0;  // gradients spent on the stationarity monitor
  double elapsed_seconds = 0.0;

  const IterationRecord& last() const { return records.back(); }
  long iterations() const { return static_cast<long>(records.size()) - 1; }
};

/// A map failed mid-run; the message names the iteration.
class RunError : public Error {
 public:
  RunError(const std::string& what, long iteration) : Error(what), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

inline StepReport take_step(const RunConfig& cfg, const FactoredMatrix& x, const Objective& obj,
                            Index r, double alpha0) {
  const LineSearchParams& p = cfg.params;
  if (cfg.implementation == Implementation::reference) {
    switch (cfg.solver) {
      case Solver::rfd: return rfd_step(x, obj, r, p, alpha0, cfg.rank_policy);
      case Solver::rfdr: return rfdr_step(x, obj, r, p, alpha0, cfg.rank_policy);
      case Solver::p2gd: return p2gd_step(x, obj, r, p, alpha0, cfg.rank_policy);
      case Solver::p2gdr: return p2gdr_step(x, obj, r, p, alpha0, cfg.rank_policy);
    }
  }
  DetailedOptions opts;
  opts.policy = cfg.rank_policy;
  opts.large_svd.backend = cfg.large_svd;
  if (x.rank() == 0) return detailed_zero_input(obj, r, p, alpha0, opts);
  switch (cfg.solver) {
    case Solver::rfd: return detailed_rfd(x, obj, r, p, alpha0, opts);
    case Solver::rfdr: return detailed_rfdr(x, obj, r, p, alpha0, opts);
    case Solver::p2gd: return detailed_p2gd(x, obj, r, p, alpha0, opts);
    case Solver::p2gdr: return detailed_p2gdr(x, obj, r, p, alpha0, opts);
  }
  throw PreconditionError("take_step: unknown solver");
}

/// Runs the configured iteration from the instance's initial point.
inline RunResult run(const RunConfig& cfg, const Instance& inst) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const Objective& obj = inst.objective;
  const Index r = inst.spec.rank;

  RunResult out;
  out.config = cfg;
  out.instance = inst.spec;
  out.objective = obj.descriptor();

  FactoredMatrix x = inst.initial;
  Matrix g = obj.gradient(x.dense());
  ++out.monitor_grad_evals;
  double s = stationarity_measure(x, g, r, cfg.rank_policy);
  out.eps = cfg.stop.mode == StopMode::scaled ? cfg.stop.eps_stationarity * (1.0 + g.norm())
                                              : cfg.stop.eps_stationarity;

  auto sigma_r = [r](const FactoredMatrix& y) { return y.rank() >= r ? y.singular_value(r) : 0.0; };
  IterationRecord rec;
  rec.f_value = obj.value(x.dense());
  rec.stationarity = s;
  rec.rank = x.rank();
  rec.sigma_r = sigma_r(x);
  rec.branch = x.rank() == 0 ? Branch::zero_foot : Branch::full_tangent;
  out.records.push_back(rec);

  double alpha_prev = cfg.params.alpha_hi;
  for (long i = 0;; ++i) {
    if (s <= out.eps) {
      out.reason = Termination::stationary;
      break;
    }
    if (i == cfg.stop.max_iters) {
      out.reason = Termination::max_iters;
      break;
    }
    const double elapsed = std::chrono::duration<double>(clock::now() - start).count();
    if (cfg.stop.max_wall_time && elapsed >= *cfg.stop.max_wall_time) {
      out.reason = Termination::wall_time;
      break;
    }
    const double alpha0 = cfg.alpha_policy == AlphaPolicy::constant
                              ? cfg.params.alpha_hi
                              : std::clamp(alpha_prev, cfg.params.alpha_lo, cfg.params.alpha_hi);
    StepReport step;
    try {
      step = take_step(cfg, x, obj, r, alpha0);
    } catch (const StationaryPointError&) {
      // s(X) is above eps but below the maps' working-precision floor.
      out.reason = Termination::stationary;
      break;
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << cfg.label() << ": step from iteration " << i << " failed (f = "
          << out.records.back().f_value << ", stationarity = " << s << "): " << e.what();
      throw RunError(msg.str(), i);
    }
    x = std::move(step.next);
    out.counters += step.counters;
    alpha_prev = step.accepted_alpha;

    g = obj.gradient(x.dense());
    ++out.monitor_grad_evals;
    s = stationarity_measure(x, g, r, cfg.rank_policy);

    IterationRecord next;
    next.i = i + 1;
    next.f_value = step.f_after;
    next.stationarity = s;
    next.rank = x.rank();
    next.sigma_r = sigma_r(x);
    next.accepted_alpha = step.accepted_alpha;
    next.backtracks = step.backtracks;
    next.rank_reduction_taken = step.rank_reduction_taken;
    next.reduction_attempts = step.reduction_attempts;
    next.branch = step.branch;
    next.step_counters = step.counters;
    next.counters = out.counters;
    out.records.push_back(next);
    if (cfg.output.verbosity > 1) {
      std::fprintf(stderr, "[%s] i=%ld f=%.6e s=%.3e rank=%ld alpha=%.3g\n", cfg.label().c_str(),
                   next.i, next.f_value, s, static_cast<long>(next.rank), next.accepted_alpha);
    }
  }
  out.final_point = std::move(x);
  out.elapsed_seconds = std::chrono::duration<double>(clock::now() - start).count();
  return out;
}

inline RunResult run(const RunConfig& cfg) {
  cfg.validate();
  return run(cfg, make_instance(cfg.instance));
}

// ---- comparison ----

/// Operation totals and per-iteration maxima for one run.
struct OperationSummary {
  std::string label;
  long iterations = 0;
  OpCounter totals;
  OpCounter max_per_iteration;
  long reductions_taken = 0;
  long reduction_attempts = 0;
  double final_f = 0.0;
  double final_stationarity = 0.0;
  Termination reason = Termination::max_iters;
};

inline OperationSummary summarize(const RunResult& res) {
  OperationSummary s;
  s.label = res.config.label();
  s.iterations = res.iterations();
  s.totals = res.counters;
  for (const auto& rec : res.records) {
    if (rec.i == 0) continue;
    auto& mx = s.max_per_iteration;
    const auto& c = rec.step_counters;
    mx.f_evals = std::max(mx.f_evals, c.f_evals);
    mx.f_baseline_evals = std::max(mx.f_baseline_evals, c.f_baseline_evals);
    mx.grad_evals = std::max(mx.grad_evals, c.grad_evals);
    mx.pivoted_qrs = std::max(mx.pivoted_qrs, c.pivoted_qrs);
    mx.small_svds = std::max(mx.small_svds, c.small_svds);
    mx.large_svds = std::max(mx.large_svds, c.large_svds);
    mx.matmul_flops = std::max(mx.matmul_flops, c.matmul_flops);
    s.reductions_taken += rec.rank_reduction_taken;
    s.reduction_attempts += rec.reduction_attempts;
  }
  s.final_f = res.last().f_value;
  s.final_stationarity = res.last().stationarity;
  s.reason = res.reason;
  return s;
}

struct Comparison {
  std::vector<RunResult> runs;
  std::vector<OperationSummary> table;
};

/// Worker count for compare(): LOWRANK_THREADS if set, else the hardware
/// concurrency, never more than the number of jobs.
inline unsigned thread_cap(std::size_t jobs) {
  unsigned cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LOWRANK_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) cap = static_cast<unsigned>(v);
  }
  return static_cast<unsigned>(std::min<std::size_t>(cap, std::max<std::size_t>(jobs, 1)));
}

inline Comparison compare(const std::vector<RunConfig>& configs) {
  if (configs.size() < 2) throw PreconditionError("compare: need at least two configs");
  for (const auto& c : configs) {
    c.validate();
    if (!(c.instance == configs.front().instance)) {
      throw PreconditionError("compare: config '" + c.label() +
                              "' uses a different instance than '" + configs.front().label() + "'");
    }
  }
  const Instance inst = make_instance(configs.front().instance);
  std::vector<std::optional<RunResult>> slots(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  std::size_t next = 0;
  std::mutex lock;
  auto worker = [&] {
    for (;;) {
      std::size_t k;
      {
        std::lock_guard<std::mutex> g(lock);
        if (next == configs.size()) return;
        k = next++;
      }
      try {
        slots[k] = run(configs[k], inst);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned n_threads = thread_cap(configs.size());
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  Comparison cmp;
  for (auto& slot : slots) {
    cmp.table.push_back(summarize(*slot));
    cmp.runs.push_back(std::move(*slot));
  }
  return cmp;
}

// ---- outputs ----

inline void to_json(nlohmann::json& j, const OperationSummary& s) {
  j = {{"label", s.label},
       {"iterations", s.iterations},
       {"totals", s.totals},
       {"max_per_iteration", s.max_per_iteration},
       {"reductions_taken", s.reductions_taken},
       {"reduction_attempts", s.reduction_attempts},
       {"final_f", s.final_f},
       {"final_stationarity", s.final_stationarity},
       {"termination", s.reason}};
}

inline void write_trace(std::ostream& os, const RunResult& res) {
  for (const auto& rec : res.records) os << nlohmann::json(rec).dump() << '\n';
}

inline nlohmann::json summary_json(const RunResult& res) {
  return {{"config", res.config},
          {"instance", res.instance},
          {"objective", res.objective},
          {"termination", res.reason},
          {"iterations", res.iterations()},
          {"eps", res.eps},
          {"final_f", res.last().f_value},
          {"final_stationarity", res.last().stationarity},
          {"final_rank", res.final_point.rank()},
          {"counters", res.counters},
          {"monitor_grad_evals", res.monitor_grad_evals},
          {"elapsed_seconds", res.elapsed_seconds},
          {"operations", summarize(res)}};
}

inline void write_table1_csv(std::ostream& os, const std::vector<OperationSummary>& rows) {
  os << "solver,iterations,f_evals,f_baseline_evals,grad_evals,pivoted_qrs,small_svds,large_svds,"
        "max_grad_per_iter,max_qr_per_iter,max_small_svd_per_iter,max_large_svd_per_iter,"
        "reduction_attempts,reductions_taken,final_f,final_stationarity,termination\n";
  os << std::setprecision(10);
  for (const auto& s : rows) {
    os << s.label << ',' << s.iterations << ',' << s.totals.f_evals << ','
       << s.totals.f_baseline_evals << ',' << s.totals.grad_evals << ',' << s.totals.pivoted_qrs
       << ',' << s.totals.small_svds << ',' << s.totals.large_svds << ','
       << s.max_per_iteration.grad_evals << ',' << s.max_per_iteration.pivoted_qrs << ','
       << s.max_per_iteration.small_svds << ',' << s.max_per_iteration.large_svds << ','
       << s.reduction_attempts << ',' << s.reductions_taken << ',' << s.final_f << ','
       << s.final_stationarity << ',' << to_string(s.reason) << '\n';
  }
}

/// Stationarity versus iteration on a log axis, one polyline per run.
inline void write_stationarity_svg(std::ostream& os, const std::vector<const RunResult*>& runs) {
  const double w = 640, h = 400, pad = 50;
  long max_i = 1;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* res : runs)
    for (const auto& rec : res->records) {
      max_i = std::max(max_i, rec.i);
      if (rec.stationarity > 0) {
        lo = std::min(lo, std::log10(rec.stationarity));
        hi = std::max(hi, std::log10(rec.stationarity));
      }
    }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  lo = std::floor(lo);
  hi = std::ceil(hi);
  if (hi <= lo) hi = lo + 1;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\""
     << h - pad << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">iteration (max "
     << max_i << ")</text>\n"
     << "<text x=\"10\" y=\"" << pad - 15 << "\">log10 stationarity [" << lo << ", " << hi
     << "]</text>\n";
  for (std::size_t k = 0; k < runs.size(); ++k) {
    os << "<polyline fill=\"none\" stroke=\"" << colors[k % 5] << "\" points=\"";
    for (const auto& rec : runs[k]->records) {
      if (!(rec.stationarity > 0)) continue;
      const double px = pad + (w - 2 * pad) * static_cast<double>(rec.i) / static_cast<double>(max_i);
      const double py = h - pad - (h - 2 * pad) * (std::log10(rec.stationarity) - lo) / (hi - lo);
      os << px << ',' << py << ' ';
    }
    os << "\"/>\n<text x=\"" << w - pad - 120 << "\" y=\"" << pad + 16 * static_cast<double>(k)
       << "\" fill=\"" << colors[k % 5] << "\">" << runs[k]->config.label() << "</text>\n";
  }
  os << "</svg>\n";
}

/// Writes trace.jsonl, summary.json and the optional table1.csv,
/// stationarity.svg and planted.mtx into `dir`.
inline void write_outputs(const RunResult& res, const std::string& dir,
                          const std::optional<Matrix>& planted = std::nullopt) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path base(dir);
  {
    std::ofstream os(base / "trace.jsonl");
    write_trace(os, res);
  }
  {
    std::ofstream os(base / "summary.json");
    os << summary_json(res).dump(2) << '\n';
  }
  if (res.config.output.table1) {
    std::ofstream os(base / "table1.csv");
    write_table1_csv(os, {summarize(res)});
  }
  if (res.config.output.plot) {
    std::ofstream os(base / "stationarity.svg");
    write_stationarity_svg(os, {&res});
  }
  if (res.config.output.export_planted && planted) {
    save_matrix((base / "planted.mtx").string(), *planted);
  }
}

}  // namespace lowrank
