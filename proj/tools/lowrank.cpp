// lowrank: command-line front end.
//
//   lowrank solve   --config run.json [--out DIR]
//   lowrank compare --configs a.json b.json ... [--out DIR]
//   lowrank bench   --suite apocalypse|completion|worst-case --seed N [--out DIR]
//   lowrank check   --suite invariants

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lowrank/driver.hpp"
#include "lowrank/testing/invariants.hpp"

using namespace lowrank;

namespace {

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  return nlohmann::json::parse(in).get<RunConfig>();
}

void print_table(const std::vector<OperationSummary>& rows) {
  std::printf("%-22s %6s %8s %6s %6s %7s %7s %5s %5s %12s %12s  %s\n", "solver", "iters", "f_evals",
              "grads", "QRs", "smSVD", "lgSVD", "g/it", "red", "final f", "final s", "stop");
  for (const auto& s : rows) {
    std::printf("%-22s %6ld %8ld %6ld %6ld %7ld %7ld %5ld %5ld %12.4e %12.4e  %s\n", s.label.c_str(),
                s.iterations, s.totals.f_evals, s.totals.grad_evals, s.totals.pivoted_qrs,
                s.totals.small_svds, s.totals.large_svds, s.max_per_iteration.grad_evals,
                s.reductions_taken, s.final_f, s.final_stationarity, to_string(s.reason));
  }
}

void write_comparison(const Comparison& cmp, const std::string& dir) {
  std::vector<const RunResult*> runs;
  for (std::size_t k = 0; k < cmp.runs.size(); ++k) {
    const RunResult& res = cmp.runs[k];
    write_outputs(res, dir + "/" + std::to_string(k) + "_" + res.config.label());
    runs.push_back(&res);
  }
  std::ofstream table(dir + "/table1.csv");
  write_table1_csv(table, cmp.table);
  std::ofstream svg(dir + "/stationarity.svg");
  write_stationarity_svg(svg, runs);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& row : cmp.table) j.push_back(row);
  std::ofstream(dir + "/comparison.json") << j.dump(2) << '\n';
}

int cmd_solve(const std::string& path, const std::string& out, int verbosity) {
  RunConfig cfg = load_config(path);
  if (!out.empty()) cfg.output.dir = out;
  cfg.output.verbosity = std::max(cfg.output.verbosity, verbosity);
  const Instance inst = make_instance(cfg.instance);
  const RunResult res = run(cfg, inst);
  if (!cfg.output.dir.empty()) write_outputs(res, cfg.output.dir, inst.planted);
  print_table({summarize(res)});
  return 0;
}

int cmd_compare(const std::vector<std::string>& paths, const std::string& out) {
  std::vector<RunConfig> cfgs;
  for (const auto& p : paths) cfgs.push_back(load_config(p));
  const Comparison cmp = compare(cfgs);
  print_table(cmp.table);
  if (!out.empty()) write_comparison(cmp, out);
  return 0;
}

std::vector<RunConfig> bench_configs(const std::string& suite, std::uint64_t seed) {
  RunConfig base;
  base.instance.seed = seed;
  if (suite == "apocalypse") {
    base.instance.kind = InstanceKind::apocalypse;
    base.instance.rank = 2;
    base.stop.max_iters = 2000;
    base.stop.mode = StopMode::absolute;
    base.stop.eps_stationarity = 1e-14;
  } else if (suite == "completion") {
    base.instance.kind = InstanceKind::matrix_completion;
    base.instance.m = base.instance.n = 60;
    base.instance.rank = base.instance.planted_rank = 4;
    base.stop.max_iters = 5000;
  } else if (suite == "worst-case") {
    base.instance.kind = InstanceKind::target_least_squares;
    base.instance.m = base.instance.n = 30;
    base.instance.rank = 3;
    base.instance.planted_rank = 6;
    base.instance.init = InitKind::random;
    base.instance.init_scale = 0.1;
    base.params.delta = 0.2;
    base.implementation = Implementation::detailed;
    base.stop.max_iters = 200;
  } else {
    throw PreconditionError("bench: unknown suite '" + suite +
                            "' (known: apocalypse, completion, worst-case)");
  }
  std::vector<RunConfig> out;
  for (Solver s : {Solver::rfd, Solver::rfdr, Solver::p2gd, Solver::p2gdr}) {
    RunConfig c = base;
    c.solver = s;
    out.push_back(c);
  }
  return out;
}

int cmd_bench(const std::string& suite, std::uint64_t seed, const std::string& out) {
  const Comparison cmp = compare(bench_configs(suite, seed));
  std::printf("bench %s, seed %llu\n", suite.c_str(), static_cast<unsigned long long>(seed));
  print_table(cmp.table);
  if (!out.empty()) write_comparison(cmp, out);
  return 0;
}

int cmd_check(const std::string& suite) {
  if (suite != "invariants") {
    throw PreconditionError("check: unknown suite '" + suite + "' (known: invariants)");
  }
  int failed = 0;
  for (const auto& s : testing::acceptance_suites()) {
    const auto res = s();
    std::printf("%s %s  %s: %s\n", res.id.c_str(), res.passed ? "PASS" : "FAIL", res.name.c_str(),
                res.detail.c_str());
    failed += !res.passed;
  }
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"First-order optimization on bounded-rank matrices"};
  app.require_subcommand(1);

  std::string config, out, suite = "invariants", bench_suite = "apocalypse";
  std::vector<std::string> configs;
  std::uint64_t seed = 1;
  int verbosity = 0;

  auto* solve = app.add_subcommand("solve", "Run one configured solver");
  solve->add_option("--config", config, "RunConfig JSON file")->required()->check(CLI::ExistingFile);
  solve->add_option("--out", out, "Output directory (overrides output.dir)");
  solve->add_flag("-v,--verbose", verbosity, "Per-iteration log on stderr (repeat for more)");

  auto* cmp = app.add_subcommand("compare", "Run several configs on one instance");
  cmp->add_option("--configs", configs, "RunConfig JSON files")->required()->expected(2, -1);
  cmp->add_option("--out", out, "Output directory");

  auto* bench = app.add_subcommand("bench", "Run all four solvers on a named suite");
  bench->add_option("--suite", bench_suite, "apocalypse | completion | worst-case");
  bench->add_option("--seed", seed, "Instance seed");
  bench->add_option("--out", out, "Output directory");

  auto* check = app.add_subcommand("check", "Run the property suites");
  check->add_option("--suite", suite, "invariants");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*solve) return cmd_solve(config, out, verbosity);
    if (*cmp) return cmd_compare(configs, out);
    if (*bench) return cmd_bench(bench_suite, seed, out);
    if (*check) return cmd_check(suite);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "lowrank: %s\n", e.what());
    return 2;
  }
  return 0;
}
