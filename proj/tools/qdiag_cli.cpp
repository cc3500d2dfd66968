// qdiag: exact solves, FQI sweeps and report generation on the benchmark
// suite. Exit codes: 0 ok, 1 runtime failure, 2 configuration error.

#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qdiag/runner.hpp"

namespace {

int do_solve(const std::string& env, std::uint64_t suite_seed) {
  const qdiag::SolveInfo info = qdiag::solve_env(env, suite_seed);
  std::cout << "env            " << info.name << "\n"
            << "states         " << info.num_states << "\n"
            << "actions        " << info.num_actions << "\n"
            << "eta(pi*)       " << info.expert_return << "\n"
            << "max|Q*|        " << info.q_star_linf << "\n"
            << "vi iterations  " << info.vi_iterations << "\n";
  return 0;
}

int do_run(const std::string& config_path, const std::string& out_override, int jobs_override,
           bool quiet) {
  qdiag::ExperimentConfig cfg = qdiag::load_config_file(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (jobs_override >= 0) cfg.jobs = jobs_override;
  cfg.validate();
  const qdiag::SweepResult result = qdiag::run_experiment(cfg, quiet ? nullptr : &std::cerr);
  std::size_t failures = 0;
  for (const auto& rec : result.records)
    if (!rec.error.empty()) ++failures;
  std::cout << "wrote " << result.out_root << " (" << result.records.size() << " cells, "
            << failures << " failed, divergence rate "
            << qdiag::divergence_rate(result.records) << ")\n";
  return failures == result.records.size() && !result.records.empty() ? 1 : 0;
}

int do_report(const std::string& in_root, const std::string& kind) {
  const auto records = qdiag::load_records(in_root);
  if (records.empty()) {
    std::cerr << "no runs found under " << in_root << "\n";
    return 1;
  }
  if (kind == "summary") {
    qdiag::write_summary(in_root, records);
    std::cout << "wrote " << in_root << "/summary.csv\n";
  } else if (kind == "table1") {
    qdiag::write_table1(in_root, records, &std::cerr);
    std::cout << "wrote " << in_root << "/table1.csv\n";
  } else if (kind == "plots") {
    qdiag::write_plots(in_root, records);
    std::cout << "wrote " << in_root << "/plots/\n";
  } else {
    qdiag::write_summary(in_root, records);
    qdiag::write_table1(in_root, records, &std::cerr);
    qdiag::write_plots(in_root, records);
    std::cout << "wrote summary.csv, table1.csv and plots/ under " << in_root << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oracle-based diagnostics for fitted Q-iteration"};
  app.require_subcommand(1);

  std::uint64_t suite_seed = 0;
  if (const char* s = std::getenv("QDIAG_SEED")) suite_seed = std::strtoull(s, nullptr, 10);

  auto* solve = app.add_subcommand("solve", "exactly solve one benchmark env and print it");
  std::string solve_env_name;
  solve->add_option("env", solve_env_name, "canonical env name, e.g. gridworld-16-onehot")
      ->required();
  solve->add_option("--suite-seed", suite_seed, "seed for the env layout");

  auto* run = app.add_subcommand("run", "run a sweep from a config file");
  std::string config_path, out_override;
  int jobs_override = -1;
  bool quiet = false;
  run->add_option("--config,-c", config_path, "experiment config file")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--out,-o", out_override, "override the configured out dir");
  run->add_option("--jobs,-j", jobs_override, "worker threads (0 = all cores)");
  run->add_flag("--quiet,-q", quiet, "suppress per-cell progress");

  auto* report = app.add_subcommand("report", "build reports from a result tree");
  std::string in_root, kind = "all";
  report->add_option("--in,-i", in_root, "result tree (<out>/<confighash>)")->required();
  report->add_option("--kind,-k", kind, "summary | table1 | plots | all")
      ->check(CLI::IsMember({"summary", "table1", "plots", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (solve->parsed()) return do_solve(solve_env_name, suite_seed);
    if (run->parsed()) return do_run(config_path, out_override, jobs_override, quiet);
    if (report->parsed()) return do_report(in_root, kind);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
