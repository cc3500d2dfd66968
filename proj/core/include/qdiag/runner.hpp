#pragma once

// Sweep runner and reporting. A sweep enumerates (env, arch, weighting,
// seed) cells, runs them on a bounded worker pool, and persists results
// under <out>/<confighash>/<env>/<arch>/<weighting>/<seed>.csv plus a
// manifest.json. The config hash covers everything that affects results
// (not out_dir or jobs), so rerunning an identical experiment overwrites
// the same tree with identical bytes.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "qdiag/config.hpp"
#include "qdiag/fqi.hpp"

namespace qdiag {

struct RunRecord {
  std::string env;
  std::string arch;
  std::string weighting;
  std::uint64_t seed = 0;
  std::vector<IterationRow> rows;
  // || fit of Q* || - Q* ||_inf / eta(pi*) under the same arch and fit
  // budget: the pure representation error, constant per run.
  double proj_err_norm = 0.0;
  bool diverged = false;
  bool halted_early = false;
  std::string error;  // nonempty = the cell failed; other fields empty
};

struct SweepResult {
  ExperimentConfig config;
  std::string out_root;  // <out_dir>/<confighash>
  std::vector<RunRecord> records;
};

// Derivation of the per-cell seed (documented, stable):
//   derive_seed(seed, env + "/" + arch + "/" + weighting)
std::uint64_t cell_seed(std::uint64_t seed, const std::string& env, const std::string& arch,
                        const std::string& weighting);

// Runs the sweep and writes the result tree. Cell failures are recorded on
// the record (and in the manifest) and do not stop the sweep. `log`, if
// given, receives one progress line per finished cell.
SweepResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

// Exact solve of one env; the `solve` subcommand prints these fields.
struct SolveInfo {
  std::string name;
  int num_states = 0;
  int num_actions = 0;
  double expert_return = 0.0;
  double q_star_linf = 0.0;
  int vi_iterations = 0;
};
SolveInfo solve_env(const std::string& name, std::uint64_t suite_seed = 0);

// Fraction of records whose trace tripped the divergence flag.
double divergence_rate(const std::vector<RunRecord>& records);

// Reload records from a result tree written by run_experiment.
std::vector<RunRecord> load_records(const std::string& out_root);

// Reports, written into the result tree. Missing cells are left blank and
// reported as warning lines (also streamed to `warnings` if given).
void write_summary(const std::string& out_root, const std::vector<RunRecord>& records);
void write_table1(const std::string& out_root, const std::vector<RunRecord>& records,
                  std::ostream* warnings = nullptr);
void write_plots(const std::string& out_root, const std::vector<RunRecord>& records);

}  // namespace qdiag
