#pragma once

// Experiment configuration: a flat key/value text format with two optional
// nested sections (fit:, afm:). Grammar, by line:
//   # comment                (also trailing '# ...' on any line)
//   key = value              top-level scalar or comma-separated list
//   fit:                     section header; following key = value lines
//   afm:                     belong to it until the next header / EOF
// Unknown keys, unknown sections and malformed values are configuration
// errors (std::invalid_argument) carrying the line number.

#include <cstdint>
#include <string>
#include <vector>

#include "qdiag/afm.hpp"
#include "qdiag/funcapprox.hpp"

namespace qdiag {

struct ExperimentConfig {
  std::string algorithm = "exact";
  std::vector<std::string> envs;        // empty = default suite
  std::vector<std::string> archs = {"64x64"};
  std::vector<std::string> weightings = {"unif"};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::string out_dir = "out";
  int jobs = 0;  // 0 = all hardware threads
  std::uint64_t suite_seed = 0;

  int iterations = 30;
  double alpha = 1.0;
  double exploration_eps = 0.1;
  int samples_per_iter = 128;
  int online_samples_per_iter = 32;
  int buffer_capacity = 10000;
  double grad_steps_per_sample = 4.0;
  std::string early_stop = "none";
  bool store_q_snapshots = false;

  FitConfig fit;
  AfmConfig afm;

  // Every field in a fixed order, one per line; the basis for hashing and
  // the manifest, so reruns of an identical config land in the same place.
  std::string canonical_text() const;
  std::string hash() const;  // fnv1a64 of canonical_text, 16 hex digits

  // Cross-field validation (env names, arch specs, weighting names against
  // the algorithm, ranges). Throws std::invalid_argument.
  void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

}  // namespace qdiag
