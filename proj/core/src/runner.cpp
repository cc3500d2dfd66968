#include "qdiag/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "qdiag/envs.hpp"

namespace fs = std::filesystem;

namespace qdiag {

namespace {

constexpr const char* kCsvHeader =
    "iter,return_norm,linf_norm,proj_err_norm,bellman_loss,tv_shift,loss_shift,entropy_norm,"
    "diverged";

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

void write_cell_csv(const fs::path& path, const RunRecord& rec) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kCsvHeader << "\n";
  for (const IterationRow& r : rec.rows) {
    out << r.iter << ',' << fmt(r.return_norm) << ',' << fmt(r.linf_norm) << ','
        << fmt(rec.proj_err_norm) << ',' << fmt(r.bellman_loss) << ',' << fmt(r.tv_shift) << ','
        << fmt(r.loss_shift) << ',' << fmt(r.entropy_norm) << ',' << (r.diverged ? 1 : 0)
        << "\n";
  }
}

// Representation floor for (env, arch, seed): supervised fit of Q* under the
// uniform distribution with the sweep's own fit budget. Weighting-independent,
// so cells share it through a small cache.
class ProjCache {
 public:
  double get(const ExperimentConfig& cfg, const BuiltEnv& env, const ExpertBaseline& base,
             const ArchSpec& arch, std::uint64_t seed) {
    std::ostringstream key;
    key << env.spec.canonical_name() << '/' << arch.name() << '/' << seed;
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = values_.find(key.str());
      if (it != values_.end()) return it->second;
    }
    double value = 0.0;
    if (arch.kind == ArchSpec::Kind::mlp) {
      Rng rng = Rng::stream(seed, env.spec.canonical_name() + "/" + arch.name() + "/proj");
      QNetwork net = QNetwork::make_mlp(arch, static_cast<int>(env.observations.cols()),
                                        env.mdp.num_actions(), rng);
      const int S = env.mdp.num_states(), A = env.mdp.num_actions();
      StateActionDist unif{Matrix::Constant(S, A, 1.0 / (S * A))};
      FitConfig fit = cfg.fit;
      fit.minibatch = 0;
      // The floor gets the run's whole optimization budget against the fixed
      // target Q*; anything less overstates it (FQI tracks a converging
      // target warm-started across iterations).
      fit.max_steps = cfg.fit.max_steps * std::max(1, cfg.iterations);
      fit.snapshot_interval = 0;
      FitResult fr =
          fit_weighted_projection(std::move(net), env.observations, base.q_star, unif, fit);
      value = (fr.net.forward(env.observations) - base.q_star).cwiseAbs().maxCoeff() /
              base.expert_return;
    }
    std::lock_guard<std::mutex> lock(mu_);
    values_.emplace(key.str(), value);
    return value;
  }

 private:
  std::mutex mu_;
  std::map<std::string, double> values_;
};

FqiConfig cell_fqi_config(const ExperimentConfig& cfg, Algorithm algo, const ArchSpec& arch,
                          const std::string& weighting, std::uint64_t seed) {
  FqiConfig fc;
  fc.iterations = cfg.iterations;
  fc.arch = arch;
  if (algo == Algorithm::replay)
    fc.overlay = parse_overlay(weighting);
  else
    fc.weighting = parse_weighting(weighting);
  fc.fit = cfg.fit;
  // Exact projection is full-batch by construction; the sampled regimes
  // default to the standard minibatch when none is configured.
  if (algo != Algorithm::exact && fc.fit.minibatch == 0) fc.fit.minibatch = 128;
  fc.alpha = cfg.alpha;
  fc.exploration_eps = cfg.exploration_eps;
  fc.samples_per_iter = cfg.samples_per_iter;
  fc.online_samples_per_iter = cfg.online_samples_per_iter;
  fc.buffer_capacity = cfg.buffer_capacity;
  fc.grad_steps_per_sample = cfg.grad_steps_per_sample;
  fc.early_stop = parse_early_stop(cfg.early_stop);
  fc.store_q_snapshots = cfg.store_q_snapshots;
  fc.seed = seed;
  fc.afm = cfg.afm;
  return fc;
}

}  // namespace

std::uint64_t cell_seed(std::uint64_t seed, const std::string& env, const std::string& arch,
                        const std::string& weighting) {
  return derive_seed(seed, env + "/" + arch + "/" + weighting);
}

SweepResult run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  cfg.validate();
  const Algorithm algo = parse_algorithm(cfg.algorithm);
  const std::vector<std::string> env_names =
      cfg.envs.empty() ? default_suite_names() : cfg.envs;

  // Environments are shared read-only across worker threads.
  std::vector<BuiltEnv> envs;
  std::vector<ExpertBaseline> baselines;
  for (const auto& name : env_names) {
    envs.push_back(build_env(name, cfg.suite_seed));
    baselines.push_back(compute_expert_baseline(envs.back().mdp));
  }

  SweepResult result;
  result.config = cfg;
  result.out_root = (fs::path(cfg.out_dir) / cfg.hash()).string();

  struct Cell {
    std::size_t env, arch, weighting, seed;
  };
  std::vector<Cell> cells;
  for (std::size_t e = 0; e < env_names.size(); ++e)
    for (std::size_t a = 0; a < cfg.archs.size(); ++a)
      for (std::size_t w = 0; w < cfg.weightings.size(); ++w)
        for (std::size_t s = 0; s < cfg.seeds.size(); ++s) cells.push_back({e, a, w, s});
  result.records.resize(cells.size());

  for (std::size_t e = 0; e < env_names.size(); ++e)
    for (std::size_t a = 0; a < cfg.archs.size(); ++a)
      for (std::size_t w = 0; w < cfg.weightings.size(); ++w)
        fs::create_directories(fs::path(result.out_root) / env_names[e] / cfg.archs[a] /
                               cfg.weightings[w]);

  ProjCache proj;
  std::mutex log_mu;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};

  auto run_cell = [&](std::size_t i) {
    const Cell& c = cells[i];
    RunRecord& rec = result.records[i];
    rec.env = env_names[c.env];
    rec.arch = cfg.archs[c.arch];
    rec.weighting = cfg.weightings[c.weighting];
    rec.seed = cfg.seeds[c.seed];
    const fs::path dir = fs::path(result.out_root) / rec.env / rec.arch / rec.weighting;
    try {
      const ArchSpec arch = ArchSpec::parse(rec.arch);
      const std::uint64_t cseed = cell_seed(rec.seed, rec.env, rec.arch, rec.weighting);
      const FqiConfig fc = cell_fqi_config(cfg, algo, arch, rec.weighting, cseed);
      const BuiltEnv& env = envs[c.env];
      IterationTrace trace = run_fqi(algo, env.mdp, env.observations, fc);
      rec.rows = trace.rows;
      rec.diverged = trace.diverged;
      rec.halted_early = trace.halted_early;
      rec.proj_err_norm = proj.get(cfg, env, baselines[c.env], arch, rec.seed);
      write_cell_csv(dir / (std::to_string(rec.seed) + ".csv"), rec);
      trace.final_net.save((dir / (std::to_string(rec.seed) + ".qnet")).string());
    } catch (const std::exception& e) {
      rec.error = e.what();
      std::ofstream err(dir / (std::to_string(rec.seed) + ".error.txt"));
      err << e.what() << "\n";
    }
    const std::size_t finished = ++done;
    if (log) {
      std::lock_guard<std::mutex> lock(log_mu);
      *log << "[" << finished << "/" << cells.size() << "] " << rec.env << "/" << rec.arch
           << "/" << rec.weighting << "/" << rec.seed
           << (rec.error.empty() ? (rec.diverged ? " diverged" : " ok") : " ERROR") << "\n";
    }
  };

  unsigned jobs = cfg.jobs > 0 ? static_cast<unsigned>(cfg.jobs)
                               : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min<unsigned>(jobs, static_cast<unsigned>(cells.size()));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1))
          run_cell(i);
      });
    for (auto& th : pool) th.join();
  }

  // Manifest: everything needed to interpret the tree, no volatile content,
  // so identical configs rewrite identical bytes.
  nlohmann::ordered_json m;
  m["format"] = "qdiag-manifest-1";
  m["config_hash"] = cfg.hash();
  m["algorithm"] = cfg.algorithm;
  m["envs"] = env_names;
  m["archs"] = cfg.archs;
  m["weightings"] = cfg.weightings;
  m["seeds"] = cfg.seeds;
  m["csv_schema"] = kCsvHeader;
  m["config"] = cfg.canonical_text();
  m["divergence_rate"] = divergence_rate(result.records);
  nlohmann::ordered_json cell_list = nlohmann::ordered_json::array();
  for (const RunRecord& rec : result.records) {
    nlohmann::ordered_json c;
    c["env"] = rec.env;
    c["arch"] = rec.arch;
    c["weighting"] = rec.weighting;
    c["seed"] = rec.seed;
    c["path"] = rec.env + "/" + rec.arch + "/" + rec.weighting + "/" +
                std::to_string(rec.seed) + ".csv";
    c["status"] = rec.error.empty() ? "ok" : "error";
    if (!rec.error.empty()) c["error"] = rec.error;
    c["diverged"] = rec.diverged;
    cell_list.push_back(std::move(c));
  }
  m["cells"] = std::move(cell_list);
  std::ofstream mf(fs::path(result.out_root) / "manifest.json");
  if (!mf) throw std::runtime_error("cannot write manifest.json");
  mf << m.dump(2) << "\n";

  return result;
}

SolveInfo solve_env(const std::string& name, std::uint64_t suite_seed) {
  const BuiltEnv env = build_env(name, suite_seed);
  const ExpertBaseline base = compute_expert_baseline(env.mdp);
  SolveInfo info;
  info.name = env.spec.canonical_name();
  info.num_states = env.mdp.num_states();
  info.num_actions = env.mdp.num_actions();
  info.expert_return = base.expert_return;
  info.q_star_linf = base.q_star_linf;
  info.vi_iterations = base.vi_iterations;
  return info;
}

double divergence_rate(const std::vector<RunRecord>& records) {
  std::size_t n = 0, diverged = 0;
  for (const RunRecord& r : records) {
    if (!r.error.empty()) continue;
    ++n;
    if (r.diverged) ++diverged;
  }
  return n == 0 ? 0.0 : static_cast<double>(diverged) / static_cast<double>(n);
}

}  // namespace qdiag
