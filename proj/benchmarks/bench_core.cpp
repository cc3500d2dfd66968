#include <benchmark/benchmark.h>

#include "qdiag/afm.hpp"
#include "qdiag/envs.hpp"
#include "qdiag/fqi.hpp"

using namespace qdiag;

namespace {

const BuiltEnv& env_of(int states) {
  static const BuiltEnv grid16 = build_env("gridworld-16-onehot", 0);
  static const BuiltEnv grid64 = build_env("gridworld-64-xy", 0);
  static const BuiltEnv pend = build_env("pendulum-32", 0);
  if (states <= 16) return grid16;
  if (states <= 64) return grid64;
  return pend;
}

}  // namespace

static void BellmanBackup(benchmark::State& state) {
  const BuiltEnv& env = env_of(static_cast<int>(state.range()));
  Matrix q = Matrix::Zero(env.mdp.num_states(), env.mdp.num_actions());
  for (auto _ : state) {
    q = bellman_backup(env.mdp, q);
    benchmark::DoNotOptimize(q);
  }
  state.SetComplexityN(env.mdp.num_states());
}
BENCHMARK(BellmanBackup)->Arg(16)->Arg(64)->Arg(1024)->Complexity();

static void OccupancySolve(benchmark::State& state) {
  const BuiltEnv& env = env_of(static_cast<int>(state.range()));
  const ExpertBaseline base = compute_expert_baseline(env.mdp);
  const Policy pi = greedy_policy(base.q_star, 0.1);
  for (auto _ : state) {
    StateActionDist d = occupancy(env.mdp, pi);
    benchmark::DoNotOptimize(d);
  }
  state.SetComplexityN(env.mdp.num_states());
}
BENCHMARK(OccupancySolve)->Arg(16)->Arg(64)->Arg(1024)->Complexity();

static void MlpFitStep(benchmark::State& state) {
  const int hidden = static_cast<int>(state.range());
  const BuiltEnv& env = env_of(64);
  Rng rng(1);
  QNetwork net = QNetwork::make_mlp(ArchSpec::mlp(hidden, hidden),
                                    static_cast<int>(env.observations.cols()),
                                    env.mdp.num_actions(), rng);
  const QTable targets = bellman_backup(env.mdp, net.forward(env.observations));
  StateActionDist mu{Matrix::Constant(env.mdp.num_states(), env.mdp.num_actions(), 1.0 / (env.mdp.num_states() * env.mdp.num_actions()))};
  FitConfig fit;
  fit.max_steps = 1;
  fit.snapshot_interval = 0;
  for (auto _ : state) {
    FitResult r = fit_weighted_projection(std::move(net), env.observations, targets, mu, fit);
    net = std::move(r.net);
    benchmark::DoNotOptimize(net);
  }
}
BENCHMARK(MlpFitStep)->Arg(16)->Arg(64)->Arg(256);

static void AfmReplayInner(benchmark::State& state) {
  const int n = static_cast<int>(state.range());
  const BuiltEnv& env = env_of(64);
  Rng rng(2);
  const ArchSpec arch = ArchSpec::mlp(64, 64);
  QNetwork net = QNetwork::make_mlp(arch, static_cast<int>(env.observations.cols()),
                                    env.mdp.num_actions(), rng);
  AfmConfig cfg;
  Rng arng(3);
  AdversaryState adv = AdversaryState::replay(arch, static_cast<int>(env.observations.cols()),
                                              env.mdp.num_actions(), cfg, arng);
  std::vector<int> states, actions;
  Rng brng(4);
  for (int i = 0; i < n; ++i) {
    states.push_back(brng.index(env.mdp.num_states()));
    actions.push_back(brng.index(env.mdp.num_actions()));
  }
  Vector targets(n);
  for (int i = 0; i < n; ++i) targets[i] = brng.normal();
  for (auto _ : state) {
    AfmBatchWeights w = afm_replay_weights(adv, net, env.observations, states, actions, targets);
    benchmark::DoNotOptimize(w);
  }
}
BENCHMARK(AfmReplayInner)->Arg(32)->Arg(128);

static void ExactFqiIteration(benchmark::State& state) {
  const BuiltEnv& env = env_of(static_cast<int>(state.range()));
  FqiConfig cfg;
  cfg.iterations = 1;
  cfg.arch = ArchSpec::mlp(64, 64);
  cfg.fit.max_steps = 60;
  cfg.fit.step_size = 5e-3;
  for (auto _ : state) {
    IterationTrace trace = exact_fqi(env.mdp, env.observations, cfg);
    benchmark::DoNotOptimize(trace);
  }
}
BENCHMARK(ExactFqiIteration)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
