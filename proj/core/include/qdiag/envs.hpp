#pragma once

// Benchmark MDP constructors. Every env is a validated TabularMdp plus an
// S x D observation matrix (row s = feature vector of state s). Builders are
// deterministic functions of their arguments; randomized layouts draw from
// the env seed only.

#include <cstdint>
#include <string>
#include <vector>

#include "qdiag/mdp.hpp"

namespace qdiag {

using ObservationMatrix = Matrix;  // S x D

struct EnvSpec {
  std::string family;    // gridworld | cliffwalk | pendulum | mountaincar | sparsegraph
  int size = 0;          // grid side / chain length / bins per axis / state count
  std::string obs_kind;  // gridworld only: onehot | xy | random
  std::uint64_t seed = 0;

  std::string canonical_name() const;  // e.g. "gridworld-16-onehot"
};

struct BuiltEnv {
  EnvSpec spec;
  TabularMdp mdp;
  ObservationMatrix observations;
};

// Name grammar: gridworld-<N>-<onehot|xy|random>, cliffwalk-<L>,
// pendulum-<B>, mountaincar-<B>, sparsegraph-<S>. Unknown names raise
// std::invalid_argument with a nearest-name suggestion.
EnvSpec parse_env_name(const std::string& name);

BuiltEnv build_env(const EnvSpec& spec);
// Parses `name` and derives the env seed as derive_seed(suite_seed, name).
BuiltEnv build_env(const std::string& name, std::uint64_t suite_seed);

std::vector<std::string> default_suite_names();
std::vector<BuiltEnv> default_suite(std::uint64_t seed);

// N x N gridworld: 4 move actions, intended direction with prob 1 - slip,
// the remaining slip mass split across the other three directions; walls on
// a `wall_frac` fraction of interior cells; blocked moves stay in place.
// Reward r(s) = clip(1 - manhattan(s, goal) / manhattan(start, goal), 0, 1).
// Start/goal are drawn from the free cells and redrawn (up to 100 layouts)
// until the goal is reachable. obs_kind: "onehot" (D=N^2), "xy" (D=2N, ones
// at row and N+col), "random" (D=N, i.i.d. standard normal per state).
BuiltEnv make_gridworld(int n, const std::string& obs_kind, std::uint64_t seed,
                        double wall_frac = 0.2, double slip = 0.05);

// Length-L chain. Action 0 advances (L-1 self-loops), action 1 returns to
// state 0. The only reward is R[L-1, advance] = 1, so
// eta(pi*) = gamma^(L-1) / (1 - gamma). Observations: D=16 i.i.d. normals.
BuiltEnv make_cliffwalk(int length, std::uint64_t seed);

// Pendulum swing-up on a B x B grid over (theta in [-pi, pi) wrapped,
// thetadot in [-8, 8]); 5 torque actions {-2..2}; one forward-Euler step per
// transition, successor snapped to the nearest cell. Reward
// r = (1 + cos theta) / 2 (maximal upright). Observations (sin, cos, thetadot).
BuiltEnv make_pendulum(int bins, std::uint64_t seed);

// Mountain car on a B x B grid over (pos in [-1.2, 0.6], vel in [-.07, .07]);
// 3 actions; kSubsteps raw updates per transition (one raw step moves less
// than half a cell, which would freeze the car under nearest-cell snapping).
// Cells with center pos >= 0.5 are absorbing with reward 1; all else 0.
// Observations (pos, vel).
BuiltEnv make_mountaincar(int bins, std::uint64_t seed);

// Random directed graph: S states, 2 actions, each (s, a) jumps to one
// uniformly drawn target. A seeded goal state is absorbing with reward 1;
// layouts are redrawn (up to 100) until the goal is reachable from the
// start. Observations: identity.
BuiltEnv make_sparsegraph(int states, std::uint64_t seed);

}  // namespace qdiag
