#pragma once

// Tabular MDP core: validated model type plus the exact planning/evaluation
// operations every other module builds on.  Everything here is deterministic
// and allocation-honest: no hidden caches, no global state.

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <stdexcept>
#include <string>
#include <vector>

#include "qdiag/rng.hpp"

namespace qdiag {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
// Transition table, row-major, row index s * A + a, column s'.
using TransitionMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// S x A table of action values. Plain matrix: no normalization invariant,
// but operations reject non-finite entries (that is the divergence signal).
using QTable = Matrix;

// Raised when a Q-table or a fit goes non-finite. `step` is the gradient
// step or iteration index at which the blow-up was observed (-1 if n/a).
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what, long step = -1)
      : std::runtime_error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// Per-state action distribution; rows sum to 1.
struct Policy {
  Matrix probs;  // S x A
};

// Joint distribution over state-action pairs; all entries sum to 1.
struct StateActionDist {
  Matrix probs;  // S x A
};

bool all_finite(const Matrix& m);
// Throw std::invalid_argument unless rows sum to 1 within 1e-9 and entries
// are non-negative.
void check_policy(const Policy& pi, int num_states, int num_actions);
// Same but for a joint distribution (total mass 1 within 1e-9).
void check_dist(const StateActionDist& mu, int num_states, int num_actions);

class TabularMdp {
 public:
  // transitions: (S*A) x S, row s*A+a. rewards: S x A. initial: length S.
  // Validates: transition rows are distributions (sum 1 within 1e-9,
  // entries >= 0), rewards finite, discount in (0, 1), initial sums to 1.
  TabularMdp(int num_states, int num_actions, TransitionMatrix transitions,
             Matrix rewards, double discount, Vector initial);

  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  double discount() const { return discount_; }
  const Matrix& rewards() const { return rewards_; }
  const Vector& initial() const { return initial_; }
  const TransitionMatrix& transitions() const { return transitions_; }

  int row_index(int s, int a) const { return s * num_actions_ + a; }
  double transition_prob(int s, int a, int next) const;

  int sample_initial(Rng& rng) const;
  int sample_next(int s, int a, Rng& rng) const;

 private:
  int num_states_;
  int num_actions_;
  TransitionMatrix transitions_;
  Matrix rewards_;
  double discount_;
  Vector initial_;
};

// Convenience assembler used by env builders and tests.
class MdpBuilder {
 public:
  MdpBuilder(int num_states, int num_actions);
  MdpBuilder& transition(int s, int a, int next, double prob);
  MdpBuilder& reward(int s, int a, double r);
  MdpBuilder& discount(double gamma);
  MdpBuilder& initial(int s, double prob);
  TabularMdp build() const;

 private:
  int num_states_;
  int num_actions_;
  std::vector<Eigen::Triplet<double>> triplets_;
  Matrix rewards_;
  double discount_ = 0.95;
  Vector initial_;
};

// T q = R + gamma * E_{s'}[max_a' q(s', a')].
// Throws DivergenceError if q has non-finite entries.
QTable bellman_backup(const TabularMdp& mdp, const QTable& q);

// (1 - alpha) q + alpha T q; contraction modulus 1 - alpha + alpha*gamma.
// alpha outside (0, 1] is a configuration error (std::invalid_argument).
QTable alpha_smoothed_backup(const TabularMdp& mdp, const QTable& q, double alpha);

struct SolveResult {
  QTable q;         // Q*
  int iterations;   // value-iteration sweeps performed
  double residual;  // final sup-norm change
};

// Value iteration from Q = 0 until the sup-norm change is <= tol.
SolveResult solve_optimal(const TabularMdp& mdp, double tol = 1e-10);

// eps-greedy policy: argmax row gets 1 - eps + eps/A, the rest eps/A each.
// Ties break toward the lowest action index. eps = 0 gives the pure greedy
// policy. eps outside [0, 1] is a configuration error.
Policy greedy_policy(const QTable& q, double eps = 0.0);

// V^pi via a direct linear solve of (I - gamma P_pi) V = R_pi.
// Dense LU below kDenseSolveMax states, sparse LU above.
inline constexpr int kDenseSolveMax = 1500;
Vector policy_values(const TabularMdp& mdp, const Policy& pi);

// eta(pi) = E_{s ~ rho0}[V^pi(s)].
double policy_returns(const TabularMdp& mdp, const Policy& pi);

// Discounted state-action occupancy
//   d(s, a) = (1 - gamma) * sum_t gamma^t Pr(s_t = s) * pi(a | s),
// computed by the transposed linear solve and renormalized to total mass 1.
StateActionDist occupancy(const TabularMdp& mdp, const Policy& pi);

// Inverse-CDF sampler over the support of a StateActionDist.
class DistSampler {
 public:
  explicit DistSampler(const StateActionDist& mu);
  std::pair<int, int> draw(Rng& rng) const;  // (s, a)

 private:
  int num_actions_;
  std::vector<int> support_;  // flat indices s * A + a with positive mass
  std::vector<double> cdf_;   // cumulative mass over support_
};

// Q*, eta(pi*) and related constants bundled so callers solve once.
struct ExpertBaseline {
  QTable q_star;
  double expert_return;  // eta(pi*)
  double q_star_linf;    // max |Q*|
  int vi_iterations;
};
ExpertBaseline compute_expert_baseline(const TabularMdp& mdp, double tol = 1e-10);

// value / eta(pi*). Throws std::domain_error when eta(pi*) is (numerically)
// zero; normalized metrics are undefined for such an MDP.
double normalize_by_expert(double value, const ExpertBaseline& baseline);
double normalize_by_expert(double value, const TabularMdp& mdp);

}  // namespace qdiag
