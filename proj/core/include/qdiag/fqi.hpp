#pragma once

// Fitted Q-iteration drivers. Three sampling regimes share one trace
// format; metric evaluation always uses exact oracles (true occupancies,
// true returns, true Q*) regardless of how the fit itself was sampled.
//
// Per-iteration trace semantics (row t):
//   mu_t           weighting distribution computed from the pre-fit Q_t
//   tv_shift       TV(mu_t, mu_{t-1}), 0 at t = 0
//   loss_shift     loss_shift(Q_t, T Q_t, mu_t, mu_{t-1}), 0 at t = 0
//   entropy_norm   normalized entropy of mu_t
//   -- fit happens here: Q_t -> Q_{t+1} toward y_t = T^alpha Q_t --
//   bellman_loss   E_{mu_t}[(Q_{t+1} - y_t)^2] with exact targets
//   return_norm    eta(greedy(Q_{t+1})) / eta(pi*)
//   linf_norm      ||Q_{t+1} - Q*||_inf / eta(pi*)
//   diverged       max |Q_{t+1}| > 10 max |Q*| (flag only, run continues)
// A non-finite Q or loss halts the run with the partial trace
// (halted_early = true).

#include <cstdint>
#include <string>
#include <vector>

#include "qdiag/afm.hpp"
#include "qdiag/funcapprox.hpp"
#include "qdiag/mdp.hpp"
#include "qdiag/weighting.hpp"

namespace qdiag {

enum class Algorithm { exact, sampled, replay };
Algorithm parse_algorithm(const std::string& name);
std::string algorithm_name(Algorithm algo);

enum class EarlyStop { none, oracle_bellman, oracle_return };
EarlyStop parse_early_stop(const std::string& name);
std::string early_stop_name(EarlyStop mode);

// Replay-FQI weighting overlays. none = plain uniform replay; the
// distribution kinds reweight uniform draws by importance ratios toward the
// named analytic distribution; per = prioritized experience replay on TD
// error; afm / afm_sampling = the replay-mode adversary (loss weights /
// batch resampling).
enum class ReplayOverlay { none, unif, pi, pistar, prioritized, per, afm, afm_sampling };
ReplayOverlay parse_overlay(const std::string& name);
std::string overlay_name(ReplayOverlay overlay);

struct FqiConfig {
  int iterations = 30;
  ArchSpec arch;
  WeightingKind weighting = WeightingKind::unif;  // exact / sampled drivers
  ReplayOverlay overlay = ReplayOverlay::none;    // replay driver
  FitConfig fit;
  double alpha = 1.0;             // smoothed backup T^alpha
  double exploration_eps = 0.1;   // eps-greedy for occupancies and collection
  int samples_per_iter = 128;     // M: target samples per iteration (sampled)
  int online_samples_per_iter = 32;  // K: env steps per iteration (replay)
  int buffer_capacity = 10000;
  double grad_steps_per_sample = 4.0;  // replay: grad steps = round(ratio * K)
  EarlyStop early_stop = EarlyStop::none;
  bool store_q_snapshots = false;  // keep Q_0..Q_N in the trace (retrace input)
  std::uint64_t seed = 0;
  AfmConfig afm;
};

struct IterationRow {
  int iter = 0;
  double return_norm = 0.0;
  double linf_norm = 0.0;
  double bellman_loss = 0.0;
  double tv_shift = 0.0;
  double loss_shift = 0.0;
  double entropy_norm = 0.0;
  bool diverged = false;
};

struct IterationTrace {
  std::vector<IterationRow> rows;
  std::vector<StateActionDist> mu;  // mu_t per iteration
  std::vector<QTable> q_snapshots;  // Q_0..Q_N when store_q_snapshots
  bool diverged = false;            // any row flagged, or a hard blow-up
  bool halted_early = false;        // hard blow-up cut the run short
  double expert_return = 0.0;
  double q_star_linf = 0.0;
  QNetwork final_net;
};

IterationTrace exact_fqi(const TabularMdp& mdp, const Matrix& obs, const FqiConfig& cfg);
IterationTrace sampled_fqi(const TabularMdp& mdp, const Matrix& obs, const FqiConfig& cfg);
IterationTrace replay_fqi(const TabularMdp& mdp, const Matrix& obs, const FqiConfig& cfg);
IterationTrace run_fqi(Algorithm algo, const TabularMdp& mdp, const Matrix& obs,
                       const FqiConfig& cfg);

struct Transition {
  int s = 0;
  int a = 0;
  int next = 0;
  double r = 0.0;
};

// Ring buffer with per-item priorities (new items start at the current max
// so they are sampled at least once under prioritized draws).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity);
  void push(const Transition& t);
  std::size_t size() const { return items_.size(); }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  void set_priority(std::size_t i, double p);

  std::vector<int> sample_uniform(int n, Rng& rng) const;
  std::vector<int> sample_prioritized(int n, Rng& rng) const;

  // Empirical state-action distribution of the buffer contents.
  StateActionDist empirical(int num_states, int num_actions) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> items_;
  std::vector<double> priorities_;
};

// Pick the snapshot an oracle would: minimal exact uniform Bellman error, or
// maximal exact greedy returns. Ties go to the earliest snapshot. `chosen`
// (optional) receives the winning index.
QNetwork oracle_early_stop(const std::vector<QNetwork>& snapshots, const TabularMdp& mdp,
                           const Matrix& obs, EarlyStop mode, int* chosen = nullptr);

// Re-fit of a reference run's targets at reduced sample budgets; see
// acceptance docs. For budget b and reference iteration t, targets are the
// exact y_t = T^alpha Q^ref_{t-1}; fits sample b pairs from the reference
// on-policy distribution d_t (from_buffer = false) or from the running mean
// of d_1..d_t (from_buffer = true); validation_loss[t-1] is the exact
// E_{d_t}[(fit - y_t)^2]. budget <= 0 denotes the exact-projection row.
// The reference trace must carry q_snapshots.
struct RetraceRow {
  int budget = 0;
  bool from_buffer = false;
  std::vector<double> validation_loss;
};
struct RetraceOptions {
  FitConfig fit;
  double epsilon = 0.1;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  bool buffer_rows = true;
};
std::vector<RetraceRow> retrace_validation(const TabularMdp& mdp, const Matrix& obs,
                                           const IterationTrace& reference,
                                           const std::vector<int>& budgets,
                                           const RetraceOptions& opt);

// The linear counterexample: w_{t+1} = 2 gamma w_t, w_0 = 1 (exact
// projection of the Bellman target under a two-point feature). Diverges iff
// gamma > 1/2. Returns {w_0, ..., w_steps}.
std::vector<double> counterexample_divergence_demo(double gamma, int steps);

}  // namespace qdiag
