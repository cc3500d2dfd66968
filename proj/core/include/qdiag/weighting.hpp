#pragma once

// Weighting distributions mu for the projection step, plus the
// distribution-shift diagnostics (entropy, total variation, loss shift).

#include <string>
#include <vector>

#include "qdiag/mdp.hpp"

namespace qdiag {

enum class WeightingKind { unif, pi, pistar, random, prioritized, replay, replay10, afm };

WeightingKind parse_weighting(const std::string& name);
std::string weighting_name(WeightingKind kind);

// On-policy occupancies of FQI iterations, oldest first, *including* the
// current iteration: the driver pushes occupancy(eps-greedy(Q_t)) before
// asking for a replay distribution.
class DistHistory {
 public:
  void push(StateActionDist d) { entries_.push_back(std::move(d)); }
  std::size_t size() const { return entries_.size(); }
  const StateActionDist& operator[](std::size_t i) const { return entries_[i]; }
  // Mean of the most recent `take` entries (all of them if fewer).
  StateActionDist mean_last(std::size_t take) const;

 private:
  std::vector<StateActionDist> entries_;
};

struct WeightingContext {
  const TabularMdp* mdp = nullptr;
  const QTable* q = nullptr;                  // current (pre-fit) Q estimate
  const QTable* q_star = nullptr;             // pistar only
  const DistHistory* history = nullptr;       // replay kinds
  const StateActionDist* afm_dist = nullptr;  // precomputed adversary distribution
  double epsilon = 0.1;                       // eps-greedy mixing for occupancies
};

// unif        uniform over S x A
// pi          occupancy of eps-greedy(Q)
// pistar      occupancy of eps-greedy(Q*)
// random      occupancy of the uniformly random policy
// prioritized proportional to |Q - TQ| (uniform fallback when the Bellman
//             error is exactly zero everywhere)
// replay      mean of every entry in ctx.history (current iteration included)
// replay10    mean of the 10 most recent history entries
// afm         the adversary's distribution, passed in via ctx.afm_dist
// Missing context pieces raise std::invalid_argument.
StateActionDist make_distribution(WeightingKind kind, const WeightingContext& ctx);

double entropy(const StateActionDist& mu);             // nats
double normalized_entropy(const StateActionDist& mu);  // entropy / log(S*A)
double tv_distance(const StateActionDist& a, const StateActionDist& b);
// E_mu_new[(q - tq)^2] - E_mu_old[(q - tq)^2]: how much the projection loss
// under the new weights differs purely because the weights moved.
double loss_shift(const QTable& q, const QTable& tq, const StateActionDist& mu_new,
                  const StateActionDist& mu_old);

}  // namespace qdiag
