#pragma once

// Adversarial Feature Matching. The adversary maximizes the weighted
// Bellman error subject to a per-dimension feature-matching constraint
// |E_p[Phi] - Phi_ref| <= epsilon, enforced with a dual vector lambda
// updated by projected ascent. Phi is the Q-network's last hidden layer,
// standardized per outer iteration, so Phi_ref is exactly zero.
//
// Two modes:
//   exact_logits    p = softmax over an S x A logit table (Exact-FQI)
//   replay_network  a Q-network-shaped score net f; batch weights
//                   w_i = exp f(s_i, a_i), self-normalized, with a Renyi-2
//                   concentration penalty and parameters clipped to a box.

#include <optional>
#include <vector>

#include "qdiag/funcapprox.hpp"
#include "qdiag/mdp.hpp"

namespace qdiag {

enum class AfmMode { exact_logits, replay_network };

struct AfmConfig {
  double epsilon = 0.05;      // per-dimension feature budget
  double renyi_coeff = 0.1;   // weight of the concentration penalty
  double renyi_c = 1.0;       // C in coeff * C * sqrt((1-delta) d2 / (N delta))
  double delta_conf = 0.1;    // delta in the penalty
  int inner_steps = 10;       // K adversary steps per outer Q step (clamped to [1, 10])
  double replay_step = 1e-4;  // score-net ascent step
  double exact_step = 1e-4;   // logit-table ascent step
  double dual_step = 0.5;     // lambda ascent step
  double param_clip = 0.1;    // replay-mode parameter box half-width
};

class AdversaryState {
 public:
  static AdversaryState exact(int num_states, int num_actions, const AfmConfig& cfg);
  static AdversaryState replay(const ArchSpec& arch, int input_dim, int num_actions,
                               const AfmConfig& cfg, Rng& rng);

  AfmMode mode() const { return mode_; }
  const AfmConfig& config() const { return cfg_; }

  Matrix logits;                      // exact mode
  std::optional<QNetwork> score_net;  // replay mode
  Vector lambda;                      // dual variables, sized on first use
  int reset_events = 0;               // non-finite blow-ups handled by reset

 private:
  AfmMode mode_ = AfmMode::exact_logits;
  AfmConfig cfg_;
};

// (m - column mean) / (column std + 1e-8), population std.
Matrix standardize_columns(const Matrix& m);

// One adversary ascent step on the logits, then one dual ascent step on
// lambda (with post-step residuals). delta^2 comes from (q(obs) - targets)^2.
// A non-finite update resets the logits to uniform and bumps reset_events.
void afm_exact_inner_step(AdversaryState& adv, const QNetwork& q, const QTable& targets,
                          const Matrix& obs);

StateActionDist afm_exact_distribution(const AdversaryState& adv);

struct AfmBatchWeights {
  Vector w_tilde;   // self-normalized batch weights, sum 1
  double renyi_d2;  // N * sum w_tilde^2 (exp Renyi-2 divergence estimate)
  Vector residual;  // per-dimension feature residual under the final weights
};

// Runs K inner ascent steps of the score net on this batch (with parameter
// clipping and dual updates) and returns the resulting weights.
AfmBatchWeights afm_replay_weights(AdversaryState& adv, const QNetwork& q, const Matrix& obs,
                                   const std::vector<int>& states,
                                   const std::vector<int>& actions, const Vector& targets);

enum class AfmApplyMode { weighting, sampling };

struct AfmApplied {
  std::vector<int> indices;  // positions into the batch
  Vector loss_weights;       // per-kept-sample loss weights; empty = uniform
};

// weighting: keep the batch, weight sample i by N * w_tilde_i (mean 1).
// sampling: resample N positions from w_tilde (needs rng), unit weights.
AfmApplied afm_apply(AfmApplyMode mode, const AfmBatchWeights& weights, Rng* rng);

}  // namespace qdiag
