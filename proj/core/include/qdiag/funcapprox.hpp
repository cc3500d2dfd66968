#pragma once

// Q-function approximators: a tabular table and a 2-hidden-layer ReLU MLP
// with hand-rolled backprop and Adam. Parameters of either kind are exposed
// as a flat list of tensors so the optimizer, serializer and adversary
// treat both uniformly.

#include <iosfwd>
#include <string>
#include <vector>

#include "qdiag/mdp.hpp"
#include "qdiag/rng.hpp"

namespace qdiag {

struct ArchSpec {
  enum class Kind { tabular, mlp };
  Kind kind = Kind::tabular;
  int hidden1 = 0;
  int hidden2 = 0;

  static ArchSpec tabular() { return {}; }
  static ArchSpec mlp(int h1, int h2);
  // "tabular" or "<h1>x<h2>", e.g. "64x64".
  static ArchSpec parse(const std::string& text);
  std::string name() const;
  bool operator==(const ArchSpec&) const = default;
};

// Weights of the MLP head: Y = relu(relu(X W1 + b1) W2 + b2) W3 + b3.
// Biases are stored as 1-row matrices so all six tensors share one type.
struct MlpParams {
  Matrix w1, b1, w2, b2, w3, b3;
};

class QNetwork {
 public:
  // Default state is an empty (0 x 0) tabular net; only useful as a slot to
  // assign into.
  QNetwork() = default;

  static QNetwork make_tabular(int num_states, int num_actions);
  // Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)) drawn from `rng` in storage
  // (column-major) order, tensors in order w1, w2, w3; biases zero.
  static QNetwork make_mlp(const ArchSpec& arch, int input_dim, int num_actions, Rng& rng);

  const ArchSpec& arch() const { return arch_; }
  bool is_tabular() const { return arch_.kind == ArchSpec::Kind::tabular; }
  int num_actions() const { return num_actions_; }
  int input_dim() const { return input_dim_; }  // 0 for tabular

  // Q-values for every state. For the tabular net, obs only fixes S (its
  // row count must match the table); for the MLP it is the actual input.
  QTable forward(const Matrix& obs) const;
  // Last hidden layer (post-ReLU), S x hidden2. logic_error on tabular nets.
  Matrix features(const Matrix& obs) const;
  // Q(s_i, a_i) for a batch of pairs.
  Vector forward_pairs(const Matrix& obs, const std::vector<int>& states,
                       const std::vector<int>& actions) const;

  Matrix& table();
  const Matrix& table() const;
  MlpParams& params();
  const MlpParams& params() const;

  // Flat tensor list: {table} or {w1, b1, w2, b2, w3, b3}.
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;

  // QNET1 container (see README): magic, kind, dims, float64 tensors in
  // tensor-list order, column-major, little-endian.
  void save(std::ostream& out) const;
  void save(const std::string& path) const;
  static QNetwork load(std::istream& in);
  static QNetwork load(const std::string& path);

 private:
  ArchSpec arch_;
  int input_dim_ = 0;
  int num_actions_ = 0;
  Matrix table_;  // tabular only
  MlpParams mlp_;
};

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows);

struct Grads {
  std::vector<Matrix> tensors;
  static Grads zeros_like(const QNetwork& net);
};

struct LossGrad {
  double loss = 0.0;
  Grads grads;
};

// Backprop with caller-supplied output gradients: d(loss)/d(Q(s, a)) =
// out_grad(s, a) over all states (loss field left 0).
Grads grad_from_output_grads(const QNetwork& net, const Matrix& obs, const Matrix& out_grad);
// Batch version: d(loss)/d(Q(states[i], actions[i])) = out_grad[i].
Grads grad_from_output_grads_batch(const QNetwork& net, const Matrix& obs,
                                   const std::vector<int>& states,
                                   const std::vector<int>& actions, const Vector& out_grad);

// Full weighted projection objective: loss = sum_{s,a} mu(s,a) (Q - y)^2.
LossGrad loss_and_grad(const QNetwork& net, const Matrix& obs, const QTable& targets,
                       const StateActionDist& mu);

// Per-sample objective: loss = (1/N) sum_i w_i (Q(s_i, a_i) - y_i)^2.
// Empty weights mean all-ones.
struct Batch {
  std::vector<int> states;
  std::vector<int> actions;
  Vector targets;
  Vector weights;  // optional; empty = uniform
};
LossGrad loss_and_grad_batch(const QNetwork& net, const Matrix& obs, const Batch& batch);

struct FitConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_steps = 200;
  // 0 = full batch; otherwise each step fits a minibatch of pairs sampled
  // from mu (needs an rng).
  int minibatch = 0;
  // Stop when loss has improved by less than stop_tol (relative) over the
  // trailing 10 steps; 0 disables and all max_steps run.
  double stop_tol = 0.0;
  int snapshot_interval = 50;
};

class AdamState {
 public:
  explicit AdamState(const QNetwork& net);
  void step(QNetwork& net, const Grads& grads, const FitConfig& cfg);
  long steps_taken() const { return t_; }

 private:
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

struct FitResult {
  QNetwork net;
  // Parameter snapshots every cfg.snapshot_interval optimizer steps, plus
  // the final state (for the tabular direct solve: just the result).
  std::vector<QNetwork> snapshots;
  int steps = 0;
  double final_loss = 0.0;
};

// Fit net toward `targets` under distribution mu (Eq. (1) projection).
// Tabular: direct assignment on the support of mu (entries with zero mass
// keep their warm-start value). MLP: Adam descent, warm-started from the
// incoming parameters. Non-finite targets or loss raise DivergenceError
// with the offending step index.
FitResult fit_weighted_projection(QNetwork net, const Matrix& obs, const QTable& targets,
                                  const StateActionDist& mu, const FitConfig& cfg,
                                  Rng* rng = nullptr);

}  // namespace qdiag
