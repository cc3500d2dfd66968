#include "qdiag/fqi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace qdiag {

// --- name parsing ------------------------------------------------------------

Algorithm parse_algorithm(const std::string& name) {
  if (name == "exact") return Algorithm::exact;
  if (name == "sampled") return Algorithm::sampled;
  if (name == "replay") return Algorithm::replay;
  throw std::invalid_argument("unknown algorithm '" + name + "' (expected exact|sampled|replay)");
}

std::string algorithm_name(Algorithm algo) {
  switch (algo) {
    case Algorithm::exact: return "exact";
    case Algorithm::sampled: return "sampled";
    case Algorithm::replay: return "replay";
  }
  throw std::logic_error("algorithm_name: bad enum");
}

EarlyStop parse_early_stop(const std::string& name) {
  if (name == "none") return EarlyStop::none;
  if (name == "oracle_bellman") return EarlyStop::oracle_bellman;
  if (name == "oracle_return") return EarlyStop::oracle_return;
  throw std::invalid_argument("unknown early_stop '" + name +
                              "' (expected none|oracle_bellman|oracle_return)");
}

std::string early_stop_name(EarlyStop mode) {
  switch (mode) {
    case EarlyStop::none: return "none";
    case EarlyStop::oracle_bellman: return "oracle_bellman";
    case EarlyStop::oracle_return: return "oracle_return";
  }
  throw std::logic_error("early_stop_name: bad enum");
}

ReplayOverlay parse_overlay(const std::string& name) {
  if (name == "none") return ReplayOverlay::none;
  if (name == "unif") return ReplayOverlay::unif;
  if (name == "pi") return ReplayOverlay::pi;
  if (name == "pistar") return ReplayOverlay::pistar;
  if (name == "prioritized") return ReplayOverlay::prioritized;
  if (name == "per") return ReplayOverlay::per;
  if (name == "afm") return ReplayOverlay::afm;
  if (name == "afm_sampling") return ReplayOverlay::afm_sampling;
  throw std::invalid_argument(
      "unknown replay overlay '" + name +
      "' (expected none|unif|pi|pistar|prioritized|per|afm|afm_sampling)");
}

std::string overlay_name(ReplayOverlay overlay) {
  switch (overlay) {
    case ReplayOverlay::none: return "none";
    case ReplayOverlay::unif: return "unif";
    case ReplayOverlay::pi: return "pi";
    case ReplayOverlay::pistar: return "pistar";
    case ReplayOverlay::prioritized: return "prioritized";
    case ReplayOverlay::per: return "per";
    case ReplayOverlay::afm: return "afm";
    case ReplayOverlay::afm_sampling: return "afm_sampling";
  }
  throw std::logic_error("overlay_name: bad enum");
}

// --- replay buffer ---------------------------------------------------------

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(static_cast<std::size_t>(capacity)) {
  if (capacity < 1) throw std::invalid_argument("replay buffer: capacity must be >= 1");
}

void ReplayBuffer::push(const Transition& t) {
  double p = 1.0;
  if (!priorities_.empty()) p = *std::max_element(priorities_.begin(), priorities_.end());
  if (items_.size() < capacity_) {
    items_.push_back(t);
    priorities_.push_back(p);
  } else {
    items_[head_] = t;
    priorities_[head_] = p;
    head_ = (head_ + 1) % capacity_;
  }
}

void ReplayBuffer::set_priority(std::size_t i, double p) {
  priorities_.at(i) = std::max(p, 1e-6);
}

std::vector<int> ReplayBuffer::sample_uniform(int n, Rng& rng) const {
  if (items_.empty()) throw std::logic_error("replay buffer: empty");
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& i : out) i = rng.index(static_cast<int>(items_.size()));
  return out;
}

std::vector<int> ReplayBuffer::sample_prioritized(int n, Rng& rng) const {
  if (items_.empty()) throw std::logic_error("replay buffer: empty");
  std::vector<double> cdf(priorities_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < priorities_.size(); ++i) {
    acc += priorities_[i];
    cdf[i] = acc;
  }
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& i : out) {
    const double u = rng.uniform() * acc;
    i = static_cast<int>(std::min<std::ptrdiff_t>(
        std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(),
        static_cast<std::ptrdiff_t>(cdf.size() - 1)));
  }
  return out;
}

StateActionDist ReplayBuffer::empirical(int num_states, int num_actions) const {
  if (items_.empty()) throw std::logic_error("replay buffer: empty");
  Matrix counts = Matrix::Zero(num_states, num_actions);
  for (const Transition& t : items_) counts(t.s, t.a) += 1.0;
  return {counts / static_cast<double>(items_.size())};
}

// --- shared driver pieces -----------------------------------------------------

namespace {

// Exact policy returns keyed on the greedy action profile so the linear
// solve only reruns when the argmax policy actually changes.
class ReturnCache {
 public:
  ReturnCache(const TabularMdp& mdp) : mdp_(mdp) {}

  double returns_of(const QTable& q) {
    std::vector<int> key(static_cast<std::size_t>(q.rows()));
    for (int s = 0; s < q.rows(); ++s) {
      Eigen::Index best;
      q.row(s).maxCoeff(&best);
      key[static_cast<std::size_t>(s)] = static_cast<int>(best);
    }
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const double value = policy_returns(mdp_, greedy_policy(q, 0.0));
    cache_.emplace(std::move(key), value);
    return value;
  }

 private:
  const TabularMdp& mdp_;
  std::map<std::vector<int>, double> cache_;
};

struct DriverState {
  const TabularMdp& mdp;
  const Matrix& obs;
  const FqiConfig& cfg;
  ExpertBaseline base;
  ReturnCache returns;
  IterationTrace trace;

  DriverState(const TabularMdp& m, const Matrix& o, const FqiConfig& c)
      : mdp(m), obs(o), cfg(c), base(compute_expert_baseline(m)), returns(m) {
    if (c.iterations < 1) throw std::invalid_argument("fqi: iterations must be >= 1");
    if (!(c.alpha > 0.0 && c.alpha <= 1.0))
      throw std::invalid_argument("fqi: alpha must lie in (0, 1]");
    if (o.rows() != m.num_states()) throw std::invalid_argument("fqi: obs rows != S");
    trace.expert_return = base.expert_return;
    trace.q_star_linf = base.q_star_linf;
    if (std::abs(base.expert_return) < 1e-12)
      throw std::domain_error("fqi: eta(pi*) is zero; normalized metrics undefined");
  }

  QNetwork make_net(Rng& init_rng) const {
    if (cfg.arch.kind == ArchSpec::Kind::tabular)
      return QNetwork::make_tabular(mdp.num_states(), mdp.num_actions());
    return QNetwork::make_mlp(cfg.arch, static_cast<int>(obs.cols()), mdp.num_actions(),
                              init_rng);
  }

  // Shift metrics from mu_t and the pre-fit Q_t; call before fitting.
  void pre_fit_metrics(IterationRow& row, const QTable& q_t, const QTable& tq_plain,
                       const StateActionDist& mu_t) const {
    row.entropy_norm = normalized_entropy(mu_t);
    if (!trace.mu.empty()) {
      const StateActionDist& prev = trace.mu.back();
      row.tv_shift = tv_distance(mu_t, prev);
      row.loss_shift = loss_shift(q_t, tq_plain, mu_t, prev);
    }
  }

  // Returns/error metrics from the post-fit Q_{t+1}; exact oracles.
  void post_fit_metrics(IterationRow& row, const QTable& q_next, const QTable& targets,
                        const StateActionDist& mu_t) {
    row.bellman_loss = (mu_t.probs.array() * (q_next - targets).array().square()).sum();
    row.return_norm = returns.returns_of(q_next) / base.expert_return;
    row.linf_norm = (q_next - base.q_star).cwiseAbs().maxCoeff() / base.expert_return;
    row.diverged = q_next.cwiseAbs().maxCoeff() > 10.0 * base.q_star_linf;
    if (row.diverged) trace.diverged = true;
  }

  void record(IterationRow row, StateActionDist mu_t) {
    trace.rows.push_back(std::move(row));
    trace.mu.push_back(std::move(mu_t));
  }

  // A hard blow-up: keep the partial trace and mark the run.
  void halt(int iter) {
    IterationRow row;
    row.iter = iter;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.return_norm = row.linf_norm = row.bellman_loss = nan;
    row.tv_shift = row.loss_shift = row.entropy_norm = nan;
    row.diverged = true;
    trace.rows.push_back(row);
    trace.diverged = true;
    trace.halted_early = true;
  }
};

void require_mlp_for_afm(const ArchSpec& arch) {
  if (arch.kind != ArchSpec::Kind::mlp)
    throw std::invalid_argument("afm requires an mlp architecture (features of a tabular "
                                "network are undefined)");
}

int snapshot_count_guard(const std::vector<QNetwork>& snaps) {
  if (snaps.empty()) throw std::logic_error("fit returned no snapshots");
  return static_cast<int>(snaps.size());
}

// Minibatch Adam over a fixed sample set (sampled-FQI inner loop), with
// parameter snapshots and optional oracle selection.
QNetwork fit_on_samples(DriverState& st, QNetwork net, const Batch& data, Rng& rng) {
  const FitConfig& fit = st.cfg.fit;
  const int total = static_cast<int>(data.states.size());
  const int mb = fit.minibatch > 0 ? std::min(fit.minibatch, total) : total;
  AdamState adam(net);
  std::vector<QNetwork> snapshots;
  for (int step = 0; step < fit.max_steps; ++step) {
    LossGrad lg;
    if (mb == total) {
      lg = loss_and_grad_batch(net, st.obs, data);
    } else {
      Batch batch;
      batch.states.resize(static_cast<std::size_t>(mb));
      batch.actions.resize(static_cast<std::size_t>(mb));
      batch.targets.resize(mb);
      for (int i = 0; i < mb; ++i) {
        const int j = rng.index(total);
        batch.states[static_cast<std::size_t>(i)] = data.states[static_cast<std::size_t>(j)];
        batch.actions[static_cast<std::size_t>(i)] = data.actions[static_cast<std::size_t>(j)];
        batch.targets[i] = data.targets[j];
      }
      lg = loss_and_grad_batch(net, st.obs, batch);
    }
    if (!std::isfinite(lg.loss)) throw DivergenceError("fit_on_samples: loss diverged", step);
    adam.step(net, lg.grads, fit);
    if (fit.snapshot_interval > 0 && (step + 1) % fit.snapshot_interval == 0)
      snapshots.push_back(net);
  }
  snapshots.push_back(net);
  snapshot_count_guard(snapshots);
  if (st.cfg.early_stop != EarlyStop::none)
    return oracle_early_stop(snapshots, st.mdp, st.obs, st.cfg.early_stop);
  return net;
}

}  // namespace

// --- oracle early stopping -------------------------------------------------------

QNetwork oracle_early_stop(const std::vector<QNetwork>& snapshots, const TabularMdp& mdp,
                           const Matrix& obs, EarlyStop mode, int* chosen) {
  if (snapshots.empty()) throw std::invalid_argument("oracle_early_stop: no snapshots");
  if (mode == EarlyStop::none) {
    if (chosen) *chosen = static_cast<int>(snapshots.size()) - 1;
    return snapshots.back();
  }
  const double unif = 1.0 / (mdp.num_states() * mdp.num_actions());
  int best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    const QTable q = snapshots[i].forward(obs);
    double score;
    if (mode == EarlyStop::oracle_bellman) {
      if (!q.allFinite()) continue;
      score = unif * (q - bellman_backup(mdp, q)).array().square().sum();
    } else {
      if (!q.allFinite()) continue;
      score = -policy_returns(mdp, greedy_policy(q, 0.0));
    }
    if (score < best_score) {  // strict: ties keep the earliest
      best_score = score;
      best = static_cast<int>(i);
    }
  }
  if (chosen) *chosen = best;
  return snapshots[best];
}

// --- exact FQI --------------------------------------------------------------------

IterationTrace exact_fqi(const TabularMdp& mdp, const Matrix& obs, const FqiConfig& cfg) {
  DriverState st(mdp, obs, cfg);
  Rng root(cfg.seed);
  Rng init_rng = root.stream("init");

  QNetwork net = st.make_net(init_rng);
  DistHistory history;
  std::optional<AdversaryState> adversary;
  if (cfg.weighting == WeightingKind::afm) {
    require_mlp_for_afm(cfg.arch);
    adversary = AdversaryState::exact(mdp.num_states(), mdp.num_actions(), cfg.afm);
  }

  FitConfig fit = cfg.fit;
  fit.minibatch = 0;  // exact projection is always full-batch

  if (cfg.store_q_snapshots) st.trace.q_snapshots.push_back(net.forward(obs));

  for (int t = 0; t < cfg.iterations; ++t) {
    IterationRow row;
    row.iter = t;
    try {
      const QTable q_t = net.forward(obs);
      const QTable targets = alpha_smoothed_backup(mdp, q_t, cfg.alpha);
      const QTable tq_plain = cfg.alpha == 1.0 ? targets : bellman_backup(mdp, q_t);

      StateActionDist mu_t{Matrix()};
      if (cfg.weighting == WeightingKind::afm) {
        const int k = std::clamp(cfg.afm.inner_steps, 1, 10);
        for (int i = 0; i < k; ++i) afm_exact_inner_step(*adversary, net, targets, obs);
        mu_t = afm_exact_distribution(*adversary);
      } else {
        if (cfg.weighting == WeightingKind::replay || cfg.weighting == WeightingKind::replay10)
          history.push(occupancy(mdp, greedy_policy(q_t, cfg.exploration_eps)));
        WeightingContext ctx;
        ctx.mdp = &mdp;
        ctx.q = &q_t;
        ctx.q_star = &st.base.q_star;
        ctx.history = &history;
        ctx.epsilon = cfg.exploration_eps;
        mu_t = make_distribution(cfg.weighting, ctx);
      }

      st.pre_fit_metrics(row, q_t, tq_plain, mu_t);

      FitResult fitted = fit_weighted_projection(std::move(net), obs, targets, mu_t, fit);
      snapshot_count_guard(fitted.snapshots);
      net = cfg.early_stop == EarlyStop::none
                ? std::move(fitted.net)
                : oracle_early_stop(fitted.snapshots, mdp, obs, cfg.early_stop);

      const QTable q_next = net.forward(obs);
      if (!q_next.allFinite()) throw DivergenceError("exact_fqi: Q diverged", t);
      st.post_fit_metrics(row, q_next, targets, mu_t);
      st.record(std::move(row), std::move(mu_t));
      if (cfg.store_q_snapshots) st.trace.q_snapshots.push_back(q_next);
    } catch (const DivergenceError&) {
      st.halt(t);
      break;
    }
  }
  st.trace.final_net = std::move(net);
  return st.trace;
}

// --- sampled FQI -------------------------------------------------------------------

IterationTrace sampled_fqi(const TabularMdp& mdp, const Matrix& obs, const FqiConfig& cfg) {
  DriverState st(mdp, obs, cfg);
  if (cfg.samples_per_iter < 1)
    throw std::invalid_argument("sampled_fqi: samples_per_iter must be >= 1");
  Rng root(cfg.seed);
  Rng init_rng = root.stream("init");
  Rng sample_rng = root.stream("sample");
  Rng fit_rng = root.stream("fit");

  QNetwork net = st.make_net(init_rng);
  DistHistory history;
  std::optional<AdversaryState> adversary;
  if (cfg.weighting == WeightingKind::afm) {
    require_mlp_for_afm(cfg.arch);
    adversary = AdversaryState::exact(mdp.num_states(), mdp.num_actions(), cfg.afm);
  }

  if (cfg.store_q_snapshots) st.trace.q_snapshots.push_back(net.forward(obs));

  const int m = cfg.samples_per_iter;
  for (int t = 0; t < cfg.iterations; ++t) {
    IterationRow row;
    row.iter = t;
    try {
      const QTable q_t = net.forward(obs);
      const QTable exact_targets = alpha_smoothed_backup(mdp, q_t, cfg.alpha);
      const QTable tq_plain = cfg.alpha == 1.0 ? exact_targets : bellman_backup(mdp, q_t);

      StateActionDist mu_t{Matrix()};
      if (cfg.weighting == WeightingKind::afm) {
        const int k = std::clamp(cfg.afm.inner_steps, 1, 10);
        for (int i = 0; i < k; ++i) afm_exact_inner_step(*adversary, net, exact_targets, obs);
        mu_t = afm_exact_distribution(*adversary);
      } else {
        if (cfg.weighting == WeightingKind::replay || cfg.weighting == WeightingKind::replay10)
          history.push(occupancy(mdp, greedy_policy(q_t, cfg.exploration_eps)));
        WeightingContext ctx;
        ctx.mdp = &mdp;
        ctx.q = &q_t;
        ctx.q_star = &st.base.q_star;
        ctx.history = &history;
        ctx.epsilon = cfg.exploration_eps;
        mu_t = make_distribution(cfg.weighting, ctx);
      }

      st.pre_fit_metrics(row, q_t, tq_plain, mu_t);

      // Draw M pairs from mu_t, one sampled successor each.
      Batch data;
      data.states.reserve(m);
      data.actions.reserve(m);
      data.targets.resize(m);
      DistSampler sampler(mu_t);
      const Vector vmax = q_t.rowwise().maxCoeff();
      for (int i = 0; i < m; ++i) {
        auto [s, a] = sampler.draw(sample_rng);
        const int next = mdp.sample_next(s, a, sample_rng);
        const double y = mdp.rewards()(s, a) + mdp.discount() * vmax[next];
        data.states.push_back(s);
        data.actions.push_back(a);
        data.targets[i] = cfg.alpha * y + (1.0 - cfg.alpha) * q_t(s, a);
      }

      net = fit_on_samples(st, std::move(net), data, fit_rng);

      const QTable q_next = net.forward(obs);
      if (!q_next.allFinite()) throw DivergenceError("sampled_fqi: Q diverged", t);
      st.post_fit_metrics(row, q_next, exact_targets, mu_t);
      st.record(std::move(row), std::move(mu_t));
      if (cfg.store_q_snapshots) st.trace.q_snapshots.push_back(q_next);
    } catch (const DivergenceError&) {
      st.halt(t);
      break;
    }
  }
  st.trace.final_net = std::move(net);
  return st.trace;
}

// --- replay FQI ---------------------------------------------------------------------

IterationTrace replay_fqi(const TabularMdp& mdp, const Matrix& obs, const FqiConfig& cfg) {
  DriverState st(mdp, obs, cfg);
  if (cfg.online_samples_per_iter < 1)
    throw std::invalid_argument("replay_fqi: online_samples_per_iter must be >= 1");
  if (cfg.grad_steps_per_sample <= 0.0)
    throw std::invalid_argument("replay_fqi: grad_steps_per_sample must be positive");
  Rng root(cfg.seed);
  Rng init_rng = root.stream("init");
  Rng collect_rng = root.stream("collect");
  Rng draw_rng = root.stream("draw");

  QNetwork net = st.make_net(init_rng);
  ReplayBuffer buffer(cfg.buffer_capacity);
  std::optional<AdversaryState> adversary;
  if (cfg.overlay == ReplayOverlay::afm || cfg.overlay == ReplayOverlay::afm_sampling) {
    require_mlp_for_afm(cfg.arch);
    Rng adv_rng = root.stream("adversary");
    adversary = AdversaryState::replay(cfg.arch, static_cast<int>(obs.cols()),
                                       mdp.num_actions(), cfg.afm, adv_rng);
  }

  if (cfg.store_q_snapshots) st.trace.q_snapshots.push_back(net.forward(obs));

  const int batch_size = cfg.fit.minibatch > 0 ? cfg.fit.minibatch : 128;
  const int grad_steps = std::max(
      1, static_cast<int>(std::lround(cfg.grad_steps_per_sample * cfg.online_samples_per_iter)));
  int cur = mdp.sample_initial(collect_rng);

  for (int t = 0; t < cfg.iterations; ++t) {
    IterationRow row;
    row.iter = t;
    try {
      const QTable q_t = net.forward(obs);
      const QTable exact_targets = alpha_smoothed_backup(mdp, q_t, cfg.alpha);
      const QTable tq_plain = cfg.alpha == 1.0 ? exact_targets : bellman_backup(mdp, q_t);
      const Vector vmax = q_t.rowwise().maxCoeff();

      // Collect K eps-greedy transitions; restart with prob (1 - gamma) per
      // step so the visit distribution matches the discounted occupancy.
      const Policy behave = greedy_policy(q_t, cfg.exploration_eps);
      for (int k = 0; k < cfg.online_samples_per_iter; ++k) {
        double u = collect_rng.uniform();
        double acc = 0.0;
        int act = mdp.num_actions() - 1;
        for (int a = 0; a < mdp.num_actions(); ++a) {
          acc += behave.probs(cur, a);
          if (u < acc) {
            act = a;
            break;
          }
        }
        const int next = mdp.sample_next(cur, act, collect_rng);
        buffer.push({cur, act, next, mdp.rewards()(cur, act)});
        cur = collect_rng.bernoulli(1.0 - mdp.discount()) ? mdp.sample_initial(collect_rng)
                                                          : next;
      }

      StateActionDist mu_t = buffer.empirical(mdp.num_states(), mdp.num_actions());
      st.pre_fit_metrics(row, q_t, tq_plain, mu_t);

      // Analytic overlay distribution (importance-weighted draws toward it).
      std::optional<StateActionDist> nu;
      if (cfg.overlay == ReplayOverlay::unif || cfg.overlay == ReplayOverlay::pi ||
          cfg.overlay == ReplayOverlay::pistar || cfg.overlay == ReplayOverlay::prioritized) {
        WeightingContext ctx;
        ctx.mdp = &mdp;
        ctx.q = &q_t;
        ctx.q_star = &st.base.q_star;
        ctx.epsilon = cfg.exploration_eps;
        static const std::map<ReplayOverlay, WeightingKind> kind_of = {
            {ReplayOverlay::unif, WeightingKind::unif},
            {ReplayOverlay::pi, WeightingKind::pi},
            {ReplayOverlay::pistar, WeightingKind::pistar},
            {ReplayOverlay::prioritized, WeightingKind::prioritized}};
        nu = make_distribution(kind_of.at(cfg.overlay), ctx);
      }

      AdamState adam(net);
      std::vector<QNetwork> snapshots;
      const int n_draw = static_cast<int>(std::min<std::size_t>(batch_size, buffer.size()));
      for (int g = 0; g < grad_steps; ++g) {
        std::vector<int> idx = cfg.overlay == ReplayOverlay::per
                                   ? buffer.sample_prioritized(n_draw, draw_rng)
                                   : buffer.sample_uniform(n_draw, draw_rng);
        Batch batch;
        batch.states.resize(idx.size());
        batch.actions.resize(idx.size());
        batch.targets.resize(static_cast<long>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const Transition& tr = buffer[static_cast<std::size_t>(idx[i])];
          batch.states[i] = tr.s;
          batch.actions[i] = tr.a;
          const double y = tr.r + mdp.discount() * vmax[tr.next];
          batch.targets[static_cast<long>(i)] =
              cfg.alpha * y + (1.0 - cfg.alpha) * q_t(tr.s, tr.a);
        }

        if (nu) {  // importance weights toward the analytic distribution
          Vector w(batch.targets.size());
          for (std::size_t i = 0; i < idx.size(); ++i)
            w[static_cast<long>(i)] = nu->probs(batch.states[i], batch.actions[i]) /
                                      mu_t.probs(batch.states[i], batch.actions[i]);
          const double total = w.sum();
          batch.weights = total > 0.0 ? Vector(w * (static_cast<double>(w.size()) / total))
                                      : Vector::Ones(w.size());
        } else if (cfg.overlay == ReplayOverlay::per) {
          // refresh the drawn items' priorities from the current TD error
          const Vector qcur = net.forward_pairs(obs, batch.states, batch.actions);
          for (std::size_t i = 0; i < idx.size(); ++i)
            buffer.set_priority(static_cast<std::size_t>(idx[i]),
                                std::abs(qcur[static_cast<long>(i)] -
                                         batch.targets[static_cast<long>(i)]) + 1e-6);
        } else if (cfg.overlay == ReplayOverlay::afm ||
                   cfg.overlay == ReplayOverlay::afm_sampling) {
          const AfmBatchWeights w = afm_replay_weights(*adversary, net, obs, batch.states,
                                                       batch.actions, batch.targets);
          if (cfg.overlay == ReplayOverlay::afm) {
            batch.weights = afm_apply(AfmApplyMode::weighting, w, nullptr).loss_weights;
          } else {
            const AfmApplied applied = afm_apply(AfmApplyMode::sampling, w, &draw_rng);
            Batch resampled;
            resampled.states.reserve(applied.indices.size());
            resampled.actions.reserve(applied.indices.size());
            resampled.targets.resize(static_cast<long>(applied.indices.size()));
            for (std::size_t i = 0; i < applied.indices.size(); ++i) {
              const int j = applied.indices[i];
              resampled.states.push_back(batch.states[static_cast<std::size_t>(j)]);
              resampled.actions.push_back(batch.actions[static_cast<std::size_t>(j)]);
              resampled.targets[static_cast<long>(i)] = batch.targets[j];
            }
            batch = std::move(resampled);
          }
        }

        const LossGrad lg = loss_and_grad_batch(net, obs, batch);
        if (!std::isfinite(lg.loss)) throw DivergenceError("replay_fqi: loss diverged", g);
        adam.step(net, lg.grads, cfg.fit);
        if (cfg.fit.snapshot_interval > 0 && (g + 1) % cfg.fit.snapshot_interval == 0)
          snapshots.push_back(net);
      }
      snapshots.push_back(net);
      if (cfg.early_stop != EarlyStop::none)
        net = oracle_early_stop(snapshots, mdp, obs, cfg.early_stop);

      const QTable q_next = net.forward(obs);
      if (!q_next.allFinite()) throw DivergenceError("replay_fqi: Q diverged", t);
      st.post_fit_metrics(row, q_next, exact_targets, mu_t);
      st.record(std::move(row), std::move(mu_t));
      if (cfg.store_q_snapshots) st.trace.q_snapshots.push_back(q_next);
    } catch (const DivergenceError&) {
      st.halt(t);
      break;
    }
  }
  st.trace.final_net = std::move(net);
  return st.trace;
}

IterationTrace run_fqi(Algorithm algo, const TabularMdp& mdp, const Matrix& obs,
                       const FqiConfig& cfg) {
  switch (algo) {
    case Algorithm::exact: return exact_fqi(mdp, obs, cfg);
    case Algorithm::sampled: return sampled_fqi(mdp, obs, cfg);
    case Algorithm::replay: return replay_fqi(mdp, obs, cfg);
  }
  throw std::logic_error("run_fqi: bad enum");
}

// --- retrace validation ----------------------------------------------------------

std::vector<RetraceRow> retrace_validation(const TabularMdp& mdp, const Matrix& obs,
                                           const IterationTrace& reference,
                                           const std::vector<int>& budgets,
                                           const RetraceOptions& opt) {
  if (reference.q_snapshots.size() < 2)
    throw std::invalid_argument(
        "retrace_validation: reference trace has no Q snapshots (rerun with "
        "store_q_snapshots)");
  const int n_iter = static_cast<int>(reference.q_snapshots.size()) - 1;
  const ArchSpec arch = reference.final_net.arch();

  // Precompute the reference on-policy distributions and exact targets.
  std::vector<StateActionDist> d(static_cast<std::size_t>(n_iter), StateActionDist{Matrix()});
  std::vector<QTable> y(static_cast<std::size_t>(n_iter));
  for (int t = 0; t < n_iter; ++t) {
    const QTable& q_prev = reference.q_snapshots[static_cast<std::size_t>(t)];
    d[static_cast<std::size_t>(t)] = occupancy(mdp, greedy_policy(q_prev, opt.epsilon));
    y[static_cast<std::size_t>(t)] = alpha_smoothed_backup(mdp, q_prev, opt.alpha);
  }
  auto fresh_net = [&](std::uint64_t salt) {
    Rng rng = Rng::stream(opt.seed, "retrace-init").stream(std::to_string(salt));
    if (arch.kind == ArchSpec::Kind::tabular)
      return QNetwork::make_tabular(mdp.num_states(), mdp.num_actions());
    return QNetwork::make_mlp(arch, static_cast<int>(obs.cols()), mdp.num_actions(), rng);
  };

  auto exact_loss = [&](const QNetwork& net, int t) {
    const QTable q = net.forward(obs);
    return (d[static_cast<std::size_t>(t)].probs.array() *
            (q - y[static_cast<std::size_t>(t)]).array().square())
        .sum();
  };

  std::vector<RetraceRow> rows;

  {  // exact-projection row: the sampling-noise-free floor
    RetraceRow row;
    row.budget = 0;
    QNetwork net = fresh_net(0);
    for (int t = 0; t < n_iter; ++t) {
      FitResult fr = fit_weighted_projection(std::move(net), obs, y[static_cast<std::size_t>(t)],
                                             d[static_cast<std::size_t>(t)], opt.fit);
      net = std::move(fr.net);
      row.validation_loss.push_back(exact_loss(net, t));
    }
    rows.push_back(std::move(row));
  }

  // Both modes collect `budget` fresh on-policy transitions per iteration; the
  // buffer mode keeps every past transition and recomputes its regression
  // target from the current reference snapshot, so at iteration t it fits
  // against t*budget distinct samples instead of overfitting the latest batch.
  struct Item {
    int s, a, next;
  };
  for (const int budget : budgets) {
    if (budget <= 0) continue;  // the exact row is always included above
    for (const bool from_buffer : {false, true}) {
      if (from_buffer && !opt.buffer_rows) continue;
      RetraceRow row;
      row.budget = budget;
      row.from_buffer = from_buffer;
      QNetwork net = fresh_net(static_cast<std::uint64_t>(budget) * 2 + (from_buffer ? 1 : 0));
      Rng rng = Rng::stream(opt.seed, "retrace-sample")
                    .stream(std::to_string(budget) + (from_buffer ? "b" : "p"));
      FitConfig fit = opt.fit;
      std::vector<Item> pool;
      for (int t = 0; t < n_iter; ++t) {
        const QTable& q_prev = reference.q_snapshots[static_cast<std::size_t>(t)];
        const Vector vmax = q_prev.rowwise().maxCoeff();
        DistSampler sampler(d[static_cast<std::size_t>(t)]);
        if (!from_buffer) pool.clear();
        for (int i = 0; i < budget; ++i) {
          auto [s, a] = sampler.draw(rng);
          pool.push_back({s, a, mdp.sample_next(s, a, rng)});
        }
        auto target_of = [&](const Item& it) {
          const double yi = mdp.rewards()(it.s, it.a) + mdp.discount() * vmax[it.next];
          return opt.alpha * yi + (1.0 - opt.alpha) * q_prev(it.s, it.a);
        };
        const int pool_n = static_cast<int>(pool.size());
        if (net.is_tabular()) {
          // tabular least squares on samples: per-pair mean of targets
          Matrix sum = Matrix::Zero(mdp.num_states(), mdp.num_actions());
          Matrix cnt = Matrix::Zero(mdp.num_states(), mdp.num_actions());
          for (const Item& it : pool) {
            sum(it.s, it.a) += target_of(it);
            cnt(it.s, it.a) += 1.0;
          }
          Matrix& table = net.table();
          table = (cnt.array() > 0.0).select(sum.cwiseQuotient(cnt.cwiseMax(1.0)), table);
        } else {
          AdamState adam(net);
          // Matched per-step compute: batches are `budget` samples in both
          // modes (the buffer draws them from the accumulated pool).
          const int mb =
              std::min(fit.minibatch > 0 ? std::min(fit.minibatch, budget) : budget, pool_n);
          Batch batch;
          const bool fixed_batch = !from_buffer && mb == pool_n;
          if (fixed_batch) {
            batch.targets.resize(mb);
            for (int i = 0; i < mb; ++i) {
              batch.states.push_back(pool[static_cast<std::size_t>(i)].s);
              batch.actions.push_back(pool[static_cast<std::size_t>(i)].a);
              batch.targets[i] = target_of(pool[static_cast<std::size_t>(i)]);
            }
          }
          for (int step = 0; step < fit.max_steps; ++step) {
            if (!fixed_batch) {
              batch.states.assign(static_cast<std::size_t>(mb), 0);
              batch.actions.assign(static_cast<std::size_t>(mb), 0);
              batch.targets.resize(mb);
              for (int i = 0; i < mb; ++i) {
                const Item& it = pool[static_cast<std::size_t>(rng.index(pool_n))];
                batch.states[static_cast<std::size_t>(i)] = it.s;
                batch.actions[static_cast<std::size_t>(i)] = it.a;
                batch.targets[i] = target_of(it);
              }
            }
            const LossGrad lg = loss_and_grad_batch(net, obs, batch);
            if (!std::isfinite(lg.loss))
              throw DivergenceError("retrace_validation: loss diverged", step);
            adam.step(net, lg.grads, fit);
          }
        }
        row.validation_loss.push_back(exact_loss(net, t));
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// --- counterexample ---------------------------------------------------------------

std::vector<double> counterexample_divergence_demo(double gamma, int steps) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::invalid_argument("counterexample: gamma must lie in (0, 1)");
  if (steps < 0) throw std::invalid_argument("counterexample: steps must be >= 0");
  std::vector<double> w{1.0};
  for (int t = 0; t < steps; ++t) w.push_back(2.0 * gamma * w.back());
  return w;
}

}  // namespace qdiag
