#include "qdiag/weighting.hpp"

#include <cmath>
#include <stdexcept>

namespace qdiag {

WeightingKind parse_weighting(const std::string& name) {
  if (name == "unif") return WeightingKind::unif;
  if (name == "pi") return WeightingKind::pi;
  if (name == "pistar") return WeightingKind::pistar;
  if (name == "random") return WeightingKind::random;
  if (name == "prioritized") return WeightingKind::prioritized;
  if (name == "replay") return WeightingKind::replay;
  if (name == "replay10") return WeightingKind::replay10;
  if (name == "afm") return WeightingKind::afm;
  throw std::invalid_argument(
      "unknown weighting '" + name +
      "' (expected unif|pi|pistar|random|prioritized|replay|replay10|afm)");
}

std::string weighting_name(WeightingKind kind) {
  switch (kind) {
    case WeightingKind::unif: return "unif";
    case WeightingKind::pi: return "pi";
    case WeightingKind::pistar: return "pistar";
    case WeightingKind::random: return "random";
    case WeightingKind::prioritized: return "prioritized";
    case WeightingKind::replay: return "replay";
    case WeightingKind::replay10: return "replay10";
    case WeightingKind::afm: return "afm";
  }
  throw std::logic_error("weighting_name: bad enum");
}

StateActionDist DistHistory::mean_last(std::size_t take) const {
  if (entries_.empty()) throw std::invalid_argument("DistHistory: empty history");
  const std::size_t from = entries_.size() > take ? entries_.size() - take : 0;
  Matrix acc = entries_[from].probs;
  for (std::size_t i = from + 1; i < entries_.size(); ++i) acc += entries_[i].probs;
  return {acc / static_cast<double>(entries_.size() - from)};
}

namespace {

[[noreturn]] void need(const char* what, WeightingKind kind) {
  throw std::invalid_argument("make_distribution(" + weighting_name(kind) + "): missing " + what);
}

}  // namespace

StateActionDist make_distribution(WeightingKind kind, const WeightingContext& ctx) {
  switch (kind) {
    case WeightingKind::unif: {
      if (!ctx.mdp) need("mdp", kind);
      const double p = 1.0 / (ctx.mdp->num_states() * ctx.mdp->num_actions());
      return {Matrix::Constant(ctx.mdp->num_states(), ctx.mdp->num_actions(), p)};
    }
    case WeightingKind::pi: {
      if (!ctx.mdp) need("mdp", kind);
      if (!ctx.q) need("q", kind);
      return occupancy(*ctx.mdp, greedy_policy(*ctx.q, ctx.epsilon));
    }
    case WeightingKind::pistar: {
      if (!ctx.mdp) need("mdp", kind);
      if (!ctx.q_star) need("q_star", kind);
      return occupancy(*ctx.mdp, greedy_policy(*ctx.q_star, ctx.epsilon));
    }
    case WeightingKind::random: {
      if (!ctx.mdp) need("mdp", kind);
      const int actions = ctx.mdp->num_actions();
      const Policy uniform{
          Matrix::Constant(ctx.mdp->num_states(), actions, 1.0 / actions)};
      return occupancy(*ctx.mdp, uniform);
    }
    case WeightingKind::prioritized: {
      if (!ctx.mdp) need("mdp", kind);
      if (!ctx.q) need("q", kind);
      Matrix err = (*ctx.q - bellman_backup(*ctx.mdp, *ctx.q)).cwiseAbs();
      const double total = err.sum();
      if (total <= 0.0) {  // converged exactly: fall back to uniform
        const double p = 1.0 / (err.rows() * err.cols());
        return {Matrix::Constant(err.rows(), err.cols(), p)};
      }
      return {err / total};
    }
    case WeightingKind::replay:
    case WeightingKind::replay10: {
      if (!ctx.history || ctx.history->size() == 0)
        need("history (push the current occupancy first)", kind);
      return ctx.history->mean_last(kind == WeightingKind::replay10 ? 10
                                                                    : ctx.history->size());
    }
    case WeightingKind::afm: {
      if (!ctx.afm_dist) need("afm_dist (run the adversary first)", kind);
      return *ctx.afm_dist;
    }
  }
  throw std::logic_error("make_distribution: bad enum");
}

double entropy(const StateActionDist& mu) {
  double h = 0.0;
  for (int s = 0; s < mu.probs.rows(); ++s)
    for (int a = 0; a < mu.probs.cols(); ++a) {
      const double p = mu.probs(s, a);
      if (p > 0.0) h -= p * std::log(p);
    }
  return h;
}

double normalized_entropy(const StateActionDist& mu) {
  const double cells = static_cast<double>(mu.probs.rows()) * mu.probs.cols();
  if (cells <= 1.0) return 0.0;
  return entropy(mu) / std::log(cells);
}

double tv_distance(const StateActionDist& a, const StateActionDist& b) {
  if (a.probs.rows() != b.probs.rows() || a.probs.cols() != b.probs.cols())
    throw std::invalid_argument("tv_distance: shape mismatch");
  return 0.5 * (a.probs - b.probs).cwiseAbs().sum();
}

double loss_shift(const QTable& q, const QTable& tq, const StateActionDist& mu_new,
                  const StateActionDist& mu_old) {
  if (q.rows() != tq.rows() || q.cols() != tq.cols())
    throw std::invalid_argument("loss_shift: q/tq shape mismatch");
  const Matrix err = (q - tq).array().square();
  return (mu_new.probs.array() * err.array()).sum() -
         (mu_old.probs.array() * err.array()).sum();
}

}  // namespace qdiag
