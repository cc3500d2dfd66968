#include "qdiag/afm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qdiag {

AdversaryState AdversaryState::exact(int num_states, int num_actions, const AfmConfig& cfg) {
  if (num_states <= 0 || num_actions <= 0)
    throw std::invalid_argument("afm: S and A must be positive");
  AdversaryState adv;
  adv.mode_ = AfmMode::exact_logits;
  adv.cfg_ = cfg;
  adv.logits = Matrix::Zero(num_states, num_actions);
  return adv;
}

AdversaryState AdversaryState::replay(const ArchSpec& arch, int input_dim, int num_actions,
                                      const AfmConfig& cfg, Rng& rng) {
  AdversaryState adv;
  adv.mode_ = AfmMode::replay_network;
  adv.cfg_ = cfg;
  adv.score_net = QNetwork::make_mlp(arch, input_dim, num_actions, rng);
  for (Matrix* t : adv.score_net->tensors())
    *t = t->cwiseMax(-cfg.param_clip).cwiseMin(cfg.param_clip);
  return adv;
}

Matrix standardize_columns(const Matrix& m) {
  Eigen::RowVectorXd mean = m.colwise().mean();
  Matrix centered = m.rowwise() - mean;
  Eigen::RowVectorXd std =
      (centered.array().square().colwise().mean()).sqrt() + 1e-8;
  return centered.array().rowwise() / std.array();
}

namespace {

Matrix softmax_all(const Matrix& logits) {
  Matrix p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

void ensure_lambda(AdversaryState& adv, long dims) {
  if (adv.lambda.size() != dims) adv.lambda = Vector::Zero(dims);
}

void dual_ascent(AdversaryState& adv, const Vector& residual) {
  const AfmConfig& cfg = adv.config();
  adv.lambda =
      (adv.lambda + cfg.dual_step * (residual.cwiseAbs().array() - cfg.epsilon).matrix())
          .cwiseMax(0.0);
}

}  // namespace

void afm_exact_inner_step(AdversaryState& adv, const QNetwork& q, const QTable& targets,
                          const Matrix& obs) {
  if (adv.mode() != AfmMode::exact_logits)
    throw std::logic_error("afm_exact_inner_step: adversary is in replay mode");
  const AfmConfig& cfg = adv.config();
  const QTable qvals = q.forward(obs);
  if (qvals.rows() != targets.rows() || qvals.cols() != targets.cols())
    throw std::invalid_argument("afm: target shape mismatch");
  const Matrix err2 = (qvals - targets).array().square();
  const Matrix phi = standardize_columns(q.features(obs));  // S x F, zero column mean
  ensure_lambda(adv, phi.cols());

  Matrix p = softmax_all(adv.logits);
  // residual_d = sum_{s,a} p(s,a) phi(s, d); reference is 0 after standardization
  Vector state_mass = p.rowwise().sum();
  Vector residual = phi.transpose() * state_mass;

  // ascent direction on p: delta^2 minus the active constraint penalties
  Matrix g = err2;
  Vector penalty = phi * (adv.lambda.array() * residual.array().sign()).matrix();  // per state
  g.colwise() -= penalty;
  const double gbar = (p.array() * g.array()).sum();
  adv.logits += cfg.exact_step * (p.array() * (g.array() - gbar)).matrix();

  if (!adv.logits.allFinite()) {  // blow-up: reset to uniform and note it
    adv.logits.setZero();
    ++adv.reset_events;
    return;
  }
  adv.logits.array() -= adv.logits.maxCoeff();  // re-center, softmax-invariant

  p = softmax_all(adv.logits);
  residual = phi.transpose() * p.rowwise().sum();
  dual_ascent(adv, residual);
}

StateActionDist afm_exact_distribution(const AdversaryState& adv) {
  if (adv.mode() != AfmMode::exact_logits)
    throw std::logic_error("afm_exact_distribution: adversary is in replay mode");
  return {softmax_all(adv.logits)};
}

AfmBatchWeights afm_replay_weights(AdversaryState& adv, const QNetwork& q, const Matrix& obs,
                                   const std::vector<int>& states,
                                   const std::vector<int>& actions, const Vector& targets) {
  if (adv.mode() != AfmMode::replay_network)
    throw std::logic_error("afm_replay_weights: adversary is in exact mode");
  const AfmConfig& cfg = adv.config();
  const long n = static_cast<long>(states.size());
  if (n == 0) throw std::invalid_argument("afm: empty batch");
  if (targets.size() != n) throw std::invalid_argument("afm: bad targets");
  QNetwork& f = *adv.score_net;

  const Vector qv = q.forward_pairs(obs, states, actions);
  const Vector err2 = (qv - targets).array().square();
  const Matrix phi = standardize_columns(q.features(gather_rows(obs, states)));  // N x F
  ensure_lambda(adv, phi.cols());

  const double renyi_scale =
      cfg.renyi_coeff * cfg.renyi_c * std::sqrt((1.0 - cfg.delta_conf) / (n * cfg.delta_conf));

  auto weights_of = [&]() -> Vector {
    Vector scores = f.forward_pairs(obs, states, actions);
    Vector w = (scores.array() - scores.maxCoeff()).exp();
    return w / w.sum();
  };

  const int steps = std::clamp(cfg.inner_steps, 1, 10);
  Vector wt = weights_of();
  for (int k = 0; k < steps; ++k) {
    const double ed2 = wt.dot(err2);           // E_w[delta^2]
    const double d2 = n * wt.squaredNorm();    // Renyi-2 estimate
    const Vector wphi = phi.transpose() * wt;  // feature residual, per dim

    // d(objective)/d f_j, objective = E_w[delta^2] - penalty - sum_d lambda_d |res_d|
    const Vector term_err = (wt.array() * (err2.array() - ed2)).matrix();
    const Vector term_renyi =
        renyi_scale / (2.0 * std::sqrt(std::max(d2, 1e-300))) *
        (2.0 * static_cast<double>(n) * wt.array().square() - 2.0 * d2 * wt.array()).matrix();
    const Vector lam_sign = (adv.lambda.array() * wphi.array().sign()).matrix();
    const double lam_abs = adv.lambda.dot(wphi.cwiseAbs());  // sum_d lambda_d |res_d|
    const Vector term_con = (wt.array() * ((phi * lam_sign).array() - lam_abs)).matrix();
    const Vector dout = term_err - term_renyi - term_con;
    Grads grads = grad_from_output_grads_batch(f, obs, states, actions, dout);
    auto params = f.tensors();
    bool finite = true;
    for (size_t i = 0; i < params.size(); ++i) {
      *params[i] += cfg.replay_step * grads.tensors[i];  // ascent
      *params[i] = params[i]->cwiseMax(-cfg.param_clip).cwiseMin(cfg.param_clip);
      finite = finite && params[i]->allFinite();
    }
    if (!finite) {
      for (Matrix* t : params) t->setZero();  // reset to uniform scores
      ++adv.reset_events;
    }
    wt = weights_of();
    dual_ascent(adv, phi.transpose() * wt);
  }

  AfmBatchWeights out;
  out.w_tilde = wt;
  out.renyi_d2 = n * wt.squaredNorm();
  out.residual = phi.transpose() * wt;
  return out;
}

AfmApplied afm_apply(AfmApplyMode mode, const AfmBatchWeights& weights, Rng* rng) {
  const long n = weights.w_tilde.size();
  if (n == 0) throw std::invalid_argument("afm_apply: empty weights");
  AfmApplied out;
  if (mode == AfmApplyMode::weighting) {
    out.indices.resize(n);
    for (long i = 0; i < n; ++i) out.indices[static_cast<size_t>(i)] = static_cast<int>(i);
    out.loss_weights = static_cast<double>(n) * weights.w_tilde;
    return out;
  }
  if (rng == nullptr) throw std::invalid_argument("afm_apply: sampling needs an rng");
  std::vector<double> cdf(static_cast<size_t>(n));
  double acc = 0.0;
  for (long i = 0; i < n; ++i) {
    acc += weights.w_tilde[i];
    cdf[static_cast<size_t>(i)] = acc;
  }
  cdf.back() = 1.0;
  out.indices.reserve(n);
  for (long i = 0; i < n; ++i) {
    const double u = rng->uniform();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    out.indices.push_back(static_cast<int>(std::min<std::ptrdiff_t>(
        it - cdf.begin(), static_cast<std::ptrdiff_t>(n - 1))));
  }
  return out;
}

}  // namespace qdiag
