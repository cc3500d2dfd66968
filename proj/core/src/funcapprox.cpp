#include "qdiag/funcapprox.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <tuple>

namespace qdiag {

// --- arch -------------------------------------------------------------------

ArchSpec ArchSpec::mlp(int h1, int h2) {
  if (h1 <= 0 || h2 <= 0) throw std::invalid_argument("arch: hidden sizes must be positive");
  return {Kind::mlp, h1, h2};
}

ArchSpec ArchSpec::parse(const std::string& text) {
  if (text == "tabular") return tabular();
  const auto x = text.find('x');
  if (x != std::string::npos) {
    try {
      size_t p1 = 0, p2 = 0;
      const int h1 = std::stoi(text.substr(0, x), &p1);
      const std::string rest = text.substr(x + 1);
      const int h2 = std::stoi(rest, &p2);
      if (p1 == x && p2 == rest.size() && h1 > 0 && h2 > 0) return mlp(h1, h2);
    } catch (const std::exception&) {
    }
  }
  throw std::invalid_argument("arch: expected 'tabular' or '<h1>x<h2>', got '" + text + "'");
}

std::string ArchSpec::name() const {
  if (kind == Kind::tabular) return "tabular";
  std::ostringstream os;
  os << hidden1 << "x" << hidden2;
  return os.str();
}

// --- network ----------------------------------------------------------------

QNetwork QNetwork::make_tabular(int num_states, int num_actions) {
  if (num_states <= 0 || num_actions <= 0)
    throw std::invalid_argument("tabular net: S and A must be positive");
  QNetwork net;
  net.arch_ = ArchSpec::tabular();
  net.num_actions_ = num_actions;
  net.table_ = Matrix::Zero(num_states, num_actions);
  return net;
}

QNetwork QNetwork::make_mlp(const ArchSpec& arch, int input_dim, int num_actions, Rng& rng) {
  if (arch.kind != ArchSpec::Kind::mlp) throw std::invalid_argument("make_mlp: tabular arch");
  if (input_dim <= 0 || num_actions <= 0)
    throw std::invalid_argument("mlp net: input_dim and A must be positive");
  QNetwork net;
  net.arch_ = arch;
  net.input_dim_ = input_dim;
  net.num_actions_ = num_actions;
  auto init = [&rng](int rows, int cols) {
    const double bound = std::sqrt(6.0 / rows);  // rows = fan-in
    Matrix w(rows, cols);
    for (int c = 0; c < cols; ++c)  // storage (column-major) order
      for (int r = 0; r < rows; ++r) w(r, c) = rng.uniform(-bound, bound);
    return w;
  };
  net.mlp_.w1 = init(input_dim, arch.hidden1);
  net.mlp_.w2 = init(arch.hidden1, arch.hidden2);
  net.mlp_.w3 = init(arch.hidden2, num_actions);
  net.mlp_.b1 = Matrix::Zero(1, arch.hidden1);
  net.mlp_.b2 = Matrix::Zero(1, arch.hidden2);
  net.mlp_.b3 = Matrix::Zero(1, num_actions);
  return net;
}

namespace {

// Forward activations kept for the backward pass.
struct ForwardPass {
  Matrix z1, h1, z2, h2, y;
};

// The _into variants write into caller-owned storage; the optimizer loop
// calls them thousands of times per fit and per-step allocation of the
// batch-sized intermediates dominates wall time otherwise.
void mlp_forward_into(const MlpParams& p, const Matrix& x, ForwardPass& f) {
  f.z1.resize(x.rows(), p.w1.cols());
  f.z1.noalias() = x * p.w1;
  f.z1.rowwise() += p.b1.row(0);
  f.h1 = f.z1.cwiseMax(0.0);
  f.z2.resize(x.rows(), p.w2.cols());
  f.z2.noalias() = f.h1 * p.w2;
  f.z2.rowwise() += p.b2.row(0);
  f.h2 = f.z2.cwiseMax(0.0);
  f.y.resize(x.rows(), p.w3.cols());
  f.y.noalias() = f.h2 * p.w3;
  f.y.rowwise() += p.b3.row(0);
}

ForwardPass mlp_forward(const MlpParams& p, const Matrix& x) {
  ForwardPass f;
  mlp_forward_into(p, x, f);
  return f;
}

struct BackwardScratch {
  Matrix dz1, dz2;
};

// dLoss/d(params) given dLoss/dY; x is the input that produced `f`. `g`
// must hold six tensors shaped like the parameters (Grads::zeros_like).
void mlp_backward_into(const MlpParams& p, const Matrix& x, const ForwardPass& f,
                       const Matrix& dy, BackwardScratch& s, Grads& g) {
  s.dz2.resize(dy.rows(), p.w3.rows());
  s.dz2.noalias() = dy * p.w3.transpose();
  s.dz2.array() *= (f.z2.array() > 0.0).cast<double>();
  s.dz1.resize(dy.rows(), p.w2.rows());
  s.dz1.noalias() = s.dz2 * p.w2.transpose();
  s.dz1.array() *= (f.z1.array() > 0.0).cast<double>();
  g.tensors[0].noalias() = x.transpose() * s.dz1;  // w1
  g.tensors[1] = s.dz1.colwise().sum();            // b1
  g.tensors[2].noalias() = f.h1.transpose() * s.dz2;  // w2
  g.tensors[3] = s.dz2.colwise().sum();            // b2
  g.tensors[4].noalias() = f.h2.transpose() * dy;  // w3
  g.tensors[5] = dy.colwise().sum();               // b3
}

Grads mlp_backward(const MlpParams& p, const Matrix& x, const ForwardPass& f, const Matrix& dy) {
  Grads g;
  g.tensors.resize(6);
  BackwardScratch s;
  // size the weight-grad targets so the noalias products can assign in place
  g.tensors[0].resize(p.w1.rows(), p.w1.cols());
  g.tensors[2].resize(p.w2.rows(), p.w2.cols());
  g.tensors[4].resize(p.w3.rows(), p.w3.cols());
  mlp_backward_into(p, x, f, dy, s, g);
  return g;
}

}  // namespace

QTable QNetwork::forward(const Matrix& obs) const {
  if (is_tabular()) {
    if (obs.rows() != table_.rows())
      throw std::invalid_argument("forward: obs rows do not match tabular state count");
    return table_;
  }
  if (obs.cols() != input_dim_)
    throw std::invalid_argument("forward: obs dimension does not match network input");
  return mlp_forward(mlp_, obs).y;
}

Matrix QNetwork::features(const Matrix& obs) const {
  if (is_tabular()) throw std::logic_error("features: tabular networks have no feature layer");
  if (obs.cols() != input_dim_)
    throw std::invalid_argument("features: obs dimension does not match network input");
  return mlp_forward(mlp_, obs).h2;
}

Vector QNetwork::forward_pairs(const Matrix& obs, const std::vector<int>& states,
                               const std::vector<int>& actions) const {
  if (states.size() != actions.size())
    throw std::invalid_argument("forward_pairs: states/actions length mismatch");
  Vector out(static_cast<long>(states.size()));
  if (is_tabular()) {
    for (size_t i = 0; i < states.size(); ++i) out[i] = table_(states[i], actions[i]);
    return out;
  }
  const Matrix y = mlp_forward(mlp_, gather_rows(obs, states)).y;
  for (size_t i = 0; i < states.size(); ++i) out[i] = y(static_cast<long>(i), actions[i]);
  return out;
}

Matrix& QNetwork::table() {
  if (!is_tabular()) throw std::logic_error("table: not a tabular network");
  return table_;
}
const Matrix& QNetwork::table() const {
  if (!is_tabular()) throw std::logic_error("table: not a tabular network");
  return table_;
}
MlpParams& QNetwork::params() {
  if (is_tabular()) throw std::logic_error("params: tabular network");
  return mlp_;
}
const MlpParams& QNetwork::params() const {
  if (is_tabular()) throw std::logic_error("params: tabular network");
  return mlp_;
}

std::vector<Matrix*> QNetwork::tensors() {
  if (is_tabular()) return {&table_};
  return {&mlp_.w1, &mlp_.b1, &mlp_.w2, &mlp_.b2, &mlp_.w3, &mlp_.b3};
}
std::vector<const Matrix*> QNetwork::tensors() const {
  if (is_tabular()) return {&table_};
  return {&mlp_.w1, &mlp_.b1, &mlp_.w2, &mlp_.b2, &mlp_.w3, &mlp_.b3};
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<long>(rows.size()), m.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<long>(i)) = m.row(rows[i]);
  return out;
}

// --- serialization (QNET1) ----------------------------------------------------

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("QNET1: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64s(std::ostream& out, const Matrix& m) {
  static_assert(sizeof(double) == 8);
  // column-major storage order; host assumed little-endian (x86/arm64)
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
}

Matrix get_f64s(std::istream& in, long rows, long cols) {
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!in) throw std::runtime_error("QNET1: truncated tensor data");
  if (!m.allFinite()) throw std::runtime_error("QNET1: non-finite weights");
  return m;
}

constexpr char kMagic[6] = {'Q', 'N', 'E', 'T', '1', '\n'};

}  // namespace

void QNetwork::save(std::ostream& out) const {
  out.write(kMagic, sizeof(kMagic));
  if (is_tabular()) {
    out.put(0);
    put_u32(out, static_cast<std::uint32_t>(table_.rows()));
    put_u32(out, static_cast<std::uint32_t>(num_actions_));
  } else {
    out.put(1);
    put_u32(out, static_cast<std::uint32_t>(input_dim_));
    put_u32(out, static_cast<std::uint32_t>(arch_.hidden1));
    put_u32(out, static_cast<std::uint32_t>(arch_.hidden2));
    put_u32(out, static_cast<std::uint32_t>(num_actions_));
  }
  for (const Matrix* t : tensors()) put_f64s(out, *t);
  if (!out) throw std::runtime_error("QNET1: write failed");
}

void QNetwork::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("QNET1: cannot open '" + path + "' for writing");
  save(out);
}

QNetwork QNetwork::load(std::istream& in) {
  char magic[6];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("QNET1: bad magic (not a QNET1 file)");
  const int kind = in.get();
  if (kind == 0) {
    const long S = get_u32(in), A = get_u32(in);
    if (S <= 0 || A <= 0 || S > (1l << 24) || A > (1l << 16))
      throw std::runtime_error("QNET1: implausible tabular dimensions");
    QNetwork net = make_tabular(static_cast<int>(S), static_cast<int>(A));
    net.table_ = get_f64s(in, S, A);
    return net;
  }
  if (kind == 1) {
    const long D = get_u32(in), h1 = get_u32(in), h2 = get_u32(in), A = get_u32(in);
    if (D <= 0 || h1 <= 0 || h2 <= 0 || A <= 0 || D > (1l << 24) || h1 > (1l << 20) ||
        h2 > (1l << 20) || A > (1l << 16))
      throw std::runtime_error("QNET1: implausible mlp dimensions");
    QNetwork net;
    net.arch_ = ArchSpec::mlp(static_cast<int>(h1), static_cast<int>(h2));
    net.input_dim_ = static_cast<int>(D);
    net.num_actions_ = static_cast<int>(A);
    net.mlp_.w1 = get_f64s(in, D, h1);
    net.mlp_.b1 = get_f64s(in, 1, h1);
    net.mlp_.w2 = get_f64s(in, h1, h2);
    net.mlp_.b2 = get_f64s(in, 1, h2);
    net.mlp_.w3 = get_f64s(in, h2, A);
    net.mlp_.b3 = get_f64s(in, 1, A);
    return net;
  }
  throw std::runtime_error("QNET1: unknown network kind");
}

QNetwork QNetwork::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("QNET1: cannot open '" + path + "'");
  return load(in);
}

// --- gradients ------------------------------------------------------------------

Grads Grads::zeros_like(const QNetwork& net) {
  Grads g;
  for (const Matrix* t : net.tensors()) g.tensors.push_back(Matrix::Zero(t->rows(), t->cols()));
  return g;
}

Grads grad_from_output_grads(const QNetwork& net, const Matrix& obs, const Matrix& out_grad) {
  if (net.is_tabular()) {
    Grads g;
    g.tensors.push_back(out_grad);
    return g;
  }
  const ForwardPass f = mlp_forward(net.params(), obs);
  return mlp_backward(net.params(), obs, f, out_grad);
}

Grads grad_from_output_grads_batch(const QNetwork& net, const Matrix& obs,
                                   const std::vector<int>& states,
                                   const std::vector<int>& actions, const Vector& out_grad) {
  if (states.size() != actions.size() || static_cast<long>(states.size()) != out_grad.size())
    throw std::invalid_argument("grad batch: length mismatch");
  if (net.is_tabular()) {
    Grads g;
    g.tensors.push_back(Matrix::Zero(net.table().rows(), net.table().cols()));
    for (size_t i = 0; i < states.size(); ++i)
      g.tensors[0](states[i], actions[i]) += out_grad[static_cast<long>(i)];
    return g;
  }
  const Matrix x = gather_rows(obs, states);
  const ForwardPass f = mlp_forward(net.params(), x);
  Matrix dy = Matrix::Zero(x.rows(), net.num_actions());
  for (size_t i = 0; i < states.size(); ++i)
    dy(static_cast<long>(i), actions[i]) += out_grad[static_cast<long>(i)];
  return mlp_backward(net.params(), x, f, dy);
}

LossGrad loss_and_grad(const QNetwork& net, const Matrix& obs, const QTable& targets,
                       const StateActionDist& mu) {
  const QTable q = net.forward(obs);
  if (q.rows() != targets.rows() || q.cols() != targets.cols())
    throw std::invalid_argument("loss_and_grad: target shape mismatch");
  const Matrix delta = q - targets;
  LossGrad out;
  out.loss = (mu.probs.array() * delta.array().square()).sum();
  out.grads = grad_from_output_grads(net, obs, 2.0 * mu.probs.cwiseProduct(delta));
  return out;
}

LossGrad loss_and_grad_batch(const QNetwork& net, const Matrix& obs, const Batch& batch) {
  const long n = static_cast<long>(batch.states.size());
  if (n == 0) throw std::invalid_argument("loss_and_grad_batch: empty batch");
  if (batch.targets.size() != n) throw std::invalid_argument("loss_and_grad_batch: bad targets");
  if (batch.weights.size() != 0 && batch.weights.size() != n)
    throw std::invalid_argument("loss_and_grad_batch: bad weights");
  const Vector q = net.forward_pairs(obs, batch.states, batch.actions);
  Vector delta = q - batch.targets;
  Vector w = batch.weights.size() ? batch.weights : Vector::Ones(n);
  LossGrad out;
  out.loss = w.dot(delta.cwiseProduct(delta)) / static_cast<double>(n);
  const Vector dq = 2.0 / static_cast<double>(n) * w.cwiseProduct(delta);
  out.grads = grad_from_output_grads_batch(net, obs, batch.states, batch.actions, dq);
  return out;
}

// --- optimizer --------------------------------------------------------------------

AdamState::AdamState(const QNetwork& net) {
  for (const Matrix* t : net.tensors()) {
    m_.push_back(Matrix::Zero(t->rows(), t->cols()));
    v_.push_back(Matrix::Zero(t->rows(), t->cols()));
  }
}

void AdamState::step(QNetwork& net, const Grads& grads, const FitConfig& cfg) {
  auto params = net.tensors();
  if (grads.tensors.size() != params.size() || params.size() != m_.size())
    throw std::invalid_argument("adam: tensor count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads.tensors[i];
    m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * g;
    v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    params[i]->array() -=
        cfg.step_size * (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + cfg.adam_eps);
  }
}

// --- projection fit ------------------------------------------------------------------

FitResult fit_weighted_projection(QNetwork net, const Matrix& obs, const QTable& targets,
                                  const StateActionDist& mu, const FitConfig& cfg, Rng* rng) {
  if (!targets.allFinite()) throw DivergenceError("fit: non-finite targets", 0);
  check_dist(mu, static_cast<int>(targets.rows()), static_cast<int>(targets.cols()));
  if (cfg.max_steps < 1) throw std::invalid_argument("fit: max_steps must be >= 1");

  FitResult out;
  if (net.is_tabular()) {
    Matrix& table = net.table();
    if (table.rows() != targets.rows() || table.cols() != targets.cols())
      throw std::invalid_argument("fit: tabular shape mismatch");
    table = (mu.probs.array() > 0.0).select(targets, table);
    out.final_loss = 0.0;
    out.net = std::move(net);
    out.snapshots.push_back(out.net);
    return out;
  }

  const bool stochastic = cfg.minibatch > 0;
  if (stochastic && rng == nullptr)
    throw std::invalid_argument("fit: minibatch sampling needs an rng");
  std::optional<DistSampler> sampler;
  if (stochastic) sampler.emplace(mu);

  AdamState adam(net);
  // All batch-sized intermediates live outside the loop; see mlp_*_into.
  ForwardPass f;
  BackwardScratch scratch;
  Grads grads = Grads::zeros_like(net);
  Matrix dy, x;
  std::vector<int> bs(stochastic ? cfg.minibatch : 0), ba(stochastic ? cfg.minibatch : 0);
  std::vector<double> history;
  history.reserve(cfg.max_steps);
  for (int step = 0; step < cfg.max_steps; ++step) {
    double loss;
    if (stochastic) {
      const int n = cfg.minibatch;
      for (int i = 0; i < n; ++i) std::tie(bs[i], ba[i]) = sampler->draw(*rng);
      x.resize(n, obs.cols());
      for (int i = 0; i < n; ++i) x.row(i) = obs.row(bs[i]);
      mlp_forward_into(net.params(), x, f);
      dy.resize(n, f.y.cols());
      dy.setZero();
      loss = 0.0;
      for (int i = 0; i < n; ++i) {
        const double d = f.y(i, ba[i]) - targets(bs[i], ba[i]);
        loss += d * d;
        dy(i, ba[i]) += 2.0 * d / n;
      }
      loss /= n;
      mlp_backward_into(net.params(), x, f, dy, scratch, grads);
    } else {
      mlp_forward_into(net.params(), obs, f);
      dy = f.y - targets;
      loss = (mu.probs.array() * dy.array().square()).sum();
      dy.array() *= 2.0 * mu.probs.array();
      mlp_backward_into(net.params(), obs, f, dy, scratch, grads);
    }
    if (!std::isfinite(loss))
      throw DivergenceError("fit: loss diverged", step);
    adam.step(net, grads, cfg);
    history.push_back(loss);
    out.steps = step + 1;
    out.final_loss = loss;
    if (cfg.snapshot_interval > 0 && (step + 1) % cfg.snapshot_interval == 0)
      out.snapshots.push_back(net);
    if (cfg.stop_tol > 0.0 && step >= 10) {
      const double then = history[step - 10];
      if (then - loss <= cfg.stop_tol * std::max(std::abs(then), 1e-12)) break;
    }
  }
  for (const Matrix* t : net.tensors())
    if (!t->allFinite()) throw DivergenceError("fit: parameters diverged", out.steps);
  const bool final_already_snapped =
      cfg.snapshot_interval > 0 && out.steps > 0 && out.steps % cfg.snapshot_interval == 0;
  if (!final_already_snapped) out.snapshots.push_back(net);
  out.net = std::move(net);
  return out;
}

}  // namespace qdiag
