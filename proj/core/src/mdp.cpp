#include "qdiag/mdp.hpp"

#include <Eigen/LU>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace qdiag {

namespace {

constexpr double kMassTol = 1e-9;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_sa_matrix(const Matrix& m, int S, int A, const char* name) {
  if (m.rows() != S || m.cols() != A) {
    std::ostringstream os;
    os << name << ": expected " << S << "x" << A << ", got " << m.rows() << "x" << m.cols();
    fail(os.str());
  }
}

}  // namespace

bool all_finite(const Matrix& m) { return m.allFinite(); }

void check_policy(const Policy& pi, int num_states, int num_actions) {
  check_sa_matrix(pi.probs, num_states, num_actions, "policy");
  if (!pi.probs.allFinite() || pi.probs.minCoeff() < 0.0) fail("policy: negative or non-finite entry");
  for (int s = 0; s < num_states; ++s) {
    if (std::abs(pi.probs.row(s).sum() - 1.0) > kMassTol) {
      std::ostringstream os;
      os << "policy: row " << s << " sums to " << pi.probs.row(s).sum();
      fail(os.str());
    }
  }
}

void check_dist(const StateActionDist& mu, int num_states, int num_actions) {
  check_sa_matrix(mu.probs, num_states, num_actions, "distribution");
  if (!mu.probs.allFinite() || mu.probs.minCoeff() < 0.0)
    fail("distribution: negative or non-finite entry");
  if (std::abs(mu.probs.sum() - 1.0) > kMassTol) {
    std::ostringstream os;
    os << "distribution: total mass " << mu.probs.sum();
    fail(os.str());
  }
}

TabularMdp::TabularMdp(int num_states, int num_actions, TransitionMatrix transitions,
                       Matrix rewards, double discount, Vector initial)
    : num_states_(num_states),
      num_actions_(num_actions),
      transitions_(std::move(transitions)),
      rewards_(std::move(rewards)),
      discount_(discount),
      initial_(std::move(initial)) {
  if (num_states_ <= 0 || num_actions_ <= 0) fail("mdp: S and A must be positive");
  if (transitions_.rows() != static_cast<long>(num_states_) * num_actions_ ||
      transitions_.cols() != num_states_)
    fail("mdp: transition matrix must be (S*A) x S");
  check_sa_matrix(rewards_, num_states_, num_actions_, "rewards");
  if (!rewards_.allFinite()) fail("mdp: non-finite reward");
  if (!(discount_ > 0.0 && discount_ < 1.0)) fail("mdp: discount must lie in (0, 1)");
  if (initial_.size() != num_states_) fail("mdp: initial distribution has wrong length");
  if (!initial_.allFinite() || initial_.minCoeff() < 0.0)
    fail("mdp: initial distribution has negative or non-finite entry");
  if (std::abs(initial_.sum() - 1.0) > kMassTol) fail("mdp: initial distribution must sum to 1");

  transitions_.makeCompressed();
  for (int row = 0; row < transitions_.rows(); ++row) {
    double sum = 0.0;
    for (TransitionMatrix::InnerIterator it(transitions_, row); it; ++it) {
      if (!(it.value() >= 0.0)) {
        std::ostringstream os;
        os << "mdp: negative transition probability in row " << row;
        fail(os.str());
      }
      sum += it.value();
    }
    if (std::abs(sum - 1.0) > kMassTol) {
      std::ostringstream os;
      os << "mdp: transition row " << row << " (s=" << row / num_actions_
         << ", a=" << row % num_actions_ << ") sums to " << sum;
      fail(os.str());
    }
  }
}

double TabularMdp::transition_prob(int s, int a, int next) const {
  return transitions_.coeff(row_index(s, a), next);
}

namespace {

int sample_from(const Vector& probs, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  int last = 0;
  for (int i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return i;
  }
  return last;  // u fell inside rounding slack at the top
}

}  // namespace

int TabularMdp::sample_initial(Rng& rng) const { return sample_from(initial_, rng); }

int TabularMdp::sample_next(int s, int a, Rng& rng) const {
  const int row = row_index(s, a);
  double u = rng.uniform();
  double acc = 0.0;
  int last = -1;
  for (TransitionMatrix::InnerIterator it(transitions_, row); it; ++it) {
    acc += it.value();
    last = it.col();
    if (u < acc) return it.col();
  }
  return last;
}

MdpBuilder::MdpBuilder(int num_states, int num_actions)
    : num_states_(num_states),
      num_actions_(num_actions),
      rewards_(Matrix::Zero(num_states, num_actions)),
      initial_(Vector::Zero(num_states)) {}

MdpBuilder& MdpBuilder::transition(int s, int a, int next, double prob) {
  if (prob != 0.0) triplets_.emplace_back(s * num_actions_ + a, next, prob);
  return *this;
}

MdpBuilder& MdpBuilder::reward(int s, int a, double r) {
  rewards_(s, a) = r;
  return *this;
}

MdpBuilder& MdpBuilder::discount(double gamma) {
  discount_ = gamma;
  return *this;
}

MdpBuilder& MdpBuilder::initial(int s, double prob) {
  initial_[s] += prob;
  return *this;
}

TabularMdp MdpBuilder::build() const {
  TransitionMatrix t(static_cast<long>(num_states_) * num_actions_, num_states_);
  t.setFromTriplets(triplets_.begin(), triplets_.end());  // duplicates accumulate
  return TabularMdp(num_states_, num_actions_, std::move(t), rewards_, discount_, initial_);
}

QTable bellman_backup(const TabularMdp& mdp, const QTable& q) {
  const int S = mdp.num_states();
  const int A = mdp.num_actions();
  check_sa_matrix(q, S, A, "q");
  if (!q.allFinite()) throw DivergenceError("bellman_backup: non-finite Q entries");
  Vector v = q.rowwise().maxCoeff();
  Vector tv = mdp.transitions() * v;  // length S*A, row-major (s, a) order
  using RowMajorMap =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  return mdp.rewards() + mdp.discount() * RowMajorMap(tv.data(), S, A);
}

QTable alpha_smoothed_backup(const TabularMdp& mdp, const QTable& q, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("alpha_smoothed_backup: alpha must lie in (0, 1]");
  if (alpha == 1.0) return bellman_backup(mdp, q);
  return alpha * bellman_backup(mdp, q) + (1.0 - alpha) * q;
}

SolveResult solve_optimal(const TabularMdp& mdp, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("solve_optimal: tol must be positive");
  // gamma-contraction guarantees convergence; the cap is a safety net.
  const int max_iters = 1000000;
  QTable q = QTable::Zero(mdp.num_states(), mdp.num_actions());
  double resid = 0.0;
  for (int k = 1; k <= max_iters; ++k) {
    QTable next = bellman_backup(mdp, q);
    resid = (next - q).cwiseAbs().maxCoeff();
    q.swap(next);
    if (resid <= tol) return {std::move(q), k, resid};
  }
  throw std::runtime_error("solve_optimal: value iteration failed to converge");
}

Policy greedy_policy(const QTable& q, double eps) {
  if (!(eps >= 0.0 && eps <= 1.0))
    throw std::invalid_argument("greedy_policy: eps must lie in [0, 1]");
  if (!q.allFinite()) throw DivergenceError("greedy_policy: non-finite Q entries");
  const int S = static_cast<int>(q.rows());
  const int A = static_cast<int>(q.cols());
  Policy pi{Matrix::Constant(S, A, eps / A)};
  for (int s = 0; s < S; ++s) {
    Eigen::Index best;
    q.row(s).maxCoeff(&best);  // first maximum, i.e. lowest action index
    pi.probs(s, best) += 1.0 - eps;
  }
  return pi;
}

namespace {

// P_pi (S x S) and R_pi assembled once per solve.
struct PolicyModel {
  Eigen::SparseMatrix<double> p;  // column-major for SparseLU
  Vector r;
};

PolicyModel assemble(const TabularMdp& mdp, const Policy& pi, bool transpose) {
  const int S = mdp.num_states();
  const int A = mdp.num_actions();
  check_policy(pi, S, A);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(mdp.transitions().nonZeros()));
  Vector r = Vector::Zero(S);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const double w = pi.probs(s, a);
      r[s] += w * mdp.rewards()(s, a);
      if (w == 0.0) continue;
      const int row = mdp.row_index(s, a);
      for (TransitionMatrix::InnerIterator it(mdp.transitions(), row); it; ++it) {
        if (transpose)
          trip.emplace_back(it.col(), s, w * it.value());
        else
          trip.emplace_back(s, it.col(), w * it.value());
      }
    }
  }
  Eigen::SparseMatrix<double> p(S, S);
  p.setFromTriplets(trip.begin(), trip.end());
  return {std::move(p), std::move(r)};
}

// Direct solve of (I - gamma P) x = b: dense LU for small systems, sparse LU
// above kDenseSolveMax (both are exact direct factorizations).
Vector solve_linear(const Eigen::SparseMatrix<double>& p, double gamma, const Vector& b) {
  const int S = static_cast<int>(p.rows());
  if (S <= kDenseSolveMax) {
    Matrix a = Matrix::Identity(S, S) - gamma * Matrix(p);
    return a.partialPivLu().solve(b);
  }
  Eigen::SparseMatrix<double> a(S, S);
  a.setIdentity();
  a -= gamma * p;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(a);
  if (lu.info() != Eigen::Success)
    throw std::runtime_error("policy solve: sparse LU factorization failed");
  return lu.solve(b);
}

}  // namespace

Vector policy_values(const TabularMdp& mdp, const Policy& pi) {
  PolicyModel m = assemble(mdp, pi, /*transpose=*/false);
  return solve_linear(m.p, mdp.discount(), m.r);
}

double policy_returns(const TabularMdp& mdp, const Policy& pi) {
  return mdp.initial().dot(policy_values(mdp, pi));
}

StateActionDist occupancy(const TabularMdp& mdp, const Policy& pi) {
  PolicyModel m = assemble(mdp, pi, /*transpose=*/true);
  Vector d = (1.0 - mdp.discount()) * solve_linear(m.p, mdp.discount(), mdp.initial());
  StateActionDist out{pi.probs.array().colwise() * d.array()};
  // The linear solve leaves rounding-level dirt; restore the invariants
  // exactly (entries >= 0, total mass 1).
  out.probs = out.probs.cwiseMax(0.0);
  const double total = out.probs.sum();
  if (!(total > 0.0)) throw std::runtime_error("occupancy: degenerate distribution");
  out.probs /= total;
  return out;
}

DistSampler::DistSampler(const StateActionDist& mu)
    : num_actions_(static_cast<int>(mu.probs.cols())) {
  check_dist(mu, static_cast<int>(mu.probs.rows()), num_actions_);
  double acc = 0.0;
  for (int s = 0; s < mu.probs.rows(); ++s) {
    for (int a = 0; a < num_actions_; ++a) {
      const double p = mu.probs(s, a);
      if (p <= 0.0) continue;
      acc += p;
      support_.push_back(s * num_actions_ + a);
      cdf_.push_back(acc);
    }
  }
  if (support_.empty()) throw std::invalid_argument("DistSampler: empty support");
  cdf_.back() = 1.0;  // absorb rounding so the top draw always lands
}

std::pair<int, int> DistSampler::draw(Rng& rng) const {
  const double u = rng.uniform();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  const size_t k = std::min<size_t>(it - cdf_.begin(), support_.size() - 1);
  const int flat = support_[k];
  return {flat / num_actions_, flat % num_actions_};
}

ExpertBaseline compute_expert_baseline(const TabularMdp& mdp, double tol) {
  SolveResult sol = solve_optimal(mdp, tol);
  ExpertBaseline b;
  b.expert_return = mdp.initial().dot(sol.q.rowwise().maxCoeff());
  b.q_star_linf = sol.q.cwiseAbs().maxCoeff();
  b.vi_iterations = sol.iterations;
  b.q_star = std::move(sol.q);
  return b;
}

double normalize_by_expert(double value, const ExpertBaseline& baseline) {
  if (std::abs(baseline.expert_return) < 1e-12)
    throw std::domain_error("normalize_by_expert: eta(pi*) is zero");
  return value / baseline.expert_return;
}

double normalize_by_expert(double value, const TabularMdp& mdp) {
  return normalize_by_expert(value, compute_expert_baseline(mdp));
}

}  // namespace qdiag
