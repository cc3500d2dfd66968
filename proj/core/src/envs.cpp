#include "qdiag/envs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

namespace qdiag {

namespace {

constexpr int kLayoutAttempts = 100;

// --- small helpers -------------------------------------------------------

int edit_distance(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

[[noreturn]] void unknown_env(const std::string& name) {
  std::string best;
  int best_d = 1 << 30;
  for (const auto& cand : default_suite_names()) {
    const int d = edit_distance(name, cand);
    if (d < best_d) {
      best_d = d;
      best = cand;
    }
  }
  std::ostringstream os;
  os << "unknown env '" << name << "'";
  if (!best.empty()) os << "; did you mean '" << best << "'?";
  throw std::invalid_argument(os.str());
}

Matrix normal_observations(int states, int dim, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "obs");
  Matrix obs(states, dim);
  for (int s = 0; s < states; ++s)
    for (int d = 0; d < dim; ++d) obs(s, d) = rng.normal();
  return obs;
}

// Nearest-cell index on a clamped uniform grid of `bins` cell centers.
int snap_clamped(double x, double lo, double hi, int bins) {
  const double w = (hi - lo) / bins;
  const long k = std::llround((x - lo) / w - 0.5);
  return static_cast<int>(std::clamp(k, 0l, static_cast<long>(bins - 1)));
}

// Same on a wrapped angle grid over [-pi, pi).
int snap_angle(double theta, int bins) {
  const double pi = 3.14159265358979323846;
  const double w = 2.0 * pi / bins;
  long k = std::llround((theta + pi) / w - 0.5);
  k %= bins;
  if (k < 0) k += bins;
  return static_cast<int>(k);
}

}  // namespace

// --- names ----------------------------------------------------------------

std::string EnvSpec::canonical_name() const {
  std::ostringstream os;
  os << family << "-" << size;
  if (family == "gridworld") os << "-" << obs_kind;
  return os.str();
}

EnvSpec parse_env_name(const std::string& name) {
  std::vector<std::string> parts;
  std::string tok;
  std::istringstream is(name);
  while (std::getline(is, tok, '-')) parts.push_back(tok);
  if (parts.empty()) unknown_env(name);

  auto parse_size = [&](const std::string& text) {
    try {
      size_t pos = 0;
      const int v = std::stoi(text, &pos);
      if (pos != text.size() || v <= 0) unknown_env(name);
      return v;
    } catch (const std::invalid_argument&) {
      unknown_env(name);
    } catch (const std::out_of_range&) {
      unknown_env(name);
    }
  };

  EnvSpec spec;
  spec.family = parts[0];
  if (spec.family == "gridworld") {
    if (parts.size() < 2 || parts.size() > 3) unknown_env(name);
    spec.size = parse_size(parts[1]);
    spec.obs_kind = parts.size() == 3 ? parts[2] : "onehot";
    if (spec.obs_kind != "onehot" && spec.obs_kind != "xy" && spec.obs_kind != "random")
      unknown_env(name);
  } else if (spec.family == "cliffwalk" || spec.family == "pendulum" ||
             spec.family == "mountaincar" || spec.family == "sparsegraph") {
    if (parts.size() != 2) unknown_env(name);
    spec.size = parse_size(parts[1]);
  } else {
    unknown_env(name);
  }
  return spec;
}

BuiltEnv build_env(const EnvSpec& spec) {
  if (spec.family == "gridworld") return make_gridworld(spec.size, spec.obs_kind, spec.seed);
  if (spec.family == "cliffwalk") return make_cliffwalk(spec.size, spec.seed);
  if (spec.family == "pendulum") return make_pendulum(spec.size, spec.seed);
  if (spec.family == "mountaincar") return make_mountaincar(spec.size, spec.seed);
  if (spec.family == "sparsegraph") return make_sparsegraph(spec.size, spec.seed);
  unknown_env(spec.canonical_name());
}

BuiltEnv build_env(const std::string& name, std::uint64_t suite_seed) {
  EnvSpec spec = parse_env_name(name);
  spec.seed = derive_seed(suite_seed, spec.canonical_name());
  return build_env(spec);
}

std::vector<std::string> default_suite_names() {
  return {"gridworld-16-onehot", "gridworld-16-random", "gridworld-64-xy",
          "gridworld-64-random", "cliffwalk-16",        "pendulum-32",
          "mountaincar-32",      "sparsegraph-256"};
}

std::vector<BuiltEnv> default_suite(std::uint64_t seed) {
  std::vector<BuiltEnv> suite;
  for (const auto& name : default_suite_names()) suite.push_back(build_env(name, seed));
  return suite;
}

// --- gridworld --------------------------------------------------------------

BuiltEnv make_gridworld(int n, const std::string& obs_kind, std::uint64_t seed,
                        double wall_frac, double slip) {
  if (n < 3) throw std::invalid_argument("gridworld: n must be >= 3");
  if (!(wall_frac >= 0.0 && wall_frac < 1.0) || !(slip >= 0.0 && slip < 1.0))
    throw std::invalid_argument("gridworld: wall_frac and slip must lie in [0, 1)");
  const int S = n * n;
  const int A = 4;
  const auto id = [n](int r, int c) { return r * n + c; };

  Rng layout = Rng::stream(seed, "layout");
  std::vector<char> wall(S, 0);
  int start = -1, goal = -1;
  bool connected = false;
  for (int attempt = 0; attempt < kLayoutAttempts && !connected; ++attempt) {
    std::fill(wall.begin(), wall.end(), 0);
    for (int r = 1; r < n - 1; ++r)
      for (int c = 1; c < n - 1; ++c)
        if (layout.bernoulli(wall_frac)) wall[id(r, c)] = 1;
    std::vector<int> free_cells;
    for (int s = 0; s < S; ++s)
      if (!wall[s]) free_cells.push_back(s);
    start = free_cells[layout.index(static_cast<int>(free_cells.size()))];
    do {
      goal = free_cells[layout.index(static_cast<int>(free_cells.size()))];
    } while (goal == start);

    std::vector<char> seen(S, 0);
    std::deque<int> queue{start};
    seen[start] = 1;
    while (!queue.empty()) {
      const int s = queue.front();
      queue.pop_front();
      const int r = s / n, c = s % n;
      const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& rc : nbr) {
        if (rc[0] < 0 || rc[0] >= n || rc[1] < 0 || rc[1] >= n) continue;
        const int t = id(rc[0], rc[1]);
        if (wall[t] || seen[t]) continue;
        seen[t] = 1;
        queue.push_back(t);
      }
    }
    connected = seen[goal];
  }
  if (!connected)
    throw std::runtime_error("gridworld: no connected layout found in 100 attempts");

  MdpBuilder b(S, A);
  // action order: up, down, left, right
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  for (int s = 0; s < S; ++s) {
    if (wall[s]) {
      for (int a = 0; a < A; ++a) b.transition(s, a, s, 1.0);
      continue;
    }
    const int r = s / n, c = s % n;
    for (int a = 0; a < A; ++a) {
      for (int d = 0; d < 4; ++d) {
        const double p = (d == a) ? 1.0 - slip : slip / 3.0;
        const int rr = r + dr[d], cc = c + dc[d];
        const bool blocked = rr < 0 || rr >= n || cc < 0 || cc >= n || wall[id(rr, cc)];
        b.transition(s, a, blocked ? s : id(rr, cc), p);
      }
    }
  }

  const int gr = goal / n, gc = goal % n;
  const int d0 = std::abs(start / n - gr) + std::abs(start % n - gc);
  for (int s = 0; s < S; ++s) {
    if (wall[s]) continue;
    const int d = std::abs(s / n - gr) + std::abs(s % n - gc);
    const double r = std::clamp(1.0 - static_cast<double>(d) / d0, 0.0, 1.0);
    for (int a = 0; a < A; ++a) b.reward(s, a, r);
  }
  b.initial(start, 1.0);

  Matrix obs;
  if (obs_kind == "onehot") {
    obs = Matrix::Identity(S, S);
  } else if (obs_kind == "xy") {
    obs = Matrix::Zero(S, 2 * n);
    for (int s = 0; s < S; ++s) {
      obs(s, s / n) = 1.0;
      obs(s, n + s % n) = 1.0;
    }
  } else if (obs_kind == "random") {
    obs = normal_observations(S, n, seed);
  } else {
    throw std::invalid_argument("gridworld: obs_kind must be onehot, xy or random");
  }

  return {EnvSpec{"gridworld", n, obs_kind, seed}, b.build(), std::move(obs)};
}

// --- cliffwalk ---------------------------------------------------------------

BuiltEnv make_cliffwalk(int length, std::uint64_t seed) {
  if (length < 2) throw std::invalid_argument("cliffwalk: length must be >= 2");
  MdpBuilder b(length, 2);
  for (int s = 0; s < length; ++s) {
    b.transition(s, 0, std::min(s + 1, length - 1), 1.0);  // advance
    b.transition(s, 1, 0, 1.0);                            // return to start
  }
  b.reward(length - 1, 0, 1.0);
  b.initial(0, 1.0);
  return {EnvSpec{"cliffwalk", length, "", seed}, b.build(),
          normal_observations(length, 16, seed)};
}

// --- pendulum ----------------------------------------------------------------

BuiltEnv make_pendulum(int bins, std::uint64_t seed) {
  if (bins < 2) throw std::invalid_argument("pendulum: bins must be >= 2");
  const double pi = 3.14159265358979323846;
  const double max_speed = 8.0, max_torque = 2.0, dt = 0.05, g = 10.0, m = 1.0, l = 1.0;
  const int B = bins, S = B * B, A = 5;
  const auto theta_of = [&](int i) { return -pi + (i + 0.5) * 2.0 * pi / B; };
  const auto speed_of = [&](int j) { return -max_speed + (j + 0.5) * 2.0 * max_speed / B; };
  const auto id = [B](int i, int j) { return i * B + j; };

  MdpBuilder b(S, A);
  for (int i = 0; i < B; ++i) {
    const double th = theta_of(i);
    const double r = 0.5 * (1.0 + std::cos(th));
    for (int j = 0; j < B; ++j) {
      const double thdot = speed_of(j);
      for (int a = 0; a < A; ++a) {
        const double u = -max_torque + a;  // {-2, -1, 0, 1, 2}
        double nd = thdot + (3.0 * g / (2.0 * l) * std::sin(th) + 3.0 / (m * l * l) * u) * dt;
        nd = std::clamp(nd, -max_speed, max_speed);
        const double nth = th + nd * dt;
        b.transition(id(i, j), a, id(snap_angle(nth, B), snap_clamped(nd, -max_speed, max_speed, B)), 1.0);
        b.reward(id(i, j), a, r);
      }
    }
  }
  // start: rest, hanging down — nearest cell to (theta = pi, thetadot = 0)
  b.initial(id(snap_angle(pi, B), snap_clamped(0.0, -max_speed, max_speed, B)), 1.0);

  Matrix obs(S, 3);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < B; ++j)
      obs.row(id(i, j)) << std::sin(theta_of(i)), std::cos(theta_of(i)), speed_of(j);

  return {EnvSpec{"pendulum", bins, "", seed}, b.build(), std::move(obs)};
}

// --- mountain car --------------------------------------------------------------

BuiltEnv make_mountaincar(int bins, std::uint64_t seed) {
  if (bins < 4) throw std::invalid_argument("mountaincar: bins must be >= 4");
  const double pos_lo = -1.2, pos_hi = 0.6, vel_lo = -0.07, vel_hi = 0.07;
  const double goal_pos = 0.5, force = 0.001, gravity = 0.0025;
  // One raw update moves the car by less than half a cell at B=32; integrate
  // several before snapping or the discretized car can never leave a cell.
  const int kSubsteps = 6;
  const int B = bins, S = B * B, A = 3;
  const auto pos_of = [&](int i) { return pos_lo + (i + 0.5) * (pos_hi - pos_lo) / B; };
  const auto vel_of = [&](int j) { return vel_lo + (j + 0.5) * (vel_hi - vel_lo) / B; };
  const auto id = [B](int i, int j) { return i * B + j; };

  int first_goal = B;  // lowest position index whose center is in the goal region
  for (int i = 0; i < B; ++i)
    if (pos_of(i) >= goal_pos) {
      first_goal = i;
      break;
    }
  if (first_goal == B) throw std::invalid_argument("mountaincar: no cell reaches the goal");

  MdpBuilder b(S, A);
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < B; ++j) {
      const int s = id(i, j);
      if (i >= first_goal) {  // absorbing goal region
        for (int a = 0; a < A; ++a) {
          b.transition(s, a, s, 1.0);
          b.reward(s, a, 1.0);
        }
        continue;
      }
      for (int a = 0; a < A; ++a) {
        double p = pos_of(i), v = vel_of(j);
        for (int step = 0; step < kSubsteps; ++step) {
          v = std::clamp(v + (a - 1) * force - gravity * std::cos(3.0 * p), vel_lo, vel_hi);
          p = std::clamp(p + v, pos_lo, pos_hi);
          if (p <= pos_lo && v < 0.0) v = 0.0;
          if (p >= goal_pos) break;
        }
        int ip = snap_clamped(p, pos_lo, pos_hi, B);
        if (p >= goal_pos) ip = std::max(ip, first_goal);
        b.transition(s, a, id(ip, snap_clamped(v, vel_lo, vel_hi, B)), 1.0);
      }
    }
  }
  // start: position uniform over cells with center in [-0.6, -0.4], at rest
  const int jv = snap_clamped(0.0, vel_lo, vel_hi, B);
  std::vector<int> start_cols;
  for (int i = 0; i < B; ++i)
    if (pos_of(i) >= -0.6 && pos_of(i) <= -0.4) start_cols.push_back(i);
  if (start_cols.empty()) start_cols.push_back(snap_clamped(-0.5, pos_lo, pos_hi, B));
  for (int i : start_cols) b.initial(id(i, jv), 1.0 / start_cols.size());

  Matrix obs(S, 2);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < B; ++j) obs.row(id(i, j)) << pos_of(i), vel_of(j);

  return {EnvSpec{"mountaincar", bins, "", seed}, b.build(), std::move(obs)};
}

// --- sparse graph ----------------------------------------------------------------

BuiltEnv make_sparsegraph(int states, std::uint64_t seed) {
  if (states < 2) throw std::invalid_argument("sparsegraph: need at least 2 states");
  const int S = states, A = 2;
  Rng layout = Rng::stream(seed, "layout");

  std::vector<int> target(static_cast<size_t>(S) * A);
  int goal = -1, start = -1;
  bool connected = false;
  for (int attempt = 0; attempt < kLayoutAttempts && !connected; ++attempt) {
    for (auto& t : target) t = layout.index(S);
    goal = layout.index(S);
    do {
      start = layout.index(S);
    } while (start == goal);

    std::vector<char> seen(S, 0);
    std::deque<int> queue{start};
    seen[start] = 1;
    while (!queue.empty()) {
      const int s = queue.front();
      queue.pop_front();
      for (int a = 0; a < A; ++a) {
        const int t = target[static_cast<size_t>(s) * A + a];
        if (!seen[t]) {
          seen[t] = 1;
          queue.push_back(t);
        }
      }
    }
    connected = seen[goal];
  }
  if (!connected)
    throw std::runtime_error("sparsegraph: no connected layout found in 100 attempts");

  MdpBuilder b(S, A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      if (s == goal) {
        b.transition(s, a, s, 1.0);
        b.reward(s, a, 1.0);
      } else {
        b.transition(s, a, target[static_cast<size_t>(s) * A + a], 1.0);
      }
    }
  }
  b.initial(start, 1.0);
  return {EnvSpec{"sparsegraph", states, "", seed}, b.build(), Matrix::Identity(S, S)};
}

}  // namespace qdiag
