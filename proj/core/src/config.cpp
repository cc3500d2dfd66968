#include "qdiag/config.hpp"

#include <fstream>
#include <sstream>

#include "qdiag/envs.hpp"
#include "qdiag/fqi.hpp"
#include "qdiag/weighting.hpp"

namespace qdiag {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream is(s);
  while (std::getline(is, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

[[noreturn]] void bad_line(int line, const std::string& msg) {
  std::ostringstream os;
  os << "config line " << line << ": " << msg;
  throw std::invalid_argument(os.str());
}

double parse_double(const std::string& v, int line) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) bad_line(line, "trailing characters in number '" + v + "'");
    return x;
  } catch (const std::invalid_argument&) {
    bad_line(line, "expected a number, got '" + v + "'");
  } catch (const std::out_of_range&) {
    bad_line(line, "number out of range: '" + v + "'");
  }
}

int parse_int(const std::string& v, int line) {
  const double x = parse_double(v, line);
  const int i = static_cast<int>(x);
  if (static_cast<double>(i) != x) bad_line(line, "expected an integer, got '" + v + "'");
  return i;
}

bool parse_bool(const std::string& v, int line) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_line(line, "expected a boolean, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& v, int line) {
  try {
    size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) bad_line(line, "trailing characters in seed '" + v + "'");
    return static_cast<std::uint64_t>(x);
  } catch (const std::invalid_argument&) {
    bad_line(line, "expected an unsigned integer, got '" + v + "'");
  } catch (const std::out_of_range&) {
    bad_line(line, "seed out of range: '" + v + "'");
  }
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string raw;
  std::string section;  // "", "fit" or "afm"
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;

    if (line.back() == ':' && line.find('=') == std::string::npos) {
      section = trim(line.substr(0, line.size() - 1));
      if (section != "fit" && section != "afm")
        bad_line(lineno, "unknown section '" + section + "' (expected fit: or afm:)");
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) bad_line(lineno, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) bad_line(lineno, "empty key");
    if (value.empty()) bad_line(lineno, "empty value for '" + key + "'");

    if (section == "fit") {
      if (key == "step_size") cfg.fit.step_size = parse_double(value, lineno);
      else if (key == "beta1") cfg.fit.beta1 = parse_double(value, lineno);
      else if (key == "beta2") cfg.fit.beta2 = parse_double(value, lineno);
      else if (key == "adam_eps") cfg.fit.adam_eps = parse_double(value, lineno);
      else if (key == "max_steps") cfg.fit.max_steps = parse_int(value, lineno);
      else if (key == "minibatch") cfg.fit.minibatch = parse_int(value, lineno);
      else if (key == "stop_tol") cfg.fit.stop_tol = parse_double(value, lineno);
      else if (key == "snapshot_interval") cfg.fit.snapshot_interval = parse_int(value, lineno);
      else bad_line(lineno, "unknown fit key '" + key + "'");
      continue;
    }
    if (section == "afm") {
      if (key == "epsilon") cfg.afm.epsilon = parse_double(value, lineno);
      else if (key == "renyi_coeff") cfg.afm.renyi_coeff = parse_double(value, lineno);
      else if (key == "renyi_c") cfg.afm.renyi_c = parse_double(value, lineno);
      else if (key == "delta_conf") cfg.afm.delta_conf = parse_double(value, lineno);
      else if (key == "inner_steps") cfg.afm.inner_steps = parse_int(value, lineno);
      else if (key == "replay_step") cfg.afm.replay_step = parse_double(value, lineno);
      else if (key == "exact_step") cfg.afm.exact_step = parse_double(value, lineno);
      else if (key == "dual_step") cfg.afm.dual_step = parse_double(value, lineno);
      else if (key == "param_clip") cfg.afm.param_clip = parse_double(value, lineno);
      else bad_line(lineno, "unknown afm key '" + key + "'");
      continue;
    }

    if (key == "algorithm") cfg.algorithm = value;
    else if (key == "envs") cfg.envs = split_list(value);
    else if (key == "archs") cfg.archs = split_list(value);
    else if (key == "weightings") cfg.weightings = split_list(value);
    else if (key == "seeds") {
      cfg.seeds.clear();
      for (const auto& tok : split_list(value)) cfg.seeds.push_back(parse_u64(tok, lineno));
      if (cfg.seeds.empty()) bad_line(lineno, "empty seed list");
    } else if (key == "out") cfg.out_dir = value;
    else if (key == "jobs") cfg.jobs = parse_int(value, lineno);
    else if (key == "suite_seed") cfg.suite_seed = parse_u64(value, lineno);
    else if (key == "iterations") cfg.iterations = parse_int(value, lineno);
    else if (key == "alpha") cfg.alpha = parse_double(value, lineno);
    else if (key == "exploration_eps") cfg.exploration_eps = parse_double(value, lineno);
    else if (key == "samples_per_iter") cfg.samples_per_iter = parse_int(value, lineno);
    else if (key == "online_samples_per_iter")
      cfg.online_samples_per_iter = parse_int(value, lineno);
    else if (key == "buffer_capacity") cfg.buffer_capacity = parse_int(value, lineno);
    else if (key == "grad_steps_per_sample")
      cfg.grad_steps_per_sample = parse_double(value, lineno);
    else if (key == "early_stop") cfg.early_stop = value;
    else if (key == "store_q_snapshots") cfg.store_q_snapshots = parse_bool(value, lineno);
    else bad_line(lineno, "unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config_text(os.str());
}

void ExperimentConfig::validate() const {
  const Algorithm algo = parse_algorithm(algorithm);
  for (const auto& name : envs) parse_env_name(name);  // throws on bad names
  if (archs.empty()) throw std::invalid_argument("config: archs must not be empty");
  for (const auto& a : archs) ArchSpec::parse(a);
  if (weightings.empty()) throw std::invalid_argument("config: weightings must not be empty");
  for (const auto& w : weightings) {
    if (algo == Algorithm::replay)
      parse_overlay(w);
    else
      parse_weighting(w);
  }
  if (seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
  parse_early_stop(early_stop);
  if (iterations < 1) throw std::invalid_argument("config: iterations must be >= 1");
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("config: alpha must lie in (0, 1]");
  if (!(exploration_eps >= 0.0 && exploration_eps <= 1.0))
    throw std::invalid_argument("config: exploration_eps must lie in [0, 1]");
  if (samples_per_iter < 1 || online_samples_per_iter < 1 || buffer_capacity < 1)
    throw std::invalid_argument("config: sample counts must be >= 1");
  if (grad_steps_per_sample <= 0.0)
    throw std::invalid_argument("config: grad_steps_per_sample must be positive");
  if (fit.max_steps < 1) throw std::invalid_argument("config: fit.max_steps must be >= 1");
  if (fit.minibatch < 0) throw std::invalid_argument("config: fit.minibatch must be >= 0");
  if (!(fit.step_size > 0.0)) throw std::invalid_argument("config: fit.step_size must be > 0");
  if (jobs < 0) throw std::invalid_argument("config: jobs must be >= 0");
}

namespace {

void put(std::ostringstream& os, const char* key, const std::string& v) {
  os << key << "=" << v << "\n";
}
void put_list(std::ostringstream& os, const char* key, const std::vector<std::string>& v) {
  os << key << "=";
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  os << "\n";
}

std::string num(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

}  // namespace

std::string ExperimentConfig::canonical_text() const {
  std::ostringstream os;
  put(os, "algorithm", algorithm);
  std::vector<std::string> env_list = envs.empty() ? default_suite_names() : envs;
  put_list(os, "envs", env_list);
  put_list(os, "archs", archs);
  put_list(os, "weightings", weightings);
  os << "seeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << "\n";
  put(os, "suite_seed", std::to_string(suite_seed));
  put(os, "iterations", std::to_string(iterations));
  put(os, "alpha", num(alpha));
  put(os, "exploration_eps", num(exploration_eps));
  put(os, "samples_per_iter", std::to_string(samples_per_iter));
  put(os, "online_samples_per_iter", std::to_string(online_samples_per_iter));
  put(os, "buffer_capacity", std::to_string(buffer_capacity));
  put(os, "grad_steps_per_sample", num(grad_steps_per_sample));
  put(os, "early_stop", early_stop);
  put(os, "store_q_snapshots", store_q_snapshots ? "true" : "false");
  put(os, "fit.step_size", num(fit.step_size));
  put(os, "fit.beta1", num(fit.beta1));
  put(os, "fit.beta2", num(fit.beta2));
  put(os, "fit.adam_eps", num(fit.adam_eps));
  put(os, "fit.max_steps", std::to_string(fit.max_steps));
  put(os, "fit.minibatch", std::to_string(fit.minibatch));
  put(os, "fit.stop_tol", num(fit.stop_tol));
  put(os, "fit.snapshot_interval", std::to_string(fit.snapshot_interval));
  put(os, "afm.epsilon", num(afm.epsilon));
  put(os, "afm.renyi_coeff", num(afm.renyi_coeff));
  put(os, "afm.renyi_c", num(afm.renyi_c));
  put(os, "afm.delta_conf", num(afm.delta_conf));
  put(os, "afm.inner_steps", std::to_string(afm.inner_steps));
  put(os, "afm.replay_step", num(afm.replay_step));
  put(os, "afm.exact_step", num(afm.exact_step));
  put(os, "afm.dual_step", num(afm.dual_step));
  put(os, "afm.param_clip", num(afm.param_clip));
  return os.str();
}

std::string ExperimentConfig::hash() const {
  const std::uint64_t h = fnv1a64(canonical_text());
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace qdiag
