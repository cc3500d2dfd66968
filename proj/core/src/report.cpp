#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "qdiag/runner.hpp"

namespace fs = std::filesystem;

namespace qdiag {

namespace {

constexpr const char* kCsvHeader =
    "iter,return_norm,linf_norm,proj_err_norm,bellman_loss,tv_shift,loss_shift,entropy_norm,"
    "diverged";

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  return out;
}

RunRecord parse_cell_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw std::runtime_error(path.string() + ": unexpected csv header");
  RunRecord rec;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 9) throw std::runtime_error(path.string() + ": malformed row");
    IterationRow r;
    r.iter = std::stoi(f[0]);
    r.return_norm = std::stod(f[1]);
    r.linf_norm = std::stod(f[2]);
    rec.proj_err_norm = std::stod(f[3]);
    r.bellman_loss = std::stod(f[4]);
    r.tv_shift = std::stod(f[5]);
    r.loss_shift = std::stod(f[6]);
    r.entropy_norm = std::stod(f[7]);
    r.diverged = std::stoi(f[8]) != 0;
    if (r.diverged) rec.diverged = true;
    rec.rows.push_back(r);
  }
  if (!rec.rows.empty() && !std::isfinite(rec.rows.back().return_norm)) rec.halted_early = true;
  return rec;
}

// Last row with a finite return; nullptr when the whole run blew up.
const IterationRow* final_row(const RunRecord& rec) {
  for (auto it = rec.rows.rbegin(); it != rec.rows.rend(); ++it)
    if (std::isfinite(it->return_norm)) return &*it;
  return nullptr;
}

struct Stats {
  double mean = std::nan("");
  double se = 0.0;
  int n = 0;
};

Stats stats_of(const std::vector<double>& xs) {
  Stats s;
  double sum = 0.0;
  for (double x : xs)
    if (std::isfinite(x)) {
      sum += x;
      ++s.n;
    }
  if (s.n == 0) return s;
  s.mean = sum / s.n;
  if (s.n > 1) {
    double ss = 0.0;
    for (double x : xs)
      if (std::isfinite(x)) ss += (x - s.mean) * (x - s.mean);
    s.se = std::sqrt(ss / (s.n - 1)) / std::sqrt(double(s.n));
  }
  return s;
}

using GroupKey = std::tuple<std::string, std::string, std::string>;  // env, arch, weighting

// Fixed presentation order for the weighting menu; anything unknown sorts
// after, alphabetically.
int weighting_rank(const std::string& w) {
  static const char* order[] = {"unif",   "pi",     "pistar", "random", "prioritized",
                                "replay", "replay10", "afm",  "none"};
  for (int i = 0; i < int(std::size(order)); ++i)
    if (w == order[i]) return i;
  return int(std::size(order));
}

bool arch_less(const std::string& a, const std::string& b) {
  auto key = [](const std::string& s) {
    if (s == "tabular") return std::pair<int, std::string>(0, s);
    return std::pair<int, std::string>(1 + int(s.size()), s);
  };
  return key(a) < key(b);
}

// ---- minimal SVG writer ----------------------------------------------------

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

class Svg {
 public:
  Svg(double xmin, double xmax, double ymin, double ymax, std::string title,
      std::string xlabel, std::string ylabel)
      : xmin_(xmin), xmax_(xmax), ymin_(ymin), ymax_(ymax) {
    if (!(xmax_ > xmin_)) xmax_ = xmin_ + 1.0;
    if (!(ymax_ > ymin_)) ymax_ = ymin_ + 1.0;
    body_ << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kW << "' height='" << kH
          << "' viewBox='0 0 " << kW << " " << kH << "'>\n"
          << "<rect width='100%' height='100%' fill='white'/>\n"
          << "<text x='" << kW / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title
          << "</text>\n"
          << "<text x='" << (kL + kPW / 2) << "' y='" << (kH - 6)
          << "' text-anchor='middle' font-size='11'>" << xlabel << "</text>\n"
          << "<text x='14' y='" << (kT + kPH / 2)
          << "' text-anchor='middle' font-size='11' transform='rotate(-90 14 "
          << (kT + kPH / 2) << ")'>" << ylabel << "</text>\n";
    axes();
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const char* color) {
    body_ << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
    for (const auto& [x, y] : pts)
      if (std::isfinite(x) && std::isfinite(y)) body_ << px(x) << "," << py(y) << " ";
    body_ << "'/>\n";
  }

  void dot(double x, double y, const char* color) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    body_ << "<circle cx='" << px(x) << "' cy='" << py(y) << "' r='3' fill='" << color
          << "' fill-opacity='0.75'/>\n";
  }

  void legend_entry(const std::string& label, const char* color) {
    const double y = kT + 14 + 14 * legend_n_++;
    body_ << "<rect x='" << (kL + kPW - 118) << "' y='" << (y - 8)
          << "' width='10' height='10' fill='" << color << "'/>\n<text x='"
          << (kL + kPW - 104) << "' y='" << y << "' font-size='10'>" << label << "</text>\n";
  }

  void write(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << body_.str() << "</svg>\n";
  }

 private:
  static constexpr int kW = 640, kH = 440, kL = 56, kT = 34;
  static constexpr int kPW = kW - kL - 24, kPH = kH - kT - 44;

  double px(double x) const { return kL + (x - xmin_) / (xmax_ - xmin_) * kPW; }
  double py(double y) const { return kT + kPH - (y - ymin_) / (ymax_ - ymin_) * kPH; }

  void axes() {
    body_ << "<rect x='" << kL << "' y='" << kT << "' width='" << kPW << "' height='" << kPH
          << "' fill='none' stroke='black'/>\n";
    for (int i = 0; i <= 5; ++i) {
      const double fx = xmin_ + (xmax_ - xmin_) * i / 5.0;
      const double fy = ymin_ + (ymax_ - ymin_) * i / 5.0;
      char lx[32], ly[32];
      std::snprintf(lx, sizeof(lx), "%.3g", fx);
      std::snprintf(ly, sizeof(ly), "%.3g", fy);
      body_ << "<line x1='" << px(fx) << "' y1='" << (kT + kPH) << "' x2='" << px(fx)
            << "' y2='" << (kT + kPH + 4) << "' stroke='black'/>\n<text x='" << px(fx)
            << "' y='" << (kT + kPH + 16) << "' text-anchor='middle' font-size='10'>" << lx
            << "</text>\n";
      body_ << "<line x1='" << (kL - 4) << "' y1='" << py(fy) << "' x2='" << kL << "' y2='"
            << py(fy) << "' stroke='black'/>\n<text x='" << (kL - 6) << "' y='"
            << (py(fy) + 3) << "' text-anchor='end' font-size='10'>" << ly << "</text>\n";
    }
  }

  double xmin_, xmax_, ymin_, ymax_;
  int legend_n_ = 0;
  std::ostringstream body_;
};

}  // namespace

std::vector<RunRecord> load_records(const std::string& out_root) {
  std::vector<RunRecord> records;
  const fs::path root(out_root);
  if (!fs::is_directory(root)) throw std::runtime_error("no such result tree: " + out_root);
  std::vector<fs::path> files;
  for (const auto& env : fs::directory_iterator(root)) {
    if (!env.is_directory() || env.path().filename() == "plots") continue;
    for (const auto& arch : fs::directory_iterator(env.path())) {
      if (!arch.is_directory()) continue;
      for (const auto& w : fs::directory_iterator(arch.path())) {
        if (!w.is_directory()) continue;
        for (const auto& f : fs::directory_iterator(w.path())) files.push_back(f.path());
      }
    }
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& p : files) {
    const std::string name = p.filename().string();
    const fs::path wdir = p.parent_path();
    auto ids = [&](RunRecord& rec, const std::string& stem) {
      rec.weighting = wdir.filename().string();
      rec.arch = wdir.parent_path().filename().string();
      rec.env = wdir.parent_path().parent_path().filename().string();
      rec.seed = std::stoull(stem);
    };
    if (p.extension() == ".csv") {
      RunRecord rec = parse_cell_csv(p);
      ids(rec, p.stem().string());
      records.push_back(std::move(rec));
    } else if (name.size() > 10 && name.substr(name.size() - 10) == ".error.txt") {
      RunRecord rec;
      ids(rec, name.substr(0, name.size() - 10));
      std::ifstream in(p);
      std::getline(in, rec.error);
      if (rec.error.empty()) rec.error = "unknown error";
      records.push_back(std::move(rec));
    }
  }
  return records;
}

void write_summary(const std::string& out_root, const std::vector<RunRecord>& records) {
  struct Group {
    std::vector<double> final_return, final_linf, proj_err, final_bellman;
    std::vector<double> tv, loss_shift, entropy;
    int n = 0, diverged = 0;
  };
  std::map<GroupKey, Group> groups;
  for (const RunRecord& rec : records) {
    if (!rec.error.empty()) continue;
    Group& g = groups[{rec.env, rec.arch, rec.weighting}];
    ++g.n;
    if (rec.diverged) ++g.diverged;
    if (const IterationRow* last = final_row(rec)) {
      g.final_return.push_back(last->return_norm);
      g.final_linf.push_back(last->linf_norm);
      g.final_bellman.push_back(last->bellman_loss);
      g.proj_err.push_back(rec.proj_err_norm);
    }
    for (const IterationRow& r : rec.rows) {
      g.entropy.push_back(r.entropy_norm);
      if (r.iter >= 1) {
        g.tv.push_back(r.tv_shift);
        g.loss_shift.push_back(r.loss_shift);
      }
    }
  }
  std::ofstream out(fs::path(out_root) / "summary.csv");
  if (!out) throw std::runtime_error("cannot write summary.csv");
  out << "env,arch,weighting,n_seeds,final_return_mean,final_return_se,final_linf_mean,"
         "final_linf_se,proj_err_mean,final_bellman_mean,tv_shift_mean,loss_shift_mean,"
         "entropy_mean,divergence_rate\n";
  for (const auto& [key, g] : groups) {
    const Stats ret = stats_of(g.final_return), linf = stats_of(g.final_linf);
    out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ','
        << g.n << ',' << fmt(ret.mean) << ',' << fmt(ret.se) << ',' << fmt(linf.mean) << ','
        << fmt(linf.se) << ',' << fmt(stats_of(g.proj_err).mean) << ','
        << fmt(stats_of(g.final_bellman).mean) << ',' << fmt(stats_of(g.tv).mean) << ','
        << fmt(stats_of(g.loss_shift).mean) << ',' << fmt(stats_of(g.entropy).mean) << ','
        << fmt(g.n ? double(g.diverged) / g.n : 0.0) << "\n";
  }
}

void write_table1(const std::string& out_root, const std::vector<RunRecord>& records,
                  std::ostream* warnings) {
  std::vector<std::string> archs, weightings;
  std::map<std::pair<std::string, std::string>, std::vector<double>> cells;
  std::map<std::pair<std::string, std::string>, int> present;
  std::map<std::pair<std::string, std::uint64_t>, bool> env_seeds;
  for (const RunRecord& rec : records) {
    if (std::find(archs.begin(), archs.end(), rec.arch) == archs.end())
      archs.push_back(rec.arch);
    if (std::find(weightings.begin(), weightings.end(), rec.weighting) == weightings.end())
      weightings.push_back(rec.weighting);
    env_seeds[{rec.env, rec.seed}] = true;
    if (rec.error.empty())
      if (const IterationRow* last = final_row(rec)) {
        cells[{rec.weighting, rec.arch}].push_back(last->return_norm);
        ++present[{rec.weighting, rec.arch}];
      }
  }
  std::sort(archs.begin(), archs.end(), arch_less);
  std::sort(weightings.begin(), weightings.end(), [](const auto& a, const auto& b) {
    const int ra = weighting_rank(a), rb = weighting_rank(b);
    return ra != rb ? ra < rb : a < b;
  });

  std::ofstream out(fs::path(out_root) / "table1.csv");
  if (!out) throw std::runtime_error("cannot write table1.csv");
  out << "weighting";
  for (const auto& a : archs) out << ',' << a;
  out << "\n";
  std::vector<std::string> warn_lines;
  const int expected = int(env_seeds.size());
  for (const auto& w : weightings) {
    out << w;
    for (const auto& a : archs) {
      auto it = cells.find({w, a});
      if (it == cells.end()) {
        out << ',';
        warn_lines.push_back("missing cell " + w + "/" + a);
        continue;
      }
      out << ',' << fmt(stats_of(it->second).mean);
      if (present[{w, a}] < expected)
        warn_lines.push_back("incomplete cell " + w + "/" + a + " (" +
                             std::to_string(present[{w, a}]) + "/" +
                             std::to_string(expected) + " runs)");
    }
    out << "\n";
  }
  for (const auto& wl : warn_lines) {
    out << "# warning: " << wl << "\n";
    if (warnings) *warnings << "warning: " << wl << "\n";
  }
}

void write_plots(const std::string& out_root, const std::vector<RunRecord>& records) {
  const fs::path dir = fs::path(out_root) / "plots";
  fs::create_directories(dir);

  // One color per weighting, in presentation order.
  std::vector<std::string> weightings;
  for (const RunRecord& rec : records)
    if (std::find(weightings.begin(), weightings.end(), rec.weighting) == weightings.end())
      weightings.push_back(rec.weighting);
  std::sort(weightings.begin(), weightings.end(), [](const auto& a, const auto& b) {
    const int ra = weighting_rank(a), rb = weighting_rank(b);
    return ra != rb ? ra < rb : a < b;
  });
  auto color = [&](const std::string& w) {
    const auto it = std::find(weightings.begin(), weightings.end(), w);
    return kPalette[(it - weightings.begin()) % std::size(kPalette)];
  };

  // returns_vs_iter: mean normalized return per iteration, one curve per
  // weighting, averaged over env/arch/seed.
  {
    std::map<std::string, std::map<int, std::pair<double, int>>> acc;
    int max_iter = 1;
    double ymax = 1.0;
    for (const RunRecord& rec : records)
      for (const IterationRow& r : rec.rows)
        if (std::isfinite(r.return_norm)) {
          auto& [sum, n] = acc[rec.weighting][r.iter];
          sum += r.return_norm;
          ++n;
          max_iter = std::max(max_iter, r.iter);
        }
    Svg svg(0, max_iter, 0, ymax * 1.05, "normalized return vs iteration", "iteration",
            "return / eta(pi*)");
    for (const auto& w : weightings) {
      auto it = acc.find(w);
      if (it == acc.end()) continue;
      std::vector<std::pair<double, double>> pts;
      for (const auto& [iter, sn] : it->second)
        pts.emplace_back(iter, sn.first / std::max(1, sn.second));
      svg.polyline(pts, color(w));
      svg.legend_entry(w, color(w));
    }
    svg.write(dir / "returns_vs_iter.svg");
  }

  // Scatter helpers: one point per run.
  auto scatter = [&](const char* fname, const char* title, const char* xlabel,
                     auto&& xvalue) {
    double xmax = 1e-9;
    std::vector<std::tuple<double, double, std::string>> pts;
    for (const RunRecord& rec : records) {
      if (!rec.error.empty()) continue;
      const IterationRow* last = final_row(rec);
      if (!last) continue;
      const double x = xvalue(rec);
      if (!std::isfinite(x)) continue;
      pts.emplace_back(x, last->return_norm, rec.weighting);
      xmax = std::max(xmax, x);
    }
    Svg svg(0, xmax * 1.05, 0, 1.05, title, xlabel, "final return / eta(pi*)");
    for (const auto& w : weightings) svg.legend_entry(w, color(w));
    for (const auto& [x, y, w] : pts) svg.dot(x, y, color(w));
    svg.write(dir / fname);
  };

  scatter("entropy_vs_return.svg", "weighting entropy vs final return",
          "mean normalized entropy", [](const RunRecord& rec) {
            std::vector<double> es;
            for (const IterationRow& r : rec.rows) es.push_back(r.entropy_norm);
            return stats_of(es).mean;
          });
  scatter("shift_vs_return.svg", "distribution shift vs final return", "mean tv shift",
          [](const RunRecord& rec) {
            std::vector<double> ts;
            for (const IterationRow& r : rec.rows)
              if (r.iter >= 1) ts.push_back(r.tv_shift);
            return stats_of(ts).mean;
          });
}

}  // namespace qdiag
