#include "hmmfit/bench.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "hmmfit/data.hpp"
#include "hmmfit/models.hpp"
#include "hmmfit/rng.hpp"

namespace hmmfit {

const OptimizerConfig& BenchConfig::config_for(Optimizer opt) const {
  auto it = per_optimizer.find(opt);
  return it == per_optimizer.end() ? optimizer : it->second;
}

void BenchConfig::validate() const {
  if (n_starts < 1) throw std::invalid_argument("n_starts must be >= 1");
  if (!(bucket_width > 0.0)) throw std::invalid_argument("bucket_width must be > 0");
  if (!(theta_merge > 0.0)) throw std::invalid_argument("theta_merge must be > 0");
  optimizer.validate();
  for (const auto& [opt, c] : per_optimizer) c.validate();
}

namespace {

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::invalid_argument("bad value for " + key + ": '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw std::invalid_argument("bad value for " + key + ": '" + text + "' (expected true or false)");
}

std::vector<Optimizer> parse_optimizer_list(const std::string& text) {
  std::vector<Optimizer> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = std::min(text.find(',', pos), text.size());
    std::string item = text.substr(pos, comma - pos);
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) {
      const auto opt = parse_optimizer(item);
      if (!opt) throw std::invalid_argument("unknown optimizer '" + item + "'");
      out.push_back(*opt);
    }
    pos = comma + 1;
  }
  return out;
}

}  // namespace

BenchConfig bench_config_from(KeyValues kv) {
  BenchConfig cfg;
  auto take = [&](std::string_view key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  if (auto v = take("model")) {
    make_model(*v);
    cfg.model = *v;
  }
  if (auto v = take("data")) {
    if (*v == "bundled") {
      cfg.data.kind = DataSource::kBundled;
    } else if (*v == "simulated") {
      cfg.data.kind = DataSource::kSimulated;
    } else {
      cfg.data.kind = DataSource::kFile;
      cfg.data.path = *v;
    }
  }
  if (auto v = take("sim_seed")) cfg.data.sim_seed = parse_value<std::uint64_t>("sim_seed", *v);
  if (auto v = take("sim_length")) cfg.data.sim_length = parse_value<std::size_t>("sim_length", *v);
  if (auto v = take("n_starts")) cfg.n_starts = parse_value<std::size_t>("n_starts", *v);
  if (auto v = take("seed")) cfg.seed = parse_value<std::uint64_t>("seed", *v);
  if (auto v = take("optimizers")) cfg.optimizers = parse_optimizer_list(*v);
  if (auto v = take("bucket_width")) cfg.bucket_width = parse_value<double>("bucket_width", *v);
  if (auto v = take("theta_merge")) cfg.theta_merge = parse_value<double>("theta_merge", *v);
  if (auto v = take("threads")) cfg.threads = parse_value<unsigned>("threads", *v);
  if (auto v = take("timing")) cfg.timing = parse_bool("timing", *v);

  // Per-optimizer overrides, e.g. "qnem.max_iter = 200".
  std::map<Optimizer, KeyValues> scoped;
  for (auto it = kv.begin(); it != kv.end();) {
    const auto dot = it->first.find('.');
    if (dot == std::string::npos) {
      ++it;
      continue;
    }
    const auto opt = parse_optimizer(std::string_view(it->first).substr(0, dot));
    if (!opt) throw std::invalid_argument("unknown optimizer in key '" + it->first + "'");
    scoped[*opt][it->first.substr(dot + 1)] = it->second;
    it = kv.erase(it);
  }
  apply_config(cfg.optimizer, kv);
  for (auto& [opt, keys] : scoped) {
    OptimizerConfig c = cfg.optimizer;
    apply_config(c, keys);
    if (!keys.empty()) throw std::invalid_argument("unknown key '" + keys.begin()->first + "'");
    cfg.per_optimizer[opt] = c;
  }
  if (!kv.empty()) throw std::invalid_argument("unknown key '" + kv.begin()->first + "'");
  cfg.validate();
  return cfg;
}

ObsSequence load_dataset(const Model& model, const DataSource& source) {
  const std::string name = model.name();
  ObsSequence seq;
  switch (source.kind) {
    case DataSource::kBundled:
      if (name == "geyser-disc") {
        seq = dichotomise(load_faithful());
      } else if (name == "geyser-cont") {
        seq = load_faithful();
      } else if (name == "umbrella") {
        seq = default_umbrella_data();
      } else if (name == "hbd") {
        seq = default_hbd_data();
      } else {
        throw std::invalid_argument("no bundled data for model " + name);
      }
      break;
    case DataSource::kSimulated:
      if (name == "umbrella") {
        const std::vector<double> theta{0.3, 0.2};
        seq = simulate_discrete(model, theta, source.sim_length == 0 ? 56 : source.sim_length, source.sim_seed);
      } else if (name == "hbd") {
        SimConfig sim;
        sim.theta = {0.0625, 0.064};
        sim.seed = source.sim_seed;
        if (source.sim_length != 0) sim.length = source.sim_length;
        seq = simulate_hbd(sim);
      } else {
        throw std::invalid_argument("no simulator for model " + name + "; use bundled data or a file");
      }
      break;
    case DataSource::kFile:
      seq = read_sequence_file(source.path, model);
      break;
  }
  model.check_sequence(seq);
  return seq;
}

std::vector<std::vector<double>> make_starts(const Model& model, std::size_t n, std::uint64_t seed) {
  std::vector<std::vector<double>> starts;
  starts.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Rng rng(derive_seed(seed, k));
    starts.push_back(model.sample_start(rng));
  }
  return starts;
}

std::string hash_starts(const std::vector<std::vector<double>>& starts) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& start : starts) {
    for (double x : start) {
      auto bits = std::bit_cast<std::uint64_t>(x);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return fmt::format("{:016x}", h);
}

double quantile(const std::vector<double>& sorted, double p) {
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

namespace {

OptimizerSummary summarise(Optimizer opt, const std::vector<RunRecord>& runs) {
  OptimizerSummary s;
  s.optimizer = opt;
  s.box = box_for(opt);
  s.n_runs = runs.size();
  if (runs.empty()) return s;
  std::vector<double> iters;
  iters.reserve(runs.size());
  double fw = 0, bw = 0, t = 0;
  std::size_t conv = 0;
  for (const auto& r : runs) {
    iters.push_back(r.iterations);
    fw += static_cast<double>(r.n_forward);
    bw += static_cast<double>(r.n_backward);
    t += r.wall_time;
    conv += r.converged ? 1 : 0;
  }
  std::sort(iters.begin(), iters.end());
  const double n = static_cast<double>(runs.size());
  s.iter_min = iters.front();
  s.iter_q1 = quantile(iters, 0.25);
  s.iter_median = quantile(iters, 0.5);
  s.iter_mean = std::accumulate(iters.begin(), iters.end(), 0.0) / n;
  s.iter_q3 = quantile(iters, 0.75);
  s.iter_max = iters.back();
  s.mean_forward = fw / n;
  s.mean_backward = bw / n;
  s.mean_time = t / n;
  s.percent_converged = 100.0 * static_cast<double>(conv) / n;
  return s;
}

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

double inf_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) d = std::max(d, std::abs(a[j] - b[j]));
  return d;
}

}  // namespace

void cluster_basins(BenchReport& report, const Model& model, double bucket_width, double theta_merge) {
  struct Point {
    std::size_t opt;
    double nll;
    std::vector<double> canon;
    const std::vector<double>* theta;
  };
  const std::size_t n_opt = report.runs.size();
  std::vector<Point> points;
  report.other_counts.assign(n_opt, 0);
  for (std::size_t o = 0; o < n_opt; ++o) {
    for (const auto& r : report.runs[o]) {
      if (r.converged && std::isfinite(r.final_loglik)) {
        points.push_back({o, -r.final_loglik, model.canonical(r.final_theta.values), &r.final_theta.values});
      } else {
        ++report.other_counts[o];
      }
    }
  }
  std::stable_sort(points.begin(), points.end(), [](const Point& a, const Point& b) { return a.nll < b.nll; });

  DisjointSets sets(points.size());
  std::size_t group_start = 0;
  for (std::size_t i = 1; i <= points.size(); ++i) {
    if (i < points.size() && points[i].nll - points[i - 1].nll < 0.5 * bucket_width) continue;
    for (std::size_t a = group_start; a < i; ++a) {
      for (std::size_t b = a + 1; b < i; ++b) {
        if (inf_distance(points[a].canon, points[b].canon) < theta_merge) sets.unite(a, b);
      }
    }
    group_start = i;
  }

  // Roots are the lowest index, i.e. the best NLL, of each component.
  std::map<std::size_t, std::size_t> basin_of_root;
  report.basins.clear();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::size_t root = sets.find(i);
    auto [it, inserted] = basin_of_root.try_emplace(root, report.basins.size());
    if (inserted) {
      Basin basin;
      basin.nll = points[root].nll;
      basin.theta = *points[root].theta;
      basin.counts.assign(n_opt, 0);
      report.basins.push_back(std::move(basin));
    }
    ++report.basins[it->second].counts[points[i].opt];
  }

  report.other_percent.assign(n_opt, 0.0);
  for (std::size_t o = 0; o < n_opt; ++o) {
    const double n = static_cast<double>(report.runs[o].size());
    if (n == 0) continue;
    report.other_percent[o] = 100.0 * static_cast<double>(report.other_counts[o]) / n;
  }
  for (auto& basin : report.basins) {
    basin.percent.assign(n_opt, 0.0);
    for (std::size_t o = 0; o < n_opt; ++o) {
      const double n = static_cast<double>(report.runs[o].size());
      if (n > 0) basin.percent[o] = 100.0 * static_cast<double>(basin.counts[o]) / n;
    }
  }
}

BenchReport run_bench(const BenchConfig& cfg) {
  cfg.validate();
  const auto model = make_model(cfg.model);
  const ObsSequence seq = load_dataset(*model, cfg.data);
  const auto starts = make_starts(*model, cfg.n_starts, cfg.seed);

  BenchReport report;
  report.model = model->name();
  report.param_names = model->param_names();
  report.optimizers = cfg.optimizers;
  report.n_starts = cfg.n_starts;
  report.seed = cfg.seed;
  report.start_hash = hash_starts(starts);
  report.runs.assign(cfg.optimizers.size(), std::vector<RunRecord>(cfg.n_starts));

  const std::size_t n_jobs = cfg.optimizers.size() * cfg.n_starts;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t job = next++; job < n_jobs; job = next++) {
      const std::size_t o = job / cfg.n_starts;
      const std::size_t k = job % cfg.n_starts;
      const Optimizer opt = cfg.optimizers[o];
      RunRecord& slot = report.runs[o][k];
      try {
        slot = run_optimizer(opt, *model, seq, starts[k], cfg.config_for(opt));
      } catch (const std::exception& e) {
        slot = RunRecord{};
        slot.optimizer = std::string(optimizer_name(opt));
        const Box box = model->bounds(box_for(opt));
        slot.final_theta = ParamVector(box.clip(starts[k]), box);
        slot.failure = e.what();
      }
      if (!cfg.timing) slot.wall_time = 0.0;
    }
  };
  unsigned n_threads = cfg.threads != 0 ? cfg.threads : std::max(1U, std::thread::hardware_concurrency());
  n_threads = static_cast<unsigned>(std::min<std::size_t>(n_threads, std::max<std::size_t>(n_jobs, 1)));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  for (std::size_t o = 0; o < cfg.optimizers.size(); ++o) {
    report.summaries.push_back(summarise(cfg.optimizers[o], report.runs[o]));
  }
  cluster_basins(report, *model, cfg.bucket_width, cfg.theta_merge);
  return report;
}

namespace {

std::string box_label(BoxKind box) { return box == BoxKind::kNarrow ? "narrow" : "natural"; }

std::vector<std::string> summary_header() {
  return {"optimizer", "box", "runs", "iter_min", "iter_q1", "iter_median", "iter_mean", "iter_q3", "iter_max",
          "mean_forward", "mean_backward", "mean_time_s", "percent_converged"};
}

std::vector<std::string> summary_row(const OptimizerSummary& s) {
  return {std::string(optimizer_name(s.optimizer)),
          box_label(s.box),
          fmt::format("{}", s.n_runs),
          fmt::format("{:.0f}", s.iter_min),
          fmt::format("{:.2f}", s.iter_q1),
          fmt::format("{:.2f}", s.iter_median),
          fmt::format("{:.2f}", s.iter_mean),
          fmt::format("{:.2f}", s.iter_q3),
          fmt::format("{:.0f}", s.iter_max),
          fmt::format("{:.2f}", s.mean_forward),
          fmt::format("{:.2f}", s.mean_backward),
          fmt::format("{:.2f}", s.mean_time),
          fmt::format("{:.1f}", s.percent_converged)};
}

std::string render(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows,
                   ReportFormat format) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    if (format == ReportFormat::kCsv) {
      out += fmt::format("{}\n", fmt::join(cells, ","));
    } else {
      out += fmt::format("| {} |\n", fmt::join(cells, " | "));
    }
  };
  line(header);
  if (format == ReportFormat::kMarkdown) line(std::vector<std::string>(header.size(), "---"));
  for (const auto& row : rows) line(row);
  return out;
}

}  // namespace

ReportText emit_report(const BenchReport& report, ReportFormat format) {
  ReportText text;

  std::vector<std::vector<std::string>> rows;
  for (const auto& s : report.summaries) rows.push_back(summary_row(s));
  if (format == ReportFormat::kMarkdown) {
    text.summary = fmt::format("# {} benchmark\n\nstarts: {}, seed: {}, start list hash: {}\n\n", report.model,
                               report.n_starts, report.seed, report.start_hash);
  }
  text.summary += render(summary_header(), rows, format);

  std::vector<std::string> header{"nll"};
  for (const auto& p : report.param_names) header.push_back(p);
  for (Optimizer opt : report.optimizers) header.push_back(fmt::format("{}_percent", optimizer_name(opt)));
  rows.clear();
  for (const auto& b : report.basins) {
    std::vector<std::string> row{fmt::format("{:.1f}", b.nll)};
    for (double x : b.theta) row.push_back(fmt::format("{:.2f}", x));
    for (double p : b.percent) row.push_back(fmt::format("{:.1f}", p));
    rows.push_back(std::move(row));
  }
  if (!report.optimizers.empty()) {
    std::vector<std::string> row{"Other"};
    row.resize(1 + report.param_names.size());
    for (double p : report.other_percent) row.push_back(fmt::format("{:.1f}", p));
    rows.push_back(std::move(row));
  }
  if (format == ReportFormat::kMarkdown) {
    text.basins = fmt::format("# {} convergence points\n\n", report.model);
  }
  text.basins += render(header, rows, format);
  return text;
}

std::vector<std::filesystem::path> write_report_files(const BenchReport& report, const std::filesystem::path& dir,
                                                      const std::string& timestamp) {
  std::filesystem::create_directories(dir);
  const std::string stem = report.model + "_" + timestamp;
  std::vector<std::filesystem::path> written;
  for (ReportFormat format : {ReportFormat::kMarkdown, ReportFormat::kCsv}) {
    const ReportText text = emit_report(report, format);
    const std::string ext = format == ReportFormat::kMarkdown ? ".md" : ".csv";
    for (const auto& [kind, body] : {std::pair{"_summary", &text.summary}, std::pair{"_basins", &text.basins}}) {
      const auto path = dir / (stem + kind + ext);
      std::ofstream out(path, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + path.string());
      out << *body;
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace hmmfit
