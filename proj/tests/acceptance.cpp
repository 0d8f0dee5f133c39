// Acceptance checks. Each criterion prints one PASS/FAIL line and the
// process exits nonzero when the selected criterion fails.

#include <fmt/core.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>

#include "hmmfit/bench.hpp"
#include "hmmfit/hmm.hpp"
#include "hmmfit/models.hpp"
#include "support.hpp"

using namespace hmmfit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Tolerances and budgets, one place.
constexpr double kOracleRelTol = 1e-10;
constexpr double kOracleBudget = 10;
constexpr double kGradRelTol = 1e-6;
constexpr double kGradBudget = 30;
constexpr double kMonotoneRelTol = 1e-10;
constexpr double kMonotoneBudget = 300;
constexpr double kBasinNllTol = 0.05;
constexpr double kDiscThetaTol = 0.01;
constexpr double kAtBoundTol = 1e-3;
constexpr double kDiscBudget = 600;
constexpr double kMuTol = 0.02;
constexpr double kSdTol = 0.01;
constexpr double kContBudget = 900;
constexpr double kRankRatio = 3.0;
constexpr double kRankBudget = 900;
constexpr double kHbdThetaTol = 1e-3;
constexpr double kHbdLoglikSpread = 1e-6;
constexpr double kHbdBudget = 600;
constexpr double kSymmetryTol = 1e-9;
constexpr double kPairThetaTol = 1e-2;
constexpr double kPairNllTol = 1e-4;
constexpr double kRoundTripSe = 3.0;
constexpr double kRoundTripBudget = 1200;

constexpr std::uint64_t kSeed = 1;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

BenchReport bench(const std::string& model, std::size_t n_starts) {
  BenchConfig cfg;
  cfg.model = model;
  cfg.n_starts = n_starts;
  cfg.seed = kSeed;
  cfg.timing = false;
  return run_bench(cfg);
}

std::string budget_note(double elapsed, double budget) {
  return fmt::format("{:.1f} s of {:.0f} s", elapsed, budget);
}

// Five-point central difference; truncation error O(h^4).
std::vector<double> five_point(const std::function<double(const std::vector<double>&)>& f,
                               const std::vector<double>& x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double step = h * std::max(1.0, std::abs(x[j]));
    auto at = [&](double k) {
      auto y = x;
      y[j] += k * step;
      return f(y);
    };
    g[j] = (-at(2) + 8 * at(1) - 8 * at(-1) + at(-2)) / (12 * step);
  }
  return g;
}

Outcome oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(kSeed);
  const auto names = model_names();
  double worst = 0;
  int checked = 0;
  for (int k = 0; k < 50; ++k) {
    const auto model = make_model(names[k % names.size()]);
    const auto theta = testing::interior_point(*model, rng);
    const std::size_t len = 1 + static_cast<std::size_t>(rng.uniform() * 8) % 8;
    const auto seq = testing::random_sequence(*model, len, rng);
    const auto oracle = testing::enumerate_paths(*model, theta, seq);
    const double cond = std::exp(forward_conditional(*model, theta, seq).loglik);
    const double joint = std::exp(forward_joint_log(*model, theta, seq));
    worst = std::max({worst, testing::relative_error(cond, oracle.likelihood),
                      testing::relative_error(joint, oracle.likelihood)});
    ++checked;
  }
  const double elapsed = seconds_since(t0);
  return {worst <= kOracleRelTol && elapsed < kOracleBudget,
          fmt::format("{} instances, max relative error {:.2e} (tol {:.0e}), {}", checked, worst, kOracleRelTol,
                      budget_note(elapsed, kOracleBudget))};
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(kSeed);
  std::string per_model;
  double overall = 0;
  for (const auto& name : model_names()) {
    const auto model = make_model(name);
    const auto seq = load_dataset(*model, DataSource{});
    double worst = 0;
    for (int k = 0; k < 50; ++k) {
      const auto theta = testing::interior_point(*model, rng);
      const auto ad = loglik_with_gradient(*model, theta, seq);
      const auto fd = five_point([&](const std::vector<double>& th) { return forward_joint_log(*model, th, seq); },
                                 theta, 1e-4);
      for (std::size_t j = 0; j < theta.size(); ++j) {
        worst = std::max(worst, std::abs(ad.gradient[j] - fd[j]) / std::max(1.0, std::abs(fd[j])));
      }
    }
    per_model += fmt::format(" {}={:.1e}", name, worst);
    overall = std::max(overall, worst);
  }
  const double elapsed = seconds_since(t0);
  return {overall < kGradRelTol && elapsed < kGradBudget,
          fmt::format("50 points per model, max relative error{} (tol {:.0e}), {}", per_model, kGradRelTol,
                      budget_note(elapsed, kGradBudget))};
}

Outcome em_monotonicity() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t runs = 0, bad = 0;
  double worst_drop = 0;
  for (const auto& name : model_names()) {
    const auto model = make_model(name);
    const auto seq = load_dataset(*model, DataSource{});
    for (const auto& start : make_starts(*model, 100, kSeed)) {
      const auto run = run_optimizer(Optimizer::kBaumWelch, *model, seq, start, OptimizerConfig{});
      ++runs;
      bool ok = true;
      for (std::size_t k = 1; k < run.loglik_trace.size(); ++k) {
        const double prev = run.loglik_trace[k - 1];
        const double drop = (prev - run.loglik_trace[k]) / std::abs(prev);
        worst_drop = std::max(worst_drop, drop);
        if (drop > kMonotoneRelTol) ok = false;
      }
      if (!ok) ++bad;
    }
  }
  const double elapsed = seconds_since(t0);
  return {bad == 0 && elapsed < kMonotoneBudget,
          fmt::format("{} runs, {} with a decrease, largest relative decrease {:.1e} (tol {:.0e}), {}", runs, bad,
                      worst_drop, kMonotoneRelTol, budget_note(elapsed, kMonotoneBudget))};
}

Outcome geyser_disc_optima() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = bench("geyser-disc", 200);
  const GeyserDiscModel model;
  const std::vector<double> want{0.79, 0.57, 0.95};  // a, b, e
  bool pass = true;
  std::string detail;
  for (std::size_t o = 0; o < report.optimizers.size(); ++o) {
    const Box box = model.bounds(box_for(report.optimizers[o]));
    std::size_t best_hits = 0, second_hits = 0;
    double best_nll = kInf;
    for (const auto& run : report.runs[o]) {
      if (!run.converged) continue;
      const double nll = -run.final_loglik;
      const auto& th = run.final_theta.values;
      best_nll = std::min(best_nll, nll);
      const bool params = std::abs(th[GeyserDiscModel::kA] - want[0]) <= kDiscThetaTol &&
                          std::abs(th[GeyserDiscModel::kB] - want[1]) <= kDiscThetaTol &&
                          std::abs(th[GeyserDiscModel::kE] - want[2]) <= kDiscThetaTol;
      const bool bounds =
          std::min(std::abs(th[GeyserDiscModel::kC] - box.lower[GeyserDiscModel::kC]),
                   std::abs(th[GeyserDiscModel::kC] - box.upper[GeyserDiscModel::kC])) <= kAtBoundTol &&
          std::min(std::abs(th[GeyserDiscModel::kD] - box.lower[GeyserDiscModel::kD]),
                   std::abs(th[GeyserDiscModel::kD] - box.upper[GeyserDiscModel::kD])) <= kAtBoundTol;
      if (std::abs(nll - 144.5) <= kBasinNllTol && params && bounds) ++best_hits;
      if (std::abs(nll - 149.5) <= kBasinNllTol) ++second_hits;
    }
    const bool ok = best_hits > 0 && second_hits > 0;
    pass = pass && ok;
    detail += fmt::format(" {}: 144.5 x{}, 149.5 x{}, best {:.3f}{};", optimizer_name(report.optimizers[o]),
                          best_hits, second_hits, best_nll, ok ? "" : " [missing]");
  }
  const double elapsed = seconds_since(t0);
  return {pass && elapsed < kDiscBudget,
          fmt::format("200 starts,{} {}", detail, budget_note(elapsed, kDiscBudget))};
}

Outcome geyser_cont_optimum() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = bench("geyser-cont", 200);
  const GeyserContModel model;
  const std::vector<double> want{0.61, 0.65, 2.0, 4.58, 4.09, 0.22, 0.24, 0.64};
  bool pass = true;
  std::string detail;
  for (std::size_t o = 0; o < report.optimizers.size(); ++o) {
    const Optimizer opt = report.optimizers[o];
    std::size_t hits = 0;
    for (const auto& run : report.runs[o]) {
      if (!run.converged || std::abs(-run.final_loglik - 265.7) > kBasinNllTol) continue;
      const auto th = model.canonical(run.final_theta.values);
      bool ok = true;
      for (std::size_t j = GeyserContModel::kMuS; j <= GeyserContModel::kMuSl; ++j) {
        ok = ok && std::abs(th[j] - want[j]) <= kMuTol;
      }
      for (std::size_t j = GeyserContModel::kSdS; j <= GeyserContModel::kSdSl; ++j) {
        ok = ok && std::abs(th[j] - want[j]) <= kSdTol;
      }
      hits += ok;
    }
    const bool required = opt != Optimizer::kQnBox;
    if (required && hits == 0) pass = false;
    detail += fmt::format(" {}: {}{};", optimizer_name(opt), hits, required ? "" : " (not required)");
  }
  const double elapsed = seconds_since(t0);
  return {pass && elapsed < kContBudget,
          fmt::format("200 starts, runs at the 265.7 optimum:{} {}", detail, budget_note(elapsed, kContBudget))};
}

double median_of(const BenchReport& report, Optimizer opt) {
  for (const auto& s : report.summaries) {
    if (s.optimizer == opt) return s.iter_median;
  }
  throw std::logic_error("optimizer missing from report");
}

Outcome iteration_ranking() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  std::string detail;
  for (const std::string name : {"geyser-disc", "hbd"}) {
    const auto report = bench(name, 200);
    const double qnem = median_of(report, Optimizer::kQnem);
    const double qn = median_of(report, Optimizer::kQnBox);
    const double bw = median_of(report, Optimizer::kBaumWelch);
    const bool ok = qnem <= qn && bw >= kRankRatio * qnem;
    pass = pass && ok;
    detail += fmt::format(" {}: median qnem {}, qn-box {}, baum-welch {} (ratio {:.2f}){};", name, qnem, qn, bw,
                          bw / qnem, ok ? "" : " [fails]");
  }
  const double elapsed = seconds_since(t0);
  return {pass && elapsed < kRankBudget, fmt::format("200 starts,{} {}", detail, budget_note(elapsed, kRankBudget))};
}

Outcome hbd_single_optimum() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = bench("hbd", 100);
  std::size_t failed = 0;
  std::vector<const RunRecord*> runs;
  for (const auto& per_opt : report.runs) {
    for (const auto& run : per_opt) {
      if (!run.converged) ++failed;
      runs.push_back(&run);
    }
  }
  double theta_spread = 0, lo = kInf, hi = -kInf;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    lo = std::min(lo, runs[i]->final_loglik);
    hi = std::max(hi, runs[i]->final_loglik);
    for (std::size_t j = i + 1; j < runs.size(); ++j) {
      for (std::size_t k = 0; k < runs[i]->final_theta.size(); ++k) {
        theta_spread = std::max(theta_spread, std::abs(runs[i]->final_theta[k] - runs[j]->final_theta[k]));
      }
    }
  }
  const double elapsed = seconds_since(t0);
  const bool pass = failed == 0 && theta_spread <= kHbdThetaTol && hi - lo < kHbdLoglikSpread && elapsed < kHbdBudget;
  return {pass, fmt::format("{} runs, {} not converged, max pairwise theta gap {:.2e} (tol {:.0e}), loglik spread "
                            "{:.2e} (tol {:.0e}), {}",
                            runs.size(), failed, theta_spread, kHbdThetaTol, hi - lo, kHbdLoglikSpread,
                            budget_note(elapsed, kHbdBudget))};
}

Outcome step_accounting() {
  bool pass = true;
  std::string detail;
  for (const auto& name : model_names()) {
    const auto report = bench(name, 100);
    std::size_t bad_qn = 0, bad_bw = 0;
    double qnem_fw = 0, qnem_bw = 0;
    for (std::size_t o = 0; o < report.optimizers.size(); ++o) {
      for (const auto& run : report.runs[o]) {
        switch (report.optimizers[o]) {
          case Optimizer::kQnBox:
            bad_qn += run.n_backward != 0;
            break;
          case Optimizer::kBaumWelch:
            bad_bw += run.n_forward != run.iterations || run.n_backward != run.iterations;
            break;
          case Optimizer::kQnem:
            qnem_fw += static_cast<double>(run.n_forward);
            qnem_bw += static_cast<double>(run.n_backward);
            break;
          default:
            break;
        }
      }
    }
    const bool ok = bad_qn == 0 && bad_bw == 0 && qnem_bw < qnem_fw;
    pass = pass && ok;
    detail += fmt::format(" {}: qn-box runs with backward passes {}, baum-welch count mismatches {}, qnem mean "
                          "backward {:.1f} < forward {:.1f};",
                          name, bad_qn, bad_bw, qnem_bw / 100.0, qnem_fw / 100.0);
  }
  return {pass, fmt::format("100 starts per model,{}", detail)};
}

Outcome umbrella_symmetry() {
  const UmbrellaModel model;
  const auto seq = default_umbrella_data();
  Rng rng(kSeed);
  double worst = 0;
  for (int k = 0; k < 200; ++k) {
    const std::vector<double> th{rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
    const std::vector<double> mirror{th[0], 1.0 - th[1]};
    worst = std::max(worst, std::abs(forward_conditional(model, th, seq).loglik -
                                     forward_conditional(model, mirror, seq).loglik));
  }

  // Basins in raw (unfolded) theta, pooled over optimizers.
  const auto report = bench("umbrella", 200);
  struct Point {
    double nll;
    std::vector<double> theta;
  };
  std::vector<Point> basins;
  for (const auto& per_opt : report.runs) {
    for (const auto& run : per_opt) {
      if (!run.converged) continue;
      const Point p{-run.final_loglik, run.final_theta.values};
      auto near = std::find_if(basins.begin(), basins.end(), [&](const Point& b) {
        return std::abs(b.theta[0] - p.theta[0]) < kPairThetaTol && std::abs(b.theta[1] - p.theta[1]) < kPairThetaTol;
      });
      if (near == basins.end()) {
        basins.push_back(p);
      } else if (p.nll < near->nll) {
        *near = p;
      }
    }
  }
  std::size_t unpaired = 0;
  for (const auto& b : basins) {
    const bool self = std::abs(b.theta[1] - 0.5) < kPairThetaTol;
    const bool paired = self || std::any_of(basins.begin(), basins.end(), [&](const Point& m) {
                          return std::abs(m.theta[0] - b.theta[0]) < kPairThetaTol &&
                                 std::abs(m.theta[1] - (1.0 - b.theta[1])) < kPairThetaTol &&
                                 std::abs(m.nll - b.nll) <= kPairNllTol;
                        });
    unpaired += !paired;
  }
  return {worst <= kSymmetryTol && unpaired == 0,
          fmt::format("max |loglik(a,b) - loglik(a,1-b)| {:.1e} (tol {:.0e}) over 200 points; {} raw basins from 200 "
                      "starts, {} without a mirrored partner",
                      worst, kSymmetryTol, basins.size(), unpaired)};
}

Outcome hbd_round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  const HbdModel model;
  const std::vector<double> truth{0.0625, 0.064};
  std::vector<std::vector<double>> estimates;
  std::size_t failed = 0;
  for (std::uint64_t s = 1; s <= 20; ++s) {
    SimConfig sim;
    sim.theta = truth;
    sim.length = 20000;
    sim.seed = s;
    const auto seq = simulate_hbd(sim);
    const auto start = make_starts(model, 1, s).front();
    const auto run = run_optimizer(Optimizer::kQnem, model, seq, start, OptimizerConfig{});
    if (!run.converged) ++failed;
    estimates.push_back(run.final_theta.values);
  }
  bool pass = failed == 0;
  std::string detail;
  const double n = static_cast<double>(estimates.size());
  for (std::size_t j = 0; j < truth.size(); ++j) {
    double mean = 0, var = 0;
    for (const auto& e : estimates) mean += e[j] / n;
    for (const auto& e : estimates) var += (e[j] - mean) * (e[j] - mean) / (n - 1);
    const double se = std::sqrt(var / n);
    const double z = std::abs(mean - truth[j]) / se;
    pass = pass && z <= kRoundTripSe;
    detail += fmt::format(" {}: mean {:.5f}, truth {}, se {:.5f}, |z| {:.2f};", model.param_names()[j], mean,
                          truth[j], se, z);
  }
  const double elapsed = seconds_since(t0);
  return {pass && elapsed < kRoundTripBudget,
          fmt::format("20 seeds, L = 20000, {} not converged,{} {}", failed, detail,
                      budget_note(elapsed, kRoundTripBudget))};
}

const std::map<int, std::pair<std::string, std::function<Outcome()>>>& criteria() {
  static const std::map<int, std::pair<std::string, std::function<Outcome()>>> table{
      {1, {"forward passes match path enumeration", oracle_equivalence}},
      {2, {"autodiff gradient matches finite differences", gradient_check}},
      {3, {"Baum-Welch never decreases the likelihood", em_monotonicity}},
      {4, {"dichotomised geyser optima", geyser_disc_optima}},
      {5, {"continuous geyser optimum", geyser_cont_optimum}},
      {6, {"iteration ranking", iteration_ranking}},
      {7, {"HBD single optimum", hbd_single_optimum}},
      {8, {"step-count accounting", step_accounting}},
      {9, {"umbrella label-swap symmetry", umbrella_symmetry}},
      {10, {"HBD round-trip estimation", hbd_round_trip}},
  };
  return table;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> selected;
  app.add_option("--criterion", selected, "Criterion number (repeatable; default all)")
      ->check(CLI::Range(1, static_cast<int>(criteria().size())));
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) {
    for (const auto& [k, _] : criteria()) selected.push_back(k);
  }

  bool all = true;
  for (int k : selected) {
    const auto& [title, check] = criteria().at(k);
    Outcome out;
    try {
      out = check();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    fmt::print("criterion {} {}: {}: {}\n", k, out.pass ? "PASS" : "FAIL", title, out.detail);
    std::fflush(stdout);
    all = all && out.pass;
  }
  return all ? 0 : 1;
}
