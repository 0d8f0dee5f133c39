#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "hmmfit/bench.hpp"
#include "hmmfit/data.hpp"
#include "hmmfit/models.hpp"
#include "hmmfit/rng.hpp"

using namespace hmmfit;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

std::vector<std::string> optimizer_choices() {
  std::vector<std::string> names;
  for (Optimizer opt : all_optimizers()) names.emplace_back(optimizer_name(opt));
  return names;
}

CLI::Validator optimizer_validator() {
  return CLI::Validator(
      [](std::string& value) -> std::string {
        if (parse_optimizer(value)) return {};
        return fmt::format("unknown optimizer '{}'; valid choices: {}", value, fmt::join(optimizer_choices(), ", "));
      },
      "OPTIMIZER");
}

DataSource data_source(const std::string& text, std::uint64_t sim_seed) {
  DataSource src;
  if (text == "bundled") {
    src.kind = DataSource::kBundled;
  } else if (text == "simulated") {
    src.kind = DataSource::kSimulated;
    src.sim_seed = sim_seed;
  } else {
    src.kind = DataSource::kFile;
    src.path = text;
  }
  return src;
}

std::vector<double> parse_vector(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad number '" + item + "' in '" + text + "'");
    }
  }
  return out;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

struct FitArgs {
  std::string model;
  std::string optimizer = "qnem";
  std::uint64_t seed = 1;
  std::string start;
  std::string data = "bundled";
  std::optional<double> reltol;
  std::optional<int> max_iter;
};

int run_fit(const FitArgs& args) {
  const auto model = make_model(args.model);
  const Optimizer opt = *parse_optimizer(args.optimizer);
  const ObsSequence seq = load_dataset(*model, data_source(args.data, args.seed));

  std::vector<double> start;
  if (!args.start.empty()) {
    start = parse_vector(args.start);
    if (start.size() != model->param_dim()) {
      throw std::invalid_argument(fmt::format("--start needs {} values ({})", model->param_dim(),
                                              fmt::join(model->param_names(), ", ")));
    }
  } else {
    start = make_starts(*model, 1, args.seed).front();
  }

  OptimizerConfig cfg;
  if (args.reltol) cfg.stop.reltol = *args.reltol;
  if (args.max_iter) cfg.max_iter = *args.max_iter;
  cfg.validate();

  const RunRecord rec = run_optimizer(opt, *model, seq, start, cfg);
  const auto names = model->param_names();
  fmt::print("model      {}\noptimizer  {}\nstart     ", model->name(), rec.optimizer);
  for (std::size_t j = 0; j < start.size(); ++j) fmt::print(" {}={:.6g}", names[j], start[j]);
  fmt::print("\ntheta     ");
  for (std::size_t j = 0; j < names.size(); ++j) fmt::print(" {}={:.6f}", names[j], rec.final_theta[j]);
  fmt::print("\nloglik     {:.6f}\nnll        {:.6f}\niterations {}\nforward    {}\nbackward   {}\n",
             rec.final_loglik, -rec.final_loglik, rec.iterations, rec.n_forward, rec.n_backward);
  fmt::print("converged  {}\n", rec.converged ? "yes" : "no");
  if (!rec.failure.empty()) fmt::print("failure    {}\n", rec.failure);
  return 0;
}

struct BenchArgs {
  std::string config;
  std::string model;
  std::vector<std::string> optimizers;
  std::optional<std::size_t> n_starts;
  std::optional<std::uint64_t> seed;
  std::optional<double> reltol;
  std::optional<std::string> data;
  std::optional<unsigned> threads;
  std::string out = ".";
  std::string timestamp;
  bool no_timing = false;
  bool print = false;
};

int run_bench_cmd(const BenchArgs& args) {
  KeyValues kv;
  if (!args.config.empty()) {
    std::ifstream in(args.config);
    if (!in) throw DataCorrupt("cannot open config " + args.config);
    kv = parse_key_values(in);
  }
  if (!args.model.empty()) kv["model"] = args.model;
  if (!args.optimizers.empty()) kv["optimizers"] = fmt::format("{}", fmt::join(args.optimizers, ","));
  if (args.n_starts) kv["n_starts"] = std::to_string(*args.n_starts);
  if (args.seed) kv["seed"] = std::to_string(*args.seed);
  if (args.reltol) kv["reltol"] = format_double(*args.reltol);
  if (args.data) kv["data"] = *args.data;
  if (args.threads) kv["threads"] = std::to_string(*args.threads);
  if (args.no_timing) kv["timing"] = "false";
  if (!kv.contains("model")) throw std::invalid_argument("--model is required (or model = ... in --config)");

  const BenchConfig cfg = bench_config_from(kv);
  const BenchReport report = run_bench(cfg);
  const auto paths = write_report_files(report, args.out, args.timestamp.empty() ? utc_timestamp() : args.timestamp);
  if (args.print) std::cout << emit_report(report, ReportFormat::kMarkdown).summary << '\n'
                            << emit_report(report, ReportFormat::kMarkdown).basins;
  for (const auto& p : paths) fmt::print(stderr, "wrote {}\n", p.string());
  return 0;
}

struct SimulateArgs {
  std::string model = "hbd";
  std::optional<double> f, a;
  std::string theta;
  std::size_t length = 0;
  std::uint64_t seed = 1;
  double spacing = 0.1;
  std::string out;
};

int run_simulate(const SimulateArgs& args) {
  const auto model = make_model(args.model);
  ObsSequence seq;
  if (model->name() == "hbd") {
    SimConfig sim;
    if (!args.theta.empty()) {
      sim.theta = parse_vector(args.theta);
    } else {
      if (!args.f || !args.a) throw std::invalid_argument("simulate --model hbd needs --f and --a (or --theta)");
      sim.theta = {*args.f, *args.a};
    }
    if (args.length != 0) sim.length = args.length;
    sim.spacing_cm = args.spacing;
    sim.seed = args.seed;
    sim.validate();
    seq = simulate_hbd(sim);
  } else {
    if (args.theta.empty()) {
      throw std::invalid_argument(fmt::format("simulate --model {} needs --theta {}", model->name(),
                                              fmt::join(model->param_names(), ",")));
    }
    if (args.length == 0) throw std::invalid_argument("--length is required");
    seq = simulate_discrete(*model, parse_vector(args.theta), args.length, args.seed);
  }
  if (args.out.empty() || args.out == "-") {
    write_sequence_csv(std::cout, seq, *model);
  } else {
    std::ofstream out(args.out, std::ios::binary);
    if (!out) throw DataCorrupt("cannot write " + args.out);
    write_sequence_csv(out, seq, *model);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maximum-likelihood fitting of hidden Markov models"};
  app.require_subcommand(1);
  const auto models = model_names();

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit one model from one start");
  fit_cmd->add_option("--model", fit.model, "Model name")->required()->check(CLI::IsMember(models));
  fit_cmd->add_option("--optimizer", fit.optimizer, "Optimizer")->check(optimizer_validator())->capture_default_str();
  fit_cmd->add_option("--seed", fit.seed, "Start seed (start 0 of the bench start list)")->capture_default_str();
  fit_cmd->add_option("--start", fit.start, "Explicit start, comma separated in parameter order");
  fit_cmd->add_option("--data", fit.data, "bundled | simulated | <file>")->capture_default_str();
  fit_cmd->add_option("--reltol", fit.reltol, "Relative tolerance of the stop rule");
  fit_cmd->add_option("--max-iter", fit.max_iter, "Iteration cap");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Multi-start comparison of optimizers");
  bench_cmd->add_option("--config", bench.config, "Flat key = value config file");
  bench_cmd->add_option("--model", bench.model, "Model name")->check(CLI::IsMember(models));
  bench_cmd->add_option("--optimizer", bench.optimizers, "Optimizer (repeatable; default all)")
      ->check(optimizer_validator())
      ->delimiter(',');
  bench_cmd->add_option("--n-starts", bench.n_starts, "Number of shared starts");
  bench_cmd->add_option("--seed", bench.seed, "Master seed of the start list");
  bench_cmd->add_option("--reltol", bench.reltol, "Relative tolerance of the stop rule");
  bench_cmd->add_option("--data", bench.data, "bundled | simulated | <file>");
  bench_cmd->add_option("--threads", bench.threads, "Worker threads (0: all cores)");
  bench_cmd->add_option("--out", bench.out, "Report directory")->capture_default_str();
  bench_cmd->add_option("--timestamp", bench.timestamp, "Report file stamp (default: current UTC time)");
  bench_cmd->add_flag("--no-timing", bench.no_timing, "Zero all timings so reports are reproducible");
  bench_cmd->add_flag("--print", bench.print, "Also print the markdown tables");

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate a dataset");
  sim_cmd->add_option("--model", sim.model, "Model name")->check(CLI::IsMember(models))->capture_default_str();
  sim_cmd->add_option("--f", sim.f, "hbd: inbreeding coefficient");
  sim_cmd->add_option("--a", sim.a, "hbd: segment rate (per cM)");
  sim_cmd->add_option("--theta", sim.theta, "Parameters, comma separated in model order");
  sim_cmd->add_option("--length", sim.length, "Number of observations");
  sim_cmd->add_option("--seed", sim.seed, "Simulation seed")->capture_default_str();
  sim_cmd->add_option("--spacing", sim.spacing, "hbd: marker spacing (cM)")->capture_default_str();
  sim_cmd->add_option("--out", sim.out, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*fit_cmd) return run_fit(fit);
    if (*bench_cmd) return run_bench_cmd(bench);
    return run_simulate(sim);
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kDataError;
  }
}
