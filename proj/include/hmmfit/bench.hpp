#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hmmfit/model.hpp"
#include "hmmfit/optimizers.hpp"
#include "hmmfit/types.hpp"

namespace hmmfit {

struct DataSource {
  enum Kind { kBundled, kSimulated, kFile };
  Kind kind = kBundled;
  std::filesystem::path path;  // kFile
  std::uint64_t sim_seed = 1;  // kSimulated
  std::size_t sim_length = 0;  // kSimulated; 0 picks the model's default length
};

struct BenchConfig {
  std::string model;
  DataSource data;
  std::vector<Optimizer> optimizers = all_optimizers();
  std::size_t n_starts = 1000;
  std::uint64_t seed = 1;
  OptimizerConfig optimizer;
  std::map<Optimizer, OptimizerConfig> per_optimizer;  // overrides `optimizer`
  double bucket_width = 0.1;                           // NLL
  double theta_merge = 1e-2;                           // infinity norm, canonical theta
  unsigned threads = 0;                                // 0: hardware concurrency
  bool timing = true;

  const OptimizerConfig& config_for(Optimizer opt) const;
  void validate() const;
};

/// Builds a config from flat key-values: model, data (bundled | simulated |
/// a file path), sim_seed, sim_length, n_starts, seed, optimizers (comma
/// separated), bucket_width, theta_merge, threads, timing, the optimizer
/// keys, and `<optimizer>.<key>` overrides. Unknown keys are rejected.
BenchConfig bench_config_from(KeyValues kv);

/// The dataset a bench runs on. Bundled: Old Faithful for the geyser models,
/// the default simulated sequences for umbrella and hbd.
ObsSequence load_dataset(const Model& model, const DataSource& source);

/// Start k is drawn from its own stream derive_seed(seed, k), so the list
/// is shared by every optimizer and does not depend on n_starts.
std::vector<std::vector<double>> make_starts(const Model& model, std::size_t n, std::uint64_t seed);
/// FNV-1a over the bit patterns of all coordinates, as 16 hex digits.
std::string hash_starts(const std::vector<std::vector<double>>& starts);

struct OptimizerSummary {
  Optimizer optimizer = Optimizer::kQnem;
  BoxKind box = BoxKind::kNatural;
  std::size_t n_runs = 0;
  double iter_min = 0, iter_q1 = 0, iter_median = 0, iter_mean = 0, iter_q3 = 0, iter_max = 0;
  double mean_forward = 0;
  double mean_backward = 0;
  double mean_time = 0;  // seconds
  double percent_converged = 0;
};

struct Basin {
  double nll = 0;
  std::vector<double> theta;        // best run in the basin
  std::vector<std::size_t> counts;  // per optimizer, in report order
  std::vector<double> percent;
};

struct BenchReport {
  std::string model;
  std::vector<std::string> param_names;
  std::vector<Optimizer> optimizers;
  std::size_t n_starts = 0;
  std::uint64_t seed = 0;
  std::string start_hash;
  std::vector<OptimizerSummary> summaries;
  std::vector<Basin> basins;  // ascending NLL
  std::vector<std::size_t> other_counts;
  std::vector<double> other_percent;  // non-converged runs
  std::vector<std::vector<RunRecord>> runs;  // [optimizer][start]
};

/// Sample quantile, linear interpolation between order statistics
/// (the "type 7" definition). `sorted` must be non-empty and ascending.
double quantile(const std::vector<double>& sorted, double p);

/// Runs every optimizer from every shared start and aggregates. Run errors
/// are recorded on the run (converged = false); they never abort the bench.
BenchReport run_bench(const BenchConfig& cfg);

/// Groups final points: NLL values closer than bucket_width / 2 are chained
/// together, then within a group canonical thetas closer than theta_merge
/// are chained. Non-converged runs go to the "Other" row.
void cluster_basins(BenchReport& report, const Model& model, double bucket_width, double theta_merge);

enum class ReportFormat { kMarkdown, kCsv };

struct ReportText {
  std::string summary;
  std::string basins;
};

/// Times use 2 decimals, NLL 1 decimal, parameters 2 decimals, percents 1
/// decimal; the markdown and CSV carry the same strings.
ReportText emit_report(const BenchReport& report, ReportFormat format);

/// Writes <model>_<timestamp>_summary.{md,csv} and ..._basins.{md,csv} into
/// `dir` and returns the paths.
std::vector<std::filesystem::path> write_report_files(const BenchReport& report, const std::filesystem::path& dir,
                                                      const std::string& timestamp);

}  // namespace hmmfit
