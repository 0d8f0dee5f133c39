#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hmmfit/model.hpp"
#include "hmmfit/types.hpp"

namespace hmmfit {

inline constexpr std::size_t kFaithfulLength = 272;

/// Directory holding bundled data files: $HMMFIT_DATA_DIR if set, else the
/// source tree's data/ directory.
std::filesystem::path data_dir();

/// Old Faithful eruption durations (minutes), in recorded order. Throws
/// DataCorrupt unless exactly 272 rows are read.
ObsSequence load_faithful();
ObsSequence load_faithful(const std::filesystem::path& csv);

/// Durations below `threshold` become Dinf3 (0), the rest Dsup3 (1).
ObsSequence dichotomise(const ObsSequence& seq, double threshold = 3.0);

struct SimConfig {
  std::string model = "hbd";
  std::vector<double> theta;  // model parameter order
  std::size_t length = 1050;
  double spacing_cm = 0.1;
  std::uint64_t seed = 1;
  double epsilon = 1e-3;
  double freq_lo = 0.1;
  double freq_hi = 0.9;

  void validate() const;
};

/// Genotypes along a regular map: positions, reference allele frequencies
/// and the hidden HBD path are all stored on the sequence.
ObsSequence simulate_hbd(const SimConfig& cfg);

/// Exact sampling of a homogeneous discrete model. Hidden states are kept in
/// `hidden_truth`.
ObsSequence simulate_discrete(const Model& model, std::span<const double> theta, std::size_t length,
                              std::uint64_t seed);

/// Default umbrella data set: 56 days simulated at (a, b) = (0.3, 0.2).
inline constexpr std::uint64_t kUmbrellaSeed = 56;
ObsSequence default_umbrella_data();

/// Default HBD genome: (f, a) = (0.0625, 0.064), 1050 markers 0.1 cM apart.
/// Seed 3 is the first seed whose genome carries an HBD segment; seeds 1
/// and 2 draw none, which leaves `a` unidentified.
inline constexpr std::uint64_t kHbdSeed = 3;
ObsSequence default_hbd_data();

/// Reads either a plain list (one observation per line) or a CSV whose
/// header names an `obs` (or `duration_min`) column and optionally
/// `position_cM`, `pA`, `hidden_truth`. Symbols follow the model alphabet;
/// `NA` is missing.
ObsSequence read_sequence(std::istream& in, const Model& model);
ObsSequence read_sequence_file(const std::filesystem::path& path, const Model& model);

/// CSV with columns obs[,position_cM][,pA][,hidden_truth].
void write_sequence_csv(std::ostream& out, const ObsSequence& seq, const Model& model);

/// Shortest decimal text that parses back to exactly x.
std::string format_double(double x);

}  // namespace hmmfit
