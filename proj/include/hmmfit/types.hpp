#pragma once

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmmfit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An observation has zero probability under the current parameters.
class NumericalUnderflow : public Error {
 public:
  NumericalUnderflow(std::size_t position, const std::string& what)
      : Error(what), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class DegeneratePosterior : public Error {
 public:
  using Error::Error;
};

/// A model broke its own contract (e.g. an M-step left the parameter box).
class ModelError : public Error {
 public:
  using Error::Error;
};

class MissingPositions : public Error {
 public:
  using Error::Error;
};

/// Input data is malformed or inconsistent with what the caller expects.
class DataCorrupt : public Error {
 public:
  using Error::Error;
};

inline constexpr int kMissing = -1;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class ObsKind { kDiscrete, kContinuous };

/// One observed sequence. Discrete sequences use `codes` (kMissing marks a
/// missing value), continuous ones use `values`. Positions (cM) and
/// per-position reference allele frequencies are only used by the HBD model.
struct ObsSequence {
  ObsKind kind = ObsKind::kDiscrete;
  std::vector<int> codes;
  std::vector<double> values;
  std::vector<double> positions_cm;
  std::vector<double> allele_freq;
  std::vector<int> hidden_truth;  // simulators only; empty otherwise

  static ObsSequence discrete(std::vector<int> codes);
  static ObsSequence continuous(std::vector<double> values);

  std::size_t length() const { return kind == ObsKind::kDiscrete ? codes.size() : values.size(); }
  bool has_positions() const { return !positions_cm.empty(); }
  bool is_missing(std::size_t i) const { return kind == ObsKind::kDiscrete && codes[i] == kMissing; }

  /// Distance (cM) between position i-1 and i, for i >= 1.
  double spacing(std::size_t i) const { return positions_cm[i] - positions_cm[i - 1]; }

  /// Throws DataCorrupt if any invariant is broken.
  void validate() const;
};

/// Per-coordinate closed box. Upper (or lower) may be infinite.
struct Box {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t size() const { return lower.size(); }
  bool contains(const std::vector<double>& x) const;
  /// Componentwise projection onto the box.
  std::vector<double> clip(std::vector<double> x) const;
};

/// A parameter vector together with the box it must stay in.
struct ParamVector {
  std::vector<double> values;
  Box bounds;

  ParamVector() = default;
  ParamVector(std::vector<double> v, Box b);

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t j) const { return values[j]; }
  bool feasible() const { return bounds.contains(values); }
};

}  // namespace hmmfit
