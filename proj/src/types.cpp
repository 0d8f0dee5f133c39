#include "hmmfit/types.hpp"

#include <algorithm>
#include <cmath>

namespace hmmfit {

ObsSequence ObsSequence::discrete(std::vector<int> codes) {
  ObsSequence s;
  s.kind = ObsKind::kDiscrete;
  s.codes = std::move(codes);
  return s;
}

ObsSequence ObsSequence::continuous(std::vector<double> values) {
  ObsSequence s;
  s.kind = ObsKind::kContinuous;
  s.values = std::move(values);
  return s;
}

void ObsSequence::validate() const {
  const std::size_t n = length();
  if (n == 0) throw DataCorrupt("sequence is empty");
  if (kind == ObsKind::kDiscrete && !values.empty()) throw DataCorrupt("discrete sequence carries real values");
  if (kind == ObsKind::kContinuous) {
    if (!codes.empty()) throw DataCorrupt("continuous sequence carries codes");
    for (double v : values) {
      if (!std::isfinite(v)) throw DataCorrupt("non-finite observation");
    }
  }
  if (!positions_cm.empty()) {
    if (positions_cm.size() != n) throw DataCorrupt("positions length differs from sequence length");
    for (std::size_t i = 1; i < n; ++i) {
      if (!(positions_cm[i] > positions_cm[i - 1])) throw DataCorrupt("positions are not strictly increasing");
    }
  }
  if (!allele_freq.empty()) {
    if (allele_freq.size() != n) throw DataCorrupt("allele frequency length differs from sequence length");
    for (double p : allele_freq) {
      if (!(p >= 0.0 && p <= 1.0)) throw DataCorrupt("allele frequency outside [0, 1]");
    }
  }
  if (!hidden_truth.empty() && hidden_truth.size() != n) throw DataCorrupt("hidden truth length mismatch");
}

bool Box::contains(const std::vector<double>& x) const {
  if (x.size() != lower.size()) return false;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!(x[j] >= lower[j] && x[j] <= upper[j])) return false;
  }
  return true;
}

std::vector<double> Box::clip(std::vector<double> x) const {
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = std::clamp(x[j], lower[j], upper[j]);
  return x;
}

ParamVector::ParamVector(std::vector<double> v, Box b) : values(std::move(v)), bounds(std::move(b)) {
  if (bounds.lower.size() != values.size() || bounds.upper.size() != values.size()) {
    throw std::invalid_argument("parameter and bound dimensions differ");
  }
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (!(bounds.lower[j] < bounds.upper[j])) throw std::invalid_argument("empty parameter interval");
  }
}

}  // namespace hmmfit
