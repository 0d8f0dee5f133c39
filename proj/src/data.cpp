#include "hmmfit/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>

#include "hmmfit/models.hpp"
#include "hmmfit/rng.hpp"

#ifndef HMMFIT_DEFAULT_DATA_DIR
#define HMMFIT_DEFAULT_DATA_DIR "data"
#endif

namespace hmmfit {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& text, std::size_t line_no) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  if (!text.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw DataCorrupt("line " + std::to_string(line_no) + ": cannot parse '" + text + "' as a number");
  }
  return v;
}

int parse_symbol(const std::string& text, const std::vector<std::string>& alphabet, std::size_t line_no) {
  if (text == "NA") return kMissing;
  for (std::size_t c = 0; c < alphabet.size(); ++c) {
    if (alphabet[c] == text) return static_cast<int>(c);
  }
  std::string valid;
  for (const auto& a : alphabet) valid += (valid.empty() ? "" : ", ") + a;
  throw DataCorrupt("line " + std::to_string(line_no) + ": unknown symbol '" + text + "' (expected one of " +
                    valid + ", NA)");
}

std::size_t sample_categorical(Rng& rng, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return k;
  }
  // u == total only through rounding; return the last positive weight.
  for (std::size_t k = weights.size(); k-- > 0;) {
    if (weights[k] > 0.0) return k;
  }
  return weights.size() - 1;
}

}  // namespace

std::string format_double(double x) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), ptr);
}

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("HMMFIT_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return HMMFIT_DEFAULT_DATA_DIR;
}

ObsSequence load_faithful() { return load_faithful(data_dir() / "faithful.csv"); }

ObsSequence load_faithful(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw DataCorrupt("cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "duration_min") {
    throw DataCorrupt(csv.string() + ": expected header 'duration_min'");
  }
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    values.push_back(parse_double(t, line_no));
  }
  if (values.size() != kFaithfulLength) {
    throw DataCorrupt(csv.string() + ": expected " + std::to_string(kFaithfulLength) + " rows, found " +
                      std::to_string(values.size()));
  }
  return ObsSequence::continuous(std::move(values));
}

ObsSequence dichotomise(const ObsSequence& seq, double threshold) {
  if (seq.kind != ObsKind::kContinuous) throw DataCorrupt("dichotomise needs a continuous sequence");
  std::vector<int> codes(seq.values.size());
  std::transform(seq.values.begin(), seq.values.end(), codes.begin(), [threshold](double x) {
    return x < threshold ? GeyserDiscModel::kBelow3 : GeyserDiscModel::kAtLeast3;
  });
  ObsSequence out = ObsSequence::discrete(std::move(codes));
  out.positions_cm = seq.positions_cm;
  return out;
}

void SimConfig::validate() const {
  if (length < 1) throw std::invalid_argument("simulation length must be >= 1");
  if (model == "hbd") {
    if (theta.size() != 2) throw std::invalid_argument("hbd simulation needs theta = (f, a)");
    if (!(theta[0] >= 0.0 && theta[0] <= 1.0)) throw std::invalid_argument("f must lie in [0, 1]");
    if (!(theta[1] >= 0.0)) throw std::invalid_argument("a must be >= 0");
    if (!(spacing_cm > 0.0)) throw std::invalid_argument("spacing must be > 0");
    if (!(freq_lo >= 0.0 && freq_lo <= freq_hi && freq_hi <= 1.0)) {
      throw std::invalid_argument("allele frequency range must satisfy 0 <= lo <= hi <= 1");
    }
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1]");
  }
}

ObsSequence simulate_hbd(const SimConfig& cfg) {
  cfg.validate();
  const HbdModel model(cfg.epsilon);
  Rng rng(cfg.seed);
  ObsSequence seq = ObsSequence::discrete(std::vector<int>(cfg.length));
  seq.positions_cm.resize(cfg.length);
  seq.allele_freq.resize(cfg.length);
  seq.hidden_truth.resize(cfg.length);
  for (std::size_t i = 0; i < cfg.length; ++i) {
    seq.positions_cm[i] = static_cast<double>(i) * cfg.spacing_cm;
    seq.allele_freq[i] = rng.uniform(cfg.freq_lo, cfg.freq_hi);
  }
  const std::span<const double> theta(cfg.theta);
  std::array<double, 2> pi{};
  std::array<double, 4> trans{};
  model.initial(theta, pi);
  int state = static_cast<int>(sample_categorical(rng, pi));
  for (std::size_t i = 0; i < cfg.length; ++i) {
    if (i > 0) {
      model.transition(theta, seq, i, trans);
      state = static_cast<int>(sample_categorical(rng, std::span<const double>(trans).subspan(2 * state, 2)));
    }
    seq.hidden_truth[i] = state;
    std::array<double, 3> genotype{};
    for (int g = 0; g < 3; ++g) genotype[g] = model.genotype_weights(g, seq.allele_freq[i])[state];
    seq.codes[i] = static_cast<int>(sample_categorical(rng, genotype));
  }
  return seq;
}

ObsSequence simulate_discrete(const Model& model, std::span<const double> theta, std::size_t length,
                              std::uint64_t seed) {
  if (model.obs_kind() != ObsKind::kDiscrete || !model.homogeneous()) {
    throw std::invalid_argument(model.name() + ": simulate_discrete needs a homogeneous discrete model");
  }
  if (length < 1) throw std::invalid_argument("simulation length must be >= 1");
  const std::size_t n = model.n_states();
  const std::size_t k = model.alphabet().size();
  // Emission table E(x, s) read through a probe sequence holding each symbol once.
  std::vector<int> all_codes(k);
  for (std::size_t c = 0; c < k; ++c) all_codes[c] = static_cast<int>(c);
  const ObsSequence probe = ObsSequence::discrete(all_codes);
  std::vector<double> emit_by_state(n * k), column(n);
  for (std::size_t c = 0; c < k; ++c) {
    model.emission(theta, probe, c, column);
    for (std::size_t s = 0; s < n; ++s) emit_by_state[s * k + c] = column[s];
  }
  std::vector<double> pi(n), trans(n * n);
  model.initial(theta, pi);
  model.transition(theta, probe, 1, trans);

  Rng rng(seed);
  ObsSequence seq = ObsSequence::discrete(std::vector<int>(length));
  seq.hidden_truth.resize(length);
  std::size_t state = sample_categorical(rng, pi);
  for (std::size_t i = 0; i < length; ++i) {
    if (i > 0) state = sample_categorical(rng, std::span<const double>(trans).subspan(state * n, n));
    seq.hidden_truth[i] = static_cast<int>(state);
    seq.codes[i] = static_cast<int>(sample_categorical(rng, std::span<const double>(emit_by_state).subspan(state * k, k)));
  }
  return seq;
}

ObsSequence default_umbrella_data() {
  const UmbrellaModel model;
  const std::vector<double> theta{0.3, 0.2};
  return simulate_discrete(model, theta, 56, kUmbrellaSeed);
}

ObsSequence default_hbd_data() {
  SimConfig cfg;
  cfg.theta = {0.0625, 0.064};
  cfg.length = 1050;
  cfg.spacing_cm = 0.1;
  cfg.seed = kHbdSeed;
  return simulate_hbd(cfg);
}

ObsSequence read_sequence(std::istream& in, const Model& model) {
  const bool discrete = model.obs_kind() == ObsKind::kDiscrete;
  const std::vector<std::string> alphabet = model.alphabet();
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);

  ObsSequence seq;
  seq.kind = discrete ? ObsKind::kDiscrete : ObsKind::kContinuous;
  auto push_obs = [&](const std::string& text, std::size_t line_no) {
    if (discrete) {
      seq.codes.push_back(parse_symbol(text, alphabet, line_no));
    } else {
      seq.values.push_back(parse_double(text, line_no));
    }
  };

  std::size_t first = 0;
  while (first < lines.size() && trim(lines[first]).empty()) ++first;
  if (first == lines.size()) throw DataCorrupt("no observations");
  const std::vector<std::string> header = split_csv(trim(lines[first]));
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == name) return c;
    }
    return std::nullopt;
  };
  auto obs_col = column("obs");
  if (!obs_col) obs_col = column("duration_min");

  if (!obs_col) {
    // Plain list, one observation per line.
    for (std::size_t i = first; i < lines.size(); ++i) {
      const std::string t = trim(lines[i]);
      if (!t.empty()) push_obs(t, i + 1);
    }
  } else {
    const auto pos_col = column("position_cM");
    const auto freq_col = column("pA");
    const auto truth_col = column("hidden_truth");
    for (std::size_t i = first + 1; i < lines.size(); ++i) {
      const std::string t = trim(lines[i]);
      if (t.empty()) continue;
      const auto fields = split_csv(t);
      if (fields.size() != header.size()) {
        throw DataCorrupt("line " + std::to_string(i + 1) + ": expected " + std::to_string(header.size()) +
                          " fields, found " + std::to_string(fields.size()));
      }
      push_obs(fields[*obs_col], i + 1);
      if (pos_col) seq.positions_cm.push_back(parse_double(fields[*pos_col], i + 1));
      if (freq_col) seq.allele_freq.push_back(parse_double(fields[*freq_col], i + 1));
      if (truth_col) seq.hidden_truth.push_back(static_cast<int>(parse_double(fields[*truth_col], i + 1)));
    }
  }
  seq.validate();
  return seq;
}

ObsSequence read_sequence_file(const std::filesystem::path& path, const Model& model) {
  std::ifstream in(path);
  if (!in) throw DataCorrupt("cannot open " + path.string());
  return read_sequence(in, model);
}

void write_sequence_csv(std::ostream& out, const ObsSequence& seq, const Model& model) {
  const std::vector<std::string> alphabet = model.alphabet();
  out << "obs";
  if (seq.has_positions()) out << ",position_cM";
  if (!seq.allele_freq.empty()) out << ",pA";
  if (!seq.hidden_truth.empty()) out << ",hidden_truth";
  out << '\n';
  for (std::size_t i = 0; i < seq.length(); ++i) {
    if (seq.kind == ObsKind::kDiscrete) {
      out << (seq.codes[i] == kMissing ? std::string("NA") : alphabet.at(static_cast<std::size_t>(seq.codes[i])));
    } else {
      out << format_double(seq.values[i]);
    }
    if (seq.has_positions()) out << ',' << format_double(seq.positions_cm[i]);
    if (!seq.allele_freq.empty()) out << ',' << format_double(seq.allele_freq[i]);
    if (!seq.hidden_truth.empty()) out << ',' << seq.hidden_truth[i];
    out << '\n';
  }
}

}  // namespace hmmfit
