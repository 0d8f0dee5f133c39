#pragma once

// The four example models. Parameter orderings:
//   umbrella     (a, b)
//   geyser-disc  (a, b, c, d, e)
//   geyser-cont  (a, b, mu_s, mu_l, mu_sl, sd_s, sd_l, sd_sl)
//   hbd          (f, a)
// Observation alphabets (code -> symbol):
//   umbrella     0:N 1:U
//   geyser-disc  0:Dinf3 1:Dsup3
//   geyser-cont  eruption duration in minutes
//   hbd          0:AA 1:Aa 2:aa, NA = missing

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "hmmfit/model.hpp"

namespace hmmfit {

/// Two weather states (D, R) observed through an umbrella (N, U).
class UmbrellaModel final : public ModelBase<UmbrellaModel> {
 public:
  enum Param { kA, kB };
  enum State { kDry, kRain };
  enum Symbol { kNo, kUmbrella };

  std::string name() const override { return "umbrella"; }
  std::size_t n_states() const override { return 2; }
  std::size_t param_dim() const override { return 2; }
  std::vector<std::string> param_names() const override { return {"a", "b"}; }
  ObsKind obs_kind() const override { return ObsKind::kDiscrete; }
  std::vector<std::string> alphabet() const override { return {"N", "U"}; }

  template <class S>
  void initial_t(std::span<const S>, std::span<S> pi) const {
    pi[0] = 0.5;
    pi[1] = 0.5;
  }
  template <class S>
  void transition_t(std::span<const S> th, const ObsSequence&, std::size_t, std::span<S> out) const {
    out[0] = 1.0 - th[kA];
    out[1] = th[kA];
    out[2] = th[kA];
    out[3] = 1.0 - th[kA];
  }
  template <class S>
  void emission_t(std::span<const S> th, const ObsSequence& seq, std::size_t i, std::span<S> out) const {
    const S& b = th[kB];
    if (seq.codes[i] == kNo) {
      out[kDry] = 1.0 - b;
      out[kRain] = b;
    } else {
      out[kDry] = b;
      out[kRain] = 1.0 - b;
    }
  }

  std::vector<double> m_step(const ObsSequence& seq, const PosteriorSet& post,
                             const ParamVector& current) const override;
  Box bounds(BoxKind kind) const override;
  std::vector<double> sample_start(Rng& rng) const override;
  /// (a, b) and (a, 1 - b) describe the same model with D and R swapped.
  std::vector<double> canonical(std::vector<double> theta) const override;
};

// States S (short), L (long), Sl (steady long). Structural zeros:
// S->S, L->L, L->Sl, Sl->L.
namespace geyser {

enum State { kShort, kLong, kSteadyLong };

template <class S>
void transition(const S& a, const S& b, std::span<S> out) {
  out[0] = 0.0;
  out[1] = 1.0 - a;
  out[2] = a;
  out[3] = 1.0;
  out[4] = 0.0;
  out[5] = 0.0;
  out[6] = 1.0 - b;
  out[7] = 0.0;
  out[8] = b;
}

/// Stationary law of the geyser chain: proportional to (1-b, (1-a)(1-b), a).
/// Uniform when a = 0 and b = 1 (no unique stationary law).
template <class S>
void stationary(const S& a, const S& b, std::span<S> pi) {
  const S w0 = 1.0 - b;
  const S w1 = (1.0 - a) * (1.0 - b);
  const S w2 = a;
  const S z = w0 + w1 + w2;
  if (!(z > 0.0)) {
    for (auto& p : pi) p = 1.0 / 3.0;
    return;
  }
  pi[0] = w0 / z;
  pi[1] = w1 / z;
  pi[2] = w2 / z;
}

/// Transition part of the M-step (a, b), including the dependence of the
/// stationary initial law on (a, b). Returns an (a, b) that does not
/// decrease Q relative to the current one.
std::array<double, 2> m_step_chain(const PosteriorSet& post, double a_cur, double b_cur, const Box& box);

}  // namespace geyser

class GeyserDiscModel final : public ModelBase<GeyserDiscModel> {
 public:
  enum Param { kA, kB, kC, kD, kE };
  enum Symbol { kBelow3, kAtLeast3 };

  std::string name() const override { return "geyser-disc"; }
  std::size_t n_states() const override { return 3; }
  std::size_t param_dim() const override { return 5; }
  std::vector<std::string> param_names() const override { return {"a", "b", "c", "d", "e"}; }
  ObsKind obs_kind() const override { return ObsKind::kDiscrete; }
  std::vector<std::string> alphabet() const override { return {"Dinf3", "Dsup3"}; }

  template <class S>
  void initial_t(std::span<const S> th, std::span<S> pi) const {
    geyser::stationary(th[kA], th[kB], pi);
  }
  template <class S>
  void transition_t(std::span<const S> th, const ObsSequence&, std::size_t, std::span<S> out) const {
    geyser::transition(th[kA], th[kB], out);
  }
  template <class S>
  void emission_t(std::span<const S> th, const ObsSequence& seq, std::size_t i, std::span<S> out) const {
    const bool long_eruption = seq.codes[i] == kAtLeast3;
    for (std::size_t s = 0; s < 3; ++s) {
      const S& p = th[kC + s];
      out[s] = long_eruption ? p : 1.0 - p;
    }
  }

  std::vector<double> m_step(const ObsSequence& seq, const PosteriorSet& post,
                             const ParamVector& current) const override;
  Box bounds(BoxKind kind) const override;
  std::vector<double> sample_start(Rng& rng) const override;
};

class GeyserContModel final : public ModelBase<GeyserContModel> {
 public:
  enum Param { kA, kB, kMuS, kMuL, kMuSl, kSdS, kSdL, kSdSl };
  static constexpr double kSdFloor = 0.01;

  std::string name() const override { return "geyser-cont"; }
  std::size_t n_states() const override { return 3; }
  std::size_t param_dim() const override { return 8; }
  std::vector<std::string> param_names() const override {
    return {"a", "b", "mu_s", "mu_l", "mu_sl", "sd_s", "sd_l", "sd_sl"};
  }
  ObsKind obs_kind() const override { return ObsKind::kContinuous; }

  template <class S>
  void initial_t(std::span<const S> th, std::span<S> pi) const {
    geyser::stationary(th[kA], th[kB], pi);
  }
  template <class S>
  void transition_t(std::span<const S> th, const ObsSequence&, std::size_t, std::span<S> out) const {
    geyser::transition(th[kA], th[kB], out);
  }
  template <class S>
  void emission_t(std::span<const S> th, const ObsSequence& seq, std::size_t i, std::span<S> out) const {
    for (std::size_t s = 0; s < 3; ++s) out[s] = gaussian_pdf(seq.values[i], th[kMuS + s], th[kSdS + s]);
  }
  void log_emission(std::span<const double> th, const ObsSequence& seq, std::size_t i,
                    std::span<double> out) const override {
    for (std::size_t s = 0; s < 3; ++s) out[s] = gaussian_log_pdf(seq.values[i], th[kMuS + s], th[kSdS + s]);
  }

  std::vector<double> m_step(const ObsSequence& seq, const PosteriorSet& post,
                             const ParamVector& current) const override;
  Box bounds(BoxKind kind) const override;
  std::vector<double> sample_start(Rng& rng) const override;
};

/// Homozygous-by-descent model on genotypes along a genetic map.
class HbdModel final : public ModelBase<HbdModel> {
 public:
  enum Param { kF, kA };
  enum State { kNonHbd, kHbd };
  enum Symbol { kAA, kAa, kaa };
  static constexpr double kDefaultEpsilon = 1e-3;
  static constexpr int kGemSweeps = 3;

  explicit HbdModel(double epsilon = kDefaultEpsilon) : epsilon_(epsilon) {}

  std::string name() const override { return "hbd"; }
  std::size_t n_states() const override { return 2; }
  std::size_t param_dim() const override { return 2; }
  std::vector<std::string> param_names() const override { return {"f", "a"}; }
  ObsKind obs_kind() const override { return ObsKind::kDiscrete; }
  std::vector<std::string> alphabet() const override { return {"AA", "Aa", "aa"}; }
  bool homogeneous() const override { return false; }
  void check_sequence(const ObsSequence& seq) const override;
  double epsilon() const { return epsilon_; }

  template <class S>
  void initial_t(std::span<const S> th, std::span<S> pi) const {
    pi[kNonHbd] = 1.0 - th[kF];
    pi[kHbd] = th[kF];
  }
  template <class S>
  void transition_t(std::span<const S> th, const ObsSequence& seq, std::size_t i, std::span<S> out) const {
    using std::exp;
    const S stay = exp(-(th[kA] * seq.spacing(i)));
    const S jump = 1.0 - stay;
    out[0] = jump * (1.0 - th[kF]) + stay;
    out[1] = jump * th[kF];
    out[2] = jump * (1.0 - th[kF]);
    out[3] = jump * th[kF] + stay;
  }
  template <class S>
  void emission_t(std::span<const S>, const ObsSequence& seq, std::size_t i, std::span<S> out) const {
    const auto w = genotype_weights(seq.codes[i], seq.allele_freq[i]);
    out[kNonHbd] = w[kNonHbd];
    out[kHbd] = w[kHbd];
  }

  /// Emission weights (non-HBD, HBD) of a genotype given the reference
  /// allele frequency.
  std::array<double, 2> genotype_weights(int code, double p_ref) const;

  /// Q restricted to the (f, a)-dependent terms, evaluated from spacing-
  /// grouped transition posteriors.
  struct ChainSufficient {
    std::array<double, 2> phi0{};
    std::map<double, std::array<double, 4>> by_spacing;  // spacing -> delta sums (row-major)
  };
  static ChainSufficient chain_sufficient(const ObsSequence& seq, const PosteriorSet& post);
  static double chain_q(const ChainSufficient& suff, double f, double a);

  std::vector<double> m_step(const ObsSequence& seq, const PosteriorSet& post,
                             const ParamVector& current) const override;
  Box bounds(BoxKind kind) const override;
  std::vector<double> sample_start(Rng& rng) const override;

 private:
  double epsilon_;
};

UmbrellaModel umbrella_spec();
GeyserDiscModel geyser_disc_spec();
GeyserContModel geyser_cont_spec();
HbdModel hbd_spec(double epsilon = HbdModel::kDefaultEpsilon);

/// Registered model names: umbrella, geyser-disc, geyser-cont, hbd.
const std::vector<std::string>& model_names();
/// Throws std::invalid_argument for an unknown name.
std::shared_ptr<const Model> make_model(std::string_view name);

}  // namespace hmmfit
