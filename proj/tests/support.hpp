#pragma once

// Independent oracles and test doubles. Nothing here calls the likelihood
// engine: the brute-force routines only use the model's initial, transition
// and emission functions.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hmmfit/data.hpp"
#include "hmmfit/hmm.hpp"
#include "hmmfit/models.hpp"
#include "hmmfit/rng.hpp"

namespace hmmfit::testing {

/// Exhaustive sum over all state paths. Only for tiny n^L.
struct Enumerated {
  double likelihood = 0.0;
  std::vector<double> phi;    // L x n
  std::vector<double> delta;  // (L-1) x n x n
};

inline Enumerated enumerate_paths(const Model& model, std::span<const double> theta, const ObsSequence& seq) {
  const std::size_t n = model.n_states();
  const std::size_t len = seq.length();
  std::vector<double> pi(n);
  model.initial(theta, pi);
  std::vector<std::vector<double>> trans(len, std::vector<double>(n * n));
  std::vector<std::vector<double>> emit(len, std::vector<double>(n, 1.0));
  for (std::size_t i = 1; i < len; ++i) model.transition(theta, seq, i, trans[i]);
  for (std::size_t i = 0; i < len; ++i) {
    if (!seq.is_missing(i)) model.emission(theta, seq, i, emit[i]);
  }

  Enumerated out;
  out.phi.assign(len * n, 0.0);
  out.delta.assign(len > 1 ? (len - 1) * n * n : 0, 0.0);
  std::vector<std::size_t> path(len, 0);
  while (true) {
    double p = pi[path[0]] * emit[0][path[0]];
    for (std::size_t i = 1; i < len; ++i) p *= trans[i][path[i - 1] * n + path[i]] * emit[i][path[i]];
    out.likelihood += p;
    for (std::size_t i = 0; i < len; ++i) out.phi[i * n + path[i]] += p;
    for (std::size_t i = 0; i + 1 < len; ++i) out.delta[(i * n + path[i]) * n + path[i + 1]] += p;
    std::size_t pos = 0;
    while (pos < len && ++path[pos] == n) path[pos++] = 0;
    if (pos == len) break;
  }
  if (out.likelihood > 0.0) {
    for (double& x : out.phi) x /= out.likelihood;
    for (double& x : out.delta) x /= out.likelihood;
  }
  return out;
}

/// Central finite differences of a scalar function.
inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              const std::vector<double>& x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double step = h * std::max(1.0, std::abs(x[j]));
    std::vector<double> up = x, down = x;
    up[j] += step;
    down[j] -= step;
    g[j] = (f(up) - f(down)) / (2.0 * step);
  }
  return g;
}

inline double relative_error(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

/// A point strictly inside the natural box, away from the bounds by `margin`.
inline std::vector<double> interior_point(const Model& model, Rng& rng, double margin = 0.05) {
  std::vector<double> th = model.sample_start(rng);
  const Box box = model.bounds(BoxKind::kNatural);
  for (std::size_t j = 0; j < th.size(); ++j) {
    const double lo = box.lower[j] + margin;
    const double hi = std::isfinite(box.upper[j]) ? box.upper[j] - margin : kInf;
    th[j] = std::clamp(th[j], lo, hi);
  }
  return th;
}

/// A random sequence the model can read, drawn without using the model.
inline ObsSequence random_sequence(const Model& model, std::size_t len, Rng& rng) {
  ObsSequence seq;
  if (model.obs_kind() == ObsKind::kContinuous) {
    std::vector<double> v(len);
    for (auto& x : v) x = rng.uniform(1.5, 5.0);
    seq = ObsSequence::continuous(std::move(v));
  } else {
    const auto k = static_cast<int>(model.alphabet().size());
    std::vector<int> codes(len);
    for (auto& c : codes) c = std::min(k - 1, static_cast<int>(rng.uniform() * k));
    seq = ObsSequence::discrete(std::move(codes));
  }
  if (model.name() == "hbd") {
    double pos = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      seq.positions_cm.push_back(pos);
      seq.allele_freq.push_back(rng.uniform(0.1, 0.9));
      pos += rng.uniform(0.05, 2.0);
    }
  }
  seq.validate();
  return seq;
}

/// Expected complete-data log-likelihood by path enumeration: the posterior
/// over paths comes from `theta_post`, the log joint from `theta`.
inline double enumerate_q(const Model& model, std::span<const double> theta, std::span<const double> theta_post,
                          const ObsSequence& seq) {
  const std::size_t n = model.n_states();
  const std::size_t len = seq.length();
  auto tables = [&](std::span<const double> th, std::vector<double>& pi, std::vector<std::vector<double>>& trans,
                    std::vector<std::vector<double>>& emit) {
    pi.assign(n, 0.0);
    model.initial(th, pi);
    trans.assign(len, std::vector<double>(n * n));
    emit.assign(len, std::vector<double>(n, 1.0));
    for (std::size_t i = 1; i < len; ++i) model.transition(th, seq, i, trans[i]);
    for (std::size_t i = 0; i < len; ++i) {
      if (!seq.is_missing(i)) model.emission(th, seq, i, emit[i]);
    }
  };
  std::vector<double> pi_q, pi_p;
  std::vector<std::vector<double>> tr_q, tr_p, em_q, em_p;
  tables(theta, pi_q, tr_q, em_q);
  tables(theta_post, pi_p, tr_p, em_p);

  double total = 0.0, weighted = 0.0;
  std::vector<std::size_t> path(len, 0);
  while (true) {
    double w = pi_p[path[0]] * em_p[0][path[0]];
    for (std::size_t i = 1; i < len; ++i) w *= tr_p[i][path[i - 1] * n + path[i]] * em_p[i][path[i]];
    if (w > 0.0) {
      double lj = std::log(pi_q[path[0]]) + std::log(em_q[0][path[0]]);
      for (std::size_t i = 1; i < len; ++i) {
        lj += std::log(tr_q[i][path[i - 1] * n + path[i]]) + std::log(em_q[i][path[i]]);
      }
      weighted += w * lj;
    }
    total += w;
    std::size_t pos = 0;
    while (pos < len && ++path[pos] == n) path[pos++] = 0;
    if (pos == len) break;
  }
  return weighted / total;
}

/// A homogeneous discrete HMM given by explicit tables. Its single parameter
/// is ignored; the M-step returns it unchanged.
class TableModel final : public ModelBase<TableModel> {
 public:
  TableModel(std::vector<double> pi, std::vector<double> trans, std::vector<double> emit, std::size_t n_symbols)
      : pi_(std::move(pi)), trans_(std::move(trans)), emit_(std::move(emit)), k_(n_symbols) {}

  /// Random tables with strictly positive entries.
  static TableModel random(std::size_t n, std::size_t k, Rng& rng) {
    auto simplex = [&](std::size_t m) {
      std::vector<double> p(m);
      double z = 0;
      for (auto& x : p) z += (x = rng.uniform(0.05, 1.0));
      for (auto& x : p) x /= z;
      return p;
    };
    std::vector<double> pi = simplex(n), trans, emit(n * k);
    for (std::size_t s = 0; s < n; ++s) {
      auto row = simplex(n);
      trans.insert(trans.end(), row.begin(), row.end());
      auto e = simplex(k);
      for (std::size_t x = 0; x < k; ++x) emit[x * n + s] = e[x];
    }
    return TableModel(std::move(pi), std::move(trans), std::move(emit), k);
  }

  std::string name() const override { return "table"; }
  std::size_t n_states() const override { return pi_.size(); }
  std::size_t param_dim() const override { return 1; }
  std::vector<std::string> param_names() const override { return {"unused"}; }
  ObsKind obs_kind() const override { return ObsKind::kDiscrete; }
  std::vector<std::string> alphabet() const override {
    std::vector<std::string> a;
    for (std::size_t x = 0; x < k_; ++x) a.push_back(std::to_string(x));
    return a;
  }

  template <class S>
  void initial_t(std::span<const S>, std::span<S> pi) const {
    for (std::size_t s = 0; s < pi_.size(); ++s) pi[s] = pi_[s];
  }
  template <class S>
  void transition_t(std::span<const S>, const ObsSequence&, std::size_t, std::span<S> out) const {
    for (std::size_t j = 0; j < trans_.size(); ++j) out[j] = trans_[j];
  }
  // emit_ is symbol-major: emit_[x * n + s].
  template <class S>
  void emission_t(std::span<const S>, const ObsSequence& seq, std::size_t i, std::span<S> out) const {
    const std::size_t n = pi_.size();
    for (std::size_t s = 0; s < n; ++s) out[s] = emit_[static_cast<std::size_t>(seq.codes[i]) * n + s];
  }
  std::vector<double> m_step(const ObsSequence&, const PosteriorSet&, const ParamVector& cur) const override {
    return cur.values;
  }
  Box bounds(BoxKind) const override { return Box{{0.0}, {1.0}}; }
  std::vector<double> sample_start(Rng&) const override { return {0.5}; }

 private:
  std::vector<double> pi_, trans_, emit_;
  std::size_t k_;
};

/// One hidden state, Bernoulli emission with success probability p.
class BernoulliModel final : public ModelBase<BernoulliModel> {
 public:
  std::string name() const override { return "bernoulli"; }
  std::size_t n_states() const override { return 1; }
  std::size_t param_dim() const override { return 1; }
  std::vector<std::string> param_names() const override { return {"p"}; }
  ObsKind obs_kind() const override { return ObsKind::kDiscrete; }
  std::vector<std::string> alphabet() const override { return {"0", "1"}; }

  template <class S>
  void initial_t(std::span<const S>, std::span<S> pi) const {
    pi[0] = 1.0;
  }
  template <class S>
  void transition_t(std::span<const S>, const ObsSequence&, std::size_t, std::span<S> out) const {
    out[0] = 1.0;
  }
  template <class S>
  void emission_t(std::span<const S> th, const ObsSequence& seq, std::size_t i, std::span<S> out) const {
    out[0] = seq.codes[i] == 1 ? th[0] : 1.0 - th[0];
  }
  std::vector<double> m_step(const ObsSequence& seq, const PosteriorSet&, const ParamVector& cur) const override {
    double ones = 0, total = 0;
    for (int c : seq.codes) {
      if (c == kMissing) continue;
      ones += c;
      total += 1;
    }
    return {cur.bounds.clip(std::vector<double>{ones / total})[0]};
  }
  Box bounds(BoxKind kind) const override {
    return kind == BoxKind::kNatural ? Box{{0.0}, {1.0}} : Box{{0.01}, {0.99}};
  }
  std::vector<double> sample_start(Rng& rng) const override { return {rng.uniform(0.01, 0.99)}; }
};

/// One hidden state, Gaussian emission (mu, sd).
class GaussianModel final : public ModelBase<GaussianModel> {
 public:
  std::string name() const override { return "gaussian"; }
  std::size_t n_states() const override { return 1; }
  std::size_t param_dim() const override { return 2; }
  std::vector<std::string> param_names() const override { return {"mu", "sd"}; }
  ObsKind obs_kind() const override { return ObsKind::kContinuous; }

  template <class S>
  void initial_t(std::span<const S>, std::span<S> pi) const {
    pi[0] = 1.0;
  }
  template <class S>
  void transition_t(std::span<const S>, const ObsSequence&, std::size_t, std::span<S> out) const {
    out[0] = 1.0;
  }
  template <class S>
  void emission_t(std::span<const S> th, const ObsSequence& seq, std::size_t i, std::span<S> out) const {
    out[0] = gaussian_pdf(seq.values[i], th[0], th[1]);
  }
  std::vector<double> m_step(const ObsSequence& seq, const PosteriorSet&, const ParamVector&) const override {
    double m = 0, v = 0;
    for (double x : seq.values) m += x;
    m /= static_cast<double>(seq.values.size());
    for (double x : seq.values) v += (x - m) * (x - m);
    return {m, std::sqrt(v / static_cast<double>(seq.values.size()))};
  }
  Box bounds(BoxKind kind) const override {
    const double floor = kind == BoxKind::kNatural ? 1e-3 : 0.01;
    return Box{{-kInf, floor}, {kInf, kInf}};
  }
  std::vector<double> sample_start(Rng& rng) const override { return {rng.uniform(-5, 5), rng.uniform(0.1, 5)}; }
};

/// Forwards everything to `inner` and counts the calls that mark one
/// forward pass (initial, scalar or dual) and one EM map (m_step).
class CountingModel final : public Model {
 public:
  explicit CountingModel(std::shared_ptr<const Model> inner) : inner_(std::move(inner)) {}

  mutable std::atomic<long> initial_calls{0};
  mutable std::atomic<long> m_step_calls{0};

  std::string name() const override { return inner_->name(); }
  std::size_t n_states() const override { return inner_->n_states(); }
  std::size_t param_dim() const override { return inner_->param_dim(); }
  std::vector<std::string> param_names() const override { return inner_->param_names(); }
  ObsKind obs_kind() const override { return inner_->obs_kind(); }
  std::vector<std::string> alphabet() const override { return inner_->alphabet(); }
  bool homogeneous() const override { return inner_->homogeneous(); }
  void check_sequence(const ObsSequence& seq) const override { inner_->check_sequence(seq); }

  void initial(std::span<const double> th, std::span<double> pi) const override {
    ++initial_calls;
    inner_->initial(th, pi);
  }
  void initial(std::span<const Dual> th, std::span<Dual> pi) const override {
    ++initial_calls;
    inner_->initial(th, pi);
  }
  void transition(std::span<const double> th, const ObsSequence& seq, std::size_t i,
                  std::span<double> out) const override {
    inner_->transition(th, seq, i, out);
  }
  void transition(std::span<const Dual> th, const ObsSequence& seq, std::size_t i,
                  std::span<Dual> out) const override {
    inner_->transition(th, seq, i, out);
  }
  void emission(std::span<const double> th, const ObsSequence& seq, std::size_t i,
                std::span<double> out) const override {
    inner_->emission(th, seq, i, out);
  }
  void emission(std::span<const Dual> th, const ObsSequence& seq, std::size_t i,
                std::span<Dual> out) const override {
    inner_->emission(th, seq, i, out);
  }
  void log_emission(std::span<const double> th, const ObsSequence& seq, std::size_t i,
                    std::span<double> out) const override {
    inner_->log_emission(th, seq, i, out);
  }
  std::vector<double> m_step(const ObsSequence& seq, const PosteriorSet& post,
                             const ParamVector& cur) const override {
    ++m_step_calls;
    return inner_->m_step(seq, post, cur);
  }
  Box bounds(BoxKind kind) const override { return inner_->bounds(kind); }
  std::vector<double> sample_start(Rng& rng) const override { return inner_->sample_start(rng); }
  std::vector<double> canonical(std::vector<double> th) const override { return inner_->canonical(std::move(th)); }

 private:
  std::shared_ptr<const Model> inner_;
};

}  // namespace hmmfit::testing
