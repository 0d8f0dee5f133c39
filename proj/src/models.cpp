#include "hmmfit/models.hpp"

#include <algorithm>
#include <stdexcept>

#include "hmmfit/golden.hpp"
#include "hmmfit/hmm.hpp"

namespace hmmfit {

namespace {

double clamp_to(const Box& box, std::size_t j, double x) { return std::clamp(x, box.lower[j], box.upper[j]); }

double wlog(double w, double p) {
  if (w == 0.0) return 0.0;
  return p > 0.0 ? w * std::log(p) : -kInf;
}

Box uniform_box(std::size_t n, double lo, double hi) { return Box{std::vector<double>(n, lo), std::vector<double>(n, hi)}; }

// Posterior-weighted share of "success" observations per state, used by the
// Bernoulli emission M-steps. Keeps the current value for a state with no
// posterior mass.
template <class IsSuccess>
void bernoulli_emission_update(const ObsSequence& seq, const PosteriorSet& post, IsSuccess&& is_success,
                               std::span<double> out) {
  const std::size_t n = post.n_states;
  std::vector<double> hits(n, 0.0), mass(n, 0.0);
  for (std::size_t i = 0; i < seq.length(); ++i) {
    if (seq.is_missing(i)) continue;
    const bool hit = is_success(seq.codes[i]);
    for (std::size_t s = 0; s < n; ++s) {
      mass[s] += post.phi_at(i, s);
      if (hit) hits[s] += post.phi_at(i, s);
    }
  }
  for (std::size_t s = 0; s < n; ++s) {
    if (mass[s] > 0.0) out[s] = hits[s] / mass[s];
  }
}

}  // namespace

// ---------------------------------------------------------------- umbrella

std::vector<double> UmbrellaModel::m_step(const ObsSequence& seq, const PosteriorSet& post,
                                          const ParamVector& current) const {
  std::vector<double> th = current.values;
  double switches = 0.0, pairs = 0.0;
  for (std::size_t k = 0; k + 1 < post.length; ++k) {
    switches += post.delta_at(k, kDry, kRain) + post.delta_at(k, kRain, kDry);
    pairs += post.delta_at(k, kDry, kDry) + post.delta_at(k, kDry, kRain) + post.delta_at(k, kRain, kDry) +
             post.delta_at(k, kRain, kRain);
  }
  if (pairs > 0.0) th[kA] = switches / pairs;

  double mismatch = 0.0, observed = 0.0;
  for (std::size_t i = 0; i < seq.length(); ++i) {
    if (seq.is_missing(i)) continue;
    observed += 1.0;
    mismatch += seq.codes[i] == kUmbrella ? post.phi_at(i, kDry) : post.phi_at(i, kRain);
  }
  if (observed > 0.0) th[kB] = mismatch / observed;
  // Q is concave and separable in (a, b), so clamping gives the box optimum.
  th[kA] = clamp_to(current.bounds, kA, th[kA]);
  th[kB] = clamp_to(current.bounds, kB, th[kB]);
  return th;
}

Box UmbrellaModel::bounds(BoxKind kind) const {
  return kind == BoxKind::kNatural ? uniform_box(2, 0.0, 1.0) : uniform_box(2, 0.01, 0.99);
}

std::vector<double> UmbrellaModel::sample_start(Rng& rng) const {
  const double a = rng.uniform(0.01, 0.99);
  const double b = rng.uniform(0.01, 0.99);
  return {a, b};
}

std::vector<double> UmbrellaModel::canonical(std::vector<double> theta) const {
  theta[kB] = std::min(theta[kB], 1.0 - theta[kB]);
  return theta;
}

// ------------------------------------------------------------------ geyser

namespace geyser {

std::array<double, 2> m_step_chain(const PosteriorSet& post, double a_cur, double b_cur, const Box& box) {
  double n_s_l = 0.0, n_s_sl = 0.0, n_sl_s = 0.0, n_sl_sl = 0.0;
  for (std::size_t k = 0; k + 1 < post.length; ++k) {
    n_s_l += post.delta_at(k, kShort, kLong);
    n_s_sl += post.delta_at(k, kShort, kSteadyLong);
    n_sl_s += post.delta_at(k, kSteadyLong, kShort);
    n_sl_sl += post.delta_at(k, kSteadyLong, kSteadyLong);
  }
  std::array<double, 3> phi0{post.phi_at(0, 0), post.phi_at(0, 1), post.phi_at(0, 2)};
  auto q = [&](double a, double b) {
    std::array<double, 3> pi{};
    stationary<double>(a, b, pi);
    return wlog(n_s_l, 1.0 - a) + wlog(n_s_sl, a) + wlog(n_sl_s, 1.0 - b) + wlog(n_sl_sl, b) +
           wlog(phi0[0], pi[0]) + wlog(phi0[1], pi[1]) + wlog(phi0[2], pi[2]);
  };

  // Start from the better of the count-ratio solution (exact when the
  // initial law is ignored) and the current point, then coordinate ascent.
  double a = a_cur, b = b_cur;
  const double a_ratio = (n_s_l + n_s_sl) > 0.0 ? n_s_sl / (n_s_l + n_s_sl) : a_cur;
  const double b_ratio = (n_sl_s + n_sl_sl) > 0.0 ? n_sl_sl / (n_sl_s + n_sl_sl) : b_cur;
  const double ar = std::clamp(a_ratio, box.lower[0], box.upper[0]);
  const double br = std::clamp(b_ratio, box.lower[1], box.upper[1]);
  double best = q(a, b);
  if (const double qr = q(ar, br); qr > best || std::isnan(best)) {
    a = ar;
    b = br;
    best = qr;
  }
  for (int sweep = 0; sweep < 20; ++sweep) {
    const double before = best;
    const auto na = improve_1d([&](double x) { return q(x, b); }, a, box.lower[0], box.upper[0]);
    a = na.x;
    const auto nb = improve_1d([&](double x) { return q(a, x); }, b, box.lower[1], box.upper[1]);
    b = nb.x;
    best = nb.value;
    if (!(best - before > 1e-13 * (1.0 + std::abs(best)))) break;
  }
  return {a, b};
}

}  // namespace geyser

std::vector<double> GeyserDiscModel::m_step(const ObsSequence& seq, const PosteriorSet& post,
                                            const ParamVector& current) const {
  std::vector<double> th = current.values;
  const auto ab = geyser::m_step_chain(post, th[kA], th[kB], current.bounds);
  th[kA] = ab[0];
  th[kB] = ab[1];
  bernoulli_emission_update(seq, post, [](int code) { return code == kAtLeast3; },
                            std::span<double>(th.data() + kC, 3));
  for (std::size_t j = kC; j <= kE; ++j) th[j] = clamp_to(current.bounds, j, th[j]);
  return th;
}

Box GeyserDiscModel::bounds(BoxKind kind) const {
  return kind == BoxKind::kNatural ? uniform_box(5, 0.0, 1.0) : uniform_box(5, 0.01, 0.99);
}

std::vector<double> GeyserDiscModel::sample_start(Rng& rng) const {
  std::vector<double> th(5);
  for (auto& x : th) x = rng.uniform(0.01, 0.99);
  return th;
}

std::vector<double> GeyserContModel::m_step(const ObsSequence& seq, const PosteriorSet& post,
                                            const ParamVector& current) const {
  std::vector<double> th = current.values;
  const auto ab = geyser::m_step_chain(post, th[kA], th[kB], current.bounds);
  th[kA] = ab[0];
  th[kB] = ab[1];
  for (std::size_t s = 0; s < 3; ++s) {
    double mass = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < seq.length(); ++i) {
      mass += post.phi_at(i, s);
      sum += post.phi_at(i, s) * seq.values[i];
    }
    if (!(mass > 0.0)) continue;
    const double mean = sum / mass;
    double ss = 0.0;
    for (std::size_t i = 0; i < seq.length(); ++i) {
      const double dev = seq.values[i] - mean;
      ss += post.phi_at(i, s) * dev * dev;
    }
    th[kMuS + s] = clamp_to(current.bounds, kMuS + s, mean);
    // The Gaussian Q term is unimodal in sd, so the floor is the constrained optimum.
    th[kSdS + s] = clamp_to(current.bounds, kSdS + s, std::max(std::sqrt(ss / mass), kSdFloor));
  }
  return th;
}

Box GeyserContModel::bounds(BoxKind kind) const {
  const double lo = kind == BoxKind::kNatural ? 0.0 : 0.01;
  const double hi = kind == BoxKind::kNatural ? 1.0 : 0.99;
  return Box{{lo, lo, -kInf, -kInf, -kInf, kSdFloor, kSdFloor, kSdFloor}, {hi, hi, kInf, kInf, kInf, kInf, kInf, kInf}};
}

std::vector<double> GeyserContModel::sample_start(Rng& rng) const {
  std::vector<double> th(8);
  th[kA] = rng.uniform(0.01, 0.99);
  th[kB] = rng.uniform(0.01, 0.99);
  for (std::size_t s = 0; s < 3; ++s) th[kMuS + s] = rng.uniform(1.0, 5.5);
  for (std::size_t s = 0; s < 3; ++s) th[kSdS + s] = rng.uniform(0.01, 2.0);
  return th;
}

// --------------------------------------------------------------------- hbd

void HbdModel::check_sequence(const ObsSequence& seq) const {
  if (!seq.has_positions()) throw MissingPositions("hbd model needs genetic positions (cM)");
  if (seq.allele_freq.empty()) throw MissingPositions("hbd model needs per-position allele frequencies");
  Model::check_sequence(seq);
}

std::array<double, 2> HbdModel::genotype_weights(int code, double p_ref) const {
  const double pa = 1.0 - p_ref;
  switch (code) {
    case kAA:
      return {p_ref * p_ref, (1.0 - epsilon_) * p_ref + epsilon_ * p_ref * p_ref};
    case kAa:
      return {2.0 * p_ref * pa, 2.0 * epsilon_ * p_ref * pa};
    case kaa:
      return {pa * pa, (1.0 - epsilon_) * pa + epsilon_ * pa * pa};
    default:
      return {1.0, 1.0};
  }
}

HbdModel::ChainSufficient HbdModel::chain_sufficient(const ObsSequence& seq, const PosteriorSet& post) {
  ChainSufficient suff;
  suff.phi0 = {post.phi_at(0, 0), post.phi_at(0, 1)};
  for (std::size_t k = 0; k + 1 < post.length; ++k) {
    // Group spacings equal up to 1e-9 cM; positions on a regular grid
    // differ from each other only by rounding.
    const double d = seq.spacing(k + 1);
    const double key = std::round(d * 1e9) * 1e-9;
    auto& acc = suff.by_spacing[key];
    for (std::size_t s = 0; s < 2; ++s) {
      for (std::size_t t = 0; t < 2; ++t) acc[s * 2 + t] += post.delta_at(k, s, t);
    }
  }
  return suff;
}

double HbdModel::chain_q(const ChainSufficient& suff, double f, double a) {
  double q = wlog(suff.phi0[0], 1.0 - f) + wlog(suff.phi0[1], f);
  for (const auto& [d, n] : suff.by_spacing) {
    const double stay = std::exp(-a * d);
    const double jump = 1.0 - stay;
    q += wlog(n[0], jump * (1.0 - f) + stay) + wlog(n[1], jump * f) + wlog(n[2], jump * (1.0 - f)) +
         wlog(n[3], jump * f + stay);
  }
  return q;
}

std::vector<double> HbdModel::m_step(const ObsSequence& seq, const PosteriorSet& post,
                                     const ParamVector& current) const {
  // No closed form in (f, a): generalized EM by coordinate ascent on Q,
  // warm-started at the current point so Q never decreases.
  const ChainSufficient suff = chain_sufficient(seq, post);
  const Box& box = current.bounds;
  double f = current.values[kF];
  double a = current.values[kA];
  const double log_lo = std::log(std::max(box.lower[kA], 1e-8));
  const double log_hi = std::log(std::min(box.upper[kA], 1e4));
  for (int sweep = 0; sweep < kGemSweeps; ++sweep) {
    f = improve_1d([&](double x) { return chain_q(suff, x, a); }, f, box.lower[kF], box.upper[kF]).x;
    // Search a on the log scale; a = lower bound is tried separately.
    auto qa = [&](double u) { return chain_q(suff, f, std::exp(u)); };
    const double u0 = std::log(std::max(a, 1e-8));
    auto best = improve_1d(qa, std::clamp(u0, log_lo, log_hi), log_lo, log_hi);
    double a_new = std::exp(best.x);
    const double q_cur = chain_q(suff, f, a);
    if (!(best.value > q_cur)) a_new = a;
    if (const double q_lo = chain_q(suff, f, box.lower[kA]); q_lo > std::max(best.value, q_cur)) a_new = box.lower[kA];
    a = std::clamp(a_new, box.lower[kA], box.upper[kA]);
  }
  return {f, a};
}

Box HbdModel::bounds(BoxKind kind) const {
  if (kind == BoxKind::kNatural) return Box{{0.0, 0.0}, {1.0, kInf}};
  return Box{{0.01, 0.01}, {0.99, kInf}};
}

std::vector<double> HbdModel::sample_start(Rng& rng) const {
  const double f = rng.uniform(0.01, 0.99);
  const double a = rng.uniform(0.01, 1.0);
  return {f, a};
}

// ---------------------------------------------------------------- registry

UmbrellaModel umbrella_spec() { return UmbrellaModel{}; }
GeyserDiscModel geyser_disc_spec() { return GeyserDiscModel{}; }
GeyserContModel geyser_cont_spec() { return GeyserContModel{}; }
HbdModel hbd_spec(double epsilon) { return HbdModel(epsilon); }

const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names{"umbrella", "geyser-disc", "geyser-cont", "hbd"};
  return names;
}

std::shared_ptr<const Model> make_model(std::string_view name) {
  if (name == "umbrella") return std::make_shared<UmbrellaModel>();
  if (name == "geyser-disc") return std::make_shared<GeyserDiscModel>();
  if (name == "geyser-cont") return std::make_shared<GeyserContModel>();
  if (name == "hbd") return std::make_shared<HbdModel>();
  throw std::invalid_argument("unknown model '" + std::string(name) + "'");
}

}  // namespace hmmfit
