#include "hmmfit/hmm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

namespace hmmfit {

void Model::check_sequence(const ObsSequence& seq) const {
  seq.validate();
  if (seq.kind != obs_kind()) throw DataCorrupt(name() + ": observation kind does not match the model");
  if (seq.kind == ObsKind::kDiscrete) {
    const int n_symbols = static_cast<int>(alphabet().size());
    for (int c : seq.codes) {
      if (c != kMissing && (c < 0 || c >= n_symbols)) throw DataCorrupt(name() + ": observation code out of range");
    }
  }
}

void Model::log_emission(std::span<const double> theta, const ObsSequence& seq, std::size_t i,
                         std::span<double> out) const {
  emission(theta, seq, i, out);
  for (auto& v : out) v = v > 0.0 ? std::log(v) : -kInf;
}

namespace {

template <class Scalar>
struct ForwardState {
  std::vector<Scalar> alpha;
  std::vector<Scalar> beta;
  std::vector<Scalar> gamma;
  Scalar loglik = 0.0;
  bool ok = true;
  std::size_t fail_at = 0;
};

template <class Scalar>
void fill_emissions(const Model& model, std::span<const Scalar> theta, const ObsSequence& seq, std::size_t i,
                    std::span<Scalar> out) {
  if (seq.is_missing(i)) {
    std::fill(out.begin(), out.end(), Scalar(1.0));
  } else {
    model.emission(theta, seq, i, out);
  }
}

// Recursions shared by the plain and the dual pass; keeping one code path
// makes the dual value field match the plain result bit for bit.
template <class Scalar>
ForwardState<Scalar> run_forward(const Model& model, std::span<const Scalar> theta, const ObsSequence& seq,
                                 bool keep_trace) {
  using std::log;
  const std::size_t n = model.n_states();
  const std::size_t len = seq.length();
  ForwardState<Scalar> st;
  st.alpha.resize(len * n);
  st.beta.resize(len * n);
  if (keep_trace) st.gamma.resize(len);

  std::vector<Scalar> trans(n * n);
  std::vector<Scalar> emit(n);
  model.initial(theta, std::span<Scalar>(st.alpha.data(), n));
  const bool homogeneous = model.homogeneous();
  if (homogeneous && len > 1) model.transition(theta, seq, 1, std::span<Scalar>(trans));

  Scalar gamma = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    Scalar* alpha = &st.alpha[i * n];
    Scalar* beta = &st.beta[i * n];
    if (i > 0) {
      if (!homogeneous) model.transition(theta, seq, i, std::span<Scalar>(trans));
      const Scalar* prev = &st.beta[(i - 1) * n];
      for (std::size_t s = 0; s < n; ++s) {
        Scalar acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) acc += trans[t * n + s] * prev[t];
        alpha[s] = acc;
      }
    }
    if (seq.is_missing(i)) {
      std::copy(alpha, alpha + n, beta);
    } else {
      fill_emissions(model, theta, seq, i, std::span<Scalar>(emit));
      Scalar norm = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        beta[s] = emit[s] * alpha[s];
        norm += beta[s];
      }
      if (!(norm > 0.0) || !std::isfinite(value_of(norm))) {
        st.ok = false;
        st.fail_at = i;
        st.loglik = -kInf;
        return st;
      }
      for (std::size_t s = 0; s < n; ++s) beta[s] /= norm;
      gamma += log(norm);
    }
    if (keep_trace) st.gamma[i] = gamma;
  }
  st.loglik = gamma;
  return st;
}

ForwardResult to_result(ForwardState<double>&& st, std::size_t len, std::size_t n) {
  ForwardResult r;
  r.length = len;
  r.n_states = n;
  r.alpha = std::move(st.alpha);
  r.beta = std::move(st.beta);
  r.loglik = st.loglik;
  r.gamma_trace = std::move(st.gamma);
  return r;
}

double log_sum_exp(std::span<const double> xs) {
  double mx = -kInf;
  for (double x : xs) mx = std::max(mx, x);
  if (mx == -kInf) return -kInf;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

double safe_log(double x) { return x > 0.0 ? std::log(x) : -kInf; }

// w * log(p) with 0 * log 0 = 0.
double weighted_log(double w, double p) {
  if (w == 0.0) return 0.0;
  return w * safe_log(p);
}

}  // namespace

std::optional<ForwardResult> try_forward_conditional(const Model& model, std::span<const double> theta,
                                                     const ObsSequence& seq, bool keep_trace) {
  auto st = run_forward<double>(model, theta, seq, keep_trace);
  if (!st.ok) return std::nullopt;
  return to_result(std::move(st), seq.length(), model.n_states());
}

ForwardResult forward_conditional(const Model& model, std::span<const double> theta, const ObsSequence& seq,
                                  bool keep_trace) {
  auto st = run_forward<double>(model, theta, seq, keep_trace);
  if (!st.ok) {
    throw NumericalUnderflow(st.fail_at,
                             "observation " + std::to_string(st.fail_at) + " has zero probability under theta");
  }
  return to_result(std::move(st), seq.length(), model.n_states());
}

double forward_joint_log(const Model& model, std::span<const double> theta, const ObsSequence& seq) {
  const std::size_t n = model.n_states();
  const std::size_t len = seq.length();
  std::vector<double> pi(n), trans(n * n), emit(n);
  std::vector<double> log_a(n), log_b(n), terms(n);
  model.initial(theta, pi);
  for (std::size_t s = 0; s < n; ++s) log_a[s] = safe_log(pi[s]);
  for (std::size_t i = 0; i < len; ++i) {
    if (i > 0) {
      model.transition(theta, seq, i, trans);
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t t = 0; t < n; ++t) terms[t] = log_b[t] + safe_log(trans[t * n + s]);
        log_a[s] = log_sum_exp(terms);
      }
    }
    emission_weights(model, theta, seq, i, emit);
    for (std::size_t s = 0; s < n; ++s) log_b[s] = log_a[s] + safe_log(emit[s]);
  }
  return log_sum_exp(log_b);
}

PosteriorSet backward(const Model& model, std::span<const double> theta, const ObsSequence& seq,
                      const ForwardResult& fw) {
  const std::size_t n = model.n_states();
  const std::size_t len = seq.length();
  if (fw.length != len || fw.n_states != n) throw std::invalid_argument("forward result does not match sequence");
  PosteriorSet post;
  post.length = len;
  post.n_states = n;
  post.phi.assign(len * n, 0.0);
  post.delta.assign(len > 0 ? (len - 1) * n * n : 0, 0.0);
  std::copy(fw.beta.end() - static_cast<std::ptrdiff_t>(n), fw.beta.end(), post.phi.end() - static_cast<std::ptrdiff_t>(n));

  std::vector<double> trans(n * n);
  const bool homogeneous = model.homogeneous();
  if (homogeneous && len > 1) model.transition(theta, seq, 1, trans);
  for (std::size_t i = len - 1; i >= 1; --i) {
    if (!homogeneous) model.transition(theta, seq, i, trans);
    const std::size_t k = i - 1;
    for (std::size_t s = 0; s < n; ++s) {
      double row = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const double num = trans[s * n + t] * fw.beta_at(i - 1, s) * post.phi_at(i, t);
        const double den = fw.alpha_at(i, t);
        double d = 0.0;
        if (den > 0.0) {
          d = num / den;
        } else if (num > 0.0) {
          throw DegeneratePosterior("zero forecast probability with positive smoothing mass at position " +
                                    std::to_string(i));
        }
        post.delta[(k * n + s) * n + t] = d;
        row += d;
      }
      post.phi[(i - 1) * n + s] = row;
    }
  }
  return post;
}

GradientResult loglik_with_gradient(const Model& model, std::span<const double> theta, const ObsSequence& seq) {
  const std::vector<Dual> dual_theta = seed(theta);
  GradientResult out;
  auto st = run_forward<Dual>(model, dual_theta, seq, false);
  if (!st.ok) return out;
  out.loglik = st.loglik.value;
  out.gradient.assign(st.loglik.partials.begin(), st.loglik.partials.begin() + static_cast<std::ptrdiff_t>(theta.size()));
  out.valid = std::isfinite(out.loglik) &&
              std::all_of(out.gradient.begin(), out.gradient.end(), [](double g) { return std::isfinite(g); });
  const std::size_t n = model.n_states();
  ForwardResult& fw = out.forward;
  fw.length = seq.length();
  fw.n_states = n;
  fw.loglik = out.loglik;
  fw.alpha.resize(st.alpha.size());
  fw.beta.resize(st.beta.size());
  std::transform(st.alpha.begin(), st.alpha.end(), fw.alpha.begin(), [](const Dual& d) { return d.value; });
  std::transform(st.beta.begin(), st.beta.end(), fw.beta.begin(), [](const Dual& d) { return d.value; });
  return out;
}

void emission_weights(const Model& model, std::span<const double> theta, const ObsSequence& seq, std::size_t i,
                      std::span<double> out) {
  fill_emissions<double>(model, theta, seq, i, out);
}

double expected_complete_loglik(const Model& model, std::span<const double> theta, const ObsSequence& seq,
                                const PosteriorSet& post) {
  const std::size_t n = model.n_states();
  const std::size_t len = seq.length();
  std::vector<double> pi(n), trans(n * n), emit(n);
  model.initial(theta, pi);
  double q = 0.0;
  for (std::size_t s = 0; s < n; ++s) q += weighted_log(post.phi_at(0, s), pi[s]);
  for (std::size_t i = 1; i < len; ++i) {
    if (i == 1 || !model.homogeneous()) model.transition(theta, seq, i, trans);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t t = 0; t < n; ++t) q += weighted_log(post.delta_at(i - 1, s, t), trans[s * n + t]);
    }
  }
  for (std::size_t i = 0; i < len; ++i) {
    if (seq.is_missing(i)) continue;
    model.log_emission(theta, seq, i, emit);
    for (std::size_t s = 0; s < n; ++s) {
      if (post.phi_at(i, s) != 0.0) q += post.phi_at(i, s) * emit[s];
    }
  }
  return q;
}

std::optional<std::vector<double>> stationary_distribution(std::span<const double> transition, std::size_t n) {
  // Solve pi (T - I) = 0 with sum(pi) = 1 as a least-squares system and
  // reject it when the null space is not one-dimensional.
  Eigen::MatrixXd a(n + 1, n);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = 0; t < n; ++t) a(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(s)) = transition[s * n + t] - (s == t ? 1.0 : 0.0);
  }
  a.row(static_cast<Eigen::Index>(n)).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n + 1));
  rhs(static_cast<Eigen::Index>(n)) = 1.0;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < static_cast<Eigen::Index>(n)) return std::nullopt;
  Eigen::VectorXd pi = qr.solve(rhs);
  return std::vector<double>(pi.data(), pi.data() + n);
}

}  // namespace hmmfit
