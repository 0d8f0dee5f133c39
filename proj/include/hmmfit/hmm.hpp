#pragma once

// Likelihood evaluation and posterior smoothing for any Model.
//
// Indexing is zero-based throughout. For a sequence of length L:
//   alpha(i, s) = P(S_i = s | X_0..X_{i-1})       (forecast)
//   beta(i, s)  = P(S_i = s | X_0..X_i)           (filtering)
//   phi(i, s)   = P(S_i = s | X_0..X_{L-1})       (marginal posterior)
//   delta(k, s, t) = P(S_k = s, S_{k+1} = t | X)   for k = 0..L-2,
// i.e. slice k covers the transition into position k+1.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "hmmfit/model.hpp"

namespace hmmfit {

struct ForwardResult {
  std::size_t length = 0;
  std::size_t n_states = 0;
  std::vector<double> alpha;  // length x n_states, row-major
  std::vector<double> beta;   // length x n_states, row-major
  double loglik = 0.0;
  std::vector<double> gamma_trace;  // partial log-likelihoods, filled on request

  double alpha_at(std::size_t i, std::size_t s) const { return alpha[i * n_states + s]; }
  double beta_at(std::size_t i, std::size_t s) const { return beta[i * n_states + s]; }
};

struct PosteriorSet {
  std::size_t length = 0;
  std::size_t n_states = 0;
  std::vector<double> delta;  // (length-1) x n_states x n_states
  std::vector<double> phi;    // length x n_states

  double delta_at(std::size_t k, std::size_t s, std::size_t t) const {
    return delta[(k * n_states + s) * n_states + t];
  }
  double phi_at(std::size_t i, std::size_t s) const { return phi[i * n_states + s]; }
};

/// Conditional-probability forward pass. Throws NumericalUnderflow when an
/// observation has zero probability given the past.
ForwardResult forward_conditional(const Model& model, std::span<const double> theta, const ObsSequence& seq,
                                  bool keep_trace = false);

/// Same as forward_conditional but reports an impossible observation as
/// std::nullopt instead of throwing.
std::optional<ForwardResult> try_forward_conditional(const Model& model, std::span<const double> theta,
                                                     const ObsSequence& seq, bool keep_trace = false);

/// Joint-probability forward pass carried out on the log scale. Returns
/// -infinity for a zero-probability sequence.
double forward_joint_log(const Model& model, std::span<const double> theta, const ObsSequence& seq);

/// Smoothing pass. `fw` must come from the same (model, theta, seq).
PosteriorSet backward(const Model& model, std::span<const double> theta, const ObsSequence& seq,
                      const ForwardResult& fw);

struct GradientResult {
  double loglik = -kInf;
  std::vector<double> gradient;  // d loglik / d theta
  bool valid = false;
  ForwardResult forward;  // value part of the dual pass, reusable for backward()
};

/// Log-likelihood and its exact gradient via forward-mode AD.
GradientResult loglik_with_gradient(const Model& model, std::span<const double> theta, const ObsSequence& seq);

/// Q(theta; posteriors): expected complete-data log-likelihood, with the
/// 0 * log 0 = 0 convention.
double expected_complete_loglik(const Model& model, std::span<const double> theta, const ObsSequence& seq,
                                const PosteriorSet& post);

/// Fills `out` with emission weights at position i; missing observations get 1.
void emission_weights(const Model& model, std::span<const double> theta, const ObsSequence& seq, std::size_t i,
                      std::span<double> out);

/// Stationary distribution of a row-stochastic matrix (row-major n x n) by a
/// dense linear solve. Returns nullopt when it is not unique.
std::optional<std::vector<double>> stationary_distribution(std::span<const double> transition, std::size_t n);

}  // namespace hmmfit
