#pragma once

#include <span>
#include <string>
#include <vector>

#include "hmmfit/dual.hpp"
#include "hmmfit/rng.hpp"
#include "hmmfit/types.hpp"

namespace hmmfit {

struct PosteriorSet;

/// Which parameter box a caller wants. EM-family optimizers work in the
/// natural parameter space; direct quasi-Newton uses the narrowed box.
enum class BoxKind { kNatural, kNarrow };

/// An HMM family parameterised by theta. Transition matrices are row-major
/// n_states x n_states; `transition(.., i, ..)` is the step into position i
/// (1 <= i < L). Emission weights are masses for discrete models and
/// densities for continuous ones. Missing observations never reach
/// `emission`: the likelihood engine gives them weight 1 in every state.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string name() const = 0;
  virtual std::size_t n_states() const = 0;
  virtual std::size_t param_dim() const = 0;
  virtual std::vector<std::string> param_names() const = 0;
  virtual ObsKind obs_kind() const = 0;
  /// Symbol for each observation code (discrete models only).
  virtual std::vector<std::string> alphabet() const { return {}; }
  /// True when the transition matrix does not depend on the position.
  virtual bool homogeneous() const { return true; }
  /// Throws if the sequence cannot be used with this model.
  virtual void check_sequence(const ObsSequence& seq) const;

  virtual void initial(std::span<const double> theta, std::span<double> pi) const = 0;
  virtual void initial(std::span<const Dual> theta, std::span<Dual> pi) const = 0;
  virtual void transition(std::span<const double> theta, const ObsSequence& seq, std::size_t i,
                          std::span<double> out) const = 0;
  virtual void transition(std::span<const Dual> theta, const ObsSequence& seq, std::size_t i,
                          std::span<Dual> out) const = 0;
  virtual void emission(std::span<const double> theta, const ObsSequence& seq, std::size_t i,
                        std::span<double> out) const = 0;
  virtual void emission(std::span<const Dual> theta, const ObsSequence& seq, std::size_t i,
                        std::span<Dual> out) const = 0;
  /// Log emission weights. Defaults to the log of `emission`; continuous
  /// models override it where the density can underflow.
  virtual void log_emission(std::span<const double> theta, const ObsSequence& seq, std::size_t i,
                            std::span<double> out) const;

  /// Re-estimates theta from posteriors. Must return a point inside
  /// `current.bounds`.
  virtual std::vector<double> m_step(const ObsSequence& seq, const PosteriorSet& post,
                                     const ParamVector& current) const = 0;

  virtual Box bounds(BoxKind kind) const = 0;
  virtual std::vector<double> sample_start(Rng& rng) const = 0;

  /// Maps theta to a representative of its symmetry class (used when
  /// grouping optima). Identity unless the model has a label symmetry.
  virtual std::vector<double> canonical(std::vector<double> theta) const { return theta; }

  ParamVector make_params(std::vector<double> values, BoxKind kind) const {
    return ParamVector(std::move(values), bounds(kind));
  }
};

/// Implements the scalar/dual virtual pairs by forwarding to the derived
/// class's templated `initial_t`, `transition_t` and `emission_t`.
template <class Derived>
class ModelBase : public Model {
 public:
  void initial(std::span<const double> theta, std::span<double> pi) const override {
    self().initial_t(theta, pi);
  }
  void initial(std::span<const Dual> theta, std::span<Dual> pi) const override { self().initial_t(theta, pi); }
  void transition(std::span<const double> theta, const ObsSequence& seq, std::size_t i,
                  std::span<double> out) const override {
    self().transition_t(theta, seq, i, out);
  }
  void transition(std::span<const Dual> theta, const ObsSequence& seq, std::size_t i,
                  std::span<Dual> out) const override {
    self().transition_t(theta, seq, i, out);
  }
  void emission(std::span<const double> theta, const ObsSequence& seq, std::size_t i,
                std::span<double> out) const override {
    self().emission_t(theta, seq, i, out);
  }
  void emission(std::span<const Dual> theta, const ObsSequence& seq, std::size_t i,
                std::span<Dual> out) const override {
    self().emission_t(theta, seq, i, out);
  }

 private:
  const Derived& self() const { return static_cast<const Derived&>(*this); }
};

}  // namespace hmmfit
