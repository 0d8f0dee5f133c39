#pragma once

// Maximum-likelihood optimizers sharing one stopping rule and one set of
// counters. Internally the quasi-Newton methods minimise f = -loglik;
// RunRecord always reports loglik.

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmmfit/model.hpp"
#include "hmmfit/types.hpp"

namespace hmmfit {

struct StopCriterion {
  double reltol = 1.49e-8;
};

/// |prev - curr| / (|prev| + reltol) < reltol.
bool should_stop(double ll_prev, double ll_curr, const StopCriterion& crit);

/// Inverse-Hessian update used by the quasi-Newton steps. kDfp is
/// H - H y y' H / (y' H y) + s s' / (y' s); kBfgs is the textbook BFGS
/// inverse update. Both keep H positive definite when s' y > 0.
enum class HessianUpdate { kDfp, kBfgs };

struct OptimizerConfig {
  StopCriterion stop;
  int max_iter = 500;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  int max_halvings = 30;
  int squarem_max_halvings = 5;
  HessianUpdate hessian_update = HessianUpdate::kBfgs;

  void validate() const;
};

/// Flat `key = value` text; `#` starts a comment.
using KeyValues = std::map<std::string, std::string, std::less<>>;
KeyValues parse_key_values(std::istream& in);

/// Applies the optimizer keys of `kv` (reltol, max_iter, armijo_c,
/// backtrack, max_halvings, squarem_max_halvings, hessian_update) and
/// erases them from `kv`. Throws std::invalid_argument on bad values.
void apply_config(OptimizerConfig& cfg, KeyValues& kv);
void write_config(std::ostream& out, const OptimizerConfig& cfg);

enum class Optimizer { kBaumWelch, kSquarem, kQnBox, kQnem };

std::string_view optimizer_name(Optimizer opt);
std::optional<Optimizer> parse_optimizer(std::string_view name);
const std::vector<Optimizer>& all_optimizers();
/// EM-family methods use the natural parameter space, qn-box the narrowed box.
BoxKind box_for(Optimizer opt);

enum class Mode { kEm, kQn };

struct SquaremCycle {
  double ll_start = 0.0;
  double ll_em2 = 0.0;  // loglik after the cycle's two plain EM steps
  double ll_end = 0.0;
  bool extrapolated = false;
  int halvings = 0;
};

struct RunRecord {
  std::string optimizer;
  ParamVector final_theta;
  double final_loglik = -kInf;
  int iterations = 0;
  long n_forward = 0;
  long n_backward = 0;
  double wall_time = 0.0;  // seconds
  bool converged = false;
  std::string failure;  // set when the run stopped on an error

  std::vector<Mode> mode_trace;                  // qnem only
  std::vector<double> loglik_trace;              // loglik of each accepted iterate, start included
  std::vector<std::vector<double>> theta_trace;  // the iterates themselves
  std::vector<SquaremCycle> cycles;              // squarem only
};

/// Observation points for tests. Called with the row-major inverse-Hessian
/// approximation after every update.
struct RunHooks {
  std::function<void(std::span<const double> h, std::size_t dim)> on_hessian_update;
};

/// Applies one inverse-Hessian update in place (row-major dim x dim).
/// Returns false and leaves H untouched unless s' y > 0 and the update is
/// finite.
bool update_inverse_hessian(std::span<double> h, std::span<const double> s, std::span<const double> y,
                            HessianUpdate kind);

/// Gradient with the components that point out of the box at an active
/// bound set to zero. `grad` is the gradient of the minimised function.
std::vector<double> project_gradient(std::span<const double> grad, std::span<const double> theta, const Box& box);

RunRecord baum_welch(const Model& model, const ObsSequence& seq, const ParamVector& theta0,
                     const OptimizerConfig& cfg = {});
RunRecord squarem(const Model& model, const ObsSequence& seq, const ParamVector& theta0,
                  const OptimizerConfig& cfg = {});
RunRecord qn_box(const Model& model, const ObsSequence& seq, const ParamVector& theta0,
                 const OptimizerConfig& cfg = {}, const RunHooks* hooks = nullptr);
RunRecord qnem(const Model& model, const ObsSequence& seq, const ParamVector& theta0,
               const OptimizerConfig& cfg = {}, const RunHooks* hooks = nullptr);

/// Runs `opt` from `start` after clipping it into the optimizer's box.
RunRecord run_optimizer(Optimizer opt, const Model& model, const ObsSequence& seq, const std::vector<double>& start,
                        const OptimizerConfig& cfg = {}, const RunHooks* hooks = nullptr);

}  // namespace hmmfit
