#include "hmmfit/optimizers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "hmmfit/hmm.hpp"

namespace hmmfit {

bool should_stop(double ll_prev, double ll_curr, const StopCriterion& crit) {
  return std::abs(ll_prev - ll_curr) / (std::abs(ll_prev) + crit.reltol) < crit.reltol;
}

void OptimizerConfig::validate() const {
  if (!(stop.reltol > 0.0)) throw std::invalid_argument("reltol must be > 0");
  if (max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
  if (!(armijo_c > 0.0 && armijo_c < 1.0)) throw std::invalid_argument("armijo_c must lie in (0, 1)");
  if (!(backtrack > 0.0 && backtrack < 1.0)) throw std::invalid_argument("backtrack must lie in (0, 1)");
  if (max_halvings < 0) throw std::invalid_argument("max_halvings must be >= 0");
  if (squarem_max_halvings < 0) throw std::invalid_argument("squarem_max_halvings must be >= 0");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::invalid_argument("bad value for " + key + ": '" + text + "'");
  }
  return v;
}

}  // namespace

KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
    kv[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

void apply_config(OptimizerConfig& cfg, KeyValues& kv) {
  auto take = [&](std::string_view key, auto& target) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    target = parse_number<std::remove_reference_t<decltype(target)>>(it->first, it->second);
    kv.erase(it);
  };
  take("reltol", cfg.stop.reltol);
  take("max_iter", cfg.max_iter);
  take("armijo_c", cfg.armijo_c);
  take("backtrack", cfg.backtrack);
  take("max_halvings", cfg.max_halvings);
  take("squarem_max_halvings", cfg.squarem_max_halvings);
  if (auto it = kv.find("hessian_update"); it != kv.end()) {
    if (it->second == "dfp") {
      cfg.hessian_update = HessianUpdate::kDfp;
    } else if (it->second == "bfgs") {
      cfg.hessian_update = HessianUpdate::kBfgs;
    } else {
      throw std::invalid_argument("hessian_update must be 'dfp' or 'bfgs', got '" + it->second + "'");
    }
    kv.erase(it);
  }
  cfg.validate();
}

void write_config(std::ostream& out, const OptimizerConfig& cfg) {
  const auto old_precision = out.precision(17);
  out << "reltol = " << cfg.stop.reltol << '\n'
      << "max_iter = " << cfg.max_iter << '\n'
      << "armijo_c = " << cfg.armijo_c << '\n'
      << "backtrack = " << cfg.backtrack << '\n'
      << "max_halvings = " << cfg.max_halvings << '\n'
      << "squarem_max_halvings = " << cfg.squarem_max_halvings << '\n'
      << "hessian_update = " << (cfg.hessian_update == HessianUpdate::kBfgs ? "bfgs" : "dfp") << '\n';
  out.precision(old_precision);
}

std::string_view optimizer_name(Optimizer opt) {
  switch (opt) {
    case Optimizer::kBaumWelch: return "baum-welch";
    case Optimizer::kSquarem: return "squarem";
    case Optimizer::kQnBox: return "qn-box";
    case Optimizer::kQnem: return "qnem";
  }
  return "?";
}

std::optional<Optimizer> parse_optimizer(std::string_view name) {
  for (Optimizer opt : all_optimizers()) {
    if (optimizer_name(opt) == name) return opt;
  }
  if (name == "bw") return Optimizer::kBaumWelch;
  if (name == "qn_box" || name == "qn") return Optimizer::kQnBox;
  return std::nullopt;
}

const std::vector<Optimizer>& all_optimizers() {
  static const std::vector<Optimizer> all{Optimizer::kQnBox, Optimizer::kBaumWelch, Optimizer::kSquarem,
                                          Optimizer::kQnem};
  return all;
}

BoxKind box_for(Optimizer opt) { return opt == Optimizer::kQnBox ? BoxKind::kNarrow : BoxKind::kNatural; }

bool update_inverse_hessian(std::span<double> h, std::span<const double> s, std::span<const double> y,
                            HessianUpdate kind) {
  const auto n = static_cast<Eigen::Index>(s.size());
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<RowMatrix> hm(h.data(), n, n);
  const Eigen::Map<const Eigen::VectorXd> sv(s.data(), n);
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  const double ys = yv.dot(sv);
  if (!(ys > 0.0) || !std::isfinite(ys)) return false;

  RowMatrix next;
  if (kind == HessianUpdate::kDfp) {
    const Eigen::VectorXd hy = hm * yv;
    const double yhy = yv.dot(hy);
    if (!(yhy > 0.0)) return false;
    next = hm - (hy * hy.transpose()) / yhy + (sv * sv.transpose()) / ys;
  } else {
    const double rho = 1.0 / ys;
    const RowMatrix left = RowMatrix::Identity(n, n) - rho * sv * yv.transpose();
    next = left * hm * left.transpose() + rho * sv * sv.transpose();
  }
  next = 0.5 * (next + next.transpose()).eval();
  if (!next.allFinite()) return false;
  hm = next;
  return true;
}

std::vector<double> project_gradient(std::span<const double> grad, std::span<const double> theta, const Box& box) {
  std::vector<double> out(grad.begin(), grad.end());
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (theta[j] <= box.lower[j] && out[j] > 0.0) out[j] = 0.0;
    if (theta[j] >= box.upper[j] && out[j] < 0.0) out[j] = 0.0;
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += a[j] * b[j];
  return acc;
}

std::vector<double> minus(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] - b[j];
  return out;
}

std::vector<double> negated(std::span<const double> a) {
  std::vector<double> out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = -a[j];
  return out;
}

std::vector<double> identity(std::size_t n) {
  std::vector<double> h(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) h[j * n + j] = 1.0;
  return h;
}

// Every likelihood evaluation goes through here so the counters stay exact.
class Evaluator {
 public:
  Evaluator(const Model& model, const ObsSequence& seq, const Box& box, RunRecord& rec)
      : model_(model), seq_(seq), box_(box), rec_(rec) {}

  std::optional<ForwardResult> forward(const std::vector<double>& theta) {
    require_feasible(theta);
    ++rec_.n_forward;
    return try_forward_conditional(model_, theta, seq_);
  }

  GradientResult gradient(const std::vector<double>& theta) {
    require_feasible(theta);
    ++rec_.n_forward;
    return loglik_with_gradient(model_, theta, seq_);
  }

  /// One E-step (backward over an existing forward pass) plus M-step.
  std::vector<double> em_map(const std::vector<double>& theta, const ForwardResult& fw) {
    ++rec_.n_backward;
    const PosteriorSet post = backward(model_, theta, seq_, fw);
    std::vector<double> next = model_.m_step(seq_, post, ParamVector(theta, box_));
    if (next.size() != theta.size() || !box_.contains(next)) {
      throw ModelError(model_.name() + ": M-step left the parameter box");
    }
    return next;
  }

  const Box& box() const { return box_; }

 private:
  void require_feasible(const std::vector<double>& theta) const {
    if (!box_.contains(theta)) throw ModelError("optimizer produced an infeasible iterate");
  }

  const Model& model_;
  const ObsSequence& seq_;
  const Box& box_;
  RunRecord& rec_;
};

void accept(RunRecord& rec, const Box& box, const std::vector<double>& theta, double ll) {
  rec.final_theta = ParamVector(theta, box);
  rec.final_loglik = ll;
  rec.loglik_trace.push_back(ll);
  rec.theta_trace.push_back(theta);
}

RunRecord start_record(std::string_view name, const ParamVector& theta0) {
  if (!theta0.feasible()) throw std::invalid_argument("starting point outside its parameter box");
  RunRecord rec;
  rec.optimizer = std::string(name);
  rec.final_theta = theta0;
  return rec;
}

template <class Body>
void timed(RunRecord& rec, Body&& body) {
  const auto t0 = Clock::now();
  body();
  rec.wall_time = std::chrono::duration<double>(Clock::now() - t0).count();
}

struct LineSearchResult {
  enum Status { kAccepted, kNoProgress, kFailed } status = kFailed;
  std::vector<double> theta;
  GradientResult eval;
};

// Projected backtracking: candidates are clipped into the box and the
// sufficient-decrease test uses the realised step.
LineSearchResult armijo_search(Evaluator& ev, const std::vector<double>& theta, double f0,
                               const std::vector<double>& grad_f, const std::vector<double>& direction,
                               double first_step, const OptimizerConfig& cfg) {
  LineSearchResult out;
  double step = first_step;
  for (int h = 0; h <= cfg.max_halvings; ++h, step *= cfg.backtrack) {
    std::vector<double> cand(theta.size());
    for (std::size_t j = 0; j < theta.size(); ++j) cand[j] = theta[j] + step * direction[j];
    cand = ev.box().clip(std::move(cand));
    if (cand == theta) {
      out.status = LineSearchResult::kNoProgress;
      return out;
    }
    GradientResult eval = ev.gradient(cand);
    if (!eval.valid) continue;
    const double decrease = dot(grad_f, minus(cand, theta));
    if (-eval.loglik <= f0 + cfg.armijo_c * decrease) {
      out.status = LineSearchResult::kAccepted;
      out.theta = std::move(cand);
      out.eval = std::move(eval);
      return out;
    }
  }
  return out;
}

// -H g restricted to the free coordinates: a coordinate at a bound whose
// gradient points out of the box stays fixed. Empty when the result is not
// a descent direction.
std::vector<double> search_direction(std::span<const double> h, const std::vector<double>& grad_f,
                                     const std::vector<double>& theta, const Box& box) {
  const std::size_t n = theta.size();
  const std::vector<double> grad_proj = project_gradient(grad_f, theta, box);
  std::vector<double> p(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const bool at_lower = theta[r] <= box.lower[r];
    const bool at_upper = theta[r] >= box.upper[r];
    if ((at_lower || at_upper) && grad_proj[r] == 0.0) continue;
    for (std::size_t c = 0; c < n; ++c) p[r] -= h[r * n + c] * grad_proj[c];
    if ((at_lower && p[r] < 0.0) || (at_upper && p[r] > 0.0)) p[r] = 0.0;
  }
  if (!(dot(p, grad_f) < 0.0)) return {};
  return p;
}

bool is_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

}  // namespace

RunRecord baum_welch(const Model& model, const ObsSequence& seq, const ParamVector& theta0,
                     const OptimizerConfig& cfg) {
  cfg.validate();
  RunRecord rec = start_record(optimizer_name(Optimizer::kBaumWelch), theta0);
  timed(rec, [&] {
    Evaluator ev(model, seq, theta0.bounds, rec);
    std::vector<double> theta = theta0.values;
    double ll_prev = 0.0;
    try {
      // Iteration k evaluates theta_{k-1}, then maps it to theta_k. The stop
      // test compares the two latest evaluated points, so on exit the
      // reported point is the last one whose loglik is known.
      for (int k = 1; k <= cfg.max_iter; ++k) {
        const std::optional<ForwardResult> fw = ev.forward(theta);
        if (!fw) {
          rec.failure = "observation sequence has zero probability at the current parameters";
          break;
        }
        rec.iterations = k;
        accept(rec, ev.box(), theta, fw->loglik);
        std::vector<double> next = ev.em_map(theta, *fw);
        if (k > 1 && should_stop(ll_prev, fw->loglik, cfg.stop)) {
          rec.converged = true;
          break;
        }
        // An exact fixed point repeats its loglik, so the stop test holds.
        if (next == theta) {
          rec.converged = true;
          break;
        }
        ll_prev = fw->loglik;
        theta = std::move(next);
      }
    } catch (const DegeneratePosterior& e) {
      rec.failure = e.what();
    }
  });
  return rec;
}

RunRecord squarem(const Model& model, const ObsSequence& seq, const ParamVector& theta0,
                  const OptimizerConfig& cfg) {
  cfg.validate();
  RunRecord rec = start_record(optimizer_name(Optimizer::kSquarem), theta0);
  timed(rec, [&] {
    Evaluator ev(model, seq, theta0.bounds, rec);
    const Box& box = ev.box();
    try {
      std::vector<double> theta = theta0.values;
      std::optional<ForwardResult> fw = ev.forward(theta);
      if (!fw) {
        rec.failure = "observation sequence has zero probability at the starting point";
        return;
      }
      accept(rec, box, theta, fw->loglik);
      for (int cycle = 1; cycle <= cfg.max_iter; ++cycle) {
        rec.iterations = cycle;
        SquaremCycle info;
        info.ll_start = fw->loglik;

        const std::vector<double> theta1 = ev.em_map(theta, *fw);
        const std::optional<ForwardResult> fw1 = ev.forward(theta1);
        if (!fw1) throw NumericalUnderflow(0, "EM step reached a zero-likelihood point");
        std::vector<double> theta2 = ev.em_map(theta1, *fw1);
        std::optional<ForwardResult> fw2 = ev.forward(theta2);
        if (!fw2) throw NumericalUnderflow(0, "EM step reached a zero-likelihood point");
        info.ll_em2 = fw2->loglik;

        std::vector<double> next = theta2;
        std::optional<ForwardResult> next_fw = std::move(fw2);

        const std::vector<double> r = minus(theta1, theta);
        const std::vector<double> v = minus(minus(theta2, theta1), r);
        const double rr = dot(r, r);
        const double vv = dot(v, v);
        const double ratio = rr / vv;
        if (vv > 0.0 && std::isfinite(ratio)) {
          double s = -std::sqrt(ratio);
          for (int h = 0;; ++h) {
            std::vector<double> cand(theta.size());
            for (std::size_t j = 0; j < cand.size(); ++j) cand[j] = theta[j] - 2.0 * s * r[j] + s * s * v[j];
            cand = box.clip(std::move(cand));
            std::optional<ForwardResult> cand_fw = ev.forward(cand);
            info.halvings = h;
            if (cand_fw && cand_fw->loglik >= info.ll_em2) {
              // Stabilising EM step from the extrapolated point.
              next = ev.em_map(cand, *cand_fw);
              next_fw = ev.forward(next);
              if (!next_fw) throw NumericalUnderflow(0, "EM step reached a zero-likelihood point");
              info.extrapolated = true;
              break;
            }
            if (h == cfg.squarem_max_halvings) break;
            s = 0.5 * (s - 1.0);
          }
        }
        info.ll_end = next_fw->loglik;
        rec.cycles.push_back(info);
        const double ll_prev = info.ll_start;
        theta = std::move(next);
        fw = std::move(next_fw);
        accept(rec, box, theta, fw->loglik);
        if (should_stop(ll_prev, fw->loglik, cfg.stop)) {
          rec.converged = true;
          break;
        }
      }
    } catch (const NumericalUnderflow& e) {
      rec.failure = e.what();
    } catch (const DegeneratePosterior& e) {
      rec.failure = e.what();
    }
  });
  return rec;
}

namespace {

enum class QnVariant { kPlain, kHybrid };

RunRecord quasi_newton(QnVariant variant, const Model& model, const ObsSequence& seq, const ParamVector& theta0,
                       const OptimizerConfig& cfg, const RunHooks* hooks) {
  cfg.validate();
  const bool hybrid = variant == QnVariant::kHybrid;
  RunRecord rec = start_record(optimizer_name(hybrid ? Optimizer::kQnem : Optimizer::kQnBox), theta0);
  timed(rec, [&] {
    Evaluator ev(model, seq, theta0.bounds, rec);
    const Box& box = ev.box();
    const std::size_t n = theta0.size();

    std::vector<double> theta = theta0.values;
    GradientResult cur = ev.gradient(theta);
    if (!cur.valid) {
      rec.failure = "log-likelihood or gradient not finite at the starting point";
      return;
    }
    accept(rec, box, theta, cur.loglik);

    std::vector<double> h = identity(n);
    bool h_is_identity = true;
    Mode mode = hybrid ? Mode::kEm : Mode::kQn;

    auto try_update = [&](const std::vector<double>& s, const std::vector<double>& y) {
      if (!update_inverse_hessian(h, s, y, cfg.hessian_update)) return false;
      h_is_identity = false;
      if (hooks != nullptr && hooks->on_hessian_update) hooks->on_hessian_update(h, n);
      return true;
    };
    // With an identity H the first trial moves at most a unit distance.
    auto first_step = [&](const std::vector<double>& grad_proj) {
      if (!h_is_identity) return 1.0;
      return std::min(1.0, 1.0 / std::sqrt(dot(grad_proj, grad_proj)));
    };
    auto reset = [&] {
      h = identity(n);
      h_is_identity = true;
    };

    try {
      int k = 0;
      while (k < cfg.max_iter) {
        const std::vector<double> grad_f = negated(cur.gradient);
        std::vector<double> next;
        GradientResult next_eval;

        if (mode == Mode::kEm) {
          next = ev.em_map(theta, cur.forward);
          next_eval = ev.gradient(next);
          if (!next_eval.valid) {
            rec.failure = "log-likelihood or gradient not finite after an EM step";
            break;
          }
        } else {
          const std::vector<double> grad_proj = project_gradient(grad_f, theta, box);
          if (is_zero(grad_proj)) {
            rec.converged = true;
            break;
          }
          std::vector<double> p = search_direction(h, grad_f, theta, box);
          if (p.empty()) {
            reset();
            p = search_direction(h, grad_f, theta, box);
          }
          LineSearchResult ls;
          if (!p.empty()) ls = armijo_search(ev, theta, -cur.loglik, grad_f, p, first_step(grad_proj), cfg);
          if (ls.status == LineSearchResult::kFailed && !h_is_identity) {
            reset();
            if (hybrid) {
              mode = Mode::kEm;
              continue;
            }
            p = search_direction(h, grad_f, theta, box);
            if (!p.empty()) ls = armijo_search(ev, theta, -cur.loglik, grad_f, p, first_step(grad_proj), cfg);
          }
          if (ls.status == LineSearchResult::kNoProgress) {
            // Steps shrank below the resolution of theta: the loglik cannot change.
            ++k;
            rec.iterations = k;
            if (hybrid) rec.mode_trace.push_back(Mode::kQn);
            accept(rec, box, theta, cur.loglik);
            rec.converged = true;
            break;
          }
          if (ls.status == LineSearchResult::kFailed) {
            if (hybrid) {
              reset();
              mode = Mode::kEm;
              continue;
            }
            rec.failure = "line search found no Armijo point";
            break;
          }
          next = std::move(ls.theta);
          next_eval = std::move(ls.eval);
        }

        ++k;
        rec.iterations = k;
        if (hybrid) rec.mode_trace.push_back(mode);
        const std::vector<double> s = minus(next, theta);
        std::vector<double> y = minus(negated(next_eval.gradient), grad_f);
        // Coordinates held at a bound carry no curvature information.
        for (std::size_t j = 0; j < n; ++j) {
          if (s[j] == 0.0 && (next[j] <= box.lower[j] || next[j] >= box.upper[j])) y[j] = 0.0;
        }
        const double ll_prev = cur.loglik;
        theta = std::move(next);
        cur = std::move(next_eval);
        accept(rec, box, theta, cur.loglik);
        if (should_stop(ll_prev, cur.loglik, cfg.stop)) {
          rec.converged = true;
          break;
        }
        if (try_update(s, y)) {
          mode = Mode::kQn;
        } else {
          reset();
          if (hybrid) mode = Mode::kEm;
        }
      }
    } catch (const DegeneratePosterior& e) {
      rec.failure = e.what();
    }
  });
  return rec;
}

}  // namespace

RunRecord qn_box(const Model& model, const ObsSequence& seq, const ParamVector& theta0, const OptimizerConfig& cfg,
                 const RunHooks* hooks) {
  return quasi_newton(QnVariant::kPlain, model, seq, theta0, cfg, hooks);
}

RunRecord qnem(const Model& model, const ObsSequence& seq, const ParamVector& theta0, const OptimizerConfig& cfg,
               const RunHooks* hooks) {
  return quasi_newton(QnVariant::kHybrid, model, seq, theta0, cfg, hooks);
}

RunRecord run_optimizer(Optimizer opt, const Model& model, const ObsSequence& seq, const std::vector<double>& start,
                        const OptimizerConfig& cfg, const RunHooks* hooks) {
  const Box box = model.bounds(box_for(opt));
  const ParamVector theta0(box.clip(start), box);
  switch (opt) {
    case Optimizer::kBaumWelch: return baum_welch(model, seq, theta0, cfg);
    case Optimizer::kSquarem: return squarem(model, seq, theta0, cfg);
    case Optimizer::kQnBox: return qn_box(model, seq, theta0, cfg, hooks);
    case Optimizer::kQnem: return qnem(model, seq, theta0, cfg, hooks);
  }
  throw std::invalid_argument("unknown optimizer");
}

}  // namespace hmmfit
