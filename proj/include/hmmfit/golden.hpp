#pragma once

#include <cmath>
#include <initializer_list>

namespace hmmfit {

struct Argmax1d {
  double x;
  double value;
};

/// Golden-section search for the maximum of a unimodal f on [lo, hi].
/// Non-finite values compare below every finite one.
template <class F>
Argmax1d golden_section_max(F&& f, double lo, double hi, double tol = 1e-12, int max_eval = 200) {
  constexpr double kInvPhi = 0.6180339887498949;
  auto eval = [&](double x) {
    const double v = f(x);
    return std::isnan(v) ? -INFINITY : v;
  };
  double a = lo;
  double b = hi;
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = eval(c);
  double fd = eval(d);
  for (int k = 0; k < max_eval && (b - a) > tol * (1.0 + std::abs(a) + std::abs(b)); ++k) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = eval(d);
    }
  }
  return fc >= fd ? Argmax1d{c, fc} : Argmax1d{d, fd};
}

/// Improves `start` for a 1-D objective restricted to [lo, hi]: runs a golden
/// search, also tries the interval ends, and never returns a point worse
/// than `start`.
template <class F>
Argmax1d improve_1d(F&& f, double start, double lo, double hi, double tol = 1e-12) {
  Argmax1d best{start, f(start)};
  if (std::isnan(best.value)) best.value = -INFINITY;
  auto consider = [&](double x, double v) {
    if (!std::isnan(v) && v > best.value) best = {x, v};
  };
  const Argmax1d g = golden_section_max(f, lo, hi, tol);
  consider(g.x, g.value);
  for (double end : {lo, hi}) {
    if (std::isfinite(end)) consider(end, f(end));
  }
  return best;
}

}  // namespace hmmfit
