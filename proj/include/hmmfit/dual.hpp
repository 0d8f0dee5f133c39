#pragma once

// Forward-mode automatic differentiation with a fixed number of inline
// partial derivatives. All bundled models have at most eight free
// parameters, so the partials live in a std::array and never allocate.

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

namespace hmmfit {

/// Raised by dual primitives evaluated outside their real domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace ad {

inline constexpr std::size_t kMaxPartials = 8;

template <std::size_t N>
struct BasicDual {
  double value = 0.0;
  std::array<double, N> partials{};

  constexpr BasicDual() = default;
  constexpr BasicDual(double v) : value(v) {}  // NOLINT: constants promote implicitly
  constexpr BasicDual(double v, const std::array<double, N>& d) : value(v), partials(d) {}

  /// A variable: value v, unit partial along coordinate `index`.
  static constexpr BasicDual variable(double v, std::size_t index) {
    BasicDual out(v);
    out.partials[index] = 1.0;
    return out;
  }

  constexpr BasicDual& operator+=(const BasicDual& o) {
    value += o.value;
    for (std::size_t j = 0; j < N; ++j) partials[j] += o.partials[j];
    return *this;
  }
  constexpr BasicDual& operator-=(const BasicDual& o) {
    value -= o.value;
    for (std::size_t j = 0; j < N; ++j) partials[j] -= o.partials[j];
    return *this;
  }
  constexpr BasicDual& operator*=(const BasicDual& o) {
    for (std::size_t j = 0; j < N; ++j) partials[j] = partials[j] * o.value + value * o.partials[j];
    value *= o.value;
    return *this;
  }
  BasicDual& operator/=(const BasicDual& o) {
    if (o.value == 0.0) throw DomainError("dual division by zero");
    const double inv = 1.0 / o.value;
    const double q = value / o.value;
    for (std::size_t j = 0; j < N; ++j) partials[j] = (partials[j] - q * o.partials[j]) * inv;
    value = q;
    return *this;
  }
  constexpr BasicDual& operator+=(double c) {
    value += c;
    return *this;
  }
  constexpr BasicDual& operator-=(double c) {
    value -= c;
    return *this;
  }
  constexpr BasicDual& operator*=(double c) {
    value *= c;
    for (auto& p : partials) p *= c;
    return *this;
  }
};

template <std::size_t N>
constexpr BasicDual<N> operator-(BasicDual<N> a) {
  a.value = -a.value;
  for (auto& p : a.partials) p = -p;
  return a;
}

template <std::size_t N>
constexpr BasicDual<N> operator+(BasicDual<N> a, const BasicDual<N>& b) {
  return a += b;
}
template <std::size_t N>
constexpr BasicDual<N> operator+(BasicDual<N> a, double b) {
  return a += b;
}
template <std::size_t N>
constexpr BasicDual<N> operator+(double a, BasicDual<N> b) {
  return b += a;
}

template <std::size_t N>
constexpr BasicDual<N> operator-(BasicDual<N> a, const BasicDual<N>& b) {
  return a -= b;
}
template <std::size_t N>
constexpr BasicDual<N> operator-(BasicDual<N> a, double b) {
  return a -= b;
}
template <std::size_t N>
constexpr BasicDual<N> operator-(double a, const BasicDual<N>& b) {
  BasicDual<N> out = -b;
  out.value = a - b.value;
  return out;
}

template <std::size_t N>
constexpr BasicDual<N> operator*(BasicDual<N> a, const BasicDual<N>& b) {
  return a *= b;
}
template <std::size_t N>
constexpr BasicDual<N> operator*(BasicDual<N> a, double b) {
  return a *= b;
}
template <std::size_t N>
constexpr BasicDual<N> operator*(double a, BasicDual<N> b) {
  return b *= a;
}

template <std::size_t N>
BasicDual<N> operator/(BasicDual<N> a, const BasicDual<N>& b) {
  return a /= b;
}
template <std::size_t N>
BasicDual<N> operator/(BasicDual<N> a, double b) {
  if (b == 0.0) throw DomainError("dual division by zero");
  a.value /= b;
  for (auto& p : a.partials) p /= b;
  return a;
}
template <std::size_t N>
BasicDual<N> operator/(double a, const BasicDual<N>& b) {
  if (b.value == 0.0) throw DomainError("dual division by zero");
  BasicDual<N> out(a / b.value);
  const double scale = -out.value / b.value;
  for (std::size_t j = 0; j < N; ++j) out.partials[j] = scale * b.partials[j];
  return out;
}

template <std::size_t N>
constexpr bool operator==(const BasicDual<N>& a, const BasicDual<N>& b) {
  return a.value == b.value && a.partials == b.partials;
}
template <std::size_t N>
constexpr auto operator<=>(const BasicDual<N>& a, const BasicDual<N>& b) {
  return a.value <=> b.value;
}
template <std::size_t N>
constexpr auto operator<=>(const BasicDual<N>& a, double b) {
  return a.value <=> b;
}
template <std::size_t N>
constexpr bool operator==(const BasicDual<N>& a, double b) {
  return a.value == b;
}

// Applies the chain rule for a unary function with value fx and derivative dfx.
template <std::size_t N>
constexpr BasicDual<N> chain(const BasicDual<N>& x, double fx, double dfx) {
  BasicDual<N> out(fx);
  for (std::size_t j = 0; j < N; ++j) out.partials[j] = dfx * x.partials[j];
  return out;
}

template <std::size_t N>
BasicDual<N> log(const BasicDual<N>& x) {
  if (!(x.value > 0.0)) throw DomainError("log of non-positive dual");
  return chain(x, std::log(x.value), 1.0 / x.value);
}

template <std::size_t N>
BasicDual<N> exp(const BasicDual<N>& x) {
  const double e = std::exp(x.value);
  return chain(x, e, e);
}

template <std::size_t N>
BasicDual<N> sqrt(const BasicDual<N>& x) {
  if (!(x.value > 0.0)) throw DomainError("sqrt of non-positive dual");
  const double r = std::sqrt(x.value);
  return chain(x, r, 0.5 / r);
}

template <std::size_t N>
BasicDual<N> pow(const BasicDual<N>& x, double p) {
  if (x.value < 0.0 || (x.value == 0.0 && p < 1.0)) throw DomainError("pow outside its real domain");
  const double v = std::pow(x.value, p);
  return chain(x, v, p * std::pow(x.value, p - 1.0));
}

template <std::size_t N>
BasicDual<N> pow(const BasicDual<N>& x, const BasicDual<N>& p) {
  if (!(x.value > 0.0)) throw DomainError("pow with non-positive dual base");
  const double v = std::pow(x.value, p.value);
  const double lx = std::log(x.value);
  BasicDual<N> out(v);
  for (std::size_t j = 0; j < N; ++j) {
    out.partials[j] = v * (p.value / x.value * x.partials[j] + lx * p.partials[j]);
  }
  return out;
}

template <std::size_t N>
BasicDual<N> abs(const BasicDual<N>& x) {
  return x.value < 0.0 ? -x : x;
}

template <std::size_t N>
std::ostream& operator<<(std::ostream& os, const BasicDual<N>& d) {
  os << '(' << d.value << ';';
  for (std::size_t j = 0; j < N; ++j) os << (j ? "," : "") << d.partials[j];
  return os << ')';
}

}  // namespace ad

using Dual = ad::BasicDual<ad::kMaxPartials>;

inline double value_of(double x) { return x; }
template <std::size_t N>
double value_of(const ad::BasicDual<N>& x) {
  return x.value;
}

/// Normal density. The double overload and the dual overload evaluate the
/// value with the same operation sequence, so forward passes agree bitwise.
inline double gaussian_pdf(double x, double mean, double sd) {
  if (!(sd > 0.0)) throw DomainError("gaussian_pdf requires sd > 0");
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

inline double gaussian_log_pdf(double x, double mean, double sd) {
  if (!(sd > 0.0)) throw DomainError("gaussian_log_pdf requires sd > 0");
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd * std::sqrt(2.0 * std::numbers::pi));
}

template <std::size_t N>
ad::BasicDual<N> gaussian_pdf(double x, const ad::BasicDual<N>& mean, const ad::BasicDual<N>& sd) {
  if (!(sd.value > 0.0)) throw DomainError("gaussian_pdf requires sd > 0");
  const double z = (x - mean.value) / sd.value;
  const double v = std::exp(-0.5 * z * z) / (sd.value * std::sqrt(2.0 * std::numbers::pi));
  // d/dmu = v * z / sd ; d/dsd = v * (z^2 - 1) / sd
  const double d_mean = v * z / sd.value;
  const double d_sd = v * (z * z - 1.0) / sd.value;
  ad::BasicDual<N> out(v);
  for (std::size_t j = 0; j < N; ++j) out.partials[j] = d_mean * mean.partials[j] + d_sd * sd.partials[j];
  return out;
}

/// Seeds one dual per coordinate with the matching unit partial.
inline std::vector<Dual> seed(std::span<const double> theta) {
  if (theta.size() > ad::kMaxPartials) throw std::invalid_argument("too many parameters for dual width");
  std::vector<Dual> out;
  out.reserve(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) out.push_back(Dual::variable(theta[j], j));
  return out;
}

}  // namespace hmmfit
