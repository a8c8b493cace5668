#pragma once

// Forward-mode dual number with a single tangent direction. Running the
// reverse-mode tape over Dual yields one Hessian column per pass
// (forward-over-reverse).

#include <cmath>
#include <limits>
#include <ostream>

#include <Eigen/Core>

namespace smi::ad {

struct Dual {
  double val = 0.0;
  double tan = 0.0;

  constexpr Dual() = default;
  constexpr Dual(double v) : val(v) {}  // NOLINT(google-explicit-constructor)
  constexpr Dual(double v, double t) : val(v), tan(t) {}

  constexpr Dual& operator+=(const Dual& o) {
    val += o.val;
    tan += o.tan;
    return *this;
  }
  constexpr Dual& operator-=(const Dual& o) {
    val -= o.val;
    tan -= o.tan;
    return *this;
  }
  constexpr Dual& operator*=(const Dual& o) {
    tan = tan * o.val + val * o.tan;
    val *= o.val;
    return *this;
  }
  constexpr Dual& operator/=(const Dual& o) {
    tan = (tan * o.val - val * o.tan) / (o.val * o.val);
    val /= o.val;
    return *this;
  }
};

constexpr Dual operator-(const Dual& a) { return {-a.val, -a.tan}; }
constexpr Dual operator+(const Dual& a) { return a; }
constexpr Dual operator+(Dual a, const Dual& b) { return a += b; }
constexpr Dual operator-(Dual a, const Dual& b) { return a -= b; }
constexpr Dual operator*(Dual a, const Dual& b) { return a *= b; }
constexpr Dual operator/(Dual a, const Dual& b) { return a /= b; }

// Comparisons look at the primal value only.
constexpr bool operator==(const Dual& a, const Dual& b) { return a.val == b.val; }
constexpr bool operator!=(const Dual& a, const Dual& b) { return a.val != b.val; }
constexpr bool operator<(const Dual& a, const Dual& b) { return a.val < b.val; }
constexpr bool operator>(const Dual& a, const Dual& b) { return a.val > b.val; }
constexpr bool operator<=(const Dual& a, const Dual& b) { return a.val <= b.val; }
constexpr bool operator>=(const Dual& a, const Dual& b) { return a.val >= b.val; }

inline Dual exp(const Dual& a) {
  const double e = std::exp(a.val);
  return {e, e * a.tan};
}
inline Dual log(const Dual& a) { return {std::log(a.val), a.tan / a.val}; }
inline Dual log1p(const Dual& a) { return {std::log1p(a.val), a.tan / (1.0 + a.val)}; }
inline Dual sqrt(const Dual& a) {
  const double s = std::sqrt(a.val);
  return {s, a.tan / (2.0 * s)};
}
inline Dual abs(const Dual& a) { return a.val < 0.0 ? -a : a; }
inline Dual cos(const Dual& a) { return {std::cos(a.val), -std::sin(a.val) * a.tan}; }
inline Dual sin(const Dual& a) { return {std::sin(a.val), std::cos(a.val) * a.tan}; }

inline bool isfinite(const Dual& a) { return std::isfinite(a.val) && std::isfinite(a.tan); }

inline std::ostream& operator<<(std::ostream& os, const Dual& a) {
  return os << a.val << "+" << a.tan << "e";
}

// Scalar helpers usable for double and Dual alike.
inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.val; }

inline bool all_finite(double x) { return std::isfinite(x); }
inline bool all_finite(const Dual& x) { return isfinite(x); }

}  // namespace smi::ad

namespace Eigen {

template <>
struct NumTraits<smi::ad::Dual> : GenericNumTraits<double> {
  using Real = smi::ad::Dual;
  using NonInteger = smi::ad::Dual;
  using Nested = smi::ad::Dual;
  using Literal = smi::ad::Dual;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 2,
    AddCost = 2,
    MulCost = 4
  };
  static inline Real epsilon() { return std::numeric_limits<double>::epsilon(); }
  static inline Real dummy_precision() { return 1e-12; }
  static inline Real highest() { return std::numeric_limits<double>::max(); }
  static inline Real lowest() { return std::numeric_limits<double>::lowest(); }
  static inline int digits10() { return std::numeric_limits<double>::digits10; }
};

}  // namespace Eigen
