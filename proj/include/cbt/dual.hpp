#pragma once

#include <cmath>
#include <type_traits>

namespace cbt {

// Forward-mode dual number v + t·ε with ε² = 0. Running a reverse-mode graph
// over Dual scalars yields exact Hessian-vector products, which is how the R1
// penalty gradient is obtained without a second-order tape.
template <class U>
struct Dual {
  U v{};
  U t{};

  constexpr Dual() = default;
  constexpr Dual(U value) : v(value) {}  // NOLINT(google-explicit-constructor)
  constexpr Dual(U value, U tangent) : v(value), t(tangent) {}

  constexpr Dual& operator+=(const Dual& o) { v += o.v; t += o.t; return *this; }
  constexpr Dual& operator-=(const Dual& o) { v -= o.v; t -= o.t; return *this; }
  constexpr Dual& operator*=(const Dual& o) { t = t * o.v + v * o.t; v *= o.v; return *this; }
  constexpr Dual& operator/=(const Dual& o) { *this = *this / o; return *this; }

  friend constexpr Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend constexpr Dual operator-(Dual a, const Dual& b) { return a -= b; }
  friend constexpr Dual operator*(Dual a, const Dual& b) { return a *= b; }
  friend constexpr Dual operator/(const Dual& a, const Dual& b) {
    return Dual(a.v / b.v, (a.t * b.v - a.v * b.t) / (b.v * b.v));
  }
  friend constexpr Dual operator-(const Dual& a) { return Dual(-a.v, -a.t); }

  // Comparisons look only at the value part; branch selection (ReLU, max)
  // is locally constant in the tangent direction.
  friend constexpr bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
  friend constexpr bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
  friend constexpr bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
  friend constexpr bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }
  friend constexpr bool operator==(const Dual& a, const Dual& b) { return a.v == b.v && a.t == b.t; }
};

template <class U>
Dual<U> exp(const Dual<U>& a) {
  const U e = std::exp(a.v);
  return {e, e * a.t};
}
template <class U>
Dual<U> log(const Dual<U>& a) {
  return {std::log(a.v), a.t / a.v};
}
template <class U>
Dual<U> sqrt(const Dual<U>& a) {
  const U s = std::sqrt(a.v);
  return {s, a.t / (U(2) * s)};
}
template <class U>
Dual<U> tanh(const Dual<U>& a) {
  const U th = std::tanh(a.v);
  return {th, (U(1) - th * th) * a.t};
}
template <class U>
Dual<U> abs(const Dual<U>& a) {
  return a.v < U(0) ? -a : a;
}
template <class U>
Dual<U> log1p(const Dual<U>& a) {
  return {std::log1p(a.v), a.t / (U(1) + a.v)};
}

template <class T>
struct is_dual : std::false_type {};
template <class U>
struct is_dual<Dual<U>> : std::true_type {};
template <class T>
inline constexpr bool is_dual_v = is_dual<T>::value;

// Underlying real type: float for float, float for Dual<float>.
template <class T>
struct real_of {
  using type = T;
};
template <class U>
struct real_of<Dual<U>> {
  using type = U;
};
template <class T>
using real_of_t = typename real_of<T>::type;

template <class T>
constexpr real_of_t<T> value_part(const T& x) {
  if constexpr (is_dual_v<T>) return x.v; else return x;
}
template <class T>
constexpr real_of_t<T> tangent_part(const T& x) {
  if constexpr (is_dual_v<T>) return x.t; else return real_of_t<T>{0};
}

}  // namespace cbt
