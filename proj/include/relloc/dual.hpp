#pragma once

// Forward-mode dual numbers. Nesting (Dual<Dual<double>>) yields
// directional derivatives of derivatives.

#include <cmath>

namespace relloc {

template <typename T>
struct Dual {
  T v{};
  T d{};

  Dual() = default;
  Dual(double value) : v(value), d(0.0) {}  // NOLINT(google-explicit-constructor)
  Dual(T value, T deriv) : v(value), d(deriv) {}

  Dual& operator+=(const Dual& o) { v = v + o.v; d = d + o.d; return *this; }
  Dual& operator-=(const Dual& o) { v = v - o.v; d = d - o.d; return *this; }
};

template <typename T> Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) { return {a.v + b.v, a.d + b.d}; }
template <typename T> Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) { return {a.v - b.v, a.d - b.d}; }
template <typename T> Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }
template <typename T> Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) { return {a.v * b.v, a.v * b.d + a.d * b.v}; }

template <typename T> Dual<T> operator+(const Dual<T>& a, double b) { return {a.v + b, a.d}; }
template <typename T> Dual<T> operator+(double a, const Dual<T>& b) { return {a + b.v, b.d}; }
template <typename T> Dual<T> operator-(const Dual<T>& a, double b) { return {a.v - b, a.d}; }
template <typename T> Dual<T> operator-(double a, const Dual<T>& b) { return {a - b.v, -b.d}; }
template <typename T> Dual<T> operator*(const Dual<T>& a, double b) { return {a.v * b, a.d * b}; }
template <typename T> Dual<T> operator*(double a, const Dual<T>& b) { return {a * b.v, a * b.d}; }

template <typename T>
Dual<T> sin(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {sin(a.v), cos(a.v) * a.d};
}

template <typename T>
Dual<T> cos(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {cos(a.v), -(sin(a.v) * a.d)};
}

}  // namespace relloc
