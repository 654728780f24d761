#pragma once

// Relative kinematics of two agents in their horizontal frames:
//
//   p'         = -v1 + R(dpsi) v2 - S(r1) p
//   dpsi'      = r2 - r1
//   v1'        = a1 - S(r1) v1
//   v2'        = a2 - S(r2) v2

#include "relloc/geometry.hpp"

#include <array>
#include <cmath>
#include <string_view>

namespace relloc {

// Scalar-generic right-hand side. The state layout is
// [px, py, dpsi, v1x, v1y, v2x, v2y]; T may be a dual number.
template <typename T>
std::array<T, 7> relative_rhs(const std::array<T, 7>& x, const InputVector& u) {
  using std::cos;
  using std::sin;
  const T c = cos(x[2]);
  const T s = sin(x[2]);
  const T rv2x = c * x[5] - s * x[6];
  const T rv2y = s * x[5] + c * x[6];
  return {
      -x[3] + rv2x + u.r1 * x[1],
      -x[4] + rv2y - u.r1 * x[0],
      T(u.r2 - u.r1),
      u.a1.x() + u.r1 * x[4],
      u.a1.y() - u.r1 * x[3],
      u.a2.x() + u.r2 * x[6],
      u.a2.y() - u.r2 * x[5],
  };
}

inline Vec7 state_derivative(const Vec7& x, const InputVector& u) {
  std::array<double, 7> a{};
  for (int i = 0; i < 7; ++i) a[i] = x(i);
  const auto d = relative_rhs(a, u);
  Vec7 out;
  for (int i = 0; i < 7; ++i) out(i) = d[i];
  return out;
}

inline RelativeState state_derivative(const RelativeState& x, const InputVector& u) {
  // The derivative is returned in RelativeState layout; delta_psi holds dpsi'.
  return RelativeState::from_vector(state_derivative(x.to_vector(), u));
}

// Continuous-time Jacobian d f / d x.
inline Mat7 state_jacobian(const Vec7& x, const InputVector& u) {
  Mat7 j = Mat7::Zero();
  const Vec2 v2 = x.segment<2>(5);
  j.block<2, 2>(0, 0) = -skew_2d(u.r1);
  j.block<2, 1>(0, 2) = rotation_2d_derivative(x(2)) * v2;
  j.block<2, 2>(0, 3) = -Mat2::Identity();
  j.block<2, 2>(0, 5) = rotation_2d(x(2));
  j.block<2, 2>(3, 3) = -skew_2d(u.r1);
  j.block<2, 2>(5, 5) = -skew_2d(u.r2);
  return j;
}

enum class Integrator { Euler, Rk4 };

inline std::string_view to_string(Integrator i) { return i == Integrator::Euler ? "euler" : "rk4"; }

struct Propagation {
  Vec7 x;
  Mat7 transition;  // d x_next / d x
};

// One step with the input held constant over [0, h].
inline Propagation propagate(const Vec7& x, const InputVector& u, double h, Integrator scheme) {
  const Mat7 eye = Mat7::Identity();
  if (scheme == Integrator::Euler) {
    return {x + h * state_derivative(x, u), eye + h * state_jacobian(x, u)};
  }
  const Vec7 k1 = state_derivative(x, u);
  const Vec7 x2 = x + 0.5 * h * k1;
  const Vec7 k2 = state_derivative(x2, u);
  const Vec7 x3 = x + 0.5 * h * k2;
  const Vec7 k3 = state_derivative(x3, u);
  const Vec7 x4 = x + h * k3;
  const Vec7 k4 = state_derivative(x4, u);

  // Chain rule through the stages gives the exact Jacobian of the map.
  const Mat7 d1 = state_jacobian(x, u);
  const Mat7 d2 = state_jacobian(x2, u) * (eye + 0.5 * h * d1);
  const Mat7 d3 = state_jacobian(x3, u) * (eye + 0.5 * h * d2);
  const Mat7 d4 = state_jacobian(x4, u) * (eye + h * d3);

  return {x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), eye + h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)};
}

}  // namespace relloc
