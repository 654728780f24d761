#pragma once

// Planar frame algebra and the value types shared by every other module.
//
// Conventions:
//  - H_i is the horizontal frame of agent i: z parallel to inertial down,
//    rotated about z by the agent heading psi_i.
//  - p is the position of the tracked agent (2) relative to the host (1),
//    expressed in H_1. delta_psi = psi_2 - psi_1.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace relloc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Vec7 = Eigen::Matrix<double, 7, 1>;
using Mat7 = Eigen::Matrix<double, 7, 7>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kGravity = 9.81;

// A: heading difference is measured. B: heading-independent.
enum class Variant { A, B };

inline const char* to_string(Variant v) { return v == Variant::A ? "A" : "B"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "A" || s == "a") return Variant::A;
  if (s == "B" || s == "b") return Variant::B;
  throw std::invalid_argument("unknown variant '" + s + "' (expected A or B)");
}

// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  if (!std::isfinite(a)) return a;
  double w = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

inline bool is_finite(const Vec2& v) { return std::isfinite(v.x()) && std::isfinite(v.y()); }

inline void require_finite(const Vec2& v, const char* what) {
  if (!is_finite(v)) throw std::invalid_argument(std::string(what) + ": non-finite component");
}

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite value");
}

// z-component of the planar cross product a x b.
inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// Rotation from H_2 to H_1 for a heading difference delta_psi.
inline Mat2 rotation_2d(double delta_psi) {
  const double c = std::cos(delta_psi);
  const double s = std::sin(delta_psi);
  Mat2 r;
  r << c, -s, s, c;
  return r;
}

// d rotation_2d / d delta_psi.
inline Mat2 rotation_2d_derivative(double delta_psi) {
  const double c = std::cos(delta_psi);
  const double s = std::sin(delta_psi);
  Mat2 r;
  r << -s, -c, c, -s;
  return r;
}

// Planar skew matrix: skew_2d(r) * v == r (z) x v.
inline Mat2 skew_2d(double r) {
  Mat2 s;
  s << 0.0, -r, r, 0.0;
  return s;
}

/// Quarter-turn matrix [[0,-1],[1,0]], i.e. skew_2d(1).
inline Mat2 quarter_turn() { return skew_2d(1.0); }

struct RelativeState {
  Vec2 p{Vec2::Zero()};
  double delta_psi{0.0};
  Vec2 v1{Vec2::Zero()};
  Vec2 v2{Vec2::Zero()};

  Vec7 to_vector() const {
    Vec7 x;
    x << p, delta_psi, v1, v2;
    return x;
  }

  static RelativeState from_vector(const Vec7& x) {
    RelativeState s;
    s.p = x.segment<2>(0);
    s.delta_psi = x(2);
    s.v1 = x.segment<2>(3);
    s.v2 = x.segment<2>(5);
    return s;
  }

  bool finite() const {
    return is_finite(p) && std::isfinite(delta_psi) && is_finite(v1) && is_finite(v2);
  }

  RelativeState wrapped() const {
    RelativeState s = *this;
    s.delta_psi = wrap_angle(delta_psi);
    return s;
  }
};

struct InputVector {
  Vec2 a1{Vec2::Zero()};
  Vec2 a2{Vec2::Zero()};
  double r1{0.0};
  double r2{0.0};

  bool finite() const {
    return is_finite(a1) && is_finite(a2) && std::isfinite(r1) && std::isfinite(r2);
  }
};

struct AttitudeSample {
  double roll{0.0};
  double pitch{0.0};
  double gyro_pitch_rate{0.0};
  double gyro_yaw_rate{0.0};
  Vec3 specific_force{Vec3::Zero()};
};

inline constexpr double kGimbalTolerance = 1e-3;

// Heading rate of the horizontal frame from body gyro rates.
inline double body_rates_to_heading_rate(const AttitudeSample& att) {
  if (std::abs(att.pitch) > kPi / 2.0 - kGimbalTolerance) {
    throw std::domain_error("body_rates_to_heading_rate: pitch too close to +-pi/2");
  }
  const double cp = std::cos(att.pitch);
  return std::sin(att.roll) / cp * att.gyro_pitch_rate + std::cos(att.roll) / cp * att.gyro_yaw_rate;
}

// First two rows of the body-to-horizontal rotation applied to the
// accelerometer's specific force.
inline Vec2 specific_force_to_horizontal_accel(const AttitudeSample& att) {
  const double cphi = std::cos(att.roll), sphi = std::sin(att.roll);
  const double cth = std::cos(att.pitch), sth = std::sin(att.pitch);
  Eigen::Matrix<double, 2, 3> m;
  m << cth, sphi * sth, cphi * sth,  //
      0.0, cphi, -sphi;
  return m * att.specific_force;
}

// Range, heading difference and both velocities.
struct MeasurementA {
  double range{0.0};
  double delta_psi_meas{0.0};
  Vec2 v1_meas{Vec2::Zero()};
  Vec2 v2_meas{Vec2::Zero()};

  Eigen::Matrix<double, 6, 1> to_vector() const {
    Eigen::Matrix<double, 6, 1> z;
    z << range, delta_psi_meas, v1_meas, v2_meas;
    return z;
  }
};

// Range and both velocities; no heading information.
struct MeasurementB {
  double range{0.0};
  Vec2 v1_meas{Vec2::Zero()};
  Vec2 v2_meas{Vec2::Zero()};

  Eigen::Matrix<double, 5, 1> to_vector() const {
    Eigen::Matrix<double, 5, 1> z;
    z << range, v1_meas, v2_meas;
    return z;
  }
};

// Half the squared range; the output used by the observability analysis.
inline double half_squared_range(const RelativeState& x) { return 0.5 * x.p.squaredNorm(); }

inline MeasurementA observe_a(const RelativeState& x) {
  return MeasurementA{x.p.norm(), x.delta_psi, x.v1, x.v2};
}

inline MeasurementB observe_b(const RelativeState& x) { return MeasurementB{x.p.norm(), x.v1, x.v2}; }

}  // namespace relloc
