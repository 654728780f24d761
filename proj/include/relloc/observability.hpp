#pragma once

// Local weak observability of the relative localization system.
//
// With heading (variant A) the zeroth and first Lie derivatives of the
// range output decide observability through the 2x2 block M_A. Without
// heading (variant B) the second derivative is needed and the decision is
// |M_B| != 0, where M_B collects the p and dpsi columns of the range
// output's first three Lie gradients.

#include "relloc/dual.hpp"
#include "relloc/dynamics.hpp"
#include "relloc/geometry.hpp"
#include "relloc/nelder_mead.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>

namespace relloc {

/// Default threshold on the raw cross-product measure for grid maps.
inline constexpr double kDefaultObservabilityThreshold = 1.0;

struct ObservabilityReport {
  Variant system{Variant::A};
  double measure{0.0};
  bool observable{false};
  double threshold{0.0};
};

// Rows p^T and (-v1 + R v2)^T.
inline Mat2 build_MA(const RelativeState& x) {
  Mat2 m;
  m.row(0) = x.p.transpose();
  m.row(1) = (-x.v1 + rotation_2d(x.delta_psi) * x.v2).transpose();
  return m;
}

// The relative velocity must not be parallel to p. The measure is the
// signed cross product p x (-v1 + R v2), which equals det(M_A).
inline ObservabilityReport check_observability_a(const RelativeState& x, double tol) {
  const Vec2 rel_vel = -x.v1 + rotation_2d(x.delta_psi) * x.v2;
  const double measure = cross2(x.p, rel_vel);
  return {Variant::A, measure, std::abs(measure) >= tol, tol};
}

// Explicit M_B, entry by entry.
inline Eigen::Matrix3d assemble_MB(const RelativeState& x, const InputVector& u) {
  const Mat2 r = rotation_2d(x.delta_psi);
  const Mat2 dr = rotation_2d_derivative(x.delta_psi);
  Eigen::Matrix3d m;
  m.row(0) << x.p.x(), x.p.y(), 0.0;
  const Vec2 w = -x.v1 + r * x.v2;
  m.row(1) << w.x(), w.y(), x.p.dot(dr * x.v2);
  const Vec2 g = -u.a1 + r * u.a2;
  m.row(2) << g.x(), g.y(), -2.0 * x.v1.dot(dr * x.v2) + x.p.dot(dr * u.a2);
  return m;
}

// Row vector whose alignment with p makes |M_B| vanish:
//   p^T R' (-a2 v1^T + v2 a1^T) + 2 v1^T R' (v2 v1^T - v2 v2^T R^T)
inline Vec2 observability_lhs_b(const RelativeState& x, const InputVector& u) {
  const Mat2 r = rotation_2d(x.delta_psi);
  const Mat2 dr = rotation_2d_derivative(x.delta_psi);
  const Mat2 inner1 = -u.a2 * x.v1.transpose() + x.v2 * u.a1.transpose();
  const Mat2 inner2 = x.v2 * x.v1.transpose() - x.v2 * x.v2.transpose() * r.transpose();
  const Eigen::RowVector2d lhs = x.p.transpose() * dr * inner1 + 2.0 * x.v1.transpose() * dr * inner2;
  return lhs.transpose();
}

// |M_B| in closed form: lhs * A * p with A the quarter-turn matrix.
inline double det_MB(const RelativeState& x, const InputVector& u) {
  return observability_lhs_b(x, u).dot(quarter_turn() * x.p);
}

// |lhs x p|. Equal to |det_MB| by construction of the closed form.
inline double observability_measure_b(const RelativeState& x, const InputVector& u) {
  return std::abs(cross2(observability_lhs_b(x, u), x.p));
}

// Scale-free variant: |sin| of the angle between lhs and p (0 when either vanishes).
inline double observability_measure_b_normalized(const RelativeState& x, const InputVector& u) {
  const Vec2 lhs = observability_lhs_b(x, u);
  const double denom = lhs.norm() * x.p.norm();
  if (denom == 0.0) return 0.0;
  return std::abs(cross2(lhs, x.p)) / denom;
}

inline ObservabilityReport check_observability_b(const RelativeState& x, const InputVector& u,
                                                 double threshold = kDefaultObservabilityThreshold,
                                                 bool normalized = false) {
  const double m = normalized ? observability_measure_b_normalized(x, u) : observability_measure_b(x, u);
  return {Variant::B, m, m >= threshold, threshold};
}

struct IntuitiveConditions {
  bool nonzero_position{false};
  bool both_moving{false};
  bool not_parallel{false};

  bool all() const { return nonzero_position && both_moving && not_parallel; }
};

// Necessary (not sufficient) conditions for |M_B| != 0.
inline IntuitiveConditions check_intuitive_conditions_b(const RelativeState& x, const InputVector& u, double tol) {
  IntuitiveConditions c;
  c.nonzero_position = x.p.norm() > tol;
  const bool host_moving = x.v1.norm() > tol || u.a1.norm() > tol;
  const bool tracked_moving = x.v2.norm() > tol || u.a2.norm() > tol;
  c.both_moving = host_moving && tracked_moving;
  const bool accelerating = u.a1.norm() > tol || u.a2.norm() > tol;
  // Parallel up to any scale, including either vector being zero.
  const Vec2 rv2 = rotation_2d(x.delta_psi) * x.v2;
  const bool parallel = std::abs(cross2(x.v1, rv2)) <= tol * std::max(1.0, x.v1.norm() * rv2.norm());
  c.not_parallel = !parallel || accelerating;
  return c;
}

// ---------------------------------------------------------------------------
// Numeric oracle: Lie derivatives by nested dual numbers, gradients by
// central differences, rank by SVD.

namespace detail {

template <typename T>
std::array<T, 6> outputs_a(const std::array<T, 7>& x) {
  return {0.5 * (x[0] * x[0] + x[1] * x[1]), x[2], x[3], x[4], x[5], x[6]};
}

template <typename T>
std::array<T, 5> outputs_b(const std::array<T, 7>& x) {
  return {0.5 * (x[0] * x[0] + x[1] * x[1]), x[3], x[4], x[5], x[6]};
}

template <int Order, Variant V, typename T>
auto lie_derivative(const std::array<T, 7>& x, const InputVector& u) {
  if constexpr (Order == 0) {
    if constexpr (V == Variant::A) {
      return outputs_a(x);
    } else {
      return outputs_b(x);
    }
  } else {
    const auto fx = relative_rhs(x, u);
    std::array<Dual<T>, 7> seeded;
    for (std::size_t i = 0; i < 7; ++i) seeded[i] = Dual<T>(x[i], fx[i]);
    const auto inner = lie_derivative<Order - 1, V>(seeded, u);
    std::array<T, std::tuple_size_v<decltype(inner)>> out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = inner[i].d;
    return out;
  }
}

template <int Order, Variant V>
Eigen::MatrixXd lie_gradient(const Vec7& x, const InputVector& u, double step) {
  constexpr int kOutputs = V == Variant::A ? 6 : 5;
  Eigen::MatrixXd g(kOutputs, 7);
  for (int j = 0; j < 7; ++j) {
    std::array<double, 7> plus{}, minus{};
    for (int i = 0; i < 7; ++i) plus[i] = minus[i] = x(i);
    plus[j] += step;
    minus[j] -= step;
    const auto lp = lie_derivative<Order, V>(plus, u);
    const auto lm = lie_derivative<Order, V>(minus, u);
    for (int i = 0; i < kOutputs; ++i) g(i, j) = (lp[i] - lm[i]) / (2.0 * step);
  }
  return g;
}

template <Variant V>
Eigen::MatrixXd lie_gradient_runtime(int order, const Vec7& x, const InputVector& u, double step) {
  switch (order) {
    case 0: return lie_gradient<0, V>(x, u, step);
    case 1: return lie_gradient<1, V>(x, u, step);
    case 2: return lie_gradient<2, V>(x, u, step);
    default: throw std::invalid_argument("numeric observability: order must be 0, 1 or 2");
  }
}

}  // namespace detail

inline constexpr double kLieFiniteDifferenceStep = 1e-5;
inline constexpr double kRankRelativeCutoff = 1e-6;

/// Value of L^order h at x (range output first), for use by tests.
inline Eigen::VectorXd numeric_lie_derivative(const RelativeState& x, const InputVector& u, Variant system,
                                              int order) {
  std::array<double, 7> a{};
  const Vec7 v = x.to_vector();
  for (int i = 0; i < 7; ++i) a[i] = v(i);
  auto to_eigen = [](const auto& arr) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) out(static_cast<Eigen::Index>(i)) = arr[i];
    return out;
  };
  if (system == Variant::A) {
    switch (order) {
      case 0: return to_eigen(detail::lie_derivative<0, Variant::A>(a, u));
      case 1: return to_eigen(detail::lie_derivative<1, Variant::A>(a, u));
      case 2: return to_eigen(detail::lie_derivative<2, Variant::A>(a, u));
      default: break;
    }
  } else {
    switch (order) {
      case 0: return to_eigen(detail::lie_derivative<0, Variant::B>(a, u));
      case 1: return to_eigen(detail::lie_derivative<1, Variant::B>(a, u));
      case 2: return to_eigen(detail::lie_derivative<2, Variant::B>(a, u));
      default: break;
    }
  }
  throw std::invalid_argument("numeric_lie_derivative: order must be 0, 1 or 2");
}

// Stacked Lie gradients of all outputs, orders 0..order.
inline Eigen::MatrixXd numeric_observability_matrix(const RelativeState& x, const InputVector& u, Variant system,
                                                    int order, double step = kLieFiniteDifferenceStep) {
  if (order < 0 || order > 2) throw std::invalid_argument("numeric observability: order must be 0, 1 or 2");
  const Vec7 v = x.to_vector();
  const int m = system == Variant::A ? 6 : 5;
  Eigen::MatrixXd o((order + 1) * m, 7);
  for (int k = 0; k <= order; ++k) {
    o.middleRows(k * m, m) = system == Variant::A ? detail::lie_gradient_runtime<Variant::A>(k, v, u, step)
                                                  : detail::lie_gradient_runtime<Variant::B>(k, v, u, step);
  }
  return o;
}

inline int matrix_rank(const Eigen::MatrixXd& m, double relative_cutoff = kRankRelativeCutoff) {
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > relative_cutoff * s(0)) ++rank;
  }
  return rank;
}

inline int numeric_observability_rank(const RelativeState& x, const InputVector& u, Variant system, int order) {
  return matrix_rank(numeric_observability_matrix(x, u, system, order));
}

// M_B rebuilt from the numeric oracle: p and dpsi columns of the range
// output's gradients at orders 0, 1, 2.
inline Eigen::Matrix3d numeric_MB(const RelativeState& x, const InputVector& u,
                                  double step = kLieFiniteDifferenceStep) {
  const Eigen::MatrixXd o = numeric_observability_matrix(x, u, Variant::B, 2, step);
  Eigen::Matrix3d m;
  for (int k = 0; k < 3; ++k) m.row(k) = o.block(k * 5, 0, 1, 3);
  return m;
}

// ---------------------------------------------------------------------------
// Search for configurations that pass the intuitive conditions yet have
// |M_B| = 0.

struct SearchBounds {
  double max_position{10.0};
  double max_speed{2.0};
  double max_accel{2.0};
  // Keep well clear of the intuitive-condition boundaries.
  double min_position{0.5};
  double min_speed{0.3};
  double min_accel{0.3};
  double min_velocity_sine{0.2};
};

struct SearchOptions {
  int restarts{20};
  double target_measure{1e-6};
  double condition_tol{0.1};
  NelderMeadOptions simplex{};
};

struct UnobservableConfiguration {
  RelativeState x;
  InputVector u;
  double measure{0.0};
  int restart{0};
};

namespace detail {

inline void unpack_search_vector(const Eigen::VectorXd& z, RelativeState& x, InputVector& u) {
  x.p = Vec2(z(0), z(1));
  x.delta_psi = z(2);
  x.v1 = Vec2(z(3), z(4));
  x.v2 = Vec2(z(5), z(6));
  u.a1 = Vec2(z(7), z(8));
  u.a2 = Vec2(z(9), z(10));
  u.r1 = 0.0;
  u.r2 = 0.0;
}

inline double search_penalty(const RelativeState& x, const InputVector& u, const SearchBounds& b) {
  auto below = [](double v, double lo) { return v < lo ? (lo - v) * (lo - v) : 0.0; };
  auto above = [](double v, double hi) { return v > hi ? (v - hi) * (v - hi) : 0.0; };
  double pen = 0.0;
  pen += below(x.p.norm(), b.min_position) + above(x.p.norm(), b.max_position);
  pen += below(x.v1.norm(), b.min_speed) + above(x.v1.norm(), b.max_speed);
  pen += below(x.v2.norm(), b.min_speed) + above(x.v2.norm(), b.max_speed);
  pen += below(u.a1.norm(), b.min_accel) + above(u.a1.norm(), b.max_accel);
  pen += below(u.a2.norm(), b.min_accel) + above(u.a2.norm(), b.max_accel);
  const Vec2 rv2 = rotation_2d(x.delta_psi) * x.v2;
  const double denom = x.v1.norm() * rv2.norm();
  const double sine = denom > 0.0 ? std::abs(cross2(x.v1, rv2)) / denom : 0.0;
  pen += below(sine, b.min_velocity_sine);
  pen += above(std::abs(x.delta_psi), kPi);
  return pen;
}

}  // namespace detail

// Nelder-Mead over the 11 free quantities (p, dpsi, v1, v2, a1, a2) with
// random restarts. Throws std::runtime_error when no restart reaches the
// target measure.
inline UnobservableConfiguration find_unobservable_configuration(std::uint64_t seed, const SearchBounds& bounds = {},
                                                                 const SearchOptions& options = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto sample_vec = [&](double lo, double hi) {
    std::uniform_real_distribution<double> mag(lo, hi);
    std::uniform_real_distribution<double> ang(-kPi, kPi);
    const double m = mag(rng), a = ang(rng);
    return Vec2(m * std::cos(a), m * std::sin(a));
  };

  auto objective = [&](const Eigen::VectorXd& z) {
    RelativeState x;
    InputVector u;
    detail::unpack_search_vector(z, x, u);
    return std::abs(det_MB(x, u)) + 100.0 * detail::search_penalty(x, u, bounds);
  };

  NelderMeadOptions nm = options.simplex;
  nm.f_tolerance = std::min(nm.f_tolerance, options.target_measure * 1e-4);

  double best_seen = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < options.restarts; ++restart) {
    Eigen::VectorXd z(11);
    const Vec2 p = sample_vec(1.0, 0.5 * bounds.max_position);
    const Vec2 v1 = sample_vec(bounds.min_speed * 2.0, bounds.max_speed * 0.8);
    const Vec2 v2 = sample_vec(bounds.min_speed * 2.0, bounds.max_speed * 0.8);
    const Vec2 a1 = sample_vec(bounds.min_accel * 2.0, bounds.max_accel * 0.8);
    const Vec2 a2 = sample_vec(bounds.min_accel * 2.0, bounds.max_accel * 0.8);
    z << p, 0.5 * kPi * unit(rng), v1, v2, a1, a2;

    const NelderMeadResult r = nelder_mead(objective, z, nm);
    RelativeState x;
    InputVector u;
    detail::unpack_search_vector(r.x, x, u);
    const double measure = std::abs(det_MB(x, u));
    best_seen = std::min(best_seen, measure);
    if (measure < options.target_measure && detail::search_penalty(x, u, bounds) == 0.0 &&
        check_intuitive_conditions_b(x, u, options.condition_tol).all()) {
      x.delta_psi = wrap_angle(x.delta_psi);
      return {x, u, measure, restart};
    }
  }
  throw std::runtime_error("find_unobservable_configuration: no restart converged (best |det M_B| = " +
                           std::to_string(best_seen) + ")");
}

// ---------------------------------------------------------------------------
// Grid scans over the relative position with velocities and accelerations held.

struct Interval {
  double lo{0.0};
  double hi{0.0};
};

struct GridScan {
  Interval px_range;
  Interval py_range;
  int resolution{0};
  Eigen::MatrixXd values;  // |measure|, rows indexed by py, columns by px
  Eigen::MatrixXd signed_values;

  double px_at(int col) const {
    return px_range.lo + (px_range.hi - px_range.lo) * col / static_cast<double>(resolution - 1);
  }
  double py_at(int row) const {
    return py_range.lo + (py_range.hi - py_range.lo) * row / static_cast<double>(resolution - 1);
  }

  int count_below(double threshold) const { return static_cast<int>((values.array() < threshold).count()); }

  double fraction_below(double threshold) const {
    return static_cast<double>(count_below(threshold)) / static_cast<double>(values.size());
  }

  // Cells (2x2 sample blocks) straddling the zero set of the signed measure.
  int zero_crossing_cells() const {
    int n = 0;
    for (int r = 0; r + 1 < resolution; ++r) {
      for (int c = 0; c + 1 < resolution; ++c) {
        const double a = signed_values(r, c), b = signed_values(r, c + 1);
        const double d = signed_values(r + 1, c), e = signed_values(r + 1, c + 1);
        const double lo = std::min({a, b, d, e}), hi = std::max({a, b, d, e});
        if (lo <= 0.0 && hi >= 0.0) ++n;
      }
    }
    return n;
  }
};

inline GridScan scan_observability_grid(const RelativeState& x, const InputVector& u, Interval px_range,
                                        Interval py_range, int resolution) {
  if (resolution < 2) throw std::invalid_argument("scan_observability_grid: resolution must be >= 2");
  GridScan scan{px_range, py_range, resolution, Eigen::MatrixXd(resolution, resolution),
                Eigen::MatrixXd(resolution, resolution)};
  RelativeState probe = x;
  for (int r = 0; r < resolution; ++r) {
    for (int c = 0; c < resolution; ++c) {
      probe.p = Vec2(scan.px_at(c), scan.py_at(r));
      const double d = det_MB(probe, u);
      scan.signed_values(r, c) = d;
      scan.values(r, c) = std::abs(d);
    }
  }
  return scan;
}

// CSV: header px,py,measure; row-major (py outer, px inner).
inline void write_grid_csv(std::ostream& os, const GridScan& scan) {
  os << "px,py,measure\n";
  for (int r = 0; r < scan.resolution; ++r) {
    for (int c = 0; c < scan.resolution; ++c) {
      os << scan.px_at(c) << ',' << scan.py_at(r) << ',' << scan.values(r, c) << '\n';
    }
  }
}

}  // namespace relloc
