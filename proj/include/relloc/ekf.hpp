#pragma once

// Extended Kalman filter over the relative kinematics. Variant A observes
// [range, dpsi, v1, v2]; variant B observes [range, v1, v2].
//
// Instances are values: predict() and update() return a new instance.

#include "relloc/dynamics.hpp"
#include "relloc/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>

namespace relloc {

inline constexpr double kMaxPredictStep = 2.0;        // s, stale-data guard
inline constexpr double kMinRangeForUpdate = 1e-3;    // m, range Jacobian singular below this
inline constexpr double kNoiselessChannelSigma = 0.1; // stand-in std for noise-free channels

inline int measurement_size(Variant v) { return v == Variant::A ? 6 : 5; }

struct EkfConfig {
  Variant variant{Variant::B};
  double dt_nominal{0.05};
  Mat7 Q{Mat7::Identity() * 1e-4};  // continuous-time density; applied as Q * dt
  Eigen::MatrixXd Rm{Eigen::MatrixXd::Identity(5, 5) * kNoiselessChannelSigma * kNoiselessChannelSigma};
  Mat7 P0{Mat7::Identity()};
  RelativeState x0{};
  Integrator integrator{Integrator::Rk4};

  static Mat7 default_P0() {
    Vec7 d;
    d << 1.0, 1.0, 1.0, 0.01, 0.01, 0.01, 0.01;
    return d.asDiagonal();
  }

  // Diagonal measurement covariance: range sigma on the first row, the given
  // sigmas elsewhere. Zero sigmas are replaced by kNoiselessChannelSigma.
  static Eigen::MatrixXd measurement_covariance(Variant v, double sigma_range, double sigma_heading = 0.0,
                                                double sigma_velocity = 0.0) {
    auto var = [](double s) {
      const double e = s > 0.0 ? s : kNoiselessChannelSigma;
      return e * e;
    };
    const int m = measurement_size(v);
    Eigen::VectorXd d(m);
    d(0) = var(sigma_range);
    int i = 1;
    if (v == Variant::A) d(i++) = var(sigma_heading);
    for (; i < m; ++i) d(i) = var(sigma_velocity);
    return d.asDiagonal();
  }

  static EkfConfig defaults(Variant v, const RelativeState& x0, double sigma_range = 0.0) {
    EkfConfig c;
    c.variant = v;
    c.x0 = x0;
    c.P0 = default_P0();
    c.Rm = measurement_covariance(v, sigma_range);
    return c;
  }

  void validate() const;
};

namespace detail {

inline bool symmetric_psd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) return false;
  if (!m.allFinite()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) return false;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  return es.eigenvalues().minCoeff() >= -1e-12 * scale;
}

}  // namespace detail

inline void EkfConfig::validate() const {
  if (!(dt_nominal > 0.0)) throw std::invalid_argument("EkfConfig: dt_nominal must be > 0");
  if (!detail::symmetric_psd(Q)) throw std::invalid_argument("EkfConfig: Q must be symmetric PSD");
  if (!detail::symmetric_psd(P0)) throw std::invalid_argument("EkfConfig: P0 must be symmetric PSD");
  const int m = measurement_size(variant);
  if (Rm.rows() != m || Rm.cols() != m) {
    throw std::invalid_argument("EkfConfig: Rm must be " + std::to_string(m) + "x" + std::to_string(m) +
                                " for variant " + to_string(variant));
  }
  if (!detail::symmetric_psd(Rm)) throw std::invalid_argument("EkfConfig: Rm must be symmetric PSD");
  if (!x0.finite()) throw std::invalid_argument("EkfConfig: x0 must be finite");
}

struct EkfInstance {
  RelativeState x;
  Mat7 P{Mat7::Zero()};
  std::shared_ptr<const EkfConfig> config;
  double last_update_time{0.0};
  bool range_skipped{false};  // set by the most recent update()

  Variant variant() const { return config->variant; }
};

inline EkfInstance initialize(const EkfConfig& config, double t0 = 0.0) {
  config.validate();
  EkfInstance e;
  e.config = std::make_shared<const EkfConfig>(config);
  e.x = config.x0.wrapped();
  e.P = config.P0;
  e.last_update_time = t0;
  return e;
}

namespace detail {

inline Mat7 symmetrize(const Mat7& p) { return 0.5 * (p + p.transpose()); }

}  // namespace detail

inline EkfInstance predict(const EkfInstance& ekf, const InputVector& u, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("ekf predict: dt must be > 0");
  if (dt > kMaxPredictStep) throw std::invalid_argument("ekf predict: dt exceeds stale-data guard (2 s)");
  const Propagation step = propagate(ekf.x.to_vector(), u, dt, ekf.config->integrator);
  EkfInstance out = ekf;
  out.x = RelativeState::from_vector(step.x).wrapped();
  out.P = detail::symmetrize(step.transition * ekf.P * step.transition.transpose() + ekf.config->Q * dt);
  out.last_update_time = ekf.last_update_time + dt;
  return out;
}

namespace detail {

// Joseph-form update restricted to the given measurement rows.
template <int M>
EkfInstance kalman_update(const EkfInstance& ekf, const Eigen::Matrix<double, M, 1>& z,
                          const Eigen::Matrix<double, M, 1>& h, const Eigen::Matrix<double, M, 7>& H,
                          const Eigen::MatrixXd& Rm, bool wrap_row1, bool skip_range) {
  const int first = skip_range ? 1 : 0;
  const int rows = M - first;
  Eigen::VectorXd y = (z - h).tail(rows);
  if (wrap_row1) {
    // Row 1 (heading) is index 1 - first in the reduced system.
    y(1 - first) = wrap_angle(y(1 - first));
  }
  const Eigen::MatrixXd Hr = H.bottomRows(rows);
  const Eigen::MatrixXd Rr = Rm.bottomRightCorner(rows, rows);
  const Eigen::MatrixXd S = Hr * ekf.P * Hr.transpose() + Rr;
  const Eigen::MatrixXd K = ekf.P * Hr.transpose() * S.ldlt().solve(Eigen::MatrixXd::Identity(rows, rows));

  EkfInstance out = ekf;
  const Vec7 dx = K * y;
  out.x = RelativeState::from_vector(ekf.x.to_vector() + dx).wrapped();
  const Mat7 ikh = Mat7::Identity() - K * Hr;
  out.P = symmetrize(ikh * ekf.P * ikh.transpose() + K * Rr * K.transpose());
  out.range_skipped = skip_range;
  return out;
}

}  // namespace detail

inline EkfInstance update(const EkfInstance& ekf, const MeasurementA& z) {
  if (ekf.variant() != Variant::A) throw std::invalid_argument("ekf update: MeasurementA given to a variant-B filter");
  // Negative noisy ranges pass through; only non-finite values are rejected.
  if (!std::isfinite(z.range)) throw std::invalid_argument("ekf update: non-finite range");
  const double rng = ekf.x.p.norm();
  const bool skip = rng < kMinRangeForUpdate;
  Eigen::Matrix<double, 6, 1> h;
  h << rng, ekf.x.delta_psi, ekf.x.v1, ekf.x.v2;
  Eigen::Matrix<double, 6, 7> H = Eigen::Matrix<double, 6, 7>::Zero();
  if (!skip) H.block<1, 2>(0, 0) = ekf.x.p.transpose() / rng;
  H(1, 2) = 1.0;
  H.block<4, 4>(2, 3) = Eigen::Matrix4d::Identity();
  return detail::kalman_update<6>(ekf, z.to_vector(), h, H, ekf.config->Rm, true, skip);
}

inline EkfInstance update(const EkfInstance& ekf, const MeasurementB& z) {
  if (ekf.variant() != Variant::B) throw std::invalid_argument("ekf update: MeasurementB given to a variant-A filter");
  if (!std::isfinite(z.range)) throw std::invalid_argument("ekf update: non-finite range");
  const double rng = ekf.x.p.norm();
  const bool skip = rng < kMinRangeForUpdate;
  Eigen::Matrix<double, 5, 1> h;
  h << rng, ekf.x.v1, ekf.x.v2;
  Eigen::Matrix<double, 5, 7> H = Eigen::Matrix<double, 5, 7>::Zero();
  if (!skip) H.block<1, 2>(0, 0) = ekf.x.p.transpose() / rng;
  H.block<4, 4>(1, 3) = Eigen::Matrix4d::Identity();
  return detail::kalman_update<5>(ekf, z.to_vector(), h, H, ekf.config->Rm, false, skip);
}

// CSV: t,px,py,dpsi,v1x,v1y,v2x,v2y,p_trace
inline void write_trace_header(std::ostream& os) { os << "t,px,py,dpsi,v1x,v1y,v2x,v2y,p_trace\n"; }

inline void write_trace_row(std::ostream& os, double t, const EkfInstance& e) {
  const Vec7 x = e.x.to_vector();
  os << t;
  for (int i = 0; i < 7; ++i) os << ',' << x(i);
  os << ',' << e.P.trace() << '\n';
}

}  // namespace relloc
