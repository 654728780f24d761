#pragma once

// Delayed-trajectory leader following. The follower steers towards the
// position the leader held tau seconds ago, using only its own body-frame
// motion history and the stale relative estimate:
//
//   e(t_n)  = R(-dpsi1 over [t_n - tau, t_n]) * (p(t_n - tau) - dp)
//   e'      = -v1 + Rbar v2bar - S(r1) e
//   e''     = D v1c + b,   D = -diag(1 / tau_plant)
//   v1c     = D^-1 (i - b),   i = -Kp e - Kd e'

#include "relloc/ekf.hpp"
#include "relloc/geometry.hpp"
#include "relloc/ranging.hpp"
#include "relloc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace relloc {

// One timestamped entry of the follower's history. Leader quantities are in
// the leader's horizontal frame at t; own quantities in the follower's.
struct DelaySample {
  double t{0.0};
  Vec2 p_hat{Vec2::Zero()};
  double dpsi_hat{0.0};
  Vec2 leader_velocity{Vec2::Zero()};
  Vec2 leader_accel{Vec2::Zero()};
  double leader_yaw_rate{0.0};
  Vec2 own_velocity{Vec2::Zero()};
  double own_yaw_rate{0.0};
};

class DelayBuffer {
 public:
  explicit DelayBuffer(double horizon) : horizon_(horizon) {
    if (!(horizon > 0.0)) throw std::invalid_argument("DelayBuffer: horizon must be > 0");
  }

  double horizon() const { return horizon_; }
  bool empty() const { return samples_.empty(); }
  std::size_t size() const { return samples_.size(); }
  double oldest() const { return samples_.front().t; }
  double newest() const { return samples_.back().t; }

  bool covers(double t1, double t2) const {
    return !samples_.empty() && t1 >= oldest() - 1e-9 && t2 <= newest() + 1e-9 && t1 <= t2;
  }

  void push(const DelaySample& s) {
    if (!samples_.empty() && !(s.t > samples_.back().t)) {
      throw std::invalid_argument("DelayBuffer: timestamps must be strictly increasing");
    }
    samples_.push_back(s);
    // Keep one sample at or before the horizon edge so queries at t - horizon interpolate.
    while (samples_.size() > 2 && samples_[1].t <= s.t - horizon_) samples_.pop_front();
  }

  // Linear interpolation between bracketing samples.
  DelaySample at(double t) const {
    require(t, t);
    auto hi = std::lower_bound(samples_.begin(), samples_.end(), t,
                               [](const DelaySample& s, double v) { return s.t < v; });
    if (hi == samples_.end()) return samples_.back();
    if (hi == samples_.begin() || hi->t == t) return *hi;
    const auto lo = std::prev(hi);
    const double w = (t - lo->t) / (hi->t - lo->t);
    auto mix = [w](const auto& a, const auto& b) { return (1.0 - w) * a + w * b; };
    DelaySample out;
    out.t = t;
    out.p_hat = mix(lo->p_hat, hi->p_hat);
    out.dpsi_hat = lo->dpsi_hat + w * wrap_angle(hi->dpsi_hat - lo->dpsi_hat);
    out.leader_velocity = mix(lo->leader_velocity, hi->leader_velocity);
    out.leader_accel = mix(lo->leader_accel, hi->leader_accel);
    out.leader_yaw_rate = mix(lo->leader_yaw_rate, hi->leader_yaw_rate);
    out.own_velocity = mix(lo->own_velocity, hi->own_velocity);
    out.own_yaw_rate = mix(lo->own_yaw_rate, hi->own_yaw_rate);
    return out;
  }

  // Trapezoidal integral of the own yaw rate over [t1, t2].
  double heading_change_integral(double t1, double t2) const {
    double total = 0.0;
    walk(t1, t2, [&](const DelaySample& a, const DelaySample& b) {
      total += 0.5 * (a.own_yaw_rate + b.own_yaw_rate) * (b.t - a.t);
    });
    return total;
  }

  // Own displacement over [t1, t2] expressed in the body frame at t1.
  Vec2 displacement_integral(double t1, double t2) const {
    Vec2 total = Vec2::Zero();
    double heading = 0.0;
    walk(t1, t2, [&](const DelaySample& a, const DelaySample& b) {
      const double dh = 0.5 * (a.own_yaw_rate + b.own_yaw_rate) * (b.t - a.t);
      const Vec2 va = rotation_2d(heading) * a.own_velocity;
      const Vec2 vb = rotation_2d(heading + dh) * b.own_velocity;
      total += 0.5 * (va + vb) * (b.t - a.t);
      heading += dh;
    });
    return total;
  }

 private:
  void require(double t1, double t2) const {
    if (!covers(t1, t2)) {
      throw std::out_of_range("DelayBuffer: query outside stored history");
    }
  }

  // Calls fn on consecutive (interpolated) sample pairs spanning [t1, t2].
  template <typename Fn>
  void walk(double t1, double t2, Fn&& fn) const {
    require(t1, t2);
    if (t1 == t2) return;
    DelaySample prev = at(t1);
    for (const auto& s : samples_) {
      if (s.t <= t1) continue;
      if (s.t >= t2) break;
      fn(prev, s);
      prev = s;
    }
    fn(prev, at(t2));
  }

  double horizon_;
  std::deque<DelaySample> samples_;
};

struct ControllerConfig {
  double tau_delay{4.0};
  double kp{1.0};
  double kd{2.0};
  Vec2 tau_plant{0.5, 0.5};
  double v_max{1.5};

  void validate() const {
    if (!(tau_delay > 0.0)) throw std::invalid_argument("ControllerConfig: tau_delay must be > 0");
    if (!(kp > 0.0) || !(kd > 0.0)) throw std::invalid_argument("ControllerConfig: Kp and Kd must be > 0");
    if (!(tau_plant.x() > 0.0) || !(tau_plant.y() > 0.0)) {
      throw std::invalid_argument("ControllerConfig: plant time constants must be > 0");
    }
    if (!(v_max > 0.0)) throw std::invalid_argument("ControllerConfig: v_max must be > 0");
  }
};

// Everything the inversion needs at time t. Barred quantities are the
// leader's at t - tau; dpsi_bar maps the leader's frame then to ours now.
struct NdiState {
  Vec2 e{Vec2::Zero()};
  Vec2 v1{Vec2::Zero()};
  double r1{0.0};
  double dpsi_bar{0.0};
  Vec2 v2_bar{Vec2::Zero()};
  Vec2 a2_bar{Vec2::Zero()};
};

inline Vec2 error_rate(const NdiState& s) {
  return -s.v1 + rotation_2d(s.dpsi_bar) * s.v2_bar - skew_2d(s.r1) * s.e;
}

inline Mat2 ndi_control_effectiveness(const ControllerConfig& c) {
  Mat2 d = Mat2::Zero();
  d(0, 0) = -1.0 / c.tau_plant.x();
  d(1, 1) = -1.0 / c.tau_plant.y();
  return d;
}

inline Vec2 ndi_drift(const NdiState& s, const ControllerConfig& c) {
  const Vec2 e_dot = error_rate(s);
  const Vec2 lag(s.v1.x() / c.tau_plant.x(), s.v1.y() / c.tau_plant.y());
  return -skew_2d(s.r1) * e_dot - rotation_2d_derivative(s.dpsi_bar) * s.v2_bar * s.r1 + lag +
         rotation_2d(s.dpsi_bar) * s.a2_bar;
}

inline Vec2 virtual_input(const NdiState& s, const ControllerConfig& c) {
  return -c.kp * s.e - c.kd * error_rate(s);
}

// Unsaturated velocity command.
inline Vec2 ndi_control(const NdiState& s, const ControllerConfig& c) {
  const Mat2 d = ndi_control_effectiveness(c);
  return d.inverse() * (virtual_input(s, c) - ndi_drift(s, c));
}

inline Vec2 saturate_command(const Vec2& v, double v_max) {
  if (!(v_max > 0.0)) throw std::invalid_argument("saturate_command: v_max must be > 0");
  const double n = v.norm();
  if (n <= v_max) return v;
  return v * (v_max / n);
}

// Relative-position error towards the leader's position tau seconds ago,
// in the current body frame. nullopt while the history is shorter than tau.
inline std::optional<Vec2> delayed_error(const DelayBuffer& buf, double t_n, double tau) {
  if (!buf.covers(t_n - tau, t_n)) return std::nullopt;
  const DelaySample old = buf.at(t_n - tau);
  const double dpsi1 = buf.heading_change_integral(t_n - tau, t_n);
  const Vec2 dp = buf.displacement_integral(t_n - tau, t_n);
  return rotation_2d(-dpsi1) * (old.p_hat - dp);
}

inline std::optional<NdiState> delayed_ndi_state(const DelayBuffer& buf, double t_n, double tau) {
  const auto e = delayed_error(buf, t_n, tau);
  if (!e) return std::nullopt;
  const DelaySample old = buf.at(t_n - tau);
  const DelaySample now = buf.at(t_n);
  NdiState s;
  s.e = *e;
  s.v1 = now.own_velocity;
  s.r1 = now.own_yaw_rate;
  s.dpsi_bar = wrap_angle(old.dpsi_hat - buf.heading_change_integral(t_n - tau, t_n));
  s.v2_bar = old.leader_velocity;
  s.a2_bar = old.leader_accel;
  return s;
}

// Follower kinematics: body-frame velocity lags the command per axis.
struct FollowerPlant {
  Vec2 position{Vec2::Zero()};  // inertial
  Vec2 velocity{Vec2::Zero()};  // body horizontal frame
  double heading{0.0};
  double yaw_rate{0.0};

  bool finite() const {
    return is_finite(position) && is_finite(velocity) && std::isfinite(heading) && std::isfinite(yaw_rate);
  }
  Vec2 inertial_velocity() const { return rotation_2d(heading) * velocity; }
};

// Exact step of v' = (v_c - v) / tau per axis with the command held. The
// position integral uses the heading at the step midpoint.
inline FollowerPlant follower_plant_step(const FollowerPlant& p, const Vec2& command, const Vec2& tau_plant,
                                         double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("follower_plant_step: dt must be > 0");
  FollowerPlant out = p;
  Vec2 disp;
  for (int i = 0; i < 2; ++i) {
    const double decay = std::exp(-dt / tau_plant(i));
    out.velocity(i) = command(i) + (p.velocity(i) - command(i)) * decay;
    disp(i) = command(i) * dt + (p.velocity(i) - command(i)) * tau_plant(i) * (1.0 - decay);
  }
  out.position = p.position + rotation_2d(p.heading + 0.5 * p.yaw_rate * dt) * disp;
  out.heading = wrap_angle(p.heading + p.yaw_rate * dt);
  return out;
}

// Own-velocity sensor: white noise plus a first-order Gauss-Markov bias.
struct VelocitySensorModel {
  double white_sigma{0.05};
  double bias_sigma{0.02};
  double bias_time{20.0};

  void validate() const {
    if (!(white_sigma >= 0.0) || !(bias_sigma >= 0.0)) throw std::invalid_argument("VelocitySensorModel: sigmas must be >= 0");
    if (!(bias_time > 0.0)) throw std::invalid_argument("VelocitySensorModel: bias_time must be > 0");
  }
};

class VelocitySensor {
 public:
  VelocitySensor(VelocitySensorModel m, CounterRng rng) : m_(m), rng_(rng) {
    bias_ = m_.bias_sigma * Vec2(rng_.normal(), rng_.normal());
  }

  Vec2 measure(const Vec2& truth, double dt) {
    if (dt > 0.0) {
      const double a = std::exp(-dt / m_.bias_time);
      const double q = m_.bias_sigma * std::sqrt(1.0 - a * a);
      bias_ = a * bias_ + q * Vec2(rng_.normal(), rng_.normal());
    }
    return truth + bias_ + m_.white_sigma * Vec2(rng_.normal(), rng_.normal());
  }

 private:
  VelocitySensorModel m_;
  CounterRng rng_;
  Vec2 bias_{Vec2::Zero()};
};

// Inertial leader truth. Heading stays at a constant offset.
struct LeaderTruth {
  Vec2 position{Vec2::Zero()};
  Vec2 velocity{Vec2::Zero()};
  Vec2 acceleration{Vec2::Zero()};
  double heading{0.0};
  double yaw_rate{0.0};
};

using LeaderTrajectory = std::function<LeaderTruth(double)>;

// Figure-eight with a faster lateral weave that adds frequent turns:
//   x = ax sin(w t),  y = ay sin(2 w t) + aw sin(5 w t)
inline LeaderTrajectory figure_eight_with_turns(double ax = 3.5, double ay = 2.5, double aw = 0.6,
                                                double period = 40.0, double heading = 0.3) {
  const double w = 2.0 * kPi / period;
  return [=](double t) {
    LeaderTruth l;
    l.position = Vec2(ax * std::sin(w * t), ay * std::sin(2 * w * t) + aw * std::sin(5 * w * t));
    l.velocity = Vec2(ax * w * std::cos(w * t), 2 * w * ay * std::cos(2 * w * t) + 5 * w * aw * std::cos(5 * w * t));
    l.acceleration = Vec2(-ax * w * w * std::sin(w * t),
                          -4 * w * w * ay * std::sin(2 * w * t) - 25 * w * w * aw * std::sin(5 * w * t));
    l.heading = heading;
    return l;
  };
}

struct TrackingResponseSample {
  double t{0.0};
  Vec2 e{Vec2::Zero()};
  Vec2 command{Vec2::Zero()};
};

// Closed loop with perfect relative state and no sensors. Before t = 0 the
// follower flies the delayed leader path shifted by `offset` (inertial, at
// a fixed heading), so the loop starts with ||e|| = ||offset|| and e' = 0.
inline std::vector<TrackingResponseSample> ideal_tracking_response(const LeaderTrajectory& leader,
                                                                   const ControllerConfig& c, const Vec2& offset,
                                                                   double duration, double rate,
                                                                   double heading = 0.0) {
  c.validate();
  if (!(duration > 0.0) || !(rate > 0.0)) {
    throw std::invalid_argument("ideal_tracking_response: duration and rate must be > 0");
  }
  const double dt = 1.0 / rate;
  const double tau = c.tau_delay;
  const Mat2 to_body = rotation_2d(-heading);

  auto sample_at = [&](double t, const Vec2& position, const Vec2& body_velocity) {
    const LeaderTruth l = leader(t);
    DelaySample s;
    s.t = t;
    s.p_hat = to_body * (l.position - position);
    s.dpsi_hat = wrap_angle(l.heading - heading);
    s.leader_velocity = rotation_2d(-l.heading) * l.velocity;
    s.leader_accel = rotation_2d(-l.heading) * l.acceleration;
    s.leader_yaw_rate = l.yaw_rate;
    s.own_velocity = body_velocity;
    s.own_yaw_rate = 0.0;
    return s;
  };

  DelayBuffer buf(tau + 1.0);
  const auto n_history = static_cast<long long>(std::ceil(tau * rate));
  for (long long k = -n_history; k < 0; ++k) {
    const double s = static_cast<double>(k) * dt;
    const LeaderTruth past = leader(s - tau);
    buf.push(sample_at(s, past.position + offset, to_body * past.velocity));
  }
  FollowerPlant plant;
  plant.heading = heading;
  plant.position = leader(-tau).position + offset;
  plant.velocity = to_body * leader(-tau).velocity;

  std::vector<TrackingResponseSample> out;
  const auto steps = static_cast<long long>(std::llround(duration * rate));
  for (long long k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    buf.push(sample_at(t, plant.position, plant.velocity));
    const auto state = delayed_ndi_state(buf, t, tau);
    if (!state) throw std::logic_error("ideal_tracking_response: history does not cover tau");
    const Vec2 cmd = saturate_command(ndi_control(*state, c), c.v_max);
    out.push_back({t, state->e, cmd});
    plant = follower_plant_step(plant, cmd, c.tau_plant, dt);
  }
  return out;
}

struct FollowerSetup {
  ControllerConfig controller;
  EkfConfig ekf;             // variant and tuning; x0 is replaced by truth plus init_offset
  Vec2 start{Vec2::Zero()};  // inertial start position
  double heading{0.0};
  double yaw_rate{0.0};
  Vec2 init_offset{0.5, -0.5};  // initial relative-position estimate error
};

struct LeaderFollowerOptions {
  double duration{200.0};         // engaged time
  double warmup{20.0};            // circling time before engagement; >= tau
  double control_rate{50.0};
  double warmup_radius{1.0};
  double warmup_period{10.0};
  VelocitySensorModel velocity_sensor;
  double accel_sigma{0.05};
  std::uint64_t seed{1};
  bool perfect_state{false};       // feed the controller ground truth instead of the EKF
  bool record_trace{true};
  std::function<void(const RangingEvent&)> on_event;  // every network exchange, including drops
};

struct TrackingSample {
  double t{0.0};
  Vec2 e{Vec2::Zero()};
  double track_err{0.0};
  double loc_err{0.0};
  Vec2 command{Vec2::Zero()};
  bool saturated{false};
  Vec2 follower_position{Vec2::Zero()};
};

struct FollowerResult {
  std::vector<TrackingSample> samples;
  double tracking_mae{0.0};
  double localization_mae{0.0};
  std::size_t saturated_steps{0};
  std::size_t range_updates{0};
  double max_update_gap{0.0};
  bool aborted{false};
  std::string diagnostic;
};

inline void write_tracking_header(std::ostream& os) { os << "t,ex,ey,track_err_m,loc_err_m,cmd_x,cmd_y,saturated\n"; }

inline void write_tracking_row(std::ostream& os, const TrackingSample& s) {
  os << s.t << ',' << s.e.x() << ',' << s.e.y() << ',' << s.track_err << ',' << s.loc_err << ',' << s.command.x()
     << ',' << s.command.y() << ',' << (s.saturated ? 1 : 0) << '\n';
}

namespace detail {

inline RelativeState follower_relative_truth(const FollowerPlant& f, const LeaderTruth& l) {
  RelativeState x;
  x.p = rotation_2d(-f.heading) * (l.position - f.position);
  x.delta_psi = wrap_angle(l.heading - f.heading);
  x.v1 = f.velocity;
  x.v2 = rotation_2d(-l.heading) * l.velocity;
  return x;
}

struct FollowerLoop {
  FollowerSetup setup{};
  FollowerPlant plant;
  EkfInstance ekf;
  DelayBuffer buffer;
  VelocitySensor velocity_sensor;
  CounterRng accel_rng;
  Vec2 command{Vec2::Zero()};
  Vec2 last_own_velocity{Vec2::Zero()};
  Vec2 last_own_accel{Vec2::Zero()};
  RangingMessage last_leader_msg{};
  bool have_leader_msg{false};
  double ekf_time{0.0};
  double last_range_time{0.0};
  FollowerResult result{};
  double sum_track{0.0}, sum_loc{0.0};
  std::size_t n_metric{0};
};

class PipelineSource final : public AgentStateSource {
 public:
  PipelineSource(const LeaderTrajectory& leader, const std::vector<FollowerLoop>& loops, VelocitySensor leader_sensor)
      : leader_(leader), loops_(loops), leader_sensor_(leader_sensor) {}

  RangingMessage broadcast(int agent, double t) const override {
    RangingMessage m;
    if (agent == 0) {
      const LeaderTruth l = leader_(t);
      const Vec2 v = leader_sensor_.measure(rotation_2d(-l.heading) * l.velocity, t - leader_sensor_time_);
      leader_sensor_time_ = t;
      const Vec2 a = rotation_2d(-l.heading) * l.acceleration;
      m.vx = static_cast<float>(v.x());
      m.vy = static_cast<float>(v.y());
      m.ax = static_cast<float>(a.x());
      m.ay = static_cast<float>(a.y());
      m.yaw_rate = static_cast<float>(l.yaw_rate);
      m.height = 1.5f;
    } else {
      const auto& f = loops_[static_cast<std::size_t>(agent - 1)];
      m.vx = static_cast<float>(f.last_own_velocity.x());
      m.vy = static_cast<float>(f.last_own_velocity.y());
      m.ax = static_cast<float>(f.last_own_accel.x());
      m.ay = static_cast<float>(f.last_own_accel.y());
      m.yaw_rate = static_cast<float>(f.plant.yaw_rate);
      m.height = 1.5f;
    }
    return m;
  }

  double true_range(int a, int b, double t) const override { return (position(a, t) - position(b, t)).norm(); }

 private:
  Vec2 position(int agent, double t) const {
    if (agent == 0) return leader_(t).position;
    return loops_[static_cast<std::size_t>(agent - 1)].plant.position;
  }

  const LeaderTrajectory& leader_;
  const std::vector<FollowerLoop>& loops_;
  // The leader's own velocity sensor advances with each broadcast.
  mutable VelocitySensor leader_sensor_;
  mutable double leader_sensor_time_{0.0};
};

}  // namespace detail

// Closed loop of one leader and N followers sharing one ranging network.
// Each follower: EKF (fed by ranges and the leader's broadcasts), delay
// buffer, NDI controller and lag plant. Metrics cover the engaged period.
inline std::vector<FollowerResult> run_leader_follower(const LeaderTrajectory& leader,
                                                       const std::vector<FollowerSetup>& followers,
                                                       const LinkModel& link, const LeaderFollowerOptions& opt) {
  if (followers.empty()) throw std::invalid_argument("run_leader_follower: at least one follower is required");
  if (!(opt.control_rate > 0.0) || !(opt.duration > 0.0)) {
    throw std::invalid_argument("run_leader_follower: control_rate and duration must be > 0");
  }
  opt.velocity_sensor.validate();
  link.validate();

  std::vector<detail::FollowerLoop> loops;
  loops.reserve(followers.size());
  for (std::size_t i = 0; i < followers.size(); ++i) {
    const FollowerSetup& fs = followers[i];
    fs.controller.validate();
    if (opt.warmup < fs.controller.tau_delay) {
      throw std::invalid_argument("run_leader_follower: warmup must cover the follower delay");
    }
    FollowerPlant plant;
    plant.position = fs.start;
    plant.heading = fs.heading;
    plant.yaw_rate = fs.yaw_rate;
    EkfConfig cfg = fs.ekf;
    RelativeState x0 = detail::follower_relative_truth(plant, leader(0.0));
    x0.p += fs.init_offset;
    cfg.x0 = x0;
    detail::FollowerLoop loop{fs,
                              plant,
                              initialize(cfg),
                              DelayBuffer(fs.controller.tau_delay + 2.0),
                              VelocitySensor(opt.velocity_sensor, CounterRng::for_stream(opt.seed, 100 + i)),
                              CounterRng::for_stream(opt.seed, 200 + i)};
    loops.push_back(std::move(loop));
  }

  ScheduleConfig sched;
  sched.n_agents = static_cast<int>(followers.size()) + 1;
  NetworkSimulator net(sched, link, opt.seed);
  detail::PipelineSource source(leader, loops, VelocitySensor(opt.velocity_sensor, CounterRng::for_stream(opt.seed, 300)));

  const double dt_ctrl = 1.0 / opt.control_rate;
  const double t_end = opt.warmup + opt.duration;
  const double omega_warm = 2.0 * kPi / opt.warmup_period;
  double t = 0.0;
  long long tick = 0;

  auto ekf_predict_to = [&](detail::FollowerLoop& f, double tt) {
    if (tt <= f.ekf_time) return;
    InputVector u;
    u.a1 = f.last_own_accel;
    u.r1 = f.plant.yaw_rate;
    if (f.have_leader_msg) {
      u.a2 = Vec2(f.last_leader_msg.ax, f.last_leader_msg.ay);
      u.r2 = f.last_leader_msg.yaw_rate;
    }
    double remaining = tt - f.ekf_time;
    while (remaining > 1e-12) {
      const double h = std::min(remaining, kMaxPredictStep);
      f.ekf = predict(f.ekf, u, h);
      remaining -= h;
    }
    f.ekf_time = tt;
  };

  auto abort_follower = [&](detail::FollowerLoop& f, const std::string& why) {
    if (!f.result.aborted) {
      f.result.aborted = true;
      f.result.diagnostic = "t=" + std::to_string(t) + ": " + why;
    }
  };

  // Advances every plant to time tt under the held commands.
  auto advance_plants = [&](double tt) {
    const double h = tt - t;
    if (h <= 0.0) return;
    for (auto& f : loops) {
      if (f.result.aborted) continue;
      const Vec2 v_before = f.plant.velocity;
      f.plant = follower_plant_step(f.plant, f.command, f.setup.controller.tau_plant, h);
      // Accelerometer reading in the body frame: v' + S(r) v.
      const Vec2 accel_true = (f.plant.velocity - v_before) / h + skew_2d(f.plant.yaw_rate) * f.plant.velocity;
      f.last_own_accel = accel_true + opt.accel_sigma * Vec2(f.accel_rng.normal(), f.accel_rng.normal());
      f.last_own_velocity = f.velocity_sensor.measure(f.plant.velocity, h);
    }
    t = tt;
  };

  while (t < t_end - 1e-12) {
    const double next_tick = (tick + 1) * dt_ctrl;
    const double next_event = net.next_time();
    if (next_event < next_tick) {
      advance_plants(next_event);
      const RangingEvent ev = net.step(source);
      if (opt.on_event) opt.on_event(ev);
      if (ev.initiator != 0 || !ev.range) continue;  // only leader-follower exchanges feed the filters
      auto& f = loops[static_cast<std::size_t>(ev.responder - 1)];
      if (f.result.aborted) continue;
      try {
        const RangingMessage leader_msg = decode_message(ev.initiator_frame);
        ekf_predict_to(f, ev.t);
        f.last_leader_msg = leader_msg;
        f.have_leader_msg = true;
        const Vec2 v2(leader_msg.vx, leader_msg.vy);
        if (f.ekf.variant() == Variant::B) {
          f.ekf = update(f.ekf, MeasurementB{*ev.range, f.last_own_velocity, v2});
        } else {
          const LeaderTruth l = leader(ev.t);
          f.ekf = update(f.ekf, MeasurementA{*ev.range, wrap_angle(l.heading - f.plant.heading), f.last_own_velocity, v2});
        }
        if (f.result.range_updates > 0) f.result.max_update_gap = std::max(f.result.max_update_gap, ev.t - f.last_range_time);
        f.last_range_time = ev.t;
        ++f.result.range_updates;
        if (!f.ekf.x.finite() || !f.ekf.P.allFinite()) abort_follower(f, "non-finite filter state");
      } catch (const std::exception& ex) {
        abort_follower(f, ex.what());
      }
      continue;
    }

    advance_plants(next_tick);
    ++tick;
    const LeaderTruth l_now = leader(t);
    for (auto& f : loops) {
      if (f.result.aborted) continue;
      try {
        ekf_predict_to(f, t);
        const RelativeState truth = detail::follower_relative_truth(f.plant, l_now);
        const RelativeState& est = opt.perfect_state ? truth : f.ekf.x;
        DelaySample s;
        s.t = t;
        s.p_hat = est.p;
        s.dpsi_hat = est.delta_psi;
        if (opt.perfect_state) {
          s.leader_velocity = truth.v2;
          s.leader_accel = rotation_2d(-l_now.heading) * l_now.acceleration;
          s.leader_yaw_rate = l_now.yaw_rate;
          s.own_velocity = f.plant.velocity;
        } else {
          if (f.have_leader_msg) {
            s.leader_velocity = Vec2(f.last_leader_msg.vx, f.last_leader_msg.vy);
            s.leader_accel = Vec2(f.last_leader_msg.ax, f.last_leader_msg.ay);
            s.leader_yaw_rate = f.last_leader_msg.yaw_rate;
          }
          s.own_velocity = f.last_own_velocity;
        }
        s.own_yaw_rate = f.plant.yaw_rate;
        f.buffer.push(s);

        const double tau = f.setup.controller.tau_delay;
        TrackingSample ts;
        ts.t = t;
        if (t < opt.warmup) {
          // Circle about the start point until the history covers tau.
          const Vec2 v_inertial = opt.warmup_radius * omega_warm *
                                  Vec2(-std::sin(omega_warm * t), std::cos(omega_warm * t));
          f.command = rotation_2d(-f.plant.heading) * v_inertial;
        } else {
          const auto state = delayed_ndi_state(f.buffer, t, tau);
          if (!state) throw std::runtime_error("delay buffer does not cover tau after warm-up");
          const Vec2 raw = ndi_control(*state, f.setup.controller);
          if (!is_finite(raw)) throw std::runtime_error("non-finite command");
          f.command = saturate_command(raw, f.setup.controller.v_max);
          ts.e = state->e;
          ts.saturated = raw.norm() > f.setup.controller.v_max;
          ts.track_err = (leader(t - tau).position - f.plant.position).norm();
          ts.loc_err = (f.ekf.x.p - truth.p).norm();
          f.sum_track += ts.track_err;
          f.sum_loc += ts.loc_err;
          ++f.n_metric;
          if (ts.saturated) ++f.result.saturated_steps;
        }
        ts.command = f.command;
        ts.follower_position = f.plant.position;
        if (opt.record_trace) f.result.samples.push_back(ts);
        if (!f.plant.finite()) throw std::runtime_error("non-finite plant state");
      } catch (const std::exception& ex) {
        abort_follower(f, ex.what());
      }
    }
  }

  std::vector<FollowerResult> out;
  for (auto& f : loops) {
    if (f.n_metric > 0) {
      f.result.tracking_mae = f.sum_track / static_cast<double>(f.n_metric);
      f.result.localization_mae = f.sum_loc / static_cast<double>(f.n_metric);
    }
    out.push_back(std::move(f.result));
  }
  return out;
}

}  // namespace relloc
