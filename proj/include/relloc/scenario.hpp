#pragma once

// Kinematic truth generation, sensor corruption and the Monte Carlo harness.
//
// Truth comes from analytic trajectories in an inertial frame. Each step the
// relative state and input are derived from the two agents' truth, the
// measurements are corrupted, and the filter runs predict-then-update.

#include "relloc/ekf.hpp"
#include "relloc/geometry.hpp"
#include "relloc/parallel.hpp"
#include "relloc/rng.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace relloc {

// Inertial-frame truth for one agent.
struct AgentTruth {
  Vec2 position{Vec2::Zero()};
  Vec2 velocity{Vec2::Zero()};
  Vec2 acceleration{Vec2::Zero()};
  double heading{0.0};
  double yaw_rate{0.0};
  double height{1.0};
};

using TrajectoryFn = std::function<AgentTruth(double)>;

struct NoiseModel {
  double sigma_range{0.0};
  double sigma_heading{0.0};
  double sigma_velocity{0.0};
  double sigma_accel{0.0};
  double sigma_yaw_rate{0.0};

  void validate() const {
    for (double s : {sigma_range, sigma_heading, sigma_velocity, sigma_accel, sigma_yaw_rate}) {
      if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("NoiseModel: sigmas must be finite and >= 0");
    }
  }
};

// d(t) = A_d * exp(-(eps * (t - t0))^2), added to the heading-difference measurement.
struct DisturbanceModel {
  double amplitude{0.0};
  double width{1.0};
  double center{5.0};
  bool enabled{false};

  void validate() const {
    if (!(width > 0.0)) throw std::invalid_argument("DisturbanceModel: width must be > 0");
    require_finite(amplitude, "DisturbanceModel amplitude");
    require_finite(center, "DisturbanceModel center");
  }
};

inline double heading_disturbance(double t, const DisturbanceModel& d) {
  if (!d.enabled) return 0.0;
  const double z = d.width * (t - d.center);
  return d.amplitude * std::exp(-z * z);
}

struct Scenario {
  std::string name{"custom"};
  double duration{20.0};
  double rate{20.0};
  TrajectoryFn agent1;
  TrajectoryFn agent2;
  NoiseModel noise;
  DisturbanceModel disturbance;
  std::uint64_t seed{0};

  void validate() const {
    if (!(duration > 0.0)) throw std::invalid_argument("Scenario: duration must be > 0");
    if (!(rate > 0.0)) throw std::invalid_argument("Scenario: rate must be > 0");
    if (!agent1 || !agent2) throw std::invalid_argument("Scenario: both trajectories are required");
    noise.validate();
    disturbance.validate();
  }

  int steps() const { return static_cast<int>(std::llround(duration * rate)); }
  double dt() const { return 1.0 / rate; }
};

inline RelativeState relative_state(const AgentTruth& host, const AgentTruth& tracked) {
  RelativeState x;
  x.p = rotation_2d(-host.heading) * (tracked.position - host.position);
  x.delta_psi = wrap_angle(tracked.heading - host.heading);
  x.v1 = rotation_2d(-host.heading) * host.velocity;
  x.v2 = rotation_2d(-tracked.heading) * tracked.velocity;
  return x;
}

inline InputVector relative_input(const AgentTruth& host, const AgentTruth& tracked) {
  InputVector u;
  u.a1 = rotation_2d(-host.heading) * host.acceleration;
  u.a2 = rotation_2d(-tracked.heading) * tracked.acceleration;
  u.r1 = host.yaw_rate;
  u.r2 = tracked.yaw_rate;
  return u;
}

// Constant-velocity straight line starting at p0.
inline TrajectoryFn straight_line(Vec2 p0, Vec2 velocity, double heading = 0.0) {
  return [=](double t) {
    AgentTruth a;
    a.position = p0 + velocity * t;
    a.velocity = velocity;
    a.heading = heading;
    return a;
  };
}

// Circle of radius rho about the origin at angular rate omega, phase theta0.
// Heading and yaw rate stay zero.
inline TrajectoryFn circle(double rho, double omega, double theta0) {
  return [=](double t) {
    const double th = omega * t + theta0;
    const double c = std::cos(th), s = std::sin(th);
    AgentTruth a;
    a.position = Vec2(rho * c, rho * s);
    a.velocity = Vec2(-rho * omega * s, rho * omega * c);
    a.acceleration = Vec2(-rho * omega * omega * c, -rho * omega * omega * s);
    return a;
  };
}

inline constexpr double kDefaultCircleRadius = 4.0;
inline constexpr double kDefaultCircleOmega = 2.0 * kPi / 20.0;

// Agent 2 on radius rho2 at omega2 from angle 0; agent 1 on radius rho2 - 1,
// opposite direction, a quarter turn ahead.
inline Scenario circular_trajectory_pair(double rho2 = kDefaultCircleRadius, double omega2 = kDefaultCircleOmega) {
  if (!(rho2 > 1.0)) throw std::invalid_argument("circular_trajectory_pair: rho2 must exceed 1 m");
  require_finite(omega2, "circular_trajectory_pair omega2");
  Scenario s;
  s.name = "circular";
  s.duration = 20.0;
  s.rate = 20.0;
  s.agent2 = circle(rho2, omega2, 0.0);
  s.agent1 = circle(rho2 - 1.0, -omega2, kPi / 2.0);
  return s;
}

inline constexpr double kLimitCaseRate = 50.0;

// Straight-line cases with the tracked agent starting at [1, 1] relative to
// the host. 1: host moves, tracked static. 2: host static, tracked moves.
// 3: both move in parallel, host twice as fast.
inline Scenario limit_case_scenario(int which) {
  Scenario s;
  s.rate = kLimitCaseRate;
  s.duration = 20.0;
  const Vec2 host0(0.0, 0.0), tracked0(1.0, 1.0);
  switch (which) {
    case 1:
      s.agent1 = straight_line(host0, Vec2(1.0, 0.0));
      s.agent2 = straight_line(tracked0, Vec2::Zero());
      break;
    case 2:
      s.agent1 = straight_line(host0, Vec2::Zero());
      s.agent2 = straight_line(tracked0, Vec2(1.0, 0.0));
      break;
    case 3:
      s.agent1 = straight_line(host0, Vec2(2.0, 0.0));
      s.agent2 = straight_line(tracked0, Vec2(1.0, 0.0));
      s.duration = 100.0;
      break;
    default:
      throw std::invalid_argument("limit_case_scenario: case must be 1, 2 or 3");
  }
  s.name = "limit-case-" + std::to_string(which);
  return s;
}

// Truth at t=0 with position and heading difference replaced by the offset
// guess [0.1, 0.1] and 1 rad.
inline RelativeState limit_case_initial_estimate(const Scenario& s) {
  RelativeState x = relative_state(s.agent1(0.0), s.agent2(0.0));
  x.p = Vec2(0.1, 0.1);
  x.delta_psi = 1.0;
  return x;
}

inline double inject_range_noise(double range_true, double sigma, CounterRng& rng) {
  return range_true + sigma * rng.normal();
}

// Noise draws for one step, always taken in the same order so runs that
// differ only in sigma see the same underlying sequence.
struct StepNoise {
  double range{0.0}, heading{0.0};
  Vec2 v1{Vec2::Zero()}, v2{Vec2::Zero()}, a1{Vec2::Zero()}, a2{Vec2::Zero()};
  double r1{0.0}, r2{0.0};

  static StepNoise draw(CounterRng& rng) {
    StepNoise n;
    n.range = rng.normal();
    n.heading = rng.normal();
    n.v1 = Vec2(rng.normal(), rng.normal());
    n.v2 = Vec2(rng.normal(), rng.normal());
    n.a1 = Vec2(rng.normal(), rng.normal());
    n.a2 = Vec2(rng.normal(), rng.normal());
    n.r1 = rng.normal();
    n.r2 = rng.normal();
    return n;
  }
};

enum class InitMode { Truth, Config };

struct RunOptions {
  InitMode init{InitMode::Truth};
  bool record_trace{true};
  std::uint64_t run_index{0};
  // Filter step times in (0, duration]. Empty means every 1/rate.
  std::vector<double> measurement_times;
};

struct RunSample {
  double t{0.0};
  RelativeState truth;
  RelativeState estimate;
  double err_p{0.0};     // |p_hat - p|
  double err_range{0.0}; // | |p_hat| - |p| |
  double err_dpsi{0.0};  // |wrap(dpsi_hat - dpsi)|
  double p_trace{0.0};
};

struct RunResult {
  std::vector<RunSample> samples;  // empty unless record_trace
  double mae_p{0.0};
  double mae_dpsi{0.0};
  std::size_t steps{0};
  std::size_t range_skips{0};
  bool aborted{false};
  std::string diagnostic;
  RunSample final_sample;
};

inline RunSample make_sample(double t, const RelativeState& truth, const EkfInstance& e) {
  RunSample s;
  s.t = t;
  s.truth = truth;
  s.estimate = e.x;
  s.err_p = (e.x.p - truth.p).norm();
  s.err_range = std::abs(e.x.p.norm() - truth.p.norm());
  s.err_dpsi = std::abs(wrap_angle(e.x.delta_psi - truth.delta_psi));
  s.p_trace = e.P.trace();
  return s;
}

inline InputVector noisy_input(const InputVector& u, const NoiseModel& nm, const StepNoise& n) {
  InputVector out = u;
  out.a1 += nm.sigma_accel * n.a1;
  out.a2 += nm.sigma_accel * n.a2;
  out.r1 += nm.sigma_yaw_rate * n.r1;
  out.r2 += nm.sigma_yaw_rate * n.r2;
  return out;
}

inline EkfInstance measure_and_update(const EkfInstance& e, const RelativeState& truth, double t, const Scenario& s,
                                      const StepNoise& n) {
  const double range = truth.p.norm() + s.noise.sigma_range * n.range;
  const Vec2 v1 = truth.v1 + s.noise.sigma_velocity * n.v1;
  const Vec2 v2 = truth.v2 + s.noise.sigma_velocity * n.v2;
  if (e.variant() == Variant::A) {
    const double dpsi =
        wrap_angle(truth.delta_psi + s.noise.sigma_heading * n.heading + heading_disturbance(t, s.disturbance));
    return update(e, MeasurementA{range, dpsi, v1, v2});
  }
  return update(e, MeasurementB{range, v1, v2});
}

// Steps truth and filter; deterministic for a given (seed, run_index).
inline RunResult run_simulation(const Scenario& scenario, const EkfConfig& config, const RunOptions& opt = {}) {
  scenario.validate();
  std::vector<double> times = opt.measurement_times;
  if (times.empty()) {
    const int n = scenario.steps();
    times.reserve(static_cast<std::size_t>(n));
    for (int k = 1; k <= n; ++k) times.push_back(k * scenario.dt());
  }

  EkfConfig cfg = config;
  AgentTruth h = scenario.agent1(0.0), g = scenario.agent2(0.0);
  if (opt.init == InitMode::Truth) cfg.x0 = relative_state(h, g);
  EkfInstance ekf = initialize(cfg);
  CounterRng rng = CounterRng::for_stream(scenario.seed, opt.run_index);

  RunResult result;
  if (opt.record_trace) {
    result.samples.reserve(times.size() + 1);
    result.samples.push_back(make_sample(0.0, relative_state(h, g), ekf));
  }
  double t_prev = 0.0;
  double sum_p = 0.0, sum_dpsi = 0.0;
  StepNoise noise = StepNoise::draw(rng);
  for (double t : times) {
    const double dt = t - t_prev;
    if (!(dt > 0.0)) throw std::invalid_argument("run_simulation: measurement times must be strictly increasing");
    const InputVector u = noisy_input(relative_input(h, g), scenario.noise, noise);
    h = scenario.agent1(t);
    g = scenario.agent2(t);
    const RelativeState truth = relative_state(h, g);
    noise = StepNoise::draw(rng);
    try {
      if (dt > kMaxPredictStep) {
        ekf = predict(ekf, u, dt);  // throws: stale data
      } else {
        // Inputs keep arriving across ranging gaps: sub-step at the input rate.
        const int n_sub = std::max(1, static_cast<int>(std::ceil(dt / scenario.dt() - 1e-6)));
        const double h_sub = dt / n_sub;
        ekf = predict(ekf, u, h_sub);
        for (int k = 1; k < n_sub; ++k) {
          const double ts = t_prev + k * h_sub;
          ekf = predict(ekf, noisy_input(relative_input(scenario.agent1(ts), scenario.agent2(ts)), scenario.noise, noise),
                        h_sub);
        }
      }
      ekf = measure_and_update(ekf, truth, t, scenario, noise);
    } catch (const std::exception& ex) {
      result.aborted = true;
      result.diagnostic = "t=" + std::to_string(t) + ": " + ex.what();
      break;
    }
    if (!ekf.x.finite() || !ekf.P.allFinite()) {
      result.aborted = true;
      std::ostringstream os;
      os << "t=" << t << ": non-finite filter state";
      result.diagnostic = os.str();
      break;
    }
    if (ekf.range_skipped) ++result.range_skips;
    const RunSample sample = make_sample(t, truth, ekf);
    sum_p += sample.err_p;
    sum_dpsi += sample.err_dpsi;
    ++result.steps;
    result.final_sample = sample;
    if (opt.record_trace) result.samples.push_back(sample);
    t_prev = t;
  }
  if (result.steps > 0) {
    result.mae_p = sum_p / static_cast<double>(result.steps);
    result.mae_dpsi = sum_dpsi / static_cast<double>(result.steps);
  }
  return result;
}

inline void write_run_trace(std::ostream& os, const RunResult& r) {
  write_trace_header(os);
  for (const auto& s : r.samples) {
    const Vec7 x = s.estimate.to_vector();
    os << s.t;
    for (int i = 0; i < 7; ++i) os << ',' << x(i);
    os << ',' << s.p_trace << '\n';
  }
}

// Builds the filter configuration for one cell of a sweep.
using EkfFactory = std::function<EkfConfig(Variant, const Scenario&)>;

// Matched range variance, noise-free channels at the stand-in variance.
inline EkfConfig default_ekf_factory(Variant v, const Scenario& s) {
  EkfConfig c = EkfConfig::defaults(v, RelativeState{}, s.noise.sigma_range);
  c.dt_nominal = s.dt();
  c.Rm = EkfConfig::measurement_covariance(v, s.noise.sigma_range, s.noise.sigma_heading, s.noise.sigma_velocity);
  return c;
}

struct AmaeCell {
  Variant variant{Variant::A};
  double sigma_range{0.0};
  double amae_m{0.0};
  int n_runs{0};
  int n_failed{0};
};

struct MonteCarloOptions {
  int n_runs{1000};
  int jobs{1};
};

// Average of per-run position MAE. Run i uses stream i in every cell, so
// cells differ only in sigma and variant. Aborted runs are excluded from the
// average and counted.
inline AmaeCell monte_carlo_cell(const Scenario& scenario, Variant v, const EkfFactory& factory,
                                 const MonteCarloOptions& mc) {
  if (mc.n_runs < 1) throw std::invalid_argument("monte_carlo_amae: n_runs must be >= 1");
  const EkfConfig cfg = factory(v, scenario);
  std::vector<double> mae(static_cast<std::size_t>(mc.n_runs), 0.0);
  std::vector<char> failed(static_cast<std::size_t>(mc.n_runs), 0);
  parallel_for(mae.size(), mc.jobs, [&](std::size_t i) {
    RunOptions opt;
    opt.record_trace = false;
    opt.run_index = i;
    const RunResult r = run_simulation(scenario, cfg, opt);
    mae[i] = r.mae_p;
    failed[i] = r.aborted ? 1 : 0;
  });
  AmaeCell cell;
  cell.variant = v;
  cell.sigma_range = scenario.noise.sigma_range;
  cell.n_runs = mc.n_runs;
  double sum = 0.0;
  int ok = 0;
  for (std::size_t i = 0; i < mae.size(); ++i) {
    if (failed[i]) {
      ++cell.n_failed;
    } else {
      sum += mae[i];
      ++ok;
    }
  }
  cell.amae_m = ok > 0 ? sum / ok : std::nan("");
  return cell;
}

inline std::vector<AmaeCell> monte_carlo_amae(const Scenario& base, const std::vector<double>& sigmas,
                                              const std::vector<Variant>& variants, const MonteCarloOptions& mc,
                                              const EkfFactory& factory = default_ekf_factory) {
  std::vector<AmaeCell> out;
  for (Variant v : variants) {
    for (double sigma : sigmas) {
      Scenario s = base;
      s.noise.sigma_range = sigma;
      out.push_back(monte_carlo_cell(s, v, factory, mc));
    }
  }
  return out;
}

inline void write_amae_csv(std::ostream& os, const std::vector<AmaeCell>& cells) {
  os << "variant,sigma_range,amae_m,n_runs,n_failed\n";
  for (const auto& c : cells) {
    os << to_string(c.variant) << ',' << c.sigma_range << ',' << c.amae_m << ',' << c.n_runs << ',' << c.n_failed
       << '\n';
  }
}

// Positive means B is worse than A.
inline double compare_percentage(double amae_b, double amae_a) {
  if (!(amae_a > 0.0)) throw std::invalid_argument("compare_percentage: amae_a must be > 0");
  return 100.0 * (amae_b - amae_a) / amae_a;
}

}  // namespace relloc
