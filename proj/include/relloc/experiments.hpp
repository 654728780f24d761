#pragma once

// Experiment definitions shared by the command-line runner and the
// acceptance suite. An ExperimentConfig is fully resolved (no implicit
// defaults left) so it can be echoed and re-run verbatim.

#include "relloc/config.hpp"
#include "relloc/ekf.hpp"
#include "relloc/leader_follower.hpp"
#include "relloc/observability.hpp"
#include "relloc/ranging.hpp"
#include "relloc/scenario.hpp"

#include <algorithm>
#include <filesystem>
#include <functional>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace relloc {

enum class ExperimentKind { LimitCase, Table1Sweep, DisturbanceSweep, ObservabilityScan, UnobservableSearch, LeaderFollower };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::LimitCase: return "limit-case";
    case ExperimentKind::Table1Sweep: return "table1-sweep";
    case ExperimentKind::DisturbanceSweep: return "disturbance-sweep";
    case ExperimentKind::ObservabilityScan: return "observability-scan";
    case ExperimentKind::UnobservableSearch: return "unobservable-search";
    case ExperimentKind::LeaderFollower: return "leader-follower";
  }
  return "?";
}

inline ExperimentKind parse_experiment_kind(const std::string& s) {
  for (auto k : {ExperimentKind::LimitCase, ExperimentKind::Table1Sweep, ExperimentKind::DisturbanceSweep,
                 ExperimentKind::ObservabilityScan, ExperimentKind::UnobservableSearch, ExperimentKind::LeaderFollower}) {
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown experiment kind '" + s + "'");
}

// Filter tuning in sensor terms; make_ekf_config turns it into matrices.
struct EkfTuning {
  std::string integrator{"rk4"};
  double q_position{1e-4};
  double q_heading{1e-4};
  double q_velocity{1e-4};
  double r_range_floor{kNoiselessChannelSigma};  // std used for the range channel at least
  double r_range_scale{1.0};                     // range std = max(floor, scale * sigma_range)
  double r_heading{kNoiselessChannelSigma};
  double r_velocity{kNoiselessChannelSigma};
  double p0_position{1.0};
  double p0_heading{1.0};
  double p0_velocity{0.01};
};

// Tuning used for the range-noise sweeps on the circular pair. Euler
// prediction at the 20 Hz filter rate; the range channel is weighted with a
// partially noise-matched variance.
inline EkfTuning circular_sweep_tuning() {
  EkfTuning t;
  t.integrator = "euler";
  t.q_position = 3.16e-3;
  t.q_heading = 3.16e-4;
  t.q_velocity = 1.78e-6;
  t.r_range_floor = 0.3;
  t.r_range_scale = 0.079;
  t.r_heading = 0.0562;
  t.r_velocity = 0.0316;
  t.p0_position = 1e-6;
  t.p0_heading = 1e-6;
  t.p0_velocity = 1e-6;
  return t;
}

inline Integrator parse_integrator(const std::string& s) {
  if (s == "rk4") return Integrator::Rk4;
  if (s == "euler") return Integrator::Euler;
  throw std::invalid_argument("unknown integrator '" + s + "' (expected rk4 or euler)");
}

inline EkfConfig make_ekf_config(Variant v, const EkfTuning& t, const Scenario& s) {
  EkfConfig c;
  c.variant = v;
  c.dt_nominal = s.dt();
  c.integrator = parse_integrator(t.integrator);
  Vec7 q;
  q << t.q_position, t.q_position, t.q_heading, t.q_velocity, t.q_velocity, t.q_velocity, t.q_velocity;
  c.Q = q.asDiagonal();
  Vec7 p0;
  p0 << t.p0_position, t.p0_position, t.p0_heading, t.p0_velocity, t.p0_velocity, t.p0_velocity, t.p0_velocity;
  c.P0 = p0.asDiagonal();
  const double range_std = std::max(t.r_range_floor, t.r_range_scale * s.noise.sigma_range);
  const double heading_std = std::max(t.r_heading, s.noise.sigma_heading);
  const double velocity_std = std::max(t.r_velocity, s.noise.sigma_velocity);
  const int m = measurement_size(v);
  Eigen::VectorXd d(m);
  d(0) = range_std * range_std;
  int i = 1;
  if (v == Variant::A) d(i++) = heading_std * heading_std;
  for (; i < m; ++i) d(i) = velocity_std * velocity_std;
  c.Rm = d.asDiagonal();
  return c;
}

inline EkfFactory tuning_factory(const EkfTuning& t) {
  return [t](Variant v, const Scenario& s) { return make_ekf_config(v, t, s); };
}

struct ExperimentConfig {
  ExperimentKind kind{ExperimentKind::LimitCase};
  std::uint64_t seed{1};
  int runs{1};
  int jobs{1};
  std::string variant{"both"};  // A, B or both

  // Circular pair / limit cases.
  int limit_case{1};
  double duration{20.0};
  double rate{50.0};
  double rho2{kDefaultCircleRadius};
  double omega2{kDefaultCircleOmega};
  std::vector<double> sigmas{0.0};
  double sigma_heading{0.0};
  double sigma_velocity{0.0};

  // Heading disturbance sweep.
  std::vector<double> amplitudes{0.0, 0.25, 0.5, 1.0, 1.5};
  double disturbance_width{1.0};
  double disturbance_center{5.0};

  EkfTuning ekf;

  // Observability scan / search. The state's p is swept; the rest is held.
  RelativeState obs_state{Vec2(2.0, 1.0), 0.4, Vec2::Zero(), Vec2(1.0, 0.5)};
  InputVector obs_input{Vec2(0.3, 0.3), Vec2(0.2, -0.3), 0.0, 0.0};
  double px_min{-5.0}, px_max{5.0}, py_min{-5.0}, py_max{5.0};
  int resolution{101};
  double threshold{kDefaultObservabilityThreshold};
  bool normalized{false};
  int restarts{20};

  // Leader-follower.
  std::vector<double> tau_delays{4.0};
  double kp{1.0}, kd{2.0};
  double tau_plant{0.5};
  double v_max{1.5};
  double lf_duration{200.0};
  double lf_warmup{20.0};
  double control_rate{50.0};
  bool perfect_state{false};
  double velocity_white{0.05};
  double velocity_bias{0.02};
  double velocity_bias_time{20.0};
  double accel_sigma{0.05};
  LinkModel link{0.15, 0.05, 25.0, 0.47, 0.02};

  std::vector<Variant> variants() const {
    if (variant == "both") return {Variant::A, Variant::B};
    return {parse_variant(variant)};
  }
};

// Kind-specific defaults before any user keys are applied.
inline ExperimentConfig default_experiment(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  switch (kind) {
    case ExperimentKind::LimitCase:
      c.rate = kLimitCaseRate;
      c.duration = 20.0;
      break;
    case ExperimentKind::Table1Sweep:
      c.runs = 1000;
      c.rate = 20.0;
      c.sigmas = {0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
      c.ekf = circular_sweep_tuning();
      break;
    case ExperimentKind::DisturbanceSweep:
      c.runs = 200;
      c.rate = 20.0;
      c.sigmas = {0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
      c.ekf = circular_sweep_tuning();
      break;
    case ExperimentKind::ObservabilityScan:
    case ExperimentKind::UnobservableSearch:
      break;
    case ExperimentKind::LeaderFollower:
      c.variant = "B";
      c.ekf.r_range_floor = c.link.range_sigma;
      c.ekf.p0_position = 1.0;
      break;
  }
  return c;
}

namespace detail {

inline void read_state(const ConfigFile& f, const std::string& sec, RelativeState& x, InputVector& u) {
  f.get(sec + ".px", x.p.x());
  f.get(sec + ".py", x.p.y());
  f.get(sec + ".dpsi", x.delta_psi);
  f.get(sec + ".v1x", x.v1.x());
  f.get(sec + ".v1y", x.v1.y());
  f.get(sec + ".v2x", x.v2.x());
  f.get(sec + ".v2y", x.v2.y());
  f.get(sec + ".a1x", u.a1.x());
  f.get(sec + ".a1y", u.a1.y());
  f.get(sec + ".a2x", u.a2.x());
  f.get(sec + ".a2y", u.a2.y());
  f.get(sec + ".r1", u.r1);
  f.get(sec + ".r2", u.r2);
}

}  // namespace detail

// line_of maps a field name to its source line (0 when unknown).
inline void validate_experiment(const ExperimentConfig& c,
                                const std::function<int(const std::string&)>& line_of = {}) {
  auto fail = [&](const std::string& field, const std::string& why) {
    throw ConfigError(line_of ? line_of(field) : 0, field, why);
  };
  if (c.runs < 1) fail("experiment.runs", "must be >= 1");
  if (c.jobs < 1) fail("experiment.jobs", "must be >= 1");
  if (c.variant != "A" && c.variant != "B" && c.variant != "both") fail("experiment.variant", "must be A, B or both");
  if (c.limit_case < 1 || c.limit_case > 3) fail("scenario.case", "must be 1, 2 or 3");
  if (!(c.duration > 0.0)) fail("scenario.duration", "must be > 0");
  if (!(c.rate > 0.0)) fail("scenario.rate", "must be > 0");
  if (!(c.rho2 > 1.0)) fail("scenario.rho2", "must exceed 1");
  if (c.sigmas.empty()) fail("scenario.sigmas", "must list at least one value");
  for (double s : c.sigmas) {
    if (!(s >= 0.0)) fail("scenario.sigmas", "values must be >= 0");
  }
  if (!(c.sigma_heading >= 0.0)) fail("scenario.sigma_heading", "must be >= 0");
  if (!(c.sigma_velocity >= 0.0)) fail("scenario.sigma_velocity", "must be >= 0");
  if (!(c.disturbance_width > 0.0)) fail("disturbance.width", "must be > 0");
  try {
    parse_integrator(c.ekf.integrator);
  } catch (const std::exception& e) {
    fail("ekf.integrator", e.what());
  }
  for (auto [name, v] : {std::pair{"ekf.q_position", c.ekf.q_position}, {"ekf.q_heading", c.ekf.q_heading},
                         {"ekf.q_velocity", c.ekf.q_velocity}, {"ekf.p0_position", c.ekf.p0_position},
                         {"ekf.p0_heading", c.ekf.p0_heading}, {"ekf.p0_velocity", c.ekf.p0_velocity},
                         {"ekf.r_range_scale", c.ekf.r_range_scale}}) {
    if (!(v >= 0.0)) fail(name, "must be >= 0");
  }
  for (auto [name, v] : {std::pair{"ekf.r_range_floor", c.ekf.r_range_floor}, {"ekf.r_heading", c.ekf.r_heading},
                         {"ekf.r_velocity", c.ekf.r_velocity}}) {
    if (!(v > 0.0)) fail(name, "must be > 0");
  }
  if (c.resolution < 2) fail("observability.resolution", "must be >= 2");
  if (!(c.px_max > c.px_min) || !(c.py_max > c.py_min)) fail("observability.px_min", "ranges must be non-empty");
  if (c.restarts < 1) fail("observability.restarts", "must be >= 1");
  if (c.tau_delays.empty()) fail("controller.tau_delays", "must list at least one follower");
  for (double t : c.tau_delays) {
    if (!(t > 0.0)) fail("controller.tau_delays", "values must be > 0");
    if (t > c.lf_warmup) fail("controller.tau_delays", "must not exceed leader_follower.warmup");
  }
  if (!(c.kp > 0.0)) fail("controller.kp", "must be > 0");
  if (!(c.kd > 0.0)) fail("controller.kd", "must be > 0");
  if (!(c.tau_plant > 0.0)) fail("controller.tau_plant", "must be > 0");
  if (!(c.v_max > 0.0)) fail("controller.v_max", "must be > 0");
  if (!(c.lf_duration > 0.0)) fail("leader_follower.duration", "must be > 0");
  if (!(c.control_rate > 0.0)) fail("leader_follower.control_rate", "must be > 0");
  try {
    c.link.validate();
  } catch (const std::exception& e) {
    fail("link", e.what());
  }
  try {
    VelocitySensorModel{c.velocity_white, c.velocity_bias, c.velocity_bias_time}.validate();
  } catch (const std::exception& e) {
    fail("leader_follower.velocity", e.what());
  }
}

// Parses text into a resolved configuration. kind_override (from the command
// line) wins over experiment.kind.
inline ExperimentConfig parse_experiment_config(std::string_view text, const std::string& kind_override = "") {
  const ConfigFile f = ConfigFile::parse(text);
  std::string kind_name = kind_override;
  if (kind_name.empty()) {
    f.get("experiment.kind", kind_name);
    if (kind_name.empty()) throw ConfigError(0, "experiment.kind", "missing (set it in the file or pass --experiment)");
  } else {
    std::string ignored;
    f.get("experiment.kind", ignored);
  }
  ExperimentKind kind;
  try {
    kind = parse_experiment_kind(kind_name);
  } catch (const std::exception& e) {
    throw ConfigError(f.line_of("experiment.kind"), "experiment.kind", e.what());
  }
  ExperimentConfig c = default_experiment(kind);
  if (kind == ExperimentKind::LimitCase) {
    f.get("scenario.case", c.limit_case);
    if (c.limit_case == 3) c.duration = 100.0;
  }

  f.get("experiment.seed", c.seed);
  f.get("experiment.runs", c.runs);
  f.get("experiment.jobs", c.jobs);
  f.get("experiment.variant", c.variant);

  f.get("scenario.case", c.limit_case);
  f.get("scenario.duration", c.duration);
  f.get("scenario.rate", c.rate);
  f.get("scenario.rho2", c.rho2);
  f.get("scenario.omega2", c.omega2);
  f.get("scenario.sigmas", c.sigmas);
  f.get("scenario.sigma_heading", c.sigma_heading);
  f.get("scenario.sigma_velocity", c.sigma_velocity);

  f.get("disturbance.amplitudes", c.amplitudes);
  f.get("disturbance.width", c.disturbance_width);
  f.get("disturbance.center", c.disturbance_center);

  f.get("ekf.integrator", c.ekf.integrator);
  f.get("ekf.q_position", c.ekf.q_position);
  f.get("ekf.q_heading", c.ekf.q_heading);
  f.get("ekf.q_velocity", c.ekf.q_velocity);
  f.get("ekf.r_range_floor", c.ekf.r_range_floor);
  f.get("ekf.r_range_scale", c.ekf.r_range_scale);
  f.get("ekf.r_heading", c.ekf.r_heading);
  f.get("ekf.r_velocity", c.ekf.r_velocity);
  f.get("ekf.p0_position", c.ekf.p0_position);
  f.get("ekf.p0_heading", c.ekf.p0_heading);
  f.get("ekf.p0_velocity", c.ekf.p0_velocity);

  detail::read_state(f, "observability", c.obs_state, c.obs_input);
  f.get("observability.px_min", c.px_min);
  f.get("observability.px_max", c.px_max);
  f.get("observability.py_min", c.py_min);
  f.get("observability.py_max", c.py_max);
  f.get("observability.resolution", c.resolution);
  f.get("observability.threshold", c.threshold);
  f.get("observability.normalized", c.normalized);
  f.get("observability.restarts", c.restarts);

  f.get("controller.tau_delays", c.tau_delays);
  f.get("controller.kp", c.kp);
  f.get("controller.kd", c.kd);
  f.get("controller.tau_plant", c.tau_plant);
  f.get("controller.v_max", c.v_max);

  f.get("link.range_sigma", c.link.range_sigma);
  f.get("link.drop_probability", c.link.drop_probability);
  f.get("link.nominal_rate", c.link.nominal_rate);
  f.get("link.max_gap_clamp", c.link.max_gap_clamp);
  f.get("link.burst_probability", c.link.burst_probability);

  f.get("leader_follower.duration", c.lf_duration);
  f.get("leader_follower.warmup", c.lf_warmup);
  f.get("leader_follower.control_rate", c.control_rate);
  f.get("leader_follower.perfect_state", c.perfect_state);
  f.get("leader_follower.velocity_white", c.velocity_white);
  f.get("leader_follower.velocity_bias", c.velocity_bias);
  f.get("leader_follower.velocity_bias_time", c.velocity_bias_time);
  f.get("leader_follower.accel_sigma", c.accel_sigma);

  f.reject_unused();
  validate_experiment(c, [&f](const std::string& key) { return f.line_of(key); });
  return c;
}

// Effective configuration in the same format parse_experiment_config reads.
inline std::string experiment_to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  auto d = [](double v) { return format_double(v); };
  os << "[experiment]\n"
     << "kind = " << to_string(c.kind) << "\n"
     << "seed = " << c.seed << "\n"
     << "runs = " << c.runs << "\n"
     << "jobs = " << c.jobs << "\n"
     << "variant = " << c.variant << "\n\n"
     << "[scenario]\n"
     << "case = " << c.limit_case << "\n"
     << "duration = " << d(c.duration) << "\n"
     << "rate = " << d(c.rate) << "\n"
     << "rho2 = " << d(c.rho2) << "\n"
     << "omega2 = " << d(c.omega2) << "\n"
     << "sigmas = " << format_list(c.sigmas) << "\n"
     << "sigma_heading = " << d(c.sigma_heading) << "\n"
     << "sigma_velocity = " << d(c.sigma_velocity) << "\n\n"
     << "[disturbance]\n"
     << "amplitudes = " << format_list(c.amplitudes) << "\n"
     << "width = " << d(c.disturbance_width) << "\n"
     << "center = " << d(c.disturbance_center) << "\n\n"
     << "[ekf]\n"
     << "integrator = " << c.ekf.integrator << "\n"
     << "q_position = " << d(c.ekf.q_position) << "\n"
     << "q_heading = " << d(c.ekf.q_heading) << "\n"
     << "q_velocity = " << d(c.ekf.q_velocity) << "\n"
     << "r_range_floor = " << d(c.ekf.r_range_floor) << "\n"
     << "r_range_scale = " << d(c.ekf.r_range_scale) << "\n"
     << "r_heading = " << d(c.ekf.r_heading) << "\n"
     << "r_velocity = " << d(c.ekf.r_velocity) << "\n"
     << "p0_position = " << d(c.ekf.p0_position) << "\n"
     << "p0_heading = " << d(c.ekf.p0_heading) << "\n"
     << "p0_velocity = " << d(c.ekf.p0_velocity) << "\n\n"
     << "[observability]\n"
     << "px = " << d(c.obs_state.p.x()) << "\n"
     << "py = " << d(c.obs_state.p.y()) << "\n"
     << "dpsi = " << d(c.obs_state.delta_psi) << "\n"
     << "v1x = " << d(c.obs_state.v1.x()) << "\n"
     << "v1y = " << d(c.obs_state.v1.y()) << "\n"
     << "v2x = " << d(c.obs_state.v2.x()) << "\n"
     << "v2y = " << d(c.obs_state.v2.y()) << "\n"
     << "a1x = " << d(c.obs_input.a1.x()) << "\n"
     << "a1y = " << d(c.obs_input.a1.y()) << "\n"
     << "a2x = " << d(c.obs_input.a2.x()) << "\n"
     << "a2y = " << d(c.obs_input.a2.y()) << "\n"
     << "r1 = " << d(c.obs_input.r1) << "\n"
     << "r2 = " << d(c.obs_input.r2) << "\n"
     << "px_min = " << d(c.px_min) << "\n"
     << "px_max = " << d(c.px_max) << "\n"
     << "py_min = " << d(c.py_min) << "\n"
     << "py_max = " << d(c.py_max) << "\n"
     << "resolution = " << c.resolution << "\n"
     << "threshold = " << d(c.threshold) << "\n"
     << "normalized = " << (c.normalized ? "true" : "false") << "\n"
     << "restarts = " << c.restarts << "\n\n"
     << "[controller]\n"
     << "tau_delays = " << format_list(c.tau_delays) << "\n"
     << "kp = " << d(c.kp) << "\n"
     << "kd = " << d(c.kd) << "\n"
     << "tau_plant = " << d(c.tau_plant) << "\n"
     << "v_max = " << d(c.v_max) << "\n\n"
     << "[link]\n"
     << "range_sigma = " << d(c.link.range_sigma) << "\n"
     << "drop_probability = " << d(c.link.drop_probability) << "\n"
     << "nominal_rate = " << d(c.link.nominal_rate) << "\n"
     << "max_gap_clamp = " << d(c.link.max_gap_clamp) << "\n"
     << "burst_probability = " << d(c.link.burst_probability) << "\n\n"
     << "[leader_follower]\n"
     << "duration = " << d(c.lf_duration) << "\n"
     << "warmup = " << d(c.lf_warmup) << "\n"
     << "control_rate = " << d(c.control_rate) << "\n"
     << "perfect_state = " << (c.perfect_state ? "true" : "false") << "\n"
     << "velocity_white = " << d(c.velocity_white) << "\n"
     << "velocity_bias = " << d(c.velocity_bias) << "\n"
     << "velocity_bias_time = " << d(c.velocity_bias_time) << "\n"
     << "accel_sigma = " << d(c.accel_sigma) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Runners. Each writes summary.csv (and traces) into out_dir and returns the
// number of aborted runs.

struct ExperimentOutcome {
  int failures{0};
  std::vector<std::string> notes;
};

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os.precision(10);
  return os;
}

inline Scenario circular_from(const ExperimentConfig& c) {
  Scenario s = circular_trajectory_pair(c.rho2, c.omega2);
  s.duration = c.duration;
  s.rate = c.rate;
  s.seed = c.seed;
  s.noise.sigma_heading = c.sigma_heading;
  s.noise.sigma_velocity = c.sigma_velocity;
  return s;
}

}  // namespace detail

inline constexpr double kConvergedPosition = 0.05;  // m
inline constexpr double kConvergedHeading = 0.05;   // rad

struct LimitCaseSummary {
  int which{1};
  Variant variant{Variant::A};
  RunResult run;
  bool p_converged{false};
  bool dpsi_converged{false};
  double err_p_t2{0.0};
  double err_p_t20{0.0};
};

inline LimitCaseSummary run_limit_case(int which, Variant v, const EkfTuning& tuning, double rate, double duration,
                                       std::uint64_t seed) {
  Scenario s = limit_case_scenario(which);
  s.rate = rate;
  s.duration = duration;
  s.seed = seed;
  EkfConfig cfg = make_ekf_config(v, tuning, s);
  cfg.x0 = limit_case_initial_estimate(s);
  RunOptions opt;
  opt.init = InitMode::Config;
  LimitCaseSummary out;
  out.which = which;
  out.variant = v;
  out.run = run_simulation(s, cfg, opt);
  const RunSample& last = out.run.final_sample;
  out.p_converged = !out.run.aborted && last.err_p < kConvergedPosition;
  out.dpsi_converged = !out.run.aborted && last.err_dpsi < kConvergedHeading;
  auto err_at = [&](double t) {
    for (const auto& smp : out.run.samples) {
      if (smp.t >= t - 1e-9) return smp.err_p;
    }
    return last.err_p;
  };
  out.err_p_t2 = err_at(2.0);
  out.err_p_t20 = err_at(20.0);
  return out;
}

inline ExperimentOutcome run_limit_case_experiment(const ExperimentConfig& c, const std::filesystem::path& out) {
  ExperimentOutcome res;
  auto summary = detail::open_out(out / "summary.csv");
  summary << "case,variant,final_p_err_m,final_dpsi_err_rad,p_err_t2_m,p_err_t20_m,p_converged,dpsi_converged,aborted\n";
  for (Variant v : c.variants()) {
    const LimitCaseSummary r = run_limit_case(c.limit_case, v, c.ekf, c.rate, c.duration, c.seed);
    summary << c.limit_case << ',' << to_string(v) << ',' << r.run.final_sample.err_p << ','
            << r.run.final_sample.err_dpsi << ',' << r.err_p_t2 << ',' << r.err_p_t20 << ','
            << (r.p_converged ? "true" : "false") << ',' << (r.dpsi_converged ? "true" : "false") << ','
            << (r.run.aborted ? "true" : "false") << '\n';
    auto trace = detail::open_out(out / "traces" / (std::string("case") + std::to_string(c.limit_case) + "_" + to_string(v) + ".csv"));
    trace << "t,err_p_m,err_dpsi_rad,px_hat,py_hat,dpsi_hat,px,py,dpsi,p_trace\n";
    for (const auto& s : r.run.samples) {
      trace << s.t << ',' << s.err_p << ',' << s.err_dpsi << ',' << s.estimate.p.x() << ',' << s.estimate.p.y() << ','
            << s.estimate.delta_psi << ',' << s.truth.p.x() << ',' << s.truth.p.y() << ',' << s.truth.delta_psi << ','
            << s.p_trace << '\n';
    }
    if (r.run.aborted) {
      ++res.failures;
      res.notes.push_back(std::string("variant ") + to_string(v) + ": " + r.run.diagnostic);
    }
  }
  return res;
}

inline std::vector<AmaeCell> run_table1(const ExperimentConfig& c) {
  MonteCarloOptions mc{c.runs, c.jobs};
  return monte_carlo_amae(detail::circular_from(c), c.sigmas, c.variants(), mc, tuning_factory(c.ekf));
}

inline ExperimentOutcome run_table1_experiment(const ExperimentConfig& c, const std::filesystem::path& out) {
  ExperimentOutcome res;
  const auto cells = run_table1(c);
  auto summary = detail::open_out(out / "summary.csv");
  write_amae_csv(summary, cells);
  for (const auto& cell : cells) res.failures += cell.n_failed;
  // Representative trace: run 0 of every cell.
  for (Variant v : c.variants()) {
    for (double sigma : c.sigmas) {
      Scenario s = detail::circular_from(c);
      s.noise.sigma_range = sigma;
      const RunResult r = run_simulation(s, make_ekf_config(v, c.ekf, s));
      auto trace = detail::open_out(out / "traces" / (std::string(to_string(v)) + "_sigma" + format_double(sigma) + ".csv"));
      write_run_trace(trace, r);
    }
  }
  return res;
}

struct DisturbanceCell {
  double amplitude{0.0};
  double sigma_range{0.0};
  AmaeCell a;
  AmaeCell b;
  double percent{0.0};  // positive: B worse than A
};

inline std::vector<DisturbanceCell> run_disturbance_sweep(const ExperimentConfig& c) {
  MonteCarloOptions mc{c.runs, c.jobs};
  const EkfFactory factory = tuning_factory(c.ekf);
  std::vector<DisturbanceCell> out;
  for (double amp : c.amplitudes) {
    for (double sigma : c.sigmas) {
      Scenario s = detail::circular_from(c);
      s.noise.sigma_range = sigma;
      DisturbanceCell cell;
      cell.amplitude = amp;
      cell.sigma_range = sigma;
      cell.b = monte_carlo_cell(s, Variant::B, factory, mc);
      s.disturbance = DisturbanceModel{amp, c.disturbance_width, c.disturbance_center, amp != 0.0};
      cell.a = monte_carlo_cell(s, Variant::A, factory, mc);
      cell.percent = compare_percentage(cell.b.amae_m, cell.a.amae_m);
      out.push_back(cell);
    }
  }
  return out;
}

inline ExperimentOutcome run_disturbance_experiment(const ExperimentConfig& c, const std::filesystem::path& out) {
  ExperimentOutcome res;
  const auto cells = run_disturbance_sweep(c);
  auto summary = detail::open_out(out / "summary.csv");
  summary << "amplitude_rad,sigma_range,amae_a_m,amae_b_m,percent_b_vs_a,n_runs,n_failed\n";
  for (const auto& cell : cells) {
    const int failed = cell.a.n_failed + cell.b.n_failed;
    summary << cell.amplitude << ',' << cell.sigma_range << ',' << cell.a.amae_m << ',' << cell.b.amae_m << ','
            << cell.percent << ',' << c.runs << ',' << failed << '\n';
    res.failures += failed;
  }
  return res;
}

inline ExperimentOutcome run_observability_scan_experiment(const ExperimentConfig& c, const std::filesystem::path& out) {
  const GridScan scan =
      scan_observability_grid(c.obs_state, c.obs_input, {c.px_min, c.px_max}, {c.py_min, c.py_max}, c.resolution);
  auto grid = detail::open_out(out / "grid.csv");
  write_grid_csv(grid, scan);
  const IntuitiveConditions ic = check_intuitive_conditions_b(c.obs_state, c.obs_input, 0.1);
  auto summary = detail::open_out(out / "summary.csv");
  summary << "cells,unobservable_cells,unobservable_fraction,threshold,cond_position,cond_moving,cond_not_parallel\n";
  const int below = scan.count_below(c.threshold);
  summary << scan.values.size() << ',' << below << ',' << scan.fraction_below(c.threshold) << ',' << c.threshold << ','
          << ic.nonzero_position << ',' << ic.both_moving << ',' << ic.not_parallel << '\n';
  return {};
}

inline ExperimentOutcome run_unobservable_search_experiment(const ExperimentConfig& c, const std::filesystem::path& out) {
  ExperimentOutcome res;
  SearchOptions opt;
  opt.restarts = c.restarts;
  auto summary = detail::open_out(out / "summary.csv");
  summary << "found,measure,px,py,dpsi,v1x,v1y,v2x,v2y,a1x,a1y,a2x,a2y,r1,r2,restart\n";
  try {
    const UnobservableConfiguration u = find_unobservable_configuration(c.seed, SearchBounds{}, opt);
    summary << "true," << u.measure << ',' << u.x.p.x() << ',' << u.x.p.y() << ',' << u.x.delta_psi << ','
            << u.x.v1.x() << ',' << u.x.v1.y() << ',' << u.x.v2.x() << ',' << u.x.v2.y() << ',' << u.u.a1.x() << ','
            << u.u.a1.y() << ',' << u.u.a2.x() << ',' << u.u.a2.y() << ',' << u.u.r1 << ',' << u.u.r2 << ','
            << u.restart << '\n';
    const GridScan scan = scan_observability_grid(u.x, u.u, {u.x.p.x() - 5.0, u.x.p.x() + 5.0},
                                                  {u.x.p.y() - 5.0, u.x.p.y() + 5.0}, c.resolution);
    auto grid = detail::open_out(out / "grid.csv");
    write_grid_csv(grid, scan);
  } catch (const std::runtime_error& e) {
    summary << "false,,,,,,,,,,,,,,,\n";
    res.failures = 1;
    res.notes.push_back(e.what());
  }
  return res;
}

inline std::vector<FollowerSetup> followers_from(const ExperimentConfig& c) {
  std::vector<FollowerSetup> out;
  const Vec2 starts[] = {Vec2(-1.5, -1.0), Vec2(-2.0, 1.5), Vec2(1.5, -2.0), Vec2(2.0, 2.0)};
  Scenario timing;
  timing.rate = c.link.nominal_rate;
  timing.noise.sigma_range = c.link.range_sigma;
  for (std::size_t i = 0; i < c.tau_delays.size(); ++i) {
    FollowerSetup f;
    f.controller.tau_delay = c.tau_delays[i];
    f.controller.kp = c.kp;
    f.controller.kd = c.kd;
    f.controller.tau_plant = Vec2(c.tau_plant, c.tau_plant);
    f.controller.v_max = c.v_max;
    f.ekf = make_ekf_config(parse_variant(c.variant == "both" ? "B" : c.variant), c.ekf, timing);
    f.start = starts[i % 4] * (1.0 + static_cast<double>(i / 4));
    out.push_back(f);
  }
  return out;
}

inline LeaderFollowerOptions lf_options_from(const ExperimentConfig& c) {
  LeaderFollowerOptions o;
  o.duration = c.lf_duration;
  o.warmup = c.lf_warmup;
  o.control_rate = c.control_rate;
  o.perfect_state = c.perfect_state;
  o.velocity_sensor = {c.velocity_white, c.velocity_bias, c.velocity_bias_time};
  o.accel_sigma = c.accel_sigma;
  o.seed = c.seed;
  return o;
}

inline ExperimentOutcome run_leader_follower_experiment(const ExperimentConfig& c, const std::filesystem::path& out) {
  ExperimentOutcome res;
  auto log = detail::open_out(out / "messages.csv");
  write_message_log_header(log);
  LeaderFollowerOptions opt = lf_options_from(c);
  opt.on_event = [&log](const RangingEvent& ev) { write_message_log_row(log, ev); };
  const auto results = run_leader_follower(figure_eight_with_turns(), followers_from(c), c.link, opt);
  auto summary = detail::open_out(out / "summary.csv");
  summary << "follower,tau_delay_s,tracking_mae_m,localization_mae_m,saturated_steps,range_updates,max_update_gap_s,aborted\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    summary << i + 1 << ',' << c.tau_delays[i] << ',' << r.tracking_mae << ',' << r.localization_mae << ','
            << r.saturated_steps << ',' << r.range_updates << ',' << r.max_update_gap << ','
            << (r.aborted ? "true" : "false") << '\n';
    auto trace = detail::open_out(out / "traces" / ("follower" + std::to_string(i + 1) + ".csv"));
    write_tracking_header(trace);
    for (const auto& s : r.samples) write_tracking_row(trace, s);
    if (r.aborted) {
      ++res.failures;
      res.notes.push_back("follower " + std::to_string(i + 1) + ": " + r.diagnostic);
    }
  }
  return res;
}

inline ExperimentOutcome run_experiment(const ExperimentConfig& c, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  {
    std::ofstream echo(out / "effective_config.ini");
    echo << experiment_to_ini(c);
  }
  switch (c.kind) {
    case ExperimentKind::LimitCase: return run_limit_case_experiment(c, out);
    case ExperimentKind::Table1Sweep: return run_table1_experiment(c, out);
    case ExperimentKind::DisturbanceSweep: return run_disturbance_experiment(c, out);
    case ExperimentKind::ObservabilityScan: return run_observability_scan_experiment(c, out);
    case ExperimentKind::UnobservableSearch: return run_unobservable_search_experiment(c, out);
    case ExperimentKind::LeaderFollower: return run_leader_follower_experiment(c, out);
  }
  return {};
}

}  // namespace relloc
