// Acceptance harness: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Experiments are loaded from the shipped configs so the check runs
// exactly what the CLI runs.

#include "generators.hpp"
#include "relloc/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

using namespace relloc;
using relloc::testing::Gen;

namespace {

struct Verdict {
  bool pass{true};
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

ExperimentConfig load(const std::string& name) {
  std::ifstream in(std::filesystem::path(RELLOC_SOURCE_DIR) / "configs" / name);
  if (!in) throw std::runtime_error("cannot open configs/" + name);
  std::ostringstream os;
  os << in.rdbuf();
  ExperimentConfig c = parse_experiment_config(os.str());
  c.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return c;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// 1. Range-noise sweep against the reference table.
Verdict table1() {
  const double ref_a[] = {2.3, 3.4, 6.2, 10.8, 19.3, 37.7, 72.9, 118.2};
  const double ref_b[] = {2.7, 4.5, 8.5, 15.1, 27.1, 52.5, 101.8, 172.8};
  const ExperimentConfig c = load("table1.ini");
  Verdict v;
  v.require(c.runs == 1000 && c.sigmas.size() == 8 && c.rate == 20.0 && c.duration == 20.0,
            "shipped config does not describe 1000 runs x 8 sigmas, 20 s at 20 Hz");
  const auto cells = run_table1(c);
  std::vector<double> a, b;
  for (const auto& cell : cells) (cell.variant == Variant::A ? a : b).push_back(100.0 * cell.amae_m);
  if (a.size() != 8 || b.size() != 8) {
    v.require(false, "expected 8 cells per variant");
    return v;
  }
  std::ostringstream table;
  for (std::size_t i = 0; i < 8; ++i) {
    for (auto [got, ref, name] : {std::tuple{a[i], ref_a[i], "A"}, std::tuple{b[i], ref_b[i], "B"}}) {
      const double tol = std::max(0.25 * ref, 1.0);
      v.require(std::abs(got - ref) <= tol,
                std::string(name) + fmt(" sigma=%g: %.2f cm vs %.1f cm", c.sigmas[i], got, ref));
    }
    if (i > 0) {
      v.require(a[i] >= a[i - 1], fmt("A not monotone at sigma=%g", c.sigmas[i]));
      v.require(b[i] >= b[i - 1], fmt("B not monotone at sigma=%g", c.sigmas[i]));
    }
    if (c.sigmas[i] > 0.0) v.require(b[i] >= a[i], fmt("B < A at sigma=%g", c.sigmas[i]));
    table << (i ? " " : "") << fmt("%g:%.1f/%.1f", c.sigmas[i], a[i], b[i]);
  }
  for (const auto& cell : cells) v.require(cell.n_failed == 0, "aborted runs in sweep");
  if (v.pass) v.detail = "A/B cm " + table.str();
  return v;
}

// 2. Straight-line limit cases.
Verdict limit_cases() {
  Verdict v;
  std::ostringstream info;
  for (int which = 1; which <= 3; ++which) {
    const ExperimentConfig c = load("limit_case_" + std::to_string(which) + ".ini");
    const LimitCaseSummary ra = run_limit_case(which, Variant::A, c.ekf, c.rate, c.duration, c.seed);
    const LimitCaseSummary rb = run_limit_case(which, Variant::B, c.ekf, c.rate, c.duration, c.seed);
    const std::string tag = "case " + std::to_string(which);
    v.require(!ra.run.aborted && !rb.run.aborted, tag + ": aborted run");
    v.require(ra.p_converged && ra.dpsi_converged,
              tag + fmt(" A did not converge (%.3f m, %.3f rad)", ra.run.final_sample.err_p,
                        ra.run.final_sample.err_dpsi));
    if (which == 1) {
      v.require(rb.p_converged, tag + fmt(" B position error %.3f m", rb.run.final_sample.err_p));
      v.require(rb.run.final_sample.err_dpsi > 0.5, tag + fmt(" B heading error %.3f rad", rb.run.final_sample.err_dpsi));
      info << fmt("c1 B dpsi %.2f rad", rb.run.final_sample.err_dpsi);
    } else if (which == 2) {
      v.require(rb.err_p_t20 > rb.err_p_t2, tag + fmt(" B error %.3f at 2 s, %.3f at 20 s", rb.err_p_t2, rb.err_p_t20));
      info << fmt("; c2 B %.2f->%.2f m", rb.err_p_t2, rb.err_p_t20);
    } else {
      v.require(c.duration == 100.0, tag + ": run is not 100 s");
      const auto& s = rb.run.samples;
      bool increasing = !s.empty();
      double prev = -1.0;
      for (const auto& smp : s) {
        if (smp.t < 0.5 * c.duration) continue;
        increasing = increasing && smp.err_p > prev;
        prev = smp.err_p;
      }
      v.require(increasing, tag + " B error not strictly increasing over the last half");
      info << fmt("; c3 B final %.2f m", rb.run.final_sample.err_p);
    }
  }
  if (v.pass) v.detail = info.str();
  return v;
}

// Samples split between generic draws and draws from unobservable families.
void observability_sample(Gen& g, Variant sys, RelativeState& x, InputVector& u) {
  x = g.state();
  u = g.input();
  const int family = g.integer(0, 2);
  if (sys == Variant::A) {
    if (family == 0) {
      // Relative velocity along p.
      const Vec2 rv = g.uniform(-2.0, 2.0) * x.p;
      x.v1 = -rv + rotation_2d(x.delta_psi) * x.v2;
    }
  } else if (family == 0) {
    x.v2 = Vec2::Zero();
    u.a2 = Vec2::Zero();
  } else if (family == 1) {
    x.v1 = g.uniform(-2.0, 2.0) * rotation_2d(x.delta_psi) * x.v2;
    u.a1 = u.a2 = Vec2::Zero();
  }
}

// 3. Analytic classifiers against the numeric Lie-derivative rank.
Verdict observability_oracle() {
  const double tol = 1e-3;
  Verdict v;
  Gen g(2024);
  std::ostringstream info;
  for (Variant sys : {Variant::A, Variant::B}) {
    int kept = 0, agree = 0;
    double worst_rel = 0.0;
    for (int i = 0; i < 1000; ++i) {
      RelativeState x;
      InputVector u;
      observability_sample(g, sys, x, u);
      double m;
      if (sys == Variant::A) {
        m = std::abs(check_observability_a(x, tol).measure);
      } else {
        m = std::abs(det_MB(x, u));
        const double meas = observability_measure_b(x, u);
        worst_rel = std::max(worst_rel, std::abs(meas - m) / std::max(m, 1e-300));
        if (m == 0.0) worst_rel = std::max(worst_rel, meas);
      }
      if (m < 10.0 * tol && m > 0.1 * tol) continue;  // inside the decision margin
      ++kept;
      const bool analytic = m >= tol;
      const int rank = numeric_observability_rank(x, u, sys, sys == Variant::A ? 1 : 2);
      agree += analytic == (rank == 7);
    }
    const double frac = kept > 0 ? static_cast<double>(agree) / kept : 0.0;
    v.require(kept >= 900, std::string(to_string(sys)) + ": too few samples outside the margin");
    v.require(frac >= 0.99, std::string(to_string(sys)) + fmt(": agreement %.4f", frac));
    if (sys == Variant::B) v.require(worst_rel <= 1e-9, fmt("measure vs |det| relative error %.3g", worst_rel));
    info << (sys == Variant::A ? "" : "; ") << to_string(sys) << fmt(" agree %.0f/%.0f", agree, kept);
  }
  if (v.pass) v.detail = info.str();
  return v;
}

// 4. Structural zeros and host-yaw-rate invariance of det M_B.
Verdict determinant_structure() {
  Verdict v;
  Gen g(4048);
  double worst2 = 0.0, worst3 = 0.0, worst_r1 = 0.0;
  for (int i = 0; i < 1000; ++i) {
    RelativeState x = g.state();
    InputVector u = g.input();
    x.v2 = Vec2::Zero();
    u.a2 = Vec2::Zero();
    worst2 = std::max(worst2, std::abs(det_MB(x, u)));
  }
  for (int i = 0; i < 1000; ++i) {
    RelativeState x = g.state();
    InputVector u = g.input();
    x.v1 = g.uniform(-3.0, 3.0) * rotation_2d(x.delta_psi) * x.v2;
    u.a1 = u.a2 = Vec2::Zero();
    worst3 = std::max(worst3, std::abs(det_MB(x, u)));
  }
  for (int i = 0; i < 1000; ++i) {
    const RelativeState x = g.state();
    InputVector u = g.input();
    const double d0 = det_MB(x, u);
    u.r1 = g.uniform(-5.0, 5.0);
    worst_r1 = std::max(worst_r1, std::abs(det_MB(x, u) - d0) / std::max(1.0, std::abs(d0)));
  }
  v.require(worst2 <= 1e-12, fmt("condition 2 violation gives |det| %.3g", worst2));
  v.require(worst3 <= 1e-12, fmt("condition 3 violation gives |det| %.3g", worst3));
  v.require(worst_r1 <= 1e-12, fmt("r1 perturbation changes det by %.3g", worst_r1));
  if (v.pass) v.detail = fmt("max |det| %.2g / %.2g, r1 drift %.2g", worst2, worst3, worst_r1);
  return v;
}

// 5. Heading-disturbance crossover.
Verdict disturbance_crossover() {
  ExperimentConfig c = load("disturbance.ini");
  Verdict v;
  v.require(c.runs == 200, "shipped config does not use 200 runs");
  v.require(c.disturbance_width == 1.0 && c.disturbance_center == 5.0, "disturbance shape is not eps=1, t0=5");
  c.amplitudes = {0.0, 1.5};
  const auto cells = run_disturbance_sweep(c);
  std::ostringstream info;
  for (const auto& cell : cells) {
    if (cell.amplitude == 1.5) {
      v.require(cell.b.amae_m < cell.a.amae_m, fmt("A_d=1.5 sigma=%g: B %+.1f%% vs A", cell.sigma_range, cell.percent));
      info << fmt(" %g:%+.0f%%", cell.sigma_range, cell.percent);
    } else if (cell.sigma_range > 0.0) {
      v.require(cell.b.amae_m > cell.a.amae_m, fmt("A_d=0 sigma=%g: B %+.1f%% vs A", cell.sigma_range, cell.percent));
    }
    v.require(cell.a.n_failed == 0 && cell.b.n_failed == 0, "aborted runs in sweep");
  }
  if (v.pass) v.detail = "A_d=1.5 B vs A" + info.str();
  return v;
}

// 6. Controller response and the full leader-follower pipeline.
Verdict controller() {
  Verdict v;
  ControllerConfig ideal;
  ideal.kp = 1.0;
  ideal.kd = 2.0;
  ideal.v_max = 1e9;  // no saturation
  double worst_final = 0.0;
  for (double angle : {0.0, 1.0, 2.5, 4.0}) {
    const Vec2 offset = 2.0 * Vec2(std::cos(angle), std::sin(angle));
    const auto resp = ideal_tracking_response(figure_eight_with_turns(), ideal, offset, 10.0, 50.0);
    worst_final = std::max(worst_final, resp.back().e.norm());
  }
  v.require(worst_final < 0.05, fmt("ideal loop error %.4f m at 10 s", worst_final));

  ExperimentConfig single = load("leader_follower.ini");
  v.require(single.link.range_sigma == 0.15 && single.link.drop_probability > 0.0 && single.link.nominal_rate == 25.0,
            "link is not 25 Hz, sigma 0.15 m with drops");
  v.require(single.lf_duration == 200.0, "pipeline run is not 200 s");
  single.tau_delays = {4.0};
  LeaderFollowerOptions opt = lf_options_from(single);
  opt.record_trace = false;
  const auto one = run_leader_follower(figure_eight_with_turns(), followers_from(single), single.link, opt);
  v.require(!one[0].aborted, "single follower aborted: " + one[0].diagnostic);
  v.require(one[0].localization_mae < 0.35, fmt("localization MAE %.3f m", one[0].localization_mae));
  v.require(one[0].tracking_mae < 0.80, fmt("tracking MAE %.3f m", one[0].tracking_mae));

  const ExperimentConfig pair = load("leader_follower.ini");
  LeaderFollowerOptions opt2 = lf_options_from(pair);
  opt2.record_trace = false;
  const auto two = run_leader_follower(figure_eight_with_turns(), followers_from(pair), pair.link, opt2);
  std::size_t i4 = 0, i8 = 0;
  for (std::size_t i = 0; i < pair.tau_delays.size(); ++i) {
    if (pair.tau_delays[i] == 4.0) i4 = i;
    if (pair.tau_delays[i] == 8.0) i8 = i;
  }
  v.require(pair.tau_delays.size() == 2 && i4 != i8, "shipped config does not pair tau 4 s and 8 s");
  v.require(!two[i4].aborted && !two[i8].aborted, "two-follower run aborted");
  v.require(two[i8].tracking_mae > two[i4].tracking_mae,
            fmt("tau=8 tracking %.3f m not above tau=4 %.3f m", two[i8].tracking_mae, two[i4].tracking_mae));
  if (v.pass) {
    v.detail = fmt("ideal %.4f m; loc %.3f m track %.3f m", worst_final, one[0].localization_mae, one[0].tracking_mae) +
               fmt("; tau8 %.3f > tau4 %.3f m", two[i8].tracking_mae, two[i4].tracking_mae);
  }
  return v;
}

// 7. 470 ms ranging gaps in the filter loop and in the network.
Verdict gap_robustness() {
  Verdict v;
  const ExperimentConfig c = load("table1.ini");
  const double gap = 0.47, dt = 1.0 / c.rate;
  const std::vector<double> gap_starts = {5.0, 10.0, 15.0};
  std::vector<double> times;
  for (int k = 1; k <= static_cast<int>(std::llround(c.duration * c.rate)); ++k) {
    const double t = k * dt;
    const bool in_gap = std::any_of(gap_starts.begin(), gap_starts.end(),
                                    [&](double g0) { return t > g0 + 1e-9 && t < g0 + gap - 1e-9; });
    if (!in_gap) times.push_back(t);
  }
  const int runs = 50;
  double worst_ratio = 0.0, max_trace = 0.0, max_trace_nominal = 0.0;
  for (Variant var : {Variant::A, Variant::B}) {
    for (double sigma : {0.1, 0.5, 1.0}) {
      Scenario s = detail::circular_from(c);
      s.noise.sigma_range = sigma;
      const EkfConfig cfg = make_ekf_config(var, c.ekf, s);
      std::vector<double> pre(gap_starts.size(), 0.0), post(gap_starts.size(), 0.0);
      std::vector<int> npre(gap_starts.size(), 0), npost(gap_starts.size(), 0);
      for (int r = 0; r < runs; ++r) {
        RunOptions o;
        o.run_index = static_cast<std::uint64_t>(r);
        o.measurement_times = times;
        const RunResult res = run_simulation(s, cfg, o);
        RunOptions nominal;
        nominal.run_index = o.run_index;
        const RunResult ref = run_simulation(s, cfg, nominal);
        v.require(!res.aborted, "gap run aborted: " + res.diagnostic);
        for (const auto& smp : ref.samples) max_trace_nominal = std::max(max_trace_nominal, smp.p_trace);
        for (const auto& smp : res.samples) {
          if (!smp.estimate.finite() || !std::isfinite(smp.p_trace)) {
            v.require(false, "non-finite filter state");
            return v;
          }
          max_trace = std::max(max_trace, smp.p_trace);
          for (std::size_t gi = 0; gi < gap_starts.size(); ++gi) {
            const double g0 = gap_starts[gi], g1 = g0 + gap;
            if (smp.t > g0 - 1.0 && smp.t <= g0) {
              pre[gi] += smp.err_p;
              ++npre[gi];
            } else if (smp.t > g1 + 1.5 && smp.t <= g1 + 2.0) {
              post[gi] += smp.err_p;
              ++npost[gi];
            }
          }
        }
      }
      for (std::size_t gi = 0; gi < gap_starts.size(); ++gi) {
        const double ratio = (post[gi] / npost[gi]) / (pre[gi] / npre[gi]);
        worst_ratio = std::max(worst_ratio, ratio);
        v.require(ratio <= 2.0, std::string(to_string(var)) +
                                    fmt(" sigma=%g gap at %g s: post/pre error %.2f", sigma, gap_starts[gi], ratio));
      }
    }
  }
  v.require(max_trace <= 2.0 * max_trace_nominal,
            fmt("covariance trace peaked at %.3g vs %.3g without gaps", max_trace, max_trace_nominal));

  // Network-level gaps at the clamp in the closed loop.
  ExperimentConfig lf = load("leader_follower.ini");
  lf.tau_delays = {4.0};
  lf.lf_duration = 60.0;
  lf.link.burst_probability = 0.2;
  LeaderFollowerOptions opt = lf_options_from(lf);
  opt.record_trace = false;
  double longest = 0.0;
  double last_t = 0.0;
  opt.on_event = [&](const RangingEvent& ev) {
    longest = std::max(longest, ev.t - last_t);
    last_t = ev.t;
  };
  const auto res = run_leader_follower(figure_eight_with_turns(), followers_from(lf), lf.link, opt);
  v.require(!res[0].aborted, "pipeline with 470 ms gaps aborted: " + res[0].diagnostic);
  v.require(std::isfinite(res[0].localization_mae) && res[0].localization_mae < 0.35,
            fmt("pipeline localization MAE %.3f m under gaps", res[0].localization_mae));
  v.require(longest > 0.4 && longest <= gap + 1e-9, fmt("longest injected slot gap %.3f s", longest));
  if (v.pass) {
    v.detail = fmt("worst post/pre %.2f, trace %.3g (nominal %.3g)", worst_ratio, max_trace, max_trace_nominal) +
               fmt("; pipeline loc %.3f m, longest gap %.3f s", res[0].localization_mae, longest);
  }
  return v;
}

// 8. Wire format.
Verdict wire_format() {
  Verdict v;
  // Hand-written from the layout table: version, sender, seq, six f32, u64 us, flags.
  const Frame golden[3] = {
      {0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
       0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
       0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00},
      {0x01, 0x03, 0x04, 0x03, 0x02, 0x01, 0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x20,
       0xC0, 0x00, 0x00, 0x00, 0x3F, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
       0x00, 0x00, 0x80, 0x3F, 0x87, 0xD6, 0x12, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00},
      {0x01, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0x00, 0x00, 0x00, 0x80, 0x00, 0x00, 0x80,
       0x7F, 0xCD, 0xCC, 0xCC, 0x3D, 0x00, 0x00, 0x80, 0xBF, 0x00, 0x00, 0x00, 0x40,
       0x00, 0x00, 0x80, 0x3E, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xA5}};
  RangingMessage msgs[3];
  msgs[1].sender_id = 3;
  msgs[1].sequence = 0x01020304u;
  msgs[1].vx = 1.0f;
  msgs[1].vy = -2.5f;
  msgs[1].ax = 0.5f;
  msgs[1].height = 1.0f;
  msgs[1].timestamp_us = 1234567;
  msgs[2].sender_id = 255;
  msgs[2].sequence = 0xFFFFFFFFu;
  msgs[2].vx = -0.0f;
  msgs[2].vy = std::numeric_limits<float>::infinity();
  msgs[2].ax = 0.1f;
  msgs[2].ay = -1.0f;
  msgs[2].yaw_rate = 2.0f;
  msgs[2].height = 0.25f;
  msgs[2].timestamp_us = ~0ULL;
  msgs[2].flags = 0xA5;
  for (int i = 0; i < 3; ++i) {
    v.require(encode_message(msgs[i]) == golden[i], "golden frame " + std::to_string(i) + " encodes differently");
    v.require(decode_message(golden[i]) == msgs[i], "golden frame " + std::to_string(i) + " decodes differently");
  }
  Gen g(8);
  int mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    RangingMessage m;
    m.sender_id = static_cast<std::uint8_t>(g.integer(0, 255));
    m.sequence = static_cast<std::uint32_t>(g.rng()());
    for (float* f : {&m.vx, &m.vy, &m.ax, &m.ay, &m.yaw_rate, &m.height}) {
      *f = std::bit_cast<float>(static_cast<std::uint32_t>(g.rng()()));
    }
    m.timestamp_us = g.rng()();
    m.flags = static_cast<std::uint8_t>(g.integer(0, 255));
    const Frame f = encode_message(m);
    mismatches += !(decode_message(f) == m) || encode_message(decode_message(f)) != f;
  }
  v.require(mismatches == 0, std::to_string(mismatches) + " fuzz mismatches");
  if (v.pass) v.detail = "3 golden frames, 10000 fuzz frames, 0 mismatches";
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"range-noise sweep table", table1},
      {"limit cases", limit_cases},
      {"observability oracle equivalence", observability_oracle},
      {"determinant structure", determinant_structure},
      {"heading-disturbance crossover", disturbance_crossover},
      {"controller and leader-follower pipeline", controller},
      {"ranging-gap robustness", gap_robustness},
      {"wire format", wire_format},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << i + 1 << "  " << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << criteria.size() - failed << "/" << criteria.size() << std::endl;
  return failed ? 1 : 0;
}
