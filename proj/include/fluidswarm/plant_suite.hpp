#pragma once

// Structured plant test suite: hover, steps, thrust-to-weight sweep, headwind
// rejection, command-noise Monte Carlo, frequency response and cross-axis
// coupling. Each check yields one table row.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "csv.hpp"
#include "velocity_plant.hpp"

namespace fluidswarm {

struct PlantTestRow {
  std::string test;
  std::string metric;
  double value = 0.0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  bool gated = false;  ///< false rows are reported without a pass/fail band

  bool pass() const { return !gated || (value >= lower && value <= upper); }
};

struct StepMetrics {
  double settling_time = 0.0;  ///< last time outside the band, s
  double overshoot = 0.0;      ///< fraction of the step magnitude
  double final_value = 0.0;
};

/// Step from hover along `axis` to `magnitude` m/s, sampled every dt for `duration` s.
inline StepMetrics step_response(const PlantParams& p, int axis, double magnitude, double dt = 0.01, double duration = 10.0,
                                 double band = 0.02) {
  PlantState s = hover_state(p);
  Vec3 cmd;
  cmd[axis] = magnitude;
  StepMetrics m;
  const auto n = static_cast<int>(std::llround(duration / dt));
  double peak = 0.0;
  for (int k = 1; k <= n; ++k) {
    s = step(p, s, cmd, {}, dt);
    const double v = s.velocity[axis];
    if (std::abs(v - magnitude) > band * std::abs(magnitude)) m.settling_time = k * dt;
    peak = std::max(peak, (v - magnitude) / magnitude);
  }
  m.overshoot = std::max(0.0, peak);
  m.final_value = s.velocity[axis];
  return m;
}

struct SpeedRun {
  double steady_speed = 0.0;
  double peak_command_tilt = 0.0;   ///< tilt of the constrained desired thrust, rad
  double peak_realized_tilt = 0.0;  ///< tilt of the lagged thrust, rad
};

/// Holds a large x command from hover and records the terminal speed and tilt peaks.
inline SpeedRun max_speed_run(const PlantParams& p, double command = 20.0, double dt = 0.01, double duration = 30.0) {
  PlantState s = hover_state(p);
  const Vec3 cmd{command, 0.0, 0.0};
  SpeedRun r;
  const auto n = static_cast<int>(std::llround(duration / dt));
  for (int k = 0; k < n; ++k) {
    const Vec3 a = constrain_thrust(p, desired_thrust(p, s, limit_command(p, cmd), {}));
    r.peak_command_tilt = std::max(r.peak_command_tilt, tilt_angle(a));
    s = step(p, s, cmd, {}, dt);
    r.peak_realized_tilt = std::max(r.peak_realized_tilt, tilt_angle(s.thrust_accel));
  }
  r.steady_speed = norm(s.velocity);
  return r;
}

/// Steady x speed under a clipped command from the scalar balance
/// (v_lim - v)/tau_v + ff k v_lim^2 = k v^2 with k = rho Cd S / (2 m).
inline double steady_speed_oracle(const PlantParams& p, double command) {
  const double vl = std::min(command, p.speed_limit);
  const double k = 0.5 * p.air_density * p.drag_coeff.x * p.reference_area.x / p.mass;
  auto f = [&](double v) { return (vl - v) / p.tau_v + p.ff_gain * k * vl * vl - k * v * v; };
  std::uintmax_t iters = 200;
  const auto [lo, hi] = boost::math::tools::bisect(f, 0.0, 2.0 * vl + 1.0, boost::math::tools::eps_tolerance<double>(50), iters);
  return 0.5 * (lo + hi);
}

/// Steady x-velocity error for a 1 m/s command against a headwind of speed w.
inline double headwind_error(const PlantParams& p, double w, double command = 1.0, double dt = 0.01, double duration = 30.0) {
  PlantState s = hover_state(p);
  const auto n = static_cast<int>(std::llround(duration / dt));
  for (int k = 0; k < n; ++k) s = step(p, s, {command, 0.0, 0.0}, {-w, 0.0, 0.0}, dt);
  return command - s.velocity.x;
}

/// Velocity RMSE against the clean command when Gaussian noise of the given RMS
/// per axis is added to a 1 m/s x command. Trials share random streams across
/// noise levels (common random numbers), so results are comparable.
inline double noise_rmse(const PlantParams& p, double noise_rms, int trials = 20, std::uint64_t seed = 7, double dt = 0.05,
                         double duration = 20.0) {
  const Vec3 cmd{1.0, 0.0, 0.0};
  const auto n = static_cast<int>(std::llround(duration / dt));
  double sum = 0.0;
  std::size_t count = 0;
  for (int t = 0; t < trials; ++t) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(t));
    std::normal_distribution<double> g(0.0, 1.0);
    PlantState s = hover_state(p);
    for (int k = 0; k < n; ++k) {
      const Vec3 noisy = cmd + noise_rms * Vec3{g(rng), g(rng), g(rng)};
      s = step(p, s, noisy, {}, dt);
      sum += norm2(s.velocity - cmd);
      ++count;
    }
  }
  return std::sqrt(sum / static_cast<double>(count));
}

struct FrequencyPoint {
  double freq = 0.0;
  double gain = 0.0;
  double phase_deg = 0.0;
};

/// Sinusoidal x command of amplitude `amp`; gain and phase from a single-bin
/// projection over whole periods after a settling interval.
inline FrequencyPoint frequency_response(const PlantParams& p, double freq, double amp = 0.5, double dt = 0.005) {
  const double w = 2.0 * std::numbers::pi * freq;
  const double period = 1.0 / freq;
  const int settle = static_cast<int>(std::ceil(5.0 / period));
  const int measure = std::max(3, static_cast<int>(std::ceil(5.0 / period)));
  const auto n0 = static_cast<int>(std::llround(settle * period / dt));
  const auto n1 = static_cast<int>(std::llround(measure * period / dt));
  PlantState s = hover_state(p);
  double c = 0.0, q = 0.0;
  for (int k = 0; k < n0 + n1; ++k) {
    const double t = k * dt;
    s = step(p, s, {amp * std::sin(w * t), 0.0, 0.0}, {}, dt);
    if (k >= n0) {
      const double te = t + dt;
      c += s.velocity.x * std::sin(w * te);
      q += s.velocity.x * std::cos(w * te);
    }
  }
  FrequencyPoint fp;
  fp.freq = freq;
  fp.gain = 2.0 * std::hypot(c, q) / n1 / amp;
  fp.phase_deg = std::atan2(q, c) * 180.0 / std::numbers::pi;
  return fp;
}

/// Largest off-axis speed during a 1 m/s x step.
inline double cross_axis_coupling(const PlantParams& p, double dt = 0.01, double duration = 10.0) {
  PlantState s = hover_state(p);
  double worst = 0.0;
  const auto n = static_cast<int>(std::llround(duration / dt));
  for (int k = 0; k < n; ++k) {
    s = step(p, s, {1.0, 0.0, 0.0}, {}, dt);
    worst = std::max({worst, std::abs(s.velocity.y), std::abs(s.velocity.z)});
  }
  return worst;
}

struct PlantSuiteBands {
  double settling_nominal = 1.67, settling_tol = 0.35;
  double overshoot_max = 0.005;
  double max_speed_nominal = 7.48, max_speed_tol = 0.5;
  double tilt_nominal_deg = 54.3, tilt_tol_deg = 1.0;
  double oracle_rel_tol = 0.01;
  double headwind_max_error = 0.12;
  double hover_max_speed = 1e-3;
};

inline std::vector<PlantTestRow> run_plant_suite(const PlantParams& base, const PlantSuiteBands& b = {}) {
  std::vector<PlantTestRow> rows;
  auto add = [&](std::string test, std::string metric, double v, bool gated = false,
                 double lo = -std::numeric_limits<double>::infinity(), double hi = std::numeric_limits<double>::infinity()) {
    rows.push_back({std::move(test), std::move(metric), v, lo, hi, gated});
  };
  const double deg = 180.0 / std::numbers::pi;

  {
    PlantState s = hover_state(base);
    double worst = 0.0;
    for (int k = 1; k <= 1000; ++k) {
      s = step(base, s, {}, {}, 0.01);
      if (k > 100) worst = std::max(worst, norm(s.velocity));
    }
    add("hover", "max_speed_after_1s", worst, true, 0.0, b.hover_max_speed);
  }

  const char* axes[] = {"x", "y", "z"};
  for (int a = 0; a < 3; ++a) {
    const auto m = step_response(base, a, 1.0);
    const std::string t = std::string("step_") + axes[a];
    add(t, "settling_time_s", m.settling_time, true, b.settling_nominal - b.settling_tol, b.settling_nominal + b.settling_tol);
    add(t, "overshoot", m.overshoot, true, 0.0, b.overshoot_max);
  }

  {
    PlantState s = hover_state(base);
    const Vec3 cmd{1.0, 1.0, 0.5};
    for (int k = 0; k < 1000; ++k) s = step(base, s, cmd, {}, 0.01);
    add("step_multi", "final_error", norm(s.velocity - cmd));
  }

  for (double tw = 1.5; tw <= 6.0 + 1e-9; tw += 0.5) {
    PlantParams p = base;
    p.set_thrust_to_weight(tw);
    const auto r = max_speed_run(p);
    const std::string t = "tw_" + csv::fmt(tw);
    add(t, "steady_speed", r.steady_speed, true, b.max_speed_nominal - b.max_speed_tol, b.max_speed_nominal + b.max_speed_tol);
    const double oracle = steady_speed_oracle(p, 20.0);
    add(t, "oracle_rel_error", std::abs(r.steady_speed - oracle) / oracle, true, 0.0, b.oracle_rel_tol);
    add(t, "peak_command_tilt_deg", r.peak_command_tilt * deg, true, b.tilt_nominal_deg - b.tilt_tol_deg,
        b.tilt_nominal_deg + b.tilt_tol_deg);
    add(t, "peak_realized_tilt_deg", r.peak_realized_tilt * deg);
  }

  for (int w = 0; w <= 8; ++w) {
    add("headwind_" + std::to_string(w), "steady_error", headwind_error(base, w), true, 0.0, b.headwind_max_error);
  }

  double prev = -1.0;
  bool monotone = true;
  for (int i = 0; i <= 5; ++i) {
    const double rms = 0.1 * i;
    const double e = noise_rmse(base, rms);
    monotone = monotone && e >= prev;
    prev = e;
    add("noise_" + csv::fmt(rms), "velocity_rmse", e);
  }
  add("noise", "monotone", monotone ? 1.0 : 0.0, true, 1.0, 1.0);

  for (double f : {0.05, 0.1, 0.2, 0.5, 1.0, 2.0}) {
    const auto fp = frequency_response(base, f);
    add("freq_" + csv::fmt(f), "gain", fp.gain);
    add("freq_" + csv::fmt(f), "phase_deg", fp.phase_deg);
  }
  add("cross_axis", "max_off_axis_speed", cross_axis_coupling(base));
  return rows;
}

inline void write_plant_table(std::ostream& os, const std::vector<PlantTestRow>& rows) {
  os << "test,metric,value,lower,upper,gated,pass\n";
  for (const auto& r : rows) {
    os << r.test << ',' << r.metric << ',' << csv::fmt(r.value) << ',' << (r.gated ? csv::fmt(r.lower) : "") << ','
       << (r.gated ? csv::fmt(r.upper) : "") << ',' << (r.gated ? 1 : 0) << ',' << (r.pass() ? 1 : 0) << '\n';
  }
}

}  // namespace fluidswarm
