#pragma once

// Translational velocity plant for one quadrotor: commanded velocity in,
// realized velocity out. NED axes (z down), no attitude state; tilt is read
// off the direction of the thrust vector.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "errors.hpp"
#include "vec3.hpp"

namespace fluidswarm {

struct PlantParams {
  double mass = 1.0;
  double gravity = 9.81;
  double air_density = 1.225;
  Vec3 reference_area{0.02, 0.02, 0.03};
  Vec3 drag_coeff{1.0, 1.0, 1.2};
  double thrust_max = 2.2 * 1.0 * 9.81;
  double theta_max = 55.0 * std::numbers::pi / 180.0;
  double tau_v = 0.5;
  double tau_T = 0.08;
  double ff_gain = 0.8;
  /// Commands faster than this are clipped radially before shaping.
  double speed_limit = 7.5;

  double thrust_to_weight() const { return thrust_max / (mass * gravity); }
  PlantParams& set_thrust_to_weight(double tw) {
    thrust_max = tw * mass * gravity;
    return *this;
  }

  void validate() const {
    if (!(mass > 0.0 && gravity > 0.0 && air_density > 0.0 && tau_v > 0.0 && tau_T > 0.0)) {
      throw ValidationError("plant parameters must be positive");
    }
    if (!(thrust_to_weight() > 1.0)) throw ValidationError("thrust-to-weight must exceed 1");
    if (!(theta_max > 0.0 && theta_max < 0.5 * std::numbers::pi)) throw ValidationError("theta_max must be in (0, pi/2)");
    if (!(ff_gain >= 0.0 && ff_gain <= 1.0)) throw ValidationError("ff_gain must be in [0, 1]");
    if (!(speed_limit > 0.0)) throw ValidationError("speed_limit must be positive");
  }
};

struct PlantState {
  Vec3 velocity;
  Vec3 thrust_accel;  ///< specific thrust, m/s^2; points up (negative z) in hover
};

/// Raised when integration produces a non-finite state.
class PlantFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Quadratic per-axis drag on the airspeed w = v - wind.
inline Vec3 drag_force(const PlantParams& p, const Vec3& airspeed) {
  Vec3 f;
  for (int a = 0; a < 3; ++a) {
    f[a] = -0.5 * p.air_density * p.drag_coeff[a] * p.reference_area[a] * std::abs(airspeed[a]) * airspeed[a];
  }
  return f;
}

inline Vec3 limit_command(const PlantParams& p, const Vec3& v_cmd) {
  const double n = norm(v_cmd);
  return n > p.speed_limit ? v_cmd * (p.speed_limit / n) : v_cmd;
}

/// Velocity-error shaping, gravity compensation and drag feedforward at the
/// commanded airspeed. `v_cmd` is used as given; step() applies the speed limit.
inline Vec3 desired_thrust(const PlantParams& p, const PlantState& s, const Vec3& v_cmd, const Vec3& wind) {
  return (v_cmd - s.velocity) / p.tau_v - Vec3{0.0, 0.0, p.gravity} -
         (p.ff_gain / p.mass) * drag_force(p, v_cmd - wind);
}

/// Tilt of a thrust vector from straight up, radians.
inline double tilt_angle(const Vec3& a) {
  return std::atan2(std::hypot(a.x, a.y), -a.z);
}

/// Tilt cone first (lateral part scaled against the upward component), then the
/// total magnitude clipped to T_max / m with direction preserved.
inline Vec3 constrain_thrust(const PlantParams& p, const Vec3& a_d) {
  Vec3 a = a_d;
  // Rotor thrust cannot point downward.
  const double up = std::max(-a.z, 0.0);
  a.z = -up;
  const double lateral = std::hypot(a.x, a.y);
  const double lateral_max = std::tan(p.theta_max) * up;
  if (lateral > lateral_max) {
    const double k = lateral > 0.0 ? lateral_max / lateral : 0.0;
    a.x *= k;
    a.y *= k;
  }
  const double amax = p.thrust_max / p.mass;
  const double mag = norm(a);
  if (mag > amax) a *= amax / mag;
  return a;
}

/// Number of sub-steps used for an outer step of length dt (h <= tau_T / 4).
inline int plant_substeps(const PlantParams& p, double dt) {
  return std::max(1, static_cast<int>(std::ceil(dt / (0.25 * p.tau_T) - 1e-12)));
}

/// Advances one zero-order-hold interval. Within each sub-step the thrust lag is
/// integrated exactly for the held target, then velocity is advanced with the
/// updated thrust (semi-implicit ordering).
inline PlantState step(const PlantParams& p, PlantState s, const Vec3& v_cmd, const Vec3& wind, double dt) {
  if (!(dt > 0.0)) throw DomainError("dt must be positive");
  const int n = plant_substeps(p, dt);
  const double h = dt / n;
  const double decay = std::exp(-h / p.tau_T);
  const Vec3 gravity{0.0, 0.0, p.gravity};
  const Vec3 cmd = limit_command(p, v_cmd);
  for (int k = 0; k < n; ++k) {
    const Vec3 target = constrain_thrust(p, desired_thrust(p, s, cmd, wind));
    s.thrust_accel = target + (s.thrust_accel - target) * decay;
    s.velocity += (s.thrust_accel + gravity + drag_force(p, s.velocity - wind) / p.mass) * h;
  }
  if (!is_finite(s.velocity) || !is_finite(s.thrust_accel)) throw PlantFault("non-finite plant state");
  return s;
}

/// Hover trim: zero velocity, thrust exactly cancelling gravity.
inline PlantState hover_state(const PlantParams& p) { return {{}, {0.0, 0.0, -p.gravity}}; }

}  // namespace fluidswarm
