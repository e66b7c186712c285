#pragma once

// Swarm-level primitive variables (velocity, density, pressure, temperature)
// evaluated from the agents inside one control volume.

#include <cmath>
#include <optional>
#include <span>

#include "errors.hpp"
#include "vec3.hpp"

namespace fluidswarm {

struct AgentSample {
  double mass = 1.0;
  Vec3 velocity;
};

/// Diagnostic constitutive parameters. Defaults are unit-scale; a_max is the
/// nominal quadrotor's T_max/m = 2.2 g.
struct ConstitutiveParams {
  double c_v = 1.0;
  double c_p = 1.4;
  double k_s = 1.0;
  double K_b = 1.0;
  double lambda = 0.5;
  double a_max = 2.2 * 9.81;
  double tau = 0.08;
  double omega = 0.0;

  double gamma() const { return c_p / c_v; }
  double R() const { return c_p - c_v; }

  void validate() const {
    if (!(c_v > 0.0 && c_p > c_v)) throw ValidationError("require c_p > c_v > 0");
    if (!(lambda > 0.0 && lambda < 1.0)) throw ValidationError("lambda must lie in (0, 1)");
    if (!(tau >= 0.0)) throw ValidationError("tau must be non-negative");
    if (!(a_max > 0.0)) throw ValidationError("a_max must be positive");
  }
};

inline double total_mass(std::span<const AgentSample> agents) {
  double m = 0.0;
  for (const auto& a : agents) m += a.mass;
  return m;
}

/// Mass-weighted mean velocity U; nullopt for an empty set.
inline std::optional<Vec3> mean_velocity(std::span<const AgentSample> agents) {
  if (agents.empty()) return std::nullopt;
  Vec3 p;
  for (const auto& a : agents) p += a.mass * a.velocity;
  return p / total_mass(agents);
}

/// Mass-weighted projection of agent velocities onto the drift direction.
inline std::optional<Vec3> swarm_velocity(std::span<const AgentSample> agents, const Vec3& drift) {
  if (agents.empty()) return std::nullopt;
  double s = 0.0;
  for (const auto& a : agents) s += a.mass * dot(a.velocity, drift);
  return (s / total_mass(agents)) * drift;
}

inline double number_density(std::size_t agent_count, double cell_volume) {
  return static_cast<double>(agent_count) / cell_volume;
}

/// Identical-mass density m N / dV.
inline double swarm_density(std::size_t agent_count, double mass, double cell_volume) {
  return mass * number_density(agent_count, cell_volume);
}

/// Normal stresses P_aa = (2/dV) sum m v_a^2.
inline Vec3 stress_tensor_diag(std::span<const AgentSample> agents, double cell_volume) {
  Vec3 p;
  for (const auto& a : agents) {
    p.x += a.mass * a.velocity.x * a.velocity.x;
    p.y += a.mass * a.velocity.y * a.velocity.y;
    p.z += a.mass * a.velocity.z * a.velocity.z;
  }
  return p * (2.0 / cell_volume);
}

/// Isotropic kinetic pressure (2/(3 dV)) sum m |v|^2.
inline double swarm_pressure(std::span<const AgentSample> agents, double cell_volume) {
  double s = 0.0;
  for (const auto& a : agents) s += a.mass * norm2(a.velocity);
  return 2.0 * s / (3.0 * cell_volume);
}

/// (2/3) rho_s <|v - u|^2>, mass-weighted mean square about `u`.
inline double internal_pressure(std::span<const AgentSample> agents, double cell_volume, const Vec3& u) {
  if (agents.empty()) return 0.0;
  double s = 0.0;
  for (const auto& a : agents) s += a.mass * norm2(a.velocity - u);
  const double m = total_mass(agents);
  const double rho = m / cell_volume;
  return (2.0 / 3.0) * rho * (s / m);
}

/// Random-motion plus control-authority temperature. Needs a non-empty set and rho_s > 0.
struct Temperature {
  double random = 0.0;
  double control = 0.0;
  double total() const { return random + control; }
};

inline std::optional<Temperature> swarm_temperature(std::span<const AgentSample> agents, const ConstitutiveParams& params,
                                                    double rho_s) {
  if (agents.empty() || !(rho_s > 0.0)) return std::nullopt;
  const Vec3 u = *mean_velocity(agents);
  double s = 0.0;
  for (const auto& a : agents) s += a.mass * norm2(a.velocity - u);
  Temperature t;
  t.random = params.K_b * s / (2.0 * total_mass(agents));
  const double spacing = std::cbrt(1.0 / rho_s);
  t.control = params.lambda * params.a_max * spacing / params.c_v;
  return t;
}

inline double speed_of_sound(const ConstitutiveParams& params, double temperature) {
  if (temperature < 0.0) throw DomainError("temperature must be non-negative");
  const double wt = params.omega * params.tau;
  return std::sqrt(params.gamma() * params.R() * temperature / (1.0 + wt * wt));
}

inline double barotropic_pressure(const ConstitutiveParams& params, double rho_s) {
  if (rho_s < 0.0) throw DomainError("density must be non-negative");
  return params.k_s * std::pow(rho_s, params.gamma());
}

/// The full primitive set for one control volume at one instant.
struct SwarmFieldSample {
  Vec3 u_s;
  double rho_s = 0.0;
  double P_s = 0.0;
  double P_s_internal = 0.0;
  double T_s = 0.0;
  std::size_t N = 0;
  double M = 0.0;
  Vec3 U;
  double L_c = 0.0;
};

inline std::optional<SwarmFieldSample> sample_cell(std::span<const AgentSample> agents, const Vec3& drift,
                                                   double cell_volume, const ConstitutiveParams& params) {
  if (agents.empty()) return std::nullopt;
  SwarmFieldSample s;
  s.N = agents.size();
  s.M = total_mass(agents);
  s.U = *mean_velocity(agents);
  s.u_s = *swarm_velocity(agents, drift);
  s.rho_s = s.M / cell_volume;
  s.P_s = swarm_pressure(agents, cell_volume);
  s.P_s_internal = internal_pressure(agents, cell_volume, s.u_s);
  s.L_c = std::cbrt(1.0 / s.rho_s);
  s.T_s = swarm_temperature(agents, params, s.rho_s)->total();
  return s;
}

}  // namespace fluidswarm
