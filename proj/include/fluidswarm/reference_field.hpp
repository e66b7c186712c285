#pragma once

// Reference flow solutions over a converging-diverging nozzle: the geometry,
// an analytic quasi-1D isentropic generator and the plain-text field format.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "errors.hpp"
#include "vec3.hpp"

namespace fluidswarm {

/// Axisymmetric nozzle along +x. Radius follows a cosine blend between the
/// inlet, throat and outlet radii, flat (C1) at every one of the three stations.
struct NozzleGeometry {
  double length_x = 15.0;
  double inlet_diameter = 3.0;
  double outlet_diameter = 3.0;
  double throat_diameter = 1.5;
  double throat_x = 6.0;

  void validate() const {
    if (!(length_x > 0.0)) throw ValidationError("nozzle length must be positive");
    if (!(throat_x > 0.0 && throat_x < length_x)) throw ValidationError("throat must lie strictly inside (0, length)");
    if (!(throat_diameter > 0.0)) throw ValidationError("throat diameter must be positive");
    if (!(inlet_diameter >= throat_diameter && outlet_diameter >= throat_diameter)) {
      throw ValidationError("throat must be the narrowest section");
    }
  }

  double max_radius() const { return 0.5 * std::max(inlet_diameter, outlet_diameter); }
};

inline double radius_at(const NozzleGeometry& g, double x) {
  if (!(x >= 0.0 && x <= g.length_x)) {
    std::ostringstream msg;
    msg << "x=" << x << " outside nozzle [0, " << g.length_x << "]";
    throw DomainError(msg.str());
  }
  const double rt = 0.5 * g.throat_diameter;
  if (x <= g.throat_x) {
    const double ri = 0.5 * g.inlet_diameter;
    return rt + (ri - rt) * 0.5 * (1.0 + std::cos(std::numbers::pi * x / g.throat_x));
  }
  const double ro = 0.5 * g.outlet_diameter;
  const double s = (x - g.throat_x) / (g.length_x - g.throat_x);
  return rt + (ro - rt) * 0.5 * (1.0 - std::cos(std::numbers::pi * s));
}

inline double area_at(const NozzleGeometry& g, double x) {
  const double r = radius_at(g, x);
  return std::numbers::pi * r * r;
}

/// Inlet thermodynamic state of the barotropic working gas.
struct GasModel {
  double gamma = 1.4;
  double inlet_speed = 3.38;
  double inlet_density = 1.225;
  double inlet_sound_speed = 340.0;

  void validate() const {
    if (!(gamma > 1.0)) throw ValidationError("gamma must exceed 1");
    if (!(inlet_speed > 0.0)) throw ValidationError("inlet speed must be positive");
    if (!(inlet_density > 0.0)) throw ValidationError("inlet density must be positive");
    if (!(inlet_speed < inlet_sound_speed)) throw ValidationError("inlet must be subsonic");
  }

  /// Absolute inlet static pressure, from c^2 = gamma P / rho.
  double inlet_pressure() const { return inlet_density * inlet_sound_speed * inlet_sound_speed / gamma; }
  /// Barotropic constant k in P = k rho^gamma.
  double barotropic_k() const { return inlet_pressure() / std::pow(inlet_density, gamma); }

  /// Density implied by a gauge pressure along the isentrope through the inlet state.
  double density_from_gauge(double gauge_pressure) const {
    const double ratio = 1.0 + gauge_pressure / inlet_pressure();
    return ratio > 0.0 ? inlet_density * std::pow(ratio, 1.0 / gamma) : 0.0;
  }
};

struct FieldNode {
  Vec3 position;
  Vec3 velocity;
  double pressure = 0.0;  ///< gauge, Pa, relative to the inlet static pressure

  friend bool operator==(const FieldNode&, const FieldNode&) = default;
};

struct ReferenceField {
  std::vector<FieldNode> nodes;

  bool empty() const { return nodes.empty(); }
  std::size_t size() const { return nodes.size(); }
};

/// Steady quasi-1D solution at one axial station.
struct StationState {
  double x = 0.0;
  double area = 0.0;
  double density = 0.0;
  double speed = 0.0;
  double pressure_abs = 0.0;
  double pressure_gauge = 0.0;
};

namespace detail {

// Subsonic root of h(rho) + (mdot/(rho A))^2/2 = h0 on the barotropic isentrope.
inline double solve_station_density(const GasModel& gas, double mass_flux_per_area, double h0,
                                    double guess, double x) {
  const double gm = gas.gamma;
  const double k = gas.barotropic_k();
  const double enthalpy_coeff = gm / (gm - 1.0) * k;
  auto residual = [&](double rho) {
    const double v = mass_flux_per_area / rho;
    return enthalpy_coeff * std::pow(rho, gm - 1.0) + 0.5 * v * v - h0;
  };
  auto slope = [&](double rho) {
    const double v = mass_flux_per_area / rho;
    return gm * k * std::pow(rho, gm - 2.0) - v * v / rho;
  };

  const double rho_sonic = std::pow(mass_flux_per_area * mass_flux_per_area / (gm * k), 1.0 / (gm + 1.0));
  const double rho_stag = std::pow(h0 / enthalpy_coeff, 1.0 / (gm - 1.0));
  if (residual(rho_sonic) >= 0.0) {
    std::ostringstream msg;
    msg << "station x=" << x << ": area too small for subsonic flow (choked)";
    throw ConvergenceError(msg.str());
  }

  double lo = rho_sonic;
  double hi = rho_stag;
  double rho = std::clamp(guess, lo, hi);
  for (int it = 0; it < 200; ++it) {
    const double f = residual(rho);
    if (f < 0.0) lo = rho; else hi = rho;
    double next = rho - f / slope(rho);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - rho) <= 1e-15 * rho) return next;
    rho = next;
  }
  std::ostringstream msg;
  msg << "station x=" << x << ": density iteration did not converge";
  throw ConvergenceError(msg.str());
}

}  // namespace detail

/// Station-by-station isentropic solution (mass, energy and P = k rho^gamma).
inline std::vector<StationState> solve_quasi1d(const NozzleGeometry& geom, const GasModel& gas,
                                               std::size_t axial_stations) {
  geom.validate();
  gas.validate();
  if (axial_stations < 2) throw ValidationError("need at least 2 axial stations");

  const double a_in = area_at(geom, 0.0);
  const double mdot = gas.inlet_density * gas.inlet_speed * a_in;
  const double k = gas.barotropic_k();
  const double p_in = gas.inlet_pressure();
  const double h0 = gas.gamma / (gas.gamma - 1.0) * p_in / gas.inlet_density +
                    0.5 * gas.inlet_speed * gas.inlet_speed;

  std::vector<StationState> out;
  out.reserve(axial_stations);
  double guess = gas.inlet_density;
  for (std::size_t s = 0; s < axial_stations; ++s) {
    StationState st;
    st.x = (s + 1 == axial_stations) ? geom.length_x
                                     : geom.length_x * static_cast<double>(s) / static_cast<double>(axial_stations - 1);
    st.area = area_at(geom, st.x);
    st.density = s == 0 ? gas.inlet_density
                        : detail::solve_station_density(gas, mdot / st.area, h0, guess, st.x);
    st.speed = mdot / (st.density * st.area);
    st.pressure_abs = s == 0 ? p_in : k * std::pow(st.density, gas.gamma);
    st.pressure_gauge = st.pressure_abs - p_in;
    guess = st.density;
    out.push_back(st);
  }
  return out;
}

/// Emits nodes on concentric rings at each station: ring i of `radial_samples`
/// sits at radius r(x)*i/radial_samples and carries 6*i nodes (one on the axis).
inline ReferenceField generate_quasi1d_field(const NozzleGeometry& geom, const GasModel& gas,
                                             std::size_t axial_stations, std::size_t radial_samples) {
  if (radial_samples < 1) throw ValidationError("need at least 1 radial sample");
  const auto stations = solve_quasi1d(geom, gas, axial_stations);

  ReferenceField field;
  field.nodes.reserve(stations.size() * (1 + 3 * radial_samples * (radial_samples + 1)));
  for (const auto& st : stations) {
    const double r = radius_at(geom, st.x);
    const Vec3 vel{st.speed, 0.0, 0.0};
    field.nodes.push_back({{st.x, 0.0, 0.0}, vel, st.pressure_gauge});
    for (std::size_t ring = 1; ring <= radial_samples; ++ring) {
      const double rr = r * static_cast<double>(ring) / static_cast<double>(radial_samples);
      const std::size_t count = 6 * ring;
      const double dtheta = 2.0 * std::numbers::pi / static_cast<double>(count);
      for (std::size_t q = 0; q < count; ++q) {
        const double th = (static_cast<double>(q) + 0.5) * dtheta;
        field.nodes.push_back({{st.x, rr * std::cos(th), rr * std::sin(th)}, vel, st.pressure_gauge});
      }
    }
  }
  return field;
}

inline constexpr std::string_view kFieldHeader = "x,y,z,vx,vy,vz,p";

inline void save_field(const ReferenceField& field, const std::string& path) {
  auto os = csv::open_out(path);
  os << kFieldHeader << '\n';
  for (const auto& n : field.nodes) {
    os << csv::fmt(n.position.x) << ',' << csv::fmt(n.position.y) << ',' << csv::fmt(n.position.z) << ','
       << csv::fmt(n.velocity.x) << ',' << csv::fmt(n.velocity.y) << ',' << csv::fmt(n.velocity.z) << ','
       << csv::fmt(n.pressure) << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

/// True when the position is inside or on the nozzle surface (with a small relative slack).
inline bool inside_nozzle(const NozzleGeometry& g, const Vec3& p, double slack = 1e-9) {
  if (p.x < -slack * g.length_x || p.x > g.length_x * (1.0 + slack)) return false;
  const double r = radius_at(g, std::clamp(p.x, 0.0, g.length_x));
  return p.y * p.y + p.z * p.z <= r * r * (1.0 + slack);
}

inline ReferenceField parse_field(std::istream& is, const std::optional<NozzleGeometry>& geom = std::nullopt) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(is, line)) throw ValidationError("no nodes: empty field file");
  ++lineno;
  if (csv::trim(line) != kFieldHeader) {
    throw ParseError(lineno, "expected header '" + std::string(kFieldHeader) + "'");
  }

  ReferenceField field;
  while (std::getline(is, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    const auto cols = csv::split(line);
    if (cols.size() != 7) {
      throw ParseError(lineno, "expected 7 columns, found " + std::to_string(cols.size()));
    }
    FieldNode n;
    n.position = {csv::to_double(cols[0], lineno), csv::to_double(cols[1], lineno), csv::to_double(cols[2], lineno)};
    n.velocity = {csv::to_double(cols[3], lineno), csv::to_double(cols[4], lineno), csv::to_double(cols[5], lineno)};
    n.pressure = csv::to_double(cols[6], lineno);
    if (!is_finite(n.position) || !is_finite(n.velocity) || !std::isfinite(n.pressure)) {
      throw ParseError(lineno, "non-finite value");
    }
    field.nodes.push_back(n);
  }
  if (field.empty()) throw ValidationError("no nodes");

  if (geom) {
    std::ostringstream bad;
    std::size_t offenders = 0;
    for (std::size_t i = 0; i < field.nodes.size(); ++i) {
      if (!inside_nozzle(*geom, field.nodes[i].position)) {
        if (offenders < 20) bad << (offenders ? ", " : "") << "row " << (i + 2);
        ++offenders;
      }
    }
    if (offenders) {
      throw ValidationError(std::to_string(offenders) + " node(s) outside the nozzle: " + bad.str() +
                            (offenders > 20 ? ", ..." : ""));
    }
  }
  return field;
}

inline ReferenceField load_field(const std::string& path, const std::optional<NozzleGeometry>& geom = std::nullopt) {
  auto is = csv::open_in(path);
  return parse_field(is, geom);
}

}  // namespace fluidswarm
