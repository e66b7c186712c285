#pragma once

// Time-averaged swarm fields, normalized RMSE against the reference targets,
// flow-trend checks and slice/centerline exports.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "csv.hpp"
#include "errors.hpp"
#include "partition.hpp"
#include "swarm_sim.hpp"
#include "vec3.hpp"

namespace fluidswarm {

struct DeriveOptions {
  double window_start = 0.0;    ///< frames with t > window_start are averaged
  double pressure_offset = 0.0; ///< gauge pressure removed before fitting; added back to the derived pressure
};

struct DerivedCell {
  std::size_t cell = 0;
  Vec3 center;
  std::size_t frames_occupied = 0;
  double occupancy = 0.0;      ///< mean agent count over all window frames
  double rho_number = 0.0;     ///< agents per m^3
  double rho_mass = 0.0;       ///< kg per m^3
  Vec3 mean_velocity;          ///< realized, in the scaled (flown) frame
  double u_s = 0.0;            ///< drift-direction speed, scaled frame
  double pressure = 0.0;       ///< mass-weighted fluctuation pressure about the cell target, unscaled gauge Pa
  double kinetic_pressure = 0.0;
  double temperature = 0.0;
  Vec3 v_target;
  double p_target = 0.0;
  double rho_target = 0.0;

  bool valid() const { return frames_occupied > 0; }
};

struct Normalization {
  double v_max = 0.0;        ///< max |v_target| over cells with targets
  double p_min = 0.0;        ///< min target gauge pressure (negative)
  double rho_max = 0.0;      ///< max target density
  double rho_max_derived = 0.0;
};

struct DerivedFieldSet {
  std::vector<DerivedCell> cells;  ///< every cell with a target, in flattened order
  std::size_t window_frames = 0;
  double window_start = 0.0;
  double scale = 1.0;
  double pressure_offset = 0.0;
  Normalization norms;

  // Normalized values; velocities are compared in the unscaled frame.
  double v_target_n(const DerivedCell& c) const { return norm(c.v_target) / norms.v_max; }
  double v_derived_n(const DerivedCell& c) const { return norm(c.mean_velocity) / scale / norms.v_max; }
  double p_target_n(const DerivedCell& c) const { return c.p_target / norms.p_min; }
  double p_derived_n(const DerivedCell& c) const { return c.pressure / norms.p_min; }
  double rho_target_n(const DerivedCell& c) const { return c.rho_target / norms.rho_max; }
  double rho_derived_n(const DerivedCell& c) const { return c.rho_number / norms.rho_max_derived; }

  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return c.valid(); }));
  }
};

/// Per-cell time averages. Occupancy and density average over every window
/// frame (an empty frame counts as zero agents); velocity, pressure and
/// temperature average over the frames in which the cell is occupied.
inline DerivedFieldSet derive_fields(const SimulationTrace& trace, const ControlVolumeGrid& grid, const DeriveOptions& opt = {}) {
  if (trace.frames.empty()) throw ValidationError("trace has no frames");
  std::vector<const Frame*> window;
  for (const auto& f : trace.frames) {
    if (f.t > opt.window_start) window.push_back(&f);
  }
  if (window.empty()) throw ValidationError("no frames after the averaging window start");
  // Accumulating in time order makes the result independent of frame storage order.
  std::stable_sort(window.begin(), window.end(), [](const Frame* a, const Frame* b) { return a->t < b->t; });

  struct Acc {
    std::size_t occupied = 0;
    double n = 0.0, p = 0.0, pk = 0.0, temp = 0.0, us = 0.0;
    Vec3 u;
  };
  std::vector<Acc> acc(grid.size());
  const double c13 = 2.0 * trace.agent_mass / (3.0 * trace.cell_volume);
  for (const Frame* f : window) {
    for (const auto& cf : f->cells) {
      if (cf.cell >= acc.size()) throw ValidationError("trace cell index outside the grid");
      Acc& a = acc[cf.cell];
      ++a.occupied;
      a.n += static_cast<double>(cf.n);
      a.u += cf.mean_velocity;
      a.us += dot(cf.u_s, cf.mean_velocity) < 0.0 ? -norm(cf.u_s) : norm(cf.u_s);
      a.p += std::isnan(cf.dev_sq_target) ? 0.0 : c13 * cf.dev_sq_target;
      a.pk += cf.pressure;
      a.temp += cf.temperature;
    }
  }

  DerivedFieldSet out;
  out.window_frames = window.size();
  out.window_start = opt.window_start;
  out.scale = trace.scale;
  out.pressure_offset = opt.pressure_offset;
  const double frames = static_cast<double>(window.size());
  const double s2 = trace.scale * trace.scale;
  auto& nm = out.norms;
  nm.p_min = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < grid.size(); ++f) {
    const Cell& g = grid[f];
    if (!g.has_target()) continue;
    DerivedCell c;
    c.cell = f;
    c.center = g.center;
    c.v_target = g.v_target;
    c.p_target = g.p_target;
    c.rho_target = g.rho_target;
    const Acc& a = acc[f];
    c.frames_occupied = a.occupied;
    c.occupancy = a.n / frames;
    c.rho_number = c.occupancy / trace.cell_volume;
    c.rho_mass = c.rho_number * trace.agent_mass;
    if (a.occupied > 0) {
      const double k = static_cast<double>(a.occupied);
      c.mean_velocity = a.u / k;
      c.u_s = a.us / k;
      c.pressure = a.p / k / s2 + opt.pressure_offset;
      c.kinetic_pressure = a.pk / k;
      c.temperature = a.temp / k;
    }
    nm.v_max = std::max(nm.v_max, norm(c.v_target));
    nm.p_min = std::min(nm.p_min, c.p_target);
    nm.rho_max = std::max(nm.rho_max, c.rho_target);
    if (c.valid()) nm.rho_max_derived = std::max(nm.rho_max_derived, c.rho_number);
    out.cells.push_back(c);
  }
  if (out.cells.empty()) throw ValidationError("grid has no cells with targets");
  return out;
}

enum class Quantity { velocity, pressure, density, density_deficit };

inline const char* to_string(Quantity q) {
  switch (q) {
    case Quantity::velocity: return "velocity";
    case Quantity::pressure: return "pressure";
    case Quantity::density: return "density";
    case Quantity::density_deficit: return "density_deficit";
  }
  return "?";
}

/// Root mean square of element-wise differences.
inline double rmse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("rmse: size mismatch");
  if (a.empty()) throw DomainError("rmse: no samples");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

/// Normalized per-cell residual for one quantity. Velocity uses the vector
/// difference of the unscaled mean velocity; density compares shapes, either
/// rho/rho_max or the deficit (rho_max - rho)/rho_max.
inline double normalized_residual(const DerivedFieldSet& d, const DerivedCell& c, Quantity q) {
  switch (q) {
    case Quantity::velocity: return norm(c.mean_velocity / d.scale - c.v_target) / d.norms.v_max;
    case Quantity::pressure: return d.p_derived_n(c) - d.p_target_n(c);
    case Quantity::density: return d.rho_derived_n(c) - d.rho_target_n(c);
    case Quantity::density_deficit: return (1.0 - d.rho_derived_n(c)) - (1.0 - d.rho_target_n(c));
  }
  return 0.0;
}

inline double normalized_rmse(const DerivedFieldSet& d, Quantity q) {
  const auto& n = d.norms;
  const bool zero = (q == Quantity::velocity && n.v_max == 0.0) || (q == Quantity::pressure && n.p_min == 0.0) ||
                    ((q == Quantity::density || q == Quantity::density_deficit) && (n.rho_max == 0.0 || n.rho_max_derived == 0.0));
  if (zero) throw DomainError(std::string("zero normalization constant for ") + to_string(q));
  double s = 0.0;
  std::size_t k = 0;
  for (const auto& c : d.cells) {
    if (!c.valid()) continue;
    const double r = normalized_residual(d, c, q);
    s += r * r;
    ++k;
  }
  if (k == 0) throw DomainError("no valid cells");
  return std::sqrt(s / static_cast<double>(k));
}

// --- trends -------------------------------------------------------------------

struct RegionSample {
  double x = 0.0;
  double density = 0.0;
  double speed = 0.0;
};

struct TrendRegions {
  double inlet_max_x = 2.0;
  double throat_x = 6.0;
  double throat_half_width = 1.0;
  double exit_min_x = 13.0;
};

struct TrendReport {
  bool conclusive = false;
  bool density_pass = false;
  bool velocity_pass = false;
  double density_inlet = 0.0, density_throat = 0.0, density_exit = 0.0;
  double speed_inlet = 0.0, speed_throat = 0.0, speed_exit = 0.0;

  bool pass() const { return conclusive && density_pass && velocity_pass; }
};

/// Density must dip at the throat and speed must peak there.
inline TrendReport trend_check(std::span<const RegionSample> samples, const TrendRegions& r = {}) {
  struct Mean {
    double rho = 0.0, v = 0.0;
    std::size_t n = 0;
  } in, th, ex;
  for (const auto& s : samples) {
    Mean* m = s.x < r.inlet_max_x                             ? &in
              : std::abs(s.x - r.throat_x) < r.throat_half_width ? &th
              : s.x > r.exit_min_x                             ? &ex
                                                               : nullptr;
    if (!m) continue;
    m->rho += s.density;
    m->v += s.speed;
    ++m->n;
  }
  TrendReport t;
  t.conclusive = in.n > 0 && th.n > 0 && ex.n > 0;
  if (!t.conclusive) return t;
  t.density_inlet = in.rho / in.n;
  t.density_throat = th.rho / th.n;
  t.density_exit = ex.rho / ex.n;
  t.speed_inlet = in.v / in.n;
  t.speed_throat = th.v / th.n;
  t.speed_exit = ex.v / ex.n;
  t.density_pass = t.density_inlet > t.density_throat && t.density_exit > t.density_throat;
  t.velocity_pass = t.speed_throat > t.speed_inlet && t.speed_throat > t.speed_exit;
  return t;
}

/// Trend of the time-averaged swarm (valid cells only).
inline TrendReport trend_check(const DerivedFieldSet& d, const TrendRegions& r = {}) {
  std::vector<RegionSample> s;
  for (const auto& c : d.cells) {
    if (c.valid()) s.push_back({c.center.x, c.rho_number, norm(c.mean_velocity)});
  }
  return trend_check(s, r);
}

/// Trend of the reference targets themselves.
inline TrendReport trend_check(const ControlVolumeGrid& grid, const TrendRegions& r = {}) {
  std::vector<RegionSample> s;
  for (const auto& c : grid.cells()) {
    if (c.has_target()) s.push_back({c.center.x, c.rho_target, norm(c.v_target)});
  }
  return trend_check(s, r);
}

// --- exports --------------------------------------------------------------------

inline constexpr std::string_view kSliceHeader =
    "jx,jy,jz,cx,cy,cz,v_target,v_derived,p_target,p_derived,rho_target,rho_derived";

struct ExportRow {
  CellIndex j;
  Vec3 center;
  double v_target = 0.0, v_derived = 0.0, p_target = 0.0, p_derived = 0.0, rho_target = 0.0, rho_derived = 0.0;

  bool operator==(const ExportRow&) const = default;
};

namespace detail {

inline ExportRow export_row(const DerivedFieldSet& d, const ControlVolumeGrid& grid, const DerivedCell& c) {
  return {grid.unflatten(c.cell), c.center,      d.v_target_n(c),   d.v_derived_n(c),
          d.p_target_n(c),        d.p_derived_n(c), d.rho_target_n(c), d.rho_derived_n(c)};
}

inline void write_rows(const std::vector<ExportRow>& rows, const std::string& path) {
  auto os = csv::open_out(path);
  os << kSliceHeader << '\n';
  for (const auto& r : rows) {
    os << r.j.jx << ',' << r.j.jy << ',' << r.j.jz << ',' << csv::fmt(r.center.x) << ',' << csv::fmt(r.center.y) << ','
       << csv::fmt(r.center.z) << ',' << csv::fmt(r.v_target) << ',' << csv::fmt(r.v_derived) << ','
       << csv::fmt(r.p_target) << ',' << csv::fmt(r.p_derived) << ',' << csv::fmt(r.rho_target) << ','
       << csv::fmt(r.rho_derived) << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace detail

/// Rows for the XZ contour slice: the cell layer whose center y is nearest 0
/// (lower jy on ties), valid cells only.
inline std::vector<ExportRow> slice_rows(const DerivedFieldSet& d, const ControlVolumeGrid& grid) {
  int best = 0;
  double dist = std::numeric_limits<double>::infinity();
  for (int jy = 0; jy < grid.dims()[1]; ++jy) {
    const double y = std::abs(grid.center({0, jy, 0}).y);
    if (y < dist) {
      dist = y;
      best = jy;
    }
  }
  std::vector<ExportRow> rows;
  for (const auto& c : d.cells) {
    if (c.valid() && grid.unflatten(c.cell).jy == best) rows.push_back(detail::export_row(d, grid, c));
  }
  return rows;
}

/// Per axial layer, the valid cell nearest the axis (lowest flattened index on ties).
inline std::vector<ExportRow> centerline_rows(const DerivedFieldSet& d, const ControlVolumeGrid& grid) {
  std::vector<const DerivedCell*> pick(static_cast<std::size_t>(grid.dims()[0]), nullptr);
  for (const auto& c : d.cells) {
    if (!c.valid()) continue;
    auto& p = pick[static_cast<std::size_t>(grid.unflatten(c.cell).jx)];
    const double r = std::hypot(c.center.y, c.center.z);
    if (!p || r < std::hypot(p->center.y, p->center.z)) p = &c;
  }
  std::vector<ExportRow> rows;
  for (const auto* p : pick) {
    if (p) rows.push_back(detail::export_row(d, grid, *p));
  }
  return rows;
}

inline void export_slice(const DerivedFieldSet& d, const ControlVolumeGrid& grid, const std::string& path) {
  detail::write_rows(slice_rows(d, grid), path);
}

inline void export_centerline(const DerivedFieldSet& d, const ControlVolumeGrid& grid, const std::string& path) {
  detail::write_rows(centerline_rows(d, grid), path);
}

inline std::vector<ExportRow> load_export(const std::string& path) {
  auto is = csv::open_in(path);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line) || csv::trim(line) != kSliceHeader) throw ParseError(1, "expected export header");
  std::vector<ExportRow> rows;
  while (std::getline(is, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    const auto c = csv::split(line);
    if (c.size() != 12) throw ParseError(lineno, "expected 12 columns");
    ExportRow r;
    r.j = {static_cast<int>(csv::to_int(c[0], lineno)), static_cast<int>(csv::to_int(c[1], lineno)),
           static_cast<int>(csv::to_int(c[2], lineno))};
    r.center = {csv::to_double(c[3], lineno), csv::to_double(c[4], lineno), csv::to_double(c[5], lineno)};
    r.v_target = csv::to_double(c[6], lineno);
    r.v_derived = csv::to_double(c[7], lineno);
    r.p_target = csv::to_double(c[8], lineno);
    r.p_derived = csv::to_double(c[9], lineno);
    r.rho_target = csv::to_double(c[10], lineno);
    r.rho_derived = csv::to_double(c[11], lineno);
    rows.push_back(r);
  }
  return rows;
}

struct CenterlineFidelity {
  double velocity = 0.0;  ///< RMS of normalized speed differences
  double pressure = 0.0;
  double density = 0.0;
  std::size_t points = 0;
};

inline CenterlineFidelity centerline_fidelity(std::span<const ExportRow> rows) {
  if (rows.empty()) throw DomainError("empty centerline");
  CenterlineFidelity f;
  for (const auto& r : rows) {
    f.velocity += (r.v_derived - r.v_target) * (r.v_derived - r.v_target);
    f.pressure += (r.p_derived - r.p_target) * (r.p_derived - r.p_target);
    f.density += (r.rho_derived - r.rho_target) * (r.rho_derived - r.rho_target);
  }
  const double n = static_cast<double>(rows.size());
  f.velocity = std::sqrt(f.velocity / n);
  f.pressure = std::sqrt(f.pressure / n);
  f.density = std::sqrt(f.density / n);
  f.points = rows.size();
  return f;
}

// --- flow balance -----------------------------------------------------------------

struct FlowBalance {
  double injection_rate = 0.0;  ///< agents/s entering after t0
  double exit_rate = 0.0;       ///< agents/s leaving through the outlet after t0
  double ratio() const { return injection_rate > 0.0 ? exit_rate / injection_rate : 0.0; }
};

inline FlowBalance flow_balance(const SimulationTrace& trace, double t0) {
  std::size_t in = 0, out = 0;
  double t_end = t0;
  for (const auto& f : trace.frames) {
    if (f.t <= t0) continue;
    in += f.injected;
    out += f.exited;
    t_end = std::max(t_end, f.t);
  }
  FlowBalance b;
  if (t_end > t0) {
    b.injection_rate = static_cast<double>(in) / (t_end - t0);
    b.exit_rate = static_cast<double>(out) / (t_end - t0);
  }
  return b;
}

// --- report ---------------------------------------------------------------------------

struct MetricsReport {
  double rmse_velocity = 0.0;
  double rmse_pressure = 0.0;
  double rmse_density = 0.0;
  double rmse_density_deficit = 0.0;
  std::size_t valid_cells = 0;
  std::size_t target_cells = 0;
  TrendReport trend;
  CenterlineFidelity centerline;
  FlowBalance balance;
  double window_start = 0.0;
  std::size_t window_frames = 0;
  double pressure_offset = 0.0;
  double scale = 1.0;
  Normalization norms;
};

inline MetricsReport make_report(const DerivedFieldSet& d, const ControlVolumeGrid& grid, const SimulationTrace& trace) {
  MetricsReport r;
  r.rmse_velocity = normalized_rmse(d, Quantity::velocity);
  r.rmse_pressure = normalized_rmse(d, Quantity::pressure);
  r.rmse_density = normalized_rmse(d, Quantity::density);
  r.rmse_density_deficit = normalized_rmse(d, Quantity::density_deficit);
  r.valid_cells = d.valid_count();
  r.target_cells = d.cells.size();
  r.trend = trend_check(d);
  r.centerline = centerline_fidelity(centerline_rows(d, grid));
  r.balance = flow_balance(trace, d.window_start);
  r.window_start = d.window_start;
  r.window_frames = d.window_frames;
  r.pressure_offset = d.pressure_offset;
  r.scale = d.scale;
  r.norms = d.norms;
  return r;
}

inline void write_report(std::ostream& os, const MetricsReport& r) {
  auto kv = [&](const char* k, const auto& v) {
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
      os << k << '=' << csv::fmt(v) << '\n';
    } else {
      os << k << '=' << v << '\n';
    }
  };
  kv("rmse_velocity", r.rmse_velocity);
  kv("rmse_velocity_reference_band", std::string("0.15-0.9"));
  kv("rmse_pressure", r.rmse_pressure);
  kv("rmse_pressure_reference_band", std::string("0-0.937"));
  kv("rmse_density", r.rmse_density);
  kv("rmse_density_deficit", r.rmse_density_deficit);
  kv("rmse_density_reference_band", std::string("0.61-0.98"));
  kv("valid_cells", r.valid_cells);
  kv("target_cells", r.target_cells);
  kv("trend_conclusive", r.trend.conclusive ? 1 : 0);
  kv("trend_density_pass", r.trend.density_pass ? 1 : 0);
  kv("trend_velocity_pass", r.trend.velocity_pass ? 1 : 0);
  kv("trend_pass", r.trend.pass() ? 1 : 0);
  kv("density_inlet", r.trend.density_inlet);
  kv("density_throat", r.trend.density_throat);
  kv("density_exit", r.trend.density_exit);
  kv("speed_inlet", r.trend.speed_inlet);
  kv("speed_throat", r.trend.speed_throat);
  kv("speed_exit", r.trend.speed_exit);
  kv("centerline_rms_velocity", r.centerline.velocity);
  kv("centerline_rms_pressure", r.centerline.pressure);
  kv("centerline_rms_density", r.centerline.density);
  kv("centerline_points", r.centerline.points);
  kv("injection_rate", r.balance.injection_rate);
  kv("exit_rate", r.balance.exit_rate);
  kv("exit_to_injection", r.balance.ratio());
  kv("window_start", r.window_start);
  kv("window_frames", r.window_frames);
  kv("scale", r.scale);
  kv("pressure_map", std::string("p = c*sum|v - S*v_target|^2 / S^2 + pressure_offset, normalized by p_min"));
  kv("pressure_offset", r.pressure_offset);
  kv("norm_v_max", r.norms.v_max);
  kv("norm_p_min", r.norms.p_min);
  kv("norm_rho_max", r.norms.rho_max);
  kv("norm_rho_max_derived", r.norms.rho_max_derived);
}

inline void write_residuals(const DerivedFieldSet& d, const ControlVolumeGrid& grid, const std::string& path) {
  auto os = csv::open_out(path);
  os << "jx,jy,jz,cx,cy,cz,frames_occupied,occupancy,r_velocity,r_pressure,r_density\n";
  for (const auto& c : d.cells) {
    if (!c.valid()) continue;
    const auto j = grid.unflatten(c.cell);
    os << j.jx << ',' << j.jy << ',' << j.jz << ',' << csv::fmt(c.center.x) << ',' << csv::fmt(c.center.y) << ','
       << csv::fmt(c.center.z) << ',' << c.frames_occupied << ',' << csv::fmt(c.occupancy) << ','
       << csv::fmt(normalized_residual(d, c, Quantity::velocity)) << ','
       << csv::fmt(normalized_residual(d, c, Quantity::pressure)) << ','
       << csv::fmt(normalized_residual(d, c, Quantity::density)) << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace fluidswarm
