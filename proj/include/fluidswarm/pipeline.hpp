#pragma once

// End-to-end helpers: reference field -> partition -> fit -> simulate -> analyze.

#include <cstddef>
#include <utility>

#include "metrics.hpp"
#include "partition.hpp"
#include "reference_field.hpp"
#include "swarm_sim.hpp"
#include "velocity_fit.hpp"

namespace fluidswarm {

struct PipelineConfig {
  NozzleGeometry geometry;
  GasModel gas;
  std::size_t axial_stations = 121;
  std::size_t radial_samples = 16;
  double edge = 0.5;
  MembershipRule rule = MembershipRule::overlap;
  FitConfig fit;
  unsigned threads = 1;
};

struct Prepared {
  ReferenceField field;
  ControlVolumeGrid grid;
  GridFit fit;
};

inline Prepared prepare(const PipelineConfig& cfg) {
  Prepared p;
  p.field = generate_quasi1d_field(cfg.geometry, cfg.gas, cfg.axial_stations, cfg.radial_samples);
  p.grid = partition_domain(p.field, cfg.geometry, cfg.edge, cfg.gas, cfg.rule);
  FitConfig fc = cfg.fit;
  fc.cell_volume = p.grid.cell_volume();
  p.fit = fit_grid(p.grid, fc, cfg.threads);
  return p;
}

/// Averaging window start used when none is given: one axial transit at the
/// scaled command speed.
inline double default_window_start(const SimulationTrace& trace) { return trace.fill_time; }

struct RunOutcome {
  SimulationTrace trace;
  DerivedFieldSet derived;
  MetricsReport report;
};

inline RunOutcome run_and_analyze(const Prepared& p, const NozzleGeometry& geom, const SimConfig& sim,
                                  std::optional<double> window_start = std::nullopt) {
  Simulation s(p.grid, p.fit, geom, sim);
  RunOutcome out;
  out.trace = s.run();
  DeriveOptions opt;
  opt.window_start = window_start.value_or(default_window_start(out.trace));
  opt.pressure_offset = p.fit.pressure_offset;
  out.derived = derive_fields(out.trace, p.grid, opt);
  out.report = make_report(out.derived, p.grid, out.trace);
  return out;
}

}  // namespace fluidswarm
