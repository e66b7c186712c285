#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fluidswarm/pipeline.hpp"

using namespace fluidswarm;

namespace {

const Prepared& setup() {
  static const Prepared p = [] {
    PipelineConfig c;
    c.axial_stations = 61;
    c.radial_samples = 8;
    return prepare(c);
  }();
  return p;
}

// Trace in which every fitted cell holds its fitted agents flying exactly at
// the scaled fitted velocities, for `frames` frames.
SimulationTrace tracking_trace(const Prepared& p, double scale, std::size_t frames) {
  SimulationTrace tr;
  tr.dt = 0.05;
  tr.scale = scale;
  tr.agent_mass = p.fit.config.agent_mass;
  tr.cell_volume = p.grid.cell_volume();
  for (std::size_t k = 0; k < frames; ++k) {
    Frame f;
    f.t = static_cast<double>(k + 1) * tr.dt;
    for (const auto& [j, r] : p.fit.cells) {
      const std::size_t c = p.grid.flatten(j);
      CellFrame cf;
      cf.cell = c;
      cf.n = static_cast<std::size_t>(r.n_star);
      Vec3 m;
      double dev = 0.0;
      for (const auto& v : r.velocities) {
        m += scale * v;
        dev += norm2(scale * v - scale * p.grid[c].v_target);
      }
      cf.mean_velocity = m / static_cast<double>(r.n_star);
      cf.u_s = cf.mean_velocity;
      cf.dev_sq_target = dev;
      f.cells.push_back(cf);
    }
    tr.frames.push_back(std::move(f));
  }
  return tr;
}

}  // namespace

TEST(DeriveFields, ConstantSingleAgentCell) {
  const auto& p = setup();
  const std::size_t c = p.grid.flatten(p.fit.cells.begin()->first);
  SimulationTrace tr;
  tr.scale = 0.1;
  tr.agent_mass = 1.0;
  tr.cell_volume = 0.125;
  for (int k = 1; k <= 20; ++k) {
    Frame f;
    f.t = 0.05 * k;
    CellFrame cf;
    cf.cell = c;
    cf.n = 1;
    cf.mean_velocity = {0.3, -0.1, 0.05};
    cf.dev_sq_target = 0.0;
    f.cells.push_back(cf);
    tr.frames.push_back(f);
  }
  const auto d = derive_fields(tr, p.grid);
  const auto it = std::find_if(d.cells.begin(), d.cells.end(), [&](const auto& x) { return x.cell == c; });
  ASSERT_NE(it, d.cells.end());
  EXPECT_EQ(it->frames_occupied, 20u);
  EXPECT_NEAR(norm(it->mean_velocity - Vec3{0.3, -0.1, 0.05}), 0.0, 1e-15);
  EXPECT_NEAR(it->occupancy, 1.0, 1e-15);
  EXPECT_NEAR(it->rho_number, 8.0, 1e-12);
  EXPECT_EQ(d.valid_count(), 1u);
}

TEST(DeriveFields, EmptyTraceAndWindowAreErrors) {
  const auto& p = setup();
  EXPECT_THROW(derive_fields(SimulationTrace{}, p.grid), ValidationError);
  auto tr = tracking_trace(p, 0.1, 5);
  DeriveOptions o;
  o.window_start = 100.0;
  EXPECT_THROW(derive_fields(tr, p.grid, o), ValidationError);
}

TEST(DeriveFields, TrackingPressureIsFittedVariance) {
  const auto& p = setup();
  const auto tr = tracking_trace(p, 0.1, 10);
  DeriveOptions o;
  o.pressure_offset = p.fit.pressure_offset;
  const auto d = derive_fields(tr, p.grid, o);
  const double c13 = 2.0 / (3.0 * 0.125);
  double nonzero = 0.0;
  for (const auto& c : d.cells) {
    const auto& r = p.fit.cells.at(p.grid.unflatten(c.cell));
    double var = 0.0;
    for (const auto& v : r.velocities) var += norm2(v - c.v_target);
    EXPECT_NEAR(c.pressure - p.fit.pressure_offset, c13 * var, 1e-8 * std::max(1.0, c13 * var));
    nonzero = std::max(nonzero, c13 * var);
    EXPECT_NEAR(norm(c.mean_velocity / 0.1 - c.v_target), 0.0, 1e-9);
  }
  EXPECT_GT(nonzero, 0.0);
  EXPECT_NEAR(normalized_rmse(d, Quantity::velocity), 0.0, 1e-9);
  // A converged fit reproduces the pressure target exactly.
  EXPECT_NEAR(normalized_rmse(d, Quantity::pressure), 0.0, 1e-6);
}

TEST(DeriveFields, FrameOrderDoesNotMatter) {
  const auto& p = setup();
  SimConfig cfg;
  cfg.duration = 15.0;
  Simulation sim(p.grid, p.fit, NozzleGeometry{}, cfg);
  auto tr = sim.run();
  const auto a = derive_fields(tr, p.grid, {5.0, p.fit.pressure_offset});
  std::mt19937_64 rng(1);
  std::shuffle(tr.frames.begin(), tr.frames.end(), rng);
  const auto b = derive_fields(tr, p.grid, {5.0, p.fit.pressure_offset});
  ASSERT_EQ(a.cells.size(), b.cells.size());
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    EXPECT_EQ(a.cells[i].mean_velocity, b.cells[i].mean_velocity);
    EXPECT_EQ(a.cells[i].pressure, b.cells[i].pressure);
    EXPECT_EQ(a.cells[i].rho_number, b.cells[i].rho_number);
  }
}

TEST(NormalizedRmse, ZeroForIdenticalAndOffsetForShifted) {
  const auto& p = setup();
  auto d = derive_fields(tracking_trace(p, 0.1, 3), p.grid, {0.0, p.fit.pressure_offset});
  for (auto& c : d.cells) {
    c.mean_velocity = 0.1 * c.v_target;
    c.pressure = c.p_target;
  }
  EXPECT_NEAR(normalized_rmse(d, Quantity::velocity), 0.0, 1e-15);
  EXPECT_EQ(normalized_rmse(d, Quantity::pressure), 0.0);

  const double off = 0.125;
  for (auto& c : d.cells) {
    c.pressure = c.p_target + off * d.norms.p_min;
    c.mean_velocity = 0.1 * (c.v_target + Vec3{0.0, off * d.norms.v_max, 0.0});
  }
  EXPECT_NEAR(normalized_rmse(d, Quantity::pressure), off, 1e-12);
  EXPECT_NEAR(normalized_rmse(d, Quantity::velocity), off, 1e-12);
}

TEST(NormalizedRmse, UnoccupiedCellsAreExcluded) {
  const auto& p = setup();
  auto tr = tracking_trace(p, 0.1, 3);
  const std::size_t dropped = tr.frames[0].cells[0].cell;
  for (auto& f : tr.frames) f.cells.erase(f.cells.begin());
  const auto d = derive_fields(tr, p.grid, {0.0, p.fit.pressure_offset});
  EXPECT_EQ(d.valid_count(), d.cells.size() - 1);
  const auto it = std::find_if(d.cells.begin(), d.cells.end(), [&](const auto& c) { return c.cell == dropped; });
  ASSERT_NE(it, d.cells.end());
  EXPECT_FALSE(it->valid());
  EXPECT_NEAR(normalized_rmse(d, Quantity::velocity), 0.0, 1e-9);
}

TEST(NormalizedRmse, PrenormalizedInputsGiveSameValue) {
  const auto& p = setup();
  SimConfig cfg;
  cfg.duration = 15.0;
  Simulation sim(p.grid, p.fit, NozzleGeometry{}, cfg);
  const auto d = derive_fields(sim.run(), p.grid, {5.0, p.fit.pressure_offset});
  std::vector<double> a, b;
  for (const auto& c : d.cells) {
    if (!c.valid()) continue;
    a.push_back(c.p_target / d.norms.p_min);
    b.push_back(c.pressure / d.norms.p_min);
  }
  EXPECT_NEAR(rmse(b, a), normalized_rmse(d, Quantity::pressure), 1e-12);
}

TEST(NormalizedRmse, ZeroNormalizationThrows) {
  const auto& p = setup();
  auto d = derive_fields(tracking_trace(p, 0.1, 3), p.grid);
  d.norms.v_max = 0.0;
  EXPECT_THROW(normalized_rmse(d, Quantity::velocity), DomainError);
  d.norms.p_min = 0.0;
  EXPECT_THROW(normalized_rmse(d, Quantity::pressure), DomainError);
  for (auto& c : d.cells) c.frames_occupied = 0;
  EXPECT_THROW(normalized_rmse(d, Quantity::density), DomainError);
}

TEST(Rmse, Basics) {
  const std::vector<double> a{1, 2, 3}, b{1, 2, 3}, c{2, 3, 4};
  EXPECT_EQ(rmse(a, b), 0.0);
  EXPECT_NEAR(rmse(a, c), 1.0, 1e-15);
  EXPECT_THROW(rmse(a, std::vector<double>{1}), DomainError);
}

TEST(TrendCheck, ReferenceFieldPasses) {
  const auto t = trend_check(setup().grid);
  EXPECT_TRUE(t.conclusive);
  EXPECT_TRUE(t.pass());
  EXPECT_GT(t.speed_throat, t.speed_inlet);
}

TEST(TrendCheck, UniformFieldFails) {
  std::vector<RegionSample> s;
  for (int i = 0; i < 30; ++i) s.push_back({0.25 + 0.5 * i, 1.0, 1.0});
  const auto t = trend_check(s);
  EXPECT_TRUE(t.conclusive);
  EXPECT_FALSE(t.pass());
}

TEST(TrendCheck, MissingRegionIsInconclusive) {
  std::vector<RegionSample> s{{0.5, 2.0, 1.0}, {6.0, 1.0, 2.0}};
  EXPECT_FALSE(trend_check(s).conclusive);
  EXPECT_FALSE(trend_check(s).pass());
}

TEST(Export, SliceIsOneLayerAndRoundTrips) {
  const auto& p = setup();
  const auto d = derive_fields(tracking_trace(p, 0.1, 3), p.grid, {0.0, p.fit.pressure_offset});
  const auto rows = slice_rows(d, p.grid);
  ASSERT_FALSE(rows.empty());
  for (const auto& r : rows) EXPECT_EQ(r.j.jy, rows.front().j.jy);
  EXPECT_LE(rows.size(), p.grid.inside_count());
  const auto path = (std::filesystem::temp_directory_path() / "fs_slice.csv").string();
  export_slice(d, p.grid, path);
  const auto l = load_export(path);
  ASSERT_EQ(l.size(), rows.size());
  for (std::size_t i = 0; i < l.size(); ++i) {
    EXPECT_EQ(l[i].j, rows[i].j);
    EXPECT_NEAR(l[i].v_derived, rows[i].v_derived, 1e-11);
    EXPECT_NEAR(l[i].p_target, rows[i].p_target, 1e-11);
  }
  detail::write_rows(l, path);
  EXPECT_EQ(load_export(path), l);
}

TEST(Export, CenterlinePeaksAtThroat) {
  const auto& p = setup();
  const auto d = derive_fields(tracking_trace(p, 0.1, 3), p.grid, {0.0, p.fit.pressure_offset});
  const auto rows = centerline_rows(d, p.grid);
  ASSERT_EQ(rows.size(), 30u);
  const auto peak = std::max_element(rows.begin(), rows.end(), [](auto& a, auto& b) { return a.v_target < b.v_target; });
  EXPECT_NEAR(peak->center.x, 6.0, 0.5);
  for (const auto& r : rows) {
    EXPECT_GE(r.v_target, 0.0);
    EXPECT_LE(r.v_target, 1.0 + 1e-12);
  }
  const auto f = centerline_fidelity(rows);
  EXPECT_NEAR(f.velocity, 0.0, 1e-9);
  EXPECT_NEAR(f.pressure, 0.0, 1e-6);
}

TEST(Export, LoadRejectsBadHeader) {
  const auto path = (std::filesystem::temp_directory_path() / "fs_bad_export.csv").string();
  {
    std::ofstream os(path);
    os << "a,b\n";
  }
  EXPECT_THROW(load_export(path), ParseError);
}

TEST(FlowBalance, CountsAfterWindowStart) {
  SimulationTrace tr;
  for (int k = 1; k <= 100; ++k) {
    Frame f;
    f.t = 0.1 * k;
    f.injected = k % 10 == 0 ? 10 : 0;
    f.exited = k > 50 ? 1 : 0;
    tr.frames.push_back(f);
  }
  const auto b = flow_balance(tr, 5.0);
  EXPECT_NEAR(b.injection_rate, 50.0 / 5.0, 1e-9);
  EXPECT_NEAR(b.exit_rate, 50.0 / 5.0, 1e-9);
  EXPECT_NEAR(b.ratio(), 1.0, 1e-12);
}
