#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "fluidswarm/pipeline.hpp"
#include "fluidswarm/run_io.hpp"

using namespace fluidswarm;

namespace {

const Prepared& paper_setup() {
  static const Prepared p = prepare(PipelineConfig{});
  return p;
}

AgentState agent_at(const Vec3& x, const Vec3& v, std::uint64_t id = 0) {
  AgentState a;
  a.id = id;
  a.position = x;
  a.plant.velocity = v;
  return a;
}

SimConfig tunnel_config(double x_axial) {
  SimConfig c;
  c.scenario = Scenario::tunnel_seeding;
  c.x_axial = x_axial;
  return c;
}

}  // namespace

TEST(Seeding, NothingBelowTheInlet) {
  const auto& p = paper_setup();
  EXPECT_TRUE(seed_tunnel(p.grid, p.fit, tunnel_config(0.0)).empty());
}

TEST(Seeding, FillsCellsUpToAxialLimit) {
  const auto& p = paper_setup();
  const auto cfg = tunnel_config(3.0);
  const auto agents = seed_tunnel(p.grid, p.fit, cfg);
  std::size_t expected = 0;
  for (const auto& [j, r] : p.fit.cells) {
    if (p.grid.at(j).center.x <= 3.0) expected += static_cast<std::size_t>(r.n_star);
  }
  EXPECT_EQ(agents.size(), expected);
  EXPECT_GT(expected, 0u);
  for (const auto& a : agents) {
    const Cell& c = p.grid[a.cell];
    EXPECT_LE(c.center.x, 3.0);
    for (int k = 0; k < 3; ++k) EXPECT_LE(std::abs(a.position[k] - c.center[k]), 0.5 * p.grid.edge());
  }
}

TEST(Seeding, IsDeterministicPerSeed) {
  const auto& p = paper_setup();
  auto cfg = tunnel_config(3.0);
  cfg.rng_seed = 4;
  const auto a = seed_tunnel(p.grid, p.fit, cfg);
  const auto b = seed_tunnel(p.grid, p.fit, cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].position, b[i].position);
}

TEST(Injection, RateAndBatchExamples) {
  EXPECT_NEAR(injection_rate(5, 3.38, 0.5), 33.8, 1e-12);
  EXPECT_EQ(batch_size(33.8, 0.5), 17);
  EXPECT_EQ(injection_rate(5, 0.0, 0.5), 0.0);
  EXPECT_EQ(batch_size(0.0, 0.5), 0);
}

TEST(Injection, BatchLandsInInletSlab) {
  const auto& p = paper_setup();
  SimConfig cfg;
  const CommandField cmd(p.grid, p.fit, cfg.scale, cfg.command_mode, cfg.cycle_dwell);
  const NozzleGeometry geom;
  const auto batch = inject_batch(p.grid, cmd, geom, cfg, 0.0, 500, 100);
  ASSERT_EQ(batch.size(), 500u);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& a = batch[k];
    EXPECT_EQ(a.id, 100 + k);
    EXPECT_GE(a.position.x, 0.0);
    EXPECT_LT(a.position.x, p.grid.edge());
    EXPECT_LE(std::hypot(a.position.y, a.position.z), radius_at(geom, 0.0));
    EXPECT_EQ(a.plant.velocity, cmd.command(a.cell, 0.0));
  }
}

TEST(Injection, ReservoirRateMatchesInletColumns) {
  const auto& p = paper_setup();
  const double rate = reservoir_rate(p.grid, p.fit, NozzleGeometry{}, 0.1);
  // Inlet columns fly at about 0.338 m/s with N* near 2 per 0.5 m column.
  const double faces = area_at(NozzleGeometry{}, 0.0) / 0.25;
  EXPECT_GT(rate, faces * injection_rate(2, 0.3, 0.5));
  EXPECT_LT(rate, faces * injection_rate(3, 0.4, 0.5));
}

TEST(StepSim, DragFreeAgentAdvancesByVelocity) {
  const auto& p = paper_setup();
  auto cfg = tunnel_config(0.0);
  cfg.plant.air_density = 1e-300;
  Simulation sim(p.grid, p.fit, NozzleGeometry{}, cfg);
  const CellIndex j{8, 3, 3};
  const std::size_t f = p.grid.flatten(j);
  const Vec3 v = sim.commands().command(f, 0.0);
  const Vec3 x0 = p.grid[f].center;
  AgentState a = agent_at(x0, v, 1);
  a.plant = trimmed_state(cfg.plant, v, {});
  a.cell = f;
  sim.agents().push_back(a);
  sim.step_frame();
  const auto& b = sim.agents().front();
  EXPECT_EQ(b.plant.velocity, v);
  EXPECT_EQ(b.position, x0 + v * cfg.dt);
}

TEST(StepSim, CommandsDependOnlyOnCell) {
  const auto& p = paper_setup();
  SimConfig cfg;
  cfg.duration = 50.0;
  for (CommandMode mode : {CommandMode::mean, CommandMode::cycle}) {
    cfg.command_mode = mode;
    Simulation sim(p.grid, p.fit, NozzleGeometry{}, cfg);
    for (int k = 0; k < 1000; ++k) {
      const double t = static_cast<double>(sim.frame_index()) * cfg.dt;
      std::vector<std::pair<std::size_t, bool>> before;
      for (const auto& a : sim.agents()) before.emplace_back(p.grid.flatten(*assign_cell(p.grid, a.position)), a.active());
      sim.step_frame();
      std::map<std::size_t, Vec3> seen;
      for (std::size_t i = 0; i < before.size(); ++i) {
        if (!before[i].second) continue;
        const auto [it, fresh] = seen.emplace(before[i].first, sim.last_commands()[i]);
        EXPECT_EQ(it->second, sim.last_commands()[i]);
        EXPECT_EQ(sim.last_commands()[i], sim.commands().command(before[i].first, t));
      }
      ASSERT_TRUE(sim.trace().population.balanced()) << "frame " << k;
    }
  }
}

TEST(StepSim, EmptyCellsBorrowNearestFittedCommand) {
  const auto& p = paper_setup();
  const CommandField cmd(p.grid, p.fit, 0.1, CommandMode::mean, 0.05);
  for (std::size_t f = 0; f < p.grid.size(); ++f) {
    const std::size_t s = cmd.source(f);
    EXPECT_TRUE(cmd.has_own_fit(s));
    if (cmd.has_own_fit(f)) {
      EXPECT_EQ(s, f);
    }
    EXPECT_TRUE(is_finite(cmd.command(f, 0.0)));
  }
}

TEST(StepSim, MeanCommandHitsScaledTarget) {
  const auto& p = paper_setup();
  const CommandField cmd(p.grid, p.fit, 0.1, CommandMode::mean, 0.05);
  for (const auto& [j, r] : p.fit.cells) {
    const std::size_t f = p.grid.flatten(j);
    EXPECT_LT(norm(cmd.command(f, 0.0) - 0.1 * p.grid[f].v_target), 1e-9);
  }
}

TEST(Collisions, SeparatedAgentsDoNotCollide) {
  SimConfig cfg;
  std::vector<AgentState> a{agent_at({1, 0, 0}, {1, 0, 0}, 0), agent_at({1 + 3 * cfg.agent_radius, 0, 0}, {-1, 0, 0}, 1)};
  EXPECT_TRUE(detect_collisions(a, cfg).empty());
}

TEST(Collisions, Classification) {
  SimConfig cfg;
  std::vector<AgentState> head{agent_at({1, 0, 0}, {1, 0, 0}, 0), agent_at({1, 0, 0}, {-1, 0, 0}, 1)};
  auto pairs = detect_collisions(head, cfg);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].kind, CollisionKind::head_on);

  std::vector<AgentState> perp{agent_at({1, 0, 0}, {1, 0, 0}, 0), agent_at({1, 0, 0}, {0, 1, 0}, 1)};
  pairs = detect_collisions(perp, cfg);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].kind, CollisionKind::perpendicular);

  // Fast agent behind a slow one, same heading.
  std::vector<AgentState> over{agent_at({1, 0, 0}, {2, 0, 0}, 0), agent_at({1.1, 0, 0}, {0.5, 0, 0}, 1)};
  pairs = detect_collisions(over, cfg);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].kind, CollisionKind::one_way);
}

TEST(Collisions, MatchesBruteForcePairs) {
  SimConfig cfg;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 3.0), v(-1.0, 1.0);
  std::vector<AgentState> a;
  for (std::uint64_t i = 0; i < 400; ++i) a.push_back(agent_at({u(rng), u(rng), u(rng)}, {v(rng), v(rng), v(rng)}, i));
  a[5].status = AgentStatus::exited;
  std::vector<std::pair<std::size_t, std::size_t>> brute;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = i + 1; k < a.size(); ++k)
      if (a[i].active() && a[k].active() && norm(a[i].position - a[k].position) < 2.0 * cfg.agent_radius) brute.emplace_back(i, k);
  const auto pairs = detect_collisions(a, cfg);
  ASSERT_EQ(pairs.size(), brute.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) EXPECT_EQ(std::make_pair(pairs[i].a, pairs[i].b), brute[i]);
}

TEST(Collisions, NoPairsLeavesAgentsUnchanged) {
  SimConfig cfg;
  std::vector<AgentState> a{agent_at({0, 0, 0}, {1, 2, 3})};
  resolve_collisions({}, a, cfg);
  EXPECT_EQ(a[0].plant.velocity, (Vec3{1, 2, 3}));
}

TEST(Collisions, DirectionsArePreserved) {
  SimConfig cfg;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0), v(-3.0, 3.0);
  std::vector<AgentState> a;
  for (std::uint64_t i = 0; i < 300; ++i) a.push_back(agent_at({u(rng), u(rng), u(rng)}, {v(rng), v(rng), v(rng)}, i));
  std::vector<Vec3> dir;
  for (const auto& x : a) dir.push_back(x.plant.velocity / norm(x.plant.velocity));
  const auto pairs = detect_collisions(a, cfg);
  ASSERT_FALSE(pairs.empty());
  resolve_collisions(pairs, a, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double s = norm(a[i].plant.velocity);
    ASSERT_GT(s, 0.0);
    EXPECT_LT(norm(a[i].plant.velocity / s - dir[i]), 1e-12);
    EXPECT_LE(s, cfg.collision.speed_max);
  }
}

TEST(Collisions, OneWayConservesAxialMomentum) {
  SimConfig cfg;
  std::vector<AgentState> a{agent_at({1, 0, 0}, {2, 0, 0}, 0), agent_at({1.1, 0, 0}, {0.5, 0, 0}, 1)};
  const auto pairs = detect_collisions(a, cfg);
  ASSERT_EQ(pairs.size(), 1u);
  const double before = a[0].plant.velocity.x + a[1].plant.velocity.x;
  resolve_collisions(pairs, a, cfg);
  EXPECT_NEAR(a[0].plant.velocity.x + a[1].plant.velocity.x, before, 1e-12);
  EXPECT_NEAR(a[0].plant.velocity.x, 2.0 - 0.25 * 1.5, 1e-12);
  EXPECT_NEAR(a[1].plant.velocity.x, 0.5 + 0.25 * 1.5, 1e-12);
}

TEST(Collisions, MutualLossesOrdered) {
  SimConfig cfg;
  std::vector<AgentState> head{agent_at({1, 0, 0}, {2, 0, 0}, 0), agent_at({1, 0, 0}, {-2, 0, 0}, 1)};
  resolve_collisions(detect_collisions(head, cfg), head, cfg);
  const double kh = norm(head[0].plant.velocity) / 2.0;
  EXPECT_NEAR(kh, norm(head[1].plant.velocity) / 2.0, 1e-15);
  EXPECT_NEAR(kh * kh, 1.0 - cfg.collision.head_on_loss, 1e-12);

  std::vector<AgentState> perp{agent_at({1, 0, 0}, {2, 0, 0}, 0), agent_at({1, 0, 0}, {0, 2, 0}, 1)};
  resolve_collisions(detect_collisions(perp, cfg), perp, cfg);
  const double kp = norm(perp[0].plant.velocity) / 2.0;
  EXPECT_NEAR(kp * kp, 1.0 - cfg.collision.perpendicular_loss, 1e-12);
  EXPECT_LT(kp, kh);
}

TEST(Simulation, TraceIndependentOfThreadCount) {
  const auto& p = paper_setup();
  SimConfig cfg;
  cfg.duration = 20.0;
  cfg.collisions = true;
  cfg.rng_seed = 11;
  std::uint64_t ref = 0;
  for (unsigned threads : {1u, 2u, 8u}) {
    cfg.threads = threads;
    Simulation sim(p.grid, p.fit, NozzleGeometry{}, cfg);
    const auto d = trace_digest(sim.run());
    if (threads == 1) ref = d;
    EXPECT_EQ(d, ref) << threads << " threads";
  }
}

TEST(Simulation, FramesAdvanceByDtAndPopulationBalances) {
  const auto& p = paper_setup();
  SimConfig cfg;
  cfg.duration = 30.0;
  Simulation sim(p.grid, p.fit, NozzleGeometry{}, cfg);
  const auto& tr = sim.run();
  ASSERT_EQ(tr.frames.size(), cfg.frame_count());
  for (std::size_t k = 0; k < tr.frames.size(); ++k) {
    EXPECT_NEAR(tr.frames[k].t, static_cast<double>(k + 1) * cfg.dt, 1e-9);
    if (k > 0) {
      EXPECT_GT(tr.frames[k].t, tr.frames[k - 1].t);
    }
  }
  EXPECT_TRUE(tr.population.balanced());
  EXPECT_GT(tr.population.injected, 0u);
  EXPECT_GT(tr.population.exited, 0u);
  EXPECT_EQ(sim.batch(), batch_size(tr.injection_rate, cfg.dt_source));
}

TEST(Simulation, TunnelCaseSeedsAndAdvances) {
  const auto& p = paper_setup();
  auto cfg = tunnel_config(3.0);
  cfg.duration = 5.0;
  cfg.collisions = true;
  Simulation sim(p.grid, p.fit, NozzleGeometry{}, cfg);
  const auto seeded = sim.trace().population.seeded;
  EXPECT_GT(seeded, 0u);
  const auto& tr = sim.run();
  EXPECT_TRUE(tr.population.balanced());
  EXPECT_EQ(tr.population.injected, 0u);
  double max_x = 0.0;
  for (const auto& a : sim.agents())
    if (a.active()) max_x = std::max(max_x, a.position.x);
  EXPECT_GT(max_x, 3.5);
}

TEST(Simulation, ConfigValidation) {
  SimConfig c;
  c.dt = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.scale = 1.5;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.duration = -1.0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(RunIo, SaveLoadRoundTrip) {
  const auto& p = paper_setup();
  SimConfig cfg;
  cfg.duration = 5.0;
  cfg.collisions = true;
  Simulation sim(p.grid, p.fit, NozzleGeometry{}, cfg);
  const auto& tr = sim.run();
  const auto dir = (std::filesystem::temp_directory_path() / "fs_run_roundtrip").string();
  std::filesystem::remove_all(dir);
  save_run(dir, cfg, tr);
  const auto l = load_run(dir);
  ASSERT_EQ(l.trace.frames.size(), tr.frames.size());
  EXPECT_EQ(l.trace.events.size(), tr.events.size());
  EXPECT_EQ(l.trace.population.injected, tr.population.injected);
  EXPECT_NEAR(l.trace.fill_time, tr.fill_time, 1e-9);
  for (std::size_t k = 0; k < tr.frames.size(); ++k) {
    const auto& a = tr.frames[k];
    const auto& b = l.trace.frames[k];
    EXPECT_NEAR(a.t, b.t, 1e-12);
    EXPECT_EQ(a.injected, b.injected);
    ASSERT_EQ(a.cells.size(), b.cells.size());
    for (std::size_t c = 0; c < a.cells.size(); ++c) {
      EXPECT_EQ(a.cells[c].cell, b.cells[c].cell);
      EXPECT_EQ(a.cells[c].n, b.cells[c].n);
      EXPECT_NEAR(norm(a.cells[c].mean_velocity - b.cells[c].mean_velocity), 0.0, 1e-10);
      if (std::isnan(a.cells[c].dev_sq_target)) {
        EXPECT_TRUE(std::isnan(b.cells[c].dev_sq_target));
      } else {
        EXPECT_NEAR(a.cells[c].dev_sq_target, b.cells[c].dev_sq_target, 1e-10 * std::max(1.0, a.cells[c].dev_sq_target));
      }
    }
  }
  EXPECT_EQ(to_string(parse_scenario("reservoir")), std::string("reservoir"));
  EXPECT_THROW(parse_scenario("lake"), ValidationError);
}
