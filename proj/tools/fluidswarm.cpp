// Command-line front end: generate-field, partition, fit, plant-test,
// simulate, analyze, version.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "fluidswarm.hpp"

namespace fs = std::filesystem;
using namespace fluidswarm;

namespace {

struct GeometryOptions {
  NozzleGeometry g;

  void add(CLI::App* app) {
    app->add_option("--length", g.length_x, "Nozzle length, m")->capture_default_str();
    app->add_option("--inlet-diameter", g.inlet_diameter, "Inlet diameter, m")->capture_default_str();
    app->add_option("--outlet-diameter", g.outlet_diameter, "Outlet diameter, m")->capture_default_str();
    app->add_option("--throat-diameter", g.throat_diameter, "Throat diameter, m")->capture_default_str();
    app->add_option("--throat-x", g.throat_x, "Throat axial position, m")->capture_default_str();
  }
};

csv::Metadata geometry_metadata(const NozzleGeometry& g) {
  return {{"length_x", csv::fmt(g.length_x)},
          {"inlet_diameter", csv::fmt(g.inlet_diameter)},
          {"outlet_diameter", csv::fmt(g.outlet_diameter)},
          {"throat_diameter", csv::fmt(g.throat_diameter)},
          {"throat_x", csv::fmt(g.throat_x)}};
}

NozzleGeometry geometry_from_metadata(const csv::Metadata& m) {
  NozzleGeometry g;
  auto get = [&](const char* k, double& v) {
    if (auto it = m.find(k); it != m.end()) v = csv::to_double(it->second, 0);
  };
  get("length_x", g.length_x);
  get("inlet_diameter", g.inlet_diameter);
  get("outlet_diameter", g.outlet_diameter);
  get("throat_diameter", g.throat_diameter);
  get("throat_x", g.throat_x);
  g.validate();
  return g;
}

// Resolves a path stored in file metadata relative to that file's directory.
std::string sibling(const std::string& file, const std::string& stored) {
  const fs::path p(stored);
  return p.is_absolute() ? stored : (fs::path(file).parent_path() / p).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fluid-analogy velocity commands for quadrotor swarms"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  unsigned threads = 1;
  app.add_option("--seed", seed, "Random seed")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads (results do not depend on this)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  // generate-field
  auto* gen = app.add_subcommand("generate-field", "Write the analytic quasi-1D nozzle field as CSV");
  GeometryOptions gen_geom;
  gen_geom.add(gen);
  GasModel gas;
  std::size_t stations = 121, rings = 16;
  std::string gen_out = "field.csv";
  gen->add_option("--inlet-speed", gas.inlet_speed, "Inlet speed, m/s")->capture_default_str();
  gen->add_option("--stations", stations, "Axial stations")->capture_default_str();
  gen->add_option("--rings", rings, "Radial rings per station")->capture_default_str();
  gen->add_option("--out", gen_out, "Output CSV")->capture_default_str();

  // partition
  auto* part = app.add_subcommand("partition", "Average a field into cubic control volumes");
  GeometryOptions part_geom;
  part_geom.add(part);
  std::string part_field, part_out = "partition.csv", rule = "overlap";
  double edge = 0.5;
  part->add_option("--field", part_field, "Field CSV")->required();
  part->add_option("--edge", edge, "Cell edge length, m")->check(CLI::PositiveNumber)->capture_default_str();
  part->add_option("--rule", rule, "Cell membership rule")->check(CLI::IsMember({"overlap", "center"}))->capture_default_str();
  part->add_option("--out", part_out, "Output CSV")->capture_default_str();

  // fit
  auto* fit = app.add_subcommand("fit", "Fit per-cell agent velocity sets");
  std::string fit_partition, fit_out = "fit.csv";
  FitConfig fit_cfg;
  fit->add_option("--partition", fit_partition, "Partition CSV")->required();
  fit->add_option("--n-min", fit_cfg.n_min, "Smallest agent count")->capture_default_str();
  fit->add_option("--n-max", fit_cfg.n_max, "Largest agent count")->capture_default_str();
  fit->add_option("--epsilon", fit_cfg.epsilon, "Convergence tolerance")->capture_default_str();
  fit->add_option("--alpha", fit_cfg.alpha, "Mean/variance weighting")->capture_default_str();
  fit->add_option("--out", fit_out, "Output CSV")->capture_default_str();

  // plant-test
  auto* plant = app.add_subcommand("plant-test", "Run the plant test suite");
  std::string plant_out;
  plant->add_option("--out", plant_out, "Results CSV (stdout when omitted)");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run a swarm scenario");
  SimConfig sim_cfg;
  std::string sim_case = "reservoir", sim_fit, sim_partition, sim_out = "run", sim_mode = "mean";
  sim->add_option("--case", sim_case, "reservoir | tunnel")->check(CLI::IsMember({"reservoir", "tunnel", "1", "2"}))->capture_default_str();
  sim->add_option("--dt", sim_cfg.dt, "Frame step, s")->capture_default_str();
  sim->add_option("--duration", sim_cfg.duration, "Run length, s")->capture_default_str();
  sim->add_option("--scale", sim_cfg.scale, "Command scale factor")->capture_default_str();
  sim->add_option("--seed", seed, "Random seed");
  sim->add_flag("--collisions", sim_cfg.collisions, "Enable the collision layer");
  sim->add_option("--fit", sim_fit, "Fit CSV")->required();
  sim->add_option("--partition", sim_partition, "Partition CSV (default: the one recorded in the fit file)");
  sim->add_option("--x-axial", sim_cfg.x_axial, "Tunnel seeding limit, m")->capture_default_str();
  sim->add_option("--n-batch", sim_cfg.n_batch, "Agents per injection batch (0 = from entry rate)")->capture_default_str();
  sim->add_option("--command-mode", sim_mode, "mean | cycle")->check(CLI::IsMember({"mean", "cycle"}))->capture_default_str();
  sim->add_option("--trajectory-every", sim_cfg.trajectory_every, "Record positions every k frames (0 = off)");
  sim->add_option("--out", sim_out, "Run directory")->capture_default_str();

  // analyze
  auto* ana = app.add_subcommand("analyze", "Derive fields from a run and score them against targets");
  std::string ana_run, ana_targets, ana_out;
  double window_start = -1.0;
  ana->add_option("--run", ana_run, "Run directory")->required();
  ana->add_option("--targets", ana_targets, "Partition CSV with targets")->required();
  ana->add_option("--out", ana_out, "Output directory")->required();
  ana->add_option("--window-start", window_start, "Averaging start time, s (default: one axial transit)");

  app.add_subcommand("version", "Print the version");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto field = generate_quasi1d_field(gen_geom.g, gas, stations, rings);
      save_field(field, gen_out);
      std::cout << "nodes=" << field.nodes.size() << "\nout=" << gen_out << '\n';
    } else if (*part) {
      const auto field = load_field(part_field, part_geom.g);
      const auto grid = partition_domain(field, part_geom.g, edge, {},
                                         rule == "center" ? MembershipRule::center : MembershipRule::overlap);
      save_partition(grid, part_out, geometry_metadata(part_geom.g));
      std::cout << "cells=" << grid.size() << "\ninside_domain=" << grid.inside_count()
                << "\nwith_targets=" << grid.target_count() << "\ndropped_nodes=" << grid.dropped_nodes << "\nout=" << part_out
                << '\n';
    } else if (*fit) {
      const auto loaded = load_partition(fit_partition);
      fit_cfg.rng_seed = seed;
      fit_cfg.cell_volume = loaded.grid.cell_volume();
      const auto result = fit_grid(loaded.grid, fit_cfg, threads);
      csv::Metadata extra{{"partition", fs::absolute(fit_partition).string()}};
      save_fit(result, fit_out, extra);
      std::cout << "cells=" << result.cells.size() << "\nunconverged=" << result.unconverged()
                << "\npressure_offset=" << csv::fmt(result.pressure_offset) << "\nout=" << fit_out << '\n';
    } else if (*plant) {
      const auto rows = run_plant_suite(PlantParams{});
      bool ok = true;
      for (const auto& r : rows) ok = ok && r.pass();
      if (plant_out.empty()) {
        write_plant_table(std::cout, rows);
      } else {
        auto os = csv::open_out(plant_out);
        write_plant_table(os, rows);
        std::cout << "out=" << plant_out << '\n';
      }
      std::cout << "plant_suite=" << (ok ? "PASS" : "FAIL") << '\n';
      return ok ? 0 : 1;
    } else if (*sim) {
      const auto fitted = load_fit(sim_fit);
      std::string part_path = sim_partition;
      if (part_path.empty()) {
        auto it = fitted.meta.find("partition");
        if (it == fitted.meta.end()) throw ValidationError("fit file names no partition; pass --partition");
        part_path = sibling(sim_fit, it->second);
      }
      const auto loaded = load_partition(part_path);
      const auto geom = geometry_from_metadata(loaded.meta);
      sim_cfg.scenario = parse_scenario(sim_case);
      sim_cfg.command_mode = parse_command_mode(sim_mode);
      sim_cfg.rng_seed = seed;
      sim_cfg.threads = threads;
      Simulation s(loaded.grid, fitted.fit, geom, sim_cfg);
      const auto& trace = s.run();
      save_run(sim_out, sim_cfg, trace,
               {{"pressure_offset", csv::fmt(fitted.fit.pressure_offset)}, {"partition", fs::absolute(part_path).string()}});
      const auto& p = trace.population;
      std::cout << "frames=" << trace.frames.size() << "\nseeded=" << p.seeded << "\ninjected=" << p.injected
                << "\nexited=" << p.exited << "\nescaped=" << p.escaped << "\nfaulted=" << p.faulted << "\nactive=" << p.active
                << "\nout=" << sim_out << '\n';
    } else if (*ana) {
      const auto run = load_run(ana_run);
      const auto loaded = load_partition(ana_targets);
      DeriveOptions opt;
      opt.window_start = window_start >= 0.0 ? window_start : default_window_start(run.trace);
      if (auto it = run.config.find("pressure_offset"); it != run.config.end()) opt.pressure_offset = std::stod(it->second);
      const auto derived = derive_fields(run.trace, loaded.grid, opt);
      const auto report = make_report(derived, loaded.grid, run.trace);
      fs::create_directories(ana_out);
      {
        auto os = csv::open_out((fs::path(ana_out) / "metrics.txt").string());
        write_report(os, report);
      }
      export_slice(derived, loaded.grid, (fs::path(ana_out) / "slice_xz.csv").string());
      export_centerline(derived, loaded.grid, (fs::path(ana_out) / "centerline.csv").string());
      write_residuals(derived, loaded.grid, (fs::path(ana_out) / "residuals.csv").string());
      write_report(std::cout, report);
    } else {
      std::cout << "fluidswarm " << kVersion << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
