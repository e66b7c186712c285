#pragma once

// Run directory layout:
//   config.txt        key=value snapshot of the simulation settings
//   frames.csv        per-frame population counters
//   cells.csv         per-frame, per-occupied-cell records
//   events.csv        injections, retirements, collisions
//   trajectories.csv  decimated agent samples (only when recorded)

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "csv.hpp"
#include "errors.hpp"
#include "swarm_sim.hpp"

namespace fluidswarm {

using KeyValues = std::map<std::string, std::string>;

inline const char* to_string(Scenario s) { return s == Scenario::reservoir ? "reservoir" : "tunnel"; }
inline const char* to_string(CommandMode m) { return m == CommandMode::mean ? "mean" : "cycle"; }

inline Scenario parse_scenario(const std::string& s) {
  if (s == "reservoir" || s == "2") return Scenario::reservoir;
  if (s == "tunnel" || s == "1") return Scenario::tunnel_seeding;
  throw ValidationError("unknown case: " + s);
}

inline CommandMode parse_command_mode(const std::string& s) {
  if (s == "mean") return CommandMode::mean;
  if (s == "cycle") return CommandMode::cycle;
  throw ValidationError("unknown command mode: " + s);
}

inline KeyValues config_snapshot(const SimConfig& c) {
  return {{"case", to_string(c.scenario)},
          {"dt", csv::fmt(c.dt)},
          {"duration", csv::fmt(c.duration)},
          {"scale", csv::fmt(c.scale)},
          {"x_axial", csv::fmt(c.x_axial)},
          {"n_batch", std::to_string(c.n_batch)},
          {"dt_source", csv::fmt(c.dt_source)},
          {"collisions", c.collisions ? "1" : "0"},
          {"agent_radius", csv::fmt(c.agent_radius)},
          {"rng_seed", std::to_string(c.rng_seed)},
          {"retire_at_exit", c.retire_at_exit ? "1" : "0"},
          {"command_mode", to_string(c.command_mode)},
          {"cycle_dwell", csv::fmt(c.cycle_dwell)},
          {"agent_mass", csv::fmt(c.plant.mass)},
          {"speed_limit", csv::fmt(c.plant.speed_limit)},
          {"ff_gain", csv::fmt(c.plant.ff_gain)}};
}

inline void write_key_values(const std::string& path, const KeyValues& kv) {
  auto os = csv::open_out(path);
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline KeyValues read_key_values(const std::string& path) {
  auto is = csv::open_in(path);
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto t = csv::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ParseError(lineno, "expected key=value");
    kv[std::string(csv::trim(t.substr(0, eq)))] = std::string(csv::trim(t.substr(eq + 1)));
  }
  return kv;
}

inline void save_run(const std::string& dir, const SimConfig& cfg, const SimulationTrace& tr, KeyValues extra = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto kv = config_snapshot(cfg);
  kv["cell_volume"] = csv::fmt(tr.cell_volume);
  kv["fill_time"] = csv::fmt(tr.fill_time);
  kv["injection_rate"] = csv::fmt(tr.injection_rate);
  kv["seeded"] = std::to_string(tr.population.seeded);
  kv["injected"] = std::to_string(tr.population.injected);
  kv["exited"] = std::to_string(tr.population.exited);
  kv["escaped"] = std::to_string(tr.population.escaped);
  kv["faulted"] = std::to_string(tr.population.faulted);
  kv["active"] = std::to_string(tr.population.active);
  kv["trace_digest"] = std::to_string(trace_digest(tr));
  kv.merge(extra);
  write_key_values((fs::path(dir) / "config.txt").string(), kv);

  {
    auto os = csv::open_out((fs::path(dir) / "frames.csv").string());
    os << "frame,t,active,injected,exited\n";
    for (std::size_t i = 0; i < tr.frames.size(); ++i) {
      const auto& f = tr.frames[i];
      os << i << ',' << csv::fmt(f.t) << ',' << f.active << ',' << f.injected << ',' << f.exited << '\n';
    }
  }
  {
    auto os = csv::open_out((fs::path(dir) / "cells.csv").string());
    os << "frame,cell,n,ux,uy,uz,usx,usy,usz,p,p_int,temp,dev_sq\n";
    for (std::size_t i = 0; i < tr.frames.size(); ++i) {
      for (const auto& c : tr.frames[i].cells) {
        os << i << ',' << c.cell << ',' << c.n << ',' << csv::fmt(c.mean_velocity.x) << ',' << csv::fmt(c.mean_velocity.y)
           << ',' << csv::fmt(c.mean_velocity.z) << ',' << csv::fmt(c.u_s.x) << ',' << csv::fmt(c.u_s.y) << ','
           << csv::fmt(c.u_s.z) << ',' << csv::fmt(c.pressure) << ',' << csv::fmt(c.internal_pressure) << ','
           << csv::fmt(c.temperature) << ',' << csv::fmt(c.dev_sq_target) << '\n';
      }
    }
    if (!os) throw std::runtime_error("write failed: " + dir + "/cells.csv");
  }
  {
    auto os = csv::open_out((fs::path(dir) / "events.csv").string());
    os << "t,type,agent,other\n";
    for (const auto& e : tr.events) os << csv::fmt(e.t) << ',' << to_string(e.type) << ',' << e.agent << ',' << e.other << '\n';
  }
  if (!tr.trajectories.empty()) {
    auto os = csv::open_out((fs::path(dir) / "trajectories.csv").string());
    os << "t,id,x,y,z,vx,vy,vz\n";
    for (const auto& s : tr.trajectories) {
      os << csv::fmt(s.t) << ',' << s.id << ',' << csv::fmt(s.position.x) << ',' << csv::fmt(s.position.y) << ','
         << csv::fmt(s.position.z) << ',' << csv::fmt(s.velocity.x) << ',' << csv::fmt(s.velocity.y) << ','
         << csv::fmt(s.velocity.z) << '\n';
    }
  }
}

struct LoadedRun {
  SimulationTrace trace;
  KeyValues config;
};

namespace detail {

inline double kv_double(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ValidationError("run config missing key: " + key);
  return csv::to_double(it->second, 0);
}

inline EventType parse_event(std::string_view s, std::size_t line) {
  for (int i = 0; i <= static_cast<int>(EventType::collision_perpendicular); ++i) {
    if (s == to_string(static_cast<EventType>(i))) return static_cast<EventType>(i);
  }
  throw ParseError(line, "unknown event type");
}

}  // namespace detail

/// Reads the frames, cell records and events of a run directory.
inline LoadedRun load_run(const std::string& dir) {
  namespace fs = std::filesystem;
  LoadedRun out;
  out.config = read_key_values((fs::path(dir) / "config.txt").string());
  auto& tr = out.trace;
  tr.dt = detail::kv_double(out.config, "dt");
  tr.scale = detail::kv_double(out.config, "scale");
  tr.agent_mass = detail::kv_double(out.config, "agent_mass");
  tr.cell_volume = detail::kv_double(out.config, "cell_volume");
  tr.fill_time = detail::kv_double(out.config, "fill_time");
  tr.injection_rate = detail::kv_double(out.config, "injection_rate");

  std::string line;
  {
    auto is = csv::open_in((fs::path(dir) / "frames.csv").string());
    std::size_t lineno = 1;
    std::getline(is, line);
    while (std::getline(is, line)) {
      ++lineno;
      if (csv::trim(line).empty()) continue;
      const auto c = csv::split(line);
      if (c.size() != 5) throw ParseError(lineno, "frames.csv: expected 5 columns");
      Frame f;
      f.t = csv::to_double(c[1], lineno);
      f.active = static_cast<std::size_t>(csv::to_int(c[2], lineno));
      f.injected = static_cast<std::size_t>(csv::to_int(c[3], lineno));
      f.exited = static_cast<std::size_t>(csv::to_int(c[4], lineno));
      tr.frames.push_back(std::move(f));
    }
  }
  {
    auto is = csv::open_in((fs::path(dir) / "cells.csv").string());
    std::size_t lineno = 1;
    std::getline(is, line);
    while (std::getline(is, line)) {
      ++lineno;
      if (csv::trim(line).empty()) continue;
      const auto c = csv::split(line);
      if (c.size() != 13) throw ParseError(lineno, "cells.csv: expected 13 columns");
      const auto frame = static_cast<std::size_t>(csv::to_int(c[0], lineno));
      if (frame >= tr.frames.size()) throw ParseError(lineno, "cells.csv: frame index out of range");
      CellFrame cf;
      cf.cell = static_cast<std::size_t>(csv::to_int(c[1], lineno));
      cf.n = static_cast<std::size_t>(csv::to_int(c[2], lineno));
      cf.mean_velocity = {csv::to_double(c[3], lineno), csv::to_double(c[4], lineno), csv::to_double(c[5], lineno)};
      cf.u_s = {csv::to_double(c[6], lineno), csv::to_double(c[7], lineno), csv::to_double(c[8], lineno)};
      cf.pressure = csv::to_double(c[9], lineno);
      cf.internal_pressure = csv::to_double(c[10], lineno);
      cf.temperature = csv::to_double(c[11], lineno);
      cf.dev_sq_target = csv::to_double(c[12], lineno);
      tr.frames[frame].cells.push_back(cf);
    }
  }
  {
    auto is = csv::open_in((fs::path(dir) / "events.csv").string());
    std::size_t lineno = 1;
    std::getline(is, line);
    while (std::getline(is, line)) {
      ++lineno;
      if (csv::trim(line).empty()) continue;
      const auto c = csv::split(line);
      if (c.size() != 4) throw ParseError(lineno, "events.csv: expected 4 columns");
      tr.events.push_back({csv::to_double(c[0], lineno), detail::parse_event(c[1], lineno),
                           static_cast<std::uint64_t>(csv::to_int(c[2], lineno)),
                           static_cast<std::uint64_t>(csv::to_int(c[3], lineno))});
    }
  }
  auto count = [&](const char* k) {
    auto it = out.config.find(k);
    return it == out.config.end() ? std::size_t{0} : static_cast<std::size_t>(std::stoull(it->second));
  };
  tr.population = {count("seeded"), count("injected"), count("active"), count("exited"), count("escaped"), count("faulted")};
  return out;
}

}  // namespace fluidswarm
