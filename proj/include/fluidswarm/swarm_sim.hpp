#pragma once

// Agent-based swarm simulation: location-indexed velocity broadcast, per-agent
// plants, optional collision layer, and per-frame cell statistics.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"
#include "partition.hpp"
#include "primitives.hpp"
#include "reference_field.hpp"
#include "vec3.hpp"
#include "velocity_fit.hpp"
#include "velocity_plant.hpp"

namespace fluidswarm {

enum class Scenario { tunnel_seeding, reservoir };

/// How a cell turns its fitted velocity set into the single broadcast command.
enum class CommandMode {
  mean,   ///< the fitted set's mean
  cycle,  ///< fitted velocity floor(t / dwell) mod N*, same index for every agent in the cell
};

struct CollisionConfig {
  double overtake_speed = 0.5;                        ///< closing speed marking a one-way overtake, m/s
  double same_direction_cos = 0.7;                    ///< heading alignment required for one-way
  double head_on_cos = std::numbers::sqrt2 / 2.0;     ///< |cos| at or above this is head-on
  double one_way_transfer = 0.25;                     ///< fraction of the speed gap moved
  double head_on_loss = 0.10;                         ///< pair kinetic energy dissipated
  double perpendicular_loss = 0.20;
  double speed_min = 0.0;
  double speed_max = 10.0;
};

struct SimConfig {
  Scenario scenario = Scenario::reservoir;
  double dt = 0.05;
  double duration = 60.0;
  double scale = 0.1;
  double x_axial = 3.0;
  int n_batch = 0;  ///< 0 sizes batches from the entry density and speed
  double dt_source = 0.5;
  bool collisions = false;
  double agent_radius = 0.15;
  CollisionConfig collision;
  std::uint64_t rng_seed = 0;
  bool retire_at_exit = true;
  CommandMode command_mode = CommandMode::mean;
  double cycle_dwell = 0.05;
  Vec3 drift{1.0, 0.0, 0.0};
  Vec3 wind;
  PlantParams plant;
  ConstitutiveParams constitutive;
  unsigned threads = 1;
  bool record_cells = true;
  int trajectory_every = 0;  ///< record every k-th frame's positions; 0 disables

  void validate() const {
    if (!(dt > 0.0)) throw ValidationError("dt must be positive");
    if (!(duration > 0.0)) throw ValidationError("duration must be positive");
    if (!(scale > 0.0 && scale <= 1.0)) throw ValidationError("scale must lie in (0, 1]");
    if (!(dt_source > 0.0)) throw ValidationError("dt_source must be positive");
    if (!(agent_radius > 0.0)) throw ValidationError("agent radius must be positive");
    if (!(cycle_dwell > 0.0)) throw ValidationError("cycle dwell must be positive");
    if (std::abs(norm(drift) - 1.0) > 1e-9) throw ValidationError("drift must be a unit vector");
    plant.validate();
  }

  std::size_t frame_count() const { return static_cast<std::size_t>(std::llround(duration / dt)); }
};

enum class AgentStatus { active, exited, escaped, faulted };

struct AgentState {
  std::uint64_t id = 0;
  Vec3 position;
  PlantState plant;
  std::size_t cell = 0;  ///< flattened cell index from the latest assignment
  AgentStatus status = AgentStatus::active;
  bool outside_wall = false;

  bool active() const { return status == AgentStatus::active; }
};

/// Per-cell statistics of one frame (occupied cells only).
struct CellFrame {
  std::size_t cell = 0;
  std::size_t n = 0;
  Vec3 mean_velocity;
  Vec3 u_s;
  double pressure = 0.0;           ///< kinetic form (2/(3 dV)) sum m |v|^2
  double internal_pressure = 0.0;  ///< about u_s
  double temperature = 0.0;
  double dev_sq_target = 0.0;      ///< sum |v_i - S v_target|^2, NaN when the cell has no target
};

struct Frame {
  double t = 0.0;
  std::size_t active = 0;
  std::size_t injected = 0;
  std::size_t exited = 0;
  std::vector<CellFrame> cells;
};

enum class EventType { seed, inject, exit, escape, wall_escape, fault, collision_one_way, collision_head_on, collision_perpendicular };

inline const char* to_string(EventType e) {
  switch (e) {
    case EventType::seed: return "seed";
    case EventType::inject: return "inject";
    case EventType::exit: return "exit";
    case EventType::escape: return "escape";
    case EventType::wall_escape: return "wall_escape";
    case EventType::fault: return "fault";
    case EventType::collision_one_way: return "collision_one_way";
    case EventType::collision_head_on: return "collision_head_on";
    case EventType::collision_perpendicular: return "collision_perpendicular";
  }
  return "?";
}

struct Event {
  double t = 0.0;
  EventType type = EventType::seed;
  std::uint64_t agent = 0;
  std::uint64_t other = 0;
};

struct TrajectorySample {
  double t = 0.0;
  std::uint64_t id = 0;
  Vec3 position;
  Vec3 velocity;
};

struct Population {
  std::size_t seeded = 0;
  std::size_t injected = 0;
  std::size_t active = 0;
  std::size_t exited = 0;
  std::size_t escaped = 0;
  std::size_t faulted = 0;

  bool balanced() const { return active + exited + escaped + faulted == seeded + injected; }
};

struct SimulationTrace {
  double dt = 0.0;
  double scale = 1.0;
  double agent_mass = 1.0;
  double cell_volume = 1.0;
  std::vector<Frame> frames;
  std::vector<Event> events;
  std::vector<TrajectorySample> trajectories;
  Population population;
  double injection_rate = 0.0;  ///< agents/s from the entry sizing (reservoir)
  double fill_time = 0.0;       ///< axial transit time at the scaled command speed
};

namespace detail {

struct Digest {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  void add(std::uint64_t v) { h = mix_seed(h, v); }
  void add(double v) { add(std::bit_cast<std::uint64_t>(v)); }
  void add(const Vec3& v) {
    add(v.x);
    add(v.y);
    add(v.z);
  }
};

}  // namespace detail

/// Hash over the exact bit patterns of every recorded value; equal digests
/// mean bitwise-identical traces (up to hash collisions).
inline std::uint64_t trace_digest(const SimulationTrace& tr) {
  detail::Digest d;
  d.add(tr.frames.size());
  for (const auto& f : tr.frames) {
    d.add(f.t);
    d.add(f.active);
    d.add(f.injected);
    d.add(f.exited);
    d.add(f.cells.size());
    for (const auto& c : f.cells) {
      d.add(c.cell);
      d.add(c.n);
      d.add(c.mean_velocity);
      d.add(c.u_s);
      d.add(c.pressure);
      d.add(c.internal_pressure);
      d.add(c.temperature);
      d.add(c.dev_sq_target);
    }
  }
  d.add(tr.events.size());
  for (const auto& e : tr.events) {
    d.add(e.t);
    d.add(static_cast<std::uint64_t>(e.type));
    d.add(e.agent);
    d.add(e.other);
  }
  d.add(tr.trajectories.size());
  for (const auto& s : tr.trajectories) {
    d.add(s.t);
    d.add(s.id);
    d.add(s.position);
    d.add(s.velocity);
  }
  return d.h;
}

// --- commands --------------------------------------------------------------

/// Scaled per-cell command table. Cells without a fit borrow the nearest fitted
/// cell's command (lowest flattened index on ties).
class CommandField {
 public:
  CommandField() = default;
  CommandField(const ControlVolumeGrid& grid, const GridFit& fit, double scale, CommandMode mode, double dwell)
      : mode_(mode), dwell_(dwell), scale_(scale), source_(grid.size()), sets_(grid.size()) {
    std::vector<std::size_t> fitted;
    for (const auto& [j, r] : fit.cells) {
      if (!grid.in_bounds(j) || r.velocities.empty()) continue;
      const std::size_t f = grid.flatten(j);
      sets_[f] = scale_commands(r, scale);
      fitted.push_back(f);
    }
    if (fitted.empty()) throw ValidationError("no fitted cells to command");
    std::sort(fitted.begin(), fitted.end());
    for (std::size_t f = 0; f < grid.size(); ++f) {
      if (!sets_[f].empty()) {
        source_[f] = f;
        continue;
      }
      const Vec3 c = grid[f].center;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t g : fitted) {
        const double d = norm2(grid[g].center - c);
        if (d < best) {
          best = d;
          source_[f] = g;
        }
      }
    }
    means_.resize(grid.size());
    for (std::size_t f = 0; f < grid.size(); ++f) {
      const auto& set = sets_[source_[f]];
      Vec3 s;
      for (const auto& v : set) s += v;
      means_[f] = s / static_cast<double>(set.size());
    }
  }

  /// Command broadcast to every agent in cell `f` at time t.
  Vec3 command(std::size_t f, double t) const {
    if (mode_ == CommandMode::mean) return means_[f];
    const auto& set = sets_[source_[f]];
    const auto k = static_cast<std::size_t>(std::floor(t / dwell_ + 1e-9)) % set.size();
    return set[k];
  }
  const std::vector<Vec3>& fitted_set(std::size_t f) const { return sets_[source_[f]]; }
  std::size_t source(std::size_t f) const { return source_[f]; }
  bool has_own_fit(std::size_t f) const { return !sets_[f].empty(); }
  double scale() const { return scale_; }

 private:
  CommandMode mode_ = CommandMode::mean;
  double dwell_ = 0.05;
  double scale_ = 1.0;
  std::vector<std::size_t> source_;
  std::vector<std::vector<Vec3>> sets_;
  std::vector<Vec3> means_;
};

/// Plant state flying steadily at `v`: thrust balances gravity and drag.
inline PlantState trimmed_state(const PlantParams& p, const Vec3& v, const Vec3& wind) {
  PlantState s;
  s.velocity = v;
  s.thrust_accel = Vec3{0.0, 0.0, -p.gravity} - drag_force(p, v - wind) / p.mass;
  return s;
}

// --- seeding and injection -------------------------------------------------

/// Case 1: N* agents uniformly inside every fitted cell with center x <= x_axial;
/// agent k of a cell starts at its k-th scaled fitted velocity.
inline std::vector<AgentState> seed_tunnel(const ControlVolumeGrid& grid, const GridFit& fit, const SimConfig& cfg,
                                           std::uint64_t first_id = 0) {
  std::vector<AgentState> out;
  std::uint64_t id = first_id;
  const double e = grid.edge();
  for (const auto& [j, r] : fit.cells) {
    const std::size_t f = grid.flatten(j);
    const Cell& c = grid[f];
    if (c.center.x > cfg.x_axial || r.n_star <= 0) continue;
    const auto cmds = scale_commands(r, cfg.scale);
    for (int k = 0; k < r.n_star; ++k) {
      std::mt19937_64 rng(mix_seed(cfg.rng_seed, id));
      std::uniform_real_distribution<double> u(-0.5, 0.5);
      AgentState a;
      a.id = id++;
      a.position = c.center + Vec3{u(rng) * e, u(rng) * e, u(rng) * e};
      a.plant = trimmed_state(cfg.plant, cmds[static_cast<std::size_t>(k)], cfg.wind);
      a.cell = f;
      out.push_back(a);
    }
  }
  return out;
}

/// Eq. (21)-style entry rate for one cell column: N* |v| / l agents per second.
inline double injection_rate(double n_entry, double entry_speed, double edge) { return n_entry * entry_speed / edge; }

/// Nearest-integer batch size for a source interval.
inline int batch_size(double rate, double dt_source) { return static_cast<int>(std::llround(rate * dt_source)); }

/// Total reservoir rate: the per-column rate averaged over the fitted inlet
/// cells (jx = 0) times the number of cell faces the inlet disc covers.
inline double reservoir_rate(const ControlVolumeGrid& grid, const GridFit& fit, const NozzleGeometry& geom, double scale) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [j, r] : fit.cells) {
    if (j.jx != 0 || r.velocities.empty()) continue;
    const Vec3 mean = offset_mean(r.velocities, r.velocities.front());
    sum += injection_rate(r.n_star, scale * norm(mean), grid.edge());
    ++n;
  }
  if (n == 0) return 0.0;
  const double faces = area_at(geom, 0.0) / (grid.edge() * grid.edge());
  return faces * sum / static_cast<double>(n);
}

/// Case 2: `count` agents uniform over the inlet disc, x uniform in [0, l),
/// each starting at the command of the cell it lands in.
inline std::vector<AgentState> inject_batch(const ControlVolumeGrid& grid, const CommandField& commands,
                                            const NozzleGeometry& geom, const SimConfig& cfg, double t, int count,
                                            std::uint64_t first_id) {
  std::vector<AgentState> out;
  const double r0 = radius_at(geom, 0.0);
  for (int k = 0; k < count; ++k) {
    const std::uint64_t id = first_id + static_cast<std::uint64_t>(k);
    std::mt19937_64 rng(mix_seed(cfg.rng_seed, id));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AgentState a;
    a.id = id;
    const double rr = r0 * std::sqrt(u(rng));
    const double th = 2.0 * std::numbers::pi * u(rng);
    a.position = {u(rng) * grid.edge(), rr * std::cos(th), rr * std::sin(th)};
    const auto j = assign_cell(grid, a.position);
    a.cell = grid.flatten(*j);
    a.plant = trimmed_state(cfg.plant, commands.command(a.cell, t), cfg.wind);
    out.push_back(a);
  }
  return out;
}

// --- collisions -------------------------------------------------------------

enum class CollisionKind { one_way, head_on, perpendicular };

struct CollisionPair {
  std::size_t a = 0;  ///< index into the agent vector, a < b
  std::size_t b = 0;
  CollisionKind kind = CollisionKind::head_on;
};

inline double cosine(const Vec3& u, const Vec3& v) {
  const double nu = norm(u), nv = norm(v);
  return (nu > 0.0 && nv > 0.0) ? dot(u, v) / (nu * nv) : 0.0;
}

inline CollisionKind classify_collision(const Vec3& pa, const Vec3& va, const Vec3& pb, const Vec3& vb,
                                        const CollisionConfig& cc) {
  const Vec3 sep = pb - pa;
  const double d = norm(sep);
  const double closing = d > 0.0 ? -dot(vb - va, sep) / d : norm(vb - va);
  const double align = cosine(va, vb);
  if (closing > cc.overtake_speed && align > cc.same_direction_cos) return CollisionKind::one_way;
  return std::abs(align) >= cc.head_on_cos ? CollisionKind::head_on : CollisionKind::perpendicular;
}

/// All active pairs closer than two radii, found through a uniform hash with
/// bucket size 2r. Pairs come back sorted by (a, b).
inline std::vector<CollisionPair> detect_collisions(std::span<const AgentState> agents, const SimConfig& cfg) {
  const double bucket = 2.0 * cfg.agent_radius;
  const double reach2 = bucket * bucket;
  struct Key {
    long long x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      return static_cast<std::size_t>(mix_seed(mix_seed(static_cast<std::uint64_t>(k.x), static_cast<std::uint64_t>(k.y)),
                                               static_cast<std::uint64_t>(k.z)));
    }
  };
  auto key_of = [&](const Vec3& p) {
    return Key{static_cast<long long>(std::floor(p.x / bucket)), static_cast<long long>(std::floor(p.y / bucket)),
               static_cast<long long>(std::floor(p.z / bucket))};
  };
  std::unordered_map<Key, std::vector<std::size_t>, KeyHash> buckets;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (agents[i].active()) buckets[key_of(agents[i].position)].push_back(i);
  }

  std::vector<CollisionPair> pairs;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (!agents[i].active()) continue;
    const Key k = key_of(agents[i].position);
    for (long long dx = -1; dx <= 1; ++dx)
      for (long long dy = -1; dy <= 1; ++dy)
        for (long long dz = -1; dz <= 1; ++dz) {
          auto it = buckets.find({k.x + dx, k.y + dy, k.z + dz});
          if (it == buckets.end()) continue;
          for (std::size_t j : it->second) {
            if (j <= i) continue;
            if (norm2(agents[j].position - agents[i].position) < reach2) {
              pairs.push_back({i, j,
                               classify_collision(agents[i].position, agents[i].plant.velocity, agents[j].position,
                                                  agents[j].plant.velocity, cfg.collision)});
            }
          }
        }
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& l, const auto& r) { return std::tie(l.a, l.b) < std::tie(r.a, r.b); });
  return pairs;
}

namespace detail {

inline Vec3 with_speed(const Vec3& v, double speed) {
  const double n = norm(v);
  return n > 0.0 ? v * (speed / n) : v;
}

}  // namespace detail

/// Speed-only momentum exchange; velocity directions are never changed. An
/// agent at rest has no direction and keeps zero speed.
inline void resolve_collisions(std::span<const CollisionPair> pairs, std::span<AgentState> agents, const SimConfig& cfg) {
  const auto& cc = cfg.collision;
  auto clamp_speed = [&](double s) { return std::clamp(s, cc.speed_min, cc.speed_max); };
  for (const auto& p : pairs) {
    Vec3& va = agents[p.a].plant.velocity;
    Vec3& vb = agents[p.b].plant.velocity;
    const double sa = norm(va), sb = norm(vb);
    double na = sa, nb = sb;
    switch (p.kind) {
      case CollisionKind::one_way: {
        const double shift = cc.one_way_transfer * std::abs(sa - sb);
        if (sa >= sb) {
          na = sa - shift;
          nb = sb + shift;
        } else {
          na = sa + shift;
          nb = sb - shift;
        }
        break;
      }
      case CollisionKind::head_on:
      case CollisionKind::perpendicular: {
        const double loss = p.kind == CollisionKind::head_on ? cc.head_on_loss : cc.perpendicular_loss;
        const double k = std::sqrt(1.0 - loss);
        na = sa * k;
        nb = sb * k;
        break;
      }
    }
    if (sa > 0.0) va = detail::with_speed(va, clamp_speed(na));
    if (sb > 0.0) vb = detail::with_speed(vb, clamp_speed(nb));
  }
}

// --- simulation -------------------------------------------------------------

/// Axial transit time through the fitted command field: sum over x-layers of
/// l / (mean scaled command speed of the layer).
inline double axial_fill_time(const ControlVolumeGrid& grid, const GridFit& fit, double scale) {
  std::map<int, std::pair<double, int>> layers;
  for (const auto& [j, r] : fit.cells) {
    if (r.velocities.empty()) continue;
    auto& [s, n] = layers[j.jx];
    s += scale * norm(offset_mean(r.velocities, r.velocities.front()));
    ++n;
  }
  double t = 0.0;
  for (const auto& [jx, sn] : layers) {
    const double v = sn.first / sn.second;
    if (v > 0.0) t += grid.edge() / v;
  }
  return t;
}

class Simulation {
 public:
  Simulation(ControlVolumeGrid grid, GridFit fit, NozzleGeometry geom, SimConfig cfg)
      : grid_(std::move(grid)), fit_(std::move(fit)), geom_(geom), cfg_(cfg) {
    cfg_.validate();
    commands_ = CommandField(grid_, fit_, cfg_.scale, cfg_.command_mode, cfg_.cycle_dwell);
    trace_.dt = cfg_.dt;
    trace_.scale = cfg_.scale;
    trace_.agent_mass = cfg_.plant.mass;
    trace_.cell_volume = grid_.cell_volume();
    trace_.fill_time = axial_fill_time(grid_, fit_, cfg_.scale);
    source_frames_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg_.dt_source / cfg_.dt)));
    if (cfg_.scenario == Scenario::reservoir) {
      trace_.injection_rate = reservoir_rate(grid_, fit_, geom_, cfg_.scale);
      batch_ = cfg_.n_batch > 0 ? cfg_.n_batch : batch_size(trace_.injection_rate, cfg_.dt_source);
    } else {
      for (auto& a : seed_tunnel(grid_, fit_, cfg_, next_id_)) {
        trace_.events.push_back({0.0, EventType::seed, a.id, 0});
        agents_.push_back(a);
      }
      next_id_ += agents_.size();
      trace_.population.seeded = agents_.size();
    }
  }

  const ControlVolumeGrid& grid() const { return grid_; }
  const CommandField& commands() const { return commands_; }
  const std::vector<AgentState>& agents() const { return agents_; }
  std::vector<AgentState>& agents() { return agents_; }
  const SimulationTrace& trace() const { return trace_; }
  int batch() const { return batch_; }
  std::size_t frame_index() const { return frame_; }

  /// Advances one frame: injection, broadcast + plant step, retirement,
  /// collisions, then statistics.
  void step_frame() {
    const double t = static_cast<double>(frame_) * cfg_.dt;
    Frame rec;
    rec.t = t + cfg_.dt;

    if (cfg_.scenario == Scenario::reservoir && batch_ > 0 && frame_ % source_frames_ == 0) {
      auto fresh = inject_batch(grid_, commands_, geom_, cfg_, t, batch_, next_id_);
      next_id_ += fresh.size();
      for (auto& a : fresh) {
        trace_.events.push_back({t, EventType::inject, a.id, 0});
        agents_.push_back(a);
      }
      trace_.population.injected += fresh.size();
      rec.injected = fresh.size();
    }

    last_commands_.assign(agents_.size(), Vec3{});
    std::vector<char> faulted(agents_.size(), 0);
    parallel_for(agents_.size(), cfg_.threads, [&](std::size_t i) {
      AgentState& a = agents_[i];
      if (!a.active()) return;
      const auto j = assign_cell(grid_, a.position);
      a.cell = grid_.flatten(*j);
      const Vec3 cmd = commands_.command(a.cell, t);
      last_commands_[i] = cmd;
      try {
        a.plant = step(cfg_.plant, a.plant, cmd, cfg_.wind, cfg_.dt);
        a.position += a.plant.velocity * cfg_.dt;
      } catch (const PlantFault&) {
        faulted[i] = 1;
      }
    });

    for (std::size_t i = 0; i < agents_.size(); ++i) {
      AgentState& a = agents_[i];
      if (!a.active()) continue;
      if (faulted[i]) {
        retire(a, AgentStatus::faulted, EventType::fault, rec.t);
        continue;
      }
      const bool past_outlet = a.position.x > geom_.length_x;
      if ((cfg_.retire_at_exit && past_outlet) || (!grid_.contains(a.position) && a.position.x > grid_.upper_corner().x)) {
        retire(a, AgentStatus::exited, EventType::exit, rec.t);
        ++rec.exited;
        continue;
      }
      if (!grid_.contains(a.position)) {
        retire(a, AgentStatus::escaped, EventType::escape, rec.t);
        continue;
      }
      const bool outside = !inside_nozzle(geom_, a.position, 0.0);
      if (outside && !a.outside_wall) trace_.events.push_back({rec.t, EventType::wall_escape, a.id, 0});
      a.outside_wall = outside;
      a.cell = grid_.flatten(*assign_cell(grid_, a.position));
    }

    if (cfg_.collisions) {
      const auto pairs = detect_collisions(agents_, cfg_);
      for (const auto& p : pairs) {
        const EventType e = p.kind == CollisionKind::one_way ? EventType::collision_one_way
                            : p.kind == CollisionKind::head_on ? EventType::collision_head_on
                                                               : EventType::collision_perpendicular;
        trace_.events.push_back({rec.t, e, agents_[p.a].id, agents_[p.b].id});
      }
      resolve_collisions(pairs, agents_, cfg_);
    }

    rec.active = static_cast<std::size_t>(std::count_if(agents_.begin(), agents_.end(), [](const auto& a) { return a.active(); }));
    trace_.population.active = rec.active;
    if (cfg_.record_cells) record_cells(rec);
    if (cfg_.trajectory_every > 0 && frame_ % static_cast<std::size_t>(cfg_.trajectory_every) == 0) {
      for (const auto& a : agents_) {
        if (a.active()) trace_.trajectories.push_back({rec.t, a.id, a.position, a.plant.velocity});
      }
    }
    trace_.frames.push_back(std::move(rec));
    ++frame_;
  }

  const SimulationTrace& run() {
    const std::size_t frames = cfg_.frame_count();
    while (frame_ < frames) step_frame();
    return trace_;
  }

  /// Commands handed out in the latest frame, indexed like agents().
  const std::vector<Vec3>& last_commands() const { return last_commands_; }

 private:
  void retire(AgentState& a, AgentStatus status, EventType e, double t) {
    a.status = status;
    trace_.events.push_back({t, e, a.id, 0});
    auto& pop = trace_.population;
    if (status == AgentStatus::exited) ++pop.exited;
    if (status == AgentStatus::escaped) ++pop.escaped;
    if (status == AgentStatus::faulted) ++pop.faulted;
  }

  void record_cells(Frame& rec) const {
    std::vector<std::pair<std::size_t, std::size_t>> order;  // (cell, agent)
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      if (agents_[i].active()) order.emplace_back(agents_[i].cell, i);
    }
    std::sort(order.begin(), order.end());
    std::vector<AgentSample> samples;
    const double m = cfg_.plant.mass;
    const double dv = grid_.cell_volume();
    for (std::size_t k = 0; k < order.size();) {
      const std::size_t f = order[k].first;
      samples.clear();
      for (; k < order.size() && order[k].first == f; ++k) samples.push_back({m, agents_[order[k].second].plant.velocity});
      const auto s = sample_cell(samples, cfg_.drift, dv, cfg_.constitutive);
      CellFrame cf;
      cf.cell = f;
      cf.n = s->N;
      cf.mean_velocity = s->U;
      cf.u_s = s->u_s;
      cf.pressure = s->P_s;
      cf.internal_pressure = s->P_s_internal;
      cf.temperature = s->T_s;
      if (grid_[f].has_target()) {
        const Vec3 target = cfg_.scale * grid_[f].v_target;
        double d = 0.0;
        for (const auto& a : samples) d += norm2(a.velocity - target);
        cf.dev_sq_target = d;
      } else {
        cf.dev_sq_target = std::numeric_limits<double>::quiet_NaN();
      }
      rec.cells.push_back(cf);
    }
  }

  ControlVolumeGrid grid_;
  GridFit fit_;
  NozzleGeometry geom_;
  SimConfig cfg_;
  CommandField commands_;
  std::vector<AgentState> agents_;
  std::vector<Vec3> last_commands_;
  SimulationTrace trace_;
  std::size_t frame_ = 0;
  std::size_t source_frames_ = 1;
  std::uint64_t next_id_ = 0;
  int batch_ = 0;
};

}  // namespace fluidswarm
