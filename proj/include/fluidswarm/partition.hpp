#pragma once

// Uniform cubic control volumes over the nozzle bounding box, per-cell target
// averaging and nearest-center cell lookup.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "csv.hpp"
#include "errors.hpp"
#include "reference_field.hpp"
#include "vec3.hpp"

namespace fluidswarm {

struct CellIndex {
  int jx = 0;
  int jy = 0;
  int jz = 0;

  friend constexpr bool operator==(const CellIndex&, const CellIndex&) = default;
  friend constexpr auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

/// Which cells count as part of the nozzle domain.
enum class MembershipRule {
  overlap,  ///< any part of the cube intersects the nozzle
  center,   ///< the cube's center lies inside the nozzle
};

struct Cell {
  Vec3 center;
  bool inside_domain = false;
  std::size_t node_count = 0;
  Vec3 v_target;
  double p_target = 0.0;    ///< gauge, Pa
  double rho_target = 0.0;  ///< kg/m^3 along the gas isentrope

  /// Inside the domain and holding at least one field node.
  bool has_target() const { return inside_domain && node_count > 0; }
};

class ControlVolumeGrid {
 public:
  ControlVolumeGrid() = default;
  ControlVolumeGrid(Vec3 origin, double edge, std::array<int, 3> dims)
      : origin_(origin), edge_(edge), dims_(dims) {
    if (!(edge > 0.0)) throw ValidationError("cell edge length must be positive");
    if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1) throw ValidationError("grid dims must be positive");
    cells_.resize(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
    for (std::size_t f = 0; f < cells_.size(); ++f) cells_[f].center = center(unflatten(f));
  }

  const Vec3& origin() const { return origin_; }
  double edge() const { return edge_; }
  double cell_volume() const { return edge_ * edge_ * edge_; }
  const std::array<int, 3>& dims() const { return dims_; }
  std::size_t size() const { return cells_.size(); }

  /// Flattened index; ordering is monotone in each of jx, jy, jz.
  std::size_t flatten(const CellIndex& j) const {
    return static_cast<std::size_t>(j.jx) +
           static_cast<std::size_t>(dims_[0]) * (static_cast<std::size_t>(j.jy) + static_cast<std::size_t>(dims_[1]) * j.jz);
  }
  CellIndex unflatten(std::size_t f) const {
    const auto nx = static_cast<std::size_t>(dims_[0]);
    const auto ny = static_cast<std::size_t>(dims_[1]);
    return {static_cast<int>(f % nx), static_cast<int>((f / nx) % ny), static_cast<int>(f / (nx * ny))};
  }
  bool in_bounds(const CellIndex& j) const {
    return j.jx >= 0 && j.jy >= 0 && j.jz >= 0 && j.jx < dims_[0] && j.jy < dims_[1] && j.jz < dims_[2];
  }

  Vec3 center(const CellIndex& j) const {
    return {origin_.x + (j.jx + 0.5) * edge_, origin_.y + (j.jy + 0.5) * edge_, origin_.z + (j.jz + 0.5) * edge_};
  }
  Vec3 upper_corner() const {
    return {origin_.x + dims_[0] * edge_, origin_.y + dims_[1] * edge_, origin_.z + dims_[2] * edge_};
  }
  bool contains(const Vec3& p) const {
    const Vec3 hi = upper_corner();
    return p.x >= origin_.x && p.y >= origin_.y && p.z >= origin_.z && p.x <= hi.x && p.y <= hi.y && p.z <= hi.z;
  }

  Cell& operator[](std::size_t f) { return cells_[f]; }
  const Cell& operator[](std::size_t f) const { return cells_[f]; }
  Cell& at(const CellIndex& j) { return cells_.at(flatten(j)); }
  const Cell& at(const CellIndex& j) const { return cells_.at(flatten(j)); }
  const std::vector<Cell>& cells() const { return cells_; }

  std::size_t inside_count() const {
    return static_cast<std::size_t>(std::count_if(cells_.begin(), cells_.end(), [](const Cell& c) { return c.inside_domain; }));
  }
  std::size_t target_count() const {
    return static_cast<std::size_t>(std::count_if(cells_.begin(), cells_.end(), [](const Cell& c) { return c.has_target(); }));
  }

  // Bookkeeping filled by partition_domain.
  MembershipRule rule = MembershipRule::overlap;
  std::size_t dropped_nodes = 0;

 private:
  Vec3 origin_;
  double edge_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<Cell> cells_;
};

namespace detail {

// Nearest lattice index along one axis; exact mid-face ties go to the lower index.
inline int nearest_axis_index(double p, double origin, double edge, int n) {
  const double u = (p - origin) / edge;
  int k = std::clamp(static_cast<int>(std::floor(u)), 0, n - 1);
  auto dist = [&](int i) { return std::abs(p - (origin + (i + 0.5) * edge)); };
  while (k > 0 && dist(k - 1) <= dist(k)) --k;
  while (k + 1 < n && dist(k + 1) < dist(k)) ++k;
  return k;
}

}  // namespace detail

/// Nearest cell center to `p`; nullopt when `p` is outside the grid bounding box.
inline std::optional<CellIndex> assign_cell(const ControlVolumeGrid& grid, const Vec3& p) {
  if (!grid.contains(p)) return std::nullopt;
  const auto& o = grid.origin();
  const auto& d = grid.dims();
  const double e = grid.edge();
  return CellIndex{detail::nearest_axis_index(p.x, o.x, e, d[0]), detail::nearest_axis_index(p.y, o.y, e, d[1]),
                   detail::nearest_axis_index(p.z, o.z, e, d[2])};
}

/// Whether the axis-aligned cube intersects the nozzle volume.
inline bool cube_overlaps_nozzle(const NozzleGeometry& g, const Vec3& lo, double edge) {
  const double x0 = std::max(lo.x, 0.0);
  const double x1 = std::min(lo.x + edge, g.length_x);
  if (x0 > x1) return false;
  // r(x) has a single minimum, so its maximum over an interval is at an end.
  const double rmax = std::max(radius_at(g, x0), radius_at(g, x1));
  auto min_sq = [](double a, double b) {
    if (a <= 0.0 && b >= 0.0) return 0.0;
    return std::min(a * a, b * b);
  };
  return min_sq(lo.y, lo.y + edge) + min_sq(lo.z, lo.z + edge) < rmax * rmax;
}

inline bool cell_in_domain(const NozzleGeometry& g, const Vec3& center, double edge, MembershipRule rule) {
  if (rule == MembershipRule::center) {
    if (center.x < 0.0 || center.x > g.length_x) return false;
    const double r = radius_at(g, center.x);
    return center.y * center.y + center.z * center.z <= r * r;
  }
  const double h = 0.5 * edge;
  return cube_overlaps_nozzle(g, center - Vec3{h, h, h}, edge);
}

/// Empty grid over the nozzle bounding box, origin snapped to (0, -R, -R) with R
/// the max radius rounded up to a whole number of cells.
inline ControlVolumeGrid make_grid(const NozzleGeometry& g, double edge, MembershipRule rule = MembershipRule::overlap) {
  g.validate();
  if (!(edge > 0.0)) throw ValidationError("cell edge length must be positive");
  const double tol = 1e-9;
  const int half = static_cast<int>(std::ceil(g.max_radius() / edge - tol));
  const int nx = static_cast<int>(std::ceil(g.length_x / edge - tol));
  const Vec3 origin{0.0, -half * edge, -half * edge};
  ControlVolumeGrid grid(origin, edge, {nx, 2 * half, 2 * half});
  grid.rule = rule;
  for (std::size_t f = 0; f < grid.size(); ++f) {
    grid[f].inside_domain = cell_in_domain(g, grid[f].center, edge, rule);
  }
  return grid;
}

/// Averages field nodes into per-cell velocity and pressure targets. Each cell's
/// nodes are summed in a canonical order so the result is independent of input order.
inline ControlVolumeGrid partition_domain(const ReferenceField& field, const NozzleGeometry& geom, double edge,
                                          const GasModel& gas = {}, MembershipRule rule = MembershipRule::overlap) {
  if (field.empty()) throw ValidationError("field has no nodes");
  ControlVolumeGrid grid = make_grid(geom, edge, rule);

  std::vector<std::pair<std::size_t, std::size_t>> owner;  // (cell, node)
  owner.reserve(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    const auto j = assign_cell(grid, field.nodes[i].position);
    if (!j) {
      ++grid.dropped_nodes;
      continue;
    }
    owner.emplace_back(grid.flatten(*j), i);
  }
  auto node_key = [&](std::size_t i) {
    const auto& n = field.nodes[i];
    return std::tuple{n.position.x, n.position.y, n.position.z, n.velocity.x, n.velocity.y, n.velocity.z, n.pressure};
  };
  std::sort(owner.begin(), owner.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return node_key(a.second) < node_key(b.second);
  });

  for (std::size_t k = 0; k < owner.size();) {
    const std::size_t f = owner[k].first;
    Vec3 vsum;
    double psum = 0.0;
    std::size_t count = 0;
    for (; k < owner.size() && owner[k].first == f; ++k) {
      const auto& n = field.nodes[owner[k].second];
      vsum += n.velocity;
      psum += n.pressure;
      ++count;
    }
    Cell& c = grid[f];
    c.node_count = count;
    c.v_target = vsum / static_cast<double>(count);
    c.p_target = psum / static_cast<double>(count);
    c.rho_target = gas.density_from_gauge(c.p_target);
  }
  return grid;
}

/// Minimum gauge pressure over cells with targets; the fitting pre-map subtracts it.
inline double min_target_pressure(const ControlVolumeGrid& grid) {
  double m = 0.0;
  bool any = false;
  for (const auto& c : grid.cells()) {
    if (!c.has_target()) continue;
    m = any ? std::min(m, c.p_target) : c.p_target;
    any = true;
  }
  return m;
}

inline constexpr std::string_view kPartitionHeader = "jx,jy,jz,cx,cy,cz,inside,node_count,vtx,vty,vtz,pt";

inline csv::Metadata grid_metadata(const ControlVolumeGrid& grid) {
  return {{"origin", csv::fmt(grid.origin().x) + ' ' + csv::fmt(grid.origin().y) + ' ' + csv::fmt(grid.origin().z)},
          {"edge_length", csv::fmt(grid.edge())},
          {"dims", std::to_string(grid.dims()[0]) + ' ' + std::to_string(grid.dims()[1]) + ' ' + std::to_string(grid.dims()[2])},
          {"rule", grid.rule == MembershipRule::overlap ? "overlap" : "center"}};
}

inline ControlVolumeGrid grid_from_metadata(const csv::Metadata& meta) {
  auto need = [&](const char* key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw ValidationError(std::string("missing metadata key '") + key + "'");
    return it->second;
  };
  std::istringstream o(need("origin")), d(need("dims"));
  Vec3 origin;
  std::array<int, 3> dims{};
  o >> origin.x >> origin.y >> origin.z;
  d >> dims[0] >> dims[1] >> dims[2];
  if (!o || !d) throw ValidationError("bad grid metadata");
  ControlVolumeGrid grid(origin, std::stod(need("edge_length")), dims);
  auto rule = meta.find("rule");
  grid.rule = (rule != meta.end() && rule->second == "center") ? MembershipRule::center : MembershipRule::overlap;
  return grid;
}

inline void save_partition(const ControlVolumeGrid& grid, const std::string& path, csv::Metadata extra = {}) {
  auto os = csv::open_out(path);
  auto meta = grid_metadata(grid);
  meta.merge(extra);
  csv::write_metadata(os, meta);
  os << kPartitionHeader << '\n';
  for (std::size_t f = 0; f < grid.size(); ++f) {
    const auto j = grid.unflatten(f);
    const Cell& c = grid[f];
    os << j.jx << ',' << j.jy << ',' << j.jz << ',' << csv::fmt(c.center.x) << ',' << csv::fmt(c.center.y) << ','
       << csv::fmt(c.center.z) << ',' << (c.inside_domain ? 1 : 0) << ',' << c.node_count << ','
       << csv::fmt(c.v_target.x) << ',' << csv::fmt(c.v_target.y) << ',' << csv::fmt(c.v_target.z) << ','
       << csv::fmt(c.p_target) << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

struct LoadedPartition {
  ControlVolumeGrid grid;
  csv::Metadata meta;
};

/// Reads a partition CSV. Density targets are rebuilt from `gas`.
inline LoadedPartition load_partition(const std::string& path, const GasModel& gas = {}) {
  auto is = csv::open_in(path);
  csv::Metadata meta;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (csv::read_metadata_line(line, meta)) continue;
    if (csv::trim(line) != kPartitionHeader) throw ParseError(lineno, "expected partition header");
    header = true;
    break;
  }
  if (!header) throw ValidationError("partition file has no header: " + path);
  ControlVolumeGrid grid = grid_from_metadata(meta);
  while (std::getline(is, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    const auto c = csv::split(line);
    if (c.size() != 12) throw ParseError(lineno, "expected 12 columns");
    const CellIndex j{static_cast<int>(csv::to_int(c[0], lineno)), static_cast<int>(csv::to_int(c[1], lineno)),
                      static_cast<int>(csv::to_int(c[2], lineno))};
    if (!grid.in_bounds(j)) throw ParseError(lineno, "cell index out of bounds");
    Cell& cell = grid.at(j);
    cell.inside_domain = csv::to_int(c[6], lineno) != 0;
    cell.node_count = static_cast<std::size_t>(csv::to_int(c[7], lineno));
    cell.v_target = {csv::to_double(c[8], lineno), csv::to_double(c[9], lineno), csv::to_double(c[10], lineno)};
    cell.p_target = csv::to_double(c[11], lineno);
    cell.rho_target = cell.node_count ? gas.density_from_gauge(cell.p_target) : 0.0;
  }
  return {std::move(grid), std::move(meta)};
}

}  // namespace fluidswarm
