#pragma once

// Per-cell velocity fitting: choose an agent count N* and N* velocities whose
// mean hits the velocity target and whose spread reproduces the pressure target.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "csv.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "partition.hpp"
#include "vec3.hpp"

namespace fluidswarm {

struct FitConfig {
  int n_min = 2;
  int n_max = 10;
  double alpha = 1.0;
  double epsilon = 1e-6;
  int max_iterations = 100;
  double agent_mass = 1.0;
  double cell_volume = 0.125;
  std::uint64_t rng_seed = 0;
  /// Candidate losses closer than this are treated as equal (smaller N wins).
  double tie_tolerance = 1e-6;

  void validate() const {
    if (!(n_min >= 2 && n_min <= n_max)) throw ValidationError("require 2 <= n_min <= n_max");
    if (!(alpha > 0.0)) throw ValidationError("alpha must be positive");
    if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
    if (max_iterations < 1) throw ValidationError("max_iterations must be >= 1");
    if (!(agent_mass > 0.0) || !(cell_volume > 0.0)) throw ValidationError("mass and cell volume must be positive");
    if (!(tie_tolerance >= 0.0)) throw ValidationError("tie tolerance must be non-negative");
  }

  /// 2 m / (3 dV), the prefactor of the variance-pressure relation.
  double pressure_coeff() const { return 2.0 * agent_mass / (3.0 * cell_volume); }
};

struct FitResult {
  int n_star = 0;
  std::vector<Vec3> velocities;
  double loss = 0.0;
  int iterations = 0;
  double mean_residual = 0.0;      ///< |mean(v) - v_target|
  double pressure_residual = 0.0;  ///< |c sum |v - v_target|^2 - P_target|
  bool converged = false;
  std::vector<double> candidate_losses;  ///< final loss per N in [n_min, n_max]
};

/// Mean of a velocity set, accumulated as offsets from `ref` for accuracy.
inline Vec3 offset_mean(const std::vector<Vec3>& v, const Vec3& ref) {
  Vec3 s;
  for (const auto& x : v) s += x - ref;
  return ref + s / static_cast<double>(v.size());
}

/// Weighted mean/variance objective: |v_t - mean|^2 + alpha |P - c sum |v - mean|^2|.
inline double fit_loss(const std::vector<Vec3>& v, const Vec3& v_target, double p_target, const FitConfig& cfg) {
  const Vec3 mean = offset_mean(v, v_target);
  double spread = 0.0;
  for (const auto& x : v) spread += norm2(x - mean);
  return norm2(v_target - mean) + cfg.alpha * std::abs(p_target - cfg.pressure_coeff() * spread);
}

/// Standard deviation of the perturbed initial guess, sigma^2 = P (3 dV) / (2 m N).
inline double initial_sigma(double p_target, const FitConfig& cfg, int n) {
  return std::sqrt(p_target * 3.0 * cfg.cell_volume / (2.0 * cfg.agent_mass * n));
}

namespace detail {

struct CandidateFit {
  std::vector<Vec3> velocities;
  double loss = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Velocities are v_target + s * e_i with e_i the zero-mean part of the random
// draw, so the mean target holds at every iterate; Newton then solves the single
// scalar equation c s^2 sum|e|^2 = P.
inline CandidateFit fit_candidate(const Vec3& v_target, double p_target, const FitConfig& cfg, int n,
                                  std::uint64_t stream) {
  std::mt19937_64 rng(stream);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vec3> xi(static_cast<std::size_t>(n));
  for (auto& e : xi) e = {normal(rng), normal(rng), normal(rng)};
  Vec3 xbar;
  for (const auto& e : xi) xbar += e;
  xbar /= static_cast<double>(n);
  double energy = 0.0;
  for (auto& e : xi) {
    e -= xbar;
    energy += norm2(e);
  }

  const double c = cfg.pressure_coeff();
  auto residual = [&](double s) { return c * s * s * energy - p_target; };

  CandidateFit out;
  double s = initial_sigma(p_target, cfg, n);
  if (p_target == 0.0) {
    out.converged = true;
  } else if (energy > 0.0) {
    const double root_energy = std::sqrt(energy);
    for (int it = 0; it < cfg.max_iterations; ++it) {
      const double r = residual(s);
      double ds = -r / (2.0 * c * energy * s);
      // Damped fallback: halve until the residual does not grow and s stays positive.
      for (int h = 0; h < 60 && (s + ds <= 0.0 || std::abs(residual(s + ds)) > std::abs(r)); ++h) ds *= 0.5;
      s += ds;
      out.iterations = it + 1;
      if (std::abs(ds) * root_energy < cfg.epsilon) {
        out.converged = true;
        break;
      }
    }
  }

  out.velocities.resize(xi.size());
  for (std::size_t i = 0; i < xi.size(); ++i) out.velocities[i] = v_target + s * xi[i];
  out.loss = fit_loss(out.velocities, v_target, p_target, cfg);
  return out;
}

}  // namespace detail

/// Fits one cell. `stream` seeds the cell's random initialization; each
/// candidate N draws from its own sub-stream.
inline FitResult fit_cell(const Vec3& v_target, double p_target, const FitConfig& cfg, std::uint64_t stream = 0) {
  cfg.validate();
  if (!(p_target >= 0.0)) throw DomainError("pressure target must be non-negative (apply the pre-map first)");
  if (!is_finite(v_target)) throw DomainError("velocity target must be finite");

  FitResult best;
  bool have = false;
  bool best_converged = false;
  for (int n = cfg.n_min; n <= cfg.n_max; ++n) {
    auto cand = detail::fit_candidate(v_target, p_target, cfg, n, mix_seed(stream, static_cast<std::uint64_t>(n)));
    best.candidate_losses.push_back(cand.loss);
    // Converged candidates always beat unconverged ones.
    const bool better = !have || (cand.converged && !best_converged) ||
                        (cand.converged == best_converged && cand.loss < best.loss - cfg.tie_tolerance);
    if (better) {
      have = true;
      best_converged = cand.converged;
      best.n_star = n;
      best.velocities = std::move(cand.velocities);
      best.loss = cand.loss;
      best.iterations = cand.iterations;
      best.converged = cand.converged;
    }
  }
  best.mean_residual = norm(offset_mean(best.velocities, v_target) - v_target);
  double about_target = 0.0;
  for (const auto& v : best.velocities) about_target += norm2(v - v_target);
  best.pressure_residual = std::abs(cfg.pressure_coeff() * about_target - p_target);
  return best;
}

inline std::vector<Vec3> scale_commands(const FitResult& result, double scale) {
  if (!(scale > 0.0)) throw DomainError("scale must be positive");
  std::vector<Vec3> out;
  out.reserve(result.velocities.size());
  for (const auto& v : result.velocities) out.push_back(scale * v);
  return out;
}

using FitMap = std::map<CellIndex, FitResult>;

struct GridFit {
  FitMap cells;
  FitConfig config;
  /// Gauge pressure subtracted from every target before fitting (field minimum).
  double pressure_offset = 0.0;

  std::size_t unconverged() const {
    std::size_t n = 0;
    for (const auto& [j, r] : cells) n += r.converged ? 0 : 1;
    return n;
  }
};

/// Fits every cell with a target. Each cell uses the stream mix_seed(seed, flat
/// index), so results do not depend on `threads` or evaluation order.
inline GridFit fit_grid(const ControlVolumeGrid& grid, const FitConfig& cfg, unsigned threads = 1,
                        std::optional<double> pressure_offset = std::nullopt) {
  cfg.validate();
  std::vector<std::size_t> work;
  for (std::size_t f = 0; f < grid.size(); ++f) {
    if (grid[f].has_target()) work.push_back(f);
  }
  if (work.empty()) throw ValidationError("grid has no cells with targets");

  GridFit out;
  out.config = cfg;
  out.pressure_offset = pressure_offset.value_or(min_target_pressure(grid));
  std::vector<FitResult> results(work.size());
  parallel_for(work.size(), threads, [&](std::size_t k) {
    const Cell& c = grid[work[k]];
    const double p = std::max(0.0, c.p_target - out.pressure_offset);
    results[k] = fit_cell(c.v_target, p, cfg, mix_seed(cfg.rng_seed, work[k]));
  });
  for (std::size_t k = 0; k < work.size(); ++k) out.cells.emplace(grid.unflatten(work[k]), std::move(results[k]));
  return out;
}

inline csv::Metadata fit_metadata(const GridFit& fit) {
  const auto& c = fit.config;
  return {{"n_min", std::to_string(c.n_min)},
          {"n_max", std::to_string(c.n_max)},
          {"alpha", csv::fmt(c.alpha)},
          {"epsilon", csv::fmt(c.epsilon)},
          {"max_iterations", std::to_string(c.max_iterations)},
          {"agent_mass", csv::fmt(c.agent_mass)},
          {"cell_volume", csv::fmt(c.cell_volume)},
          {"rng_seed", std::to_string(c.rng_seed)},
          {"tie_tolerance", csv::fmt(c.tie_tolerance)},
          {"pressure_offset", csv::fmt(fit.pressure_offset)}};
}

inline void save_fit(const GridFit& fit, const std::string& path, csv::Metadata extra = {}) {
  auto os = csv::open_out(path);
  auto meta = fit_metadata(fit);
  meta.merge(extra);
  csv::write_metadata(os, meta);
  os << "jx,jy,jz,n_star,loss,iters,converged";
  for (int i = 1; i <= fit.config.n_max; ++i) os << ",v" << i << "x,v" << i << "y,v" << i << "z";
  os << '\n';
  for (const auto& [j, r] : fit.cells) {
    os << j.jx << ',' << j.jy << ',' << j.jz << ',' << r.n_star << ',' << csv::fmt(r.loss) << ',' << r.iterations
       << ',' << (r.converged ? 1 : 0);
    for (const auto& v : r.velocities) os << ',' << csv::fmt(v.x) << ',' << csv::fmt(v.y) << ',' << csv::fmt(v.z);
    os << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

struct LoadedFit {
  GridFit fit;
  csv::Metadata meta;
};

inline LoadedFit load_fit(const std::string& path) {
  auto is = csv::open_in(path);
  csv::Metadata meta;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (csv::read_metadata_line(line, meta)) continue;
    if (!csv::trim(line).starts_with("jx,jy,jz,n_star,loss,iters,converged")) throw ParseError(lineno, "expected fit header");
    header = true;
    break;
  }
  if (!header) throw ValidationError("fit file has no header: " + path);

  LoadedFit out;
  auto get = [&](const char* key, auto fallback) {
    auto it = meta.find(key);
    if (it == meta.end()) return fallback;
    if constexpr (std::is_integral_v<decltype(fallback)>) {
      return static_cast<decltype(fallback)>(std::stoull(it->second));
    } else {
      return static_cast<decltype(fallback)>(std::stod(it->second));
    }
  };
  auto& c = out.fit.config;
  c.n_min = get("n_min", c.n_min);
  c.n_max = get("n_max", c.n_max);
  c.alpha = get("alpha", c.alpha);
  c.epsilon = get("epsilon", c.epsilon);
  c.max_iterations = get("max_iterations", c.max_iterations);
  c.agent_mass = get("agent_mass", c.agent_mass);
  c.cell_volume = get("cell_volume", c.cell_volume);
  c.rng_seed = get("rng_seed", c.rng_seed);
  c.tie_tolerance = get("tie_tolerance", c.tie_tolerance);
  out.fit.pressure_offset = get("pressure_offset", 0.0);

  while (std::getline(is, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    const auto col = csv::split(line);
    if (col.size() < 7) throw ParseError(lineno, "expected at least 7 columns");
    const CellIndex j{static_cast<int>(csv::to_int(col[0], lineno)), static_cast<int>(csv::to_int(col[1], lineno)),
                      static_cast<int>(csv::to_int(col[2], lineno))};
    FitResult r;
    r.n_star = static_cast<int>(csv::to_int(col[3], lineno));
    r.loss = csv::to_double(col[4], lineno);
    r.iterations = static_cast<int>(csv::to_int(col[5], lineno));
    r.converged = csv::to_int(col[6], lineno) != 0;
    if (r.n_star < 0 || col.size() != 7 + 3 * static_cast<std::size_t>(r.n_star)) {
      throw ParseError(lineno, "velocity column count does not match n_star");
    }
    for (int i = 0; i < r.n_star; ++i) {
      const std::size_t b = 7 + 3 * static_cast<std::size_t>(i);
      r.velocities.push_back(
          {csv::to_double(col[b], lineno), csv::to_double(col[b + 1], lineno), csv::to_double(col[b + 2], lineno)});
    }
    out.fit.cells.emplace(j, std::move(r));
  }
  out.meta = std::move(meta);
  return out;
}

}  // namespace fluidswarm
