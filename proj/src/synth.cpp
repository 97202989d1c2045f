#include <algorithm>
#include <cmath>
#include <numbers>

#include "capsnlstm/grid_raster.hpp"
#include "capsnlstm/rng.hpp"

namespace capsnlstm::raster {

RoadNetwork synth_network(std::size_t n_links, GridDims grid, std::uint64_t seed, GeoPoint origin, CellSize cell) {
  if (n_links == 0) throw ConfigError("n_links", "must be >= 1");
  if (grid.rows < 2 || grid.cols < 2) throw ConfigError("grid", "synthetic grids need at least 2x2 cells");

  const BoundingBox bbox{origin.lat, origin.lon, origin.lat + static_cast<double>(grid.rows) * cell.dlat,
                         origin.lon + static_cast<double>(grid.cols) * cell.dlon};
  if (grid_dims_for(bbox, cell) != grid) throw ConfigError("grid", "grid does not tile the bounding box exactly");

  auto rng = make_stream(seed, "synth.network");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Work in cell units: x along columns (east), y along rows (south).
  const double width = static_cast<double>(grid.cols);
  const double height = static_cast<double>(grid.rows);
  const double margin = 0.5;
  auto inside = [&](double x, double y) { return x >= margin && x <= width - margin && y >= margin && y <= height - margin; };
  auto to_geo = [&](double x, double y) {
    return GeoPoint{bbox.max_lat - y * cell.dlat, bbox.min_lon + x * cell.dlon};
  };
  const double max_step = std::max(1.5, std::min(width, height) / 5.0);

  std::vector<LinkGeometry> links;
  std::uint64_t next_id = 1;
  while (links.size() < n_links) {
    const std::size_t corridor = std::min<std::size_t>(n_links - links.size(), 2 + static_cast<std::size_t>(unit(rng) * 3.0));
    double x = margin + unit(rng) * (width - 2 * margin);
    double y = margin + unit(rng) * (height - 2 * margin);
    double heading = unit(rng) * 2.0 * std::numbers::pi;
    for (std::size_t k = 0; k < corridor; ++k) {
      LinkGeometry link{LinkId{next_id++}, {to_geo(x, y)}};
      const int steps = 1 + static_cast<int>(unit(rng) * 2.0);
      for (int s = 0; s < steps; ++s) {
        double nx = x, ny = y;
        for (int attempt = 0; attempt < 16; ++attempt) {
          const double len = 1.0 + unit(rng) * (max_step - 1.0);
          nx = x + len * std::cos(heading);
          ny = y + len * std::sin(heading);
          if (inside(nx, ny)) break;
          heading = unit(rng) * 2.0 * std::numbers::pi;
          nx = x;
          ny = y;
        }
        if (nx == x && ny == y) {
          // Boxed in: step toward the grid centre instead.
          nx = (x + width / 2.0) / 2.0;
          ny = (y + height / 2.0) / 2.0;
          if (std::abs(nx - x) < 1e-6 && std::abs(ny - y) < 1e-6) nx = x + (x < width / 2.0 ? 1.0 : -1.0);
        }
        x = nx;
        y = ny;
        link.polyline.push_back(to_geo(x, y));
        heading += (unit(rng) - 0.5);
      }
      links.push_back(std::move(link));
    }
  }
  return RoadNetwork(std::move(links), bbox, cell);
}

namespace {

// For each link, the number of hops to the downstream end of its corridor and
// the corridor's representative (its downstream link).
struct CorridorPosition {
  std::size_t downstream = 0;
  std::size_t hops = 0;
};

std::vector<CorridorPosition> corridor_positions(const RoadNetwork& network) {
  const auto& links = network.links();
  const std::size_t n = links.size();
  std::vector<std::optional<std::size_t>> successor(n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (a != b && !successor[a] && links[a].polyline.back() == links[b].polyline.front()) successor[a] = b;

  std::vector<CorridorPosition> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t cur = i, hops = 0;
    while (successor[cur] && hops < n) {
      cur = *successor[cur];
      ++hops;
    }
    out[i] = {cur, hops};
  }
  return out;
}

}  // namespace

std::vector<LinkSpeedVector> synth_traffic(const RoadNetwork& network, std::size_t n_periods, std::uint64_t seed,
                                           const SynthParams& params) {
  if (n_periods == 0) throw ConfigError("n_periods", "must be >= 1");
  if (params.cycle_periods <= 0) throw ConfigError("cycle_periods", "must be positive");
  if (!(params.v_max > 0.0)) throw ConfigError("v_max", "must be positive");
  if (params.noise_amplitude < 0.0) throw ConfigError("noise_amplitude", "must be >= 0");

  auto rng = make_stream(seed, "synth.traffic");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = network.link_count();
  std::vector<double> base(n), amplitude(n), phase(n);
  for (std::size_t i = 0; i < n; ++i) {
    base[i] = params.base_min + unit(rng) * (params.base_max - params.base_min);
    amplitude[i] = params.amplitude_min + unit(rng) * (params.amplitude_max - params.amplitude_min);
    phase[i] = unit(rng) * 2.0 * std::numbers::pi;
  }
  const auto positions = corridor_positions(network);
  std::vector<std::int64_t> congestion_start(n);
  for (std::size_t i = 0; i < n; ++i) congestion_start[i] = static_cast<std::int64_t>(unit(rng) * static_cast<double>(params.cycle_periods));

  const auto cycle = params.cycle_periods;
  auto dip = [&](std::size_t link, std::int64_t t_in_cycle) {
    if (params.congestion_duration <= 0 || params.congestion_depth == 0.0) return 0.0;
    const auto& pos = positions[link];
    const std::int64_t start =
        (congestion_start[pos.downstream] + static_cast<std::int64_t>(pos.hops) * params.propagation_delay) % cycle;
    const std::int64_t tau = ((t_in_cycle - start) % cycle + cycle) % cycle;
    if (tau >= params.congestion_duration) return 0.0;
    const double x = (static_cast<double>(tau) + 0.5) / static_cast<double>(params.congestion_duration);
    return params.congestion_depth * std::sin(std::numbers::pi * x);
  };

  const auto ids = network.link_ids();
  std::vector<LinkSpeedVector> out(n_periods);
  std::uniform_real_distribution<double> noise(-1.0, 1.0);
  for (std::size_t t = 0; t < n_periods; ++t) {
    out[t].period_index = static_cast<std::int64_t>(t);
    // Every term depends on t only through t mod cycle, so the noiseless
    // series is exactly periodic.
    const auto tc = static_cast<std::int64_t>(t) % cycle;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(tc) / static_cast<double>(cycle);
    for (std::size_t i = 0; i < n; ++i) {
      double v = base[i] + amplitude[i] * std::sin(angle + phase[i]) - dip(i, tc);
      if (params.noise_amplitude > 0.0) v += params.noise_amplitude * noise(rng);
      out[t].speeds[ids[i]] = std::clamp(v, 0.0, params.v_max);
    }
  }
  return out;
}

std::vector<SpeedRecord> synth_records(const RoadNetwork& network, std::span<const LinkSpeedVector> traffic,
                                       std::int64_t start_time, std::int64_t period_seconds, double missing_rate,
                                       std::uint64_t seed) {
  if (period_seconds <= 0) throw ConfigError("period_seconds", "must be positive");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ConfigError("missing_rate", "must lie in [0,1)");
  auto rng = make_stream(seed, "synth.records");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<SpeedRecord> out;
  for (std::size_t t = 0; t < traffic.size(); ++t) {
    const bool edge = t == 0 || t + 1 == traffic.size();
    for (const auto id : network.link_ids()) {
      const double u = missing_rate > 0.0 ? unit(rng) : 1.0;
      if (!edge && u < missing_rate) continue;
      const auto it = traffic[t].speeds.find(id);
      if (it == traffic[t].speeds.end() || !it->second) continue;
      out.push_back({id, start_time + static_cast<std::int64_t>(t) * period_seconds, *it->second});
    }
  }
  return out;
}

}  // namespace capsnlstm::raster
