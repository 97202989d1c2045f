#include "capsnlstm/grid_raster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace capsnlstm::raster {

std::string to_string(LinkId id) { return std::to_string(id.value); }

GridDims grid_dims_for(const BoundingBox& bbox, const CellSize& cell) {
  if (!(cell.dlat > 0.0) || !(cell.dlon > 0.0)) throw ConfigError("cell_size", "cell extents must be positive");
  if (bbox.max_lat < bbox.min_lat || bbox.max_lon < bbox.min_lon)
    throw ConfigError("bbox", "max corner lies below min corner");
  // The small slack keeps exact multiples from rounding up to an extra cell.
  auto cells = [](double extent, double size) {
    const double n = std::ceil(extent / size - 1e-9);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::max(n, 0.0)));
  };
  return {cells(bbox.max_lat - bbox.min_lat, cell.dlat), cells(bbox.max_lon - bbox.min_lon, cell.dlon)};
}

bool segment_intersects_rect(GeoPoint a, GeoPoint b, const CellRect& rect) {
  // Liang-Barsky clipping of a + t (b - a), t in [0, 1], against the closed box.
  double t0 = 0.0, t1 = 1.0;
  auto clip = [&](double p, double q) {
    if (p == 0.0) return q >= 0.0;
    const double t = q / p;
    if (p < 0.0) {
      if (t > t1) return false;
      t0 = std::max(t0, t);
    } else {
      if (t < t0) return false;
      t1 = std::min(t1, t);
    }
    return true;
  };
  const double dlon = b.lon - a.lon;
  const double dlat = b.lat - a.lat;
  return clip(-dlon, a.lon - rect.lon_lo) && clip(dlon, rect.lon_hi - a.lon) && clip(-dlat, a.lat - rect.lat_lo) &&
         clip(dlat, rect.lat_hi - a.lat) && t0 <= t1;
}

RoadNetwork::RoadNetwork(std::vector<LinkGeometry> links, BoundingBox bbox, CellSize cell)
    : links_(std::move(links)), bbox_(bbox), cell_(cell), dims_(grid_dims_for(bbox, cell)) {
  if (links_.empty()) throw DataError("road network has no links");
  std::sort(links_.begin(), links_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < links_.size(); ++i)
    if (links_[i].id == links_[i - 1].id) throw DataError("duplicate link id " + to_string(links_[i].id));

  const double eps_lat = 1e-9 * cell_.dlat;
  const double eps_lon = 1e-9 * cell_.dlon;
  for (const auto& link : links_) {
    if (link.polyline.size() < 2) throw DataError("link " + to_string(link.id) + " has fewer than 2 vertices");
    for (std::size_t i = 0; i < link.polyline.size(); ++i) {
      const auto& p = link.polyline[i];
      if (i > 0 && p == link.polyline[i - 1])
        throw DataError("link " + to_string(link.id) + " repeats a vertex consecutively");
      if (p.lat < bbox_.min_lat - eps_lat || p.lat > bbox_.max_lat + eps_lat || p.lon < bbox_.min_lon - eps_lon ||
          p.lon > bbox_.max_lon + eps_lon)
        throw DataError("link " + to_string(link.id) + " leaves the network bounding box");
    }
  }

  cell_links_.assign(dims_.rows * dims_.cols, {});
  auto clamp_index = [](double v, std::size_t n) {
    if (v < 0.0) return std::size_t{0};
    return std::min(static_cast<std::size_t>(v), n - 1);
  };
  for (std::size_t li = 0; li < links_.size(); ++li) {
    const auto& pl = links_[li].polyline;
    for (std::size_t s = 0; s + 1 < pl.size(); ++s) {
      const GeoPoint a = pl[s], b = pl[s + 1];
      // Candidate window from the segment's bounding box, padded by one cell
      // so boundary contacts are tested too.
      const double r_lo = std::floor((bbox_.max_lat - std::max(a.lat, b.lat)) / cell_.dlat) - 1.0;
      const double r_hi = std::floor((bbox_.max_lat - std::min(a.lat, b.lat)) / cell_.dlat) + 1.0;
      const double c_lo = std::floor((std::min(a.lon, b.lon) - bbox_.min_lon) / cell_.dlon) - 1.0;
      const double c_hi = std::floor((std::max(a.lon, b.lon) - bbox_.min_lon) / cell_.dlon) + 1.0;
      for (std::size_t r = clamp_index(r_lo, dims_.rows); r <= clamp_index(r_hi, dims_.rows); ++r)
        for (std::size_t c = clamp_index(c_lo, dims_.cols); c <= clamp_index(c_hi, dims_.cols); ++c)
          if (segment_intersects_rect(a, b, cell_rect(r, c))) {
            auto& members = cell_links_[r * dims_.cols + c];
            if (members.empty() || members.back() != li) members.push_back(li);
          }
    }
  }
}

RoadNetwork RoadNetwork::fitted(std::vector<LinkGeometry> links, CellSize cell) {
  if (links.empty()) throw DataError("road network has no links");
  BoundingBox box{1e300, 1e300, -1e300, -1e300};
  for (const auto& l : links)
    for (const auto& p : l.polyline) {
      box.min_lat = std::min(box.min_lat, p.lat);
      box.max_lat = std::max(box.max_lat, p.lat);
      box.min_lon = std::min(box.min_lon, p.lon);
      box.max_lon = std::max(box.max_lon, p.lon);
    }
  return RoadNetwork(std::move(links), box, cell);
}

std::vector<LinkId> RoadNetwork::link_ids() const {
  std::vector<LinkId> ids;
  ids.reserve(links_.size());
  for (const auto& l : links_) ids.push_back(l.id);
  return ids;
}

std::optional<std::size_t> RoadNetwork::index_of(LinkId id) const {
  auto it = std::lower_bound(links_.begin(), links_.end(), id, [](const auto& l, LinkId v) { return l.id < v; });
  if (it == links_.end() || it->id != id) return std::nullopt;
  return static_cast<std::size_t>(it - links_.begin());
}

CellRect RoadNetwork::cell_rect(std::size_t row, std::size_t col) const {
  CellRect r{};
  r.lat_hi = bbox_.max_lat - static_cast<double>(row) * cell_.dlat;
  r.lat_lo = bbox_.max_lat - static_cast<double>(row + 1) * cell_.dlat;
  r.lon_lo = bbox_.min_lon + static_cast<double>(col) * cell_.dlon;
  r.lon_hi = bbox_.min_lon + static_cast<double>(col + 1) * cell_.dlon;
  // Outer cells always reach the bounding box edge.
  if (row + 1 == dims_.rows) r.lat_lo = std::min(r.lat_lo, bbox_.min_lat);
  if (col + 1 == dims_.cols) r.lon_hi = std::max(r.lon_hi, bbox_.max_lon);
  return r;
}

std::optional<double> aggregate_link_speed(std::span<const SpeedRecord> records) {
  if (records.empty()) return std::nullopt;
  double total = 0.0;
  for (const auto& r : records) {
    if (r.link != records.front().link)
      throw ContractError("aggregate_link_speed: records span links " + to_string(records.front().link) + " and " +
                          to_string(r.link));
    if (!(r.speed >= 0.0) || !std::isfinite(r.speed))
      throw DataError("rejected record: link " + to_string(r.link) + " at t=" + std::to_string(r.timestamp) +
                      " has invalid speed " + std::to_string(r.speed));
    total += r.speed;
  }
  return total / static_cast<double>(records.size());
}

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

AggregatedSpeeds aggregate_periods(const RoadNetwork& network, std::span<const SpeedRecord> records,
                                   std::int64_t period_seconds) {
  if (period_seconds <= 0) throw ConfigError("period_seconds", "must be positive");
  if (records.empty()) throw DataError("no records");

  std::int64_t min_ts = records.front().timestamp, max_ts = min_ts;
  for (const auto& r : records) {
    min_ts = std::min(min_ts, r.timestamp);
    max_ts = std::max(max_ts, r.timestamp);
  }
  AggregatedSpeeds out;
  out.period_seconds = period_seconds;
  out.start_time = floor_div(min_ts, period_seconds) * period_seconds;
  const auto n_periods = static_cast<std::size_t>((max_ts - out.start_time) / period_seconds + 1);

  const std::size_t n_links = network.link_count();
  std::vector<std::vector<SpeedRecord>> buckets(n_periods * n_links);
  for (const auto& r : records) {
    const auto idx = network.index_of(r.link);
    if (!idx) throw DataError("record references unknown link " + to_string(r.link));
    const auto p = static_cast<std::size_t>((r.timestamp - out.start_time) / period_seconds);
    buckets[p * n_links + *idx].push_back(r);
  }

  const auto ids = network.link_ids();
  out.periods.resize(n_periods);
  for (std::size_t p = 0; p < n_periods; ++p) {
    out.periods[p].period_index = static_cast<std::int64_t>(p);
    for (std::size_t l = 0; l < n_links; ++l)
      out.periods[p].speeds[ids[l]] = aggregate_link_speed(buckets[p * n_links + l]);
  }
  return out;
}

std::vector<LinkSpeedVector> fill_missing(std::vector<LinkSpeedVector> sequence) {
  if (sequence.empty()) return sequence;
  std::vector<LinkId> links;
  for (const auto& [id, v] : sequence.front().speeds) links.push_back(id);
  for (const auto& step : sequence)
    if (step.speeds.size() != links.size())
      throw DataError("fill_missing: period " + std::to_string(step.period_index) + " has a different link set");

  std::vector<std::string> unfillable;
  for (const auto id : links) {
    std::optional<double> last;
    std::optional<std::size_t> first_seen;
    for (std::size_t t = 0; t < sequence.size(); ++t) {
      auto it = sequence[t].speeds.find(id);
      if (it == sequence[t].speeds.end())
        throw DataError("fill_missing: link " + to_string(id) + " absent from period " +
                        std::to_string(sequence[t].period_index));
      if (it->second) {
        last = it->second;
        if (!first_seen) first_seen = t;
      } else if (last) {
        it->second = last;
      }
    }
    if (!first_seen) {
      unfillable.push_back(to_string(id));
      continue;
    }
    const auto lead = sequence[*first_seen].speeds.at(id);
    for (std::size_t t = 0; t < *first_seen; ++t) sequence[t].speeds[id] = lead;
  }
  if (!unfillable.empty()) {
    std::string list;
    for (const auto& s : unfillable) list += (list.empty() ? "" : ", ") + s;
    throw DataError("unfillable links (no observations): " + list);
  }
  return sequence;
}

std::vector<double> dense_speeds(const RoadNetwork& network, const LinkSpeedVector& speeds) {
  std::vector<std::optional<double>> slots(network.link_count());
  for (const auto& [id, v] : speeds.speeds) {
    const auto idx = network.index_of(id);
    if (!idx) throw DataError("speeds reference unknown link " + to_string(id));
    slots[*idx] = v;
  }
  std::vector<double> out(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i])
      throw DataError("period " + std::to_string(speeds.period_index) + " has no speed for link " +
                      to_string(network.links()[i].id));
    out[i] = *slots[i];
  }
  return out;
}

SpeedFrame rasterize(const RoadNetwork& network, const LinkSpeedVector& speeds, std::int64_t timestamp) {
  const auto dense = dense_speeds(network, speeds);
  const auto& dims = network.dims();
  SpeedFrame frame{timestamp, dims, std::vector<double>(dims.rows * dims.cols, 0.0)};
  for (std::size_t r = 0; r < dims.rows; ++r)
    for (std::size_t c = 0; c < dims.cols; ++c) {
      const auto& members = network.cell_links(r, c);
      if (members.empty()) continue;
      double total = 0.0;
      for (auto li : members) total += dense[li];
      frame.values[r * dims.cols + c] = total / static_cast<double>(members.size());
    }
  return frame;
}

SpeedFrame normalize_frame(const SpeedFrame& frame, double v_max) {
  if (!(v_max > 0.0)) throw ConfigError("v_max", "must be positive");
  SpeedFrame out = frame;
  for (auto& v : out.values) v = std::clamp(v, 0.0, v_max) / v_max;
  return out;
}

double denormalize(double normalized, double v_max) { return normalized * v_max; }

std::size_t window_count(std::size_t length, std::size_t lag, std::span<const int> horizons) {
  if (horizons.empty()) return 0;
  const auto max_h = static_cast<std::size_t>(*std::max_element(horizons.begin(), horizons.end()));
  return length >= lag + max_h ? length - lag - max_h + 1 : 0;
}

std::vector<SampleWindow> make_windows(std::span<const SpeedFrame> frames,
                                       std::span<const std::vector<double>> link_speeds, std::size_t lag,
                                       std::span<const int> horizons) {
  if (lag == 0) throw ConfigError("lag", "must be >= 1");
  if (horizons.empty()) throw ConfigError("horizons", "must not be empty");
  for (int h : horizons)
    if (h < 1) throw ConfigError("horizons", "every horizon must be >= 1");
  if (frames.size() != link_speeds.size())
    throw DataError("frames and link speeds are not time-aligned (" + std::to_string(frames.size()) + " vs " +
                    std::to_string(link_speeds.size()) + ")");
  const auto max_h = static_cast<std::size_t>(*std::max_element(horizons.begin(), horizons.end()));
  if (frames.size() < lag + max_h)
    throw DataError("insufficient data: windows need at least " + std::to_string(lag + max_h) + " periods, have " +
                    std::to_string(frames.size()));

  const std::size_t count = window_count(frames.size(), lag, horizons);
  std::vector<SampleWindow> out;
  out.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    SampleWindow w;
    w.start = t;
    w.inputs.assign(frames.begin() + static_cast<std::ptrdiff_t>(t),
                    frames.begin() + static_cast<std::ptrdiff_t>(t + lag));
    const std::size_t last = t + lag - 1;
    for (int h : horizons) w.targets[h] = link_speeds[last + static_cast<std::size_t>(h)];
    w.last_speeds = link_speeds[last];
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace capsnlstm::raster
