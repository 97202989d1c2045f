#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capsnlstm/errors.hpp"

namespace capsnlstm::raster {

struct LinkId {
  std::uint64_t value = 0;
  auto operator<=>(const LinkId&) const = default;
};

std::string to_string(LinkId id);

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
  bool operator==(const GeoPoint&) const = default;
};

struct LinkGeometry {
  LinkId id;
  std::vector<GeoPoint> polyline;
};

struct BoundingBox {
  double min_lat = 0.0;
  double min_lon = 0.0;
  double max_lat = 0.0;
  double max_lon = 0.0;
};

struct CellSize {
  double dlat = 1e-4;
  double dlon = 1e-4;
};

struct GridDims {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool operator==(const GridDims&) const = default;
};

// Closed rectangle covered by one grid cell.
struct CellRect {
  double lat_lo, lat_hi, lon_lo, lon_hi;
};

/// ceil(extent / cell) per axis, at least 1.
GridDims grid_dims_for(const BoundingBox& bbox, const CellSize& cell);

/// True when segment a-b touches the closed rectangle.
bool segment_intersects_rect(GeoPoint a, GeoPoint b, const CellRect& rect);

/// Road links over a plate-carrée grid. Row 0 is the northern edge (max_lat),
/// column 0 the western edge (min_lon). Links are kept in ascending id order,
/// which is the canonical link ordering for every per-link vector.
class RoadNetwork {
 public:
  RoadNetwork(std::vector<LinkGeometry> links, BoundingBox bbox, CellSize cell);

  /// Bounding box fitted to the link vertices.
  static RoadNetwork fitted(std::vector<LinkGeometry> links, CellSize cell);

  const std::vector<LinkGeometry>& links() const noexcept { return links_; }
  std::size_t link_count() const noexcept { return links_.size(); }
  std::vector<LinkId> link_ids() const;
  std::optional<std::size_t> index_of(LinkId id) const;

  const BoundingBox& bbox() const noexcept { return bbox_; }
  const CellSize& cell() const noexcept { return cell_; }
  const GridDims& dims() const noexcept { return dims_; }
  CellRect cell_rect(std::size_t row, std::size_t col) const;

  // Indices (canonical order) of links whose polyline touches the cell.
  const std::vector<std::size_t>& cell_links(std::size_t row, std::size_t col) const {
    return cell_links_[row * dims_.cols + col];
  }

 private:
  std::vector<LinkGeometry> links_;
  BoundingBox bbox_;
  CellSize cell_;
  GridDims dims_;
  std::vector<std::vector<std::size_t>> cell_links_;
};

struct SpeedRecord {
  LinkId link;
  std::int64_t timestamp = 0;  // seconds since epoch
  double speed = 0.0;          // km/h
};

struct LinkSpeedVector {
  std::int64_t period_index = 0;
  std::map<LinkId, std::optional<double>> speeds;
};

/// One traffic image: H x W km/h values, row-major, 0 where no link passes.
struct SpeedFrame {
  std::int64_t timestamp = 0;
  GridDims dims;
  std::vector<double> values;

  double at(std::size_t row, std::size_t col) const { return values[row * dims.cols + col]; }
};

/// Mean speed of the records (all of one link and one period); nullopt when
/// there are none. Negative speeds are rejected.
std::optional<double> aggregate_link_speed(std::span<const SpeedRecord> records);

struct AggregatedSpeeds {
  std::int64_t start_time = 0;  // timestamp of period 0
  std::int64_t period_seconds = 120;
  std::vector<LinkSpeedVector> periods;
};

/// Buckets records into periods of `period_seconds` starting at the period
/// boundary at or before the earliest record, then averages per link.
AggregatedSpeeds aggregate_periods(const RoadNetwork& network, std::span<const SpeedRecord> records,
                                   std::int64_t period_seconds = 120);

/// Carry-forward then backward-fill of MISSING entries, per link.
std::vector<LinkSpeedVector> fill_missing(std::vector<LinkSpeedVector> sequence);

SpeedFrame rasterize(const RoadNetwork& network, const LinkSpeedVector& speeds, std::int64_t timestamp = 0);

/// Clip to [0, v_max] and divide by v_max.
SpeedFrame normalize_frame(const SpeedFrame& frame, double v_max);
double denormalize(double normalized, double v_max);

/// Complete speeds as a dense vector in canonical link order.
std::vector<double> dense_speeds(const RoadNetwork& network, const LinkSpeedVector& speeds);

struct SampleWindow {
  std::size_t start = 0;               // index of the first input frame
  std::vector<SpeedFrame> inputs;      // `lag` normalized frames
  std::map<int, std::vector<double>> targets;  // horizon -> km/h per link
  std::vector<double> last_speeds;     // km/h per link at the last input frame
};

/// Number of windows for a sequence of `length` frames.
std::size_t window_count(std::size_t length, std::size_t lag, std::span<const int> horizons);

/// Sliding windows: inputs frames[t .. t+lag-1], target for horizon h is
/// link_speeds[t+lag-1+h]. `frames` are expected to be normalized already.
std::vector<SampleWindow> make_windows(std::span<const SpeedFrame> frames,
                                       std::span<const std::vector<double>> link_speeds, std::size_t lag,
                                       std::span<const int> horizons);

// Desk-scale synthetic data.

struct SynthParams {
  double v_max = 80.0;
  double base_min = 40.0, base_max = 60.0;
  double amplitude_min = 6.0, amplitude_max = 14.0;
  std::int64_t cycle_periods = 180;  // daily-period analogue
  double noise_amplitude = 4.0;      // uniform in ±noise_amplitude
  double congestion_depth = 22.0;
  std::int64_t congestion_duration = 18;
  std::int64_t propagation_delay = 3;  // periods per upstream link
  double missing_rate = 0.0;           // fraction of interior link-periods dropped from records
};

/// Random corridors of chained links inside the grid anchored at `origin`.
/// Consecutive links of a corridor share an endpoint.
RoadNetwork synth_network(std::size_t n_links, GridDims grid, std::uint64_t seed, GeoPoint origin = {39.9, 116.3},
                          CellSize cell = {});

/// Per-link sinusoid + offset + bounded noise + a recurring congestion dip
/// that starts on a corridor's downstream link and spreads upstream.
std::vector<LinkSpeedVector> synth_traffic(const RoadNetwork& network, std::size_t n_periods, std::uint64_t seed,
                                           const SynthParams& params = {});

/// One record per link and period at the period start, skipping entries per
/// `missing_rate` (never in the first or last period).
std::vector<SpeedRecord> synth_records(const RoadNetwork& network, std::span<const LinkSpeedVector> traffic,
                                       std::int64_t start_time, std::int64_t period_seconds, double missing_rate,
                                       std::uint64_t seed);

// File formats.

/// `link_id, lat1 lon1; lat2 lon2; ...` one link per line; '#' comments.
std::vector<LinkGeometry> read_network_geometry(std::istream& in);
void write_network_geometry(std::ostream& out, const RoadNetwork& network);

/// CSV with header `link_id,timestamp,speed_kmh`.
std::vector<SpeedRecord> read_speed_records(std::istream& in);
void write_speed_records(std::ostream& out, std::span<const SpeedRecord> records);

/// "SFR1" archive: u32 H, u32 W, u32 count, then count x (i64 timestamp,
/// H*W float32 row-major). Little-endian.
void write_frame_archive(std::ostream& out, std::span<const SpeedFrame> frames);
std::vector<SpeedFrame> read_frame_archive(std::istream& in);

}  // namespace capsnlstm::raster
