#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "capsnlstm/grid_raster.hpp"

namespace capsnlstm::model {

/// A complete time series ready for windowing: normalized frames plus the
/// km/h link speeds the targets are drawn from.
struct Series {
  raster::GridDims dims;
  std::vector<raster::LinkId> links;
  std::vector<raster::SpeedFrame> frames;          // normalized to [0,1]
  std::vector<std::vector<double>> link_speeds;    // km/h, canonical link order
  double v_max = 80.0;
};

/// `periods` must already be gap-free (see raster::fill_missing).
Series build_series(const raster::RoadNetwork& network, std::span<const raster::LinkSpeedVector> periods,
                    std::int64_t start_time, std::int64_t period_seconds, double v_max);

/// Aggregate, fill and rasterize raw records.
Series series_from_records(const raster::RoadNetwork& network, std::span<const raster::SpeedRecord> records,
                           std::int64_t period_seconds, double v_max);

std::vector<raster::SampleWindow> series_windows(const Series& series, std::size_t lag, std::span<const int> horizons);

struct Split {
  std::vector<raster::SampleWindow> train, test;
};

/// First `train_fraction` of the windows (in time order) for training, the
/// rest held out.
Split time_split(std::vector<raster::SampleWindow> windows, double train_fraction);

}  // namespace capsnlstm::model
