#include "capsnlstm/dataset.hpp"

#include <cmath>

#include <fmt/format.h>

namespace capsnlstm::model {

Series build_series(const raster::RoadNetwork& network, std::span<const raster::LinkSpeedVector> periods,
                    std::int64_t start_time, std::int64_t period_seconds, double v_max) {
  if (periods.empty()) throw DataError("series: no periods");
  Series s;
  s.dims = network.dims();
  s.links = network.link_ids();
  s.v_max = v_max;
  s.frames.reserve(periods.size());
  s.link_speeds.reserve(periods.size());
  for (const auto& p : periods) {
    const std::int64_t ts = start_time + p.period_index * period_seconds;
    s.frames.push_back(raster::normalize_frame(raster::rasterize(network, p, ts), v_max));
    s.link_speeds.push_back(raster::dense_speeds(network, p));
  }
  return s;
}

Series series_from_records(const raster::RoadNetwork& network, std::span<const raster::SpeedRecord> records,
                           std::int64_t period_seconds, double v_max) {
  auto agg = raster::aggregate_periods(network, records, period_seconds);
  const auto filled = raster::fill_missing(std::move(agg.periods));
  return build_series(network, filled, agg.start_time, agg.period_seconds, v_max);
}

std::vector<raster::SampleWindow> series_windows(const Series& series, std::size_t lag,
                                                 std::span<const int> horizons) {
  return raster::make_windows(series.frames, series.link_speeds, lag, horizons);
}

Split time_split(std::vector<raster::SampleWindow> windows, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train.train_fraction", "must be in (0, 1)");
  if (windows.size() < 2) throw DataError(fmt::format("split: need at least 2 windows, have {}", windows.size()));
  auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(windows.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, windows.size() - 1);
  Split out;
  out.train.assign(std::make_move_iterator(windows.begin()),
                   std::make_move_iterator(windows.begin() + static_cast<std::ptrdiff_t>(n_train)));
  out.test.assign(std::make_move_iterator(windows.begin() + static_cast<std::ptrdiff_t>(n_train)),
                  std::make_move_iterator(windows.end()));
  return out;
}

}  // namespace capsnlstm::model
