#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "capsnlstm/grid_raster.hpp"

namespace capsnlstm::model {

double metric_mse(std::span<const double> predicted, std::span<const double> observed);

/// mean((pred - obs) / pred), signed, divided by the prediction. Throws
/// NumericError when any prediction is exactly 0.
double mape_signed(std::span<const double> predicted, std::span<const double> observed);

/// mean(|pred - obs| / |obs|) over entries with |obs| >= 1e-6; 0 if none remain.
double mape_standard(std::span<const double> predicted, std::span<const double> observed);

struct Metrics {
  double mse = 0.0;                 // (km/h)^2
  std::optional<double> mape_signed; // unset when some prediction was 0
  double mape_standard = 0.0;       // fraction, not percent
  std::vector<double> link_mae;     // km/h per link
  std::size_t count = 0;            // scored values
};

using Prediction = std::map<int, std::vector<double>>;  // horizon -> km/h per link
using Predictor = std::function<Prediction(const raster::SampleWindow&)>;

/// Scores `predict` on every sample; all horizons pooled unless `horizon` is given.
Metrics evaluate(const Predictor& predict, std::span<const raster::SampleWindow> samples, std::size_t links,
                 std::optional<int> horizon = std::nullopt);

/// Repeats the last observed link speeds for every target horizon.
Prediction persistence(const raster::SampleWindow& sample);

std::size_t flagged_links(const Metrics& metrics, double threshold_kmh);

/// `link_id,mae_kmh,flagged` with flagged = 1 when MAE > threshold.
void write_link_report(std::ostream& out, std::span<const raster::LinkId> links, const Metrics& metrics,
                       double threshold_kmh);

}  // namespace capsnlstm::model
