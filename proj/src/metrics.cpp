#include "capsnlstm/metrics.hpp"

#include <cmath>
#include <ostream>

#include <fmt/format.h>

namespace capsnlstm::model {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.empty()) throw ContractError(fmt::format("{}: empty input", what));
  if (a.size() != b.size()) throw ShapeError(fmt::format("{}: {} predictions vs {} observations", what, a.size(), b.size()));
}

}  // namespace

double metric_mse(std::span<const double> predicted, std::span<const double> observed) {
  check_pair(predicted, observed, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) acc += (predicted[i] - observed[i]) * (predicted[i] - observed[i]);
  return acc / static_cast<double>(predicted.size());
}

double mape_signed(std::span<const double> predicted, std::span<const double> observed) {
  check_pair(predicted, observed, "mape");
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == 0.0) throw NumericError(fmt::format("mape: division guard, prediction {} is 0", i));
    acc += (predicted[i] - observed[i]) / predicted[i];
  }
  return acc / static_cast<double>(predicted.size());
}

double mape_standard(std::span<const double> predicted, std::span<const double> observed) {
  check_pair(predicted, observed, "mape");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (std::abs(observed[i]) < 1e-6) continue;
    acc += std::abs(predicted[i] - observed[i]) / std::abs(observed[i]);
    ++n;
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

Metrics evaluate(const Predictor& predict, std::span<const raster::SampleWindow> samples, std::size_t links,
                 std::optional<int> horizon) {
  if (samples.empty()) throw DataError("evaluate: empty test set");
  std::vector<double> pred, obs;
  std::vector<double> abs_err(links, 0.0);
  std::vector<std::size_t> per_link(links, 0);
  for (const auto& s : samples) {
    const auto p = predict(s);
    for (const auto& [h, truth] : s.targets) {
      if (horizon && h != *horizon) continue;
      const auto it = p.find(h);
      if (it == p.end()) throw ContractError(fmt::format("evaluate: predictor gave no horizon {}", h));
      if (it->second.size() != links || truth.size() != links)
        throw ShapeError(fmt::format("evaluate: expected {} links per horizon", links));
      for (std::size_t l = 0; l < links; ++l) {
        pred.push_back(it->second[l]);
        obs.push_back(truth[l]);
        abs_err[l] += std::abs(it->second[l] - truth[l]);
        ++per_link[l];
      }
    }
  }
  if (pred.empty()) throw DataError("evaluate: no targets for the requested horizon");
  Metrics m;
  m.count = pred.size();
  m.mse = metric_mse(pred, obs);
  m.mape_standard = mape_standard(pred, obs);
  try {
    m.mape_signed = mape_signed(pred, obs);
  } catch (const NumericError&) {
    m.mape_signed.reset();
  }
  m.link_mae.resize(links);
  for (std::size_t l = 0; l < links; ++l) m.link_mae[l] = abs_err[l] / static_cast<double>(per_link[l]);
  return m;
}

Prediction persistence(const raster::SampleWindow& sample) {
  Prediction p;
  for (const auto& [h, truth] : sample.targets) p.emplace(h, sample.last_speeds);
  return p;
}

std::size_t flagged_links(const Metrics& metrics, double threshold_kmh) {
  std::size_t n = 0;
  for (double mae : metrics.link_mae) n += mae > threshold_kmh;
  return n;
}

void write_link_report(std::ostream& out, std::span<const raster::LinkId> links, const Metrics& metrics,
                       double threshold_kmh) {
  if (links.size() != metrics.link_mae.size())
    throw ShapeError(fmt::format("link report: {} ids for {} errors", links.size(), metrics.link_mae.size()));
  out << "link_id,mae_kmh,flagged\n";
  for (std::size_t l = 0; l < links.size(); ++l)
    out << fmt::format("{},{:.6f},{}\n", links[l].value, metrics.link_mae[l], metrics.link_mae[l] > threshold_kmh ? 1 : 0);
}

}  // namespace capsnlstm::model
