#include "capsnlstm/compare.hpp"

#include <chrono>
#include <ostream>

#include <fmt/format.h>

namespace capsnlstm::model {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::map<int, Metrics> score(const Predictor& predict, std::span<const raster::SampleWindow> test,
                             const std::vector<int>& horizons, std::size_t links) {
  std::map<int, Metrics> out;
  for (int h : horizons) out.emplace(h, evaluate(predict, test, links, h));
  return out;
}

RunResult train_and_score(Architecture arch, std::size_t lag, const Series& series, const ModelConfig& base,
                          const TrainConfig& tc) {
  ModelConfig mc = base;
  mc.arch = arch;
  mc.lag = lag;
  const auto split = time_split(series_windows(series, lag, mc.horizons), tc.train_fraction);

  RunResult r;
  r.name = to_string(arch);
  r.lag = lag;
  Model<float> model(mc, tc.seed);
  auto t0 = Clock::now();
  r.history = train(model, std::span<const raster::SampleWindow>(split.train), {}, tc).history;
  r.train_seconds = seconds_since(t0);
  t0 = Clock::now();
  r.by_horizon = score([&](const raster::SampleWindow& s) { return model.predict(s); }, split.test, mc.horizons,
                       mc.links);
  r.predict_seconds = seconds_since(t0);
  return r;
}

std::string fmt_mape(const std::optional<double>& v) { return v ? fmt::format("{:10.4f}", *v) : fmt::format("{:>10}", "n/a"); }

}  // namespace

ComparisonReport run_comparison(const Series& series, const ModelConfig& base, const TrainConfig& train_config,
                                const CompareOptions& options) {
  base.validate();
  train_config.validate();
  ComparisonReport report;
  report.horizons = base.horizons;

  {
    const auto split = time_split(series_windows(series, base.lag, base.horizons), train_config.train_fraction);
    RunResult p;
    p.name = "persistence";
    p.lag = base.lag;
    const auto t0 = Clock::now();
    p.by_horizon = score(persistence, split.test, base.horizons, base.links);
    p.predict_seconds = seconds_since(t0);
    report.accuracy.push_back(std::move(p));
  }
  for (auto arch : options.archs) report.accuracy.push_back(train_and_score(arch, base.lag, series, base, train_config));

  const std::vector<std::size_t> lags = options.lags.empty() ? std::vector<std::size_t>{base.lag, 2 * base.lag}
                                                             : options.lags;
  for (auto arch : options.lag_archs)
    for (std::size_t lag : lags) report.lag_runs.push_back(train_and_score(arch, lag, series, base, train_config));
  return report;
}

void write_accuracy_report(std::ostream& out, const ComparisonReport& report) {
  out << fmt::format("{:<16}{:>8}{:>12}{:>10}{:>10}\n", "model", "horizon", "mse", "mape_sgn", "mape_std");
  for (const auto& r : report.accuracy)
    for (int h : report.horizons) {
      const auto& m = r.by_horizon.at(h);
      out << fmt::format("{:<16}{:>8}{:12.4f}{}{:10.4f}\n", r.name, h, m.mse, fmt_mape(m.mape_signed), m.mape_standard);
    }
  out << "mape_sgn = mean((pred - obs) / pred); mape_std = mean(|pred - obs| / |obs|)\n";
}

void write_lag_report(std::ostream& out, const ComparisonReport& report) {
  out << fmt::format("{:<16}{:>6}", "model", "lag");
  for (int h : report.horizons) out << fmt::format("{:>12}", fmt::format("mse@h{}", h));
  out << fmt::format("{:>12}{:>12}\n", "train_s", "predict_s");
  for (const auto& r : report.lag_runs) {
    out << fmt::format("{:<16}{:>6}", r.name, r.lag);
    for (int h : report.horizons) out << fmt::format("{:12.4f}", r.by_horizon.at(h).mse);
    out << fmt::format("{:12.2f}{:12.3f}\n", r.train_seconds, r.predict_seconds);
  }
}

}  // namespace capsnlstm::model
