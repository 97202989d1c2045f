#pragma once

#include <iosfwd>
#include <map>
#include <vector>

#include "capsnlstm/dataset.hpp"
#include "capsnlstm/metrics.hpp"
#include "capsnlstm/training.hpp"

namespace capsnlstm::model {

struct CompareOptions {
  std::vector<Architecture> archs{Architecture::kCapsNetNlstm, Architecture::kCnnLstm, Architecture::kLstmStack,
                                  Architecture::kNlstmOnly};
  // Recurrent-only models rerun at each of these lags for the lag report;
  // empty means {lag, 2*lag}.
  std::vector<Architecture> lag_archs{Architecture::kLstmStack, Architecture::kNlstmOnly};
  std::vector<std::size_t> lags;
};

struct RunResult {
  std::string name;  // architecture tag or "persistence"
  std::size_t lag = 0;
  std::map<int, Metrics> by_horizon;
  std::vector<EpochRecord> history;
  double train_seconds = 0.0;
  double predict_seconds = 0.0;
};

struct ComparisonReport {
  std::vector<int> horizons;
  std::vector<RunResult> accuracy;  // persistence first, then each architecture
  std::vector<RunResult> lag_runs;
};

/// Trains every architecture of `options` on the same time split of `series`.
/// `base` supplies everything but the architecture (and lag for lag runs).
ComparisonReport run_comparison(const Series& series, const ModelConfig& base, const TrainConfig& train_config,
                                const CompareOptions& options = {});

/// Per-horizon MSE / signed MAPE / standard MAPE table, one row per model.
void write_accuracy_report(std::ostream& out, const ComparisonReport& report);
/// Per-horizon MSE and training time of the lag runs, one row per (model, lag).
void write_lag_report(std::ostream& out, const ComparisonReport& report);

}  // namespace capsnlstm::model
