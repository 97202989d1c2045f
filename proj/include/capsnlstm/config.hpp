#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>

#include "capsnlstm/grid_raster.hpp"
#include "capsnlstm/model.hpp"
#include "capsnlstm/training.hpp"

namespace capsnlstm {

struct PathsConfig {
  std::filesystem::path network;
  std::filesystem::path records;
  std::filesystem::path archive;
  std::filesystem::path checkpoint;
  std::filesystem::path report_dir = "reports";
};

struct RasterConfig {
  raster::CellSize cell;
  double v_max = 80.0;
  std::int64_t period_seconds = 120;
  std::optional<raster::BoundingBox> bbox;  // fitted to the network when unset
};

struct SynthConfig {
  std::size_t links = 8;
  std::size_t rows = 20, cols = 20;
  std::size_t periods = 720;
  std::int64_t start_time = 1433116800;
  std::uint64_t seed = 7;
  raster::SynthParams params;
};

struct RunConfig {
  PathsConfig paths;
  RasterConfig raster;
  model::ModelConfig model;
  std::set<std::string> model_keys;  // keys set explicitly in [model]
  model::TrainConfig train;
  bool cross_validate = false;
  std::vector<std::size_t> cv_hidden;  // candidate hidden sizes when cross-validating
  double val_fraction = 0.1;           // tail of the training windows used for checkpoint selection
  SynthConfig synth;
  double flag_threshold_kmh = 2.0;

  void validate() const;
};

/// INI text: sections [paths] [raster] [model] [train] [synth] [eval].
/// `[model] preset = full|desk` and `[train] preset = full|desk` pick the
/// starting values that the other keys override. Relative paths resolve
/// against `base_dir`. Bad fields raise ConfigError naming "section.key".
RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& file);

/// Writes a config that parse_run_config reads back to the same values.
void write_run_config(std::ostream& out, const RunConfig& config);

}  // namespace capsnlstm
