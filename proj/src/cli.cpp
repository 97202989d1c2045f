#include "capsnlstm/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <fmt/ranges.h>

#include "capsnlstm/compare.hpp"
#include "capsnlstm/config.hpp"
#include "capsnlstm/dataset.hpp"
#include "capsnlstm/gradcheck_suite.hpp"
#include "capsnlstm/metrics.hpp"
#include "capsnlstm/training.hpp"

namespace capsnlstm::cli {

namespace fs = std::filesystem;
using model::Model;
using raster::SampleWindow;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig load(const Common& common) {
  RunConfig cfg = common.config.empty() ? RunConfig{} : load_run_config(common.config);
  if (common.seed) {
    cfg.train.seed = *common.seed;
    cfg.synth.seed = *common.seed;
  }
  if (!common.out.empty()) cfg.paths.report_dir = common.out;
  return cfg;
}

void require_file(const fs::path& path, const char* field) {
  if (path.empty()) throw ConfigError(field, "not set");
  if (!fs::is_regular_file(path)) throw ConfigError(field, fmt::format("file not found: `{}`", path.string()));
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write `{}`", path.string()));
  return out;
}

fs::path report_path(const RunConfig& cfg, const char* name) { return cfg.paths.report_dir / name; }

fs::path archive_path(const RunConfig& cfg) {
  return cfg.paths.archive.empty() ? report_path(cfg, "frames.sfr") : cfg.paths.archive;
}

fs::path checkpoint_path(const RunConfig& cfg) {
  return cfg.paths.checkpoint.empty() ? report_path(cfg, "model.ckpt") : cfg.paths.checkpoint;
}

raster::RoadNetwork load_network(const RunConfig& cfg) {
  require_file(cfg.paths.network, "paths.network");
  std::ifstream in(cfg.paths.network);
  auto links = raster::read_network_geometry(in);
  if (cfg.raster.bbox) return raster::RoadNetwork(std::move(links), *cfg.raster.bbox, cfg.raster.cell);
  return raster::RoadNetwork::fitted(std::move(links), cfg.raster.cell);
}

std::vector<raster::SpeedRecord> load_records(const RunConfig& cfg) {
  require_file(cfg.paths.records, "paths.records");
  std::ifstream in(cfg.paths.records);
  auto records = raster::read_speed_records(in);
  if (records.empty()) throw DataError(fmt::format("no records in `{}`", cfg.paths.records.string()));
  return records;
}

// Aggregated, gap-filled km/h frames.
std::vector<raster::SpeedFrame> raster_frames(const raster::RoadNetwork& network,
                                              std::span<const raster::SpeedRecord> records,
                                              std::int64_t period_seconds) {
  auto agg = raster::aggregate_periods(network, records, period_seconds);
  const auto filled = raster::fill_missing(std::move(agg.periods));
  std::vector<raster::SpeedFrame> frames;
  frames.reserve(filled.size());
  for (const auto& p : filled)
    frames.push_back(raster::rasterize(network, p, agg.start_time + p.period_index * agg.period_seconds));
  return frames;
}

model::Series load_series(const RunConfig& cfg) {
  const auto network = load_network(cfg);
  const auto records = load_records(cfg);
  return model::series_from_records(network, records, cfg.raster.period_seconds, cfg.raster.v_max);
}

// Grid and link count come from the data unless the config pins them.
model::ModelConfig fit_model_config(const RunConfig& cfg, const model::Series& series) {
  auto mc = cfg.model;
  const auto fit = [&](const char* key, std::size_t& field, std::size_t actual) {
    if (!cfg.model_keys.count(key)) field = actual;
    else if (field != actual)
      throw ConfigError(fmt::format("model.{}", key), fmt::format("config says {}, data has {}", field, actual));
  };
  fit("rows", mc.rows, series.dims.rows);
  fit("cols", mc.cols, series.dims.cols);
  fit("links", mc.links, series.links.size());
  mc.v_max = series.v_max;
  mc.validate();
  return mc;
}

void print_metrics_row(std::ostream& out, const std::string& name, const std::string& horizon,
                       const model::Metrics& m, double threshold) {
  const auto mape = m.mape_signed ? fmt::format("{:.4f}", *m.mape_signed) : std::string("n/a");
  fmt::print(out, "{:<14} {:>7} {:>12.4f} {:>10} {:>10.4f} {:>8}\n", name, horizon, m.mse, mape, m.mape_standard,
             model::flagged_links(m, threshold));
}

// ---- commands -------------------------------------------------------------

int cmd_rasterize(const RunConfig& cfg, std::ostream& out) {
  const auto network = load_network(cfg);
  const auto records = load_records(cfg);
  const auto frames = raster_frames(network, records, cfg.raster.period_seconds);
  const auto path = archive_path(cfg);
  auto file = open_output(path);
  raster::write_frame_archive(file, frames);
  fmt::print(out, "wrote {} frames of {}x{} to {}\n", frames.size(), network.dims().rows, network.dims().cols,
             path.string());
  return kOk;
}

int cmd_synth(RunConfig cfg, std::ostream& out) {
  const auto& s = cfg.synth;
  const auto network = raster::synth_network(s.links, {s.rows, s.cols}, s.seed, {39.9, 116.3}, cfg.raster.cell);
  const auto traffic = raster::synth_traffic(network, s.periods, s.seed, s.params);
  const auto records =
      raster::synth_records(network, traffic, s.start_time, cfg.raster.period_seconds, s.params.missing_rate, s.seed);

  const fs::path dir = cfg.paths.report_dir;
  {
    auto f = open_output(dir / "network.txt");
    raster::write_network_geometry(f, network);
  }
  {
    auto f = open_output(dir / "records.csv");
    raster::write_speed_records(f, records);
  }
  const auto frames = raster_frames(network, records, cfg.raster.period_seconds);
  {
    auto f = open_output(dir / "frames.sfr");
    raster::write_frame_archive(f, frames);
  }

  // A config that trains on the generated data as-is.
  RunConfig run = cfg;
  run.paths = {"network.txt", "records.csv", "frames.sfr", "model.ckpt", "."};
  run.raster.bbox = network.bbox();
  if (cfg.model_keys.empty()) {
    run.model = model::ModelConfig::desk(cfg.model.arch, s.rows, s.cols, s.links, 6, {1, 3});
    run.train = model::TrainConfig::desk(s.seed);
  } else {
    run.model.rows = network.dims().rows;
    run.model.cols = network.dims().cols;
    run.model.links = network.link_count();
  }
  run.model.v_max = cfg.raster.v_max;
  {
    auto f = open_output(dir / "run.ini");
    write_run_config(f, run);
  }
  fmt::print(out, "wrote {} links, {} records, {} frames of {}x{} to {}\n", network.link_count(), records.size(),
             frames.size(), network.dims().rows, network.dims().cols, dir.string());
  return kOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const auto series = load_series(cfg);
  auto mc = fit_model_config(cfg, series);
  auto split = model::time_split(model::series_windows(series, mc.lag, mc.horizons), cfg.train.train_fraction);

  if (cfg.cross_validate) {
    std::vector<model::ModelConfig> candidates;
    for (auto h : cfg.cv_hidden) {
      candidates.push_back(mc);
      candidates.back().hidden = h;
    }
    const auto cv = model::cross_validate<float>(split.train, candidates, cfg.train);
    auto f = open_output(report_path(cfg, "cv.csv"));
    f << "hidden,mean_val_loss\n";
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      fmt::print(f, "{},{:.9g}\n", candidates[i].hidden, cv.mean_losses[i]);
      fmt::print(out, "cv hidden {:>5}: mean val loss {:.6f}\n", candidates[i].hidden, cv.mean_losses[i]);
    }
    mc = candidates[cv.selected];
    fmt::print(out, "selected hidden {}\n", mc.hidden);
  }

  std::vector<SampleWindow> training = std::move(split.train), validation;
  const auto n_val = static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(training.size()));
  if (n_val > 0 && n_val < training.size()) {
    validation.assign(std::make_move_iterator(training.end() - static_cast<std::ptrdiff_t>(n_val)),
                      std::make_move_iterator(training.end()));
    training.resize(training.size() - n_val);
  }

  Model<float> m(mc, cfg.train.seed);
  fmt::print(out, "{} with {} parameters, {} train / {} validation / {} test windows\n", model::to_string(mc.arch),
             m.params().scalar_count(), training.size(), validation.size(), split.test.size());
  const auto result = model::train<float>(m, training, validation, cfg.train, [&](const model::EpochRecord& r) {
    fmt::print(out, "epoch {:>4}  lr {:.3e}  train {:.6f}  val {:.6f}\n", r.epoch, r.lr, r.train_loss, r.val_loss);
  });

  {
    auto f = open_output(report_path(cfg, "history.csv"));
    model::write_history(f, result.history);
  }
  const auto ckpt = checkpoint_path(cfg);
  {
    auto f = open_output(ckpt);
    model::write_model(f, m);
  }
  fmt::print(out, "initial train loss {:.6f}, final {:.6f}; checkpoint {}\n", result.initial_train_loss,
             result.history.empty() ? result.initial_train_loss : result.history.back().train_loss, ckpt.string());
  return kOk;
}

Model<float> load_checkpoint_for(const RunConfig& cfg) {
  const auto ckpt = checkpoint_path(cfg);
  if (!fs::is_regular_file(ckpt)) throw ConfigError("paths.checkpoint", fmt::format("missing checkpoint `{}`", ckpt.string()));
  std::ifstream in(ckpt, std::ios::binary);
  auto saved = model::read_model(in);
  if (cfg.model_keys.count("architecture") && saved.config.arch != cfg.model.arch)
    throw ConfigError("model.architecture", fmt::format("config asks for {}, checkpoint holds {}",
                                                        model::to_string(cfg.model.arch),
                                                        model::to_string(saved.config.arch)));
  return model::restore_model<float>(saved);
}

void check_compatible(const model::ModelConfig& mc, const model::Series& series) {
  if (mc.rows != series.dims.rows || mc.cols != series.dims.cols)
    throw DataError(fmt::format("checkpoint expects a {}x{} grid, data is {}x{}", mc.rows, mc.cols, series.dims.rows,
                                series.dims.cols));
  if (mc.links != series.links.size())
    throw DataError(fmt::format("checkpoint expects {} links, data has {}", mc.links, series.links.size()));
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const auto m = load_checkpoint_for(cfg);
  const auto& mc = m.config();
  const auto series = load_series(cfg);
  check_compatible(mc, series);
  const auto split = model::time_split(model::series_windows(series, mc.lag, mc.horizons), cfg.train.train_fraction);
  const model::Predictor predict = [&](const SampleWindow& s) { return m.predict(s); };
  const double threshold = cfg.flag_threshold_kmh;

  fmt::print(out, "{:<14} {:>7} {:>12} {:>10} {:>10} {:>8}\n", "model", "horizon", "mse", "mape_sgn", "mape_std",
             "flagged");
  auto f = open_output(report_path(cfg, "metrics.csv"));
  f << "model,horizon,mse,mape_signed,mape_standard,flagged_links\n";
  const auto row = [&](const std::string& name, const model::Predictor& p, std::optional<int> h) {
    const auto metrics = model::evaluate(p, split.test, series.links.size(), h);
    const std::string hz = h ? std::to_string(*h) : "all";
    print_metrics_row(out, name, hz, metrics, threshold);
    fmt::print(f, "{},{},{:.9g},{},{:.9g},{}\n", name, hz, metrics.mse,
               metrics.mape_signed ? fmt::format("{:.9g}", *metrics.mape_signed) : "", metrics.mape_standard,
               model::flagged_links(metrics, threshold));
    return metrics;
  };
  const auto pooled = row(model::to_string(mc.arch), predict, std::nullopt);
  for (int h : mc.horizons) row(model::to_string(mc.arch), predict, h);
  row("persistence", model::persistence, std::nullopt);
  for (int h : mc.horizons) row("persistence", model::persistence, h);

  auto report = open_output(report_path(cfg, "link_report.csv"));
  model::write_link_report(report, series.links, pooled, threshold);
  fmt::print(out, "{} of {} links above {} km/h MAE; reports in {}\n", model::flagged_links(pooled, threshold),
             series.links.size(), threshold, cfg.paths.report_dir.string());
  return kOk;
}

int cmd_predict(const RunConfig& cfg, std::size_t t, std::ostream& out) {
  const auto m = load_checkpoint_for(cfg);
  const auto& mc = m.config();
  const auto series = load_series(cfg);
  check_compatible(mc, series);
  if (t + 1 < mc.lag || t >= series.frames.size())
    throw ConfigError("t", fmt::format("needs {} <= t < {} (lag {})", mc.lag - 1, series.frames.size(), mc.lag));

  SampleWindow window;
  window.start = t + 1 - mc.lag;
  window.inputs.assign(series.frames.begin() + static_cast<std::ptrdiff_t>(window.start),
                       series.frames.begin() + static_cast<std::ptrdiff_t>(t + 1));
  window.last_speeds = series.link_speeds[t];
  const auto prediction = m.predict(window);

  std::ostringstream table;
  table << "horizon,link_id,speed_kmh\n";
  for (const auto& [h, speeds] : prediction)
    for (std::size_t l = 0; l < speeds.size(); ++l)
      fmt::print(table, "{},{},{:.4f}\n", h, raster::to_string(series.links[l]), speeds[l]);
  out << table.str();
  auto f = open_output(report_path(cfg, fmt::format("predict_t{}.csv", t).c_str()));
  f << table.str();
  return kOk;
}

int cmd_paramcount(const model::ModelConfig& mc, std::ostream& out) {
  const auto plan = model::layer_plan(mc);
  fmt::print(out, "{} ({}x{}x1 input, lag {}, {} links)\n", model::to_string(mc.arch), mc.rows, mc.cols, mc.lag,
             mc.links);
  fmt::print(out, "{:<18} {:<44} {:>16} {:>14}\n", "layer", "detail", "output", "params");
  for (const auto& r : plan.rows)
    fmt::print(out, "{:<18} {:<44} {:>16} {:>14}\n", r.name, r.detail,
               r.output.empty() ? std::string("-") : model::format_shape(r.output), r.params);
  fmt::print(out, "{:<18} {:<44} {:>16} {:>14}\n", "Total", "", "", plan.total);
  return kOk;
}

int cmd_gradcheck(const RunConfig& cfg, std::uint64_t seed, bool composed, bool write_report, std::ostream& out) {
  const auto rows = run_gradcheck_suite(seed, composed);
  bool ok = true;
  std::ostringstream csv;
  csv << "check,step,max_rel_error,coordinates,seconds,status\n";
  fmt::print(out, "{:<40} {:>8} {:>12} {:>8} {:>8}  {}\n", "check", "step", "max_rel_err", "coords", "seconds",
             "status");
  for (const auto& r : rows) {
    const char* status = !r.gating ? "info" : r.passed() ? "ok" : "FAIL";
    if (r.gating && !r.passed()) ok = false;
    fmt::print(out, "{:<40} {:>8.0e} {:>12.3e} {:>8} {:>8.2f}  {}\n", r.name, r.step, r.result.max_rel_error,
               r.result.coordinates, r.seconds, status);
    fmt::print(csv, "{},{:g},{:.6e},{},{:.3f},{}\n", r.name, r.step, r.result.max_rel_error, r.result.coordinates,
               r.seconds, status);
  }
  if (write_report) {
    auto f = open_output(report_path(cfg, "gradcheck.csv"));
    f << csv.str();
  }
  fmt::print(out, "{} (tolerance {:g})\n", ok ? "all checks passed" : "some checks FAILED", kGradCheckTolerance);
  return ok ? kOk : kFailedCheck;
}

int cmd_compare(const RunConfig& cfg, std::optional<std::size_t> epochs, std::ostream& out) {
  const auto series = load_series(cfg);
  const auto mc = fit_model_config(cfg, series);
  auto tc = cfg.train;
  if (epochs) tc.epochs = *epochs;
  const auto report = model::run_comparison(series, mc, tc);

  std::ostringstream accuracy, lag;
  model::write_accuracy_report(accuracy, report);
  model::write_lag_report(lag, report);
  out << accuracy.str() << "\n" << lag.str();
  auto fa = open_output(report_path(cfg, "accuracy.txt"));
  fa << accuracy.str();
  auto fl = open_output(report_path(cfg, "lag.txt"));
  fl << lag.str();
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CapsNet + nested LSTM traffic speed forecasting"};
  app.require_subcommand(1);
  Common common;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "run configuration (INI)");
    sub->add_option("--seed", common.seed, "seed for initialization, shuffling, dropout and synthesis");
    sub->add_option("--out", common.out, "output directory (overrides paths.report_dir)");
  };

  auto* rasterize = app.add_subcommand("rasterize", "aggregate records and write the frame archive");
  auto* synth = app.add_subcommand("synth", "generate a synthetic network, records, archive and run.ini");
  auto* train = app.add_subcommand("train", "train a model and write checkpoint and history");
  auto* eval = app.add_subcommand("eval", "score a checkpoint on the held-out windows");
  auto* predict = app.add_subcommand("predict", "forecast from the window ending at frame t");
  auto* paramcount = app.add_subcommand("paramcount", "layer table with output shapes and parameter counts");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  auto* compare = app.add_subcommand("compare", "train the baseline set and write accuracy and lag reports");
  for (auto* sub : {rasterize, synth, train, eval, predict, paramcount, gradcheck, compare}) add_common(sub);

  std::size_t t = 0;
  predict->add_option("--t", t, "index of the last observed frame")->required();
  std::string arch_tag = "capsnet_nlstm", preset = "full";
  paramcount->add_option("--arch", arch_tag, "architecture when no config is given");
  paramcount->add_option("--preset", preset, "full or desk when no config is given");
  bool primitives_only = false;
  gradcheck->add_flag("--primitives-only", primitives_only, "skip the composed model checks");
  std::optional<std::size_t> epochs;
  compare->add_option("--epochs", epochs, "override train.epochs");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    auto* failing = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    if (e.get_exit_code() == 0) {
      out << failing->help();
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    return kBadConfig;
  }

  try {
    if (paramcount->parsed()) {
      if (!common.config.empty()) return cmd_paramcount(load(common).model, out);
      const auto arch = model::parse_architecture(arch_tag);
      if (preset == "full") return cmd_paramcount(model::ModelConfig::full(arch), out);
      if (preset == "desk") return cmd_paramcount(model::ModelConfig::desk(arch, 20, 20, 8, 6, {1, 3}), out);
      throw ConfigError("preset", fmt::format("expected full or desk, got `{}`", preset));
    }
    const RunConfig cfg = load(common);
    if (rasterize->parsed()) return cmd_rasterize(cfg, out);
    if (synth->parsed()) return cmd_synth(cfg, out);
    if (train->parsed()) return cmd_train(cfg, out);
    if (eval->parsed()) return cmd_eval(cfg, out);
    if (predict->parsed()) return cmd_predict(cfg, t, out);
    if (gradcheck->parsed())
      return cmd_gradcheck(cfg, common.seed.value_or(7), !primitives_only, !common.out.empty(), out);
    if (compare->parsed()) return cmd_compare(cfg, epochs, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kBadConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailedCheck;
  }
  return kBadConfig;
}

}  // namespace capsnlstm::cli
