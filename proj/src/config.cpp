#include "capsnlstm/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

namespace capsnlstm {

namespace pt = boost::property_tree;

namespace {

template <typename Num>
Num number(const std::string& field, const std::string& text) {
  Num out{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (text.empty() || ec != std::errc() || ptr != end)
    throw ConfigError(field, fmt::format("cannot parse `{}` as a number", text));
  return out;
}

bool boolean(const std::string& field, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(field, fmt::format("expected true/false, got `{}`", text));
}

std::vector<std::size_t> size_list(const std::string& field, const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    std::string item = text.substr(pos, comma - pos);
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    out.push_back(number<std::size_t>(field, item));
    pos = comma + 1;
  }
  return out;
}

using Setter = std::function<void(const std::string& field, const std::string& value)>;

void apply_section(const std::string& section, const pt::ptree& tree, const std::map<std::string, Setter>& setters) {
  for (const auto& [key, node] : tree) {
    const std::string field = section + "." + key;
    if (!node.empty()) throw ConfigError(field, "unexpected nested section");
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(field, "unknown key");
    it->second(field, node.data());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
  std::filesystem::path p(value);
  return p.is_relative() && !base.empty() ? base / p : p;
}

}  // namespace

void RunConfig::validate() const {
  if (!(raster.cell.dlat > 0.0)) throw ConfigError("raster.cell_lat", "must be positive");
  if (!(raster.cell.dlon > 0.0)) throw ConfigError("raster.cell_lon", "must be positive");
  if (!(raster.v_max > 0.0)) throw ConfigError("raster.v_max", "must be positive");
  if (raster.period_seconds <= 0) throw ConfigError("raster.period_seconds", "must be positive");
  if (raster.bbox && !(raster.bbox->max_lat > raster.bbox->min_lat && raster.bbox->max_lon > raster.bbox->min_lon))
    throw ConfigError("raster.max_lat", "bounding box must have max > min on both axes");
  model.validate();
  train.validate(cross_validate);
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("train.val_fraction", "must be in [0, 1)");
  if (cross_validate && cv_hidden.empty()) throw ConfigError("train.cv_hidden", "needs at least one candidate");
  for (auto h : cv_hidden)
    if (h == 0) throw ConfigError("train.cv_hidden", "hidden sizes must be positive");
  if (synth.links == 0) throw ConfigError("synth.links", "must be >= 1");
  if (synth.rows == 0 || synth.cols == 0) throw ConfigError("synth.rows", "grid must be at least 1x1");
  if (synth.periods == 0) throw ConfigError("synth.periods", "must be >= 1");
  if (!(synth.params.missing_rate >= 0.0 && synth.params.missing_rate < 1.0))
    throw ConfigError("synth.missing_rate", "must be in [0, 1)");
  if (synth.params.cycle_periods <= 0) throw ConfigError("synth.cycle_periods", "must be positive");
  if (!(flag_threshold_kmh >= 0.0)) throw ConfigError("eval.flag_threshold_kmh", "must be >= 0");
}

RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config", fmt::format("line {}: {}", e.line(), e.message()));
  }
  for (const auto& [name, node] : tree) {
    static const std::set<std::string> known{"paths", "raster", "model", "train", "synth", "eval"};
    if (!known.count(name)) throw ConfigError(name, "unknown section");
    if (node.empty() && !node.data().empty()) throw ConfigError(name, "key outside any section");
  }

  RunConfig c;
  const auto section = [&](const char* name) -> const pt::ptree& {
    static const pt::ptree empty;
    const auto child = tree.get_child_optional(name);
    return child ? *child : empty;
  };

  apply_section("paths", section("paths"),
                {
                    {"network", [&](auto&, auto& v) { c.paths.network = resolve(base_dir, v); }},
                    {"records", [&](auto&, auto& v) { c.paths.records = resolve(base_dir, v); }},
                    {"archive", [&](auto&, auto& v) { c.paths.archive = resolve(base_dir, v); }},
                    {"checkpoint", [&](auto&, auto& v) { c.paths.checkpoint = resolve(base_dir, v); }},
                    {"report_dir", [&](auto&, auto& v) { c.paths.report_dir = resolve(base_dir, v); }},
                });

  std::optional<double> min_lat, min_lon, max_lat, max_lon;
  apply_section("raster", section("raster"),
                {
                    {"cell_lat", [&](auto& f, auto& v) { c.raster.cell.dlat = number<double>(f, v); }},
                    {"cell_lon", [&](auto& f, auto& v) { c.raster.cell.dlon = number<double>(f, v); }},
                    {"v_max", [&](auto& f, auto& v) { c.raster.v_max = number<double>(f, v); }},
                    {"period_seconds", [&](auto& f, auto& v) { c.raster.period_seconds = number<std::int64_t>(f, v); }},
                    {"min_lat", [&](auto& f, auto& v) { min_lat = number<double>(f, v); }},
                    {"min_lon", [&](auto& f, auto& v) { min_lon = number<double>(f, v); }},
                    {"max_lat", [&](auto& f, auto& v) { max_lat = number<double>(f, v); }},
                    {"max_lon", [&](auto& f, auto& v) { max_lon = number<double>(f, v); }},
                });
  const int bbox_keys = min_lat.has_value() + min_lon.has_value() + max_lat.has_value() + max_lon.has_value();
  if (bbox_keys != 0 && bbox_keys != 4)
    throw ConfigError("raster.min_lat", "give all of min_lat, min_lon, max_lat, max_lon or none");
  if (bbox_keys == 4) c.raster.bbox = raster::BoundingBox{*min_lat, *min_lon, *max_lat, *max_lon};

  // [model]: preset and architecture first, then the remaining keys.
  {
    std::map<std::string, std::string> kv;
    for (const auto& [key, node] : section("model")) {
      if (!node.empty()) throw ConfigError("model." + key, "unexpected nested section");
      kv[key] = node.data();
    }
    const std::string preset = kv.count("preset") ? kv["preset"] : "full";
    kv.erase("preset");
    const auto arch = kv.count("architecture") ? model::parse_architecture(kv["architecture"])
                                               : model::Architecture::kCapsNetNlstm;
    if (preset == "full") c.model = model::ModelConfig::full(arch);
    else if (preset == "desk") c.model = model::ModelConfig::desk(arch, 20, 20, 8, 6, {1, 3});
    else throw ConfigError("model.preset", fmt::format("expected full or desk, got `{}`", preset));
    for (const auto& [key, value] : kv) c.model_keys.insert(key);
    c.model = model::from_key_values(kv, c.model);
    c.model.v_max = c.raster.v_max;
    if (kv.count("v_max")) throw ConfigError("model.v_max", "set v_max in [raster]");
  }

  {
    const auto& tr = section("train");
    const std::string preset = tr.get<std::string>("preset", "full");
    if (preset == "desk") c.train = model::TrainConfig::desk(c.train.seed);
    else if (preset != "full") throw ConfigError("train.preset", fmt::format("expected full or desk, got `{}`", preset));
    auto& t = c.train;
    apply_section("train", tr,
                  {
                      {"preset", [](auto&, auto&) {}},
                      {"learning_rate", [&](auto& f, auto& v) { t.learning_rate = number<double>(f, v); }},
                      {"decay", [&](auto& f, auto& v) { t.decay = number<double>(f, v); }},
                      {"decay_every", [&](auto& f, auto& v) { t.decay_every = number<std::size_t>(f, v); }},
                      {"batch_size", [&](auto& f, auto& v) { t.batch_size = number<std::size_t>(f, v); }},
                      {"epochs", [&](auto& f, auto& v) { t.epochs = number<std::size_t>(f, v); }},
                      {"seed", [&](auto& f, auto& v) { t.seed = number<std::uint64_t>(f, v); }},
                      {"folds", [&](auto& f, auto& v) { t.folds = number<std::size_t>(f, v); }},
                      {"rho", [&](auto& f, auto& v) { t.rho = number<double>(f, v); }},
                      {"epsilon", [&](auto& f, auto& v) { t.epsilon = number<double>(f, v); }},
                      {"train_fraction", [&](auto& f, auto& v) { t.train_fraction = number<double>(f, v); }},
                      {"val_fraction", [&](auto& f, auto& v) { c.val_fraction = number<double>(f, v); }},
                      {"cross_validate", [&](auto& f, auto& v) { c.cross_validate = boolean(f, v); }},
                      {"cv_hidden", [&](auto& f, auto& v) { c.cv_hidden = size_list(f, v); }},
                  });
  }

  auto& s = c.synth;
  auto& sp = s.params;
  apply_section("synth", section("synth"),
                {
                    {"links", [&](auto& f, auto& v) { s.links = number<std::size_t>(f, v); }},
                    {"rows", [&](auto& f, auto& v) { s.rows = number<std::size_t>(f, v); }},
                    {"cols", [&](auto& f, auto& v) { s.cols = number<std::size_t>(f, v); }},
                    {"periods", [&](auto& f, auto& v) { s.periods = number<std::size_t>(f, v); }},
                    {"start_time", [&](auto& f, auto& v) { s.start_time = number<std::int64_t>(f, v); }},
                    {"seed", [&](auto& f, auto& v) { s.seed = number<std::uint64_t>(f, v); }},
                    {"base_min", [&](auto& f, auto& v) { sp.base_min = number<double>(f, v); }},
                    {"base_max", [&](auto& f, auto& v) { sp.base_max = number<double>(f, v); }},
                    {"amplitude_min", [&](auto& f, auto& v) { sp.amplitude_min = number<double>(f, v); }},
                    {"amplitude_max", [&](auto& f, auto& v) { sp.amplitude_max = number<double>(f, v); }},
                    {"cycle_periods", [&](auto& f, auto& v) { sp.cycle_periods = number<std::int64_t>(f, v); }},
                    {"noise_amplitude", [&](auto& f, auto& v) { sp.noise_amplitude = number<double>(f, v); }},
                    {"congestion_depth", [&](auto& f, auto& v) { sp.congestion_depth = number<double>(f, v); }},
                    {"congestion_duration",
                     [&](auto& f, auto& v) { sp.congestion_duration = number<std::int64_t>(f, v); }},
                    {"propagation_delay", [&](auto& f, auto& v) { sp.propagation_delay = number<std::int64_t>(f, v); }},
                    {"missing_rate", [&](auto& f, auto& v) { sp.missing_rate = number<double>(f, v); }},
                });
  sp.v_max = c.raster.v_max;

  apply_section("eval", section("eval"),
                {{"flag_threshold_kmh", [&](auto& f, auto& v) { c.flag_threshold_kmh = number<double>(f, v); }}});

  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("config", fmt::format("cannot open `{}`", file.string()));
  return parse_run_config(in, file.parent_path());
}

void write_run_config(std::ostream& out, const RunConfig& c) {
  out << "[paths]\n";
  const auto path = [&](const char* key, const std::filesystem::path& p) {
    if (!p.empty()) out << key << " = " << p.string() << "\n";
  };
  path("network", c.paths.network);
  path("records", c.paths.records);
  path("archive", c.paths.archive);
  path("checkpoint", c.paths.checkpoint);
  path("report_dir", c.paths.report_dir);

  out << "\n[raster]\n";
  out << fmt::format("cell_lat = {}\ncell_lon = {}\nv_max = {}\nperiod_seconds = {}\n", c.raster.cell.dlat,
                     c.raster.cell.dlon, c.raster.v_max, c.raster.period_seconds);
  if (c.raster.bbox)
    out << fmt::format("min_lat = {}\nmin_lon = {}\nmax_lat = {}\nmax_lon = {}\n", c.raster.bbox->min_lat,
                       c.raster.bbox->min_lon, c.raster.bbox->max_lat, c.raster.bbox->max_lon);

  out << "\n[model]\n";
  for (const auto& [k, v] : model::to_key_values(c.model))
    if (k != "v_max") out << k << " = " << v << "\n";

  const auto& t = c.train;
  out << "\n[train]\n";
  out << fmt::format(
      "learning_rate = {}\ndecay = {}\ndecay_every = {}\nbatch_size = {}\nepochs = {}\nseed = {}\nfolds = {}\n"
      "rho = {}\nepsilon = {}\ntrain_fraction = {}\nval_fraction = {}\ncross_validate = {}\n",
      t.learning_rate, t.decay, t.decay_every, t.batch_size, t.epochs, t.seed, t.folds, t.rho, t.epsilon,
      t.train_fraction, c.val_fraction, c.cross_validate ? "true" : "false");
  if (!c.cv_hidden.empty()) out << fmt::format("cv_hidden = {}\n", fmt::join(c.cv_hidden, ","));

  const auto& s = c.synth;
  const auto& sp = s.params;
  out << "\n[synth]\n";
  out << fmt::format(
      "links = {}\nrows = {}\ncols = {}\nperiods = {}\nstart_time = {}\nseed = {}\nbase_min = {}\nbase_max = {}\n"
      "amplitude_min = {}\namplitude_max = {}\ncycle_periods = {}\nnoise_amplitude = {}\ncongestion_depth = {}\n"
      "congestion_duration = {}\npropagation_delay = {}\nmissing_rate = {}\n",
      s.links, s.rows, s.cols, s.periods, s.start_time, s.seed, sp.base_min, sp.base_max, sp.amplitude_min,
      sp.amplitude_max, sp.cycle_periods, sp.noise_amplitude, sp.congestion_depth, sp.congestion_duration,
      sp.propagation_delay, sp.missing_rate);

  out << "\n[eval]\n" << fmt::format("flag_threshold_kmh = {}\n", c.flag_threshold_kmh);
}

}  // namespace capsnlstm
