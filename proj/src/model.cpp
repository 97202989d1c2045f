#include "capsnlstm/model.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "capsnlstm/rng.hpp"

namespace capsnlstm::model {

using ad::Var;

namespace {

const std::vector<std::pair<Architecture, std::string>>& architecture_tags() {
  static const std::vector<std::pair<Architecture, std::string>> tags{
      {Architecture::kCapsNetNlstm, "capsnet_nlstm"}, {Architecture::kCnnLstm, "cnn_lstm"},
      {Architecture::kLstmStack, "lstm_stack"},       {Architecture::kNlstmOnly, "nlstm_only"},
      {Architecture::kDcnn, "dcnn"},                  {Architecture::kCapsNetOnly, "capsnet_only"},
  };
  return tags;
}

bool uses_capsnet(Architecture a) { return a == Architecture::kCapsNetNlstm || a == Architecture::kCapsNetOnly; }
bool uses_cnn(Architecture a) { return a == Architecture::kCnnLstm || a == Architecture::kDcnn; }

}  // namespace

std::string to_string(Architecture arch) {
  for (const auto& [a, tag] : architecture_tags())
    if (a == arch) return tag;
  return "unknown";
}

Architecture parse_architecture(const std::string& tag) {
  for (const auto& [a, name] : architecture_tags())
    if (name == tag) return a;
  throw ConfigError("model.architecture", fmt::format("unknown architecture `{}`", tag));
}

const std::vector<Architecture>& all_architectures() {
  static const std::vector<Architecture> archs = [] {
    std::vector<Architecture> out;
    for (const auto& [a, tag] : architecture_tags()) out.push_back(a);
    return out;
  }();
  return archs;
}

std::string format_shape(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Layer plan

namespace {

struct TrunkPlan {
  std::vector<LayerRow> rows;
  std::size_t features = 0;  // per-frame feature length
};

TrunkPlan capsnet_rows(const ModelConfig& c) {
  const auto& cc = c.capsnet;
  const auto shapes = caps::capsnet_shapes(cc, c.rows, c.cols);
  const auto counts = caps::capsnet_param_count(cc, c.rows, c.cols);
  TrunkPlan p;
  p.rows.push_back({"Convolution",
                    fmt::format("kernel {0}x{0}, {1} channels, stride {2}", cc.conv1.kernel, cc.conv1.channels,
                                cc.conv1.stride),
                    shapes.conv1, counts[0].count});
  p.rows.push_back({"PrimaryCaps",
                    fmt::format("kernel {0}x{0}, {1} channels, stride {2}", cc.primary.kernel, cc.primary.channels,
                                cc.primary.stride),
                    shapes.primary, counts[1].count});
  p.rows.push_back({"Reshape", fmt::format("capsule dim {}", cc.primary_dim), shapes.capsules, 0});
  p.rows.push_back({"TrafficCaps",
                    fmt::format("{} capsules of dim {}, {} routing iterations", cc.num_advanced, cc.advanced_dim,
                                cc.routing_iters),
                    shapes.advanced, counts[2].count});
  p.rows.push_back({"Flattened", "", shapes.flat, 0});
  p.features = shapes.flat[0];
  return p;
}

TrunkPlan cnn_rows(const ModelConfig& c) {
  TrunkPlan p;
  std::size_t h = c.rows, w = c.cols, in = 1;
  for (std::size_t s = 0; s < c.cnn.channels.size(); ++s) {
    const std::size_t out = c.cnn.channels[s];
    h = ad::conv_output_extent(h, c.cnn.kernel, 1, ad::Padding::kSame);
    w = ad::conv_output_extent(w, c.cnn.kernel, 1, ad::Padding::kSame);
    p.rows.push_back({fmt::format("Convolution{}", s + 1), fmt::format("filter {0}x{0}x{1}", c.cnn.kernel, out),
                      {h, w, out}, c.cnn.kernel * c.cnn.kernel * in * out + out});
    h = ad::pool_output_extent(h, c.cnn.pool, c.cnn.pool, true);
    w = ad::pool_output_extent(w, c.cnn.pool, c.cnn.pool, true);
    p.rows.push_back({fmt::format("Pooling{}", s + 1), fmt::format("max {0}x{0}", c.cnn.pool), {h, w, out}, 0});
    in = out;
  }
  p.features = h * w * in;
  p.rows.push_back({"Flattened", "", {p.features}, 0});
  return p;
}

LayerPlan build_plan(const ModelConfig& c) {
  LayerPlan plan;
  plan.rows.push_back({"Input", "", {c.rows, c.cols, 1}, 0});
  auto append = [&](std::vector<LayerRow> rows) {
    for (auto& r : rows) plan.rows.push_back(std::move(r));
  };
  const std::size_t hd = c.hidden;
  std::size_t head_in = 0;
  switch (c.arch) {
    case Architecture::kCapsNetNlstm: {
      auto trunk = capsnet_rows(c);
      append(trunk.rows);
      plan.rows.push_back({"NLSTM", fmt::format("hidden {}", hd), {hd}, rnn::nlstm_param_count(trunk.features, hd)});
      head_in = hd;
      break;
    }
    case Architecture::kCnnLstm: {
      auto trunk = cnn_rows(c);
      append(trunk.rows);
      plan.rows.push_back({"LSTM1", fmt::format("hidden {}", hd), {hd}, rnn::lstm_param_count(trunk.features, hd)});
      plan.rows.push_back({"LSTM2", fmt::format("hidden {}", hd), {hd}, rnn::lstm_param_count(hd, hd)});
      head_in = hd;
      break;
    }
    case Architecture::kLstmStack: {
      const std::size_t d = c.rows * c.cols;
      plan.rows.push_back({"Flattened", "", {d}, 0});
      plan.rows.push_back({"LSTM1", fmt::format("hidden {}", hd), {hd}, rnn::lstm_param_count(d, hd)});
      plan.rows.push_back({"LSTM2", fmt::format("hidden {}", hd), {hd}, rnn::lstm_param_count(hd, hd)});
      head_in = hd;
      break;
    }
    case Architecture::kNlstmOnly: {
      const std::size_t d = c.rows * c.cols;
      plan.rows.push_back({"Flattened", "", {d}, 0});
      plan.rows.push_back({"NLSTM", fmt::format("hidden {}", hd), {hd}, rnn::nlstm_param_count(d, hd)});
      head_in = hd;
      break;
    }
    case Architecture::kDcnn:
    case Architecture::kCapsNetOnly: {
      auto trunk = c.arch == Architecture::kDcnn ? cnn_rows(c) : capsnet_rows(c);
      append(trunk.rows);
      head_in = c.lag * trunk.features;
      plan.rows.push_back({"Time flatten", fmt::format("{} steps", c.lag), {head_in}, 0});
      break;
    }
  }
  plan.rows.push_back({"Dropout", fmt::format("{}", c.dropout), {head_in}, 0});
  for (int h : c.horizons)
    plan.rows.push_back({"Fully connected", fmt::format("horizon {}", h), {c.links}, (head_in + 1) * c.links});
  for (const auto& r : plan.rows) plan.total += r.params;
  return plan;
}

}  // namespace

void ModelConfig::validate() const {
  if (rows == 0) throw ConfigError("model.rows", "must be positive");
  if (cols == 0) throw ConfigError("model.cols", "must be positive");
  if (lag == 0) throw ConfigError("model.lag", "must be >= 1");
  if (horizons.empty()) throw ConfigError("model.horizons", "must not be empty");
  std::set<int> seen;
  for (int h : horizons) {
    if (h < 1) throw ConfigError("model.horizons", fmt::format("horizon {} must be >= 1", h));
    if (!seen.insert(h).second) throw ConfigError("model.horizons", fmt::format("horizon {} repeated", h));
  }
  if (links == 0) throw ConfigError("model.links", "must be >= 1");
  if (hidden == 0) throw ConfigError("model.hidden", "must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout", "must be in [0, 1)");
  if (!(v_max > 0.0)) throw ConfigError("model.v_max", "must be positive");
  if (uses_capsnet(arch)) capsnet.validate();
  if (uses_cnn(arch)) {
    if (cnn.channels.empty()) throw ConfigError("model.cnn_channels", "need at least one stage");
    if (std::find(cnn.channels.begin(), cnn.channels.end(), 0u) != cnn.channels.end())
      throw ConfigError("model.cnn_channels", "channels must be positive");
    if (cnn.kernel == 0) throw ConfigError("model.cnn_kernel", "must be positive");
    if (cnn.pool == 0) throw ConfigError("model.cnn_pool", "must be positive");
  }
  try {
    build_plan(*this);
  } catch (const ShapeError& e) {
    throw ConfigError("model.rows", fmt::format("grid {}x{} too small for {}: {}", rows, cols, to_string(arch),
                                                e.what()));
  }
}

ModelConfig ModelConfig::full(Architecture arch) {
  ModelConfig c;
  c.arch = arch;
  return c;
}

ModelConfig ModelConfig::desk(Architecture arch, std::size_t rows, std::size_t cols, std::size_t links,
                              std::size_t lag, std::vector<int> horizons) {
  ModelConfig c;
  c.arch = arch;
  c.rows = rows;
  c.cols = cols;
  c.links = links;
  c.lag = lag;
  c.horizons = std::move(horizons);
  c.capsnet = caps::CapsNetConfig::desk();
  c.cnn.channels = {8, 8, 16, 16};
  c.hidden = 32;
  return c;
}

LayerPlan layer_plan(const ModelConfig& config) {
  config.validate();
  return build_plan(config);
}

// ---------------------------------------------------------------------------
// Key-value form

namespace {

template <typename Num>
Num parse_num(const std::string& key, const std::string& text) {
  Num out{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("model." + key, fmt::format("cannot parse `{}` as a number", text));
  return out;
}

template <typename Num>
std::vector<Num> parse_list(const std::string& key, const std::string& text) {
  std::vector<Num> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    std::string item = text.substr(pos, comma - pos);
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    out.push_back(parse_num<Num>(key, item));
    pos = comma + 1;
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("model." + key, fmt::format("expected true/false, got `{}`", text));
}

}  // namespace

std::map<std::string, std::string> to_key_values(const ModelConfig& c) {
  const auto& cc = c.capsnet;
  return {
      {"architecture", to_string(c.arch)},
      {"rows", std::to_string(c.rows)},
      {"cols", std::to_string(c.cols)},
      {"lag", std::to_string(c.lag)},
      {"horizons", fmt::format("{}", fmt::join(c.horizons, ","))},
      {"links", std::to_string(c.links)},
      {"hidden", std::to_string(c.hidden)},
      {"dropout", fmt::format("{}", c.dropout)},
      {"v_max", fmt::format("{}", c.v_max)},
      {"caps_conv1_kernel", std::to_string(cc.conv1.kernel)},
      {"caps_conv1_channels", std::to_string(cc.conv1.channels)},
      {"caps_conv1_stride", std::to_string(cc.conv1.stride)},
      {"caps_primary_kernel", std::to_string(cc.primary.kernel)},
      {"caps_primary_channels", std::to_string(cc.primary.channels)},
      {"caps_primary_stride", std::to_string(cc.primary.stride)},
      {"caps_primary_dim", std::to_string(cc.primary_dim)},
      {"caps_num_advanced", std::to_string(cc.num_advanced)},
      {"caps_advanced_dim", std::to_string(cc.advanced_dim)},
      {"caps_routing_iters", std::to_string(cc.routing_iters)},
      {"caps_detach_routing", cc.detach_routing ? "true" : "false"},
      {"cnn_channels", fmt::format("{}", fmt::join(c.cnn.channels, ","))},
      {"cnn_kernel", std::to_string(c.cnn.kernel)},
      {"cnn_pool", std::to_string(c.cnn.pool)},
  };
}

ModelConfig from_key_values(const std::map<std::string, std::string>& values, ModelConfig c) {
  auto& cc = c.capsnet;
  for (const auto& [key, v] : values) {
    if (key == "architecture") c.arch = parse_architecture(v);
    else if (key == "rows") c.rows = parse_num<std::size_t>(key, v);
    else if (key == "cols") c.cols = parse_num<std::size_t>(key, v);
    else if (key == "lag") c.lag = parse_num<std::size_t>(key, v);
    else if (key == "horizons") c.horizons = parse_list<int>(key, v);
    else if (key == "links") c.links = parse_num<std::size_t>(key, v);
    else if (key == "hidden") c.hidden = parse_num<std::size_t>(key, v);
    else if (key == "dropout") c.dropout = parse_num<double>(key, v);
    else if (key == "v_max") c.v_max = parse_num<double>(key, v);
    else if (key == "caps_conv1_kernel") cc.conv1.kernel = parse_num<std::size_t>(key, v);
    else if (key == "caps_conv1_channels") cc.conv1.channels = parse_num<std::size_t>(key, v);
    else if (key == "caps_conv1_stride") cc.conv1.stride = parse_num<std::size_t>(key, v);
    else if (key == "caps_primary_kernel") cc.primary.kernel = parse_num<std::size_t>(key, v);
    else if (key == "caps_primary_channels") cc.primary.channels = parse_num<std::size_t>(key, v);
    else if (key == "caps_primary_stride") cc.primary.stride = parse_num<std::size_t>(key, v);
    else if (key == "caps_primary_dim") cc.primary_dim = parse_num<std::size_t>(key, v);
    else if (key == "caps_num_advanced") cc.num_advanced = parse_num<std::size_t>(key, v);
    else if (key == "caps_advanced_dim") cc.advanced_dim = parse_num<std::size_t>(key, v);
    else if (key == "caps_routing_iters") cc.routing_iters = parse_num<std::size_t>(key, v);
    else if (key == "caps_detach_routing") cc.detach_routing = parse_bool(key, v);
    else if (key == "cnn_channels") c.cnn.channels = parse_list<std::size_t>(key, v);
    else if (key == "cnn_kernel") c.cnn.kernel = parse_num<std::size_t>(key, v);
    else if (key == "cnn_pool") c.cnn.pool = parse_num<std::size_t>(key, v);
    else throw ConfigError("model." + key, "unknown key");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  auto rng = make_stream(seed, "init");
  const std::size_t hd = config_.hidden;
  std::size_t frame_features = config_.rows * config_.cols;

  if (uses_capsnet(config_.arch)) {
    capsnet_.emplace(config_.capsnet, config_.rows, config_.cols, params_, "caps.", rng);
    frame_features = capsnet_->output_size();
  }
  if (uses_cnn(config_.arch)) {
    std::size_t in = 1;
    for (std::size_t s = 0; s < config_.cnn.channels.size(); ++s) {
      const std::size_t k = config_.cnn.kernel, out = config_.cnn.channels[s];
      ConvStage stage;
      stage.kernel = params_.add(fmt::format("cnn.conv{}.kernel", s + 1),
                                 glorot_uniform<T>({k, k, in, out}, k * k * in, k * k * out, rng));
      stage.bias = params_.add(fmt::format("cnn.conv{}.bias", s + 1), Tensor<T>(Shape{out}));
      cnn_.push_back(stage);
      in = out;
    }
    frame_features = cnn_rows(config_).features;
  }

  std::size_t head_in = hd;
  switch (config_.arch) {
    case Architecture::kCapsNetNlstm:
    case Architecture::kNlstmOnly:
      nlstm_.emplace(frame_features, hd, params_, "nlstm.", rng);
      break;
    case Architecture::kCnnLstm:
    case Architecture::kLstmStack:
      lstm1_.emplace(frame_features, hd, params_, "lstm1.", rng);
      lstm2_.emplace(hd, hd, params_, "lstm2.", rng);
      break;
    case Architecture::kDcnn:
    case Architecture::kCapsNetOnly:
      head_in = config_.lag * frame_features;
      break;
  }
  for (int h : config_.horizons) {
    auto w = params_.add(fmt::format("head.h{}.W", h), glorot_uniform<T>({head_in, config_.links}, head_in,
                                                                          config_.links, rng));
    auto b = params_.add(fmt::format("head.h{}.b", h), Tensor<T>(Shape{config_.links}));
    heads_.emplace(h, std::make_pair(w, b));
  }
}

template <typename T>
Var<T> Model<T>::frame_input(const raster::SpeedFrame& frame) const {
  if (frame.dims.rows != config_.rows || frame.dims.cols != config_.cols ||
      frame.values.size() != config_.rows * config_.cols)
    throw ShapeError(fmt::format("model: expected {}x{} frames, got {}x{}", config_.rows, config_.cols,
                                 frame.dims.rows, frame.dims.cols));
  Tensor<T> t(Shape{config_.rows, config_.cols, 1});
  for (std::size_t i = 0; i < frame.values.size(); ++i) t[i] = static_cast<T>(frame.values[i]);
  return Var<T>::constant(std::move(t));
}

template <typename T>
Var<T> Model<T>::cnn_trunk(const Var<T>& image) const {
  Var<T> x = image;
  for (const auto& stage : cnn_) {
    x = ad::relu(ad::add_channel_bias(ad::conv2d(x, stage.kernel, 1, ad::Padding::kSame), stage.bias));
    x = ad::maxpool2d(x, config_.cnn.pool, config_.cnn.pool, true);
  }
  return ad::reshape(x, Shape{x.size()});
}

template <typename T>
Var<T> Model<T>::features(std::span<const raster::SpeedFrame> frames) const {
  if (frames.size() != config_.lag)
    throw ShapeError(fmt::format("model: expected {} input frames, got {}", config_.lag, frames.size()));
  std::vector<Var<T>> xs;
  xs.reserve(frames.size());
  for (const auto& f : frames) {
    const auto image = frame_input(f);
    if (capsnet_) xs.push_back(capsnet_->forward(image));
    else if (!cnn_.empty()) xs.push_back(cnn_trunk(image));
    else xs.push_back(ad::reshape(image, Shape{image.size()}));
  }
  const std::span<const Var<T>> seq(xs);
  switch (config_.arch) {
    case Architecture::kCapsNetNlstm:
    case Architecture::kNlstmOnly:
      return rnn::unroll<rnn::NlstmCell<T>, T>(*nlstm_, seq).last;
    case Architecture::kCnnLstm:
    case Architecture::kLstmStack: {
      const auto first = rnn::unroll<rnn::LstmCell<T>, T>(*lstm1_, seq);
      return rnn::unroll<rnn::LstmCell<T>, T>(*lstm2_, std::span<const Var<T>>(first.hiddens)).last;
    }
    case Architecture::kDcnn:
    case Architecture::kCapsNetOnly:
      break;
  }
  return ad::concat(xs);
}

template <typename T>
std::map<int, Var<T>> Model<T>::forward_normalized(std::span<const raster::SpeedFrame> frames, bool training,
                                                   std::mt19937_64* dropout_rng) const {
  auto f = features(frames);
  if (training && config_.dropout > 0.0) {
    if (!dropout_rng) throw ContractError("model: training forward needs a dropout generator");
    f = ad::dropout(f, config_.dropout, true, *dropout_rng);
  }
  std::map<int, Var<T>> out;
  for (const auto& [h, wb] : heads_) out.emplace(h, ad::add(ad::matmul(f, wb.first), wb.second));
  return out;
}

template <typename T>
std::map<int, Var<T>> Model<T>::forward(const raster::SampleWindow& sample, bool training,
                                        std::mt19937_64* dropout_rng) const {
  auto out = forward_normalized(sample.inputs, training, dropout_rng);
  for (auto& [h, v] : out) v = ad::scale(v, static_cast<T>(config_.v_max));
  return out;
}

template <typename T>
Var<T> Model<T>::sample_loss(const raster::SampleWindow& sample, bool training, std::mt19937_64* dropout_rng) const {
  const auto preds = forward_normalized(sample.inputs, training, dropout_rng);
  std::vector<Var<T>> ps;
  std::vector<Tensor<T>> ys;
  for (const auto& [h, p] : preds) {
    const auto it = sample.targets.find(h);
    if (it == sample.targets.end()) throw ShapeError(fmt::format("model: sample has no target for horizon {}", h));
    if (it->second.size() != config_.links)
      throw ShapeError(fmt::format("model: horizon {} target has {} links, expected {}", h, it->second.size(),
                                   config_.links));
    Tensor<T> y(Shape{config_.links});
    for (std::size_t l = 0; l < config_.links; ++l) y[l] = static_cast<T>(it->second[l] / config_.v_max);
    ps.push_back(p);
    ys.push_back(std::move(y));
  }
  return mse_loss(ps, ys);
}

template <typename T>
std::map<int, std::vector<double>> Model<T>::predict(const raster::SampleWindow& sample) const {
  ad::NoGradGuard guard;
  std::map<int, std::vector<double>> out;
  for (const auto& [h, v] : forward(sample, false)) {
    std::vector<double> speeds(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) speeds[i] = static_cast<double>(v.value()[i]);
    out.emplace(h, std::move(speeds));
  }
  return out;
}

template <typename T>
Var<T> mse_loss(const std::vector<Var<T>>& predictions, const std::vector<Tensor<T>>& targets) {
  if (predictions.empty() || predictions.size() != targets.size())
    throw ShapeError("mse_loss: predictions and targets must pair up");
  std::vector<Var<T>> sq;
  std::size_t count = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].shape() != targets[i].shape())
      throw ShapeError("mse_loss: prediction " + shape_to_string(predictions[i].shape()) + " vs target " +
                       shape_to_string(targets[i].shape()));
    const auto d = ad::sub(predictions[i], Var<T>::constant(targets[i]));
    sq.push_back(ad::sum(ad::hadamard(d, d)));
    count += targets[i].size();
  }
  Var<T> total = sq.front();
  for (std::size_t i = 1; i < sq.size(); ++i) total = ad::add(total, sq[i]);
  return ad::scale(total, T{1} / static_cast<T>(count));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kModelMagic = "capsnlstm-model 1";
}

template <typename T>
void write_model(std::ostream& out, const Model<T>& model) {
  out << kModelMagic << "\n";
  for (const auto& [k, v] : to_key_values(model.config())) out << k << " = " << v << "\n";
  out << "[weights]\n";
  write_checkpoint(out, model.params());
  if (!out) throw DataError("model checkpoint: write failed");
}

SavedModel read_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kModelMagic)
    throw DataError(fmt::format("model checkpoint: expected `{}` header", kModelMagic));
  std::map<std::string, std::string> kv;
  bool weights = false;
  while (std::getline(in, line)) {
    if (line == "[weights]") {
      weights = true;
      break;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw DataError(fmt::format("model checkpoint: bad header line `{}`", line));
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  if (!weights) throw DataError("model checkpoint: missing [weights] section");
  SavedModel saved;
  saved.config = from_key_values(kv, ModelConfig{});
  saved.config.validate();
  saved.weights = read_checkpoint(in);
  return saved;
}

template <typename T>
Model<T> restore_model(const SavedModel& saved) {
  Model<T> m(saved.config, 0);
  load_checkpoint(saved.weights, m.params());
  return m;
}

#define CAPSNLSTM_INSTANTIATE(T)                                                                   \
  template class Model<T>;                                                                         \
  template Var<T> mse_loss<T>(const std::vector<Var<T>>&, const std::vector<Tensor<T>>&);          \
  template void write_model<T>(std::ostream&, const Model<T>&);                                    \
  template Model<T> restore_model<T>(const SavedModel&);

CAPSNLSTM_INSTANTIATE(float)
CAPSNLSTM_INSTANTIATE(double)

#undef CAPSNLSTM_INSTANTIATE

}  // namespace capsnlstm::model
