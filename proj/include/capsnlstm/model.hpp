#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "capsnlstm/capsnet.hpp"
#include "capsnlstm/grid_raster.hpp"
#include "capsnlstm/nlstm.hpp"
#include "capsnlstm/parameters.hpp"

namespace capsnlstm::model {

enum class Architecture { kCapsNetNlstm, kCnnLstm, kLstmStack, kNlstmOnly, kDcnn, kCapsNetOnly };

std::string to_string(Architecture arch);
// Throws ConfigError("model.architecture", ...) on an unknown tag.
Architecture parse_architecture(const std::string& tag);
const std::vector<Architecture>& all_architectures();

/// Convolution trunk for cnn_lstm and dcnn: per stage a same-padded k x k
/// convolution (stride 1, ReLU) followed by a ceil-mode max pool.
struct CnnConfig {
  std::vector<std::size_t> channels{16, 32, 64, 128};
  std::size_t kernel = 3;
  std::size_t pool = 2;
};

struct ModelConfig {
  Architecture arch = Architecture::kCapsNetNlstm;
  std::size_t rows = 164, cols = 148;
  std::size_t lag = 15;
  std::vector<int> horizons{1};
  std::size_t links = 278;
  caps::CapsNetConfig capsnet;
  CnnConfig cnn;
  std::size_t hidden = 800;
  double dropout = 0.2;
  double v_max = 80.0;

  void validate() const;

  // Full-size layer plan with one output head.
  static ModelConfig full(Architecture arch);
  // Small trunk sizes for a CPU: desk capsule config, 4-stage CNN with
  // 8/8/16/16 channels, hidden 32.
  static ModelConfig desk(Architecture arch, std::size_t rows, std::size_t cols, std::size_t links, std::size_t lag,
                          std::vector<int> horizons);
};

/// Flat `key = value` form used by checkpoints and config files.
std::map<std::string, std::string> to_key_values(const ModelConfig& config);
// Overrides fields of `base`; unknown keys and bad values raise ConfigError
// with the field named as "model.<key>".
ModelConfig from_key_values(const std::map<std::string, std::string>& values, ModelConfig base);

struct LayerRow {
  std::string name;
  std::string detail;
  Shape output;  // empty when the row has no output of its own
  std::size_t params = 0;
};

struct LayerPlan {
  std::vector<LayerRow> rows;
  std::size_t total = 0;
};

/// Symbolic shape propagation and parameter counts; nothing is allocated.
LayerPlan layer_plan(const ModelConfig& config);
std::string format_shape(const Shape& shape);  // "78x70x128"

/// One model of any architecture. Frames go in normalized to [0,1]; the
/// heads work in normalized units and `predict` scales back to km/h.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  // Per-horizon normalized outputs [L]. `dropout_rng` is used only when training.
  std::map<int, ad::Var<T>> forward_normalized(std::span<const raster::SpeedFrame> frames, bool training,
                                               std::mt19937_64* dropout_rng = nullptr) const;
  // Same in km/h.
  std::map<int, ad::Var<T>> forward(const raster::SampleWindow& sample, bool training,
                                    std::mt19937_64* dropout_rng = nullptr) const;
  // Mean squared error in normalized units over horizons and links.
  ad::Var<T> sample_loss(const raster::SampleWindow& sample, bool training,
                         std::mt19937_64* dropout_rng = nullptr) const;
  // Inference without graph recording, km/h.
  std::map<int, std::vector<double>> predict(const raster::SampleWindow& sample) const;

  // The representation fed to the heads (before dropout).
  ad::Var<T> features(std::span<const raster::SpeedFrame> frames) const;

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet<T>& params() noexcept { return params_; }
  const ParameterSet<T>& params() const noexcept { return params_; }

 private:
  struct ConvStage {
    ad::Var<T> kernel, bias;
  };

  ad::Var<T> frame_input(const raster::SpeedFrame& frame) const;
  ad::Var<T> cnn_trunk(const ad::Var<T>& image) const;

  ModelConfig config_;
  ParameterSet<T> params_;
  std::optional<caps::CapsNet<T>> capsnet_;
  std::vector<ConvStage> cnn_;
  std::optional<rnn::NlstmCell<T>> nlstm_;
  std::optional<rnn::LstmCell<T>> lstm1_, lstm2_;
  std::map<int, std::pair<ad::Var<T>, ad::Var<T>>> heads_;  // horizon -> (W [F,L], b [L])
};

/// Mean over all elements of (prediction - target)^2.
template <typename T>
ad::Var<T> mse_loss(const std::vector<ad::Var<T>>& predictions, const std::vector<Tensor<T>>& targets);

// Checkpoint: "capsnlstm-model 1", the ModelConfig as `key = value` lines,
// a `[weights]` line, then the binary CKPT block.
template <typename T>
void write_model(std::ostream& out, const Model<T>& model);
struct SavedModel {
  ModelConfig config;
  std::vector<NamedTensor> weights;
};
SavedModel read_model(std::istream& in);
template <typename T>
Model<T> restore_model(const SavedModel& saved);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace capsnlstm::model
