#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "capsnlstm/model.hpp"

namespace capsnlstm::model {

struct TrainConfig {
  double learning_rate = 1e-3;
  double decay = 0.5;
  std::size_t decay_every = 20;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::size_t folds = 5;
  double rho = 0.9;
  double epsilon = 1e-8;
  double train_fraction = 0.8;  // time-ordered hold-out split

  // Faster schedule for small CPU runs: lr 3e-3, batch 8, 30 epochs.
  static TrainConfig desk(std::uint64_t seed);

  void validate(bool cross_validating = false) const;
  // learning_rate * decay^floor(epoch / decay_every)
  double lr_at(std::size_t epoch) const;
};

/// avg <- rho*avg + (1-rho)*g^2;  theta <- theta - lr*g/(sqrt(avg)+eps).
/// Parameters without a gradient count as g = 0.
template <typename T>
void rmsprop_step(ParameterSet<T>& params, double lr, double rho, double epsilon);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // eval-mode loss over the training set after the epoch
  double val_loss = 0.0;    // NaN without a validation set
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double initial_train_loss = 0.0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;  // NaN without a validation set
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mean eval-mode sample loss (normalized MSE).
template <typename T>
double dataset_loss(const Model<T>& model, std::span<const raster::SampleWindow> samples);

/// Mini-batch RMSprop on the normalized MSE, seeded shuffling per epoch. When
/// `validation` is nonempty the weights of the best-validation epoch are
/// restored at the end. Throws NumericError naming the epoch on divergence.
template <typename T>
TrainResult train(Model<T>& model, std::span<const raster::SampleWindow> training,
                  std::span<const raster::SampleWindow> validation, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

void write_history(std::ostream& out, const std::vector<EpochRecord>& history);

/// Contiguous [begin, end) blocks; the first n % k folds get one extra sample.
std::vector<std::pair<std::size_t, std::size_t>> fold_ranges(std::size_t n, std::size_t k);

struct CvResult {
  std::vector<std::vector<double>> fold_losses;  // [config][fold]
  std::vector<double> mean_losses;
  std::size_t selected = 0;
};

/// Lowest mean validation loss wins; ties go to the earlier config.
CvResult select_config(std::vector<std::vector<double>> fold_losses);

template <typename T>
CvResult cross_validate(std::span<const raster::SampleWindow> data, std::span<const ModelConfig> configs,
                        const TrainConfig& config);

}  // namespace capsnlstm::model
