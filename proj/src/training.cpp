#include "capsnlstm/training.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "capsnlstm/rng.hpp"

namespace capsnlstm::model {

void TrainConfig::validate(bool cross_validating) const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("train.decay", "must be in (0, 1]");
  if (decay_every == 0) throw ConfigError("train.decay_every", "must be >= 1");
  if (batch_size == 0) throw ConfigError("train.batch_size", "must be >= 1");
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("train.rho", "must be in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("train.epsilon", "must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train.train_fraction", "must be in (0, 1)");
  if (cross_validating && folds < 2) throw ConfigError("train.folds", "must be >= 2 when cross-validating");
}

TrainConfig TrainConfig::desk(std::uint64_t seed) {
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.batch_size = 8;
  c.epochs = 30;
  c.seed = seed;
  return c;
}

double TrainConfig::lr_at(std::size_t epoch) const {
  return learning_rate * std::pow(decay, static_cast<double>(epoch / decay_every));
}

template <typename T>
void rmsprop_step(ParameterSet<T>& params, double lr, double rho, double epsilon) {
  for (auto& p : params.items()) {
    auto& value = p.var.mutable_value();
    if (p.rms_avg.empty()) p.rms_avg = Tensor<T>(value.shape());
    const bool has = p.var.has_grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = has ? static_cast<double>(p.var.grad()[i]) : 0.0;
      const double avg = rho * static_cast<double>(p.rms_avg[i]) + (1.0 - rho) * g * g;
      p.rms_avg[i] = static_cast<T>(avg);
      value[i] = static_cast<T>(static_cast<double>(value[i]) - lr * g / (std::sqrt(avg) + epsilon));
    }
  }
}

template <typename T>
double dataset_loss(const Model<T>& model, std::span<const raster::SampleWindow> samples) {
  if (samples.empty()) throw ContractError("dataset_loss: no samples");
  ad::NoGradGuard guard;
  double acc = 0.0;
  for (const auto& s : samples) acc += static_cast<double>(model.sample_loss(s, false).value()[0]);
  return acc / static_cast<double>(samples.size());
}

template <typename T>
TrainResult train(Model<T>& model, std::span<const raster::SampleWindow> training,
                  std::span<const raster::SampleWindow> validation, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (training.empty()) throw DataError("train: empty dataset");
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  auto shuffle_rng = make_stream(config.seed, "shuffle");
  auto dropout_rng = make_stream(config.seed, "dropout");
  auto& params = model.params();

  TrainResult result;
  result.initial_train_loss = dataset_loss(model, training);
  result.best_val_loss = kNaN;
  if (!std::isfinite(result.initial_train_loss)) throw NumericError("train: initial loss is not finite");

  std::vector<std::size_t> order(training.size());
  std::vector<Tensor<T>> best;
  const T inv_batch_full = T{1} / static_cast<T>(config.batch_size);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_at(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const T inv_batch = end - start == config.batch_size ? inv_batch_full : T{1} / static_cast<T>(end - start);
      params.zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        const auto loss = model.sample_loss(training[order[i]], true, &dropout_rng);
        if (!std::isfinite(static_cast<double>(loss.value()[0])))
          throw NumericError(fmt::format("train: loss diverged in epoch {}", epoch));
        ad::backward(ad::scale(loss, inv_batch));
      }
      rmsprop_step(params, lr, config.rho, config.epsilon);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = dataset_loss(model, training);
    rec.val_loss = validation.empty() ? kNaN : dataset_loss(model, validation);
    if (!std::isfinite(rec.train_loss) || (!validation.empty() && !std::isfinite(rec.val_loss)))
      throw NumericError(fmt::format("train: loss diverged in epoch {}", epoch));
    if (!validation.empty() && (best.empty() || rec.val_loss < result.best_val_loss)) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      best = params.snapshot();
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!best.empty()) params.restore(best);
  params.zero_grad();
  return result;
}

void write_history(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,lr,train_loss,val_loss\n";
  for (const auto& r : history)
    out << fmt::format("{},{},{:.9g},{}\n", r.epoch, r.lr, r.train_loss,
                       std::isnan(r.val_loss) ? std::string("nan") : fmt::format("{:.9g}", r.val_loss));
}

std::vector<std::pair<std::size_t, std::size_t>> fold_ranges(std::size_t n, std::size_t k) {
  if (k == 0) throw ConfigError("train.folds", "must be >= 1");
  if (n < k) throw DataError(fmt::format("cross-validation: {} samples cannot fill {} folds", n, k));
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    out.emplace_back(begin, begin + size);
    begin += size;
  }
  return out;
}

CvResult select_config(std::vector<std::vector<double>> fold_losses) {
  if (fold_losses.empty()) throw ContractError("cross-validation: no candidate configs");
  CvResult r;
  r.fold_losses = std::move(fold_losses);
  for (const auto& losses : r.fold_losses) {
    if (losses.empty()) throw ContractError("cross-validation: config without fold losses");
    r.mean_losses.push_back(std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size()));
  }
  for (std::size_t i = 1; i < r.mean_losses.size(); ++i)
    if (r.mean_losses[i] < r.mean_losses[r.selected]) r.selected = i;
  return r;
}

template <typename T>
CvResult cross_validate(std::span<const raster::SampleWindow> data, std::span<const ModelConfig> configs,
                        const TrainConfig& config) {
  config.validate(true);
  const auto folds = fold_ranges(data.size(), config.folds);
  std::vector<std::vector<double>> losses;
  for (const auto& mc : configs) {
    std::vector<double> per_fold;
    for (const auto& [begin, end] : folds) {
      std::vector<raster::SampleWindow> fit;
      fit.insert(fit.end(), data.begin(), data.begin() + static_cast<std::ptrdiff_t>(begin));
      fit.insert(fit.end(), data.begin() + static_cast<std::ptrdiff_t>(end), data.end());
      const auto val = data.subspan(begin, end - begin);
      Model<T> m(mc, config.seed);
      const auto res = train(m, std::span<const raster::SampleWindow>(fit), val, config);
      per_fold.push_back(config.epochs == 0 ? dataset_loss(m, val) : res.best_val_loss);
    }
    losses.push_back(std::move(per_fold));
  }
  return select_config(std::move(losses));
}

#define CAPSNLSTM_INSTANTIATE(T)                                                                               \
  template void rmsprop_step<T>(ParameterSet<T>&, double, double, double);                                     \
  template double dataset_loss<T>(const Model<T>&, std::span<const raster::SampleWindow>);                     \
  template TrainResult train<T>(Model<T>&, std::span<const raster::SampleWindow>,                              \
                                std::span<const raster::SampleWindow>, const TrainConfig&, const EpochCallback&); \
  template CvResult cross_validate<T>(std::span<const raster::SampleWindow>, std::span<const ModelConfig>,     \
                                      const TrainConfig&);

CAPSNLSTM_INSTANTIATE(float)
CAPSNLSTM_INSTANTIATE(double)

#undef CAPSNLSTM_INSTANTIATE

}  // namespace capsnlstm::model
