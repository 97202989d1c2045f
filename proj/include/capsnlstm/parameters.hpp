#pragma once

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "capsnlstm/autodiff.hpp"

namespace capsnlstm {

/// A trainable tensor plus its RMSprop running average of squared gradients.
template <typename T>
struct Parameter {
  std::string name;
  ad::Var<T> var;
  Tensor<T> rms_avg;
};

/// Ordered collection of named parameters. Order is creation order and is the
/// order used in checkpoints.
template <typename T>
class ParameterSet {
 public:
  ad::Var<T> add(std::string name, Tensor<T> init);

  std::vector<Parameter<T>>& items() noexcept { return items_; }
  const std::vector<Parameter<T>>& items() const noexcept { return items_; }
  const Parameter<T>* find(const std::string& name) const;
  ad::Var<T> get(const std::string& name) const;

  // Number of scalar weights.
  std::size_t scalar_count() const;
  void zero_grad();

  std::vector<Tensor<T>> snapshot() const;
  void restore(const std::vector<Tensor<T>>& values);

 private:
  std::vector<Parameter<T>> items_;
};

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

// "CKPT" binary checkpoint: little-endian u32 count, then per parameter
// u32 name length, name bytes, u8 rank, u32 extents, float32 data.
template <typename T>
void write_checkpoint(std::ostream& out, const ParameterSet<T>& params);
std::vector<NamedTensor> read_checkpoint(std::istream& in);

/// Copies checkpoint values into `params`; names, order and shapes must match.
template <typename T>
void load_checkpoint(const std::vector<NamedTensor>& saved, ParameterSet<T>& params);

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace capsnlstm
