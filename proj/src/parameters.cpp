#include "capsnlstm/parameters.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "capsnlstm/binary_io.hpp"

namespace capsnlstm {

template <typename T>
ad::Var<T> ParameterSet<T>::add(std::string name, Tensor<T> init) {
  if (find(name)) throw ContractError("duplicate parameter name " + name);
  Parameter<T> p{std::move(name), ad::Var<T>::leaf(init), Tensor<T>(init.shape())};
  items_.push_back(std::move(p));
  return items_.back().var;
}

template <typename T>
const Parameter<T>* ParameterSet<T>::find(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
ad::Var<T> ParameterSet<T>::get(const std::string& name) const {
  const auto* p = find(name);
  if (!p) throw ContractError("unknown parameter " + name);
  return p->var;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.var.size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : items_) p.var.zero_grad();
}

template <typename T>
std::vector<Tensor<T>> ParameterSet<T>::snapshot() const {
  std::vector<Tensor<T>> out;
  out.reserve(items_.size());
  for (const auto& p : items_) out.push_back(p.var.value());
  return out;
}

template <typename T>
void ParameterSet<T>::restore(const std::vector<Tensor<T>>& values) {
  if (values.size() != items_.size()) throw ContractError("snapshot size does not match parameter set");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != items_[i].var.shape())
      throw ShapeError("snapshot shape mismatch for " + items_[i].name);
    items_[i].var.mutable_value() = values[i];
  }
}

template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<T> out(std::move(shape));
  for (auto& v : out.data()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
void write_checkpoint(std::ostream& out, const ParameterSet<T>& params) {
  out.write("CKPT", 4);
  io::write_u32(out, static_cast<std::uint32_t>(params.items().size()));
  for (const auto& p : params.items()) {
    io::write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& shape = p.var.shape();
    io::write_u8(out, static_cast<std::uint8_t>(shape.size()));
    for (auto e : shape) io::write_u32(out, static_cast<std::uint32_t>(e));
    for (auto v : p.var.value().data()) io::write_f32(out, static_cast<float>(v));
  }
  if (!out) throw DataError("checkpoint: write failed");
}

std::vector<NamedTensor> read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || std::memcmp(magic.data(), "CKPT", 4) != 0) throw DataError("checkpoint: bad magic (expected CKPT)");
  const auto count = io::read_u32(in);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = io::read_u32(in);
    if (len > (1u << 16)) throw DataError("checkpoint: implausible name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rank = io::read_u8(in);
    if (rank == 0) throw DataError("checkpoint: zero-rank tensor " + name);
    Shape shape(rank);
    for (auto& e : shape) e = io::read_u32(in);
    std::vector<float> data(shape_size(shape));
    for (auto& v : data) v = io::read_f32(in);
    if (!in) throw DataError("checkpoint: truncated while reading " + name);
    out.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(data))});
  }
  return out;
}

template <typename T>
void load_checkpoint(const std::vector<NamedTensor>& saved, ParameterSet<T>& params) {
  auto& items = params.items();
  if (saved.size() != items.size())
    throw DataError("checkpoint holds " + std::to_string(saved.size()) + " parameters, model expects " +
                    std::to_string(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (saved[i].name != items[i].name)
      throw DataError("checkpoint parameter " + saved[i].name + " where model expects " + items[i].name);
    if (saved[i].tensor.shape() != items[i].var.shape())
      throw DataError("checkpoint shape mismatch for " + items[i].name);
    items[i].var.mutable_value() = saved[i].tensor.template cast<T>();
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template Tensor<float> glorot_uniform<float>(Shape, std::size_t, std::size_t, std::mt19937_64&);
template Tensor<double> glorot_uniform<double>(Shape, std::size_t, std::size_t, std::mt19937_64&);
template void write_checkpoint<float>(std::ostream&, const ParameterSet<float>&);
template void write_checkpoint<double>(std::ostream&, const ParameterSet<double>&);
template void load_checkpoint<float>(const std::vector<NamedTensor>&, ParameterSet<float>&);
template void load_checkpoint<double>(const std::vector<NamedTensor>&, ParameterSet<double>&);

}  // namespace capsnlstm
