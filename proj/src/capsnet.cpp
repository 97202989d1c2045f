#include "capsnlstm/capsnet.hpp"

#include <algorithm>
#include <cmath>

namespace capsnlstm::caps {

using ad::Node;
using ad::Var;

void CapsNetConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(field, "must be positive");
  };
  positive(conv1.kernel, "model.caps_conv1_kernel");
  positive(conv1.channels, "model.caps_conv1_channels");
  positive(conv1.stride, "model.caps_conv1_stride");
  positive(primary.kernel, "model.caps_primary_kernel");
  positive(primary.channels, "model.caps_primary_channels");
  positive(primary.stride, "model.caps_primary_stride");
  positive(primary_dim, "model.caps_primary_dim");
  positive(num_advanced, "model.caps_num_advanced");
  positive(advanced_dim, "model.caps_advanced_dim");
  positive(routing_iters, "model.caps_routing_iters");
  if (primary.channels % primary_dim != 0)
    throw ConfigError("model.caps_primary_channels", "must be divisible by model.caps_primary_dim");
}

CapsNetShapes capsnet_shapes(const CapsNetConfig& config, std::size_t rows, std::size_t cols) {
  config.validate();
  using ad::Padding;
  CapsNetShapes s;
  s.input = {rows, cols, 1};
  s.conv1 = {ad::conv_output_extent(rows, config.conv1.kernel, config.conv1.stride, Padding::kValid),
             ad::conv_output_extent(cols, config.conv1.kernel, config.conv1.stride, Padding::kValid),
             config.conv1.channels};
  s.primary = {ad::conv_output_extent(s.conv1[0], config.primary.kernel, config.primary.stride, Padding::kValid),
               ad::conv_output_extent(s.conv1[1], config.primary.kernel, config.primary.stride, Padding::kValid),
               config.primary.channels};
  s.capsules = {s.primary[0] * s.primary[1] * (config.primary.channels / config.primary_dim), config.primary_dim};
  s.advanced = {config.num_advanced, config.advanced_dim};
  s.flat = {config.num_advanced * config.advanced_dim};
  return s;
}

std::vector<LayerParamCount> capsnet_param_count(const CapsNetConfig& config, std::size_t rows, std::size_t cols) {
  const auto shapes = capsnet_shapes(config, rows, cols);
  const auto conv = [](const ConvSpec& c, std::size_t in_channels) {
    return c.kernel * c.kernel * in_channels * c.channels + c.channels;
  };
  return {
      {"Convolution", conv(config.conv1, 1)},
      {"PrimaryCaps", conv(config.primary, config.conv1.channels)},
      {"TrafficCaps", shapes.capsules[0] * config.num_advanced * config.primary_dim * config.advanced_dim},
  };
}

template <typename T>
Var<T> squash(const Var<T>& s) {
  const std::size_t d = s.shape().back();
  const std::size_t rows = s.size() / d;
  constexpr T kNormFloor = static_cast<T>(1e-12);

  Tensor<T> out(s.shape());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T sq{0};
    for (std::size_t k = 0; k < d; ++k) sq += s.value()[r * d + k] * s.value()[r * d + k];
    const T n = std::max(std::sqrt(sq), kNormFloor);
    norms[r] = n;
    const T factor = n / (T{1} + n * n);
    for (std::size_t k = 0; k < d; ++k) out[r * d + k] = factor * s.value()[r * d + k];
  }

  return ad::record<T>(std::move(out), {s}, [d, rows, norms = std::move(norms)](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T n = norms[r];
      const T denom = T{1} + n * n;
      const T factor = n / denom;
      T dot{0};
      for (std::size_t k = 0; k < d; ++k) dot += self.grad[r * d + k] * in.value[r * d + k];
      // d(factor)/dn * dn/ds, with dn/ds = s/n; zero where the floor is active.
      const T radial = n > kNormFloor ? dot * (T{1} - n * n) / (denom * denom) / n : T{0};
      for (std::size_t k = 0; k < d; ++k)
        g[r * d + k] += factor * self.grad[r * d + k] + radial * in.value[r * d + k];
    }
  });
}

template <typename T>
Var<T> predict_vectors(const Var<T>& u, const Var<T>& weights) {
  if (u.value().rank() != 2 || weights.value().rank() != 4 || weights.shape()[0] != u.shape()[0] ||
      weights.shape()[2] != u.shape()[1])
    throw ShapeError("predict_vectors: u " + shape_to_string(u.shape()) + " incompatible with W " +
                     shape_to_string(weights.shape()));
  const std::size_t n = u.shape()[0], dp = u.shape()[1], p = weights.shape()[1], da = weights.shape()[3];
  Tensor<T> out(Shape{n, p, da});
  const T* pu = u.value().data().data();
  const T* pw = weights.value().data().data();
  T* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      T* dst = po + (i * p + j) * da;
      const T* w = pw + (i * p + j) * dp * da;
      for (std::size_t k = 0; k < dp; ++k) {
        const T uk = pu[i * dp + k];
        for (std::size_t a = 0; a < da; ++a) dst[a] += uk * w[k * da + a];
      }
    }
  return ad::record<T>(std::move(out), {u, weights}, [n, dp, p, da](Node<T>& self) {
    auto& un = *self.inputs[0];
    auto& wn = *self.inputs[1];
    const T* go = self.grad.data().data();
    const T* pu = un.value.data().data();
    const T* pw = wn.value.data().data();
    T* gu = un.requires_grad ? un.grad_buffer().data().data() : nullptr;
    T* gw = wn.requires_grad ? wn.grad_buffer().data().data() : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < p; ++j) {
        const T* src = go + (i * p + j) * da;
        const std::size_t woff = (i * p + j) * dp * da;
        for (std::size_t k = 0; k < dp; ++k) {
          if (gu) {
            T acc{0};
            for (std::size_t a = 0; a < da; ++a) acc += src[a] * pw[woff + k * da + a];
            gu[i * dp + k] += acc;
          }
          if (gw) {
            const T uk = pu[i * dp + k];
            for (std::size_t a = 0; a < da; ++a) gw[woff + k * da + a] += uk * src[a];
          }
        }
      }
  });
}

template <typename T>
Var<T> weighted_capsule_sum(const Var<T>& coupling, const Var<T>& u_hat) {
  if (u_hat.value().rank() != 3 || coupling.value().rank() != 2 || coupling.shape()[0] != u_hat.shape()[0] ||
      coupling.shape()[1] != u_hat.shape()[1])
    throw ShapeError("weighted_capsule_sum: c " + shape_to_string(coupling.shape()) + " incompatible with u_hat " +
                     shape_to_string(u_hat.shape()));
  const std::size_t n = u_hat.shape()[0], p = u_hat.shape()[1], da = u_hat.shape()[2];
  Tensor<T> out(Shape{p, da});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      const T c = coupling.value()[i * p + j];
      for (std::size_t a = 0; a < da; ++a) out[j * da + a] += c * u_hat.value()[(i * p + j) * da + a];
    }
  return ad::record<T>(std::move(out), {coupling, u_hat}, [n, p, da](Node<T>& self) {
    auto& cn = *self.inputs[0];
    auto& un = *self.inputs[1];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < p; ++j) {
        const std::size_t base = (i * p + j) * da;
        if (cn.requires_grad) {
          T acc{0};
          for (std::size_t a = 0; a < da; ++a) acc += self.grad[j * da + a] * un.value[base + a];
          cn.grad_buffer()[i * p + j] += acc;
        }
        if (un.requires_grad) {
          auto& g = un.grad_buffer();
          const T c = cn.value[i * p + j];
          for (std::size_t a = 0; a < da; ++a) g[base + a] += c * self.grad[j * da + a];
        }
      }
  });
}

template <typename T>
Var<T> agreement(const Var<T>& u_hat, const Var<T>& v) {
  if (u_hat.value().rank() != 3 || v.value().rank() != 2 || v.shape()[0] != u_hat.shape()[1] ||
      v.shape()[1] != u_hat.shape()[2])
    throw ShapeError("agreement: u_hat " + shape_to_string(u_hat.shape()) + " incompatible with v " +
                     shape_to_string(v.shape()));
  const std::size_t n = u_hat.shape()[0], p = u_hat.shape()[1], da = u_hat.shape()[2];
  Tensor<T> out(Shape{n, p});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      T dot{0};
      for (std::size_t a = 0; a < da; ++a) dot += u_hat.value()[(i * p + j) * da + a] * v.value()[j * da + a];
      out[i * p + j] = dot;
    }
  return ad::record<T>(std::move(out), {u_hat, v}, [n, p, da](Node<T>& self) {
    auto& un = *self.inputs[0];
    auto& vn = *self.inputs[1];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < p; ++j) {
        const T g = self.grad[i * p + j];
        const std::size_t base = (i * p + j) * da;
        if (un.requires_grad) {
          auto& gu = un.grad_buffer();
          for (std::size_t a = 0; a < da; ++a) gu[base + a] += g * vn.value[j * da + a];
        }
        if (vn.requires_grad) {
          auto& gv = vn.grad_buffer();
          for (std::size_t a = 0; a < da; ++a) gv[j * da + a] += g * un.value[base + a];
        }
      }
  });
}

template <typename T>
RoutingIteration<T> routing_iteration(const Var<T>& u_hat, const Var<T>& logits) {
  RoutingIteration<T> it;
  it.state.coefficients = ad::softmax(logits, 1);
  it.outputs = squash(weighted_capsule_sum(it.state.coefficients, u_hat));
  it.state.logits = ad::add(logits, agreement(u_hat, it.outputs));
  return it;
}

namespace {

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace

template <typename T>
RoutingResult<T> dynamic_routing(const Var<T>& u_hat, std::size_t iterations, bool detach) {
  if (iterations == 0) throw ContractError("dynamic_routing: need at least one iteration");
  if (u_hat.value().rank() != 3) throw ShapeError("dynamic_routing: u_hat must be [N,p,d_a]");
  const std::size_t n = u_hat.shape()[0], p = u_hat.shape()[1];
  if (!all_finite(u_hat.value())) throw NumericError("dynamic_routing: non-finite prediction vectors");

  const Var<T> routed = detach ? Var<T>::constant(u_hat.value()) : u_hat;
  Var<T> logits = Var<T>::constant(Tensor<T>(Shape{n, p}));
  RoutingResult<T> result;
  for (std::size_t iter = 1; iter <= iterations; ++iter) {
    const bool last = iter == iterations;
    RoutingIteration<T> step;
    if (last && detach) {
      // Coefficients enter as constants; only the weighted sum sees u_hat.
      const auto c = Var<T>::constant(ad::softmax(logits, 1).value());
      step.state.coefficients = c;
      step.outputs = squash(weighted_capsule_sum(c, u_hat));
      step.state.logits = ad::add(logits, agreement(routed, Var<T>::constant(step.outputs.value())));
    } else {
      step = routing_iteration(last ? u_hat : routed, logits);
    }
    if (!all_finite(step.outputs.value()) || !all_finite(step.state.logits.value()))
      throw NumericError("dynamic_routing: non-finite values in iteration " + std::to_string(iter));
    logits = step.state.logits;
    if (last) {
      result.outputs = step.outputs;
      result.coefficients = step.state.coefficients.value();
      result.logits = step.state.logits.value();
    }
  }
  return result;
}

template <typename T>
CapsNet<T>::CapsNet(const CapsNetConfig& config, std::size_t rows, std::size_t cols, ParameterSet<T>& params,
                    const std::string& prefix, std::mt19937_64& rng)
    : config_(config), shapes_(capsnet_shapes(config, rows, cols)) {
  const auto& c1 = config_.conv1;
  const auto& c2 = config_.primary;
  conv1_kernel_ = params.add(prefix + "conv1.kernel",
                             glorot_uniform<T>({c1.kernel, c1.kernel, 1, c1.channels}, c1.kernel * c1.kernel,
                                               c1.kernel * c1.kernel * c1.channels, rng));
  conv1_bias_ = params.add(prefix + "conv1.bias", Tensor<T>(Shape{c1.channels}));
  primary_kernel_ =
      params.add(prefix + "primary.kernel",
                 glorot_uniform<T>({c2.kernel, c2.kernel, c1.channels, c2.channels}, c2.kernel * c2.kernel * c1.channels,
                                   c2.kernel * c2.kernel * c2.channels, rng));
  primary_bias_ = params.add(prefix + "primary.bias", Tensor<T>(Shape{c2.channels}));
  const std::size_t n = shapes_.capsules[0];
  transform_ = params.add(prefix + "traffic.W",
                          glorot_uniform<T>({n, config_.num_advanced, config_.primary_dim, config_.advanced_dim},
                                            config_.primary_dim, config_.advanced_dim, rng));
}

template <typename T>
Var<T> CapsNet<T>::forward(const Var<T>& frame) const {
  if (frame.shape() != shapes_.input)
    throw ShapeError("capsnet: expected frame " + shape_to_string(shapes_.input) + ", got " +
                     shape_to_string(frame.shape()));
  using ad::Padding;
  auto h = ad::relu(ad::add_channel_bias(
      ad::conv2d(frame, conv1_kernel_, config_.conv1.stride, Padding::kValid), conv1_bias_));
  auto primary = ad::add_channel_bias(ad::conv2d(h, primary_kernel_, config_.primary.stride, Padding::kValid),
                                      primary_bias_);
  auto capsules = squash(ad::reshape(primary, shapes_.capsules));
  auto u_hat = predict_vectors(capsules, transform_);
  auto routed = dynamic_routing(u_hat, config_.routing_iters, config_.detach_routing);
  return ad::reshape(routed.outputs, shapes_.flat);
}

#define CAPSNLSTM_INSTANTIATE(T)                                                        \
  template Var<T> squash<T>(const Var<T>&);                                             \
  template Var<T> predict_vectors<T>(const Var<T>&, const Var<T>&);                     \
  template Var<T> weighted_capsule_sum<T>(const Var<T>&, const Var<T>&);                \
  template Var<T> agreement<T>(const Var<T>&, const Var<T>&);                           \
  template RoutingIteration<T> routing_iteration<T>(const Var<T>&, const Var<T>&);      \
  template RoutingResult<T> dynamic_routing<T>(const Var<T>&, std::size_t, bool);       \
  template class CapsNet<T>;

CAPSNLSTM_INSTANTIATE(float)
CAPSNLSTM_INSTANTIATE(double)

#undef CAPSNLSTM_INSTANTIATE

}  // namespace capsnlstm::caps
