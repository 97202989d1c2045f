#include "capsnlstm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace capsnlstm::ad {

namespace {

thread_local std::uint64_t tape_counter = 0;
thread_local bool recording = true;

std::uint64_t next_seq() { return ++tape_counter; }

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D dfdy_given_x_y) {
  Tensor<T> out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return record<T>(std::move(out), {a}, [dfdy_given_x_y](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * dfdy_given_x_y(in.value[i], self.value[i]);
  });
}

struct ConvGeometry {
  std::size_t out_h, out_w, pad_top, pad_left;
};

ConvGeometry conv_geometry(std::size_t h, std::size_t w, std::size_t k, std::size_t stride, Padding padding) {
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  ConvGeometry g{};
  g.out_h = conv_output_extent(h, k, stride, padding);
  g.out_w = conv_output_extent(w, k, stride, padding);
  if (padding == Padding::kSame) {
    auto pad_total = [&](std::size_t in, std::size_t out) {
      const std::size_t needed = (out - 1) * stride + k;
      return needed > in ? needed - in : std::size_t{0};
    };
    g.pad_top = pad_total(h, g.out_h) / 2;
    g.pad_left = pad_total(w, g.out_w) / 2;
  }
  return g;
}

}  // namespace

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, Padding padding) {
  if (stride == 0 || kernel == 0) throw ShapeError("conv2d: kernel and stride must be >= 1");
  if (padding == Padding::kSame) return (input + stride - 1) / stride;
  if (kernel > input)
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than input extent " +
                     std::to_string(input));
  return (input - kernel) / stride + 1;
}

std::size_t pool_output_extent(std::size_t input, std::size_t window, std::size_t stride, bool ceil_mode) {
  if (window == 0 || stride == 0) throw ShapeError("maxpool2d: window and stride must be >= 1");
  if (window > input) {
    if (!ceil_mode)
      throw ShapeError("maxpool2d: window " + std::to_string(window) + " larger than input extent " +
                       std::to_string(input));
    return 1;
  }
  const std::size_t span = input - window;
  std::size_t out = (ceil_mode ? (span + stride - 1) / stride : span / stride) + 1;
  // The last window must start inside the input.
  if (ceil_mode && (out - 1) * stride >= input) --out;
  return out;
}

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.empty()) grad = Tensor<T>(value.shape());
  return grad;
}

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->seq = next_seq();
  return Var(node);
}

template <typename T>
Var<T> Var<T>::leaf(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->seq = next_seq();
  node->requires_grad = true;
  return Var(node);
}

template <typename T>
void Var<T>::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(T{0});
}

NoGradGuard::NoGradGuard() : previous_(recording) { recording = false; }
NoGradGuard::~NoGradGuard() { recording = previous_; }
bool grad_enabled() { return recording; }

template <typename T>
Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn<T> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->seq = next_seq();
  const bool needs = recording && std::any_of(inputs.begin(), inputs.end(),
                                               [](const Var<T>& v) { return v.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& v : inputs) node->inputs.push_back(v.node_ptr());
    node->backward = std::move(backward);
  }
  return Var<T>(node);
}

template <typename T>
void accumulate_grad(Node<T>& node, std::span<const T> delta) {
  if (!node.requires_grad) return;
  auto& g = node.grad_buffer();
  if (g.size() != delta.size()) throw ShapeError("gradient size mismatch");
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    accumulate_grad<T>(*self.inputs[0], self.grad.data());
    accumulate_grad<T>(*self.inputs[1], self.grad.data());
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    accumulate_grad<T>(*self.inputs[0], self.grad.data());
    auto& rhs = *self.inputs[1];
    if (!rhs.requires_grad) return;
    auto& g = rhs.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "hadamard");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    if (lhs.requires_grad) {
      auto& g = lhs.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * rhs.value[i];
    }
    if (rhs.requires_grad) {
      auto& g = rhs.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * lhs.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return unary(a, [factor](T x) { return factor * x; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(
      a,
      [](T x) {
        // Split on sign so exp never overflows.
        if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
        const T e = std::exp(x);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary(a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total{0};
  for (auto v : a.value().data()) total += v;
  return record<T>(Tensor<T>::scalar(total), {a}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const bool row_vector = a.value().rank() == 1;
  if ((!row_vector && a.value().rank() != 2) || b.value().rank() != 2)
    throw ShapeError("matmul: expected [m,k]x[k,n], got " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  const std::size_t m = row_vector ? 1 : a.shape()[0];
  const std::size_t k = row_vector ? a.shape()[0] : a.shape()[1];
  const std::size_t n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));

  Tensor<T> out(row_vector ? Shape{n} : Shape{m, n});
  const T* pa = a.value().data().data();
  const T* pb = b.value().data().data();
  T* pc = out.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      if (av == T{0}) continue;
      const T* brow = pb + p * n;
      T* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }

  return record<T>(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    const T* dc = self.grad.data().data();
    if (lhs.requires_grad) {
      T* da = lhs.grad_buffer().data().data();
      const T* pb = rhs.value.data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = pb + p * n;
          const T* crow = dc + i * n;
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += crow[j] * brow[j];
          da[i * k + p] += acc;
        }
    }
    if (rhs.requires_grad) {
      T* db = rhs.grad_buffer().data().data();
      const T* pa = lhs.value.data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T av = pa[i * k + p];
          if (av == T{0}) continue;
          const T* crow = dc + i * n;
          T* drow = db + p * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += av * crow[j];
        }
    }
  });
}

template <typename T>
Var<T> batched_matmul(const Var<T>& a, const Var<T>& b) {
  if (a.value().rank() != 3 || b.value().rank() != 3 || a.shape()[0] != b.shape()[0] ||
      a.shape()[2] != b.shape()[1])
    throw ShapeError("batched_matmul: expected [B,m,k]x[B,k,n], got " + shape_to_string(a.shape()) +
                     " x " + shape_to_string(b.shape()));
  const std::size_t batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
  Tensor<T> out(Shape{batch, m, n});
  for (std::size_t s = 0; s < batch; ++s) {
    const T* pa = a.value().data().data() + s * m * k;
    const T* pb = b.value().data().data() + s * k * n;
    T* pc = out.data().data() + s * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) pc[i * n + j] += pa[i * k + p] * pb[p * n + j];
  }
  return record<T>(std::move(out), {a, b}, [batch, m, k, n](Node<T>& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    for (std::size_t s = 0; s < batch; ++s) {
      const T* dc = self.grad.data().data() + s * m * n;
      if (lhs.requires_grad) {
        T* da = lhs.grad_buffer().data().data() + s * m * k;
        const T* pb = rhs.value.data().data() + s * k * n;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) da[i * k + p] += dc[i * n + j] * pb[p * n + j];
      }
      if (rhs.requires_grad) {
        T* db = rhs.grad_buffer().data().data() + s * k * n;
        const T* pa = lhs.value.data().data() + s * m * k;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) db[p * n + j] += pa[i * k + p] * dc[i * n + j];
      }
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  return record<T>(a.value().reshaped(std::move(shape)), {a}, [](Node<T>& self) {
    accumulate_grad<T>(*self.inputs[0], self.grad.data());
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  Tensor<T> out(Shape{total});
  std::size_t pos = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + pos);
    pos += p.size();
  }
  return record<T>(std::move(out), parts, [](Node<T>& self) {
    std::size_t pos = 0;
    for (auto& in : self.inputs) {
      const std::size_t len = in->value.size();
      accumulate_grad<T>(*in, self.grad.data().subspan(pos, len));
      pos += len;
    }
  });
}

template <typename T>
Var<T> row(const Var<T>& a, std::size_t i) {
  if (a.value().rank() != 2 || i >= a.shape()[0])
    throw ShapeError("row: index " + std::to_string(i) + " invalid for " + shape_to_string(a.shape()));
  const std::size_t n = a.shape()[1];
  Tensor<T> out(Shape{n});
  std::copy_n(a.value().data().begin() + static_cast<std::ptrdiff_t>(i * n), n, out.data().begin());
  return record<T>(std::move(out), {a}, [i, n](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j];
  });
}

template <typename T>
Var<T> slice(const Var<T>& a, std::size_t offset, std::size_t length) {
  if (length == 0 || offset + length > a.size())
    throw ShapeError("slice: range [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                     ") outside " + shape_to_string(a.shape()));
  Tensor<T> out(Shape{length});
  std::copy_n(a.value().data().begin() + static_cast<std::ptrdiff_t>(offset), length, out.data().begin());
  return record<T>(std::move(out), {a}, [offset, length](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t j = 0; j < length; ++j) g[offset + j] += self.grad[j];
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, std::size_t stride, Padding padding) {
  if (input.value().rank() != 3 || kernels.value().rank() != 4)
    throw ShapeError("conv2d: expected input [H,W,Cin] and kernels [k,k,Cin,Cout], got " +
                     shape_to_string(input.shape()) + " and " + shape_to_string(kernels.shape()));
  const std::size_t h = input.shape()[0], w = input.shape()[1], cin = input.shape()[2];
  const std::size_t k = kernels.shape()[0], cout = kernels.shape()[3];
  if (kernels.shape()[1] != k || kernels.shape()[2] != cin)
    throw ShapeError("conv2d: kernel shape " + shape_to_string(kernels.shape()) +
                     " incompatible with input " + shape_to_string(input.shape()));
  const ConvGeometry geo = conv_geometry(h, w, k, stride, padding);

  Tensor<T> out(Shape{geo.out_h, geo.out_w, cout});
  const T* in = input.value().data().data();
  const T* ker = kernels.value().data().data();
  T* o = out.data().data();
  // Visits every (output position, kernel tap) pair that lands inside the input.
  auto for_each_tap = [=](auto&& body) {
    for (std::size_t oy = 0; oy < geo.out_h; ++oy)
      for (std::size_t ox = 0; ox < geo.out_w; ++ox)
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(geo.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(geo.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            body((static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin,
                 (ky * k + kx) * cin * cout, (oy * geo.out_w + ox) * cout);
          }
        }
  };
  for_each_tap([&](std::size_t in_off, std::size_t k_off, std::size_t out_off) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T a = in[in_off + ci];
      if (a == T{0}) continue;
      const T* krow = ker + k_off + ci * cout;
      T* orow = o + out_off;
      for (std::size_t co = 0; co < cout; ++co) orow[co] += a * krow[co];
    }
  });

  return record<T>(std::move(out), {input, kernels}, [for_each_tap, cin, cout](Node<T>& self) {
    auto& x = *self.inputs[0];
    auto& kn = *self.inputs[1];
    const T* dout = self.grad.data().data();
    const T* in = x.value.data().data();
    const T* ker = kn.value.data().data();
    T* dx = x.requires_grad ? x.grad_buffer().data().data() : nullptr;
    T* dk = kn.requires_grad ? kn.grad_buffer().data().data() : nullptr;
    for_each_tap([&](std::size_t in_off, std::size_t k_off, std::size_t out_off) {
      const T* drow = dout + out_off;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* krow = ker + k_off + ci * cout;
        if (dx) {
          T acc{0};
          for (std::size_t co = 0; co < cout; ++co) acc += drow[co] * krow[co];
          dx[in_off + ci] += acc;
        }
        if (dk) {
          const T a = in[in_off + ci];
          T* dkrow = dk + k_off + ci * cout;
          for (std::size_t co = 0; co < cout; ++co) dkrow[co] += a * drow[co];
        }
      }
    });
  });
}

template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias) {
  const std::size_t c = bias.size();
  if (bias.value().rank() != 1 || x.shape().back() != c)
    throw ShapeError("add_channel_bias: bias " + shape_to_string(bias.shape()) + " does not match " +
                     shape_to_string(x.shape()));
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.value()[i % c];
  return record<T>(std::move(out), {x, bias}, [c](Node<T>& self) {
    accumulate_grad<T>(*self.inputs[0], self.grad.data());
    auto& b = *self.inputs[1];
    if (!b.requires_grad) return;
    auto& g = b.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % c] += self.grad[i];
  });
}

template <typename T>
Var<T> maxpool2d(const Var<T>& input, std::size_t window, std::size_t stride, bool ceil_mode) {
  if (input.value().rank() != 3)
    throw ShapeError("maxpool2d: expected [H,W,C], got " + shape_to_string(input.shape()));
  const std::size_t h = input.shape()[0], w = input.shape()[1], c = input.shape()[2];
  const std::size_t oh = pool_output_extent(h, window, stride, ceil_mode);
  const std::size_t ow = pool_output_extent(w, window, stride, ceil_mode);
  Tensor<T> out(Shape{oh, ow, c});
  std::vector<std::size_t> argmax(out.size());
  const auto& in = input.value();
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t ch = 0; ch < c; ++ch) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t y = oy * stride; y < std::min(oy * stride + window, h); ++y)
          for (std::size_t x = ox * stride; x < std::min(ox * stride + window, w); ++x) {
            const std::size_t idx = (y * w + x) * c + ch;
            if (in[idx] > best) {
              best = in[idx];
              best_idx = idx;
            }
          }
        const std::size_t o = (oy * ow + ox) * c + ch;
        out[o] = best;
        argmax[o] = best_idx;
      }
  return record<T>(std::move(out), {input}, [argmax = std::move(argmax)](Node<T>& self) {
    auto& x = *self.inputs[0];
    if (!x.requires_grad) return;
    auto& g = x.grad_buffer();
    for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
  });
}

template <typename T>
Var<T> softmax(const Var<T>& a, std::size_t axis) {
  const Shape& shape = a.shape();
  if (axis >= shape.size())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_to_string(shape));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];

  Tensor<T> out(shape);
  const auto& x = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = x[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      T total{0};
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }

  return record<T>(std::move(out), {a}, [outer, inner, len](Node<T>& self) {
    auto& x = *self.inputs[0];
    if (!x.requires_grad) return;
    auto& g = x.grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot{0};
        for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += y[idx] * (self.grad[idx] - dot);
        }
      }
  });
}

template <typename T>
Var<T> dropout(const Var<T>& a, double rate, bool training, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return a;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(a.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = unit(rng) < rate ? T{0} : keep_scale;
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * mask[i];
  return record<T>(std::move(out), {a}, [mask = std::move(mask)](Node<T>& self) {
    auto& x = *self.inputs[0];
    if (!x.requires_grad) return;
    auto& g = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward: loss must be a one-element tensor, got " +
                        (loss.defined() ? shape_to_string(loss.shape()) : std::string("undefined")));
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{&loss.node()};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& in : n->inputs)
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });

  for (Node<T>* n : order)
    if (n->backward) n->grad_buffer().fill(T{0});
  loss.node().grad_buffer()[0] += T{1};
  for (Node<T>* n : order)
    if (n->backward) n->backward(*n);
}

#define CAPSNLSTM_INSTANTIATE(T)                                                                  \
  template struct Node<T>;                                                                        \
  template class Var<T>;                                                                          \
  template Var<T> record<T>(Tensor<T>, std::vector<Var<T>>, BackwardFn<T>);                       \
  template void accumulate_grad<T>(Node<T>&, std::span<const T>);                                 \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                           \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                           \
  template Var<T> hadamard<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> scale<T>(const Var<T>&, T);                                                     \
  template Var<T> sigmoid<T>(const Var<T>&);                                                      \
  template Var<T> tanh<T>(const Var<T>&);                                                         \
  template Var<T> relu<T>(const Var<T>&);                                                         \
  template Var<T> sum<T>(const Var<T>&);                                                          \
  template Var<T> mean<T>(const Var<T>&);                                                         \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> batched_matmul<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                               \
  template Var<T> concat<T>(const std::vector<Var<T>>&);                                          \
  template Var<T> row<T>(const Var<T>&, std::size_t);                                             \
  template Var<T> slice<T>(const Var<T>&, std::size_t, std::size_t);                              \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, std::size_t, Padding);                  \
  template Var<T> add_channel_bias<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> maxpool2d<T>(const Var<T>&, std::size_t, std::size_t, bool);                    \
  template Var<T> softmax<T>(const Var<T>&, std::size_t);                                         \
  template Var<T> dropout<T>(const Var<T>&, double, bool, std::mt19937_64&);                      \
  template void backward<T>(const Var<T>&);

CAPSNLSTM_INSTANTIATE(float)
CAPSNLSTM_INSTANTIATE(double)

#undef CAPSNLSTM_INSTANTIATE

}  // namespace capsnlstm::ad
