#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "capsnlstm/autodiff.hpp"
#include "capsnlstm/gradcheck.hpp"
#include "capsnlstm/parameters.hpp"

using namespace capsnlstm;
using ad::Var;
using V = Var<double>;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Direct convolution with explicit zero padding.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& k, std::size_t stride, std::size_t out_h,
                           std::size_t out_w, std::ptrdiff_t pad_top, std::ptrdiff_t pad_left) {
  const std::size_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2), K = k.dim(0), Cout = k.dim(3);
  Tensor<double> y({out_h, out_w, Cout});
  for (std::size_t oy = 0; oy < out_h; ++oy)
    for (std::size_t ox = 0; ox < out_w; ++ox)
      for (std::size_t co = 0; co < Cout; ++co) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < K; ++ky)
          for (std::size_t kx = 0; kx < K; ++kx) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad_top;
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad_left;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(H) || ix >= static_cast<std::ptrdiff_t>(W))
              continue;
            for (std::size_t ci = 0; ci < Cin; ++ci)
              acc += x.at({std::size_t(iy), std::size_t(ix), ci}) * k.at({ky, kx, ci, co});
          }
        y.at({oy, ox, co}) = acc;
      }
  return y;
}

void expect_near_all(const Tensor<double>& a, const Tensor<double>& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

}  // namespace

TEST(Tensor, ShapeAndOffsets) {
  Tensor<double> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.offset({1, 2, 3}), 23u);
  EXPECT_THROW(t.offset({2, 0, 0}), ShapeError);
  EXPECT_THROW(t.reshaped({5, 5}), ShapeError);
  EXPECT_EQ(t.reshaped({6, 4}).shape(), (Shape{6, 4}));
}

TEST(Conv2d, FullSizeFirstLayerShape) {
  EXPECT_EQ(ad::conv_output_extent(164, 9, 2, ad::Padding::kValid), 78u);
  EXPECT_EQ(ad::conv_output_extent(148, 9, 2, ad::Padding::kValid), 70u);
  EXPECT_EQ(ad::conv_output_extent(78, 9, 4, ad::Padding::kValid), 18u);
  EXPECT_EQ(ad::conv_output_extent(70, 9, 4, ad::Padding::kValid), 16u);
}

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor({5, 4, 1}, rng);
  const auto y = ad::conv2d(V::constant(x), V::constant(Tensor<double>({1, 1, 1, 1}, 1.0)), 1, ad::Padding::kValid);
  expect_near_all(y.value(), x, 0.0);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(2);
  const auto x = random_tensor({7, 7, 2}, rng);
  const auto k = random_tensor({3, 3, 2, 4}, rng);
  for (std::size_t stride : {1u, 2u}) {
    const auto y = ad::conv2d(V::constant(x), V::constant(k), stride, ad::Padding::kValid);
    const std::size_t out = (7 - 3) / stride + 1;
    expect_near_all(y.value(), conv_oracle(x, k, stride, out, out, 0, 0), 1e-6);
  }
}

TEST(Conv2d, SamePaddingMatchesOracle) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor({6, 5, 2}, rng);
  const auto k = random_tensor({3, 3, 2, 3}, rng);
  for (std::size_t stride : {1u, 2u}) {
    const auto y = ad::conv2d(V::constant(x), V::constant(k), stride, ad::Padding::kSame);
    const std::size_t oh = (6 + stride - 1) / stride, ow = (5 + stride - 1) / stride;
    const auto pad = [&](std::size_t in, std::size_t out) {
      const auto need = static_cast<std::ptrdiff_t>((out - 1) * stride + 3) - static_cast<std::ptrdiff_t>(in);
      return std::max<std::ptrdiff_t>(need, 0) / 2;
    };
    expect_near_all(y.value(), conv_oracle(x, k, stride, oh, ow, pad(6, oh), pad(5, ow)), 1e-12);
  }
}

TEST(Conv2d, ClosedFormShapes) {
  std::mt19937_64 rng(4);
  for (std::size_t h : {5u, 8u, 11u})
    for (std::size_t w : {6u, 9u})
      for (std::size_t k : {1u, 3u, 5u})
        for (std::size_t s : {1u, 2u, 3u}) {
          if (k > h || k > w) continue;
          const auto x = V::constant(random_tensor({h, w, 1}, rng));
          const auto ker = V::constant(random_tensor({k, k, 1, 2}, rng));
          EXPECT_EQ(ad::conv2d(x, ker, s, ad::Padding::kValid).shape(), (Shape{(h - k) / s + 1, (w - k) / s + 1, 2}));
          EXPECT_EQ(ad::conv2d(x, ker, s, ad::Padding::kSame).shape(),
                    (Shape{(h + s - 1) / s, (w + s - 1) / s, 2}));
        }
}

TEST(MaxPool, CeilModeShapes) {
  EXPECT_EQ(ad::pool_output_extent(164, 2, 2, true), 82u);
  EXPECT_EQ(ad::pool_output_extent(148, 2, 2, true), 74u);
  EXPECT_EQ(ad::pool_output_extent(41, 2, 2, true), 21u);
  EXPECT_EQ(ad::pool_output_extent(37, 2, 2, true), 19u);
  EXPECT_EQ(ad::pool_output_extent(41, 2, 2, false), 20u);
  for (std::size_t n = 2; n < 30; ++n) {
    EXPECT_EQ(ad::pool_output_extent(n, 2, 2, true), (n + 1) / 2);
    if (n >= 3) {
      EXPECT_EQ(ad::pool_output_extent(n, 3, 2, false), (n - 3) / 2 + 1);
    }
  }
  EXPECT_THROW(ad::pool_output_extent(2, 3, 2, false), ShapeError);
}

TEST(MaxPool, ConstantInputAndOracle) {
  const auto c = ad::maxpool2d(V::constant(Tensor<double>({5, 5, 2}, 0.7)), 2, 2, true);
  EXPECT_EQ(c.shape(), (Shape{3, 3, 2}));
  for (double v : c.value().data()) EXPECT_EQ(v, 0.7);

  std::mt19937_64 rng(5);
  const auto x = random_tensor({5, 3, 2}, rng);
  const auto y = ad::maxpool2d(V::constant(x), 2, 2, true).value();
  for (std::size_t oy = 0; oy < 3; ++oy)
    for (std::size_t ox = 0; ox < 2; ++ox)
      for (std::size_t ch = 0; ch < 2; ++ch) {
        double m = -INFINITY;
        for (std::size_t iy = 2 * oy; iy < std::min<std::size_t>(2 * oy + 2, 5); ++iy)
          for (std::size_t ix = 2 * ox; ix < std::min<std::size_t>(2 * ox + 2, 3); ++ix) m = std::max(m, x.at({iy, ix, ch}));
        EXPECT_EQ(y.at({oy, ox, ch}), m);
      }
}

TEST(Matmul, IdentityScalarAndOracle) {
  std::mt19937_64 rng(6);
  const auto a = random_tensor({3, 4}, rng);
  Tensor<double> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at({i, i}) = 1.0;
  expect_near_all(ad::matmul(V::constant(a), V::constant(eye)).value(), a, 0.0);

  const auto s = ad::matmul(V::constant(Tensor<double>({1, 1}, 2.0)), V::constant(Tensor<double>({1, 1}, 3.0)));
  EXPECT_EQ(s.value()[0], 6.0);

  const auto b = random_tensor({4, 2}, rng);
  const auto c = ad::matmul(V::constant(a), V::constant(b)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.at({i, k}) * b.at({k, j});
      EXPECT_NEAR(c.at({i, j}), acc, 1e-12);
    }

  const auto ba = random_tensor({2, 3, 4}, rng), bb = random_tensor({2, 4, 2}, rng);
  const auto bc = ad::batched_matmul(V::constant(ba), V::constant(bb)).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k) acc += ba.at({n, i, k}) * bb.at({n, k, j});
        EXPECT_NEAR(bc.at({n, i, j}), acc, 1e-12);
      }
  EXPECT_THROW(ad::matmul(V::constant(a), V::constant(a)), ShapeError);
}

TEST(Elementwise, Values) {
  EXPECT_EQ(ad::sigmoid(V::constant(Tensor<double>({1}, 0.0))).value()[0], 0.5);
  for (double x : {0.1, 1.0, 7.5}) EXPECT_EQ(ad::relu(V::constant(Tensor<double>({1}, -x))).value()[0], 0.0);
  const auto h = ad::hadamard(V::constant(Tensor<double>({2}, {2.0, 3.0})), V::constant(Tensor<double>({2}, {4.0, -1.0})));
  EXPECT_EQ(h.value()[0], 8.0);
  EXPECT_EQ(h.value()[1], -3.0);
  EXPECT_EQ(ad::scale(V::constant(Tensor<double>({1}, 2.0)), 1.5).value()[0], 3.0);
}

TEST(Elementwise, TanhGradientAgainstFiniteDifference) {
  std::mt19937_64 rng(7);
  const ad::ScalarFunction f = [](std::span<const V> in) { return ad::sum(ad::tanh(in[0])); };
  for (int trial = 0; trial < 10; ++trial) {
    const auto r = ad::grad_check(f, {random_tensor({6}, rng, -2.0, 2.0)});
    EXPECT_LT(r.max_rel_error, 1e-6);
  }
}

TEST(Softmax, UniformShiftAndOracle) {
  const auto u = ad::softmax(V::constant(Tensor<double>({1, 4})), 1).value();
  for (double v : u.data()) EXPECT_DOUBLE_EQ(v, 0.25);

  const Tensor<double> row({1, 3}, {1.0, 2.0, 3.0});
  const auto s = ad::softmax(V::constant(row), 1).value();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s[i], std::exp(double(i + 1)) / z, 1e-12);

  const auto shifted = ad::softmax(V::constant(Tensor<double>({1, 3}, {101.0, 102.0, 103.0})), 1).value();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(shifted[i], s[i], 1e-12);
}

TEST(Softmax, PositiveAndNormalizedAlongAxis) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor({4, 5}, rng, -10.0, 10.0);
    for (std::size_t axis : {0u, 1u}) {
      const auto y = ad::softmax(V::constant(x), axis).value();
      const std::size_t outer = axis == 1 ? 4 : 5, inner = axis == 1 ? 5 : 4;
      for (std::size_t o = 0; o < outer; ++o) {
        double total = 0.0;
        for (std::size_t i = 0; i < inner; ++i) {
          const double v = axis == 1 ? y.at({o, i}) : y.at({i, o});
          EXPECT_GT(v, 0.0);
          total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
      }
    }
  }
}

TEST(Dropout, IdentityCasesAndDropFraction) {
  std::mt19937_64 rng(9);
  const auto x = V::constant(random_tensor({100}, rng));
  expect_near_all(ad::dropout(x, 0.0, true, rng).value(), x.value(), 0.0);
  expect_near_all(ad::dropout(x, 0.7, false, rng).value(), x.value(), 0.0);

  const auto ones = V::constant(Tensor<double>({100000}, 1.0));
  const auto y = ad::dropout(ones, 0.2, true, rng).value();
  std::size_t dropped = 0;
  for (double v : y.data()) {
    if (v == 0.0) ++dropped;
    else EXPECT_DOUBLE_EQ(v, 1.25);
  }
  EXPECT_NEAR(static_cast<double>(dropped) / 1e5, 0.2, 0.01);
}

TEST(Backward, SumAndQuadratic) {
  std::mt19937_64 rng(10);
  auto x = V::leaf(random_tensor({5}, rng));
  ad::backward(ad::sum(x));
  for (double g : x.grad().data()) EXPECT_EQ(g, 1.0);

  x.zero_grad();
  ad::backward(ad::scale(ad::sum(ad::hadamard(x, x)), 0.5));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(x.grad()[i], x.value()[i], 1e-15);
}

TEST(Backward, AccumulatesWithoutZeroing) {
  std::mt19937_64 rng(11);
  auto a = V::leaf(random_tensor({3, 4}, rng));
  auto b = V::leaf(random_tensor({4, 2}, rng));
  const auto loss = ad::sum(ad::tanh(ad::matmul(a, b)));
  ad::backward(loss);
  const auto ga = a.grad(), gb = b.grad();
  ad::backward(loss);
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(a.grad()[i], 2 * ga[i], 1e-15);
  for (std::size_t i = 0; i < gb.size(); ++i) EXPECT_NEAR(b.grad()[i], 2 * gb[i], 1e-15);
}

TEST(Backward, NonScalarLossIsAContractError) {
  auto x = V::leaf(Tensor<double>({3}, 1.0));
  EXPECT_THROW(ad::backward(ad::tanh(x)), ContractError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = V::leaf(Tensor<double>({3}, 1.0));
  ad::NoGradGuard guard;
  const auto y = ad::tanh(x);
  EXPECT_FALSE(y.requires_grad());
}

// Every differentiable primitive at 10 random points.
TEST(GradCheck, PrimitivesAtRandomPoints) {
  std::mt19937_64 rng(12);
  using Fn = std::function<V(std::span<const V>)>;
  struct Case {
    const char* name;
    Fn f;
    std::vector<Shape> shapes;
  };
  const std::vector<Case> cases{
      {"add", [](auto in) { return ad::add(in[0], in[1]); }, {{3, 2}, {3, 2}}},
      {"hadamard", [](auto in) { return ad::hadamard(in[0], in[1]); }, {{3, 2}, {3, 2}}},
      {"sigmoid", [](auto in) { return ad::sigmoid(in[0]); }, {{4}}},
      {"tanh", [](auto in) { return ad::tanh(in[0]); }, {{4}}},
      {"matmul", [](auto in) { return ad::matmul(in[0], in[1]); }, {{2, 3}, {3, 2}}},
      {"batched_matmul", [](auto in) { return ad::batched_matmul(in[0], in[1]); }, {{2, 2, 3}, {2, 3, 2}}},
      {"conv_valid", [](auto in) { return ad::conv2d(in[0], in[1], 2, ad::Padding::kValid); }, {{5, 5, 2}, {3, 3, 2, 2}}},
      {"conv_same", [](auto in) { return ad::conv2d(in[0], in[1], 1, ad::Padding::kSame); }, {{4, 3, 1}, {3, 3, 1, 2}}},
      {"softmax", [](auto in) { return ad::softmax(in[0], 1); }, {{2, 4}}},
      {"bias", [](auto in) { return ad::add_channel_bias(in[0], in[1]); }, {{2, 2, 3}, {3}}},
  };
  for (const auto& c : cases)
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<Tensor<double>> point;
      for (const auto& s : c.shapes) point.push_back(random_tensor(s, rng));
      std::vector<V> probe;
      for (const auto& t : point) probe.push_back(V::constant(t));
      const auto w = random_tensor(c.f(probe).shape(), rng);
      const ad::ScalarFunction scalar = [&](std::span<const V> in) {
        return ad::sum(ad::hadamard(c.f(in), V::constant(w)));
      };
      EXPECT_LT(ad::grad_check(scalar, point).max_rel_error, 1e-4) << c.name << " trial " << trial;
    }
}

TEST(Checkpoint, RoundTripAndMismatch) {
  std::mt19937_64 rng(13);
  ParameterSet<double> params;
  params.add("a", random_tensor({3, 2}, rng));
  params.add("b", random_tensor({4}, rng));
  std::stringstream buf;
  write_checkpoint(buf, params);
  EXPECT_EQ(buf.str().substr(0, 4), "CKPT");
  const auto saved = read_checkpoint(buf);
  ASSERT_EQ(saved.size(), 2u);
  EXPECT_EQ(saved[0].name, "a");
  EXPECT_EQ(saved[1].tensor.shape(), (Shape{4}));

  ParameterSet<double> other;
  other.add("a", Tensor<double>({3, 2}));
  other.add("b", Tensor<double>({4}));
  load_checkpoint(saved, other);
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_EQ(other.get("a").value()[i], static_cast<double>(static_cast<float>(params.get("a").value()[i])));

  ParameterSet<double> wrong;
  wrong.add("a", Tensor<double>({2, 3}));
  wrong.add("b", Tensor<double>({4}));
  EXPECT_THROW(load_checkpoint(saved, wrong), Error);

  std::stringstream bad("XXXX");
  EXPECT_THROW(read_checkpoint(bad), DataError);
}
