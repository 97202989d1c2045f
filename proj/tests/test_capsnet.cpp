#include <gtest/gtest.h>

#include <random>

#include "capsnlstm/capsnet.hpp"
#include "capsnlstm/gradcheck.hpp"
#include "capsnlstm/gradcheck_suite.hpp"
#include "oracles.hpp"

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

std::vector<oracle::Mat> to_nested(const Tensor<double>& u) {
  const std::size_t n = u.dim(0), p = u.dim(1), d = u.dim(2);
  std::vector<oracle::Mat> out(n, oracle::Mat(p, oracle::Vec(d)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t k = 0; k < d; ++k) out[i][j][k] = u.at({i, j, k});
  return out;
}

double row_norm(const Tensor<double>& t, std::size_t row) {
  const std::size_t d = t.dim(1);
  double sq = 0.0;
  for (std::size_t k = 0; k < d; ++k) sq += t.at({row, k}) * t.at({row, k});
  return std::sqrt(sq);
}

}  // namespace

TEST(Squash, Examples) {
  const auto zero = caps::squash(V::constant(Tensor<double>({1, 3})));
  for (double v : zero.value().data()) EXPECT_EQ(v, 0.0);

  const auto unit = caps::squash(V::constant(Tensor<double>({1, 2}, {1.0, 0.0}))).value();
  EXPECT_DOUBLE_EQ(unit[0], 0.5);
  EXPECT_EQ(unit[1], 0.0);

  const auto big = caps::squash(V::constant(Tensor<double>({1, 2}, {60.0, 80.0}))).value();
  EXPECT_NEAR(row_norm(big, 0), 10000.0 / 10001.0, 1e-15);
  EXPECT_NEAR(big[0] / big[1], 0.75, 1e-15);
}

TEST(Squash, DirectionPreservedAndNormMonotone) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> scale(-6.0, 3.0);
  for (int trial = 0; trial < 500; ++trial) {
    auto s = random_tensor({2, 5}, rng);
    for (std::size_t k = 0; k < 5; ++k) s.at({1, k}) = s.at({0, k}) * std::pow(10.0, scale(rng));
    const auto v = caps::squash(V::constant(s)).value();
    double dot = 0.0;
    for (std::size_t k = 0; k < 5; ++k) dot += v.at({0, k}) * s.at({0, k});
    EXPECT_NEAR(dot / (row_norm(v, 0) * row_norm(s, 0)), 1.0, 1e-9);
    EXPECT_LT(row_norm(v, 0), 1.0);
    if (row_norm(s, 0) < row_norm(s, 1)) {
      EXPECT_LT(row_norm(v, 0), row_norm(v, 1));
    } else if (row_norm(s, 0) > row_norm(s, 1)) {
      EXPECT_GT(row_norm(v, 0), row_norm(v, 1));
    }
  }
}

TEST(PredictVectors, IdentityZeroAndOracle) {
  std::mt19937_64 rng(2);
  const auto u = random_tensor({3, 4}, rng);
  Tensor<double> eye({3, 2, 4, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 4; ++k) eye.at({i, j, k, k}) = 1.0;
  const auto same = caps::predict_vectors(V::constant(u), V::constant(eye)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(same.at({i, j, k}), u.at({i, k}));

  const auto zero = caps::predict_vectors(V::constant(u), V::constant(Tensor<double>({3, 2, 4, 4}))).value();
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);

  const auto u2 = random_tensor({2, 2}, rng);
  const auto w = random_tensor({2, 2, 2, 3}, rng);
  const auto got = caps::predict_vectors(V::constant(u2), V::constant(w)).value();
  ASSERT_EQ(got.shape(), (Shape{2, 2, 3}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t a = 0; a < 3; ++a) {
        double acc = 0.0;
        for (std::size_t q = 0; q < 2; ++q) acc += u2.at({i, q}) * w.at({i, j, q, a});
        EXPECT_NEAR(got.at({i, j, a}), acc, 1e-12);
      }
}

TEST(Routing, SingleAdvancedCapsuleHasUnitCoefficients) {
  std::mt19937_64 rng(3);
  const auto r = caps::dynamic_routing(V::constant(random_tensor({5, 1, 3}, rng)), 3);
  for (double c : r.coefficients.data()) EXPECT_DOUBLE_EQ(c, 1.0);
}

TEST(Routing, OneIterationIsUniformAverage) {
  std::mt19937_64 rng(4);
  const auto u = random_tensor({4, 3, 2}, rng);
  const auto r = caps::dynamic_routing(V::constant(u), 1);
  for (double c : r.coefficients.data()) EXPECT_DOUBLE_EQ(c, 1.0 / 3.0);
  for (std::size_t j = 0; j < 3; ++j) {
    oracle::Vec s(2, 0.0);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 2; ++k) s[k] += u.at({i, j, k}) / 3.0;
    const auto v = oracle::squash(s);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(r.outputs.value().at({j, k}), v[k], 1e-14);
  }
}

TEST(Routing, ThreeIterationsMatchScalarOracle) {
  std::mt19937_64 rng(5);
  const auto u = random_tensor({2, 2, 2}, rng);
  const auto r = caps::dynamic_routing(V::constant(u), 3);
  const auto o = oracle::route(to_nested(u), 3);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(r.outputs.value().at({j, k}), o.v[j][k], 1e-10);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_NEAR(r.coefficients.at({i, j}), o.c[i][j], 1e-10);
      EXPECT_NEAR(r.logits.at({i, j}), o.b[i][j], 1e-10);
    }
}

TEST(Routing, InvariantsOverRandomInstances) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 32, p = 1 + rng() % 8, d = 1 + rng() % 8;
    const auto u = V::constant(random_tensor({n, p, d}, rng, -2.0, 2.0));
    auto logits = V::constant(Tensor<double>({n, p}));
    for (int it = 0; it < 3; ++it) {
      const auto step = caps::routing_iteration(u, logits);
      const auto& c = step.state.coefficients.value();
      for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
          EXPECT_GT(c.at({i, j}), 0.0);
          total += c.at({i, j});
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
      }
      for (std::size_t j = 0; j < p; ++j) EXPECT_LT(row_norm(step.outputs.value(), j), 1.0);
      // b' - b = u_hat . v
      const auto agree = caps::agreement(u, step.outputs).value();
      for (std::size_t i = 0; i < n * p; ++i)
        EXPECT_NEAR(step.state.logits.value()[i] - logits.value()[i], agree[i], 1e-12);
      logits = step.state.logits;
    }
  }
}

TEST(CapsNet, FullAndDeskShapes) {
  const auto full = caps::capsnet_shapes(caps::CapsNetConfig::full(), 164, 148);
  EXPECT_EQ(full.conv1, (Shape{78, 70, 128}));
  EXPECT_EQ(full.primary, (Shape{18, 16, 128}));
  EXPECT_EQ(full.capsules, (Shape{4608, 8}));
  EXPECT_EQ(full.advanced, (Shape{30, 16}));
  EXPECT_EQ(full.flat, (Shape{480}));

  const auto desk = caps::capsnet_shapes(caps::CapsNetConfig::desk(), 20, 20);
  EXPECT_EQ(desk.conv1, (Shape{8, 8, 16}));
  EXPECT_EQ(desk.primary, (Shape{2, 2, 16}));
  EXPECT_EQ(desk.capsules, (Shape{16, 4}));
  EXPECT_EQ(desk.advanced, (Shape{4, 4}));
  EXPECT_EQ(desk.flat, (Shape{16}));

  std::mt19937_64 rng(7);
  ParameterSet<double> params;
  caps::CapsNet<double> net(caps::CapsNetConfig::desk(), 20, 20, params, "caps.", rng);
  EXPECT_EQ(net.forward(V::constant(random_tensor({20, 20, 1}, rng, 0.0, 1.0))).shape(), (Shape{16}));
  EXPECT_THROW(net.forward(V::constant(Tensor<double>({19, 20, 1}))), ShapeError);
}

TEST(CapsNet, FullSizeParameterCounts) {
  const auto rows = caps::capsnet_param_count(caps::CapsNetConfig::full(), 164, 148);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].count, 10496u);
  EXPECT_EQ(rows[1].count, 1327232u);
  EXPECT_EQ(rows[2].count, 4608u * 30 * 8 * 16);
  EXPECT_EQ(rows[2].count, 17694720u);
}

TEST(CapsNet, ZeroFrameWithZeroBiasesGivesZero) {
  std::mt19937_64 rng(8);
  ParameterSet<double> params;
  caps::CapsNet<double> net(caps::CapsNetConfig::desk(), 20, 20, params, "caps.", rng);
  params.get("caps.conv1.bias").mutable_value().fill(0.0);
  params.get("caps.primary.bias").mutable_value().fill(0.0);
  const auto out = net.forward(V::constant(Tensor<double>({20, 20, 1})));
  for (double v : out.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(CapsNet, BadConfigIsNamed) {
  auto c = caps::CapsNetConfig::desk();
  c.routing_iters = 0;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "model.caps_routing_iters");
  }
  EXPECT_THROW(caps::capsnet_shapes(caps::CapsNetConfig::full(), 20, 20), ShapeError);
}

// Conv, PrimaryCaps and TrafficCaps weights of the desk trunk.
static ad::GradCheckResult desk_trunk_check(double step) {
  std::mt19937_64 rng(9);
  ParameterSet<double> params;
  caps::CapsNet<double> net(caps::CapsNetConfig::desk(), 20, 20, params, "caps.", rng);
  const auto frame = V::constant(random_tensor({20, 20, 1}, rng, 0.0, 1.0));
  const std::vector<V> frames{frame};
  clear_relu_kinks(params.get("caps.conv1.kernel"), params.get("caps.conv1.bias"), frames, 2, 2e-3, rng);
  const auto w = V::constant(random_tensor({16}, rng));
  std::vector<V> leaves;
  for (auto& p : params.items()) leaves.push_back(p.var);
  return ad::grad_check_leaves([&] { return ad::sum(ad::hadamard(net.forward(frame), w)); }, leaves, step);
}

TEST(CapsNet, DeskGradientCheck) {
  const auto r = desk_trunk_check(1e-3);
  EXPECT_LT(r.max_rel_error, kGradCheckTolerance)
      << "worst input " << r.worst_input << " index " << r.worst_index << " analytic " << r.worst_analytic
      << " numeric " << r.worst_numeric;
}

// Same point with a 10x smaller step: the finite-difference error shrinks
// ~100x, so any residual at step 1e-3 is truncation, not a wrong gradient.
TEST(CapsNet, DeskGradientCheckSmallStep) {
  const auto coarse = desk_trunk_check(1e-3);
  const auto fine = desk_trunk_check(1e-4);
  EXPECT_LT(fine.max_rel_error, kGradCheckTolerance);
  EXPECT_LT(fine.max_rel_error, std::max(coarse.max_rel_error / 20, 1e-7));
}
