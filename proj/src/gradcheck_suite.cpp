#include "capsnlstm/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>

#include "capsnlstm/capsnet.hpp"
#include "capsnlstm/dataset.hpp"
#include "capsnlstm/model.hpp"
#include "capsnlstm/nlstm.hpp"
#include "capsnlstm/rng.hpp"

namespace capsnlstm {

namespace {

using ad::Var;
using V = Var<double>;
using Op = std::function<V(std::span<const V>)>;

Tensor<double> uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Uniform values with |v| >= margin.
Tensor<double> away_from_zero(const Shape& shape, std::mt19937_64& rng, double margin) {
  auto t = uniform(shape, rng, margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.data())
    if (sign(rng)) v = -v;
  return t;
}

// A shuffled ladder of distinct values 0.05 apart, so no pooling window has a near tie.
Tensor<double> distinct_values(const Shape& shape, std::mt19937_64& rng) {
  Tensor<double> t(shape);
  std::vector<std::size_t> idx(t.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.05 * static_cast<double>(idx[i]) - 0.025 * static_cast<double>(t.size());
  return t;
}

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(make_stream(seed, "gradcheck")) {}

  // Scalarizes `op` with a fixed random weighting so every output element matters differently.
  void op(const std::string& name, const Op& f, std::vector<Tensor<double>> point) {
    std::vector<V> probe;
    for (const auto& t : point) probe.push_back(V::constant(t));
    Shape out_shape;
    {
      ad::NoGradGuard guard;
      out_shape = f(probe).shape();
    }
    const auto weights = V::constant(uniform(out_shape, rng_));
    const ad::ScalarFunction scalar = [f, weights](std::span<const V> in) {
      return ad::sum(ad::hadamard(f(in), weights));
    };
    timed(name, [&] { return ad::grad_check(scalar, point); });
  }

  void leaves(const std::string& name, const std::function<V()>& loss, const std::vector<V>& vars,
              double step = 1e-3, bool gating = true) {
    timed(name, [&] { return ad::grad_check_leaves(loss, vars, step); });
    rows_.back().step = step;
    rows_.back().gating = gating;
  }

  std::mt19937_64& rng() { return rng_; }
  std::vector<GradCheckRow> take() { return std::move(rows_); }

 private:
  template <typename F>
  void timed(const std::string& name, F&& run) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckRow row;
    row.name = name;
    row.result = run();
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows_.push_back(std::move(row));
  }

  std::mt19937_64 rng_;
  std::vector<GradCheckRow> rows_;
};

void primitive_checks(Suite& s) {
  auto& rng = s.rng();
  const auto u = [&](Shape sh) { return uniform(sh, rng); };

  s.op("add", [](auto in) { return ad::add(in[0], in[1]); }, {u({3, 4}), u({3, 4})});
  s.op("sub", [](auto in) { return ad::sub(in[0], in[1]); }, {u({3, 4}), u({3, 4})});
  s.op("hadamard", [](auto in) { return ad::hadamard(in[0], in[1]); }, {u({3, 4}), u({3, 4})});
  s.op("scale", [](auto in) { return ad::scale(in[0], 1.7); }, {u({3, 4})});
  s.op("sigmoid", [](auto in) { return ad::sigmoid(in[0]); }, {uniform({3, 4}, rng, -3, 3)});
  s.op("tanh", [](auto in) { return ad::tanh(in[0]); }, {uniform({3, 4}, rng, -2, 2)});
  s.op("relu", [](auto in) { return ad::relu(in[0]); }, {away_from_zero({3, 4}, rng, 0.05)});
  s.op("sum", [](auto in) { return ad::sum(in[0]); }, {u({3, 4})});
  s.op("mean", [](auto in) { return ad::mean(in[0]); }, {u({3, 4})});
  s.op("matmul", [](auto in) { return ad::matmul(in[0], in[1]); }, {u({3, 4}), u({4, 5})});
  s.op("matmul_row", [](auto in) { return ad::matmul(in[0], in[1]); }, {u({4}), u({4, 5})});
  s.op("batched_matmul", [](auto in) { return ad::batched_matmul(in[0], in[1]); }, {u({2, 3, 4}), u({2, 4, 2})});
  s.op("reshape", [](auto in) { return ad::reshape(in[0], Shape{6, 2}); }, {u({3, 4})});
  s.op("concat", [](auto in) { return ad::concat(std::vector<V>(in.begin(), in.end())); }, {u({3}), u({2, 2})});
  s.op("row", [](auto in) { return ad::row(in[0], 1); }, {u({3, 4})});
  s.op("slice", [](auto in) { return ad::slice(in[0], 2, 5); }, {u({3, 4})});
  s.op("conv2d_valid", [](auto in) { return ad::conv2d(in[0], in[1], 2, ad::Padding::kValid); },
       {u({7, 6, 2}), u({3, 3, 2, 3})});
  s.op("conv2d_same", [](auto in) { return ad::conv2d(in[0], in[1], 2, ad::Padding::kSame); },
       {u({5, 6, 2}), u({3, 3, 2, 2})});
  s.op("add_channel_bias", [](auto in) { return ad::add_channel_bias(in[0], in[1]); }, {u({3, 3, 2}), u({2})});
  s.op("maxpool2d", [](auto in) { return ad::maxpool2d(in[0], 2, 2, true); }, {distinct_values({5, 5, 2}, rng)});
  s.op("softmax_rows", [](auto in) { return ad::softmax(in[0], 1); }, {uniform({3, 4}, rng, -2, 2)});
  s.op("softmax_cols", [](auto in) { return ad::softmax(in[0], 0); }, {uniform({3, 4}, rng, -2, 2)});
  s.op("dropout",
       [](auto in) {
         std::mt19937_64 mask(11);
         return ad::dropout(in[0], 0.3, true, mask);
       },
       {u({4, 5})});
}

void capsule_checks(Suite& s) {
  auto& rng = s.rng();
  const auto u = [&](Shape sh) { return uniform(sh, rng); };
  s.op("squash", [](auto in) { return caps::squash(in[0]); }, {u({5, 4})});
  s.op("predict_vectors", [](auto in) { return caps::predict_vectors(in[0], in[1]); }, {u({6, 3}), u({6, 2, 3, 4})});
  s.op("weighted_capsule_sum", [](auto in) { return caps::weighted_capsule_sum(in[0], in[1]); },
       {uniform({6, 3}, rng, 0, 1), u({6, 3, 4})});
  s.op("agreement", [](auto in) { return caps::agreement(in[0], in[1]); }, {u({6, 3, 4}), u({3, 4})});
  s.op("dynamic_routing_r3", [](auto in) { return caps::dynamic_routing(in[0], 3).outputs; }, {u({8, 3, 4})});
  s.op("dynamic_routing_r1_detached", [](auto in) { return caps::dynamic_routing(in[0], 1, true).outputs; },
       {u({8, 3, 4})});
}

void recurrent_checks(Suite& s) {
  auto& rng = s.rng();
  for (int kind = 0; kind < 2; ++kind) {
    ParameterSet<double> params;
    const std::size_t d = 5, hd = 6;
    auto x = V::leaf(uniform({d}, rng));
    auto h0 = V::leaf(uniform({hd}, rng, -0.5, 0.5));
    auto c0 = V::leaf(uniform({hd}, rng, -0.5, 0.5));
    auto ic0 = V::leaf(uniform({hd}, rng, -0.5, 0.5));
    const auto w = V::constant(uniform({hd}, rng));
    std::vector<V> vars{x, h0, c0};
    if (kind == 0) {
      rnn::LstmCell<double> cell(d, hd, params, "lstm.", rng);
      for (auto& p : params.items()) vars.push_back(p.var);
      s.leaves("lstm_step", [&] { return ad::sum(ad::hadamard(cell.step(x, {h0, c0}).h, w)); }, vars);
    } else {
      rnn::NlstmCell<double> cell(d, hd, params, "nlstm.", rng);
      vars.push_back(ic0);
      for (auto& p : params.items()) vars.push_back(p.var);
      s.leaves("nlstm_step", [&] { return ad::sum(ad::hadamard(cell.step(x, {h0, c0, ic0}).h, w)); }, vars);
    }
  }
  {
    ParameterSet<double> params;
    rnn::NlstmCell<double> cell(4, 5, params, "nlstm.", rng);
    auto seq = V::leaf(uniform({4, 4}, rng));
    const auto w = V::constant(uniform({5}, rng));
    std::vector<V> vars{seq};
    for (auto& p : params.items()) vars.push_back(p.var);
    s.leaves("nlstm_unroll", [&] { return ad::sum(ad::hadamard(rnn::unroll<rnn::NlstmCell<double>, double>(cell, seq).last, w)); },
             vars);
  }
  s.op("mse_loss",
       [t = uniform({4}, rng)](auto in) { return model::mse_loss<double>({in[0]}, {t}); }, {uniform({4}, rng)});
}

struct ComposedCase {
  std::string label;
  model::ModelConfig config;
  std::vector<double> steps;  // first entry gates, the rest are diagnostics
};

void composed_check(Suite& s, std::uint64_t seed, const ComposedCase& c) {
  const auto& config = c.config;
  const auto network = raster::synth_network(config.links, {config.rows, config.cols}, seed);
  const auto traffic = raster::synth_traffic(network, 40, seed);
  const auto series = model::build_series(network, traffic, 0, 120, config.v_max);
  const auto windows = model::series_windows(series, config.lag, config.horizons);
  const auto& sample = windows[windows.size() / 2];

  model::Model<double> m(config, seed);
  std::vector<V> frames;
  for (const auto& f : sample.inputs) {
    Tensor<double> t(Shape{f.dims.rows, f.dims.cols, 1});
    std::copy(f.values.begin(), f.values.end(), t.data().begin());
    frames.push_back(V::constant(std::move(t)));
  }
  clear_relu_kinks(m.params().get("caps.conv1.kernel"), m.params().get("caps.conv1.bias"), frames,
                   config.capsnet.conv1.stride, 2e-3, s.rng());
  std::vector<V> vars;
  for (auto& p : m.params().items()) vars.push_back(p.var);
  for (std::size_t i = 0; i < c.steps.size(); ++i) {
    const std::string name =
        i == 0 ? c.label : c.label + " step " + std::to_string(c.steps[i]).substr(0, 6);
    s.leaves(name, [&] { return m.sample_loss(sample, false); }, vars, c.steps[i], i == 0);
  }
}

std::vector<ComposedCase> composed_cases() {
  using model::Architecture;
  auto small = model::ModelConfig::desk(Architecture::kCapsNetNlstm, 12, 12, 3, 3, {1, 2});
  small.capsnet = {{3, 8, 2}, {3, 8, 2}, 4, 3, 4, 3, false};
  small.hidden = 6;
  const auto desk = model::ModelConfig::desk(Architecture::kCapsNetNlstm, 20, 20, 8, 6, {1, 3});
  return {{"capsnet_nlstm_mse (small)", small, {1e-3, 1e-4}}, {"capsnet_nlstm_mse (desk)", desk, {1e-3, 1e-4}}};
}

}  // namespace

// The bias is centred in a randomly chosen wide gap of the sorted pre-bias responses.
void clear_relu_kinks(const ad::Var<double>& kernel, ad::Var<double> bias, std::span<const ad::Var<double>> frames,
                      std::size_t stride, double margin, std::mt19937_64& rng) {
  ad::NoGradGuard guard;
  const std::size_t channels = bias.size();
  std::vector<std::vector<double>> responses(channels);
  for (const auto& frame : frames) {
    const auto z = ad::conv2d(frame, kernel, stride, ad::Padding::kValid);
    for (std::size_t i = 0; i < z.size(); ++i) responses[i % channels].push_back(z.value()[i]);
  }
  auto& b = bias.mutable_value();
  for (std::size_t c = 0; c < channels; ++c) {
    auto& r = responses[c];
    std::sort(r.begin(), r.end());
    std::vector<double> centres{r.front() - 4 * margin, r.back() + 4 * margin};
    for (std::size_t i = 1; i < r.size(); ++i)
      if (r[i] - r[i - 1] > 4 * margin) centres.push_back(0.5 * (r[i] + r[i - 1]));
    std::uniform_int_distribution<std::size_t> pick(0, centres.size() - 1);
    b[c] = -centres[pick(rng)];
  }
}

std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed, bool composed) {
  Suite s(seed);
  primitive_checks(s);
  capsule_checks(s);
  recurrent_checks(s);
  if (composed)
    for (const auto& c : composed_cases()) composed_check(s, seed, c);
  return s.take();
}

}  // namespace capsnlstm
