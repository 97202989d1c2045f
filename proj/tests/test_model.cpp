#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "capsnlstm/dataset.hpp"
#include "capsnlstm/errors.hpp"
#include "capsnlstm/metrics.hpp"
#include "capsnlstm/model.hpp"
#include "capsnlstm/training.hpp"

using namespace capsnlstm;
using namespace capsnlstm::model;

namespace {

Series desk_series(std::size_t periods, std::uint64_t seed = 7) {
  const auto network = raster::synth_network(8, {20, 20}, seed);
  const auto traffic = raster::synth_traffic(network, periods, seed);
  return build_series(network, traffic, 0, 120, 80.0);
}

const LayerRow& row(const LayerPlan& plan, const std::string& name) {
  for (const auto& r : plan.rows)
    if (r.name == name) return r;
  throw std::runtime_error("no row " + name);
}

// A window whose targets are fixed so predictors can be scored by hand.
raster::SampleWindow fixed_window(std::vector<double> target, std::vector<double> last) {
  raster::SampleWindow w;
  w.targets[1] = std::move(target);
  w.last_speeds = std::move(last);
  return w;
}

}  // namespace

TEST(Architecture, TagsRoundTrip) {
  for (auto a : all_architectures()) EXPECT_EQ(parse_architecture(to_string(a)), a);
  try {
    parse_architecture("transformer");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "model.architecture");
  }
}

TEST(LayerPlan, CapsNetNlstmFullSizeRows) {
  const auto plan = layer_plan(ModelConfig::full(Architecture::kCapsNetNlstm));
  EXPECT_EQ(row(plan, "Convolution").params, 10496u);
  EXPECT_EQ(row(plan, "PrimaryCaps").params, 1327232u);
  EXPECT_EQ(row(plan, "TrafficCaps").params, 17694720u);
  EXPECT_EQ(row(plan, "NLSTM").params, 9222400u);
  EXPECT_EQ(row(plan, "Fully connected").params, 222678u);
  EXPECT_EQ(plan.total, 28477526u);

  EXPECT_EQ(format_shape(row(plan, "Convolution").output), "78x70x128");
  EXPECT_EQ(format_shape(row(plan, "PrimaryCaps").output), "18x16x128");
  EXPECT_EQ(format_shape(row(plan, "Reshape").output), "4608x8");
  EXPECT_EQ(format_shape(row(plan, "TrafficCaps").output), "30x16");
  EXPECT_EQ(format_shape(row(plan, "Flattened").output), "480");
  EXPECT_EQ(format_shape(row(plan, "Fully connected").output), "278");
}

TEST(LayerPlan, CnnLstmFullSizeRows) {
  const auto plan = layer_plan(ModelConfig::full(Architecture::kCnnLstm));
  const std::size_t conv[] = {160, 4640, 18496, 73856};
  const char* pooled[] = {"82x74x16", "41x37x32", "21x19x64", "11x10x128"};
  for (int s = 0; s < 4; ++s) {
    EXPECT_EQ(row(plan, "Convolution" + std::to_string(s + 1)).params, conv[s]);
    EXPECT_EQ(format_shape(row(plan, "Pooling" + std::to_string(s + 1)).output), pooled[s]);
  }
  EXPECT_EQ(format_shape(row(plan, "Convolution1").output), "164x148x16");
  EXPECT_EQ(format_shape(row(plan, "Flattened").output), "14080");
  EXPECT_EQ(row(plan, "LSTM1").params, 47619200u);
  EXPECT_EQ(row(plan, "LSTM2").params, 5123200u);
  EXPECT_EQ(row(plan, "Fully connected").params, 222678u);
  EXPECT_EQ(plan.total, 53062230u);
}

TEST(LayerPlan, TotalIsRowSumAndMatchesAllocation) {
  for (auto a : all_architectures()) {
    const auto cfg = ModelConfig::desk(a, 20, 20, 8, 6, {1, 3});
    const auto plan = layer_plan(cfg);
    std::size_t sum = 0;
    for (const auto& r : plan.rows) sum += r.params;
    EXPECT_EQ(sum, plan.total) << to_string(a);
    Model<float> m(cfg, 1);
    EXPECT_EQ(m.params().scalar_count(), plan.total) << to_string(a);
  }
}

TEST(Model, DeskOutputShapesPerHorizon) {
  const auto series = desk_series(40);
  for (auto a : all_architectures()) {
    const auto cfg = ModelConfig::desk(a, 20, 20, 8, 6, {1, 2});
    Model<double> m(cfg, 3);
    const auto windows = series_windows(series, 6, cfg.horizons);
    const auto out = m.forward(windows.front(), false);
    ASSERT_EQ(out.size(), 2u) << to_string(a);
    EXPECT_EQ(out.at(1).shape(), (Shape{8}));
    EXPECT_EQ(out.at(2).shape(), (Shape{8}));
  }
}

TEST(Model, ZeroHeadsPredictZeroAndLossIsMeanSquaredTarget) {
  const auto series = desk_series(40);
  const auto cfg = ModelConfig::desk(Architecture::kCapsNetNlstm, 20, 20, 8, 6, {1, 3});
  Model<double> m(cfg, 5);
  for (auto& p : m.params().items())
    if (p.name.starts_with("head.")) p.var.mutable_value().fill(0.0);
  const auto w = series_windows(series, 6, cfg.horizons).at(4);
  for (const auto& [h, v] : m.predict(w))
    for (double s : v) EXPECT_EQ(s, 0.0);

  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& [h, t] : w.targets)
    for (double y : t) sq += (y / 80.0) * (y / 80.0), ++n;
  EXPECT_NEAR(m.sample_loss(w, false).value()[0], sq / n, 1e-12);
}

TEST(Model, DropoutOnlyInTraining) {
  const auto series = desk_series(40);
  const auto cfg = ModelConfig::desk(Architecture::kNlstmOnly, 20, 20, 8, 6, {1});
  Model<double> m(cfg, 5);
  const auto w = series_windows(series, 6, cfg.horizons).front();
  const auto a = m.predict(w), b = m.predict(w);
  EXPECT_EQ(a, b);
  std::mt19937_64 rng(1);
  const auto t = m.forward(w, true, &rng).at(1).value();
  bool differs = false;
  for (std::size_t k = 0; k < 8; ++k) differs |= std::abs(t[k] - a.at(1)[k]) > 1e-9;
  EXPECT_TRUE(differs);
}

TEST(MseLoss, ExamplesAndOracle) {
  using V = ad::Var<double>;
  EXPECT_DOUBLE_EQ(mse_loss<double>({V::constant(Tensor<double>({1}, 3.0))}, {Tensor<double>({1}, 1.0)}).value()[0], 4.0);
  EXPECT_DOUBLE_EQ(mse_loss<double>({V::constant(Tensor<double>({3}, 2.0))}, {Tensor<double>({3}, 2.0)}).value()[0], 0.0);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(-2, 2);
  std::vector<V> pred;
  std::vector<Tensor<double>> tgt;
  double sq = 0.0;
  for (int h = 0; h < 3; ++h) {
    Tensor<double> p({5}), t({5});
    for (std::size_t k = 0; k < 5; ++k) {
      p[k] = d(rng), t[k] = d(rng);
      sq += (p[k] - t[k]) * (p[k] - t[k]);
    }
    pred.push_back(V::constant(p));
    tgt.push_back(t);
  }
  EXPECT_NEAR(mse_loss(pred, tgt).value()[0], sq / 15.0, 1e-12);
}

TEST(Metrics, Examples) {
  const std::vector<double> p{5.0}, o{4.0};
  EXPECT_DOUBLE_EQ(mape_signed(p, o), 0.2);
  EXPECT_DOUBLE_EQ(mape_standard(p, o), 0.25);
  EXPECT_DOUBLE_EQ(metric_mse(p, o), 1.0);
  const std::vector<double> same{30.0, 40.0, 50.0};
  EXPECT_EQ(metric_mse(same, same), 0.0);
  EXPECT_EQ(mape_signed(same, same), 0.0);
  EXPECT_EQ(mape_standard(same, same), 0.0);
}

TEST(Metrics, MatchDirectSums) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(5, 70);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p(17), o(17);
    for (auto& v : p) v = d(rng);
    for (auto& v : o) v = d(rng);
    double mse = 0, mp = 0, ms = 0;
    for (std::size_t i = 0; i < 17; ++i) {
      mse += (p[i] - o[i]) * (p[i] - o[i]);
      mp += (p[i] - o[i]) / p[i];
      ms += std::abs(p[i] - o[i]) / std::abs(o[i]);
    }
    EXPECT_NEAR(metric_mse(p, o), mse / 17, 1e-12);
    EXPECT_NEAR(mape_signed(p, o), mp / 17, 1e-12);
    EXPECT_NEAR(mape_standard(p, o), ms / 17, 1e-12);
  }
}

TEST(Metrics, SignsAndGuards) {
  const std::vector<double> over{50.0, 60.0}, under{30.0, 40.0}, obs{40.0, 50.0};
  EXPECT_GT(mape_signed(over, obs), 0.0);
  EXPECT_LT(mape_signed(under, obs), 0.0);
  EXPECT_GE(mape_standard(under, obs), 0.0);
  EXPECT_THROW(mape_signed(std::vector<double>{0.0, 1.0}, obs), NumericError);
  EXPECT_EQ(mape_standard(std::vector<double>{3.0}, std::vector<double>{0.0}), 0.0);
  EXPECT_THROW(metric_mse(std::vector<double>{1.0}, obs), ShapeError);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(-50, 50);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p{d(rng), d(rng)}, o{d(rng), d(rng)};
    EXPECT_GE(mape_standard(p, o), 0.0);
  }
}

TEST(Evaluate, PerfectBiasedAndEmpty) {
  std::vector<raster::SampleWindow> set{fixed_window({40, 50, 60}, {41, 49, 60}),
                                        fixed_window({45, 55, 65}, {40, 50, 60})};
  const Predictor perfect = [](const raster::SampleWindow& w) { return w.targets; };
  const auto m = evaluate(perfect, set, 3);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.mape_standard, 0.0);
  EXPECT_EQ(m.count, 6u);
  EXPECT_EQ(flagged_links(m, 2.0), 0u);

  const Predictor biased = [](const raster::SampleWindow& w) {
    auto p = w.targets;
    for (auto& [h, v] : p)
      for (auto& s : v) s += 3.0;
    return p;
  };
  const auto b = evaluate(biased, set, 3);
  EXPECT_NEAR(b.mse, 9.0, 1e-12);
  EXPECT_EQ(flagged_links(b, 2.0), 3u);
  std::ostringstream report;
  const std::vector<raster::LinkId> ids{{1}, {2}, {3}};
  write_link_report(report, ids, b, 2.0);
  EXPECT_EQ(report.str(), "link_id,mae_kmh,flagged\n1,3.000000,1\n2,3.000000,1\n3,3.000000,1\n");

  const auto pm = evaluate(persistence, set, 3);
  EXPECT_NEAR(pm.mse, (1.0 + 1.0 + 0.0 + 25 + 25 + 25) / 6, 1e-12);

  EXPECT_THROW(evaluate(perfect, std::span<const raster::SampleWindow>{}, 3), DataError);
}

TEST(RmsProp, FirstStepAndFixedPoints) {
  ParameterSet<double> params;
  auto p = params.add("p", Tensor<double>({1}, 0.0));
  ad::backward(ad::sum(p));
  rmsprop_step(params, 1e-3, 0.9, 1e-8);
  EXPECT_NEAR(p.value()[0], -1e-3 / (std::sqrt(0.1) + 1e-8), 1e-15);
  EXPECT_NEAR(p.value()[0], -3.1623e-3, 1e-7);
  EXPECT_NEAR(params.items()[0].rms_avg[0], 0.1, 1e-15);

  ParameterSet<double> still;
  auto q = still.add("q", Tensor<double>({3}, 1.5));
  for (int i = 0; i < 5; ++i) rmsprop_step(still, 1e-3, 0.9, 1e-8);
  for (double v : q.value().data()) EXPECT_EQ(v, 1.5);

  ParameterSet<double> steady;
  auto r = steady.add("r", Tensor<double>({1}, 0.0));
  ad::backward(ad::scale(ad::sum(r), 2.5));
  double before = 0.0, step = 0.0;
  for (int i = 0; i < 400; ++i) {
    before = r.value()[0];
    rmsprop_step(steady, 1e-3, 0.9, 1e-8);
    step = before - r.value()[0];
  }
  EXPECT_NEAR(step, 1e-3, 1e-9);
}

TEST(TrainConfig, LearningRateSchedule) {
  TrainConfig c;
  for (std::size_t e = 0; e < 20; ++e) EXPECT_DOUBLE_EQ(c.lr_at(e), 1e-3);
  for (std::size_t e = 20; e < 40; ++e) EXPECT_DOUBLE_EQ(c.lr_at(e), 5e-4);
  EXPECT_DOUBLE_EQ(c.lr_at(40), 2.5e-4);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, ZeroEpochsKeepsInitialization) {
  const auto series = desk_series(40);
  const auto cfg = ModelConfig::desk(Architecture::kNlstmOnly, 20, 20, 8, 6, {1});
  Model<float> m(cfg, 1);
  const auto before = m.params().snapshot();
  auto tc = TrainConfig::desk(1);
  tc.epochs = 0;
  const auto windows = series_windows(series, 6, cfg.horizons);
  const auto r = train<float>(m, windows, {}, tc);
  EXPECT_TRUE(r.history.empty());
  const auto after = m.params().snapshot();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(std::ranges::equal(before[i].data(), after[i].data()));
  EXPECT_THROW(train<float>(m, {}, {}, tc), DataError);
}

TEST(Train, DeterministicHistoryAndDecreasingLoss) {
  const auto series = desk_series(120);
  const auto cfg = ModelConfig::desk(Architecture::kCapsNetNlstm, 20, 20, 8, 6, {1, 3});
  auto split = time_split(series_windows(series, 6, cfg.horizons), 0.8);
  auto tc = TrainConfig::desk(7);
  tc.epochs = 3;
  auto run = [&] {
    Model<float> m(cfg, 7);
    return train<float>(m, split.train, split.test, tc);
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.history.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(a.history[e].train_loss, b.history[e].train_loss);
    EXPECT_EQ(a.history[e].val_loss, b.history[e].val_loss);
    EXPECT_EQ(a.history[e].epoch, e);
  }
  EXPECT_LT(a.history.back().train_loss, a.initial_train_loss);

  std::ostringstream out;
  write_history(out, a.history);
  EXPECT_TRUE(out.str().starts_with("epoch,lr,train_loss,val_loss\n"));
}

TEST(CrossValidation, FoldsPartitionTheData) {
  const auto f = fold_ranges(10, 5);
  ASSERT_EQ(f.size(), 5u);
  std::vector<int> seen(10, 0);
  for (const auto& [b, e] : f) {
    EXPECT_EQ(e - b, 2u);
    for (auto i = b; i < e; ++i) ++seen[i];
  }
  for (int s : seen) EXPECT_EQ(s, 1);

  const auto g = fold_ranges(12, 5);
  EXPECT_EQ(g.front(), (std::pair<std::size_t, std::size_t>{0, 3}));
  EXPECT_EQ(g.back().second, 12u);
  EXPECT_THROW(fold_ranges(3, 5), DataError);
}

TEST(CrossValidation, Selection) {
  EXPECT_EQ(select_config({{0.5, 0.7, 0.2}}).selected, 0u);
  const auto r = select_config({{0.5, 0.6, 0.7}, {0.4, 0.5, 0.6}, {0.45, 0.55, 0.65}});
  EXPECT_EQ(r.selected, 1u);
  EXPECT_NEAR(r.mean_losses[1], 0.5, 1e-15);
  EXPECT_EQ(select_config({{1.0}, {1.0}}).selected, 0u);
}

TEST(Checkpoint, ModelRoundTrip) {
  const auto series = desk_series(40);
  const auto cfg = ModelConfig::desk(Architecture::kCapsNetNlstm, 20, 20, 8, 6, {1, 3});
  Model<float> m(cfg, 11);
  std::stringstream buf;
  write_model(buf, m);
  const auto saved = read_model(buf);
  EXPECT_EQ(to_key_values(saved.config), to_key_values(cfg));
  const auto back = restore_model<float>(saved);
  const auto w = series_windows(series, 6, cfg.horizons).front();
  EXPECT_EQ(back.predict(w), m.predict(w));

  std::stringstream bad("capsnlstm-model 9\n");
  EXPECT_ANY_THROW(read_model(bad));
}

TEST(ModelConfig, KeyValuesRoundTripAndNamedErrors) {
  for (auto a : all_architectures()) {
    const auto cfg = ModelConfig::desk(a, 12, 16, 5, 4, {1, 2, 5});
    EXPECT_EQ(to_key_values(from_key_values(to_key_values(cfg), ModelConfig{})), to_key_values(cfg));
  }
  try {
    from_key_values({{"hidden", "-3"}}, ModelConfig{});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "model.hidden");
  }
  try {
    from_key_values({{"colour", "red"}}, ModelConfig{});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "model.colour");
  }
}
