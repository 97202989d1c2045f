#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "capsnlstm/grid_raster.hpp"

using namespace capsnlstm;
using namespace capsnlstm::raster;

namespace {

LinkSpeedVector speeds(std::int64_t period, std::initializer_list<std::pair<std::uint64_t, std::optional<double>>> v) {
  LinkSpeedVector out{period, {}};
  for (const auto& [id, s] : v) out.speeds[LinkId{id}] = s;
  return out;
}

// Separating-axis test: the closed segment misses the closed box iff the
// boxes' extents are disjoint or all four corners lie strictly on one side of
// the segment's line.
bool sat_intersects(GeoPoint a, GeoPoint b, const CellRect& r) {
  if (std::max(a.lon, b.lon) < r.lon_lo || std::min(a.lon, b.lon) > r.lon_hi) return false;
  if (std::max(a.lat, b.lat) < r.lat_lo || std::min(a.lat, b.lat) > r.lat_hi) return false;
  const auto side = [&](double lat, double lon) {
    return (b.lon - a.lon) * (lat - a.lat) - (b.lat - a.lat) * (lon - a.lon);
  };
  const double s[4] = {side(r.lat_lo, r.lon_lo), side(r.lat_lo, r.lon_hi), side(r.lat_hi, r.lon_lo),
                       side(r.lat_hi, r.lon_hi)};
  const bool all_pos = std::all_of(s, s + 4, [](double v) { return v > 0; });
  const bool all_neg = std::all_of(s, s + 4, [](double v) { return v < 0; });
  return !(all_pos || all_neg);
}

// 4x4 grid of unit cells over [0,4]^2; coordinates are small integers and
// halves so every comparison is exact.
RoadNetwork toy_network() {
  std::vector<LinkGeometry> links{
      {{1}, {{3.5, 0.5}, {0.5, 3.5}}},              // anti-diagonal
      {{2}, {{2.0, 0.2}, {2.0, 3.8}}},              // along the row 1/2 boundary
      {{3}, {{0.5, 0.5}, {1.5, 1.5}, {1.5, 3.0}}},  // two segments
  };
  return RoadNetwork(std::move(links), {0.0, 0.0, 4.0, 4.0}, {1.0, 1.0});
}

}  // namespace

TEST(Aggregate, Examples) {
  const std::vector<SpeedRecord> one{{{1}, 0, 30.0}};
  EXPECT_EQ(aggregate_link_speed(one), 30.0);
  const std::vector<SpeedRecord> two{{{1}, 0, 20.0}, {{1}, 5, 40.0}};
  EXPECT_EQ(aggregate_link_speed(two), 30.0);
  EXPECT_FALSE(aggregate_link_speed({}).has_value());
  const std::vector<SpeedRecord> negative{{{1}, 0, -1.0}};
  EXPECT_THROW(aggregate_link_speed(negative), DataError);
}

TEST(Aggregate, MatchesOnePassOracle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> speed(0.0, 120.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<SpeedRecord> recs(1 + rng() % 50);
    double sum = 0.0;
    for (auto& r : recs) {
      r = {{3}, 0, speed(rng)};
      sum += r.speed;
    }
    const double oracle = sum / static_cast<double>(recs.size());
    EXPECT_LE(std::abs(*aggregate_link_speed(recs) - oracle), 1e-12 * oracle);
  }
}

TEST(Aggregate, PeriodBucketing) {
  const auto net = toy_network();
  const std::vector<SpeedRecord> recs{{{1}, 250, 10.0}, {{1}, 300, 20.0}, {{2}, 365, 50.0}, {{3}, 600, 70.0}};
  const auto agg = aggregate_periods(net, recs, 120);
  EXPECT_EQ(agg.start_time, 240);
  ASSERT_EQ(agg.periods.size(), 4u);
  EXPECT_EQ(agg.periods[0].speeds.at(LinkId{1}), 15.0);
  EXPECT_FALSE(agg.periods[0].speeds.at(LinkId{2}).has_value());
  EXPECT_EQ(agg.periods[1].speeds.at(LinkId{2}), 50.0);
  EXPECT_EQ(agg.periods[3].speeds.at(LinkId{3}), 70.0);
  EXPECT_THROW(aggregate_periods(net, std::vector<SpeedRecord>{}, 120), DataError);
  EXPECT_THROW(aggregate_periods(net, std::vector<SpeedRecord>{{{9}, 0, 1.0}}, 120), DataError);
}

TEST(FillMissing, Examples) {
  auto filled = fill_missing({speeds(0, {{1, 30.0}}), speeds(1, {{1, std::nullopt}}), speeds(2, {{1, std::nullopt}}),
                              speeds(3, {{1, 50.0}})});
  std::vector<double> got;
  for (const auto& p : filled) got.push_back(*p.speeds.at(LinkId{1}));
  EXPECT_EQ(got, (std::vector<double>{30, 30, 30, 50}));

  filled = fill_missing({speeds(0, {{1, std::nullopt}}), speeds(1, {{1, 40.0}})});
  EXPECT_EQ(*filled[0].speeds.at(LinkId{1}), 40.0);
  EXPECT_EQ(*filled[1].speeds.at(LinkId{1}), 40.0);

  const std::vector<LinkSpeedVector> full{speeds(0, {{1, 1.0}, {2, 2.0}}), speeds(1, {{1, 3.0}, {2, 4.0}})};
  const auto same = fill_missing(full);
  for (std::size_t t = 0; t < 2; ++t) EXPECT_EQ(same[t].speeds, full[t].speeds);
}

TEST(FillMissing, UnfillableLinksAreListed) {
  try {
    fill_missing({speeds(0, {{1, 1.0}, {7, std::nullopt}}), speeds(1, {{1, 2.0}, {7, std::nullopt}})});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
  }
}

TEST(Rasterize, ZeroBackgroundAndAveraging) {
  const auto net = toy_network();
  const auto frame = rasterize(net, speeds(0, {{1, 30.0}, {2, 50.0}, {3, 10.0}}));
  // North-east corner cell: no link reaches it.
  EXPECT_EQ(frame.at(0, 3), 0.0);
  // Any cell crossed by exactly links 1 (30) and 2 (50).
  bool found = false;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      if (net.cell_links(r, c) == std::vector<std::size_t>{0, 1}) {
        EXPECT_EQ(frame.at(r, c), 40.0);
        found = true;
      }
  EXPECT_TRUE(found);
}

TEST(Rasterize, ToyNetworkMatchesBruteForceOracle) {
  const auto net = toy_network();
  ASSERT_EQ(net.dims(), (GridDims{4, 4}));
  const auto sp = speeds(0, {{1, 30.0}, {2, 50.0}, {3, 10.0}});
  const auto frame = rasterize(net, sp);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      const CellRect rect{4.0 - double(r + 1), 4.0 - double(r), double(c), double(c + 1)};
      double total = 0.0;
      int n = 0;
      for (const auto& link : net.links()) {
        bool hit = false;
        for (std::size_t s = 0; s + 1 < link.polyline.size(); ++s)
          hit = hit || sat_intersects(link.polyline[s], link.polyline[s + 1], rect);
        if (hit) {
          total += *sp.speeds.at(link.id);
          ++n;
        }
      }
      EXPECT_EQ(frame.at(r, c), n ? total / n : 0.0) << "cell " << r << "," << c;
    }
}

TEST(Rasterize, SegmentIntersectionAgreesWithOracleOnRandomSegments) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> coord(-4, 12);  // quarter units
  const CellRect rect{1.0, 2.0, 1.0, 2.0};
  for (int trial = 0; trial < 5000; ++trial) {
    const GeoPoint a{coord(rng) / 4.0, coord(rng) / 4.0}, b{coord(rng) / 4.0, coord(rng) / 4.0};
    if (a == b) continue;
    EXPECT_EQ(segment_intersects_rect(a, b, rect), sat_intersects(a, b, rect))
        << a.lat << "," << a.lon << " - " << b.lat << "," << b.lon;
  }
}

TEST(Rasterize, ConservationAndZeroBackgroundOnSyntheticData) {
  const auto net = synth_network(8, {20, 20}, 3);
  const auto traffic = synth_traffic(net, 60, 3);
  for (const auto& period : traffic) {
    const auto dense = dense_speeds(net, period);
    const auto frame = rasterize(net, period);
    for (std::size_t r = 0; r < frame.dims.rows; ++r)
      for (std::size_t c = 0; c < frame.dims.cols; ++c) {
        const auto& members = net.cell_links(r, c);
        if (members.empty()) {
          EXPECT_EQ(frame.at(r, c), 0.0);
          continue;
        }
        double lo = 1e300, hi = -1e300;
        for (auto li : members) {
          lo = std::min(lo, dense[li]);
          hi = std::max(hi, dense[li]);
        }
        EXPECT_GE(frame.at(r, c), lo - 1e-12);
        EXPECT_LE(frame.at(r, c), hi + 1e-12);
      }
  }
}

TEST(Normalize, ExamplesAndRoundTrip) {
  SpeedFrame f{0, {1, 3}, {0.0, 80.0, 100.0}};
  const auto n = normalize_frame(f, 80.0);
  EXPECT_EQ(n.values, (std::vector<double>{0.0, 1.0, 1.0}));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(0.0, 80.0);
  for (int i = 0; i < 1000; ++i) {
    const double v = d(rng);
    SpeedFrame one{0, {1, 1}, {v}};
    EXPECT_DOUBLE_EQ(denormalize(normalize_frame(one, 80.0).values[0], 80.0), v);
  }
}

TEST(Windows, Examples) {
  const auto series = [](std::size_t n) {
    std::vector<SpeedFrame> frames;
    std::vector<std::vector<double>> links;
    for (std::size_t t = 0; t < n; ++t) {
      frames.push_back({std::int64_t(t), {1, 1}, {double(t)}});
      links.push_back({double(t), double(t) + 0.5});
    }
    return std::pair{frames, links};
  };
  const std::vector<int> h3{1, 5, 10};
  auto [f30, l30] = series(30);
  const auto w = make_windows(f30, l30, 15, h3);
  ASSERT_EQ(w.size(), 6u);
  for (const auto& s : w) {
    EXPECT_EQ(s.inputs.size(), 15u);
    EXPECT_EQ(s.targets.size(), 3u);
  }
  EXPECT_EQ(w[2].targets.at(5), l30[2 + 15 - 1 + 5]);
  EXPECT_EQ(w[2].last_speeds, l30[16]);

  auto [f25, l25] = series(25);
  const std::vector<int> h10{10};
  const auto one = make_windows(f25, l25, 15, h10);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].targets.at(10), l25[24]);

  EXPECT_THROW(make_windows(f25, l25, 20, h10), DataError);
  EXPECT_THROW(make_windows(f25, l25, 0, h10), ConfigError);
}

TEST(Windows, CountFormula) {
  for (std::size_t len = 1; len < 40; ++len)
    for (std::size_t lag = 1; lag < 12; ++lag)
      for (int maxh : {1, 3, 7}) {
        const std::vector<int> hz{1, maxh};
        if (len < lag + std::size_t(maxh)) continue;
        std::vector<SpeedFrame> frames(len, SpeedFrame{0, {1, 1}, {0.0}});
        std::vector<std::vector<double>> links(len, std::vector<double>{0.0});
        EXPECT_EQ(make_windows(frames, links, lag, hz).size(), len - lag - maxh + 1);
        EXPECT_EQ(window_count(len, lag, hz), len - lag - maxh + 1);
      }
}

TEST(Synth, DeterministicBoundedAndPeriodicWithoutNoise) {
  const auto a = synth_network(8, {20, 20}, 7), b = synth_network(8, {20, 20}, 7);
  ASSERT_EQ(a.link_count(), 8u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(a.links()[i].polyline, b.links()[i].polyline);
  const auto ta = synth_traffic(a, 400, 7), tb = synth_traffic(b, 400, 7);
  for (std::size_t t = 0; t < ta.size(); ++t) {
    EXPECT_EQ(ta[t].speeds, tb[t].speeds);
    for (const auto& [id, s] : ta[t].speeds) {
      ASSERT_TRUE(s.has_value());
      EXPECT_GE(*s, 0.0);
      EXPECT_LE(*s, 80.0);
    }
  }

  SynthParams quiet;
  quiet.noise_amplitude = 0.0;
  const auto p = synth_traffic(a, 3 * quiet.cycle_periods, 11, quiet);
  for (std::size_t t = 0; t + quiet.cycle_periods < p.size(); ++t)
    for (const auto& [id, s] : p[t].speeds) EXPECT_NEAR(*s, *p[t + quiet.cycle_periods].speeds.at(id), 1e-9);
}

TEST(FileFormats, GeometryRoundTripAndLineNumbers) {
  const auto net = toy_network();
  std::stringstream buf;
  write_network_geometry(buf, net);
  const auto back = read_network_geometry(buf);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back[i].polyline, net.links()[i].polyline);

  std::stringstream bad("# header\n1, 0 0; 1 1\n2, 0 0; oops\n");
  try {
    read_network_geometry(bad);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(FileFormats, RecordsAndArchiveRoundTrip) {
  const std::vector<SpeedRecord> recs{{{1}, 100, 30.5}, {{2}, 220, 0.0}};
  std::stringstream buf;
  write_speed_records(buf, recs);
  EXPECT_EQ(buf.str().substr(0, 25), "link_id,timestamp,speed_k");
  const auto back = read_speed_records(buf);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].link, LinkId{1});
  EXPECT_EQ(back[1].timestamp, 220);
  EXPECT_EQ(back[0].speed, 30.5);

  std::stringstream empty("");
  EXPECT_THROW(read_speed_records(empty), DataError);

  const std::vector<SpeedFrame> frames{{10, {2, 3}, {1, 2, 3, 4, 5, 6}}, {130, {2, 3}, {0, 0, 0, 0, 0, 7.25}}};
  std::stringstream ar;
  write_frame_archive(ar, frames);
  EXPECT_EQ(ar.str().substr(0, 4), "SFR1");
  EXPECT_EQ(ar.str().size(), 4 + 12 + 2 * (8 + 6 * 4));
  const auto fb = read_frame_archive(ar);
  ASSERT_EQ(fb.size(), 2u);
  EXPECT_EQ(fb[1].timestamp, 130);
  EXPECT_EQ(fb[1].values, frames[1].values);

  std::stringstream junk("NOPE");
  EXPECT_THROW(read_frame_archive(junk), DataError);
}
