#include <doctest.h>

#include <cmath>

#include "trajlab/encoding.hpp"
#include "trajlab/synth.hpp"

using namespace trajlab;

namespace {

dataio::Trajectory traj_of(std::vector<std::tuple<double, double, std::int64_t>> pts) {
  dataio::Trajectory t{"u", "t", {}};
  for (auto& [lat, lon, ts] : pts) t.points.push_back({lat, lon, ts});
  return t;
}

}  // namespace

TEST_CASE("time features") {
  // 1970-01-01 was a Thursday
  CHECK(enc::day_of_week_utc(0) == 3);
  CHECK(enc::hour_of_day_utc(0) == 0);
  // 2 am on Monday 2008-09-01
  const std::int64_t ts = dataio::civil_to_epoch(2008, 9, 1, 2, 0, 0);
  CHECK(enc::day_of_week_utc(ts) == 0);
  CHECK(enc::hour_of_day_utc(ts) == 2);
}

TEST_CASE("fit_encoder") {
  SUBCASE("symmetric box") {
    const auto t = traj_of({{39.0, 115.0, 0}, {41.0, 117.0, 30}});
    const auto cfg = enc::fit_encoder(std::vector<dataio::Trajectory>{t}, 10);
    CHECK(cfg.ref.lat0 == doctest::Approx(40.0));
    CHECK(cfg.ref.lon0 == doctest::Approx(116.0));
    CHECK(cfg.scale_lat == doctest::Approx(1.0));
    CHECK(cfg.scale_lon == doctest::Approx(1.0));
    CHECK(cfg.max_len == 10);
  }
  SUBCASE("single point gets clamped scales") {
    const auto t = traj_of({{40.0, 116.0, 0}});
    const auto cfg = enc::fit_encoder(std::vector<dataio::Trajectory>{t}, 4);
    CHECK(cfg.scale_lat == 1e-9);
    CHECK(cfg.scale_lon == 1e-9);
  }
  SUBCASE("refit is idempotent") {
    const auto t = traj_of({{39.5, 115.5, 0}, {40.5, 116.5, 30}});
    const auto a = enc::fit_encoder(std::vector<dataio::Trajectory>{t}, 8);
    const auto b = enc::fit_encoder(std::vector<dataio::Trajectory>{t}, 8);
    CHECK(a.ref.lat0 == b.ref.lat0);
    CHECK(a.scale_lat == b.scale_lat);
    CHECK(a.scale_lon == b.scale_lon);
  }
  SUBCASE("empty dataset is rejected") {
    std::vector<dataio::Trajectory> none;
    CHECK_THROWS(enc::fit_encoder(none, 4));
  }
  SUBCASE("max_len below the longest trajectory is rejected") {
    const auto t = traj_of({{40, 116, 0}, {40, 116, 1}, {40, 116, 2}});
    CHECK_THROWS(enc::fit_encoder(std::vector<dataio::Trajectory>{t}, 2));
  }
}

TEST_CASE("encode") {
  enc::EncoderConfig cfg;
  cfg.ref = {40.0, 115.0};
  cfg.scale_lat = 1.0;
  cfg.scale_lon = 1.0;
  cfg.max_len = 4;

  // 2 am on a Monday
  const std::int64_t monday2am = dataio::civil_to_epoch(2008, 9, 1, 2, 0, 0);
  const auto t = traj_of({{39.2, 117.34, monday2am}});
  const auto et = enc::encode(t, cfg);

  CHECK(et.true_len == 1);
  CHECK(et.features(0, 0) == doctest::Approx(-0.80).epsilon(1e-12));
  CHECK(et.features(0, 1) == doctest::Approx(2.34).epsilon(1e-12));
  // hour one-hot index 2, dow index 0
  CHECK(et.features(0, 2 + 2) == 1.0);
  CHECK(et.features(0, 2 + enc::kHourDims + 0) == 1.0);

  SUBCASE("one-hot blocks sum to exactly 1 on active rows, 0 on padding") {
    for (std::size_t row = 0; row < cfg.max_len; ++row) {
      double hour_sum = 0.0, dow_sum = 0.0;
      for (std::size_t h = 0; h < enc::kHourDims; ++h) hour_sum += et.features(row, 2 + h);
      for (std::size_t d = 0; d < enc::kDowDims; ++d) {
        dow_sum += et.features(row, 2 + enc::kHourDims + d);
      }
      if (row < et.true_len) {
        CHECK(hour_sum == 1.0);
        CHECK(dow_sum == 1.0);
        CHECK(et.mask[row] == 1);
      } else {
        CHECK(hour_sum == 0.0);
        CHECK(dow_sum == 0.0);
        CHECK(et.mask[row] == 0);
      }
    }
  }
  SUBCASE("overlong trajectory is rejected") {
    const auto big = traj_of({{39, 115, 0}, {39, 115, 1}, {39, 115, 2}, {39, 115, 3},
                              {39, 115, 4}});
    CHECK_THROWS_AS(enc::encode(big, cfg), std::domain_error);
  }
}

TEST_CASE("encode/decode round trip") {
  synth::SynthConfig scfg;
  scfg.n_users = 2;
  scfg.trajs_per_user = 3;
  scfg.seed = 9;
  const auto trajs = synth::generate(scfg);
  const auto cfg = enc::fit_encoder(trajs, 64);

  for (const auto& t : trajs) {
    const auto et = enc::encode(t, cfg);
    nn::Tensor offsets(cfg.max_len, 2);
    for (std::size_t i = 0; i < cfg.max_len; ++i) {
      offsets(i, 0) = et.features(i, 0);
      offsets(i, 1) = et.features(i, 1);
    }
    const auto back = enc::decode(offsets, t, cfg);
    REQUIRE(back.points.size() == t.points.size());
    for (std::size_t i = 0; i < t.points.size(); ++i) {
      CHECK(std::fabs(back.points[i].lat - t.points[i].lat) < 1e-9);
      CHECK(std::fabs(back.points[i].lon - t.points[i].lon) < 1e-9);
      CHECK(back.points[i].timestamp == t.points[i].timestamp);
    }
  }

  SUBCASE("zero offsets decode to the reference point") {
    nn::Tensor zeros(cfg.max_len, 2);
    const auto z = enc::decode(zeros, trajs[0], cfg);
    for (const auto& p : z.points) {
      CHECK(p.lat == doctest::Approx(cfg.ref.lat0));
      CHECK(p.lon == doctest::Approx(cfg.ref.lon0));
    }
    CHECK(z.points.size() == trajs[0].points.size());
  }
}

TEST_CASE("encoder config text round trip") {
  enc::EncoderConfig cfg;
  cfg.ref = {40.123456789012345, 116.98765432109876};
  cfg.scale_lat = 0.0731234567890123;
  cfg.scale_lon = 0.1171234567890123;
  cfg.max_len = 200;
  const auto back = enc::EncoderConfig::from_text(cfg.to_text());
  CHECK(back.ref.lat0 == cfg.ref.lat0);
  CHECK(back.ref.lon0 == cfg.ref.lon0);
  CHECK(back.scale_lat == cfg.scale_lat);
  CHECK(back.scale_lon == cfg.scale_lon);
  CHECK(back.max_len == cfg.max_len);
}

TEST_CASE("make_batches") {
  synth::SynthConfig scfg;
  scfg.n_users = 10;
  scfg.trajs_per_user = 10;
  scfg.len_min = 5;
  scfg.len_max = 12;
  scfg.seed = 77;
  const auto trajs = synth::generate(scfg);
  const auto cfg = enc::fit_encoder(trajs, 12);

  std::vector<mech::ProtectedPair> pairs(trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    pairs[i].original = trajs[i];
    pairs[i].protected_traj = trajs[i];
  }

  SUBCASE("batch sizes split as expected with a partial tail") {
    const auto batches = enc::make_batches(pairs, cfg, 64, 1);
    REQUIRE(batches.size() == 2);
    CHECK(batches[0].x.dim(0) == 64);
    CHECK(batches[1].x.dim(0) == 36);
  }
  SUBCASE("same epoch seed, same order") {
    const auto a = enc::make_batches(pairs, cfg, 32, 5);
    const auto b = enc::make_batches(pairs, cfg, 32, 5);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].pair_index == b[i].pair_index);
    }
    const auto c = enc::make_batches(pairs, cfg, 32, 6);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size() && !any_diff; ++i) {
      any_diff = a[i].pair_index != c[i].pair_index;
    }
    CHECK(any_diff);
  }
  SUBCASE("mask marks exactly the true length") {
    const auto batches = enc::make_batches(pairs, cfg, 16, 3);
    for (const auto& b : batches) {
      for (std::size_t r = 0; r < b.x.dim(0); ++r) {
        const auto& t = pairs[b.pair_index[r]].original;
        std::size_t ones = 0;
        for (std::size_t k = 0; k < b.mask.dim(1); ++k) {
          if (b.mask(r, k) != 0.0) ++ones;
        }
        CHECK(ones == t.points.size());
        CHECK(b.use_mse[r] == 0);
      }
    }
  }
  SUBCASE("invalid protected coordinates flag the pair for mse") {
    auto bad = pairs;
    bad[3].protected_traj.points[0].lat = 95.0;
    const auto batches = enc::make_batches(bad, cfg, 100, 0);
    bool found = false;
    for (const auto& b : batches) {
      for (std::size_t r = 0; r < b.x.dim(0); ++r) {
        if (b.pair_index[r] == 3) {
          CHECK(b.use_mse[r] == 1);
          found = true;
        }
      }
    }
    CHECK(found);
  }
}
