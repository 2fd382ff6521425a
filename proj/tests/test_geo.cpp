#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "oracles.hpp"
#include "trajlab/geo.hpp"
#include "trajlab/rng.hpp"

using namespace trajlab;

TEST_CASE("haversine identity and oracle values") {
  CHECK(geo::haversine_m({40.0, 116.0}, {40.0, 116.0}) == 0.0);

  // one degree of longitude on the equator
  const double d = geo::haversine_m({0.0, 0.0}, {0.0, 1.0});
  const double expected = static_cast<double>(oracles::great_circle_m(0, 0, 0, 1));
  CHECK(d == doctest::Approx(111195.08).epsilon(1e-6));
  CHECK(std::fabs(d - expected) / expected < 1e-9);

  const double d2 = geo::haversine_m({39.2, 117.34}, {40.0, 115.0});
  const double e2 =
      static_cast<double>(oracles::great_circle_m(39.2L, 117.34L, 40.0L, 115.0L));
  CHECK(std::fabs(d2 - e2) / e2 < 1e-9);
}

TEST_CASE("haversine symmetry and positivity on random pairs") {
  Rng rng(42);
  for (int i = 0; i < 500; ++i) {
    const geo::GeoPoint a{rng.uniform(-80, 80), rng.uniform(-179, 179)};
    const geo::GeoPoint b{rng.uniform(-80, 80), rng.uniform(-179, 179)};
    const double ab = geo::haversine_m(a, b);
    const double ba = geo::haversine_m(b, a);
    CHECK(ab == ba);
    if (a.lat != b.lat || a.lon != b.lon) CHECK(ab > 0.0);
  }
}

TEST_CASE("haversine rejects invalid coordinates") {
  CHECK_THROWS_AS(geo::haversine_m({91.0, 0.0}, {0.0, 0.0}), std::domain_error);
  CHECK_THROWS_AS(geo::haversine_m({0.0, 0.0}, {0.0, 181.0}), std::domain_error);
}

TEST_CASE("to_local matches the projection formula") {
  const geo::ReferenceFrame ref{40.0, 116.0};

  const geo::LocalPoint origin = geo::to_local(ref, {40.0, 116.0});
  CHECK(origin.x == 0.0);
  CHECK(origin.y == 0.0);

  const geo::LocalPoint north = geo::to_local(ref, {41.0, 116.0});
  CHECK(north.x == 0.0);
  CHECK(north.y == doctest::Approx(111319.44).epsilon(1e-12));

  const geo::LocalPoint east = geo::to_local(ref, {40.0, 117.0});
  CHECK(east.x ==
        doctest::Approx(111319.44 * std::cos(40.0 * geo::kPi / 180.0)).epsilon(1e-12));
  CHECK(east.y == 0.0);
}

TEST_CASE("to_geo inverts to_local") {
  const geo::ReferenceFrame ref{40.0, 116.0};
  const geo::GeoPoint back = geo::to_geo(ref, {0.0, 111319.44});
  CHECK(back.lat == doctest::Approx(41.0).epsilon(1e-12));
  CHECK(back.lon == doctest::Approx(116.0).epsilon(1e-12));

  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const geo::GeoPoint p{rng.uniform(39.0, 41.0), rng.uniform(115.0, 117.0)};
    const geo::GeoPoint rt = geo::to_geo(ref, geo::to_local(ref, p));
    CHECK(std::fabs(rt.lat - p.lat) < 1e-9);
    CHECK(std::fabs(rt.lon - p.lon) < 1e-9);
  }
}

TEST_CASE("to_geo flags out-of-range results instead of clamping") {
  const geo::GeoPoint far = geo::to_geo({0.0, 0.0}, {0.0, 1.2e13});
  CHECK_FALSE(far.valid());
  CHECK(far.lat > 90.0);
}

TEST_CASE("local projection approximates haversine near the reference") {
  const geo::ReferenceFrame ref{40.0, 116.0};
  Rng rng(11);
  for (int i = 0; i < 300; ++i) {
    const geo::GeoPoint a{rng.uniform(39.96, 40.04), rng.uniform(115.95, 116.05)};
    const geo::GeoPoint b{rng.uniform(39.96, 40.04), rng.uniform(115.95, 116.05)};
    const double h = geo::haversine_m(a, b);
    if (h < 1.0) continue;  // relative comparison needs some distance
    const geo::LocalPoint la = geo::to_local(ref, a);
    const geo::LocalPoint lb = geo::to_local(ref, b);
    const double e = std::hypot(la.x - lb.x, la.y - lb.y);
    CHECK(std::fabs(h - e) / h < 0.01);
  }
}

TEST_CASE("polar_step basics") {
  const geo::LocalPoint o{0.0, 0.0};
  const geo::LocalPoint same = geo::polar_step(o, 0.0, 2.1);
  CHECK(same.x == 0.0);
  CHECK(same.y == 0.0);

  const geo::LocalPoint east = geo::polar_step(o, 1.0, 0.0);
  CHECK(east.x == doctest::Approx(1.0));
  CHECK(east.y == doctest::Approx(0.0));

  const geo::LocalPoint up = geo::polar_step({3.0, 4.0}, 5.0, geo::kPi / 2.0);
  CHECK(up.x == doctest::Approx(3.0));
  CHECK(up.y == doctest::Approx(9.0));

  CHECK_THROWS_AS(geo::polar_step(o, -1.0, 0.0), std::domain_error);
}

TEST_CASE("polar_between basics and round trip") {
  auto [d1, b1] = geo::polar_between({0, 0}, {1, 0});
  CHECK(d1 == doctest::Approx(1.0));
  CHECK(b1 == doctest::Approx(0.0));

  auto [d2, b2] = geo::polar_between({0, 0}, {0, -2});
  CHECK(d2 == doctest::Approx(2.0));
  CHECK(b2 == doctest::Approx(3.0 * geo::kPi / 2.0));

  auto [d0, b0] = geo::polar_between({5, 5}, {5, 5});
  CHECK(d0 == 0.0);
  CHECK(b0 == 0.0);

  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const geo::LocalPoint a{rng.uniform(-1e4, 1e4), rng.uniform(-1e4, 1e4)};
    const geo::LocalPoint b{rng.uniform(-1e4, 1e4), rng.uniform(-1e4, 1e4)};
    const auto [d, theta] = geo::polar_between(a, b);
    CHECK(theta >= 0.0);
    CHECK(theta < 2.0 * geo::kPi);
    const geo::LocalPoint back = geo::polar_step(a, d, theta);
    CHECK(std::fabs(back.x - b.x) < 1e-9);
    CHECK(std::fabs(back.y - b.y) < 1e-9);
  }
}

TEST_CASE("angular_distance wraps correctly") {
  CHECK(geo::angular_distance(0.1, 0.1) == 0.0);
  CHECK(geo::angular_distance(0.0, geo::kPi) == doctest::Approx(geo::kPi));
  CHECK(geo::angular_distance(0.1, 2.0 * geo::kPi - 0.1) == doctest::Approx(0.2));
  CHECK(geo::angular_distance(-0.3, 0.3) == doctest::Approx(0.6));
}
