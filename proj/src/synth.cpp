#include "trajlab/synth.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "trajlab/geo.hpp"
#include "trajlab/rng.hpp"

namespace trajlab::synth {

namespace {

void validate(const SynthConfig& cfg, double width_m, double height_m) {
  if (cfg.n_users == 0 || cfg.trajs_per_user == 0) {
    throw std::invalid_argument("synth: need at least one user and trajectory");
  }
  if (!(cfg.lat_min < cfg.lat_max) || !(cfg.lon_min < cfg.lon_max)) {
    throw std::invalid_argument("synth: degenerate bounding box");
  }
  if (!(cfg.speed_min > 0.0) || !(cfg.speed_max >= cfg.speed_min)) {
    throw std::invalid_argument("synth: speeds must be positive and ordered");
  }
  if (cfg.len_min < 2 || cfg.len_max < cfg.len_min) {
    throw std::invalid_argument("synth: bad length range");
  }
  if (cfg.sample_interval <= 0) {
    throw std::invalid_argument("synth: sample interval must be positive");
  }
  // the wall-reflection argument needs steps shorter than half the box
  const double max_step = cfg.speed_max * static_cast<double>(cfg.sample_interval);
  if (max_step >= 0.5 * std::min(width_m, height_m)) {
    throw std::invalid_argument("synth: max step " + std::to_string(max_step) +
                                " m does not fit the bounding box");
  }
}

}  // namespace

std::vector<dataio::Trajectory> generate(const SynthConfig& cfg) {
  const geo::ReferenceFrame ref{0.5 * (cfg.lat_min + cfg.lat_max),
                                0.5 * (cfg.lon_min + cfg.lon_max)};
  const geo::LocalPoint lo = geo::to_local(ref, {cfg.lat_min, cfg.lon_min});
  const geo::LocalPoint hi = geo::to_local(ref, {cfg.lat_max, cfg.lon_max});
  validate(cfg, hi.x - lo.x, hi.y - lo.y);

  std::vector<dataio::Trajectory> out;
  out.reserve(cfg.n_users * cfg.trajs_per_user);
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    for (std::size_t j = 0; j < cfg.trajs_per_user; ++j) {
      const std::uint64_t k = u * cfg.trajs_per_user + j;
      Rng rng(mix_seed(cfg.seed, k));

      const std::size_t len =
          cfg.len_min + static_cast<std::size_t>(rng.below(cfg.len_max - cfg.len_min + 1));
      std::int64_t ts = 1000000000 + static_cast<std::int64_t>(rng.below(600000000));
      geo::LocalPoint pos{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y)};
      double heading = rng.uniform(0.0, 2.0 * geo::kPi);

      dataio::Trajectory t{"u" + std::to_string(u),
                           "u" + std::to_string(u) + "_t" + std::to_string(j),
                           {}};
      t.points.reserve(len);
      const geo::GeoPoint g0 = geo::to_geo(ref, pos);
      t.points.push_back({g0.lat, g0.lon, ts});

      for (std::size_t s = 1; s < len; ++s) {
        heading += rng.normal(0.0, cfg.turn_sigma);
        const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
        const double d = speed * static_cast<double>(cfg.sample_interval);
        double cx = std::cos(heading), cy = std::sin(heading);
        geo::LocalPoint next{pos.x + d * cx, pos.y + d * cy};
        // bounce off the walls without changing the step length
        for (int attempt = 0; attempt < 8; ++attempt) {
          bool ok = true;
          if (next.x < lo.x || next.x > hi.x) {
            cx = -cx;
            ok = false;
          }
          if (next.y < lo.y || next.y > hi.y) {
            cy = -cy;
            ok = false;
          }
          if (ok) break;
          next = {pos.x + d * cx, pos.y + d * cy};
        }
        heading = std::atan2(cy, cx);
        pos = next;
        ts += cfg.sample_interval;
        const geo::GeoPoint g = geo::to_geo(ref, pos);
        t.points.push_back({g.lat, g.lon, ts});
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

}  // namespace trajlab::synth
