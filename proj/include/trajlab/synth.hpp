#pragma once

#include <cstdint>
#include <vector>

#include "trajlab/dataio.hpp"

namespace trajlab::synth {

// Correlated random walk generator; stands in for the real corpora at desk
// scale so downstream tests run self-contained.
struct SynthConfig {
  std::size_t n_users = 10;
  std::size_t trajs_per_user = 10;
  std::size_t len_min = 10;
  std::size_t len_max = 60;
  double lat_min = 39.9, lat_max = 40.08;
  double lon_min = 116.0, lon_max = 116.2346;
  double speed_min = 5.0, speed_max = 25.0;  // m/s
  std::int64_t sample_interval = 30;         // seconds
  double turn_sigma = 0.3;                   // radians per step
  std::uint64_t seed = 1;
};

// Deterministic given cfg.seed; each trajectory draws from its own
// sub-seeded stream, so generation order is irrelevant.
std::vector<dataio::Trajectory> generate(const SynthConfig& cfg);

}  // namespace trajlab::synth
