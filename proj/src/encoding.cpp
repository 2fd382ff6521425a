#include "trajlab/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "trajlab/rng.hpp"

namespace trajlab::enc {

std::string EncoderConfig::to_text() const {
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "lat0=%.17g lon0=%.17g scale_lat=%.17g scale_lon=%.17g max_len=%zu",
                ref.lat0, ref.lon0, scale_lat, scale_lon, max_len);
  return buf;
}

EncoderConfig EncoderConfig::from_text(const std::string& line) {
  EncoderConfig cfg;
  unsigned long long ml = 0;
  if (std::sscanf(line.c_str(),
                  "lat0=%lg lon0=%lg scale_lat=%lg scale_lon=%lg max_len=%llu",
                  &cfg.ref.lat0, &cfg.ref.lon0, &cfg.scale_lat, &cfg.scale_lon,
                  &ml) != 5) {
    throw std::runtime_error("EncoderConfig: cannot parse: " + line);
  }
  cfg.max_len = static_cast<std::size_t>(ml);
  return cfg;
}

int hour_of_day_utc(std::int64_t ts) {
  if (ts < 0) throw std::domain_error("hour_of_day_utc: negative timestamp");
  return static_cast<int>((ts / 3600) % 24);
}

int day_of_week_utc(std::int64_t ts) {
  if (ts < 0) throw std::domain_error("day_of_week_utc: negative timestamp");
  // 1970-01-01 was a Thursday; Monday = 0
  return static_cast<int>((ts / 86400 + 3) % 7);
}

bool has_invalid_coords(const dataio::Trajectory& traj) {
  for (const auto& p : traj.points) {
    if (!geo::GeoPoint{p.lat, p.lon}.valid()) return true;
  }
  return false;
}

EncoderConfig fit_encoder(std::span<const dataio::Trajectory> trajs, std::size_t max_len) {
  double lat_min = 0, lat_max = 0, lon_min = 0, lon_max = 0;
  std::size_t longest = 0;
  bool any = false;
  for (const auto& t : trajs) {
    longest = std::max(longest, t.size());
    for (const auto& p : t.points) {
      if (!any) {
        lat_min = lat_max = p.lat;
        lon_min = lon_max = p.lon;
        any = true;
      } else {
        lat_min = std::min(lat_min, p.lat);
        lat_max = std::max(lat_max, p.lat);
        lon_min = std::min(lon_min, p.lon);
        lon_max = std::max(lon_max, p.lon);
      }
    }
  }
  if (!any) throw std::invalid_argument("fit_encoder: empty dataset");
  if (max_len < longest) {
    throw std::invalid_argument("fit_encoder: max_len " + std::to_string(max_len) +
                                " < longest trajectory " + std::to_string(longest));
  }
  EncoderConfig cfg;
  cfg.ref = {0.5 * (lat_min + lat_max), 0.5 * (lon_min + lon_max)};
  cfg.scale_lat = std::max(1e-9, std::max(lat_max - cfg.ref.lat0, cfg.ref.lat0 - lat_min));
  cfg.scale_lon = std::max(1e-9, std::max(lon_max - cfg.ref.lon0, cfg.ref.lon0 - lon_min));
  cfg.max_len = max_len;
  return cfg;
}

EncodedTrajectory encode(const dataio::Trajectory& traj, const EncoderConfig& cfg) {
  if (traj.size() > cfg.max_len) {
    throw std::domain_error("encode: trajectory longer than max_len");
  }
  EncodedTrajectory out;
  out.features = nn::Tensor(cfg.max_len, kFeatureDims);
  out.mask.assign(cfg.max_len, 0);
  out.true_len = traj.size();
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto& p = traj.points[i];
    out.features(i, 0) = (p.lat - cfg.ref.lat0) / cfg.scale_lat;
    out.features(i, 1) = (p.lon - cfg.ref.lon0) / cfg.scale_lon;
    out.features(i, 2 + static_cast<std::size_t>(hour_of_day_utc(p.timestamp))) = 1.0;
    out.features(i, 2 + kHourDims +
                        static_cast<std::size_t>(day_of_week_utc(p.timestamp))) = 1.0;
    out.mask[i] = 1;
  }
  return out;
}

dataio::Trajectory decode(const nn::Tensor& offsets,
                          const dataio::Trajectory& protected_traj,
                          const EncoderConfig& cfg) {
  if (offsets.rank() != 2 || offsets.dim(1) < 2 ||
      offsets.dim(0) < protected_traj.size()) {
    throw std::invalid_argument("decode: offsets shape mismatch");
  }
  dataio::Trajectory out{protected_traj.user_id, protected_traj.traj_id, {}};
  out.points.reserve(protected_traj.size());
  for (std::size_t i = 0; i < protected_traj.size(); ++i) {
    out.points.push_back({cfg.ref.lat0 + offsets(i, 0) * cfg.scale_lat,
                          cfg.ref.lon0 + offsets(i, 1) * cfg.scale_lon,
                          protected_traj.points[i].timestamp});
  }
  return out;
}

std::vector<Batch> make_batches(std::span<const mech::ProtectedPair> pairs,
                                const EncoderConfig& cfg, std::size_t batch_size,
                                std::uint64_t epoch_seed) {
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch_size 0");
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(epoch_seed);
  shuffle(order, rng);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t b_count = std::min(batch_size, order.size() - start);
    Batch batch;
    batch.x = nn::Tensor(b_count, cfg.max_len, kFeatureDims);
    batch.target = nn::Tensor(b_count, cfg.max_len, 2);
    batch.mask = nn::Tensor(b_count, cfg.max_len);
    batch.use_mse.resize(b_count);
    batch.pair_index.resize(b_count);
    for (std::size_t r = 0; r < b_count; ++r) {
      const std::size_t idx = order[start + r];
      const auto& pair = pairs[idx];
      if (pair.original.size() != pair.protected_traj.size()) {
        throw std::invalid_argument("make_batches: pair length mismatch");
      }
      const EncodedTrajectory ex = encode(pair.protected_traj, cfg);
      const EncodedTrajectory ey = encode(pair.original, cfg);
      for (std::size_t t = 0; t < cfg.max_len; ++t) {
        for (std::size_t f = 0; f < kFeatureDims; ++f) {
          batch.x(r, t, f) = ex.features(t, f);
        }
        batch.target(r, t, 0) = ey.features(t, 0);
        batch.target(r, t, 1) = ey.features(t, 1);
        batch.mask(r, t) = ex.mask[t] ? 1.0 : 0.0;
      }
      batch.use_mse[r] = has_invalid_coords(pair.protected_traj) ? 1 : 0;
      batch.pair_index[r] = idx;
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace trajlab::enc
