#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trajlab/dataio.hpp"
#include "trajlab/geo.hpp"
#include "trajlab/mechanisms.hpp"
#include "trajlab/nn.hpp"

namespace trajlab::enc {

inline constexpr std::size_t kHourDims = 24;
inline constexpr std::size_t kDowDims = 7;
// [lat offset, lon offset, hour one-hot, day-of-week one-hot]. Further
// categorical channels (venue categories and similar) would append as
// one-hot blocks after the day-of-week block, with matching embedding
// layers on the model side.
inline constexpr std::size_t kFeatureDims = 2 + kHourDims + kDowDims;

struct EncoderConfig {
  geo::ReferenceFrame ref;
  double scale_lat = 1.0;
  double scale_lon = 1.0;
  std::size_t max_len = 0;

  nn::CoordScaling coord_scaling() const {
    return {ref.lat0, ref.lon0, scale_lat, scale_lon};
  }
  // "lat0=... lon0=... scale_lat=... scale_lon=... max_len=..."
  std::string to_text() const;
  static EncoderConfig from_text(const std::string& line);
};

struct EncodedTrajectory {
  nn::Tensor features;             // (max_len, kFeatureDims)
  std::vector<std::uint8_t> mask;  // true for the first true_len rows
  std::size_t true_len = 0;
};

int hour_of_day_utc(std::int64_t ts);
int day_of_week_utc(std::int64_t ts);  // Monday = 0

// Reference point = bounding-box midpoint of the fitted data; scales are the
// max absolute offsets per axis (floored at 1e-9).
EncoderConfig fit_encoder(std::span<const dataio::Trajectory> trajs, std::size_t max_len);

EncodedTrajectory encode(const dataio::Trajectory& traj, const EncoderConfig& cfg);

// Unscale model offsets, add the reference, truncate to the protected length
// and reattach its ids and timestamps. offsets is rank 2 (rows >= length, 2).
dataio::Trajectory decode(const nn::Tensor& offsets, const dataio::Trajectory& protected_traj,
                          const EncoderConfig& cfg);

struct Batch {
  nn::Tensor x;       // (B, max_len, kFeatureDims), encoded protected
  nn::Tensor target;  // (B, max_len, 2), scaled offsets of originals
  nn::Tensor mask;    // (B, max_len)
  std::vector<std::uint8_t> use_mse;    // per row: protected carries invalid coords
  std::vector<std::size_t> pair_index;  // row -> index into the input span
};

// Deterministic per epoch_seed shuffle; the last partial batch is kept.
std::vector<Batch> make_batches(std::span<const mech::ProtectedPair> pairs,
                                const EncoderConfig& cfg, std::size_t batch_size,
                                std::uint64_t epoch_seed);

// True when any point is outside valid latitude/longitude ranges.
bool has_invalid_coords(const dataio::Trajectory& traj);

}  // namespace trajlab::enc
