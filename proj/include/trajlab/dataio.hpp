#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajlab::dataio {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RawPoint {
  double lat = 0.0;
  double lon = 0.0;
  std::int64_t timestamp = 0;  // unix seconds, UTC
};

struct Trajectory {
  std::string user_id;
  std::string traj_id;
  std::vector<RawPoint> points;

  std::size_t size() const { return points.size(); }
};

struct PreprocessConfig {
  double bbox_percentile = 0.99;
  double max_speed_mps = 25.0;
  std::int64_t gap_seconds = 660;
  std::size_t min_len = 10;
  std::size_t max_len = 100;
};

// Sanitization parameters for the two raw corpora: 99% box, 90 km/h,
// 11 min gap, 10..100 points (T-Drive); 95% box, 100 km/h, 20 s gap,
// 10..200 points (GeoLife).
inline PreprocessConfig tdrive_preprocess_config() {
  return {0.99, 25.0, 660, 10, 100};
}
inline PreprocessConfig geolife_preprocess_config() {
  return {0.95, 27.78, 20, 10, 200};
}

struct BBox {
  double lat_lo = 0.0, lat_hi = 0.0;
  double lon_lo = 0.0, lon_hi = 0.0;
  bool contains(double lat, double lon) const {
    return lat >= lat_lo && lat <= lat_hi && lon >= lon_lo && lon <= lon_hi;
  }
};

struct StageCount {
  std::string stage;
  std::size_t kept = 0;     // points surviving the stage
  std::size_t dropped = 0;  // points removed by the stage
};

struct PreprocessSummary {
  std::vector<StageCount> stages;
  BBox bbox{};
  // "stage=<name> kept=<n> dropped=<m>" per line
  std::string to_text() const;
};

// Civil UTC date/time to unix seconds (proleptic Gregorian).
std::int64_t civil_to_epoch(int year, int month, int day, int hour, int minute, int second);

// "taxi_id,YYYY-MM-DD HH:MM:SS,longitude,latitude" lines; one trajectory per
// taxi id, points sorted by timestamp. Malformed lines are skipped; more than
// half malformed raises FormatError.
std::vector<Trajectory> parse_tdrive(std::istream& in);

// Per-user directories of PLT files (6 header lines, then
// "lat,lon,0,altitude,days,date,time"); one trajectory per file.
std::vector<Trajectory> parse_geolife(const std::filesystem::path& root);

// Empirical per-axis quantile bounds at levels (1-q)/2 and (1+q)/2,
// nearest-rank on the sorted values.
BBox bbox_quantiles(std::span<const Trajectory> trajs, double percentile);

// Drops points outside the per-axis quantile box; trajectories emptied by the
// filter disappear. The applied box is written to *box_out when non-null.
std::vector<Trajectory> filter_bbox(const std::vector<Trajectory>& trajs,
                                    double percentile, BBox* box_out = nullptr);

// Same (timestamp, location): keep first. Same timestamp, different location:
// keep the point with the smaller distance to its neighbors.
Trajectory dedupe(const Trajectory& traj);

// Forward pass dropping points faster than max_speed_mps relative to the
// last kept point.
Trajectory filter_speed(const Trajectory& traj, double max_speed_mps);

// Cuts between points whose time delta exceeds gap_seconds (strictly);
// segment ids are "<traj_id>_<k>".
std::vector<Trajectory> split_by_gap(const Trajectory& traj, std::int64_t gap_seconds);

std::vector<Trajectory> filter_length(const std::vector<Trajectory>& trajs,
                                      std::size_t min_len, std::size_t max_len);

// bbox -> dedupe -> speed -> split -> length
std::vector<Trajectory> preprocess(const std::vector<Trajectory>& trajs,
                                   const PreprocessConfig& cfg,
                                   PreprocessSummary* summary = nullptr);

// Canonical CSV: "user_id,traj_id,latitude,longitude,timestamp",
// lat/lon at 7 decimal places.
void write_canonical(std::span<const Trajectory> trajs, std::ostream& out);
std::vector<Trajectory> read_canonical(std::istream& in);
void write_canonical_file(std::span<const Trajectory> trajs, const std::filesystem::path& path);
std::vector<Trajectory> read_canonical_file(const std::filesystem::path& path);

std::size_t total_points(std::span<const Trajectory> trajs);

}  // namespace trajlab::dataio
