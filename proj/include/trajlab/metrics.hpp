#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajlab/dataio.hpp"
#include "trajlab/geo.hpp"

namespace trajlab::metrics {

// Per-trajectory distances between original/protected (OP) and
// original/reconstructed (OR), plus convex-hull Jaccard indices.
struct EvalRecord {
  std::string traj_id;
  double op_euclid = 0.0;
  double or_euclid = 0.0;
  double op_hausdorff = 0.0;
  double or_hausdorff = 0.0;
  double jaccard_before = 0.0;
  double jaccard_after = 0.0;
};

struct Summary {
  double mean_euclid_reduction_pct = 0.0;
  double mean_hausdorff_reduction_pct = 0.0;
  double mean_jaccard_before = 0.0;
  double mean_jaccard_after = 0.0;
  double ci99_euclid = 0.0;     // +- percentage points
  double ci99_hausdorff = 0.0;  // +- percentage points
  std::size_t n = 0;
  std::size_t excluded_zero_op = 0;  // records with OP distance 0, left out of means
};

// Mean of index-paired haversine distances; lengths must match.
double mean_euclidean(const dataio::Trajectory& a, const dataio::Trajectory& b);

// Exact symmetric Hausdorff distance in meters, O(n*m).
double hausdorff(const dataio::Trajectory& a, const dataio::Trajectory& b);

// Andrew's monotone chain; counter-clockwise vertices, collinear points
// excluded. Degenerate inputs yield a chain with zero area.
std::vector<geo::LocalPoint> convex_hull(std::vector<geo::LocalPoint> points);

// Shoelace area, orientation-insensitive.
double polygon_area(std::span<const geo::LocalPoint> poly);

// Sutherland-Hodgman clip of a convex subject against a convex CCW clip
// polygon; empty when either is degenerate.
std::vector<geo::LocalPoint> convex_clip(std::span<const geo::LocalPoint> subject,
                                         std::span<const geo::LocalPoint> clip);

// Jaccard index of the two trajectories' convex hulls in projected meters.
double jaccard_hulls(const dataio::Trajectory& a, const dataio::Trajectory& b,
                     const geo::ReferenceFrame& ref);

// (op - or) / |op| * 100; empty when op == 0.
std::optional<double> pct_reduction(double op, double or_);

Summary summarize(std::span<const EvalRecord> records);

void write_records_csv(std::span<const EvalRecord> records, std::ostream& out);

// One result-table row per experiment; creates the header when the file is
// new. Columns mirror the evaluation table layout.
void append_result_row(const std::string& path, const std::string& id,
                       const std::string& dataset_train, const std::string& dataset_test,
                       const std::string& mech_train, const std::string& mech_test,
                       double eps_train, double eps_test, const Summary& s);

inline constexpr char kResultHeader[] =
    "id,dataset_train,dataset_test,mech_train,mech_test,eps_train,eps_test,"
    "euclid_reduction_pct,hausdorff_reduction_pct,jaccard_before,jaccard_after";

}  // namespace trajlab::metrics
