#pragma once

#include <utility>

namespace trajlab::geo {

// IUGG mean Earth radius, meters.
inline constexpr double kEarthRadiusM = 6371008.8;
// Average meters between two degrees of latitude; also scales the
// longitude axis of the local projection (times cos lat0).
inline constexpr double kMetersPerDegree = 111319.44;
inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * (kPi / 180.0); }
inline double rad2deg(double r) { return r * (180.0 / kPi); }

struct GeoPoint {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees
  bool valid() const {
    return lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0;
  }
};

struct LocalPoint {
  double x = 0.0;  // meters east of reference
  double y = 0.0;  // meters north of reference
};

// Central point of a dataset; fixed for the lifetime of an experiment.
struct ReferenceFrame {
  double lat0 = 0.0;
  double lon0 = 0.0;
};

// Great-circle distance on a sphere of radius kEarthRadiusM.
// Throws std::domain_error on invalid coordinates.
double haversine_m(const GeoPoint& a, const GeoPoint& b);

// Flat projection x = 111319.44*cos(lat0)*(lon-lon0), y = 111319.44*(lat-lat0),
// lat0 in radians inside the cosine.
LocalPoint to_local(const ReferenceFrame& ref, const GeoPoint& p);

// Algebraic inverse of to_local. The result may carry out-of-range
// coordinates; callers check valid() instead of receiving a clamped point.
GeoPoint to_geo(const ReferenceFrame& ref, const LocalPoint& p);

// (x + d*cos(bearing), y + d*sin(bearing)); bearing counter-clockwise from +x.
// Throws std::domain_error for negative distance.
LocalPoint polar_step(const LocalPoint& from, double distance_m, double bearing_rad);

// Inverse of polar_step: returns (distance, bearing) with bearing in [0, 2*pi)
// and bearing 0 when the points coincide.
std::pair<double, double> polar_between(const LocalPoint& a, const LocalPoint& b);

// Smaller of the two arc distances between angles, in [0, pi].
double angular_distance(double a, double b);

}  // namespace trajlab::geo
