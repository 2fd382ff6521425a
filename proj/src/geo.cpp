#include "trajlab/geo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace trajlab::geo {

double haversine_m(const GeoPoint& a, const GeoPoint& b) {
  if (!a.valid() || !b.valid()) {
    throw std::domain_error("haversine_m: coordinates out of range");
  }
  const double phi1 = deg2rad(a.lat);
  const double phi2 = deg2rad(b.lat);
  // fabs keeps the formula bitwise symmetric in its arguments
  const double sdphi = std::sin(0.5 * deg2rad(std::fabs(b.lat - a.lat)));
  const double sdlam = std::sin(0.5 * deg2rad(std::fabs(b.lon - a.lon)));
  double h = sdphi * sdphi + std::cos(phi1) * std::cos(phi2) * sdlam * sdlam;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(h));
}

LocalPoint to_local(const ReferenceFrame& ref, const GeoPoint& p) {
  if (!GeoPoint{ref.lat0, ref.lon0}.valid() || !p.valid()) {
    throw std::domain_error("to_local: coordinates out of range");
  }
  const double c = std::cos(deg2rad(ref.lat0));
  return {kMetersPerDegree * c * (p.lon - ref.lon0),
          kMetersPerDegree * (p.lat - ref.lat0)};
}

GeoPoint to_geo(const ReferenceFrame& ref, const LocalPoint& p) {
  const double c = std::cos(deg2rad(ref.lat0));
  return {ref.lat0 + p.y / kMetersPerDegree,
          ref.lon0 + p.x / (kMetersPerDegree * c)};
}

LocalPoint polar_step(const LocalPoint& from, double distance_m, double bearing_rad) {
  if (!(distance_m >= 0.0)) {
    throw std::domain_error("polar_step: negative distance");
  }
  return {from.x + distance_m * std::cos(bearing_rad),
          from.y + distance_m * std::sin(bearing_rad)};
}

std::pair<double, double> polar_between(const LocalPoint& a, const LocalPoint& b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double d = std::hypot(dx, dy);
  if (d == 0.0) return {0.0, 0.0};
  double bearing = std::atan2(dy, dx);
  if (bearing < 0.0) bearing += 2.0 * kPi;
  if (bearing >= 2.0 * kPi) bearing = 0.0;
  return {d, bearing};
}

double angular_distance(double a, double b) {
  double d = std::fmod(std::fabs(a - b), 2.0 * kPi);
  if (d > kPi) d = 2.0 * kPi - d;
  return d;
}

}  // namespace trajlab::geo
