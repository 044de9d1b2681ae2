#include "dclr/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dclr::geo {
namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
}

double haversine(LonLat a, LonLat b) {
  const double lat1 = a.lat * kDeg;
  const double lat2 = b.lat * kDeg;
  const double dlat = lat2 - lat1;
  const double dlon = (b.lon - a.lon) * kDeg;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  double h = s1 * s1 + std::cos(lat1) * std::cos(lat2) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

LonLat destination(LonLat origin, double bearing_rad, double km) {
  const double delta = km / kEarthRadiusKm;
  const double lat1 = origin.lat * kDeg;
  const double lon1 = origin.lon * kDeg;
  const double lat2 = std::asin(std::sin(lat1) * std::cos(delta) +
                                std::cos(lat1) * std::sin(delta) * std::cos(bearing_rad));
  const double lon2 = lon1 + std::atan2(std::sin(bearing_rad) * std::sin(delta) * std::cos(lat1),
                                        std::cos(delta) - std::sin(lat1) * std::sin(lat2));
  double lon = lon2 / kDeg;
  lon = std::fmod(lon + 540.0, 360.0) - 180.0;
  return {lon, lat2 / kDeg};
}

}  // namespace dclr::geo
