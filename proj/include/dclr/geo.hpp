#pragma once

namespace dclr::geo {

inline constexpr double kEarthRadiusKm = 6371.0;

struct LonLat {
  double lon = 0.0;  // degrees
  double lat = 0.0;  // degrees

  bool operator==(const LonLat&) const = default;
};

// Great-circle distance in km.
double haversine(LonLat a, LonLat b);

// Point reached travelling `km` from `origin` on initial bearing `bearing_rad`.
LonLat destination(LonLat origin, double bearing_rad, double km);

}  // namespace dclr::geo
