#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "dclr/data.hpp"

namespace fixture {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 gen(std::random_device{}());
    path_ = fs::temp_directory_path() / ("dclr_" + tag + "_" + std::to_string(gen()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

inline dclr::data::Poi poi(dclr::data::PoiId id, double lon, double lat, dclr::data::CategoryId cat) {
  return dclr::data::Poi{id, lon, lat, cat};
}

// Check-ins one hour apart starting at a Monday midnight.
inline dclr::data::Trajectory trajectory(dclr::data::UserId user, const std::vector<int>& pois,
                                         dclr::data::Timestamp start = 1672617600, dclr::data::Timestamp step = 3600) {
  dclr::data::Trajectory t{user, {}};
  for (std::size_t i = 0; i < pois.size(); ++i) {
    t.checkins.push_back({user, pois[i], start + static_cast<dclr::data::Timestamp>(i) * step});
  }
  return t;
}

// Small grid catalog: n POIs spread ~1 km apart around (lon0, lat0), categories cycling.
inline dclr::data::PoiCatalog grid_catalog(std::size_t n, std::size_t n_categories, double lon0 = 13.4,
                                           double lat0 = 52.5) {
  std::vector<dclr::data::Poi> pois;
  for (std::size_t i = 0; i < n; ++i) {
    pois.push_back(poi(static_cast<dclr::data::PoiId>(100 + i), lon0 + 0.015 * static_cast<double>(i % 6),
                       lat0 + 0.009 * static_cast<double>(i / 6),
                       static_cast<dclr::data::CategoryId>(i % n_categories)));
  }
  return dclr::data::PoiCatalog(std::move(pois));
}

}  // namespace fixture
