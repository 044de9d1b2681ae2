#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dclr::data {

using UserId = std::int64_t;
using PoiId = std::int64_t;
using CategoryId = std::int64_t;
using Timestamp = std::int64_t;  // seconds since epoch, UTC

inline constexpr int kTimeSlots = 168;
inline constexpr std::size_t kDefaultSequenceCap = 200;

struct Poi {
  PoiId id = 0;
  double lon = 0.0;
  double lat = 0.0;
  CategoryId category = 0;

  bool operator==(const Poi&) const = default;
};

// `poi` is the dense index into the owning dataset's catalog.
struct CheckIn {
  UserId user = 0;
  int poi = 0;
  Timestamp timestamp = 0;

  bool operator==(const CheckIn&) const = default;
};

struct Trajectory {
  UserId user = 0;
  std::vector<CheckIn> checkins;

  std::size_t size() const { return checkins.size(); }
  bool operator==(const Trajectory&) const = default;
};

// Public POI metadata. Categories are re-indexed densely in ascending id order.
class PoiCatalog {
 public:
  PoiCatalog() = default;
  explicit PoiCatalog(std::vector<Poi> pois);

  std::size_t size() const { return pois_.size(); }
  const Poi& operator[](std::size_t i) const { return pois_[i]; }
  std::span<const Poi> pois() const { return pois_; }

  std::optional<int> find(PoiId id) const;
  std::size_t n_categories() const { return categories_.size(); }
  const std::vector<CategoryId>& categories() const { return categories_; }
  // Dense category index of POI `poi`.
  int category_of(int poi) const { return category_index_[static_cast<std::size_t>(poi)]; }

  bool operator==(const PoiCatalog& other) const { return pois_ == other.pois_; }

 private:
  std::vector<Poi> pois_;
  std::vector<CategoryId> categories_;
  std::vector<int> category_index_;
  std::unordered_map<PoiId, int> by_id_;
};

struct Dataset {
  PoiCatalog catalog;
  std::vector<Trajectory> trajectories;  // one per user, ascending user id

  std::size_t n_users() const { return trajectories.size(); }
  std::size_t n_pois() const { return catalog.size(); }
  std::size_t n_categories() const { return catalog.n_categories(); }
  std::size_t n_checkins() const;

  bool operator==(const Dataset&) const = default;
};

Dataset load_checkins(const std::filesystem::path& checkin_file,
                      const std::filesystem::path& poi_file);
void write_checkins(const Dataset& d, const std::filesystem::path& checkin_file,
                    const std::filesystem::path& poi_file);

// Iterated removal of sparse users and POIs until a fixed point.
Dataset filter_sparse(const Dataset& d, std::size_t min_user_checkins, std::size_t min_poi_visits);

struct Split {
  Dataset train;
  std::vector<CheckIn> test;  // test[i] belongs to train.trajectories[i]
};

// Caps each trajectory to its most recent `seq_cap` check-ins, then holds out
// the last one.
Split split_leave_one_out(const Dataset& d, std::size_t seq_cap = kDefaultSequenceCap);

// Hour-of-week slot, Monday 00:00 UTC = 0.
int discretize_time(Timestamp t);

struct SynthConfig {
  std::size_t users = 50;
  std::size_t pois = 300;
  std::size_t categories = 10;
  std::size_t clusters = 2;
  std::size_t profiles = 5;
  std::size_t checkins_per_user = 40;
  double cluster_radius_km = 5.0;
  double mean_gap_hours = 6.0;
  double off_profile_weight = 0.03;  // relative weight of categories outside the user's profile
  double popularity_sigma = 1.0;  // log-scale spread of POI popularity
  double revisit_weight = 1.0;  // applied to a POI's weight once the user has visited it
  std::uint64_t seed = 0;  // read from config files; generate_synthetic takes its seed explicitly
};

SynthConfig load_synth_config(const std::filesystem::path& file);

// Planted structure: user u lives in cluster u % clusters and follows
// category profile (u / clusters) % profiles.
Dataset generate_synthetic(const SynthConfig& cfg, std::uint64_t seed);

struct SyntheticTruth {
  std::vector<std::pair<double, double>> centers;  // (lon, lat)
  std::vector<std::size_t> user_cluster;
  std::vector<std::size_t> user_profile;
};
SyntheticTruth synthetic_truth(const SynthConfig& cfg, std::uint64_t seed);

}  // namespace dclr::data
