#pragma once

#include <vector>

#include <json.hpp>

#include "dclr/data.hpp"
#include "dclr/geo.hpp"
#include "dclr/numerics.hpp"
#include "dclr/parallel.hpp"
#include "dclr/privacy.hpp"

namespace dclr::neighbors {

struct CentroidSet {
  data::UserId user = 0;
  std::vector<geo::LonLat> centroids;
};

struct KMeansOptions {
  double tolerance_deg = 1e-6;
  int max_iterations = 100;
  std::size_t max_k = 20;
};

// Smallest k (k-means, k-means++ seeding) such that every distinct visited POI
// lies within threshold_km of its nearest centroid; k stops at
// min(#distinct POIs, max_k).
CentroidSet user_centroids(const data::Trajectory& t, const data::PoiCatalog& catalog, double threshold_km, Rng& rng,
                           const KMeansOptions& options = {});

std::vector<double> category_counts(const data::Trajectory& t, const data::PoiCatalog& catalog);
std::vector<double> category_distribution(const data::Trajectory& t, const data::PoiCatalog& catalog);

// Minimum Haversine distance over all cross pairs of centroids.
double geo_distance(const CentroidSet& a, const CentroidSet& b);

// KL(a || b) in nats after flooring both at 1e-6 and renormalizing.
double cat_distance(const std::vector<double>& a, const std::vector<double>& b);

struct DistanceMatrices {
  Mat geo;  // symmetric, zero diagonal
  Mat cat;  // zero diagonal; row n holds d_cat(u_n, .)
};

DistanceMatrices build_matrices(const std::vector<CentroidSet>& centroids,
                                const std::vector<std::vector<double>>& distributions,
                                const ExecPolicy& policy = ExecPolicy::serial());

enum class NeighborKind { kGeographical, kSemantic };

struct Neighbor {
  std::size_t index = 0;  // dense user index
  double distance = 0.0;

  bool operator==(const Neighbor&) const = default;
};

struct NeighborSet {
  std::size_t user = 0;
  NeighborKind kind = NeighborKind::kGeographical;
  std::vector<Neighbor> entries;  // ascending distance, ties by index

  bool operator==(const NeighborSet&) const = default;
};

NeighborSet top_q_neighbors(const Mat& d, std::size_t n, std::size_t q,
                            NeighborKind kind = NeighborKind::kGeographical);

// What a device sends to the server: privacy-perturbed summaries only.
struct Upload {
  CentroidSet centroids;
  std::vector<double> distribution;
};

struct UploadConfig {
  double threshold_km = 10.0;
  double centroid_floor_deg = 0.01;
  KMeansOptions kmeans;
};

Upload device_upload(const data::Trajectory& t, const data::PoiCatalog& catalog, const UploadConfig& cfg,
                     const privacy::PrivacyBudget& budget, Rng& rng);

struct Assignment {
  NeighborSet geo;
  NeighborSet cat;
};

std::vector<Assignment> identify_neighbors(const std::vector<Upload>& uploads, std::size_t q,
                                           const ExecPolicy& policy = ExecPolicy::serial());

// {"<user id>": {"geo": [[id, km], ...], "cat": [[id, nats], ...]}}
nlohmann::json to_json(const std::vector<Assignment>& assignments, const std::vector<data::UserId>& users);
std::vector<Assignment> assignments_from_json(const nlohmann::json& j, const std::vector<data::UserId>& users);

}  // namespace dclr::neighbors
