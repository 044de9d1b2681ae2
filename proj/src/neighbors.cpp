#include "dclr/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "dclr/errors.hpp"

namespace dclr::neighbors {
namespace {

using geo::LonLat;

std::size_t nearest(const LonLat& p, const std::vector<LonLat>& centers, double* km = nullptr) {
  std::size_t best = 0;
  double best_km = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = geo::haversine(p, centers[c]);
    if (d < best_km) {
      best_km = d;
      best = c;
    }
  }
  if (km) *km = best_km;
  return best;
}

std::vector<LonLat> seed_plus_plus(const std::vector<LonLat>& pts, std::size_t k, Rng& rng) {
  std::vector<LonLat> centers;
  std::uniform_int_distribution<std::size_t> first(0, pts.size() - 1);
  centers.push_back(pts[first(rng)]);
  std::vector<double> weight(pts.size());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double km = 0.0;
      nearest(pts[i], centers, &km);
      weight[i] = km * km;
      total += weight[i];
    }
    if (total <= 0.0) break;
    std::discrete_distribution<std::size_t> pick(weight.begin(), weight.end());
    centers.push_back(pts[pick(rng)]);
  }
  return centers;
}

std::vector<LonLat> kmeans(const std::vector<LonLat>& pts, std::size_t k, Rng& rng, const KMeansOptions& opt) {
  std::vector<LonLat> centers = seed_plus_plus(pts, k, rng);
  std::vector<std::size_t> label(pts.size(), 0);
  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    for (std::size_t i = 0; i < pts.size(); ++i) label[i] = nearest(pts[i], centers);
    std::vector<LonLat> next(centers.size(), LonLat{0.0, 0.0});
    std::vector<std::size_t> count(centers.size(), 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      next[label[i]].lon += pts[i].lon;
      next[label[i]].lat += pts[i].lat;
      ++count[label[i]];
    }
    double moved = 0.0;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (count[c] == 0) {
        next[c] = centers[c];  // empty cluster keeps its position
        continue;
      }
      next[c].lon /= static_cast<double>(count[c]);
      next[c].lat /= static_cast<double>(count[c]);
      moved = std::max({moved, std::abs(next[c].lon - centers[c].lon), std::abs(next[c].lat - centers[c].lat)});
    }
    centers = std::move(next);
    if (moved < opt.tolerance_deg) break;
  }
  return centers;
}

std::vector<double> floored(const std::vector<double>& p) {
  std::vector<double> out(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = std::max(p[i], 1e-6);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

}  // namespace

CentroidSet user_centroids(const data::Trajectory& t, const data::PoiCatalog& catalog, double threshold_km, Rng& rng,
                           const KMeansOptions& options) {
  if (t.checkins.empty()) throw ContractError("user_centroids: empty trajectory");
  std::vector<int> distinct;
  for (const auto& c : t.checkins) distinct.push_back(c.poi);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<LonLat> pts;
  pts.reserve(distinct.size());
  for (int p : distinct) pts.push_back({catalog[static_cast<std::size_t>(p)].lon, catalog[static_cast<std::size_t>(p)].lat});

  const std::size_t k_max = std::max<std::size_t>(1, std::min(pts.size(), options.max_k));
  std::vector<LonLat> centers;
  for (std::size_t k = 1; k <= k_max; ++k) {
    centers = kmeans(pts, k, rng, options);
    double worst = 0.0;
    for (const auto& p : pts) {
      double km = 0.0;
      nearest(p, centers, &km);
      worst = std::max(worst, km);
    }
    if (worst <= threshold_km) break;
  }
  return CentroidSet{t.user, std::move(centers)};
}

std::vector<double> category_counts(const data::Trajectory& t, const data::PoiCatalog& catalog) {
  std::vector<double> counts(catalog.n_categories(), 0.0);
  for (const auto& c : t.checkins) counts[static_cast<std::size_t>(catalog.category_of(c.poi))] += 1.0;
  return counts;
}

std::vector<double> category_distribution(const data::Trajectory& t, const data::PoiCatalog& catalog) {
  if (t.checkins.empty()) throw ContractError("category_distribution: empty trajectory");
  std::vector<double> p = category_counts(t, catalog);
  const double n = static_cast<double>(t.checkins.size());
  for (double& v : p) v /= n;
  return p;
}

double geo_distance(const CentroidSet& a, const CentroidSet& b) {
  if (a.centroids.empty() || b.centroids.empty()) throw ContractError("geo_distance: empty centroid set");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& x : a.centroids) {
    for (const auto& y : b.centroids) best = std::min(best, geo::haversine(x, y));
  }
  return best;
}

double cat_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw ContractError("cat_distance: distributions differ in length");
  const auto fa = floored(a);
  const auto fb = floored(b);
  double kl = 0.0;
  for (std::size_t c = 0; c < fa.size(); ++c) kl += fa[c] * std::log(fa[c] / fb[c]);
  return std::max(0.0, kl);
}

DistanceMatrices build_matrices(const std::vector<CentroidSet>& centroids,
                                const std::vector<std::vector<double>>& distributions, const ExecPolicy& policy) {
  const std::size_t n = centroids.size();
  if (distributions.size() != n) throw ContractError("build_matrices: one distribution per user required");
  const auto size = static_cast<Eigen::Index>(n);
  DistanceMatrices out{Mat::Zero(size, size), Mat::Zero(size, size)};
  for_each_index(n, policy, [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto c = static_cast<Eigen::Index>(j);
      // The lower index computes the symmetric entry so both triangles agree bitwise.
      out.geo(r, c) = i < j ? geo_distance(centroids[i], centroids[j]) : geo_distance(centroids[j], centroids[i]);
      out.cat(r, c) = cat_distance(distributions[i], distributions[j]);
    }
  });
  return out;
}

NeighborSet top_q_neighbors(const Mat& d, std::size_t n, std::size_t q, NeighborKind kind) {
  if (q < 1) throw ContractError("top_q_neighbors: q must be >= 1");
  if (d.rows() != d.cols() || n >= static_cast<std::size_t>(d.rows())) {
    throw ContractError("top_q_neighbors: bad matrix or user index");
  }
  NeighborSet out{n, kind, {}};
  for (Eigen::Index j = 0; j < d.cols(); ++j) {
    if (static_cast<std::size_t>(j) == n) continue;
    out.entries.push_back({static_cast<std::size_t>(j), d(static_cast<Eigen::Index>(n), j)});
  }
  std::sort(out.entries.begin(), out.entries.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
  });
  if (out.entries.size() > q) out.entries.resize(q);
  return out;
}

Upload device_upload(const data::Trajectory& t, const data::PoiCatalog& catalog, const UploadConfig& cfg,
                     const privacy::PrivacyBudget& budget, Rng& rng) {
  CentroidSet cs = user_centroids(t, catalog, cfg.threshold_km, rng, cfg.kmeans);
  cs.centroids = privacy::perturb_centroids(cs.centroids, budget, rng, cfg.centroid_floor_deg);
  return Upload{std::move(cs), privacy::perturb_counts(category_counts(t, catalog), budget, rng)};
}

std::vector<Assignment> identify_neighbors(const std::vector<Upload>& uploads, std::size_t q,
                                           const ExecPolicy& policy) {
  std::vector<CentroidSet> centroids;
  std::vector<std::vector<double>> distributions;
  for (const auto& u : uploads) {
    centroids.push_back(u.centroids);
    distributions.push_back(u.distribution);
  }
  const DistanceMatrices m = build_matrices(centroids, distributions, policy);
  std::vector<Assignment> out(uploads.size());
  for_each_index(uploads.size(), policy, [&](std::size_t n) {
    out[n] = Assignment{top_q_neighbors(m.geo, n, q, NeighborKind::kGeographical),
                        top_q_neighbors(m.cat, n, q, NeighborKind::kSemantic)};
  });
  return out;
}

nlohmann::json to_json(const std::vector<Assignment>& assignments, const std::vector<data::UserId>& users) {
  nlohmann::json j = nlohmann::json::object();
  auto entries = [&](const NeighborSet& s) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : s.entries) arr.push_back({users.at(e.index), e.distance});
    return arr;
  };
  for (std::size_t n = 0; n < assignments.size(); ++n) {
    j[std::to_string(users.at(n))] = {{"geo", entries(assignments[n].geo)}, {"cat", entries(assignments[n].cat)}};
  }
  return j;
}

std::vector<Assignment> assignments_from_json(const nlohmann::json& j, const std::vector<data::UserId>& users) {
  std::unordered_map<data::UserId, std::size_t> index;
  for (std::size_t i = 0; i < users.size(); ++i) index[users[i]] = i;
  auto lookup = [&](data::UserId id) {
    const auto it = index.find(id);
    if (it == index.end()) throw ArtifactError("neighbor file names unknown user " + std::to_string(id));
    return it->second;
  };
  std::vector<Assignment> out(users.size());
  for (std::size_t n = 0; n < users.size(); ++n) {
    const std::string key = std::to_string(users[n]);
    if (!j.contains(key)) throw ArtifactError("neighbor file lacks user " + key);
    const auto& entry = j.at(key);
    out[n].geo = NeighborSet{n, NeighborKind::kGeographical, {}};
    out[n].cat = NeighborSet{n, NeighborKind::kSemantic, {}};
    for (const auto& e : entry.at("geo")) out[n].geo.entries.push_back({lookup(e.at(0).get<data::UserId>()), e.at(1).get<double>()});
    for (const auto& e : entry.at("cat")) out[n].cat.entries.push_back({lookup(e.at(0).get<data::UserId>()), e.at(1).get<double>()});
  }
  return out;
}

}  // namespace dclr::neighbors
