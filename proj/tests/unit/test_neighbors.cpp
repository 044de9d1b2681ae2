#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "dclr/errors.hpp"
#include "dclr/neighbors.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dclr;
using namespace dclr::neighbors;

namespace {

double km_between(const geo::LonLat& a, const geo::LonLat& b) { return oracle::chord_km(a.lon, a.lat, b.lon, b.lat); }

// KL with the same flooring, written out independently.
double kl_oracle(std::vector<double> a, std::vector<double> b) {
  auto fix = [](std::vector<double>& v) {
    double s = 0.0;
    for (double& x : v) s += (x = x < 1e-6 ? 1e-6 : x);
    for (double& x : v) x /= s;
  };
  fix(a);
  fix(b);
  double kl = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) kl += a[i] * (std::log(a[i]) - std::log(b[i]));
  return kl;
}

std::vector<double> random_distribution(std::size_t n, Rng& rng, bool sparse) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (double& x : p) s += (x = (sparse && u(rng) < 0.5) ? 0.0 : u(rng));
  if (s == 0.0) {
    p[0] = 1.0;
    s = 1.0;
  }
  for (double& x : p) x /= s;
  return p;
}

}  // namespace

TEST(Centroids, SinglePoiIsItsOwnCentroid) {
  const auto catalog = fixture::grid_catalog(12, 3);
  Rng rng(1);
  const auto cs = user_centroids(fixture::trajectory(7, {4, 4, 4}), catalog, 10.0, rng);
  EXPECT_EQ(cs.user, 7);
  ASSERT_EQ(cs.centroids.size(), 1u);
  EXPECT_DOUBLE_EQ(cs.centroids[0].lon, catalog[4].lon);
  EXPECT_DOUBLE_EQ(cs.centroids[0].lat, catalog[4].lat);
}

TEST(Centroids, TwoPoisNearAndFar) {
  const data::PoiCatalog catalog({fixture::poi(1, 10.0, 50.0, 0), fixture::poi(2, 10.02, 50.0, 0),
                                  fixture::poi(3, 11.0, 50.0, 0)});
  Rng rng(2);
  const auto near = user_centroids(fixture::trajectory(1, {0, 1, 0}), catalog, 10.0, rng);
  ASSERT_EQ(near.centroids.size(), 1u);
  EXPECT_NEAR(near.centroids[0].lon, 10.01, 1e-12);
  EXPECT_NEAR(near.centroids[0].lat, 50.0, 1e-12);

  auto far = user_centroids(fixture::trajectory(1, {0, 2}), catalog, 10.0, rng).centroids;
  ASSERT_EQ(far.size(), 2u);
  std::sort(far.begin(), far.end(), [](auto& a, auto& b) { return a.lon < b.lon; });
  EXPECT_EQ(far[0], (geo::LonLat{10.0, 50.0}));
  EXPECT_EQ(far[1], (geo::LonLat{11.0, 50.0}));
}

TEST(Centroids, EveryVisitCoveredWithinThreshold) {
  data::SynthConfig synth;
  synth.users = 30;
  synth.pois = 200;
  synth.clusters = 3;
  const auto d = data::generate_synthetic(synth, 5);
  Rng rng(3);
  for (double threshold : {1.0, 3.0, 10.0}) {
    for (const auto& t : d.trajectories) {
      const auto cs = user_centroids(t, d.catalog, threshold, rng);
      ASSERT_FALSE(cs.centroids.empty());
      ASSERT_LE(cs.centroids.size(), 20u);
      if (cs.centroids.size() == 20u) continue;
      for (const auto& c : t.checkins) {
        const auto& p = d.catalog[static_cast<std::size_t>(c.poi)];
        double best = 1e300;
        for (const auto& ctr : cs.centroids) best = std::min(best, km_between({p.lon, p.lat}, ctr));
        EXPECT_LE(best, threshold + 1e-9);
      }
    }
  }
}

TEST(Centroids, DeterministicForSeed) {
  const auto d = data::generate_synthetic({}, 4);
  Rng a(9), b(9);
  for (const auto& t : d.trajectories) {
    EXPECT_EQ(user_centroids(t, d.catalog, 2.0, a).centroids, user_centroids(t, d.catalog, 2.0, b).centroids);
  }
}

TEST(Categories, DistributionOfTrajectory) {
  const auto catalog = fixture::grid_catalog(12, 4);
  const auto t = fixture::trajectory(1, {0, 1, 5, 4, 8});
  EXPECT_EQ(category_counts(t, catalog), (std::vector<double>{3.0, 2.0, 0.0, 0.0}));
  EXPECT_EQ(category_distribution(t, catalog), (std::vector<double>{0.6, 0.4, 0.0, 0.0}));
  EXPECT_THROW(category_distribution(data::Trajectory{}, catalog), ContractError);
}

TEST(GeoDistance, MinimumOverCrossPairs) {
  Rng rng(5);
  std::uniform_real_distribution<double> lon(-10.0, 10.0), lat(40.0, 60.0);
  for (int trial = 0; trial < 50; ++trial) {
    CentroidSet a, b;
    for (int i = 0; i < 1 + trial % 4; ++i) a.centroids.push_back({lon(rng), lat(rng)});
    for (int i = 0; i < 1 + trial % 3; ++i) b.centroids.push_back({lon(rng), lat(rng)});
    double best = 1e300;
    for (const auto& x : a.centroids)
      for (const auto& y : b.centroids) best = std::min(best, km_between(x, y));
    EXPECT_NEAR(geo_distance(a, b), best, 1e-6);
    EXPECT_DOUBLE_EQ(geo_distance(a, b), geo_distance(b, a));
  }
  EXPECT_THROW(geo_distance({}, {0, {{0.0, 0.0}}}), ContractError);
}

TEST(CatDistance, ClosedForm) {
  EXPECT_NEAR(cat_distance({0.5, 0.5}, {0.9, 0.1}), 0.5 * std::log(25.0 / 9.0), 1e-12);
  EXPECT_NEAR(cat_distance({0.25, 0.25, 0.5}, {0.5, 0.25, 0.25}), 0.25 * std::log(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(cat_distance({0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}), 0.0);
  // Zero mass in b is floored rather than infinite.
  const double kl = cat_distance({0.5, 0.5}, {1.0, 0.0});
  EXPECT_TRUE(std::isfinite(kl));
  EXPECT_NEAR(kl, kl_oracle({0.5, 0.5}, {1.0, 0.0}), 1e-12);
  EXPECT_THROW(cat_distance({1.0}, {0.5, 0.5}), ContractError);
}

TEST(CatDistance, NonNegativeAndMatchesOracle) {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_distribution(8, rng, i % 2 == 0);
    const auto b = random_distribution(8, rng, i % 3 == 0);
    const double kl = cat_distance(a, b);
    ASSERT_GE(kl, 0.0);
    ASSERT_NEAR(kl, kl_oracle(a, b), 1e-9 * std::max(1.0, kl));
  }
}

TEST(Matrices, MatchBruteForce) {
  Rng rng(7);
  std::uniform_real_distribution<double> lon(0.0, 2.0), lat(45.0, 47.0);
  std::vector<CentroidSet> cs(9);
  std::vector<std::vector<double>> ds(9);
  for (std::size_t i = 0; i < 9; ++i) {
    for (std::size_t k = 0; k <= i % 3; ++k) cs[i].centroids.push_back({lon(rng), lat(rng)});
    ds[i] = random_distribution(5, rng, i % 2 == 1);
  }
  const auto m = build_matrices(cs, ds);
  for (Eigen::Index i = 0; i < 9; ++i) {
    EXPECT_EQ(m.geo(i, i), 0.0);
    EXPECT_EQ(m.cat(i, i), 0.0);
    for (Eigen::Index j = 0; j < 9; ++j) {
      if (i == j) continue;
      EXPECT_EQ(m.geo(i, j), m.geo(j, i));
      EXPECT_DOUBLE_EQ(m.geo(i, j), geo_distance(cs[static_cast<std::size_t>(i)], cs[static_cast<std::size_t>(j)]));
      EXPECT_NEAR(m.cat(i, j), kl_oracle(ds[static_cast<std::size_t>(i)], ds[static_cast<std::size_t>(j)]), 1e-9);
    }
  }
  EXPECT_THROW(build_matrices(cs, {}), ContractError);
}

TEST(TopQ, SortedExcludesSelfAndBreaksTiesByIndex) {
  Mat d(5, 5);
  d << 0, 3, 1, 1, 2,  //
      3, 0, 4, 4, 4,   //
      1, 4, 0, 2, 2,   //
      1, 4, 2, 0, 9,   //
      2, 4, 2, 9, 0;
  const auto s = top_q_neighbors(d, 0, 3);
  EXPECT_EQ(s.entries, (std::vector<Neighbor>{{2, 1.0}, {3, 1.0}, {4, 2.0}}));
  EXPECT_EQ(top_q_neighbors(d, 1, 10).entries.size(), 4u);
  EXPECT_EQ(top_q_neighbors(d, 1, 10, NeighborKind::kSemantic).kind, NeighborKind::kSemantic);
  EXPECT_THROW(top_q_neighbors(d, 0, 0), ContractError);
  EXPECT_THROW(top_q_neighbors(d, 5, 1), ContractError);
}

TEST(TopQ, PropertiesOnRandomMatrices) {
  Rng rng(8);
  std::uniform_int_distribution<int> v(0, 6);
  for (int trial = 0; trial < 40; ++trial) {
    const Eigen::Index n = 12;
    Mat d(n, n);
    for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = v(rng);
    const std::size_t q = 1 + static_cast<std::size_t>(trial % 11);
    for (std::size_t u = 0; u < static_cast<std::size_t>(n); ++u) {
      const auto s = top_q_neighbors(d, u, q);
      ASSERT_EQ(s.entries.size(), q);
      double worst_kept = -1.0;
      for (std::size_t k = 0; k < s.entries.size(); ++k) {
        ASSERT_NE(s.entries[k].index, u);
        if (k > 0) {
          const auto& a = s.entries[k - 1];
          const auto& b = s.entries[k];
          ASSERT_TRUE(a.distance < b.distance || (a.distance == b.distance && a.index < b.index));
        }
        worst_kept = std::max(worst_kept, s.entries[k].distance);
      }
      // Nothing left out is strictly closer than what was kept.
      for (Eigen::Index j = 0; j < n; ++j) {
        if (static_cast<std::size_t>(j) == u) continue;
        const bool kept = std::any_of(s.entries.begin(), s.entries.end(),
                                      [&](const Neighbor& e) { return e.index == static_cast<std::size_t>(j); });
        if (!kept) ASSERT_GE(d(static_cast<Eigen::Index>(u), j), worst_kept);
      }
    }
  }
}

TEST(Identify, UploadsToAssignmentsAndJsonRoundTrip) {
  data::SynthConfig synth;
  synth.users = 16;
  synth.pois = 80;
  const auto d = data::generate_synthetic(synth, 11);
  Rng rng(12);
  std::vector<Upload> uploads;
  for (const auto& t : d.trajectories) uploads.push_back(device_upload(t, d.catalog, {}, {0.1, true}, rng));
  const auto a = identify_neighbors(uploads, 4);
  ASSERT_EQ(a.size(), 16u);
  std::vector<data::UserId> users;
  for (const auto& t : d.trajectories) users.push_back(t.user);
  for (std::size_t n = 0; n < a.size(); ++n) {
    EXPECT_EQ(a[n].geo.user, n);
    EXPECT_EQ(a[n].geo.kind, NeighborKind::kGeographical);
    EXPECT_EQ(a[n].cat.kind, NeighborKind::kSemantic);
    EXPECT_EQ(a[n].geo.entries.size(), 4u);
    for (const auto& e : a[n].cat.entries) {
      EXPECT_DOUBLE_EQ(e.distance, cat_distance(uploads[n].distribution, uploads[e.index].distribution));
    }
  }
  const auto back = assignments_from_json(nlohmann::json::parse(to_json(a, users).dump()), users);
  for (std::size_t n = 0; n < a.size(); ++n) {
    EXPECT_EQ(back[n].geo, a[n].geo);
    EXPECT_EQ(back[n].cat, a[n].cat);
  }
  std::vector<data::UserId> fewer(users.begin() + 1, users.end());
  EXPECT_THROW(assignments_from_json(to_json(a, users), fewer), ArtifactError);
}

TEST(Identify, PlantedClustersBecomeGeoNeighbors) {
  data::SynthConfig synth;
  synth.users = 20;
  synth.pois = 100;
  const auto d = data::generate_synthetic(synth, 13);
  Rng rng(14);
  std::vector<Upload> uploads;
  for (const auto& t : d.trajectories) uploads.push_back(device_upload(t, d.catalog, {}, {1.0, true}, rng));
  const auto a = identify_neighbors(uploads, 5);
  const auto truth = data::synthetic_truth(synth, 13);
  std::size_t same = 0, total = 0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    for (const auto& e : a[n].geo.entries) {
      same += truth.user_cluster[n] == truth.user_cluster[e.index];
      ++total;
    }
  }
  EXPECT_GT(static_cast<double>(same) / static_cast<double>(total), 0.9);
}
