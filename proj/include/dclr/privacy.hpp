#pragma once

#include <vector>

#include "dclr/geo.hpp"
#include "dclr/numerics.hpp"
#include "dclr/recommender.hpp"

namespace dclr::privacy {

struct PrivacyBudget {
  double epsilon = 0.1;
  bool enabled = true;
};

// Inverse-CDF draw from Laplace(0, b) using one uniform variate.
double laplace_sample(double b, Rng& rng);

// Sum of |dlon| + |dlat| for the farthest pair of centroids; `floor` when
// there is a single centroid.
double centroid_sensitivity(const std::vector<geo::LonLat>& centroids, double floor);

// Adds Laplace(sensitivity / epsilon) to every coordinate. Outputs are mapped
// back onto the sphere (latitude clamped, longitude wrapped).
std::vector<geo::LonLat> perturb_centroids(const std::vector<geo::LonLat>& centroids, const PrivacyBudget& budget,
                                           Rng& rng, double floor = 0.01);

// Adds Laplace(1 / epsilon) to each count, clamps at zero and normalizes.
// Falls back to uniform when every count clamps to zero.
std::vector<double> perturb_counts(const std::vector<double>& counts, const PrivacyBudget& budget, Rng& rng);

// 2 * eta / (n_pos * epsilon), eta = max - min over every scalar in `p`.
double weight_noise_scale(const numerics::ParamStore& p, const PrivacyBudget& budget, std::size_t n_pos);

recommender::CoreParams perturb_weights(const recommender::CoreParams& p, const PrivacyBudget& budget,
                                        std::size_t n_pos, Rng& rng);

}  // namespace dclr::privacy
