#include "dclr/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dclr/errors.hpp"

namespace dclr::privacy {

double laplace_sample(double b, Rng& rng) {
  if (!(b > 0.0)) throw ContractError("laplace_sample: scale must be > 0");
  // u in (-1/2, 1/2); the open interval keeps log finite.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng);
  while (u == 0.0) u = unit(rng);
  u -= 0.5;
  const double sign = u < 0.0 ? -1.0 : 1.0;
  return -b * sign * std::log1p(-2.0 * std::abs(u));
}

double centroid_sensitivity(const std::vector<geo::LonLat>& centroids, double floor) {
  if (centroids.size() < 2) return floor;
  double best = 0.0;
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    for (std::size_t j = i + 1; j < centroids.size(); ++j) {
      best = std::max(best, std::abs(centroids[i].lon - centroids[j].lon) +
                                std::abs(centroids[i].lat - centroids[j].lat));
    }
  }
  return best > 0.0 ? best : floor;
}

std::vector<geo::LonLat> perturb_centroids(const std::vector<geo::LonLat>& centroids, const PrivacyBudget& budget,
                                           Rng& rng, double floor) {
  if (centroids.empty()) throw ContractError("perturb_centroids: empty centroid set");
  if (!budget.enabled) return centroids;
  if (!(budget.epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  const double b = centroid_sensitivity(centroids, floor) / budget.epsilon;
  std::vector<geo::LonLat> out;
  out.reserve(centroids.size());
  for (const auto& c : centroids) {
    double lon = c.lon + laplace_sample(b, rng);
    double lat = c.lat + laplace_sample(b, rng);
    lon = std::fmod(lon + 180.0, 360.0);
    if (lon < 0.0) lon += 360.0;
    out.push_back({lon - 180.0, std::clamp(lat, -90.0, 90.0)});
  }
  return out;
}

std::vector<double> perturb_counts(const std::vector<double>& counts, const PrivacyBudget& budget, Rng& rng) {
  if (counts.empty()) throw ContractError("perturb_counts: empty count vector");
  for (double c : counts) {
    if (!(c >= 0.0)) throw ContractError("perturb_counts: counts must be >= 0");
  }
  std::vector<double> noisy = counts;
  if (budget.enabled) {
    if (!(budget.epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    for (double& c : noisy) c = std::max(0.0, c + laplace_sample(1.0 / budget.epsilon, rng));
  }
  double total = 0.0;
  for (double c : noisy) total += c;
  if (total <= 0.0) return std::vector<double>(counts.size(), 1.0 / static_cast<double>(counts.size()));
  for (double& c : noisy) c /= total;
  return noisy;
}

double weight_noise_scale(const numerics::ParamStore& p, const PrivacyBudget& budget, std::size_t n_pos) {
  if (n_pos < 1) throw ContractError("weight_noise_scale: n_pos must be >= 1");
  if (!budget.enabled) return 0.0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& [_, m] : p.entries()) {
    if (m.size() == 0) continue;
    lo = std::min(lo, m.minCoeff());
    hi = std::max(hi, m.maxCoeff());
  }
  if (!(hi >= lo)) return 0.0;
  return 2.0 * (hi - lo) / (static_cast<double>(n_pos) * budget.epsilon);
}

recommender::CoreParams perturb_weights(const recommender::CoreParams& p, const PrivacyBudget& budget,
                                        std::size_t n_pos, Rng& rng) {
  const double b = weight_noise_scale(p.store(), budget, n_pos);
  if (b == 0.0) return p;
  numerics::ParamStore out = p.store();
  for (const auto& [name, m] : p.store().entries()) {
    Mat& dst = out.mutable_at(name);
    for (Eigen::Index i = 0; i < dst.size(); ++i) dst.data()[i] += laplace_sample(b, rng);
  }
  return recommender::CoreParams(std::move(out));
}

}  // namespace dclr::privacy
