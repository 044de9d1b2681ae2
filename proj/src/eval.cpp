#include "dclr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "dclr/errors.hpp"
#include "dclr/geo.hpp"

namespace dclr::eval {

std::vector<int> candidate_set(const recommender::SequenceContext& train, const data::CheckIn& truth,
                               const data::PoiCatalog& catalog, std::size_t n_cand) {
  if (train.size() == 0) throw ContractError("candidate_set: empty training sequence");
  const std::unordered_set<int> visited(train.pois.begin(), train.pois.end());
  const auto& last = catalog[static_cast<std::size_t>(train.pois.back())];
  const geo::LonLat origin{last.lon, last.lat};

  std::vector<std::pair<double, int>> pool;
  for (std::size_t p = 0; p < catalog.size(); ++p) {
    const int poi = static_cast<int>(p);
    if (poi == truth.poi || visited.count(poi)) continue;
    pool.push_back({geo::haversine(origin, {catalog[p].lon, catalog[p].lat}), poi});
  }
  const std::size_t take = std::min(n_cand, pool.size());
  auto by_distance = [&](const std::pair<double, int>& a, const std::pair<double, int>& b) {
    return a.first < b.first ||
           (a.first == b.first && catalog[static_cast<std::size_t>(a.second)].id <
                                      catalog[static_cast<std::size_t>(b.second)].id);
  };
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end(), by_distance);

  std::vector<int> out{truth.poi};
  for (std::size_t i = 0; i < take; ++i) out.push_back(pool[i].second);
  return out;
}

std::size_t rank_truth(const Eigen::VectorXd& scores, std::size_t truth_index) {
  if (truth_index >= static_cast<std::size_t>(scores.size())) throw ContractError("rank_truth: index out of range");
  if (!scores.allFinite()) throw NumericError("scores", "rank_truth: non-finite score");
  const double t = scores(static_cast<Eigen::Index>(truth_index));
  std::size_t rank = 1;
  for (Eigen::Index j = 0; j < scores.size(); ++j) {
    if (static_cast<std::size_t>(j) != truth_index && scores(j) >= t) ++rank;
  }
  return rank;
}

double hr_at_k(std::size_t rank, int k) {
  if (rank < 1 || k < 1) throw ContractError("hr_at_k: rank and k must be >= 1");
  return rank <= static_cast<std::size_t>(k) ? 1.0 : 0.0;
}

double ndcg_at_k(std::size_t rank, int k) {
  if (rank < 1 || k < 1) throw ContractError("ndcg_at_k: rank and k must be >= 1");
  return rank <= static_cast<std::size_t>(k) ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

MetricsReport evaluate_cases(std::span<const EvalCase> cases, const Scorer& scorer, std::span<const int> ks,
                             const ExecPolicy& policy) {
  MetricsReport r;
  r.ks.assign(ks.begin(), ks.end());
  r.users.resize(cases.size());
  for_each_index(cases.size(), policy, [&](std::size_t i) {
    const Eigen::VectorXd s = scorer(i, cases[i].candidates);
    if (static_cast<std::size_t>(s.size()) != cases[i].candidates.size()) {
      throw ContractError("evaluate: scorer returned the wrong number of scores");
    }
    UserMetrics& u = r.users[i];
    u.user = cases[i].user;
    u.rank = rank_truth(s, 0);
    for (int k : ks) {
      u.hr[k] = hr_at_k(u.rank, k);
      u.ndcg[k] = ndcg_at_k(u.rank, k);
    }
  });
  for (int k : ks) {
    double hr = 0.0;
    double ndcg = 0.0;
    for (const auto& u : r.users) {
      hr += u.hr.at(k);
      ndcg += u.ndcg.at(k);
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, r.users.size()));
    r.hr[k] = hr / n;
    r.ndcg[k] = ndcg / n;
  }
  return r;
}

MetricsReport evaluate(const std::vector<collab::DeviceState>& devices, std::span<const data::CheckIn> test,
                       const data::PoiCatalog& catalog, std::size_t n_cand, const ExecPolicy& policy) {
  if (test.size() != devices.size()) throw ContractError("evaluate: one held-out check-in per device required");
  std::vector<EvalCase> cases(devices.size());
  for_each_index(devices.size(), policy, [&](std::size_t i) {
    cases[i] = EvalCase{devices[i].user, candidate_set(devices[i].ctx, test[i], catalog, n_cand)};
  });
  const Scorer scorer = [&](std::size_t i, std::span<const int> cands) {
    return recommender::score(devices[i].ctx, cands, test[i].timestamp, catalog, devices[i].params);
  };
  return evaluate_cases(cases, scorer, kDefaultKs, policy);
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json summary = nlohmann::json::object();
  for (int k : r.ks) {
    summary["HR@" + std::to_string(k)] = r.hr.at(k);
    summary["NDCG@" + std::to_string(k)] = r.ndcg.at(k);
  }
  nlohmann::json users = nlohmann::json::array();
  for (const auto& u : r.users) {
    nlohmann::json row{{"user", u.user}, {"rank", u.rank}};
    for (int k : r.ks) {
      row["HR@" + std::to_string(k)] = u.hr.at(k);
      row["NDCG@" + std::to_string(k)] = u.ndcg.at(k);
    }
    users.push_back(std::move(row));
  }
  return {{"ks", r.ks}, {"summary", summary}, {"users", users}};
}

void write_csv(const MetricsReport& r, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw ArtifactError("cannot write " + file.string());
  out.precision(17);
  out << "user,rank";
  for (int k : r.ks) out << ",hr@" << k << ",ndcg@" << k;
  out << '\n';
  for (const auto& u : r.users) {
    out << u.user << ',' << u.rank;
    for (int k : r.ks) out << ',' << u.hr.at(k) << ',' << u.ndcg.at(k);
    out << '\n';
  }
  out << "mean,";
  for (int k : r.ks) out << ',' << r.hr.at(k) << ',' << r.ndcg.at(k);
  out << '\n';
}

}  // namespace dclr::eval
