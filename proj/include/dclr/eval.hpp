#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include <json.hpp>

#include "dclr/collab.hpp"
#include "dclr/data.hpp"
#include "dclr/parallel.hpp"

namespace dclr::eval {

inline constexpr std::array<int, 2> kDefaultKs{5, 10};

// Ground truth first, then the n_cand unvisited POIs nearest to the last
// training check-in (ties by ascending POI id).
std::vector<int> candidate_set(const recommender::SequenceContext& train, const data::CheckIn& truth,
                               const data::PoiCatalog& catalog, std::size_t n_cand);

// 1-based rank under descending score; ties count against the truth.
std::size_t rank_truth(const Eigen::VectorXd& scores, std::size_t truth_index);

double hr_at_k(std::size_t rank, int k);
double ndcg_at_k(std::size_t rank, int k);

struct UserMetrics {
  data::UserId user = 0;
  std::size_t rank = 0;
  std::map<int, double> hr;
  std::map<int, double> ndcg;
};

struct MetricsReport {
  std::vector<int> ks;
  std::vector<UserMetrics> users;
  std::map<int, double> hr;    // mean over users
  std::map<int, double> ndcg;  // mean over users

  double hr_at(int k) const { return hr.at(k); }
  double ndcg_at(int k) const { return ndcg.at(k); }
};

struct EvalCase {
  data::UserId user = 0;
  std::vector<int> candidates;  // truth at position 0
};

using Scorer = std::function<Eigen::VectorXd(std::size_t case_index, std::span<const int> candidates)>;

MetricsReport evaluate_cases(std::span<const EvalCase> cases, const Scorer& scorer,
                             std::span<const int> ks = kDefaultKs, const ExecPolicy& policy = ExecPolicy::serial());

// test[i] is the held-out check-in of devices[i].
MetricsReport evaluate(const std::vector<collab::DeviceState>& devices, std::span<const data::CheckIn> test,
                       const data::PoiCatalog& catalog, std::size_t n_cand,
                       const ExecPolicy& policy = ExecPolicy::serial());

nlohmann::json to_json(const MetricsReport& r);
// One row per user, then a summary row with user "mean".
void write_csv(const MetricsReport& r, const std::filesystem::path& file);

}  // namespace dclr::eval
