#pragma once

#include <vector>

#include "dclr/data.hpp"
#include "dclr/geo.hpp"
#include "dclr/numerics.hpp"
#include "dclr/parallel.hpp"
#include "dclr/recommender.hpp"

namespace dclr::pretrain {

using geo::haversine;

enum class DistanceLabel : int { kSmall = 0, kMedium = 1, kLarge = 2 };
inline constexpr int kDistanceLabels = 3;

// Small up to 5 km, Medium up to 10 km, Large beyond.
DistanceLabel distance_label(double km);

inline const std::string kWDp = "w_dp";
inline const std::string kBDp = "b_dp";
inline const std::string kWCp = "w_cp";
inline const std::string kCatEmb = "cat_emb";

// Server-only heads; discarded after pretraining.
numerics::ParamStore make_heads(std::size_t n_categories, int d, double range, Rng& rng);

struct DpPair {
  int a = 0;
  int b = 0;
  DistanceLabel label = DistanceLabel::kSmall;

  bool operator==(const DpPair&) const = default;
};

// Per anchor: every Small partner plus up to `cap` random Medium and `cap`
// random Large partners. Each anchor draws from its own stream derived from
// one value of `rng`, so the result does not depend on the execution policy.
std::vector<DpPair> sample_dp_pairs(const data::PoiCatalog& catalog, Rng& rng, std::size_t cap = 500,
                                    const ExecPolicy& policy = ExecPolicy::serial());

// Summed cross-entropy of softmax(w_dp * <e_a, e_b> + b_dp) against the labels.
// `p` must hold poi_emb, w_dp and b_dp.
numerics::Var dp_loss_graph(numerics::Tape& tape, const numerics::ParamStore& p, std::span<const DpPair> pairs);
double dp_loss(std::span<const DpPair> pairs, const numerics::ParamStore& p);

struct CpSample {
  int poi = 0;
  int category = 0;                 // dense category index of the POI
  std::vector<int> negatives;       // distinct categories, none equal to `category`
};

std::vector<CpSample> sample_cp_negatives(const data::PoiCatalog& catalog, std::span<const int> pois,
                                          std::size_t n_cp, Rng& rng);

// sum_p -log( exp f(p, c_p) / sum_n exp f(p, c_n) ), f = sigmoid(e_p^T W_cp e_c).
// `p` must hold poi_emb, w_cp and cat_emb.
numerics::Var cp_loss_graph(numerics::Tape& tape, const numerics::ParamStore& p, std::span<const CpSample> samples);
double cp_loss(std::span<const CpSample> samples, const numerics::ParamStore& p);
// Draws the negatives from `rng`, then evaluates over the whole catalog.
double cp_loss(const data::PoiCatalog& catalog, const numerics::ParamStore& p, std::size_t n_cp, Rng& rng);

// When the two losses take turns: a whole epoch of each, or one step of each.
enum class Alternation { kEpoch, kBatch };

Alternation parse_alternation(const std::string& name);

struct PretrainConfig {
  int d = 32;
  double init_range = 0.1;
  std::size_t max_epochs = 30;
  double lr = 0.05;
  std::size_t batch = 256;
  std::size_t n_cp = 5;
  std::size_t dp_cap = 500;
  double tol = 1e-4;
  bool use_dp = true;
  bool use_cp = true;
  Alternation alternation = Alternation::kEpoch;
  numerics::OptimizerKind optimizer = numerics::OptimizerKind::kSgd;
  ExecPolicy policy = ExecPolicy::serial();
};

struct PretrainResult {
  recommender::CoreParams params;
  std::vector<double> dp_history;  // per-pair loss averaged over each epoch
  std::vector<double> cp_history;  // per-POI loss averaged over each epoch
  std::size_t epochs = 0;
};

// Alternates distance-prediction and category-prediction steps (per epoch or
// per batch) until the combined epoch loss stops moving. An epoch is one pass
// over the distance pairs.
PretrainResult pretrain(const data::PoiCatalog& catalog, const PretrainConfig& cfg, Rng& rng);

}  // namespace dclr::pretrain
