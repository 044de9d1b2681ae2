#pragma once

#include <span>
#include <string>
#include <vector>

#include "dclr/data.hpp"
#include "dclr/numerics.hpp"

namespace dclr::recommender {

inline const std::string kPoiEmb = "poi_emb";
inline const std::string kTimeEmb = "time_emb";
inline const std::string kUnitSpatial = "unit_spatial";
inline const std::string kUnitTemporal = "unit_temporal";
inline const std::string kWq = "w_q";
inline const std::string kWk = "w_k";
inline const std::string kWv = "w_v";

// The exchangeable parameter set: POI/time embeddings, the two unit gap
// embeddings and the attention projections.
class CoreParams {
 public:
  CoreParams() = default;
  // Validates keys and shapes.
  explicit CoreParams(numerics::ParamStore store);

  static CoreParams zeros(std::size_t n_pois, int d);
  // Uniform in [-range, range]; the two unit gap embeddings start at zero.
  static CoreParams random(std::size_t n_pois, int d, double range, Rng& rng);

  int dim() const { return static_cast<int>(store_.at(kPoiEmb).cols()); }
  std::size_t n_pois() const { return static_cast<std::size_t>(store_.at(kPoiEmb).rows()); }

  const Mat& poi_emb() const { return store_.at(kPoiEmb); }
  const Mat& time_emb() const { return store_.at(kTimeEmb); }
  const Mat& unit_spatial() const { return store_.at(kUnitSpatial); }
  const Mat& unit_temporal() const { return store_.at(kUnitTemporal); }
  const Mat& w_q() const { return store_.at(kWq); }
  const Mat& w_k() const { return store_.at(kWk); }
  const Mat& w_v() const { return store_.at(kWv); }

  const numerics::ParamStore& store() const { return store_; }
  numerics::ParamStore& store() { return store_; }

  bool operator==(const CoreParams& other) const { return store_ == other.store_; }

 private:
  numerics::ParamStore store_;
};

// Data-only view of one trajectory: indices, slots and pairwise gaps.
struct SequenceContext {
  std::vector<int> pois;
  std::vector<int> slots;
  std::vector<data::Timestamp> times;
  Mat dist_km;    // MxM Haversine distances
  Mat gap_hours;  // MxM |t_a - t_b| in hours

  std::size_t size() const { return pois.size(); }
};

SequenceContext make_context(const data::Trajectory& t, const data::PoiCatalog& catalog);

// Row m = poi_emb[p_m] + time_emb[slot(t_m)].
Mat embed_sequence(const SequenceContext& ctx, const CoreParams& p);
Mat embed_sequence(const data::Trajectory& t, const CoreParams& p);

// Entry (a,b) = dist_km(a,b) * sum(unit_spatial) + gap_hours(a,b) * sum(unit_temporal).
Mat relation_matrix(const SequenceContext& ctx, const CoreParams& p);
Mat relation_matrix(const data::Trajectory& t, const data::PoiCatalog& catalog, const CoreParams& p);

// softmax_rows((X Wq (X Wk)^T + rel) / sqrt(d)) X Wv
Mat self_attention(const Mat& x, const Mat& rel, const CoreParams& p);

// Candidate-to-history gaps: distance from each candidate to each visited POI
// and hours between query_time and each visit.
struct CandidateGaps {
  Mat dist_km;    // h x M
  Mat gap_hours;  // h x M
};
CandidateGaps candidate_gaps(const SequenceContext& ctx, std::size_t history, std::span<const int> cands,
                             data::Timestamp query_time, const data::PoiCatalog& catalog);

// Column sums over the M history positions of the softmax taken across the
// candidate axis. Returns h scores.
Eigen::VectorXd score_candidates(const Mat& e_u, const CandidateGaps& gaps, std::span<const int> cands,
                                 const CoreParams& p);

// Full encode + score for evaluation (no dropout).
Eigen::VectorXd score(const SequenceContext& ctx, std::span<const int> cands, data::Timestamp query_time,
                      const data::PoiCatalog& catalog, const CoreParams& p);

struct ScoredTarget {
  double positive = 0.0;
  std::vector<double> negatives;
};

// -sum_i [log s(a_i) + 1/N sum_j log(1 - s(a_j))] with s clamped to [1e-12, 1 - 1e-12].
double poi_loss(std::span<const ScoredTarget> scored);

// One next-POI target inside a sequence: predict ctx.pois[target] from the
// check-ins before it.
struct TargetSample {
  std::size_t target = 1;
  std::vector<int> negatives;
};

struct DropoutSpec {
  double rate = 0.0;
  Rng* rng = nullptr;  // null disables dropout
};

// Summed POI loss over `samples` as a differentiable graph on CoreParams keys.
numerics::Var poi_loss_graph(numerics::Tape& tape, const numerics::ParamStore& p, const SequenceContext& ctx,
                             const data::PoiCatalog& catalog, std::span<const TargetSample> samples,
                             DropoutSpec dropout = {});

numerics::LossFn poi_loss_fn(const SequenceContext& ctx, const data::PoiCatalog& catalog,
                             std::vector<TargetSample> samples);

// POIs a device may draw negatives from: everything it has not visited.
std::vector<int> unvisited_pois(const SequenceContext& ctx, std::size_t n_pois);

struct LocalTrainConfig {
  double lr = 0.002;
  std::size_t batch = 16;
  std::size_t n_neg = 5;
  double dropout = 0.2;
  numerics::OptimizerKind optimizer = numerics::OptimizerKind::kSgd;
};

struct LocalEpoch {
  CoreParams params;
  double mean_loss = 0.0;  // per-target loss averaged over the epoch's batches
  std::size_t n_positives = 0;
};

// One pass over the sliding next-POI targets in shuffled mini-batches.
LocalEpoch train_local_epoch(const CoreParams& params, const SequenceContext& ctx, const data::PoiCatalog& catalog,
                             std::span<const int> unvisited, const LocalTrainConfig& cfg, Rng& rng);
// Same, continuing from an existing optimizer state (cfg.lr/optimizer ignored).
LocalEpoch train_local_epoch(const CoreParams& params, const SequenceContext& ctx, const data::PoiCatalog& catalog,
                             std::span<const int> unvisited, const LocalTrainConfig& cfg, Rng& rng,
                             numerics::Optimizer& opt);

}  // namespace dclr::recommender
