#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "dclr/data.hpp"
#include "dclr/neighbors.hpp"
#include "dclr/numerics.hpp"
#include "dclr/parallel.hpp"
#include "dclr/privacy.hpp"
#include "dclr/recommender.hpp"

namespace dclr::collab {

using recommender::CoreParams;

// One simulated client. The trajectory and its derived context stay here.
struct DeviceState {
  data::UserId user = 0;
  data::Trajectory trajectory;
  recommender::SequenceContext ctx;
  std::vector<int> unvisited;
  CoreParams params;
  Mat w_comb;  // fusion head, never exchanged
  Rng rng;
  numerics::Optimizer optimizer;  // local L_POI steps; state survives rounds
  std::size_t round = 0;
};

// Per-device stream: a function of (seed, stage tag, device index) only.
Rng device_rng(std::uint64_t seed, std::uint64_t stage, std::size_t index);

inline constexpr std::uint64_t kStageNeighbors = 1;
inline constexpr std::uint64_t kStageTraining = 2;

std::vector<DeviceState> make_devices(const data::Dataset& train, const CoreParams& init, double head_range,
                                      std::uint64_t seed, const numerics::OptimizerConfig& local = {});

struct ParamSnapshot {
  data::UserId sender = 0;
  std::size_t round = 0;
  CoreParams params;
};

nlohmann::json to_json(const ParamSnapshot& s);
ParamSnapshot snapshot_from_json(const nlohmann::json& j);

// Round-scoped store of published snapshots keyed by sender.
class Mailbox {
 public:
  void publish(ParamSnapshot s);
  // Throws ProtocolError naming `sender` when nothing was published.
  const ParamSnapshot& fetch(data::UserId sender) const;
  bool contains(data::UserId sender) const { return box_.count(sender) != 0; }
  void drop(data::UserId sender) { box_.erase(sender); }
  std::size_t size() const { return box_.size(); }

 private:
  std::map<data::UserId, ParamSnapshot> box_;
};

double affinity(double dist);
std::vector<double> neighbor_weights(const neighbors::NeighborSet& set);

struct Weighted {
  const CoreParams* params = nullptr;
  double weight = 0.0;
};

// (1 - mu) * own + mu * sum_m w_m * theta_m, per entry.
CoreParams aggregate(const CoreParams& own, std::span<const Weighted> neighbors, double mu);

inline const std::string kGeoEmb = "geo_poi_emb";
inline const std::string kCatEmb = "cat_poi_emb";
inline const std::string kWComb = "w_comb";

struct CombSample {
  int anchor = 0;
  std::vector<int> cat_negatives;  // N1 other POIs, scored as f(e_geo[anchor], e_cat[j])
  std::vector<int> geo_negatives;  // N2 other POIs, scored as f(e_geo[j], e_cat[anchor])
};

std::vector<CombSample> sample_comb(std::span<const int> anchors, std::size_t n_pois, std::size_t n1, std::size_t n2,
                                    Rng& rng);

// Store with keys geo_poi_emb, cat_poi_emb and w_comb.
numerics::ParamStore comb_store(const CoreParams& geo, const CoreParams& cat, const Mat& w_comb);

// sum over anchors of -log( exp f+ / (sum exp f-_cat + sum exp f-_geo) ), f = sigmoid(g^T W c).
numerics::Var comb_loss_graph(numerics::Tape& tape, const numerics::ParamStore& p, std::span<const CombSample> samples);
double comb_loss(std::span<const CombSample> samples, const numerics::ParamStore& p);
double comb_loss(const CoreParams& geo, const CoreParams& cat, const Mat& w_comb, std::span<const int> anchors,
                 std::size_t n1, std::size_t n2, Rng& rng);

struct MergeConfig {
  std::size_t mim_steps = 5;
  double lr = 0.002;
  std::size_t n1 = 5;
  std::size_t n2 = 5;
  numerics::OptimizerKind optimizer = numerics::OptimizerKind::kSgd;
};

struct Merged {
  CoreParams params;
  Mat w_comb;
  std::optional<double> comb_loss;  // loss at the last finetuning step
};

// mim_steps SGD steps on L_comb over both enhanced models and the head, then
// the entrywise mean of the two models.
Merged finetune_and_merge(const CoreParams& geo, const CoreParams& cat, const Mat& w_comb,
                          std::span<const int> anchors, const MergeConfig& cfg, Rng& rng);

struct RoundConfig {
  recommender::LocalTrainConfig local;
  MergeConfig merge;
  double mu = 0.3;
  bool use_neighbors = true;  // false: -AN
  bool use_geo = true;        // false: -GN
  bool use_cat = true;        // false: -SN
  privacy::PrivacyBudget budget;
};

struct RoundRecord {
  data::UserId user = 0;
  std::size_t round = 0;
  double local_loss = 0.0;
  std::optional<double> comb_loss;
  double wall_time = 0.0;  // seconds spent on this device in the round
};

nlohmann::json to_json(const RoundRecord& r);

// Phase 1: local L_POI epoch on every device. Returns n_pos per device.
std::vector<std::size_t> local_phase(std::vector<DeviceState>& devices, const data::PoiCatalog& catalog,
                                     const RoundConfig& cfg, std::vector<RoundRecord>& records,
                                     const ExecPolicy& policy = ExecPolicy::serial());

// Phase 2: every device publishes its perturbed post-phase-1 parameters.
Mailbox publish_phase(std::vector<DeviceState>& devices, std::span<const std::size_t> n_pos, const RoundConfig& cfg,
                      const ExecPolicy& policy = ExecPolicy::serial());

// Phase 3: aggregation over both neighbor sets, then fusion.
void merge_phase(std::vector<DeviceState>& devices, std::span<const neighbors::Assignment> assignments,
                 const Mailbox& mailbox, const RoundConfig& cfg, std::vector<RoundRecord>& records,
                 const ExecPolicy& policy = ExecPolicy::serial());

std::vector<RoundRecord> run_round(std::vector<DeviceState>& devices, std::span<const neighbors::Assignment> assignments,
                                   const data::PoiCatalog& catalog, const RoundConfig& cfg,
                                   const ExecPolicy& policy = ExecPolicy::serial());

struct TrainingConfig {
  RoundConfig round;
  std::size_t max_rounds = 50;
  double tol = 1e-4;
};

struct TrainingHistory {
  std::vector<double> mean_local_loss;  // one entry per round
  std::size_t rounds = 0;
};

using RoundSink = std::function<void(const std::vector<RoundRecord>&)>;

// Rounds until max_rounds or until the mean local loss moves by less than
// tol relative to the previous round.
TrainingHistory run_training(std::vector<DeviceState>& devices, std::span<const neighbors::Assignment> assignments,
                             const data::PoiCatalog& catalog, const TrainingConfig& cfg,
                             const ExecPolicy& policy = ExecPolicy::serial(), const RoundSink& sink = {});

}  // namespace dclr::collab
