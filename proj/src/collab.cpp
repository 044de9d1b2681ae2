#include "dclr/collab.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_set>

#include "dclr/errors.hpp"

namespace dclr::collab {

using numerics::ParamStore;
using numerics::Tape;
using numerics::Var;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<int> distinct_pois(const recommender::SequenceContext& ctx) {
  std::vector<int> out = ctx.pois;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

CoreParams with_poi_emb(const CoreParams& base, const Mat& emb) {
  ParamStore s = base.store();
  s.set(recommender::kPoiEmb, emb);
  return CoreParams(std::move(s));
}

}  // namespace

Rng device_rng(std::uint64_t seed, std::uint64_t stage, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stage), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
  return Rng(seq);
}

std::vector<DeviceState> make_devices(const data::Dataset& train, const CoreParams& init, double head_range,
                                      std::uint64_t seed, const numerics::OptimizerConfig& local) {
  if (init.n_pois() != train.n_pois()) throw ContractError("make_devices: parameters do not match the catalog");
  std::vector<DeviceState> out;
  out.reserve(train.n_users());
  const int d = init.dim();
  for (std::size_t i = 0; i < train.trajectories.size(); ++i) {
    DeviceState dev;
    dev.user = train.trajectories[i].user;
    dev.trajectory = train.trajectories[i];
    dev.ctx = recommender::make_context(dev.trajectory, train.catalog);
    dev.unvisited = recommender::unvisited_pois(dev.ctx, train.n_pois());
    dev.params = init;
    dev.optimizer = numerics::Optimizer(local);
    dev.rng = device_rng(seed, kStageTraining, i);
    std::uniform_real_distribution<double> u(-head_range, head_range);
    dev.w_comb = Mat(d, d);
    for (Eigen::Index k = 0; k < dev.w_comb.size(); ++k) dev.w_comb.data()[k] = u(dev.rng);
    out.push_back(std::move(dev));
  }
  return out;
}

nlohmann::json to_json(const ParamSnapshot& s) {
  return {{"sender", s.sender}, {"round", s.round}, {"params", numerics::to_json(s.params.store())}};
}

ParamSnapshot snapshot_from_json(const nlohmann::json& j) {
  return ParamSnapshot{j.at("sender").get<data::UserId>(), j.at("round").get<std::size_t>(),
                       CoreParams(numerics::param_store_from_json(j.at("params")))};
}

void Mailbox::publish(ParamSnapshot s) {
  const data::UserId sender = s.sender;
  if (!box_.emplace(sender, std::move(s)).second) {
    throw ProtocolError(std::to_string(sender), "device " + std::to_string(sender) + " published twice in one round");
  }
}

const ParamSnapshot& Mailbox::fetch(data::UserId sender) const {
  const auto it = box_.find(sender);
  if (it == box_.end()) throw ProtocolError(std::to_string(sender), "no snapshot from neighbor " + std::to_string(sender));
  return it->second;
}

double affinity(double dist) {
  if (!(dist >= 0.0)) throw ContractError("affinity: distance must be >= 0");
  return 1.0 / (1.0 + dist);
}

std::vector<double> neighbor_weights(const neighbors::NeighborSet& set) {
  if (set.entries.empty()) throw ContractError("neighbor_weights: empty neighbor set");
  std::vector<double> w;
  double total = 0.0;
  for (const auto& e : set.entries) {
    w.push_back(affinity(e.distance));
    total += w.back();
  }
  for (double& v : w) v /= total;
  return w;
}

CoreParams aggregate(const CoreParams& own, std::span<const Weighted> neighbors, double mu) {
  if (mu < 0.0 || mu > 1.0) throw ContractError("aggregate: mu must lie in [0, 1]");
  if (neighbors.empty()) throw ContractError("aggregate: no neighbors");
  double total = 0.0;
  for (const auto& n : neighbors) {
    if (!n.params || !n.params->store().congruent(own.store())) throw ContractError("aggregate: shape mismatch");
    total += n.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("aggregate: weights must sum to 1");

  ParamStore out = own.store();
  for (const auto& [name, value] : own.store().entries()) {
    Mat mix = Mat::Zero(value.rows(), value.cols());
    for (const auto& n : neighbors) mix += n.weight * n.params->store().at(name);
    out.set(name, (1.0 - mu) * value + mu * mix);
  }
  return CoreParams(std::move(out));
}

std::vector<CombSample> sample_comb(std::span<const int> anchors, std::size_t n_pois, std::size_t n1, std::size_t n2,
                                    Rng& rng) {
  if (n1 == 0 || n2 == 0) throw ConfigError("n_comb must be >= 1");
  if (n_pois <= std::max(n1, n2)) throw ConfigError("catalog too small for the requested combination negatives");
  std::uniform_int_distribution<int> pick(0, static_cast<int>(n_pois) - 1);
  auto draw = [&](int anchor, std::size_t n) {
    std::vector<int> out;
    while (out.size() < n) {
      const int c = pick(rng);
      if (c != anchor && std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
    }
    return out;
  };
  std::vector<CombSample> out;
  out.reserve(anchors.size());
  for (int a : anchors) {
    CombSample s{a, draw(a, n1), {}};
    s.geo_negatives = draw(a, n2);
    out.push_back(std::move(s));
  }
  return out;
}

ParamStore comb_store(const CoreParams& geo, const CoreParams& cat, const Mat& w_comb) {
  ParamStore s;
  s.add(kGeoEmb, geo.poi_emb());
  s.add(kCatEmb, cat.poi_emb());
  s.add(kWComb, w_comb);
  return s;
}

Var comb_loss_graph(Tape& tape, const ParamStore& p, std::span<const CombSample> samples) {
  if (samples.empty()) throw ContractError("comb_loss: no anchors");
  const std::size_t n1 = samples.front().cat_negatives.size();
  const std::size_t n2 = samples.front().geo_negatives.size();
  std::vector<int> anchors;
  for (const auto& s : samples) {
    if (s.cat_negatives.size() != n1 || s.geo_negatives.size() != n2) {
      throw ContractError("comb_loss: samples disagree on negative counts");
    }
    anchors.push_back(s.anchor);
  }

  Var g = tape.param(p, kGeoEmb);
  Var c = tape.param(p, kCatEmb);
  Var w = tape.param(p, kWComb);
  Var ga = gather_rows(g, anchors);
  Var ca = gather_rows(c, anchors);
  Var gw = matmul(ga, w);
  Var positive = sigmoid(sum_rows(mul(gw, ca)));

  Var denom;
  bool first = true;
  auto accumulate = [&](Var score) {
    Var e = exp(score);
    denom = first ? e : add(denom, e);
    first = false;
  };
  std::vector<int> column(samples.size());
  for (std::size_t j = 0; j < n1; ++j) {
    for (std::size_t i = 0; i < samples.size(); ++i) column[i] = samples[i].cat_negatives[j];
    accumulate(sigmoid(sum_rows(mul(gw, gather_rows(c, column)))));
  }
  for (std::size_t j = 0; j < n2; ++j) {
    for (std::size_t i = 0; i < samples.size(); ++i) column[i] = samples[i].geo_negatives[j];
    accumulate(sigmoid(sum_rows(mul(matmul(gather_rows(g, column), w), ca))));
  }
  return sub(sum(log(denom)), sum(positive));
}

double comb_loss(std::span<const CombSample> samples, const ParamStore& p) {
  return numerics::evaluate([&](Tape& t, const ParamStore& s) { return comb_loss_graph(t, s, samples); }, p);
}

double comb_loss(const CoreParams& geo, const CoreParams& cat, const Mat& w_comb, std::span<const int> anchors,
                 std::size_t n1, std::size_t n2, Rng& rng) {
  const auto samples = sample_comb(anchors, geo.n_pois(), n1, n2, rng);
  return comb_loss(samples, comb_store(geo, cat, w_comb));
}

Merged finetune_and_merge(const CoreParams& geo, const CoreParams& cat, const Mat& w_comb,
                          std::span<const int> anchors, const MergeConfig& cfg, Rng& rng) {
  if (!geo.store().congruent(cat.store())) throw ContractError("finetune_and_merge: shape mismatch");
  ParamStore s = comb_store(geo, cat, w_comb);
  std::optional<double> last;
  numerics::Optimizer opt({cfg.optimizer, cfg.lr});
  for (std::size_t step = 0; step < cfg.mim_steps; ++step) {
    const auto samples = sample_comb(anchors, geo.n_pois(), cfg.n1, cfg.n2, rng);
    const auto g = numerics::grad([&](Tape& t, const ParamStore& q) { return comb_loss_graph(t, q, samples); }, s);
    last = g.loss;
    s = opt.step(s, g.grads);
  }
  const CoreParams geo_ft = with_poi_emb(geo, s.at(kGeoEmb));
  const CoreParams cat_ft = with_poi_emb(cat, s.at(kCatEmb));
  ParamStore mean = numerics::scaled(numerics::axpy(geo_ft.store(), 1.0, cat_ft.store()), 0.5);
  numerics::require_finite(mean, "merged model");
  return Merged{CoreParams(std::move(mean)), s.at(kWComb), last};
}

nlohmann::json to_json(const RoundRecord& r) {
  nlohmann::json j{{"user", r.user}, {"round", r.round}, {"local_loss", r.local_loss}, {"wall_time", r.wall_time}};
  j["comb_loss"] = r.comb_loss ? nlohmann::json(*r.comb_loss) : nlohmann::json(nullptr);
  return j;
}

std::vector<std::size_t> local_phase(std::vector<DeviceState>& devices, const data::PoiCatalog& catalog,
                                     const RoundConfig& cfg, std::vector<RoundRecord>& records,
                                     const ExecPolicy& policy) {
  records.assign(devices.size(), RoundRecord{});
  std::vector<std::size_t> n_pos(devices.size(), 0);
  for_each_index(devices.size(), policy, [&](std::size_t n) {
    const auto start = std::chrono::steady_clock::now();
    DeviceState& dev = devices[n];
    auto epoch = recommender::train_local_epoch(dev.params, dev.ctx, catalog, dev.unvisited, cfg.local, dev.rng,
                                                dev.optimizer);
    dev.params = std::move(epoch.params);
    n_pos[n] = epoch.n_positives;
    records[n] = RoundRecord{dev.user, dev.round, epoch.mean_loss, std::nullopt, seconds_since(start)};
  });
  return n_pos;
}

Mailbox publish_phase(std::vector<DeviceState>& devices, std::span<const std::size_t> n_pos, const RoundConfig& cfg,
                      const ExecPolicy& policy) {
  std::vector<ParamSnapshot> out(devices.size());
  for_each_index(devices.size(), policy, [&](std::size_t n) {
    DeviceState& dev = devices[n];
    out[n] = ParamSnapshot{dev.user, dev.round, privacy::perturb_weights(dev.params, cfg.budget, n_pos[n], dev.rng)};
  });
  Mailbox box;
  for (auto& s : out) box.publish(std::move(s));
  return box;
}

void merge_phase(std::vector<DeviceState>& devices, std::span<const neighbors::Assignment> assignments,
                 const Mailbox& mailbox, const RoundConfig& cfg, std::vector<RoundRecord>& records,
                 const ExecPolicy& policy) {
  if (assignments.size() != devices.size()) throw ContractError("merge_phase: one assignment per device required");
  if (records.size() != devices.size()) records.assign(devices.size(), RoundRecord{});
  for_each_index(devices.size(), policy, [&](std::size_t n) {
    const auto start = std::chrono::steady_clock::now();
    DeviceState& dev = devices[n];
    auto enhance = [&](const neighbors::NeighborSet& set) -> std::optional<CoreParams> {
      if (set.entries.empty()) return std::nullopt;
      const auto w = neighbor_weights(set);
      std::vector<Weighted> mix;
      for (std::size_t k = 0; k < set.entries.size(); ++k) {
        const auto& snap = mailbox.fetch(devices.at(set.entries[k].index).user);
        mix.push_back({&snap.params, w[k]});
      }
      return aggregate(dev.params, mix, cfg.mu);
    };
    std::optional<CoreParams> geo = cfg.use_geo ? enhance(assignments[n].geo) : std::nullopt;
    std::optional<CoreParams> cat = cfg.use_cat ? enhance(assignments[n].cat) : std::nullopt;

    if (geo && cat) {
      const auto anchors = distinct_pois(dev.ctx);
      Merged m = finetune_and_merge(*geo, *cat, dev.w_comb, anchors, cfg.merge, dev.rng);
      dev.params = std::move(m.params);
      dev.w_comb = std::move(m.w_comb);
      records[n].comb_loss = m.comb_loss;
    } else if (geo) {
      dev.params = std::move(*geo);
    } else if (cat) {
      dev.params = std::move(*cat);
    }
    records[n].wall_time += seconds_since(start);
  });
}

std::vector<RoundRecord> run_round(std::vector<DeviceState>& devices, std::span<const neighbors::Assignment> assignments,
                                   const data::PoiCatalog& catalog, const RoundConfig& cfg,
                                   const ExecPolicy& policy) {
  std::vector<RoundRecord> records;
  const auto n_pos = local_phase(devices, catalog, cfg, records, policy);
  if (cfg.use_neighbors && (cfg.use_geo || cfg.use_cat)) {
    const Mailbox box = publish_phase(devices, n_pos, cfg, policy);
    merge_phase(devices, assignments, box, cfg, records, policy);
  }
  for (auto& dev : devices) ++dev.round;
  return records;
}

TrainingHistory run_training(std::vector<DeviceState>& devices, std::span<const neighbors::Assignment> assignments,
                             const data::PoiCatalog& catalog, const TrainingConfig& cfg, const ExecPolicy& policy,
                             const RoundSink& sink) {
  TrainingHistory h;
  for (std::size_t r = 0; r < cfg.max_rounds; ++r) {
    const auto records = run_round(devices, assignments, catalog, cfg.round, policy);
    double mean = 0.0;
    for (const auto& rec : records) mean += rec.local_loss;
    mean /= static_cast<double>(std::max<std::size_t>(1, records.size()));
    h.mean_local_loss.push_back(mean);
    ++h.rounds;
    if (sink) sink(records);
    if (h.rounds >= 2) {
      const double prev = h.mean_local_loss[h.rounds - 2];
      if (std::abs(prev - mean) < cfg.tol * std::abs(prev)) break;
    }
  }
  return h;
}

}  // namespace dclr::collab
