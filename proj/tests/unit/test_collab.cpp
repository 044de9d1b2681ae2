#include <gtest/gtest.h>

#include <cmath>

#include "dclr/collab.hpp"
#include "dclr/errors.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dclr;
using namespace dclr::collab;
using numerics::ParamStore;

namespace {

CoreParams random_core(std::size_t n, int d, std::uint64_t seed, double range = 0.3) {
  Rng rng(seed);
  auto p = CoreParams::random(n, d, range, rng);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (const auto& key : {recommender::kUnitSpatial, recommender::kUnitTemporal}) {
    Mat& m = p.store().mutable_at(key);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  }
  return p;
}

Mat random_head(int d, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Mat w(d, d);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  return w;
}

struct Scene {
  data::Dataset train;
  std::vector<data::CheckIn> test;
  CoreParams init;
  std::vector<neighbors::Assignment> assignments;
};

Scene make_scene(std::size_t users = 10, std::size_t q = 3) {
  data::SynthConfig synth;
  synth.users = users;
  synth.pois = 60;
  synth.checkins_per_user = 8;
  auto split = data::split_leave_one_out(data::generate_synthetic(synth, 21));
  Scene s{std::move(split.train), std::move(split.test), random_core(60, 6, 22), {}};
  std::vector<neighbors::Upload> uploads;
  Rng rng(23);
  for (const auto& t : s.train.trajectories) uploads.push_back(neighbors::device_upload(t, s.train.catalog, {}, {1.0, true}, rng));
  s.assignments = neighbors::identify_neighbors(uploads, q);
  return s;
}

RoundConfig quick_round() {
  RoundConfig cfg;
  cfg.local.lr = 0.01;
  cfg.local.dropout = 0.0;
  cfg.merge.mim_steps = 2;
  cfg.merge.n1 = 3;
  cfg.merge.n2 = 3;
  cfg.budget = {1.0, true};
  return cfg;
}

}  // namespace

TEST(Affinity, WeightsNormalizeInverseDistance) {
  EXPECT_DOUBLE_EQ(affinity(0.0), 1.0);
  EXPECT_DOUBLE_EQ(affinity(3.0), 0.25);
  EXPECT_THROW(affinity(-1.0), ContractError);
  const neighbors::NeighborSet set{0, neighbors::NeighborKind::kGeographical, {{1, 1.0}, {2, 3.0}}};
  const auto w = neighbor_weights(set);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-15);
  EXPECT_THROW(neighbor_weights({}), ContractError);
}

TEST(Aggregate, EndpointsAndClosedForm) {
  const auto own = random_core(5, 3, 1);
  const auto a = random_core(5, 3, 2);
  const auto b = random_core(5, 3, 3);
  const std::vector<Weighted> mix{{&a, 0.25}, {&b, 0.75}};
  EXPECT_EQ(aggregate(own, mix, 0.0), own);
  const auto full = aggregate(own, mix, 1.0);
  const auto mid = aggregate(own, mix, 0.7);
  for (const auto& [name, m] : own.store().entries()) {
    const Mat neigh = 0.25 * a.store().at(name) + 0.75 * b.store().at(name);
    EXPECT_TRUE(full.store().at(name).isApprox(neigh, 1e-14) || neigh.norm() == 0.0) << name;
    const Mat want = 0.3 * m + 0.7 * neigh;
    EXPECT_LT((mid.store().at(name) - want).cwiseAbs().maxCoeff(), 1e-15) << name;
  }
}

TEST(Aggregate, IdenticalModelsAreAFixedPoint) {
  const auto own = random_core(6, 4, 4);
  const std::vector<Weighted> mix{{&own, 0.5}, {&own, 0.5}};
  const auto out = aggregate(own, mix, 0.3);
  for (const auto& [name, m] : own.store().entries()) {
    EXPECT_LT((out.store().at(name) - m).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Aggregate, AffineInMu) {
  const auto own = random_core(5, 3, 5);
  const auto a = random_core(5, 3, 6);
  const std::vector<Weighted> mix{{&a, 1.0}};
  const auto x = aggregate(own, mix, 0.2);
  const auto y = aggregate(own, mix, 0.6);
  const auto z = aggregate(own, mix, 0.4);
  for (const auto& [name, m] : own.store().entries()) {
    const Mat mean = 0.5 * (x.store().at(name) + y.store().at(name));
    EXPECT_LT((z.store().at(name) - mean).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Aggregate, RejectsBadInput) {
  const auto own = random_core(5, 3, 7);
  const auto other = random_core(6, 3, 8);
  const std::vector<Weighted> bad_shape{{&other, 1.0}};
  const std::vector<Weighted> bad_weight{{&own, 0.6}};
  EXPECT_THROW(aggregate(own, bad_shape, 0.3), ContractError);
  EXPECT_THROW(aggregate(own, bad_weight, 0.3), ContractError);
  EXPECT_THROW(aggregate(own, {}, 0.3), ContractError);
  const std::vector<Weighted> ok{{&own, 1.0}};
  EXPECT_THROW(aggregate(own, ok, 1.5), ContractError);
}

TEST(CombLoss, EqualScoresGiveLogOfNegativeCount) {
  const auto g = random_core(10, 4, 9);
  const auto c = random_core(10, 4, 10);
  Rng rng(11);
  const std::vector<int> anchors{0, 3, 6};
  EXPECT_NEAR(comb_loss(g, c, Mat::Zero(4, 4), anchors, 2, 3, rng), 3.0 * std::log(5.0), 1e-12);
}

TEST(CombLoss, SaturatedScores) {
  auto g = CoreParams::zeros(2, 1);
  auto c = CoreParams::zeros(2, 1);
  Mat e(2, 1);
  e << 10.0, -10.0;
  g.store().set(recommender::kPoiEmb, e);
  c.store().set(recommender::kPoiEmb, e);
  const std::vector<CombSample> samples{{0, {1}, {1}}};
  // f+ ~ 1 and both negatives ~ 0: -log(e / 2).
  EXPECT_NEAR(comb_loss(samples, comb_store(g, c, Mat::Ones(1, 1))), std::log(2.0) - 1.0, 1e-12);
}

TEST(CombLoss, MatchesFormulaTranscription) {
  const auto g = random_core(9, 3, 12, 1.0);
  const auto c = random_core(9, 3, 13, 1.0);
  const Mat w = random_head(3, 14);
  Rng rng(15);
  const std::vector<int> anchors{1, 2, 8};
  const auto samples = sample_comb(anchors, 9, 2, 4, rng);
  auto f = [&](int gi, int ci) { return oracle::sigmoid((g.poi_emb().row(gi) * w).dot(c.poi_emb().row(ci))); };
  double want = 0.0;
  for (const auto& s : samples) {
    EXPECT_EQ(s.cat_negatives.size(), 2u);
    EXPECT_EQ(s.geo_negatives.size(), 4u);
    double denom = 0.0;
    for (int j : s.cat_negatives) {
      EXPECT_NE(j, s.anchor);
      denom += std::exp(f(s.anchor, j));
    }
    for (int j : s.geo_negatives) {
      EXPECT_NE(j, s.anchor);
      denom += std::exp(f(j, s.anchor));
    }
    want -= f(s.anchor, s.anchor) - std::log(denom);
  }
  EXPECT_NEAR(comb_loss(samples, comb_store(g, c, w)), want, 1e-12);
}

TEST(CombLoss, GradientMatchesFiniteDifferences) {
  for (int trial = 0; trial < 3; ++trial) {
    const auto g = random_core(8, 3, 30 + trial, 1.0);
    const auto c = random_core(8, 3, 40 + trial, 1.0);
    Rng rng(50 + static_cast<unsigned>(trial));
    const std::vector<int> anchors{0, 5, 7};
    const auto samples = sample_comb(anchors, 8, 3, 2, rng);
    const ParamStore p = comb_store(g, c, random_head(3, 60 + trial));
    const auto gr = numerics::grad([&](numerics::Tape& t, const ParamStore& s) { return comb_loss_graph(t, s, samples); }, p);
    const auto check = oracle::check_gradient([&](const ParamStore& q) { return comb_loss(samples, q); }, p, gr.grads);
    EXPECT_LT(check.worst, 1e-3) << check.where;
  }
}

TEST(CombLoss, SamplerValidation) {
  Rng rng(16);
  const std::vector<int> anchors{0};
  EXPECT_THROW(sample_comb(anchors, 5, 0, 2, rng), ConfigError);
  EXPECT_THROW(sample_comb(anchors, 3, 3, 2, rng), ConfigError);
}

TEST(Finetune, ZeroStepsIsTheMean) {
  const auto g = random_core(7, 3, 17);
  const auto c = random_core(7, 3, 18);
  const Mat w = random_head(3, 19);
  MergeConfig cfg;
  cfg.mim_steps = 0;
  Rng rng(20);
  const std::vector<int> anchors{0, 1};
  const auto m = finetune_and_merge(g, c, w, anchors, cfg, rng);
  EXPECT_FALSE(m.comb_loss.has_value());
  EXPECT_EQ(m.w_comb, w);
  for (const auto& [name, v] : g.store().entries()) {
    EXPECT_LT((m.params.store().at(name) - 0.5 * (v + c.store().at(name))).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Finetune, StepsLowerTheFusionLoss) {
  const auto g = random_core(12, 4, 24, 1.0);
  const auto c = random_core(12, 4, 25, 1.0);
  const Mat w = random_head(4, 26);
  const std::vector<int> anchors{0, 2, 4, 6, 8};
  MergeConfig cfg;
  cfg.mim_steps = 40;
  cfg.lr = 0.1;
  cfg.n1 = cfg.n2 = 11;  // every other POI, so the loss is deterministic
  Rng rng(27);
  Rng probe(28);
  const double before = comb_loss(g, c, w, anchors, 11, 11, probe);
  const auto m = finetune_and_merge(g, c, w, anchors, cfg, rng);
  ASSERT_TRUE(m.comb_loss.has_value());
  EXPECT_LT(*m.comb_loss, before);
  EXPECT_NE(m.w_comb, w);
}

TEST(Mailbox, FetchAndDuplicateErrors) {
  Mailbox box;
  box.publish({7, 0, random_core(3, 2, 1)});
  EXPECT_TRUE(box.contains(7));
  EXPECT_EQ(box.fetch(7).sender, 7);
  try {
    box.fetch(9);
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.neighbor(), "9");
  }
  EXPECT_THROW(box.publish({7, 0, random_core(3, 2, 2)}), ProtocolError);
  box.drop(7);
  EXPECT_EQ(box.size(), 0u);
}

TEST(Snapshot, JsonRoundTrip) {
  const ParamSnapshot s{12, 3, random_core(4, 2, 31)};
  const auto back = snapshot_from_json(nlohmann::json::parse(to_json(s).dump()));
  EXPECT_EQ(back.sender, 12);
  EXPECT_EQ(back.round, 3u);
  EXPECT_EQ(back.params, s.params);
}

TEST(Devices, StreamsDependOnlyOnSeedStageAndIndex) {
  Rng a = device_rng(5, kStageTraining, 3), b = device_rng(5, kStageTraining, 3);
  Rng c = device_rng(5, kStageNeighbors, 3), e = device_rng(5, kStageTraining, 4);
  const auto x = a();
  EXPECT_EQ(x, b());
  EXPECT_NE(x, c());
  EXPECT_NE(x, e());
}

TEST(Round, NoNeighborsIsLocalTraining) {
  const Scene s = make_scene();
  auto devices = make_devices(s.train, s.init, 0.1, 1);
  auto reference = devices;
  RoundConfig cfg = quick_round();
  cfg.use_neighbors = false;
  const auto records = run_round(devices, s.assignments, s.train.catalog, cfg);
  for (std::size_t n = 0; n < devices.size(); ++n) {
    auto& r = reference[n];
    const auto epoch = recommender::train_local_epoch(r.params, r.ctx, s.train.catalog, r.unvisited, cfg.local, r.rng,
                                                      r.optimizer);
    EXPECT_EQ(devices[n].params, epoch.params);
    EXPECT_DOUBLE_EQ(records[n].local_loss, epoch.mean_loss);
    EXPECT_FALSE(records[n].comb_loss.has_value());
    EXPECT_EQ(devices[n].round, 1u);
  }
}

TEST(Round, ZeroMuAndNoFinetuneKeepsLocalModel) {
  const Scene s = make_scene();
  auto a = make_devices(s.train, s.init, 0.1, 2);
  auto b = a;
  RoundConfig cfg = quick_round();
  cfg.mu = 0.0;
  cfg.merge.mim_steps = 0;
  run_round(a, s.assignments, s.train.catalog, cfg);
  cfg.use_neighbors = false;
  run_round(b, s.assignments, s.train.catalog, cfg);
  for (std::size_t n = 0; n < a.size(); ++n) {
    for (const auto& [name, m] : b[n].params.store().entries()) {
      EXPECT_LT((a[n].params.store().at(name) - m).cwiseAbs().maxCoeff(), 1e-15) << name;
    }
  }
}

TEST(Round, SingleNeighborKindSkipsFusion) {
  const Scene s = make_scene();
  for (bool geo : {true, false}) {
    auto devices = make_devices(s.train, s.init, 0.1, 3);
    const Mat w_before = devices[0].w_comb;
    RoundConfig cfg = quick_round();
    cfg.use_geo = geo;
    cfg.use_cat = !geo;
    const auto records = run_round(devices, s.assignments, s.train.catalog, cfg);
    EXPECT_FALSE(records[0].comb_loss.has_value());
    EXPECT_EQ(devices[0].w_comb, w_before);
  }
}

TEST(Round, FullRoundRecordsFusionAndIsDeterministic) {
  const Scene s = make_scene();
  auto a = make_devices(s.train, s.init, 0.1, 4);
  auto b = make_devices(s.train, s.init, 0.1, 4);
  const RoundConfig cfg = quick_round();
  for (int r = 0; r < 2; ++r) {
    const auto ra = run_round(a, s.assignments, s.train.catalog, cfg);
    const auto rb = run_round(b, s.assignments, s.train.catalog, cfg);
    for (std::size_t n = 0; n < a.size(); ++n) {
      EXPECT_TRUE(ra[n].comb_loss.has_value());
      EXPECT_EQ(ra[n].round, static_cast<std::size_t>(r));
      EXPECT_EQ(ra[n].comb_loss, rb[n].comb_loss);
      EXPECT_EQ(a[n].params, b[n].params);
    }
  }
}

TEST(Round, MissingSnapshotIsProtocolError) {
  const Scene s = make_scene();
  auto devices = make_devices(s.train, s.init, 0.1, 5);
  const RoundConfig cfg = quick_round();
  std::vector<RoundRecord> records;
  const auto n_pos = local_phase(devices, s.train.catalog, cfg, records);
  Mailbox box = publish_phase(devices, n_pos, cfg);
  const std::size_t victim = s.assignments[0].geo.entries[0].index;
  box.drop(devices[victim].user);
  try {
    merge_phase(devices, s.assignments, box, cfg, records);
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.neighbor(), std::to_string(devices[victim].user));
  }
}

TEST(Training, StopsAtMaxRoundsAndReportsEveryRound) {
  const Scene s = make_scene();
  auto devices = make_devices(s.train, s.init, 0.1, 6);
  TrainingConfig cfg;
  cfg.round = quick_round();
  cfg.max_rounds = 1;
  std::size_t sink_calls = 0;
  const auto h = run_training(devices, s.assignments, s.train.catalog, cfg, ExecPolicy::serial(),
                              [&](const std::vector<RoundRecord>& r) {
                                ++sink_calls;
                                EXPECT_EQ(r.size(), devices.size());
                              });
  EXPECT_EQ(h.rounds, 1u);
  EXPECT_EQ(sink_calls, 1u);
  EXPECT_EQ(h.mean_local_loss.size(), 1u);

  cfg.max_rounds = 5;
  cfg.tol = 1e9;
  auto again = make_devices(s.train, s.init, 0.1, 6);
  EXPECT_EQ(run_training(again, s.assignments, s.train.catalog, cfg).rounds, 2u);
}
