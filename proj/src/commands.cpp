#include "dclr/commands.hpp"

#include <fstream>
#include <iostream>

#include "dclr/artifacts.hpp"
#include "dclr/errors.hpp"

namespace dclr::pipeline {

namespace fs = std::filesystem;
using config::ExperimentConfig;

ExecPolicy policy_for(const ExperimentConfig& cfg) {
  return cfg.threads > 1 ? ExecPolicy::parallel(cfg.threads) : ExecPolicy::serial();
}

privacy::PrivacyBudget budget_for(const ExperimentConfig& cfg) {
  return privacy::PrivacyBudget{cfg.epsilon, !cfg.ablations.no_privacy};
}

pretrain::PretrainConfig pretrain_config(const ExperimentConfig& cfg) {
  pretrain::PretrainConfig p;
  p.d = cfg.d;
  p.init_range = cfg.init_range;
  p.max_epochs = cfg.pretrain_epochs;
  p.lr = cfg.pretrain_lr;
  p.batch = cfg.pretrain_batch;
  p.n_cp = cfg.n_cp;
  p.dp_cap = cfg.dp_cap;
  p.tol = cfg.pretrain_tol;
  p.use_dp = !cfg.ablations.no_dp;
  p.use_cp = !cfg.ablations.no_cp;
  p.optimizer = numerics::parse_optimizer(cfg.optimizer);
  p.alternation = pretrain::parse_alternation(cfg.pretrain_alternation);
  p.policy = policy_for(cfg);
  return p;
}

neighbors::UploadConfig upload_config(const ExperimentConfig& cfg) {
  neighbors::UploadConfig u;
  u.threshold_km = cfg.threshold_km;
  u.centroid_floor_deg = cfg.centroid_floor_deg;
  u.kmeans.max_k = cfg.max_centroids;
  return u;
}

collab::TrainingConfig training_config(const ExperimentConfig& cfg) {
  collab::TrainingConfig t;
  const auto kind = numerics::parse_optimizer(cfg.optimizer);
  t.round.local = recommender::LocalTrainConfig{cfg.lr, cfg.batch, cfg.n_neg, cfg.dropout, kind};
  t.round.merge = collab::MergeConfig{cfg.ablations.no_mim ? 0 : cfg.mim_steps, cfg.lr, cfg.n_comb, cfg.n_comb, kind};
  t.round.mu = cfg.mu;
  t.round.use_neighbors = !cfg.ablations.no_neighbors;
  t.round.use_geo = !cfg.ablations.no_geo;
  t.round.use_cat = !cfg.ablations.no_semantic;
  t.round.budget = budget_for(cfg);
  t.max_rounds = cfg.max_epochs;
  t.tol = cfg.convergence_tol;
  return t;
}

numerics::OptimizerConfig local_optimizer(const ExperimentConfig& cfg) {
  return numerics::OptimizerConfig{numerics::parse_optimizer(cfg.optimizer), cfg.lr};
}

data::Dataset source_dataset(const ExperimentConfig& cfg) {
  if (!cfg.checkins_file.empty()) {
    if (cfg.pois_file.empty()) throw ConfigError("checkins_file requires pois_file");
    return data::load_checkins(cfg.checkins_file, cfg.pois_file);
  }
  return data::generate_synthetic(cfg.synth, cfg.seed);
}

data::Split prepare(const data::Dataset& d, const ExperimentConfig& cfg) {
  return data::split_leave_one_out(data::filter_sparse(d, cfg.min_user_checkins, cfg.min_poi_visits), cfg.seq_cap);
}

pretrain::PretrainResult run_pretrain(const data::PoiCatalog& catalog, const ExperimentConfig& cfg) {
  Rng rng = collab::device_rng(cfg.seed, kStagePretrain, 0);
  auto pc = pretrain_config(cfg);
  if (!pc.use_dp && !pc.use_cp) pc.max_epochs = 0;  // both losses ablated: random initialization
  return pretrain::pretrain(catalog, pc, rng);
}

std::vector<neighbors::Assignment> run_neighbors(const data::Dataset& train, const ExperimentConfig& cfg) {
  const auto policy = policy_for(cfg);
  const auto budget = budget_for(cfg);
  const auto ucfg = upload_config(cfg);
  std::vector<neighbors::Upload> uploads(train.n_users());
  for_each_index(train.n_users(), policy, [&](std::size_t i) {
    Rng rng = collab::device_rng(cfg.seed, collab::kStageNeighbors, i);
    uploads[i] = neighbors::device_upload(train.trajectories[i], train.catalog, ucfg, budget, rng);
  });
  return neighbors::identify_neighbors(uploads, cfg.q, policy);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const collab::RoundSink& sink) {
  config::validate(cfg);
  const auto split = prepare(source_dataset(cfg), cfg);
  ExperimentResult r;
  r.pretrained = run_pretrain(split.train.catalog, cfg);
  const auto assignments = run_neighbors(split.train, cfg);
  r.devices = collab::make_devices(split.train, r.pretrained.params, cfg.init_range, cfg.seed, local_optimizer(cfg));
  r.history = collab::run_training(r.devices, assignments, split.train.catalog, training_config(cfg),
                                   policy_for(cfg), sink);
  r.metrics = eval::evaluate(r.devices, split.test, split.train.catalog, cfg.n_cand, policy_for(cfg));
  return r;
}

namespace {

std::vector<data::UserId> user_ids(const data::Dataset& d) {
  std::vector<data::UserId> out;
  for (const auto& t : d.trajectories) out.push_back(t.user);
  return out;
}

data::Dataset stage_dataset(const ExperimentConfig& cfg, const StageOptions& opt) {
  if (!cfg.checkins_file.empty()) return source_dataset(cfg);
  const fs::path checkins = opt.dir / files::kCheckins;
  const fs::path pois = opt.dir / files::kPois;
  const auto expected = artifacts::meta_for(cfg, "synth");
  artifacts::check_sidecar(checkins, expected, opt.force);
  artifacts::check_sidecar(pois, expected, opt.force);
  return data::load_checkins(checkins, pois);
}

recommender::CoreParams load_pretrained(const ExperimentConfig& cfg, const StageOptions& opt) {
  const auto j = artifacts::read_json(opt.dir / files::kPretrained, artifacts::meta_for(cfg, "pretrain"), opt.force);
  return recommender::CoreParams(numerics::param_store_from_json(j.at("params")));
}

std::vector<neighbors::Assignment> load_assignments(const ExperimentConfig& cfg, const StageOptions& opt,
                                                    const data::Dataset& train) {
  const auto j = artifacts::read_json(opt.dir / files::kNeighbors, artifacts::meta_for(cfg, "neighbors"), opt.force);
  return neighbors::assignments_from_json(j.at("neighbors"), user_ids(train));
}

void report(const std::string& stage, const fs::path& file) {
  std::cout << stage << ": wrote " << file.string() << '\n';
}

}  // namespace

int cmd_synth(const ExperimentConfig& cfg, const StageOptions& opt) {
  config::validate(cfg);
  fs::create_directories(opt.dir);
  const auto d = data::generate_synthetic(cfg.synth, cfg.seed);
  const fs::path checkins = opt.dir / files::kCheckins;
  const fs::path pois = opt.dir / files::kPois;
  data::write_checkins(d, checkins, pois);
  const auto meta = artifacts::meta_for(cfg, "synth");
  artifacts::write_sidecar(checkins, meta);
  artifacts::write_sidecar(pois, meta);
  std::cout << "synth: " << d.n_users() << " users, " << d.n_pois() << " POIs, " << d.n_checkins()
            << " check-ins\n";
  report("synth", checkins);
  return 0;
}

int cmd_pretrain(const ExperimentConfig& cfg, const StageOptions& opt) {
  config::validate(cfg);
  const auto split = prepare(stage_dataset(cfg, opt), cfg);
  const auto r = run_pretrain(split.train.catalog, cfg);
  const fs::path out = opt.dir / files::kPretrained;
  artifacts::write_json(out, artifacts::meta_for(cfg, "pretrain"),
                        {{"params", numerics::to_json(r.params.store())},
                         {"dp_history", r.dp_history},
                         {"cp_history", r.cp_history},
                         {"epochs", r.epochs}});
  report("pretrain", out);
  return 0;
}

int cmd_neighbors(const ExperimentConfig& cfg, const StageOptions& opt) {
  config::validate(cfg);
  const auto split = prepare(stage_dataset(cfg, opt), cfg);
  const auto a = run_neighbors(split.train, cfg);
  const fs::path out = opt.dir / files::kNeighbors;
  artifacts::write_json(out, artifacts::meta_for(cfg, "neighbors"),
                        {{"neighbors", neighbors::to_json(a, user_ids(split.train))}});
  report("neighbors", out);
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const StageOptions& opt) {
  config::validate(cfg);
  const auto split = prepare(stage_dataset(cfg, opt), cfg);
  const auto init = load_pretrained(cfg, opt);
  const auto assignments = load_assignments(cfg, opt, split.train);
  auto devices = collab::make_devices(split.train, init, cfg.init_range, cfg.seed, local_optimizer(cfg));

  const fs::path log_file = opt.dir / files::kRoundLog;
  std::ofstream log(log_file);
  if (!log) throw ArtifactError("cannot write " + log_file.string());
  artifacts::write_sidecar(log_file, artifacts::meta_for(cfg, "train"));
  const auto history = collab::run_training(devices, assignments, split.train.catalog, training_config(cfg),
                                            policy_for(cfg), [&](const std::vector<collab::RoundRecord>& recs) {
                                              for (const auto& r : recs) artifacts::write_jsonl_line(log, collab::to_json(r));
                                              log.flush();
                                            });

  nlohmann::json devs = nlohmann::json::array();
  for (const auto& d : devices) {
    devs.push_back({{"user", d.user}, {"round", d.round}, {"params", numerics::to_json(d.params.store())}});
  }
  const fs::path out = opt.dir / files::kDevices;
  artifacts::write_json(out, artifacts::meta_for(cfg, "train"),
                        {{"devices", devs}, {"mean_local_loss", history.mean_local_loss}, {"rounds", history.rounds}});
  std::cout << "train: " << history.rounds << " rounds, final mean local loss "
            << (history.mean_local_loss.empty() ? 0.0 : history.mean_local_loss.back()) << '\n';
  report("train", out);
  report("train", log_file);
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const StageOptions& opt) {
  config::validate(cfg);
  const auto split = prepare(stage_dataset(cfg, opt), cfg);
  const auto j = artifacts::read_json(opt.dir / files::kDevices, artifacts::meta_for(cfg, "train"), opt.force);
  const recommender::CoreParams placeholder = recommender::CoreParams::zeros(split.train.n_pois(), cfg.d);
  auto devices = collab::make_devices(split.train, placeholder, cfg.init_range, cfg.seed);
  const auto& saved = j.at("devices");
  if (saved.size() != devices.size()) throw ArtifactError("devices.json does not match the dataset");
  for (std::size_t i = 0; i < devices.size(); ++i) {
    if (saved[i].at("user").get<data::UserId>() != devices[i].user) {
      throw ArtifactError("devices.json lists users in a different order than the dataset");
    }
    devices[i].params = recommender::CoreParams(numerics::param_store_from_json(saved[i].at("params")));
  }
  const auto m = eval::evaluate(devices, split.test, split.train.catalog, cfg.n_cand, policy_for(cfg));
  const auto meta = artifacts::meta_for(cfg, "eval");
  const fs::path json_out = opt.dir / files::kMetricsJson;
  const fs::path csv_out = opt.dir / files::kMetricsCsv;
  artifacts::write_json(json_out, meta, {{"report", eval::to_json(m)}});
  eval::write_csv(m, csv_out);
  artifacts::write_sidecar(csv_out, meta);
  std::cout << "eval: HR@5 " << m.hr_at(5) << " NDCG@5 " << m.ndcg_at(5) << " HR@10 " << m.hr_at(10) << " NDCG@10 "
            << m.ndcg_at(10) << '\n';
  report("eval", json_out);
  report("eval", csv_out);
  return 0;
}

int cmd_pipeline(const ExperimentConfig& cfg, const StageOptions& opt) {
  fs::create_directories(opt.dir);
  if (cfg.checkins_file.empty()) cmd_synth(cfg, opt);
  cmd_pretrain(cfg, opt);
  cmd_neighbors(cfg, opt);
  cmd_train(cfg, opt);
  return cmd_eval(cfg, opt);
}

}  // namespace dclr::pipeline
