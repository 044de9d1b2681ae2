#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "dclr/collab.hpp"
#include "dclr/config.hpp"
#include "dclr/data.hpp"
#include "dclr/eval.hpp"
#include "dclr/neighbors.hpp"
#include "dclr/pretrain.hpp"

namespace dclr::pipeline {

inline constexpr std::uint64_t kStagePretrain = 3;

ExecPolicy policy_for(const config::ExperimentConfig& cfg);
privacy::PrivacyBudget budget_for(const config::ExperimentConfig& cfg);
pretrain::PretrainConfig pretrain_config(const config::ExperimentConfig& cfg);
neighbors::UploadConfig upload_config(const config::ExperimentConfig& cfg);
collab::TrainingConfig training_config(const config::ExperimentConfig& cfg);
numerics::OptimizerConfig local_optimizer(const config::ExperimentConfig& cfg);

// The configured check-in files, or the synthetic generator.
data::Dataset source_dataset(const config::ExperimentConfig& cfg);
// filter_sparse followed by the leave-one-out split.
data::Split prepare(const data::Dataset& d, const config::ExperimentConfig& cfg);

pretrain::PretrainResult run_pretrain(const data::PoiCatalog& catalog, const config::ExperimentConfig& cfg);
std::vector<neighbors::Assignment> run_neighbors(const data::Dataset& train, const config::ExperimentConfig& cfg);

struct ExperimentResult {
  eval::MetricsReport metrics;
  collab::TrainingHistory history;
  pretrain::PretrainResult pretrained;
  std::vector<collab::DeviceState> devices;
};

// All stages in memory, no files.
ExperimentResult run_experiment(const config::ExperimentConfig& cfg, const collab::RoundSink& sink = {});

// File-backed stages. Each reads its predecessor's artifact from `dir`.
struct StageOptions {
  std::filesystem::path dir = "artifacts";
  bool force = false;
};

namespace files {
inline constexpr const char* kCheckins = "checkins.csv";
inline constexpr const char* kPois = "pois.csv";
inline constexpr const char* kPretrained = "pretrained.json";
inline constexpr const char* kNeighbors = "neighbors.json";
inline constexpr const char* kDevices = "devices.json";
inline constexpr const char* kRoundLog = "round_log.jsonl";
inline constexpr const char* kMetricsJson = "metrics.json";
inline constexpr const char* kMetricsCsv = "metrics.csv";
}  // namespace files

int cmd_synth(const config::ExperimentConfig& cfg, const StageOptions& opt);
int cmd_pretrain(const config::ExperimentConfig& cfg, const StageOptions& opt);
int cmd_neighbors(const config::ExperimentConfig& cfg, const StageOptions& opt);
int cmd_train(const config::ExperimentConfig& cfg, const StageOptions& opt);
int cmd_eval(const config::ExperimentConfig& cfg, const StageOptions& opt);
int cmd_pipeline(const config::ExperimentConfig& cfg, const StageOptions& opt);

}  // namespace dclr::pipeline
