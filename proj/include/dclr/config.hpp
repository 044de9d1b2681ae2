#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dclr/data.hpp"

namespace dclr::config {

struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

// `key = value` lines; `#` starts a comment; blank lines ignored.
std::vector<KeyValue> read_key_values(const std::filesystem::path& file);

// Ablation switches -CP -DP -AN -GN -SN -MIM -PP.
struct Ablations {
  bool no_cp = false;
  bool no_dp = false;
  bool no_neighbors = false;
  bool no_geo = false;
  bool no_semantic = false;
  bool no_mim = false;
  bool no_privacy = false;

  bool operator==(const Ablations&) const = default;
};

// Accepts a comma-separated list such as "-AN,-MIM"; the leading dash is optional.
Ablations parse_ablations(const std::string& spec);
std::string format_ablations(const Ablations& a);

struct ExperimentConfig {
  // model / protocol
  int d = 32;
  std::size_t q = 30;
  double mu = 0.3;
  double epsilon = 0.1;
  double lr = 0.002;
  double dropout = 0.2;
  std::size_t batch = 16;
  std::size_t max_epochs = 50;
  std::size_t n_neg = 5;
  std::size_t n_cp = 5;
  std::size_t n_comb = 5;  // N1 = N2
  std::size_t n_cand = 200;
  std::size_t seq_cap = 200;
  double threshold_km = 10.0;
  std::size_t mim_steps = 5;
  double convergence_tol = 1e-4;
  double init_range = 0.1;
  std::string optimizer = "sgd";  // sgd | adam, for every gradient step

  // neighbor identification / privacy
  std::size_t max_centroids = 20;
  double centroid_floor_deg = 0.01;

  // server pretraining
  std::size_t pretrain_epochs = 30;
  double pretrain_lr = 0.05;
  std::size_t pretrain_batch = 256;
  std::size_t dp_cap = 500;
  double pretrain_tol = 1e-4;
  std::string pretrain_alternation = "epoch";  // epoch | batch

  // data
  std::size_t min_user_checkins = 10;
  std::size_t min_poi_visits = 10;
  std::string checkins_file;  // empty: synthesize
  std::string pois_file;
  data::SynthConfig synth;

  Ablations ablations;
  std::uint64_t seed = 42;
  int threads = 1;  // >1 runs device loops through OpenMP; results do not depend on it
};

struct KeyDef {
  std::string name;
  std::string help;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  bool hashed = true;  // execution-only keys (threads) stay out of the hash
};

// Every configurable key; drives config files, CLI flags and the config hash.
const std::vector<KeyDef>& keys();

void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value);
ExperimentConfig load_config(const std::filesystem::path& file, ExperimentConfig base = {});
std::string canonical_text(const ExperimentConfig& cfg);
// FNV-1a 64 over canonical_text, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);
void validate(const ExperimentConfig& cfg);

}  // namespace dclr::config
