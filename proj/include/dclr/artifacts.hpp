#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "dclr/config.hpp"

namespace dclr::artifacts {

// Provenance stamped into every artifact.
struct Meta {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string stage;

  bool operator==(const Meta&) const = default;
};

Meta meta_for(const config::ExperimentConfig& cfg, const std::string& stage);

nlohmann::json to_json(const Meta& m);
Meta meta_from_json(const nlohmann::json& j);

// Throws ArtifactError when `found` was produced under a different config
// hash or seed, unless `force`.
void check_meta(const Meta& found, const Meta& expected, const std::filesystem::path& file, bool force);

// JSON artifacts carry {"meta": ..., <body keys>}.
void write_json(const std::filesystem::path& file, const Meta& meta, nlohmann::json body);
// Throws ArtifactError naming the file when it is missing or unreadable.
nlohmann::json read_json(const std::filesystem::path& file, const Meta& expected, bool force);

// CSV artifacts get a `<file>.meta.json` sidecar.
std::filesystem::path sidecar(const std::filesystem::path& file);
void write_sidecar(const std::filesystem::path& file, const Meta& meta);
void check_sidecar(const std::filesystem::path& file, const Meta& expected, bool force);

void write_jsonl_line(std::ostream& out, const nlohmann::json& j);

}  // namespace dclr::artifacts
