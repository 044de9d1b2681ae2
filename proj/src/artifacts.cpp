#include "dclr/artifacts.hpp"

#include <fstream>

#include "dclr/errors.hpp"

namespace dclr::artifacts {

Meta meta_for(const config::ExperimentConfig& cfg, const std::string& stage) {
  return Meta{config::config_hash(cfg), cfg.seed, stage};
}

nlohmann::json to_json(const Meta& m) {
  return {{"config_hash", m.config_hash}, {"seed", m.seed}, {"stage", m.stage}};
}

Meta meta_from_json(const nlohmann::json& j) {
  return Meta{j.at("config_hash").get<std::string>(), j.at("seed").get<std::uint64_t>(),
              j.at("stage").get<std::string>()};
}

void check_meta(const Meta& found, const Meta& expected, const std::filesystem::path& file, bool force) {
  if (force) return;
  if (found.config_hash != expected.config_hash || found.seed != expected.seed) {
    throw ArtifactError(file.string() + " was produced by config " + found.config_hash + " seed " +
                        std::to_string(found.seed) + ", expected config " + expected.config_hash + " seed " +
                        std::to_string(expected.seed) + " (use --force to override)");
  }
}

namespace {

nlohmann::json load(const std::filesystem::path& file) {
  if (!std::filesystem::exists(file)) throw ArtifactError("missing artifact: " + file.string());
  std::ifstream in(file);
  if (!in) throw ArtifactError("cannot read " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError("malformed artifact " + file.string() + ": " + e.what());
  }
}

}  // namespace

void write_json(const std::filesystem::path& file, const Meta& meta, nlohmann::json body) {
  body["meta"] = to_json(meta);
  std::ofstream out(file);
  if (!out) throw ArtifactError("cannot write " + file.string());
  out << body.dump() << '\n';
}

nlohmann::json read_json(const std::filesystem::path& file, const Meta& expected, bool force) {
  nlohmann::json j = load(file);
  if (!j.contains("meta")) throw ArtifactError(file.string() + " has no meta block");
  check_meta(meta_from_json(j.at("meta")), expected, file, force);
  return j;
}

std::filesystem::path sidecar(const std::filesystem::path& file) {
  return std::filesystem::path(file.string() + ".meta.json");
}

void write_sidecar(const std::filesystem::path& file, const Meta& meta) {
  std::ofstream out(sidecar(file));
  if (!out) throw ArtifactError("cannot write " + sidecar(file).string());
  out << to_json(meta).dump(2) << '\n';
}

void check_sidecar(const std::filesystem::path& file, const Meta& expected, bool force) {
  if (!std::filesystem::exists(file)) throw ArtifactError("missing artifact: " + file.string());
  if (force && !std::filesystem::exists(sidecar(file))) return;
  check_meta(meta_from_json(load(sidecar(file))), expected, file, force);
}

void write_jsonl_line(std::ostream& out, const nlohmann::json& j) { out << j.dump() << '\n'; }

}  // namespace dclr::artifacts
