#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dclr/commands.hpp"
#include "dclr/config.hpp"
#include "dclr/errors.hpp"

namespace {

using dclr::config::ExperimentConfig;
using dclr::pipeline::StageOptions;

int run(int argc, char** argv) {
  CLI::App app{"Decentralized collaborative next-POI recommendation simulator"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  StageOptions opt;
  std::string dir = opt.dir.string();
  app.add_option("-c,--config", config_file, "key = value config file; flags override it")->check(CLI::ExistingFile);
  app.add_option("-o,--out", dir, "artifact directory")->capture_default_str();
  app.add_flag("--force", opt.force, "accept artifacts produced under a different config hash or seed");

  std::map<std::string, std::string> overrides;
  const ExperimentConfig defaults;
  for (const auto& key : dclr::config::keys()) {
    app.add_option_function<std::string>(
           "--" + key.name, [&overrides, name = key.name](const std::string& v) { overrides[name] = v; },
           key.help + " (default " + key.get(defaults) + ")")
        ->type_name("VALUE");
  }

  using Cmd = int (*)(const ExperimentConfig&, const StageOptions&);
  const std::pair<const char*, std::pair<const char*, Cmd>> commands[] = {
      {"synth", {"generate a synthetic check-in dataset", dclr::pipeline::cmd_synth}},
      {"pretrain", {"server-side pretraining of POI embeddings", dclr::pipeline::cmd_pretrain}},
      {"neighbors", {"privacy-aware neighbor identification", dclr::pipeline::cmd_neighbors}},
      {"train", {"collaborative on-device training", dclr::pipeline::cmd_train}},
      {"eval", {"leave-one-out HR@k / NDCG@k evaluation", dclr::pipeline::cmd_eval}},
      {"pipeline", {"all stages in order", dclr::pipeline::cmd_pipeline}},
  };
  Cmd chosen = nullptr;
  for (const auto& [name, entry] : commands) {
    auto* sub = app.add_subcommand(name, entry.first);
    sub->callback([&chosen, fn = entry.second] { chosen = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  ExperimentConfig cfg;
  if (!config_file.empty()) cfg = dclr::config::load_config(config_file);
  for (const auto& [key, value] : overrides) dclr::config::set_key(cfg, key, value);
  opt.dir = dir;
  return chosen(cfg, opt);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dclr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const dclr::ArtifactError& e) {
    std::cerr << "artifact error: " << e.what() << '\n';
    return 3;
  } catch (const dclr::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
