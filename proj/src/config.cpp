#include "dclr/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dclr/errors.hpp"

namespace dclr::config {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("invalid value for '" + key + "': '" + text + "'");
  }
  return value;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, double>) {
    return format_double(v);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else {
    return std::to_string(v);
  }
}

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else {
    return parse_number<T>(key, text);
  }
}

template <class T>
KeyDef field(std::string name, std::string help, T ExperimentConfig::*member, bool hashed = true) {
  const std::string key = name;
  return KeyDef{
      std::move(name), std::move(help),
      [member, key](ExperimentConfig& c, const std::string& v) { c.*member = parse_value<T>(key, v); },
      [member](const ExperimentConfig& c) { return format_value(c.*member); }, hashed};
}

template <class T>
KeyDef synth_field(std::string name, std::string help, T data::SynthConfig::*member) {
  const std::string key = name;
  return KeyDef{
      std::move(name), std::move(help),
      [member, key](ExperimentConfig& c, const std::string& v) { c.synth.*member = parse_value<T>(key, v); },
      [member](const ExperimentConfig& c) { return format_value(c.synth.*member); }, true};
}

std::vector<KeyDef> build_keys() {
  using C = ExperimentConfig;
  std::vector<KeyDef> k;
  k.push_back(field("d", "latent dimension", &C::d));
  k.push_back(field("q", "neighbors per type", &C::q));
  k.push_back(field("mu", "weight of the aggregated neighbor model", &C::mu));
  k.push_back(field("epsilon", "privacy budget", &C::epsilon));
  k.push_back(field("lr", "on-device learning rate", &C::lr));
  k.push_back(field("dropout", "dropout rate on sequence layers", &C::dropout));
  k.push_back(field("batch", "targets per mini-batch", &C::batch));
  k.push_back(field("max_epochs", "maximum collaborative rounds", &C::max_epochs));
  k.push_back(field("n_neg", "negatives per positive in the POI loss", &C::n_neg));
  k.push_back(field("n_cp", "negative categories in the category loss", &C::n_cp));
  k.push_back(field("n_comb", "negatives from each model in the fusion loss", &C::n_comb));
  k.push_back(field("n_cand", "unvisited candidates per evaluation", &C::n_cand));
  k.push_back(field("seq_cap", "most recent check-ins kept per user", &C::seq_cap));
  k.push_back(field("threshold_km", "centroid coverage radius", &C::threshold_km));
  k.push_back(field("mim_steps", "fusion finetuning steps per round", &C::mim_steps));
  k.push_back(field("convergence_tol", "relative loss change that ends training", &C::convergence_tol));
  k.push_back(field("optimizer", "update rule for all training: sgd or adam", &C::optimizer));
  k.push_back(field("init_range", "uniform initialization half-width", &C::init_range));
  k.push_back(field("max_centroids", "cap on centroids per user", &C::max_centroids));
  k.push_back(field("centroid_floor_deg", "sensitivity floor for a single centroid", &C::centroid_floor_deg));
  k.push_back(field("pretrain_epochs", "maximum pretraining epochs", &C::pretrain_epochs));
  k.push_back(field("pretrain_lr", "server pretraining learning rate", &C::pretrain_lr));
  k.push_back(field("pretrain_batch", "pretraining mini-batch size", &C::pretrain_batch));
  k.push_back(field("dp_cap", "medium/large partners sampled per anchor", &C::dp_cap));
  k.push_back(field("pretrain_tol", "relative loss change that ends pretraining", &C::pretrain_tol));
  k.push_back(field("pretrain_alternation", "distance/category step interleaving: epoch or batch",
                    &C::pretrain_alternation));
  k.push_back(field("min_user_checkins", "drop users with fewer check-ins", &C::min_user_checkins));
  k.push_back(field("min_poi_visits", "drop POIs with fewer visits", &C::min_poi_visits));
  k.push_back(field("checkins_file", "check-in CSV (empty: synthesize)", &C::checkins_file));
  k.push_back(field("pois_file", "POI catalog CSV", &C::pois_file));
  k.push_back(synth_field("users", "synthetic users", &data::SynthConfig::users));
  k.push_back(synth_field("pois", "synthetic POIs", &data::SynthConfig::pois));
  k.push_back(synth_field("categories", "synthetic categories", &data::SynthConfig::categories));
  k.push_back(synth_field("clusters", "synthetic geographic clusters", &data::SynthConfig::clusters));
  k.push_back(synth_field("profiles", "synthetic category profiles", &data::SynthConfig::profiles));
  k.push_back(synth_field("checkins_per_user", "synthetic check-ins per user", &data::SynthConfig::checkins_per_user));
  k.push_back(synth_field("cluster_radius_km", "synthetic cluster radius", &data::SynthConfig::cluster_radius_km));
  k.push_back(synth_field("mean_gap_hours", "synthetic mean gap between check-ins", &data::SynthConfig::mean_gap_hours));
  k.push_back(synth_field("off_profile_weight", "synthetic weight of categories outside a user's profile",
                          &data::SynthConfig::off_profile_weight));
  k.push_back(synth_field("popularity_sigma", "synthetic log-normal spread of POI popularity",
                          &data::SynthConfig::popularity_sigma));
  k.push_back(synth_field("revisit_weight", "synthetic weight multiplier for already visited POIs",
                          &data::SynthConfig::revisit_weight));
  k.push_back(KeyDef{"ablation", "comma-separated ablations: -CP,-DP,-AN,-GN,-SN,-MIM,-PP",
                     [](C& c, const std::string& v) { c.ablations = parse_ablations(v); },
                     [](const C& c) { return format_ablations(c.ablations); }, true});
  k.push_back(field("seed", "master random seed", &C::seed));
  k.push_back(field("threads", "worker threads for device loops", &C::threads, false));
  return k;
}

}  // namespace

std::vector<KeyValue> read_key_values(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::vector<KeyValue> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(file.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    KeyValue kv{trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)),
                lineno};
    if (kv.key.empty()) {
      throw ConfigError(file.string() + ":" + std::to_string(lineno) + ": empty key");
    }
    out.push_back(std::move(kv));
  }
  return out;
}

Ablations parse_ablations(const std::string& spec) {
  Ablations a;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty() || item == "none") continue;
    if (item.front() == '-') item.erase(0, 1);
    std::transform(item.begin(), item.end(), item.begin(), [](unsigned char ch) { return std::toupper(ch); });
    if (item == "CP") a.no_cp = true;
    else if (item == "DP") a.no_dp = true;
    else if (item == "AN") a.no_neighbors = true;
    else if (item == "GN") a.no_geo = true;
    else if (item == "SN") a.no_semantic = true;
    else if (item == "MIM") a.no_mim = true;
    else if (item == "PP") a.no_privacy = true;
    else throw ConfigError("unknown ablation '" + item + "'");
  }
  return a;
}

std::string format_ablations(const Ablations& a) {
  std::string out;
  auto add = [&out](bool on, const char* label) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += label;
  };
  add(a.no_cp, "-CP");
  add(a.no_dp, "-DP");
  add(a.no_neighbors, "-AN");
  add(a.no_geo, "-GN");
  add(a.no_semantic, "-SN");
  add(a.no_mim, "-MIM");
  add(a.no_privacy, "-PP");
  return out.empty() ? "none" : out;
}

const std::vector<KeyDef>& keys() {
  static const std::vector<KeyDef> table = build_keys();
  return table;
}

void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& def : keys()) {
    if (def.name == key) {
      def.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig load_config(const std::filesystem::path& file, ExperimentConfig base) {
  for (const auto& kv : read_key_values(file)) {
    try {
      set_key(base, kv.key, kv.value);
    } catch (const ConfigError& e) {
      throw ConfigError(file.string() + ":" + std::to_string(kv.line) + ": " + e.what());
    }
  }
  return base;
}

std::string canonical_text(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> sorted;
  for (const auto& def : keys()) {
    if (def.hashed) sorted[def.name] = def.get(cfg);
  }
  std::string out;
  for (const auto& [k, v] : sorted) out += k + "=" + v + "\n";
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : canonical_text(cfg)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void validate(const ExperimentConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  require(c.d >= 1, "d must be >= 1");
  require(c.q >= 1, "q must be >= 1");
  require(c.mu >= 0.0 && c.mu <= 1.0, "mu must lie in [0,1]");
  require(c.epsilon > 0.0, "epsilon must be > 0");
  require(c.lr >= 0.0, "lr must be >= 0");
  require(c.dropout >= 0.0 && c.dropout < 1.0, "dropout must lie in [0,1)");
  require(c.batch >= 1, "batch must be >= 1");
  require(c.n_neg >= 1, "n_neg must be >= 1");
  require(c.n_cp >= 1, "n_cp must be >= 1");
  require(c.n_comb >= 1, "n_comb must be >= 1");
  require(c.n_cand >= 1, "n_cand must be >= 1");
  require(c.seq_cap >= 2, "seq_cap must be >= 2");
  require(c.threshold_km > 0.0, "threshold_km must be > 0");
  require(c.max_centroids >= 1, "max_centroids must be >= 1");
  require(c.centroid_floor_deg > 0.0, "centroid_floor_deg must be > 0");
  require(c.pretrain_batch >= 1, "pretrain_batch must be >= 1");
  require(c.min_user_checkins >= 1 && c.min_poi_visits >= 1, "filter thresholds must be >= 1");
  require(c.optimizer == "sgd" || c.optimizer == "adam", "optimizer must be sgd or adam");
  require(c.pretrain_alternation == "epoch" || c.pretrain_alternation == "batch",
          "pretrain_alternation must be epoch or batch");
  require(c.checkins_file.empty() == c.pois_file.empty(),
          "checkins_file and pois_file must be given together");
}

}  // namespace dclr::config
