#include "dclr/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "dclr/config.hpp"
#include "dclr/errors.hpp"
#include "dclr/geo.hpp"

namespace dclr::data {
namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <class T>
bool parse_field(std::string_view text, T& out) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

// Reads a CSV with an exact header; calls row(fields, line_number) per data row.
template <class RowFn>
void read_csv(const std::filesystem::path& file, std::string_view header, std::size_t columns, RowFn&& row) {
  std::ifstream in(file);
  if (!in) throw ParseError(file.string(), 0, "cannot open file");
  std::string line;
  std::size_t lineno = 0;
  bool seen_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (!seen_header) {
      if (line != header) {
        throw ParseError(file.string(), lineno, "expected header '" + std::string(header) + "'");
      }
      seen_header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != columns) {
      throw ParseError(file.string(), lineno,
                       "expected " + std::to_string(columns) + " fields, got " + std::to_string(fields.size()));
    }
    row(fields, lineno);
  }
  if (!seen_header) throw ParseError(file.string(), 1, "missing header");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

PoiCatalog::PoiCatalog(std::vector<Poi> pois) : pois_(std::move(pois)) {
  std::set<CategoryId> cats;
  by_id_.reserve(pois_.size());
  for (std::size_t i = 0; i < pois_.size(); ++i) {
    const Poi& p = pois_[i];
    if (!(p.lon >= -180.0 && p.lon <= 180.0) || !(p.lat >= -90.0 && p.lat <= 90.0)) {
      throw ContractError("POI " + std::to_string(p.id) + " has coordinates out of range");
    }
    if (!by_id_.emplace(p.id, static_cast<int>(i)).second) {
      throw ContractError("duplicate POI id " + std::to_string(p.id));
    }
    cats.insert(p.category);
  }
  categories_.assign(cats.begin(), cats.end());
  category_index_.reserve(pois_.size());
  for (const Poi& p : pois_) {
    const auto it = std::lower_bound(categories_.begin(), categories_.end(), p.category);
    category_index_.push_back(static_cast<int>(it - categories_.begin()));
  }
}

std::optional<int> PoiCatalog::find(PoiId id) const {
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::size_t Dataset::n_checkins() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.size();
  return n;
}

Dataset load_checkins(const std::filesystem::path& checkin_file, const std::filesystem::path& poi_file) {
  std::vector<Poi> pois;
  read_csv(poi_file, "poi_id,lat,lon,category_id", 4, [&](const auto& f, std::size_t line) {
    Poi p;
    if (!parse_field(f[0], p.id) || !parse_field(f[1], p.lat) || !parse_field(f[2], p.lon) ||
        !parse_field(f[3], p.category)) {
      throw ParseError(poi_file.string(), line, "malformed POI row");
    }
    if (!(p.lat >= -90.0 && p.lat <= 90.0) || !(p.lon >= -180.0 && p.lon <= 180.0)) {
      throw ParseError(poi_file.string(), line, "coordinates out of range");
    }
    pois.push_back(p);
  });
  Dataset d;
  try {
    d.catalog = PoiCatalog(std::move(pois));
  } catch (const ContractError& e) {
    throw ParseError(poi_file.string(), 0, e.what());
  }

  std::map<UserId, Trajectory> by_user;
  read_csv(checkin_file, "user_id,poi_id,timestamp", 3, [&](const auto& f, std::size_t line) {
    UserId user = 0;
    PoiId poi = 0;
    Timestamp ts = 0;
    if (!parse_field(f[0], user) || !parse_field(f[1], poi) || !parse_field(f[2], ts)) {
      throw ParseError(checkin_file.string(), line, "malformed check-in row");
    }
    if (ts < 0) throw ParseError(checkin_file.string(), line, "negative timestamp");
    const auto idx = d.catalog.find(poi);
    if (!idx) {
      throw ReferentialError(checkin_file.string() + ":" + std::to_string(line) + ": unknown POI " +
                             std::to_string(poi));
    }
    auto& traj = by_user[user];
    traj.user = user;
    traj.checkins.push_back(CheckIn{user, *idx, ts});
  });
  d.trajectories.reserve(by_user.size());
  for (auto& [user, traj] : by_user) {
    std::stable_sort(traj.checkins.begin(), traj.checkins.end(),
                     [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });
    d.trajectories.push_back(std::move(traj));
  }
  return d;
}

void write_checkins(const Dataset& d, const std::filesystem::path& checkin_file,
                    const std::filesystem::path& poi_file) {
  {
    std::ofstream out(poi_file);
    if (!out) throw Error("cannot write " + poi_file.string());
    out << "poi_id,lat,lon,category_id\n";
    for (const Poi& p : d.catalog.pois()) {
      out << p.id << ',' << format_double(p.lat) << ',' << format_double(p.lon) << ',' << p.category << '\n';
    }
  }
  std::ofstream out(checkin_file);
  if (!out) throw Error("cannot write " + checkin_file.string());
  out << "user_id,poi_id,timestamp\n";
  for (const auto& t : d.trajectories) {
    for (const auto& c : t.checkins) {
      out << c.user << ',' << d.catalog[static_cast<std::size_t>(c.poi)].id << ',' << c.timestamp << '\n';
    }
  }
}

Dataset filter_sparse(const Dataset& d, std::size_t min_user_checkins, std::size_t min_poi_visits) {
  if (min_user_checkins < 1 || min_poi_visits < 1) throw ConfigError("filter thresholds must be >= 1");
  const std::size_t n_users = d.n_users();
  const std::size_t n_pois = d.n_pois();
  std::vector<char> user_alive(n_users, 1);
  std::vector<char> poi_alive(n_pois, 1);

  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t u = 0; u < n_users; ++u) {
      if (!user_alive[u]) continue;
      std::size_t count = 0;
      for (const auto& c : d.trajectories[u].checkins) count += poi_alive[static_cast<std::size_t>(c.poi)];
      if (count < min_user_checkins) {
        user_alive[u] = 0;
        changed = true;
      }
    }
    std::vector<std::size_t> visits(n_pois, 0);
    for (std::size_t u = 0; u < n_users; ++u) {
      if (!user_alive[u]) continue;
      for (const auto& c : d.trajectories[u].checkins) ++visits[static_cast<std::size_t>(c.poi)];
    }
    for (std::size_t p = 0; p < n_pois; ++p) {
      if (poi_alive[p] && visits[p] < min_poi_visits) {
        poi_alive[p] = 0;
        changed = true;
      }
    }
  }

  std::vector<int> remap(n_pois, -1);
  std::vector<Poi> kept;
  for (std::size_t p = 0; p < n_pois; ++p) {
    if (!poi_alive[p]) continue;
    remap[p] = static_cast<int>(kept.size());
    kept.push_back(d.catalog[p]);
  }
  Dataset out;
  out.catalog = PoiCatalog(std::move(kept));
  for (std::size_t u = 0; u < n_users; ++u) {
    if (!user_alive[u]) continue;
    Trajectory t{d.trajectories[u].user, {}};
    for (const auto& c : d.trajectories[u].checkins) {
      const int np = remap[static_cast<std::size_t>(c.poi)];
      if (np >= 0) t.checkins.push_back(CheckIn{c.user, np, c.timestamp});
    }
    out.trajectories.push_back(std::move(t));
  }
  if (out.trajectories.empty() || out.catalog.size() == 0) {
    throw EmptyDatasetError("no users or POIs survive filtering (" + std::to_string(min_user_checkins) + ", " +
                            std::to_string(min_poi_visits) + ")");
  }
  return out;
}

Split split_leave_one_out(const Dataset& d, std::size_t seq_cap) {
  if (seq_cap < 2) throw ConfigError("seq_cap must be >= 2");
  Split s;
  s.train.catalog = d.catalog;
  s.train.trajectories.reserve(d.n_users());
  s.test.reserve(d.n_users());
  for (const auto& t : d.trajectories) {
    if (t.size() < 2) {
      throw SplitError("user " + std::to_string(t.user) + " has fewer than 2 check-ins");
    }
    const std::size_t first = t.size() > seq_cap ? t.size() - seq_cap : 0;
    Trajectory train{t.user, {}};
    train.checkins.assign(t.checkins.begin() + static_cast<std::ptrdiff_t>(first), t.checkins.end() - 1);
    s.test.push_back(t.checkins.back());
    s.train.trajectories.push_back(std::move(train));
  }
  return s;
}

int discretize_time(Timestamp t) {
  constexpr Timestamp kDay = 86400;
  constexpr Timestamp kWeek = 7 * kDay;
  // 1970-01-01 was a Thursday, i.e. 3 days after the Monday origin.
  Timestamp in_week = (t + 3 * kDay) % kWeek;
  if (in_week < 0) in_week += kWeek;
  return static_cast<int>(in_week / 3600);
}

SynthConfig load_synth_config(const std::filesystem::path& file) {
  config::ExperimentConfig cfg;
  for (const auto& kv : config::read_key_values(file)) {
    try {
      config::set_key(cfg, kv.key, kv.value);
    } catch (const ConfigError& e) {
      throw ConfigError(file.string() + ":" + std::to_string(kv.line) + ": " + e.what());
    }
  }
  SynthConfig s = cfg.synth;
  s.seed = cfg.seed;
  return s;
}

namespace {

Dataset generate(const SynthConfig& cfg, std::uint64_t seed, SyntheticTruth* truth) {
  if (cfg.users == 0 || cfg.pois == 0) throw ConfigError("synthetic data needs users > 0 and pois > 0");
  if (cfg.categories == 0 || cfg.clusters == 0 || cfg.profiles == 0 || cfg.checkins_per_user == 0) {
    throw ConfigError("categories, clusters, profiles and checkins_per_user must be > 0");
  }
  if (cfg.pois < cfg.clusters) throw ConfigError("need at least one POI per cluster");
  if (!(cfg.cluster_radius_km > 0.0) || !(cfg.mean_gap_hours > 0.0)) {
    throw ConfigError("cluster_radius_km and mean_gap_hours must be > 0");
  }
  if (!(cfg.revisit_weight > 0.0)) throw ConfigError("revisit_weight must be > 0");
  if (!(cfg.off_profile_weight > 0.0)) throw ConfigError("off_profile_weight must be > 0");
  if (!(cfg.popularity_sigma >= 0.0)) throw ConfigError("popularity_sigma must be >= 0");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Cluster centers, kept far apart from each other.
  const double min_sep = std::max(1000.0, 20.0 * cfg.cluster_radius_km);
  std::vector<geo::LonLat> centers;
  for (std::size_t k = 0; k < cfg.clusters; ++k) {
    geo::LonLat c;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      c = {-170.0 + 340.0 * unit(rng), -50.0 + 100.0 * unit(rng)};
      bool ok = true;
      for (const auto& other : centers) ok = ok && geo::haversine(c, other) >= min_sep;
      if (ok) break;
    }
    centers.push_back(c);
  }

  std::lognormal_distribution<double> popularity(0.0, cfg.popularity_sigma);
  std::vector<Poi> pois;
  std::vector<double> pop(cfg.pois);
  std::vector<std::vector<int>> cluster_pois(cfg.clusters);
  for (std::size_t p = 0; p < cfg.pois; ++p) {
    const std::size_t k = p % cfg.clusters;
    const double bearing = 2.0 * std::numbers::pi * unit(rng);
    const double r = cfg.cluster_radius_km * std::sqrt(unit(rng));
    const geo::LonLat loc = geo::destination(centers[k], bearing, r);
    const auto category = static_cast<CategoryId>((p / cfg.clusters) % cfg.categories);
    pois.push_back(Poi{static_cast<PoiId>(p), loc.lon, loc.lat, category});
    pop[p] = popularity(rng);
    cluster_pois[k].push_back(static_cast<int>(p));
  }

  // Profile k concentrates on categories c with c % profiles == k.
  auto preference = [&](std::size_t profile, CategoryId c) {
    return static_cast<std::size_t>(c) % cfg.profiles == profile ? 1.0 : cfg.off_profile_weight;
  };

  Dataset d;
  d.catalog = PoiCatalog(std::move(pois));
  std::exponential_distribution<double> gap(1.0 / cfg.mean_gap_hours);
  const Timestamp origin = 1672617600;  // 2023-01-02 00:00 UTC, a Monday
  for (std::size_t u = 0; u < cfg.users; ++u) {
    const std::size_t k = u % cfg.clusters;
    const std::size_t profile = (u / cfg.clusters) % cfg.profiles;
    std::vector<double> w;
    w.reserve(cluster_pois[k].size());
    for (int p : cluster_pois[k]) {
      w.push_back(pop[static_cast<std::size_t>(p)] * preference(profile, d.catalog[static_cast<std::size_t>(p)].category));
    }
    std::vector<bool> seen(w.size(), false);
    Trajectory t{static_cast<UserId>(u), {}};
    double hours = 24.0 * 7.0 * unit(rng);
    for (std::size_t i = 0; i < cfg.checkins_per_user; ++i) {
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      const std::size_t slot = pick(rng);
      const int poi = cluster_pois[k][slot];
      if (!seen[slot]) {
        seen[slot] = true;
        w[slot] *= cfg.revisit_weight;
      }
      t.checkins.push_back(CheckIn{t.user, poi, origin + static_cast<Timestamp>(hours * 3600.0)});
      hours += 0.25 + gap(rng);
    }
    d.trajectories.push_back(std::move(t));
    if (truth) {
      truth->user_cluster.push_back(k);
      truth->user_profile.push_back(profile);
    }
  }
  if (truth) {
    truth->centers.clear();
    for (const auto& c : centers) truth->centers.emplace_back(c.lon, c.lat);
  }
  return d;
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) { return generate(cfg, seed, nullptr); }

SyntheticTruth synthetic_truth(const SynthConfig& cfg, std::uint64_t seed) {
  SyntheticTruth truth;
  generate(cfg, seed, &truth);
  return truth;
}

}  // namespace dclr::data
