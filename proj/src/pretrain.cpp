#include "dclr/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dclr/errors.hpp"

namespace dclr::pretrain {

using numerics::ParamStore;
using numerics::Tape;
using numerics::Var;

namespace {

Mat uniform(Eigen::Index rows, Eigen::Index cols, double range, Rng& rng) {
  std::uniform_real_distribution<double> u(-range, range);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Uniform sample of min(k, pool.size()) distinct elements, in draw order.
std::vector<int> sample_without_replacement(std::vector<int> pool, std::size_t k, Rng& rng) {
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

double relative_change(double before, double after) {
  const double denom = std::max(std::abs(before), 1e-12);
  return std::abs(before - after) / denom;
}

}  // namespace

Alternation parse_alternation(const std::string& name) {
  if (name == "epoch") return Alternation::kEpoch;
  if (name == "batch") return Alternation::kBatch;
  throw ConfigError("unknown alternation '" + name + "' (expected epoch or batch)");
}

DistanceLabel distance_label(double km) {
  if (!(km >= 0.0)) throw ContractError("distance_label: distance must be >= 0");
  if (km <= 5.0) return DistanceLabel::kSmall;
  if (km <= 10.0) return DistanceLabel::kMedium;
  return DistanceLabel::kLarge;
}

ParamStore make_heads(std::size_t n_categories, int d, double range, Rng& rng) {
  ParamStore h;
  h.add(kWDp, uniform(1, kDistanceLabels, range, rng));
  h.add(kBDp, uniform(1, kDistanceLabels, range, rng));
  h.add(kWCp, uniform(d, d, range, rng));
  h.add(kCatEmb, uniform(static_cast<Eigen::Index>(n_categories), d, range, rng));
  return h;
}

std::vector<DpPair> sample_dp_pairs(const data::PoiCatalog& catalog, Rng& rng, std::size_t cap,
                                    const ExecPolicy& policy) {
  const std::size_t n = catalog.size();
  if (n < 2) throw ContractError("sample_dp_pairs: need at least 2 POIs");
  const std::uint64_t base = rng();
  std::vector<std::vector<DpPair>> per_anchor(n);
  for_each_index(n, policy, [&](std::size_t i) {
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(i)};
    Rng local(seq);
    const geo::LonLat a{catalog[i].lon, catalog[i].lat};
    std::vector<int> medium, large;
    auto& out = per_anchor[i];
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double km = haversine(a, {catalog[j].lon, catalog[j].lat});
      switch (distance_label(km)) {
        case DistanceLabel::kSmall:
          out.push_back({static_cast<int>(i), static_cast<int>(j), DistanceLabel::kSmall});
          break;
        case DistanceLabel::kMedium:
          medium.push_back(static_cast<int>(j));
          break;
        case DistanceLabel::kLarge:
          large.push_back(static_cast<int>(j));
          break;
      }
    }
    for (int j : sample_without_replacement(std::move(medium), cap, local)) {
      out.push_back({static_cast<int>(i), j, DistanceLabel::kMedium});
    }
    for (int j : sample_without_replacement(std::move(large), cap, local)) {
      out.push_back({static_cast<int>(i), j, DistanceLabel::kLarge});
    }
  });
  std::vector<DpPair> pairs;
  for (auto& v : per_anchor) pairs.insert(pairs.end(), v.begin(), v.end());
  return pairs;
}

Var dp_loss_graph(Tape& tape, const ParamStore& p, std::span<const DpPair> pairs) {
  if (pairs.empty()) throw ContractError("dp_loss: no pairs");
  std::vector<int> a, b;
  Mat onehot = Mat::Zero(static_cast<Eigen::Index>(pairs.size()), kDistanceLabels);
  a.reserve(pairs.size());
  b.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    a.push_back(pairs[i].a);
    b.push_back(pairs[i].b);
    onehot(static_cast<Eigen::Index>(i), static_cast<int>(pairs[i].label)) = 1.0;
  }
  const Var poi = tape.param(p, recommender::kPoiEmb);
  const Var dots = sum_rows(mul(gather_rows(poi, a), gather_rows(poi, b)));
  const Var logits = add_row(matmul(dots, tape.param(p, kWDp)), tape.param(p, kBDp));
  const Var logp = log(clamp(softmax_rows(logits), 1e-12, 1.0));
  return scale(sum(mul(logp, tape.constant(std::move(onehot)))), -1.0);
}

double dp_loss(std::span<const DpPair> pairs, const ParamStore& p) {
  const double v = numerics::evaluate([&](Tape& t, const ParamStore& s) { return dp_loss_graph(t, s, pairs); }, p);
  if (!std::isfinite(v)) throw NumericError("dp_loss", "non-finite distance-prediction loss");
  return v;
}

std::vector<CpSample> sample_cp_negatives(const data::PoiCatalog& catalog, std::span<const int> pois,
                                          std::size_t n_cp, Rng& rng) {
  const std::size_t n_cat = catalog.n_categories();
  if (n_cp < 1) throw ConfigError("N_CP must be >= 1");
  if (n_cat <= n_cp) {
    throw ConfigError("category loss needs more than N_CP=" + std::to_string(n_cp) + " categories, have " +
                      std::to_string(n_cat));
  }
  std::vector<CpSample> out;
  out.reserve(pois.size());
  std::vector<int> others;
  for (int poi : pois) {
    const int c = catalog.category_of(poi);
    others.clear();
    for (std::size_t k = 0; k < n_cat; ++k) {
      if (static_cast<int>(k) != c) others.push_back(static_cast<int>(k));
    }
    out.push_back(CpSample{poi, c, sample_without_replacement(others, n_cp, rng)});
  }
  return out;
}

Var cp_loss_graph(Tape& tape, const ParamStore& p, std::span<const CpSample> samples) {
  if (samples.empty()) throw ContractError("cp_loss: no samples");
  const std::size_t n_neg = samples.front().negatives.size();
  std::vector<int> pois, pos;
  std::vector<std::vector<int>> neg(n_neg);
  for (const auto& s : samples) {
    if (s.negatives.size() != n_neg || n_neg == 0) throw ContractError("cp_loss: ragged negative samples");
    pois.push_back(s.poi);
    pos.push_back(s.category);
    for (std::size_t k = 0; k < n_neg; ++k) neg[k].push_back(s.negatives[k]);
  }
  const Var cat = tape.param(p, kCatEmb);
  const Var pw = matmul(gather_rows(tape.param(p, recommender::kPoiEmb), pois), tape.param(p, kWCp));
  const Var f_pos = sigmoid(sum_rows(mul(pw, gather_rows(cat, pos))));
  Var denom;
  for (std::size_t k = 0; k < n_neg; ++k) {
    const Var e = exp(sigmoid(sum_rows(mul(pw, gather_rows(cat, neg[k])))));
    denom = denom.tape() ? add(denom, e) : e;
  }
  return sum(sub(log(denom), f_pos));
}

double cp_loss(std::span<const CpSample> samples, const ParamStore& p) {
  const double v = numerics::evaluate([&](Tape& t, const ParamStore& s) { return cp_loss_graph(t, s, samples); }, p);
  if (!std::isfinite(v)) throw NumericError("cp_loss", "non-finite category-prediction loss");
  return v;
}

double cp_loss(const data::PoiCatalog& catalog, const ParamStore& p, std::size_t n_cp, Rng& rng) {
  std::vector<int> all(catalog.size());
  std::iota(all.begin(), all.end(), 0);
  return cp_loss(sample_cp_negatives(catalog, all, n_cp, rng), p);
}

PretrainResult pretrain(const data::PoiCatalog& catalog, const PretrainConfig& cfg, Rng& rng) {
  if (catalog.size() == 0) throw ContractError("pretrain: empty catalog");
  if (cfg.batch == 0) throw ConfigError("pretrain batch must be >= 1");
  const bool use_cp = cfg.use_cp;
  if (use_cp && catalog.n_categories() <= cfg.n_cp) {
    throw ConfigError("category loss needs more than N_CP categories");
  }

  const auto core = recommender::CoreParams::random(catalog.size(), cfg.d, cfg.init_range, rng);
  ParamStore store = core.store();
  const ParamStore heads = make_heads(catalog.n_categories(), cfg.d, cfg.init_range, rng);
  for (const auto& [name, m] : heads.entries()) store.add(name, m);

  std::vector<DpPair> pairs;
  if (cfg.use_dp && cfg.max_epochs > 0 && catalog.size() >= 2) {
    pairs = sample_dp_pairs(catalog, rng, cfg.dp_cap, cfg.policy);
  }
  std::vector<int> pois(catalog.size());
  std::iota(pois.begin(), pois.end(), 0);

  numerics::Optimizer opt({cfg.optimizer, cfg.lr});
  PretrainResult result;

  // Mini-batch cursor over the POIs for the category loss; reshuffles on wrap.
  std::size_t cp_cursor = pois.size();
  double cp_sum = 0.0;
  std::size_t cp_count = 0;
  auto cp_step = [&] {
    if (cp_cursor >= pois.size()) {
      std::shuffle(pois.begin(), pois.end(), rng);
      cp_cursor = 0;
    }
    const std::span<const int> chunk(pois.data() + cp_cursor, std::min(cfg.batch, pois.size() - cp_cursor));
    cp_cursor += chunk.size();
    const auto samples = sample_cp_negatives(catalog, chunk, cfg.n_cp, rng);
    const double inv = 1.0 / static_cast<double>(samples.size());
    const auto g = numerics::grad(
        [&](Tape& t, const ParamStore& s) { return scale(cp_loss_graph(t, s, samples), inv); }, store);
    cp_sum += g.loss * static_cast<double>(samples.size());
    cp_count += samples.size();
    store = opt.step(store, g.grads);
  };
  const std::size_t cp_steps_per_epoch = (pois.size() + cfg.batch - 1) / cfg.batch;

  double previous = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    double total = 0.0;
    cp_sum = 0.0;
    cp_count = 0;
    if (!pairs.empty()) {
      std::shuffle(pairs.begin(), pairs.end(), rng);
      double loss_sum = 0.0;
      for (std::size_t start = 0; start < pairs.size(); start += cfg.batch) {
        const std::span<const DpPair> batch(pairs.data() + start, std::min(cfg.batch, pairs.size() - start));
        const double inv = 1.0 / static_cast<double>(batch.size());
        const auto g = numerics::grad(
            [&](Tape& t, const ParamStore& s) { return scale(dp_loss_graph(t, s, batch), inv); }, store);
        loss_sum += g.loss * static_cast<double>(batch.size());
        store = opt.step(store, g.grads);
        if (use_cp && cfg.alternation == Alternation::kBatch) cp_step();
      }
      result.dp_history.push_back(loss_sum / static_cast<double>(pairs.size()));
      total += result.dp_history.back();
    }
    if (use_cp && (cfg.alternation == Alternation::kEpoch || pairs.empty())) {
      cp_cursor = pois.size();
      for (std::size_t k = 0; k < cp_steps_per_epoch; ++k) cp_step();
    }
    if (use_cp) {
      result.cp_history.push_back(cp_sum / static_cast<double>(cp_count));
      total += result.cp_history.back();
    }
    result.epochs = epoch + 1;
    if (epoch > 0 && relative_change(previous, total) < cfg.tol) break;
    previous = total;
  }

  ParamStore out;
  for (const auto& [name, _] : core.store().entries()) out.add(name, store.at(name));
  result.params = recommender::CoreParams(std::move(out));
  return result;
}

}  // namespace dclr::pretrain
