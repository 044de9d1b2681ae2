#include "dclr/recommender.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dclr/errors.hpp"
#include "dclr/geo.hpp"

namespace dclr::recommender {

using numerics::ParamStore;
using numerics::Tape;
using numerics::Var;

namespace {

geo::LonLat where(const data::PoiCatalog& catalog, int poi) {
  const auto& p = catalog[static_cast<std::size_t>(poi)];
  return {p.lon, p.lat};
}

double hours_between(data::Timestamp a, data::Timestamp b) {
  return std::abs(static_cast<double>(a - b)) / 3600.0;
}

Mat uniform(Eigen::Index rows, Eigen::Index cols, double range, Rng& rng) {
  std::uniform_real_distribution<double> u(-range, range);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

void check_indices(const SequenceContext& ctx, const CoreParams& p) {
  for (int poi : ctx.pois) {
    if (poi < 0 || static_cast<std::size_t>(poi) >= p.n_pois()) {
      throw ContractError("POI index " + std::to_string(poi) + " outside the embedding table");
    }
  }
}

}  // namespace

CoreParams::CoreParams(ParamStore store) : store_(std::move(store)) {
  for (const auto* key : {&kPoiEmb, &kTimeEmb, &kUnitSpatial, &kUnitTemporal, &kWq, &kWk, &kWv}) {
    if (!store_.contains(*key)) throw ContractError("core parameters lack '" + *key + "'");
  }
  if (store_.size() != 7) throw ContractError("core parameters hold unexpected entries");
  const auto d = store_.at(kPoiEmb).cols();
  auto expect = [&](const std::string& key, Eigen::Index rows, Eigen::Index cols) {
    const Mat& m = store_.at(key);
    if (m.rows() != rows || m.cols() != cols) throw ContractError("core parameter '" + key + "' has wrong shape");
  };
  expect(kTimeEmb, data::kTimeSlots, d);
  expect(kUnitSpatial, 1, d);
  expect(kUnitTemporal, 1, d);
  expect(kWq, d, d);
  expect(kWk, d, d);
  expect(kWv, d, d);
}

CoreParams CoreParams::zeros(std::size_t n_pois, int d) {
  ParamStore s;
  s.add(kPoiEmb, Mat::Zero(static_cast<Eigen::Index>(n_pois), d));
  s.add(kTimeEmb, Mat::Zero(data::kTimeSlots, d));
  s.add(kUnitSpatial, Mat::Zero(1, d));
  s.add(kUnitTemporal, Mat::Zero(1, d));
  s.add(kWq, Mat::Zero(d, d));
  s.add(kWk, Mat::Zero(d, d));
  s.add(kWv, Mat::Zero(d, d));
  return CoreParams(std::move(s));
}

CoreParams CoreParams::random(std::size_t n_pois, int d, double range, Rng& rng) {
  ParamStore s;
  s.add(kPoiEmb, uniform(static_cast<Eigen::Index>(n_pois), d, range, rng));
  s.add(kTimeEmb, uniform(data::kTimeSlots, d, range, rng));
  // Gaps enter unscaled (km, hours); a random sign here would saturate every softmax.
  s.add(kUnitSpatial, Mat::Zero(1, d));
  s.add(kUnitTemporal, Mat::Zero(1, d));
  s.add(kWq, uniform(d, d, range, rng));
  s.add(kWk, uniform(d, d, range, rng));
  s.add(kWv, uniform(d, d, range, rng));
  return CoreParams(std::move(s));
}

SequenceContext make_context(const data::Trajectory& t, const data::PoiCatalog& catalog) {
  SequenceContext ctx;
  const auto m = static_cast<Eigen::Index>(t.size());
  ctx.dist_km = Mat::Zero(m, m);
  ctx.gap_hours = Mat::Zero(m, m);
  for (const auto& c : t.checkins) {
    if (c.poi < 0 || static_cast<std::size_t>(c.poi) >= catalog.size()) {
      throw ContractError("check-in POI index outside catalog");
    }
    ctx.pois.push_back(c.poi);
    ctx.slots.push_back(data::discretize_time(c.timestamp));
    ctx.times.push_back(c.timestamp);
  }
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = a + 1; b < m; ++b) {
      const double km = geo::haversine(where(catalog, ctx.pois[a]), where(catalog, ctx.pois[b]));
      const double h = hours_between(ctx.times[a], ctx.times[b]);
      ctx.dist_km(a, b) = ctx.dist_km(b, a) = km;
      ctx.gap_hours(a, b) = ctx.gap_hours(b, a) = h;
    }
  }
  return ctx;
}

Mat embed_sequence(const SequenceContext& ctx, const CoreParams& p) {
  check_indices(ctx, p);
  Mat x(static_cast<Eigen::Index>(ctx.size()), p.dim());
  for (std::size_t m = 0; m < ctx.size(); ++m) {
    x.row(static_cast<Eigen::Index>(m)) = p.poi_emb().row(ctx.pois[m]) + p.time_emb().row(ctx.slots[m]);
  }
  return x;
}

Mat embed_sequence(const data::Trajectory& t, const CoreParams& p) {
  Mat x(static_cast<Eigen::Index>(t.size()), p.dim());
  for (std::size_t m = 0; m < t.size(); ++m) {
    const int poi = t.checkins[m].poi;
    if (poi < 0 || static_cast<std::size_t>(poi) >= p.n_pois()) {
      throw ContractError("POI index " + std::to_string(poi) + " outside the embedding table");
    }
    x.row(static_cast<Eigen::Index>(m)) =
        p.poi_emb().row(poi) + p.time_emb().row(data::discretize_time(t.checkins[m].timestamp));
  }
  return x;
}

Mat relation_matrix(const SequenceContext& ctx, const CoreParams& p) {
  return ctx.dist_km * p.unit_spatial().sum() + ctx.gap_hours * p.unit_temporal().sum();
}

Mat relation_matrix(const data::Trajectory& t, const data::PoiCatalog& catalog, const CoreParams& p) {
  return relation_matrix(make_context(t, catalog), p);
}

Mat self_attention(const Mat& x, const Mat& rel, const CoreParams& p) {
  if (rel.rows() != x.rows() || rel.cols() != x.rows() || x.cols() != p.dim()) {
    throw ContractError("self_attention: shape mismatch");
  }
  const Mat q = x * p.w_q();
  const Mat k = x * p.w_k();
  const Mat v = x * p.w_v();
  const Mat logits = (q * k.transpose() + rel) / std::sqrt(static_cast<double>(p.dim()));
  return numerics::softmax_rows(logits) * v;
}

CandidateGaps candidate_gaps(const SequenceContext& ctx, std::size_t history, std::span<const int> cands,
                             data::Timestamp query_time, const data::PoiCatalog& catalog) {
  if (history > ctx.size()) throw ContractError("candidate_gaps: history longer than sequence");
  const auto h = static_cast<Eigen::Index>(cands.size());
  const auto m = static_cast<Eigen::Index>(history);
  CandidateGaps g{Mat(h, m), Mat(h, m)};
  for (Eigen::Index k = 0; k < m; ++k) {
    const double hours = hours_between(query_time, ctx.times[k]);
    const geo::LonLat visited = where(catalog, ctx.pois[k]);
    for (Eigen::Index c = 0; c < h; ++c) {
      g.dist_km(c, k) = geo::haversine(where(catalog, cands[c]), visited);
      g.gap_hours(c, k) = hours;
    }
  }
  return g;
}

Eigen::VectorXd score_candidates(const Mat& e_u, const CandidateGaps& gaps, std::span<const int> cands,
                                 const CoreParams& p) {
  if (cands.empty()) throw ContractError("score_candidates: empty candidate list");
  const auto h = static_cast<Eigen::Index>(cands.size());
  if (gaps.dist_km.rows() != h || gaps.dist_km.cols() != e_u.rows()) {
    throw ContractError("score_candidates: gap matrix shape mismatch");
  }
  Mat e_cand(h, p.dim());
  for (Eigen::Index c = 0; c < h; ++c) {
    if (cands[c] < 0 || static_cast<std::size_t>(cands[c]) >= p.n_pois()) {
      throw ContractError("candidate index outside the embedding table");
    }
    e_cand.row(c) = p.poi_emb().row(cands[c]);
  }
  const Mat logits = (e_cand * e_u.transpose() + gaps.dist_km * p.unit_spatial().sum() +
                      gaps.gap_hours * p.unit_temporal().sum()) /
                     std::sqrt(static_cast<double>(p.dim()));
  return numerics::softmax_cols(logits).rowwise().sum();
}

Eigen::VectorXd score(const SequenceContext& ctx, std::span<const int> cands, data::Timestamp query_time,
                      const data::PoiCatalog& catalog, const CoreParams& p) {
  const Mat e_u = self_attention(embed_sequence(ctx, p), relation_matrix(ctx, p), p);
  return score_candidates(e_u, candidate_gaps(ctx, ctx.size(), cands, query_time, catalog), cands, p);
}

double poi_loss(std::span<const ScoredTarget> scored) {
  constexpr double lo = 1e-12;
  constexpr double hi = 1.0 - 1e-12;
  auto sig = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  double total = 0.0;
  for (const auto& s : scored) {
    if (s.negatives.empty()) throw ContractError("poi_loss: each positive needs at least one negative");
    double neg = 0.0;
    for (double a : s.negatives) neg += std::log(std::clamp(1.0 - sig(a), lo, hi));
    total -= std::log(std::clamp(sig(s.positive), lo, hi)) + neg / static_cast<double>(s.negatives.size());
  }
  if (!std::isfinite(total)) throw NumericError("poi_loss", "non-finite POI loss");
  return total;
}

Var poi_loss_graph(Tape& tape, const ParamStore& p, const SequenceContext& ctx, const data::PoiCatalog& catalog,
                   std::span<const TargetSample> samples, DropoutSpec dropout) {
  if (samples.empty()) throw ContractError("poi_loss_graph: no targets");
  const Var poi = tape.param(p, kPoiEmb);
  const Var time = tape.param(p, kTimeEmb);
  const Var sum_s = numerics::sum(tape.param(p, kUnitSpatial));
  const Var sum_t = numerics::sum(tape.param(p, kUnitTemporal));
  const Eigen::Index d = p.at(kPoiEmb).cols();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const bool drop = dropout.rng != nullptr && dropout.rate > 0.0;

  std::size_t reach = 0;
  for (const auto& s : samples) {
    if (s.target < 1 || s.target >= ctx.size()) throw ContractError("poi_loss_graph: target outside sequence");
    if (s.negatives.empty()) throw ContractError("poi_loss_graph: target without negatives");
    reach = std::max(reach, s.target);
  }
  const std::span<const int> pois(ctx.pois.data(), reach);
  const std::span<const int> slots(ctx.slots.data(), reach);
  Var x = add(gather_rows(poi, pois), gather_rows(time, slots));
  if (drop) x = mul(x, tape.constant(numerics::dropout_mask(x.rows(), x.cols(), dropout.rate, *dropout.rng)));
  const Var q = matmul(x, tape.param(p, kWq));
  const Var kt = transpose(matmul(x, tape.param(p, kWk)));
  const Var v = matmul(x, tape.param(p, kWv));

  Var total;
  for (const auto& s : samples) {
    const auto m = static_cast<Eigen::Index>(s.target);
    const Var rel = add(mul_scalar(tape.constant(ctx.dist_km.topLeftCorner(m, m)), sum_s),
                        mul_scalar(tape.constant(ctx.gap_hours.topLeftCorner(m, m)), sum_t));
    const Var logits = scale(add(matmul(slice_rows(q, 0, m), slice_block(kt, 0, 0, d, m)), rel), inv_sqrt_d);
    Var e_u = matmul(softmax_rows(logits), slice_rows(v, 0, m));
    if (drop) e_u = mul(e_u, tape.constant(numerics::dropout_mask(m, d, dropout.rate, *dropout.rng)));

    std::vector<int> cands;
    cands.reserve(1 + s.negatives.size());
    cands.push_back(ctx.pois[s.target]);
    cands.insert(cands.end(), s.negatives.begin(), s.negatives.end());
    const CandidateGaps gaps = candidate_gaps(ctx, s.target, cands, ctx.times[s.target], catalog);
    const Var cand_rel = add(mul_scalar(tape.constant(gaps.dist_km), sum_s),
                             mul_scalar(tape.constant(gaps.gap_hours), sum_t));
    const Var cand_logits = scale(add(matmul(gather_rows(poi, cands), transpose(e_u)), cand_rel), inv_sqrt_d);
    const Var alpha = sum_rows(softmax_cols(cand_logits));

    const auto n_neg = static_cast<Eigen::Index>(s.negatives.size());
    const Var pos = log(clamp(sigmoid(slice_rows(alpha, 0, 1)), 1e-12, 1.0 - 1e-12));
    const Var neg = log(clamp(sigmoid(scale(slice_rows(alpha, 1, n_neg), -1.0)), 1e-12, 1.0 - 1e-12));
    const Var term = scale(add(pos, scale(numerics::sum(neg), 1.0 / static_cast<double>(n_neg))), -1.0);
    total = total.tape() ? add(total, term) : term;
  }
  return total;
}

numerics::LossFn poi_loss_fn(const SequenceContext& ctx, const data::PoiCatalog& catalog,
                             std::vector<TargetSample> samples) {
  return [&ctx, &catalog, samples = std::move(samples)](Tape& tape, const ParamStore& p) {
    return poi_loss_graph(tape, p, ctx, catalog, samples);
  };
}

std::vector<int> unvisited_pois(const SequenceContext& ctx, std::size_t n_pois) {
  std::vector<char> seen(n_pois, 0);
  for (int poi : ctx.pois) seen[static_cast<std::size_t>(poi)] = 1;
  std::vector<int> out;
  for (std::size_t i = 0; i < n_pois; ++i) {
    if (!seen[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

LocalEpoch train_local_epoch(const CoreParams& params, const SequenceContext& ctx, const data::PoiCatalog& catalog,
                             std::span<const int> unvisited, const LocalTrainConfig& cfg, Rng& rng) {
  numerics::Optimizer opt({cfg.optimizer, cfg.lr});
  return train_local_epoch(params, ctx, catalog, unvisited, cfg, rng, opt);
}

LocalEpoch train_local_epoch(const CoreParams& params, const SequenceContext& ctx, const data::PoiCatalog& catalog,
                             std::span<const int> unvisited, const LocalTrainConfig& cfg, Rng& rng,
                             numerics::Optimizer& opt) {
  if (ctx.size() < 2) throw ContractError("train_local_epoch: trajectory needs at least 2 check-ins");
  if (cfg.batch == 0 || cfg.n_neg == 0) throw ConfigError("batch and n_neg must be >= 1");

  std::vector<std::size_t> targets(ctx.size() - 1);
  std::iota(targets.begin(), targets.end(), std::size_t{1});
  std::shuffle(targets.begin(), targets.end(), rng);

  // Draw from unvisited POIs; a user who visited everything falls back to any other POI.
  std::vector<int> fallback;
  std::span<const int> pool = unvisited;
  if (pool.empty()) {
    fallback.resize(catalog.size());
    std::iota(fallback.begin(), fallback.end(), 0);
    pool = fallback;
  }
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);

  LocalEpoch out{params, 0.0, targets.size()};
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < targets.size(); start += cfg.batch) {
    const std::size_t end = std::min(targets.size(), start + cfg.batch);
    std::vector<TargetSample> batch;
    for (std::size_t i = start; i < end; ++i) {
      TargetSample s{targets[i], {}};
      while (s.negatives.size() < cfg.n_neg) {
        const int cand = pool[pick(rng)];
        if (cand != ctx.pois[s.target] || pool.size() == 1) s.negatives.push_back(cand);
      }
      batch.push_back(std::move(s));
    }
    const DropoutSpec dropout{cfg.dropout, cfg.dropout > 0.0 ? &rng : nullptr};
    const auto g = numerics::grad(
        [&](Tape& tape, const ParamStore& p) { return poi_loss_graph(tape, p, ctx, catalog, batch, dropout); },
        out.params.store());
    loss_sum += g.loss;
    out.params = CoreParams(opt.step(out.params.store(), g.grads));
  }
  out.mean_loss = loss_sum / static_cast<double>(targets.size());
  return out;
}

}  // namespace dclr::recommender
