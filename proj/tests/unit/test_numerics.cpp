#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dclr/errors.hpp"
#include "dclr/numerics.hpp"
#include "oracles.hpp"

using namespace dclr;
using namespace dclr::numerics;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double range = 0.5) {
  std::uniform_real_distribution<double> u(-range, range);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

TEST(Grad, HalfSquaredNorm) {
  Rng rng(1);
  ParamStore p;
  p.add("w", random_mat(3, 2, rng));
  const Gradient g = grad([](Tape& t, const ParamStore& s) {
    Var w = t.param(s, "w");
    return scale(sum(mul(w, w)), 0.5);
  }, p);
  EXPECT_NEAR(g.loss, 0.5 * p.at("w").squaredNorm(), 1e-15);
  EXPECT_TRUE(g.grads.at("w").isApprox(p.at("w"), 1e-15));
}

TEST(Grad, SigmoidAtZero) {
  ParamStore p;
  p.add("x", Mat::Zero(1, 1));
  const Gradient g = grad([](Tape& t, const ParamStore& s) { return sigmoid(t.param(s, "x")); }, p);
  EXPECT_DOUBLE_EQ(g.loss, 0.5);
  EXPECT_DOUBLE_EQ(g.grads.at("x")(0, 0), 0.25);
}

TEST(Grad, EveryPrimitiveMatchesFiniteDifferences) {
  Rng rng(7);
  const std::vector<int> rows{2, 0, 2, 1};
  auto loss = [&](Tape& t, const ParamStore& s) {
    Var a = t.param(s, "a");      // 3x4
    Var b = t.param(s, "b");      // 4x4
    Var r = t.param(s, "row");    // 1x4
    Var k = t.param(s, "k");      // 1x1
    Var x = add_row(matmul(a, b), r);
    Var y = mul(softmax_rows(x), sigmoid(transpose(softmax_cols(transpose(x)))));
    Var z = add(exp(scale(y, 0.3)), log(clamp(add(y, t.constant(Mat::Constant(3, 4, 1.0))), 1e-6, 10.0)));
    Var g = gather_rows(z, rows);
    Var w = sub(slice_rows(g, 1, 2), slice_block(g, 0, 0, 2, 4));
    Var v = mul_scalar(sum_rows(mul(w, w)), k);
    return add(sum(sum_cols(v)), sum(mul(slice_block(x, 0, 1, 3, 2), slice_block(x, 0, 2, 3, 2))));
  };
  for (int trial = 0; trial < 5; ++trial) {
    ParamStore p;
    p.add("a", random_mat(3, 4, rng));
    p.add("b", random_mat(4, 4, rng));
    p.add("row", random_mat(1, 4, rng));
    p.add("k", random_mat(1, 1, rng));
    const Gradient g = grad(loss, p);
    const auto check = oracle::check_gradient([&](const ParamStore& q) { return evaluate(loss, q); }, p, g.grads);
    EXPECT_LT(check.worst, 1e-6) << check.where;
  }
}

TEST(Grad, UnusedParametersGetExactZero) {
  ParamStore p;
  p.add("used", Mat::Constant(2, 2, 0.3));
  p.add("unused", Mat::Constant(3, 1, 0.7));
  const Gradient g = grad([](Tape& t, const ParamStore& s) { return sum(exp(t.param(s, "used"))); }, p);
  EXPECT_TRUE(g.grads.congruent(p));
  EXPECT_EQ(g.grads.at("unused"), Mat::Zero(3, 1));
}

TEST(Grad, NonFiniteLossRaisesNumericError) {
  ParamStore p;
  p.add("x", Mat::Zero(1, 1));
  try {
    grad([](Tape& t, const ParamStore& s) { return log(t.param(s, "x")); }, p);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.param(), "loss");
  }
  p.set("x", Mat::Constant(1, 1, std::numeric_limits<double>::quiet_NaN()));
  try {
    grad([](Tape& t, const ParamStore& s) { return sum(t.param(s, "x")); }, p);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.param(), "x");
  }
}

TEST(Softmax, AxesSumToOne) {
  Rng rng(3);
  const Mat a = random_mat(5, 7, rng, 30.0);
  const Mat r = softmax_rows(a);
  const Mat c = softmax_cols(a);
  EXPECT_GE(r.minCoeff(), 0.0);
  EXPECT_GE(c.minCoeff(), 0.0);
  for (Eigen::Index i = 0; i < r.rows(); ++i) EXPECT_NEAR(r.row(i).sum(), 1.0, 1e-9);
  for (Eigen::Index j = 0; j < c.cols(); ++j) EXPECT_NEAR(c.col(j).sum(), 1.0, 1e-9);
  const std::vector<double> row0(a.row(0).data(), a.row(0).data() + a.cols());
  std::vector<double> small(row0);
  for (double& v : small) v /= 30.0;
  const Mat rs = softmax_rows(Mat(a / 30.0));
  const auto expected = oracle::softmax(small);
  for (std::size_t j = 0; j < expected.size(); ++j) EXPECT_NEAR(rs(0, static_cast<Eigen::Index>(j)), expected[j], 1e-14);
}

TEST(SgdStep, Arithmetic) {
  ParamStore p, g;
  p.add("w", Mat::Constant(1, 1, 1.0));
  g.add("w", Mat::Constant(1, 1, 0.5));
  EXPECT_DOUBLE_EQ(sgd_step(p, g, 0.002).at("w")(0, 0), 0.999);
  EXPECT_EQ(sgd_step(p, g, 0.0), p);
}

TEST(SgdStep, TwoStepsEqualOneSummedStep) {
  Rng rng(5);
  ParamStore p, g1, g2;
  p.add("w", random_mat(2, 3, rng));
  g1.add("w", random_mat(2, 3, rng));
  g2.add("w", random_mat(2, 3, rng));
  const ParamStore twice = sgd_step(sgd_step(p, g1, 0.1), g2, 0.1);
  const ParamStore once = sgd_step(p, axpy(g1, 1.0, g2), 0.1);
  EXPECT_TRUE(twice.at("w").isApprox(once.at("w"), 1e-14));
}

TEST(SgdStep, ShapeMismatchIsContractError) {
  ParamStore p, g;
  p.add("w", Mat::Zero(2, 2));
  g.add("w", Mat::Zero(2, 3));
  EXPECT_THROW(sgd_step(p, g, 0.1), ContractError);
}

TEST(Optimizer, AdamMatchesScalarTranscription) {
  OptimizerConfig cfg{OptimizerKind::kAdam, 0.01, 0.9, 0.999, 1e-8};
  Optimizer opt(cfg);
  ParamStore p;
  p.add("w", Mat::Constant(1, 1, 0.5));
  double w = 0.5, m = 0.0, v = 0.0;
  const double grads[] = {0.3, -0.1, 2.0, 0.0};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    ParamStore gs;
    gs.add("w", Mat::Constant(1, 1, g));
    p = opt.step(p, gs);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    w -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.at("w")(0, 0), w, 1e-15);
  }
  EXPECT_EQ(opt.steps(), 4u);
}

TEST(Optimizer, SgdKindIsPlainStep) {
  Rng rng(9);
  ParamStore p, g;
  p.add("w", random_mat(3, 3, rng));
  g.add("w", random_mat(3, 3, rng));
  Optimizer opt({OptimizerKind::kSgd, 0.05});
  EXPECT_EQ(opt.step(p, g), sgd_step(p, g, 0.05));
  EXPECT_EQ(parse_optimizer("adam"), OptimizerKind::kAdam);
  EXPECT_EQ(optimizer_name(parse_optimizer("sgd")), "sgd");
  EXPECT_THROW(parse_optimizer("rmsprop"), ConfigError);
}

TEST(DropoutMask, RateZeroIsAllOnes) {
  Rng rng(1);
  EXPECT_EQ(dropout_mask(4, 5, 0.0, rng), Mat::Ones(4, 5));
}

TEST(DropoutMask, KeepFractionAndScale) {
  Rng rng(2);
  const Mat m = dropout_mask(1000, 100, 0.2, rng);
  const double kept = static_cast<double>((m.array() > 0.0).count()) / static_cast<double>(m.size());
  EXPECT_NEAR(kept, 0.8, 0.01);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double x = m.data()[i];
    ASSERT_TRUE(x == 0.0 || x == 1.25);
  }
}

TEST(DropoutMask, InvalidRate) {
  Rng rng(3);
  EXPECT_THROW(dropout_mask(2, 2, 1.0, rng), ConfigError);
  EXPECT_THROW(dropout_mask(2, 2, -0.1, rng), ConfigError);
}

TEST(ParamStore, ShapesFixedAtRegistration) {
  ParamStore p;
  p.add("w", Mat::Zero(2, 2));
  EXPECT_THROW(p.add("w", Mat::Zero(2, 2)), ContractError);
  EXPECT_THROW(p.set("w", Mat::Zero(3, 2)), ContractError);
  EXPECT_THROW(p.at("nope"), ContractError);
  p.set("w", Mat::Ones(2, 2));
  EXPECT_EQ(p.at("w"), Mat::Ones(2, 2));
  EXPECT_EQ(p.scalar_count(), 4u);
}

TEST(ParamStore, JsonRoundTripIsExact) {
  Rng rng(4);
  ParamStore p;
  p.add("a", random_mat(3, 2, rng));
  p.add("b", random_mat(1, 5, rng));
  p.mutable_at("a")(0, 0) = 1.0 / 3.0;
  const ParamStore back = param_store_from_json(nlohmann::json::parse(to_json(p).dump()));
  EXPECT_EQ(back, p);
}

TEST(ParamStore, RequireFiniteNamesEntry) {
  ParamStore p;
  p.add("ok", Mat::Zero(1, 1));
  p.add("bad", Mat::Constant(1, 1, std::numeric_limits<double>::infinity()));
  try {
    require_finite(p, "check");
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.param(), "bad");
  }
}
