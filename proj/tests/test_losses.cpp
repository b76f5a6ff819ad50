#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "retdm/gradcheck.hpp"
#include "retdm/losses.hpp"

using namespace retdm;

namespace {

Tensor v(std::vector<double> x, bool grad = false) { return Tensor::vector(std::move(x), grad); }

double eval(const std::function<Tensor(Tape&)>& f) {
  Tape t(Tape::Mode::inference);
  return f(t).item();
}

// Direct evaluation of -log(exp(-d0) / sum_i exp(-d_i)) over plain doubles.
double softmax_formula(double d0, const std::vector<double>& others) {
  double denom = std::exp(-d0);
  for (double d : others) denom += std::exp(-d);
  return -std::log(std::exp(-d0) / denom);
}

}  // namespace

TEST(Way1, GateClosedWhenTargetIsClosest) {
  // d0 = 0.5, d1 = 1.0
  const MetricBatchItem it{v({0, 0}), v({0.5, 0}), {v({0, 1})}, {v({0, 1})}};
  EXPECT_EQ(eval([&](Tape& t) { return metric_way1(t, it); }), 0.0);
}

TEST(Way1, SymmetricTieIsLn2) {
  const MetricBatchItem it{v({0, 0}), v({0, 1}), {v({1, 0})}, {v({1, 0})}};
  EXPECT_NEAR(eval([&](Tape& t) { return metric_way1(t, it); }), std::numbers::ln2, 1e-12);
}

TEST(Way1, DirectFormula) {
  const MetricBatchItem it{v({0, 0}), v({2, 0}), {v({0, 1})}, {v({0, 1})}};
  const double expected = softmax_formula(2.0, {1.0});
  EXPECT_NEAR(eval([&](Tape& t) { return metric_way1(t, it); }), expected, 1e-9);
  EXPECT_NEAR(expected, 1.0 + std::log1p(std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(expected, 1.3133, 5e-5);
}

TEST(Way1, GateMarginOpensTheGate) {
  const MetricBatchItem it{v({0, 0}), v({0.5, 0}), {v({0, 1})}, {v({0, 1})}};
  const double j = eval([&](Tape& t) { return metric_way1(t, it, 0.6); });
  EXPECT_NEAR(j, softmax_formula(0.5, {1.0}), 1e-9);
}

TEST(Way1, LargeDistancesStayFinite) {
  const MetricBatchItem it{v({0}), v({1000}), {v({1})}, {v({1})}};
  EXPECT_NEAR(eval([&](Tape& t) { return metric_way1(t, it); }), 999.0, 1e-9);
}

TEST(Way2, GateClosedWhenNeighborImagesAreFarther) {
  const MetricBatchItem it{v({0, 0}), v({0, 1}), {v({5, 5})}, {v({3, 3}), v({-4, 2})}};
  EXPECT_EQ(eval([&](Tape& t) { return metric_way2(t, it); }), 0.0);
}

TEST(Way2, SymmetricTieIsLn2) {
  const MetricBatchItem it{v({0, 0}), v({0, 1}), {v({0, 0})}, {v({1, 1})}};
  EXPECT_NEAR(eval([&](Tape& t) { return metric_way2(t, it); }), std::numbers::ln2, 1e-12);
}

TEST(Way2, SwappingRolesMirrorsWay1) {
  // A way-1 instance: anchor f_I against f_y and neighbor labels.
  const MetricBatchItem w1{v({0.1, -0.3}), v({1.2, 0.4}), {v({0.9, 0.2}), v({-1, 1})}, {v({7, 7}), v({8, 8})}};
  // The same geometry as way 2: anchor f_y, true image, neighbor images.
  const MetricBatchItem w2{w1.label_embedding, w1.image_embedding, {v({7, 7}), v({8, 8})}, w1.neighbor_labels};
  const double a = eval([&](Tape& t) { return metric_way1(t, w1); });
  const double b = eval([&](Tape& t) { return metric_way2(t, w2); });
  EXPECT_GT(a, 0.0);
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(Joint, LambdaZeroIsWay1Exactly) {
  const MetricBatchItem it{v({0.3, 1}), v({1, -1}), {v({0.2, 0.1}), v({2, 2})}, {v({1, -1.1}), v({0, 0})}};
  const double j1 = eval([&](Tape& t) { return metric_way1(t, it); });
  EXPECT_EQ(eval([&](Tape& t) { return metric_joint(t, it, 0.0); }), j1);
}

TEST(Joint, BothGatesClosedGivesZero) {
  const MetricBatchItem it{v({0, 0}), v({0.1, 0}), {v({3, 0})}, {v({0, 4})}};
  EXPECT_EQ(eval([&](Tape& t) { return metric_joint(t, it, 1.0); }), 0.0);
}

TEST(Joint, WeightsTheSecondWay) {
  const MetricBatchItem it{v({0.3, 1}), v({1, -1}), {v({0.2, 0.1}), v({2, 2})}, {v({1, -1.1}), v({0, 0})}};
  const double a = eval([&](Tape& t) { return metric_way1(t, it); });
  const double b = eval([&](Tape& t) { return metric_way2(t, it); });
  EXPECT_GT(a, 0.0);
  EXPECT_GT(b, 0.0);
  EXPECT_NEAR(eval([&](Tape& t) { return metric_joint(t, it, 2.0); }), a + 2 * b, 1e-12);
}

TEST(Joint, ContractsOnNeighborLists) {
  const MetricBatchItem empty{v({0}), v({1}), {}, {}};
  Tape t;
  EXPECT_THROW(metric_way1(t, empty), ContractError);
  EXPECT_THROW(metric_way2(t, empty), ContractError);
  const MetricBatchItem it{v({0}), v({1}), {v({2})}, {v({2})}};
  EXPECT_THROW(metric_joint(t, it, -1.0), ContractError);
}

TEST(Joint, GradientMatchesFiniteDifferences) {
  auto fi = v({0.3, 1, -0.2}, true), fy = v({0.9, 0.1, 0.4}, true);
  auto n1 = v({0.5, 0.5, 0.1}, true), n2 = v({0.2, 1.4, 0.0}, true);
  auto i1 = v({0.8, 0.3, 0.5}, true), i2 = v({-1, 0, 0}, true);
  auto f = [&](Tape& t) { return metric_joint(t, MetricBatchItem{fi, fy, {n1, n2}, {i1, i2}}, 1.0); };
  const double j1 = eval([&](Tape& t) { return metric_way1(t, MetricBatchItem{fi, fy, {n1, n2}, {i1, i2}}); });
  const double j2 = eval([&](Tape& t) { return metric_way2(t, MetricBatchItem{fi, fy, {n1, n2}, {i1, i2}}); });
  ASSERT_GT(j1, 0.0);  // both gates open
  ASSERT_GT(j2, 0.0);
  ParamGroup g{"emb", {fi, fy, n1, n2, i1, i2}};
  const auto r = grad_check(f, std::span<ParamGroup>(&g, 1), 1e-5, 18, 0);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(Joint, ClosedGateHasNoGradient) {
  auto fi = v({0, 0}, true);
  const MetricBatchItem it{fi, v({0.1, 0}), {v({3, 0})}, {v({0, 4})}};
  Tape t;
  const auto j = metric_joint(t, it, 1.0);
  EXPECT_FALSE(j.requires_grad());
}

TEST(Cls, ValuesAndOracle) {
  Tape t;
  EXPECT_NEAR(cls_loss(t, v({0.5, 0.5}), v({1, 0})).item(), 2 * std::numbers::ln2, 1e-12);
  EXPECT_LT(cls_loss(t, v({1 - 1e-12, 1e-12}), v({1, 0})).item(), 1e-10);

  Rng rng(1);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> p(12), y(12);
  for (auto& e : p) e = u(rng);
  for (auto& e : y) e = coin(rng);
  double oracle = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double pp = p[i * 4 + j], yy = y[i * 4 + j];
      oracle -= (yy * std::log(pp) + (1 - yy) * std::log(1 - pp)) / 3.0;
    }
  EXPECT_NEAR(cls_loss(t, Tensor::matrix(3, 4, p), Tensor::matrix(3, 4, y)).item(), oracle, 1e-12);
}

TEST(Rec, Values) {
  Tape t;
  EXPECT_EQ(rec_loss(t, v({1, 0, 1}), v({1, 0, 1})).item(), 0.0);
  EXPECT_EQ(rec_loss(t, v({0, 1}), v({1, 0})).item(), 1.0);
  EXPECT_EQ(rec_loss(t, v({0, 1, 1, 0}), v({1, 0, 1, 0})).item(), 0.5);
  EXPECT_THROW(rec_loss(t, v({0, 1}), v({1, 0, 0})), DimensionError);
}

TEST(Total, WeightedCombination) {
  Tape t;
  const auto cls = Tensor::scalar(1), metric = Tensor::scalar(2), rec = Tensor::scalar(3);
  EXPECT_NEAR(total_loss(t, cls, metric, rec, LossWeights{0.5, 0.1, 1, 0}).item(), 2.3, 1e-12);
  EXPECT_EQ(total_loss(t, cls, metric, rec, LossWeights{0, 0, 1, 0}).item(), 1.0);
  EXPECT_EQ(total_loss(t, Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0), LossWeights{}).item(), 0.0);
  EXPECT_EQ(total_loss(t, Tensor{}, Tensor{}, Tensor{}, LossWeights{}).item(), 0.0);
  EXPECT_THROW(total_loss(t, cls, metric, rec, LossWeights{-1, 0, 1, 0}), ConfigError);
}

TEST(Total, GradientFlowsOnlyThroughWeightedTerms) {
  auto a = Tensor::vector({1.0}, true), b = Tensor::vector({2.0}, true);
  a.zero_grad();
  b.zero_grad();
  Tape t;
  const auto cls = sum(t, a), metric = sum(t, b);
  t.backward(total_loss(t, cls, metric, Tensor{}, LossWeights{0, 1, 1, 0}));
  EXPECT_EQ(a.grad()[0], 1.0);
  EXPECT_EQ(b.grad()[0], 0.0);
}
