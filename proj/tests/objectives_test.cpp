#include <cmath>
#include <memory>
#include <numeric>

#include <gtest/gtest.h>

#include "smi/ad.hpp"
#include "smi/objectives.hpp"
#include "support.hpp"

namespace {

using namespace smi;
using namespace smi::objectives;
namespace st = smi::testing;

TEST(Nll, UniformLogitsGiveLogK) {
  const std::vector<int> y{2};
  EXPECT_NEAR(categorical_nll(Eigen::MatrixXd::Zero(1, 3), y), std::log(3.0), 1e-15);
  EXPECT_NEAR(bernoulli_nll(Eigen::MatrixXd::Zero(1, 1), std::vector<int>{1}), std::log(2.0), 1e-15);
}

TEST(Nll, CategoricalMatchesOracle) {
  const auto z = st::random_matrix(20, 4, 3, 2.0);
  const auto y = st::random_labels(20, 4, 4);
  EXPECT_NEAR(categorical_nll(z, y), st::reference_softmax_nll(z, y), 1e-12);
}

TEST(Nll, BernoulliMatchesOracle) {
  const auto z = st::random_matrix(20, 1, 5, 2.0);
  const auto y = st::random_labels(20, 2, 6);
  EXPECT_NEAR(bernoulli_nll(z, y), st::reference_bernoulli_nll(z, y), 1e-12);
}

TEST(Nll, BernoulliStableForLargeLogits) {
  Eigen::MatrixXd z(2, 1);
  z << 800, -800;
  EXPECT_NEAR(bernoulli_nll(z, std::vector<int>{0, 1}), 1600.0, 1e-9);
  EXPECT_NEAR(bernoulli_nll(z, std::vector<int>{1, 0}), 0.0, 1e-12);
}

TEST(Weights, SmallestClassGetsOne) {
  const std::vector<std::size_t> counts{1, 100};
  const auto w = class_weights(counts);
  EXPECT_DOUBLE_EQ(w[0], 1.0);
  EXPECT_DOUBLE_EQ(w[1], 0.01);
  EXPECT_THROW(class_weights(std::vector<std::size_t>{3, 0}), std::invalid_argument);
  EXPECT_THROW(class_weights(std::vector<std::size_t>{}), std::invalid_argument);
}

TEST(Weights, WeightedNllMatchesOracle) {
  const auto z = st::random_matrix(12, 3, 8);
  const std::vector<int> y{0, 0, 0, 0, 0, 0, 1, 1, 1, 2, 2, 0};
  const std::vector<std::size_t> counts{7, 3, 2};
  std::vector<double> w;
  for (int c : y) w.push_back(2.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]));
  EXPECT_NEAR(weighted_categorical_nll(z, y, counts), st::reference_softmax_nll(z, y, w), 1e-12);
}

TEST(Weights, BalancedCountsMatchUnweighted) {
  const auto z = st::random_matrix(9, 3, 9);
  const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1, 2};
  const std::vector<std::size_t> counts{3, 3, 3};
  EXPECT_NEAR(weighted_categorical_nll(z, y, counts), categorical_nll(z, y), 1e-12);
}

TEST(Weights, LabelWithoutCountThrows) {
  EXPECT_THROW(row_weights(std::vector<int>{2}, std::vector<std::size_t>{1, 1}), std::out_of_range);
}

TEST(Prior, HalfSquaredNorm) {
  EXPECT_DOUBLE_EQ(gaussian_prior(Eigen::Vector3d(1, 2, 2)), 4.5);
  ad::Tape<double> tape;
  EXPECT_DOUBLE_EQ(gaussian_prior(tape.constant(Eigen::Vector3d(1, 2, 2))).value()(0, 0), 4.5);
}

TEST(Penalty, DenseValueAtUnitVector) {
  auto s = DensePenaltyState::initial(3);
  EXPECT_DOUBLE_EQ(quadratic_penalty(s, Eigen::Vector3d(1, 0, 0), 2.0), 1.0);
}

TEST(Penalty, DenseMatchesOracle) {
  const auto a = st::random_matrix(4, 4, 1);
  DensePenaltyState s{st::random_matrix(4, 1, 2), a * a.transpose() + Eigen::MatrixXd::Identity(4, 4), 2};
  const Eigen::VectorXd th = st::random_matrix(4, 1, 3);
  double oracle = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) oracle += (th(i) - s.anchor(i)) * s.hessian(i, j) * (th(j) - s.anchor(j));
  }
  oracle *= 0.5 * 3.0;
  EXPECT_NEAR(quadratic_penalty(s, th, 3.0), oracle, 1e-12 * std::abs(oracle));
  ad::Tape<double> tape;
  EXPECT_NEAR(quadratic_penalty(s, tape.constant(th), 3.0).value()(0, 0), oracle, 1e-12 * std::abs(oracle));
}

TEST(Penalty, LambdaAndCurvatureScaleTogether) {
  const auto a = st::random_matrix(3, 3, 4);
  DensePenaltyState s{st::random_matrix(3, 1, 5), a * a.transpose(), 1};
  DensePenaltyState scaled = s;
  scaled.hessian *= 4.0;
  const Eigen::VectorXd th = st::random_matrix(3, 1, 6);
  EXPECT_NEAR(quadratic_penalty(s, th, 2.0), quadratic_penalty(scaled, th, 0.5), 1e-12);
}

TEST(Penalty, ZeroAtAnchorAndForZeroLambda) {
  const auto a = st::random_matrix(3, 3, 7);
  DensePenaltyState s{st::random_matrix(3, 1, 8), a * a.transpose(), 1};
  EXPECT_EQ(quadratic_penalty(s, s.anchor, 5.0), 0.0);
  EXPECT_EQ(quadratic_penalty(s, Eigen::Vector3d(9, 9, 9), 0.0), 0.0);
  DiagonalPenaltyState d{st::random_matrix(3, 1, 9), Eigen::Vector3d(1, 2, 3), 1};
  EXPECT_EQ(quadratic_penalty(d, d.anchor, 5.0), 0.0);
}

TEST(Penalty, DiagonalMatchesDenseWithDiagonalMatrix) {
  const Eigen::Vector3d diag(1, 2, 3);
  DiagonalPenaltyState d{Eigen::Vector3d(0.5, -1, 2), diag, 1};
  DensePenaltyState D{d.anchor, diag.asDiagonal(), 1};
  const Eigen::Vector3d th(1, 1, 1);
  EXPECT_NEAR(quadratic_penalty(d, th, 1.5), quadratic_penalty(D, th, 1.5), 1e-12);
}

TEST(Penalty, LengthMismatchThrows) {
  auto s = DensePenaltyState::initial(3);
  ad::Tape<double> tape;
  EXPECT_THROW(quadratic_penalty(s, tape.constant(Eigen::Vector2d(1, 1)), 1.0), ad::ShapeError);
}

ConsolidatorState small_consolidator(std::size_t d, std::uint64_t seed) {
  ConsolidatorState c;
  c.spec = ConsolidatorState::make_spec(d, {8, 8});
  c.phi = nn::init_params(c.spec, seed);
  return c;
}

TEST(Neural, ZeroWeightsGiveZeroPenalty) {
  auto c = small_consolidator(4, 1);
  c.phi.setZero();
  EXPECT_EQ(neural_penalty(c, Eigen::Vector4d(1, 2, 3, 4), 3.0), 0.0);
}

TEST(Neural, ScalesWithLambdaAndMatchesBatch) {
  const auto c = small_consolidator(4, 2);
  const auto pts = st::random_matrix(5, 4, 3);
  const auto batch = consolidator_batch(c, pts);
  for (Eigen::Index r = 0; r < pts.rows(); ++r) {
    const Eigen::VectorXd th = pts.row(r).transpose();
    EXPECT_NEAR(neural_penalty(c, th, 1.0), batch(r), 1e-13);
    EXPECT_NEAR(neural_penalty(c, th, 2.5), 2.5 * batch(r), 1e-12);
  }
}

TEST(Neural, GradientMatchesFiniteDifferences) {
  const auto c = small_consolidator(6, 4);
  const Eigen::VectorXd th = st::random_matrix(6, 1, 5);
  const auto f = [&](auto&, auto t) { return neural_penalty(c, t, 0.7); };
  const auto g = ad::value_and_grad(f, th).grad;
  const auto fd = st::fd_gradient([&](const Eigen::VectorXd& v) { return neural_penalty(c, v, 0.7); }, th);
  EXPECT_LE(st::rel_error(g, fd), 1e-7);
}

TEST(Neural, WrongInputWidthThrows) {
  const auto c = small_consolidator(4, 2);
  ad::Tape<double> tape;
  EXPECT_THROW(neural_penalty(c, tape.constant(Eigen::Vector3d(1, 2, 3)), 1.0), ad::ShapeError);
}

TEST(Huber, QuadraticInsideLinearOutside) {
  EXPECT_DOUBLE_EQ(huber(0.5, 0.0, 1.0), 0.125);
  EXPECT_DOUBLE_EQ(huber(0.0, 2.0, 1.0), 1.5);
  EXPECT_DOUBLE_EQ(huber(3.0, 3.0, 1.0), 0.0);
  EXPECT_THROW(huber(1.0, 0.0, 0.0), std::invalid_argument);
}

TEST(Huber, ContinuousWithContinuousSlopeAtDelta) {
  const double d = 0.7, e = 1e-7;
  EXPECT_NEAR(huber(d - e, 0, d), huber(d + e, 0, d), 1e-6);
  const double left = (huber(d, 0, d) - huber(d - e, 0, d)) / e;
  const double right = (huber(d + e, 0, d) - huber(d, 0, d)) / e;
  EXPECT_NEAR(left, d, 1e-6);
  EXPECT_NEAR(right, d, 1e-6);
}

TEST(Huber, TapeSumMatchesScalar) {
  ad::Tape<double> tape;
  const Eigen::Vector3d a(0.2, 3.0, -1.5), b(0.0, 0.5, 1.0);
  const double v = ad::huber_sum(tape.constant(a), b, 1.0).value()(0, 0);
  EXPECT_NEAR(v, huber(0.2, 0, 1) + huber(3, 0.5, 1) + huber(-1.5, 1, 1), 1e-15);
}

std::vector<tasks::Dataset> three_tasks() {
  return {st::random_dataset(10, 3, 3, 1), st::random_dataset(7, 3, 3, 2), st::random_dataset(12, 3, 3, 3)};
}

TEST(JointLoss, RecursionMatchesDirectSum) {
  const nn::ModelSpec spec{3, {5}, 3};
  const auto ds = three_tasks();
  const auto th = nn::init_params(spec, 4);
  double direct = 0.5 * th.squaredNorm();
  double running = exact_joint_loss(spec, std::span<const tasks::Dataset>(), th);
  EXPECT_DOUBLE_EQ(running, direct);
  for (std::size_t t = 0; t < ds.size(); ++t) {
    const double nll = categorical_nll(st::reference_forward(spec.widths(), th, ds[t].x), ds[t].y);
    direct += nll;
    running += nll;
    const double joint = exact_joint_loss(spec, std::span(ds.data(), t + 1), th);
    EXPECT_NEAR(joint, direct, 1e-10);
    EXPECT_NEAR(joint, running, 1e-10);
  }
}

TEST(JointLoss, NllIsAdditiveOverConcatenation) {
  const nn::ModelSpec spec{3, {5}, 3};
  const auto ds = three_tasks();
  const auto th = nn::init_params(spec, 5);
  const auto all = tasks::concat(ds);
  NllTerm whole(spec, std::make_shared<const tasks::Dataset>(all), Likelihood::categorical);
  double parts = 0;
  for (const auto& d : ds) {
    parts += NllTerm(spec, std::make_shared<const tasks::Dataset>(d), Likelihood::categorical).value(th);
  }
  EXPECT_NEAR(whole.value(th), parts, 1e-10);
}

TEST(RecursiveLossTest, BatchObjectivesSumToFull) {
  const nn::ModelSpec spec{3, {5}, 3};
  const auto data = std::make_shared<const tasks::Dataset>(st::random_dataset(13, 3, 3, 6));
  auto state = std::make_shared<DensePenaltyState>(DensePenaltyState::initial(
      static_cast<Eigen::Index>(spec.parameter_count())));
  state->anchor = nn::init_params(spec, 7);
  RecursiveLoss loss{DensePenalty{state, 4.0}, NllTerm(spec, data, Likelihood::categorical), 3};
  const auto th = nn::init_params(spec, 8);
  const std::vector<std::vector<std::size_t>> batches{{0, 1, 2, 3, 4}, {5, 6, 7, 8, 9}, {10, 11, 12}};
  double sum = 0;
  for (const auto& b : batches) {
    ad::Tape<double> tape;
    sum += loss.batch(tape, tape.constant(th), b, batches.size()).value()(0, 0);
  }
  EXPECT_NEAR(sum, loss.value(th), 1e-10);
}

TEST(RecursiveLossTest, PenaltyVariantDispatch) {
  const Eigen::Vector2d th(1, -2);
  EXPECT_DOUBLE_EQ(evaluate_penalty(GaussianPrior{}, th), 2.5);
  auto dense = std::make_shared<DensePenaltyState>(DensePenaltyState::initial(2));
  EXPECT_DOUBLE_EQ(evaluate_penalty(DensePenalty{dense, 2.0}, th), 5.0);
  auto diag = std::make_shared<DiagonalPenaltyState>(DiagonalPenaltyState::initial(2));
  EXPECT_DOUBLE_EQ(evaluate_penalty(DiagonalPenalty{diag, 2.0}, th), 5.0);
}

TEST(RecursiveLossTest, ObjectiveFamiliesMatchFiniteDifferences) {
  const nn::ModelSpec spec{3, {4}, 3};
  const auto d = static_cast<Eigen::Index>(spec.parameter_count());
  const auto data = std::make_shared<const tasks::Dataset>(st::random_dataset(9, 3, 3, 10));
  auto dense = std::make_shared<DensePenaltyState>(DensePenaltyState::initial(d));
  dense->anchor = st::random_matrix(d, 1, 11, 0.3);
  auto diag = std::make_shared<DiagonalPenaltyState>(DiagonalPenaltyState::initial(d));
  diag->diagonal = st::random_matrix(d, 1, 12).cwiseAbs();
  auto cons = std::make_shared<ConsolidatorState>(small_consolidator(static_cast<std::size_t>(d), 13));
  const std::vector<Penalty> penalties{GaussianPrior{}, DensePenalty{dense, 2.0}, DiagonalPenalty{diag, 3.0},
                                       NeuralPenalty{cons, 0.5}};
  const auto th = nn::init_params(spec, 14);
  for (const auto kind : {Likelihood::categorical, Likelihood::weighted_categorical}) {
    for (const auto& p : penalties) {
      RecursiveLoss loss{p, NllTerm(spec, data, kind), 1};
      const auto f = [&](auto& tape, auto t) { return loss(tape, t); };
      const auto val = [&](const Eigen::VectorXd& v) { return loss.value(v); };
      EXPECT_LE(st::rel_error(ad::value_and_grad(f, th).grad, st::fd_gradient(val, th)), 1e-5);
      EXPECT_LE(st::rel_error(ad::hessian(f, th), st::fd_hessian(val, th)), 1e-4);
    }
  }
}

}  // namespace
