#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "least_squares.hpp"
#include "smi/learners.hpp"
#include "smi/results.hpp"
#include "support.hpp"

namespace {

using namespace smi;
using namespace smi::methods;
namespace st = smi::testing;

tasks::TaskSequence iris_sequence() {
  return tasks::split_by_class(tasks::split_train_val_test(tasks::load_builtin("iris"), 0), 1);
}

StepContext softmax_context(const tasks::TaskSequence& seq, std::uint64_t seed = 0) {
  StepContext ctx;
  ctx.model = seq.model_spec({});
  ctx.train.seed = seed;
  return ctx;
}

double test_accuracy(const StepContext& ctx, const ParamVector& th, const tasks::Dataset& ds) {
  return harness::accuracy(nn::predict_class(ctx.model, th, ds.x), ds.y);
}

TEST(FineTune, ForgetsEarlierTasks) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq);
  const auto thetas = run_finetune(seq, ctx);
  ASSERT_EQ(thetas.size(), 3u);
  EXPECT_GE(test_accuracy(ctx, thetas.back(), seq.tasks.back().test), 0.9);
  EXPECT_LT(test_accuracy(ctx, thetas.back(), seq.tasks.front().test), 1.0 / 3.0 + 0.1);
}

TEST(FineTune, SingleTaskEqualsMapTraining) {
  auto seq = iris_sequence();
  seq.tasks.resize(1);
  const auto ctx = softmax_context(seq);
  const auto direct = detail::train_on(objectives::GaussianPrior{}, seq.tasks[0].train, ctx, 0, initial_params(ctx));
  EXPECT_EQ(run_finetune(seq, ctx).front(), direct);
}

TEST(Joint, FirstTaskMatchesFineTune) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq);
  EXPECT_EQ(run_joint(seq, ctx).front(), run_finetune(seq, ctx).front());
  EXPECT_EQ(joint_data(seq, 2).size(), seq.tasks[0].train.size() + seq.tasks[1].train.size() + seq.tasks[2].train.size());
}

TEST(Reference, EmptySequenceThrows) {
  tasks::TaskSequence empty;
  StepContext ctx;
  ctx.model = nn::ModelSpec{2, {}, 2};
  EXPECT_THROW(run_finetune(empty, ctx), std::invalid_argument);
  EXPECT_THROW(run_joint(empty, ctx), std::invalid_argument);
}

TEST(Aqc, PenaltyVanishesAtNewAnchor) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq);
  auto state = DensePenaltyState::initial(15);
  ParamVector th = initial_params(ctx);
  for (std::size_t t = 0; t < 2; ++t) {
    auto r = aqc_task_step(state, seq.tasks[t], 10.0, ctx, th, t);
    EXPECT_EQ(objectives::quadratic_penalty(r.state, r.theta, 10.0), 0.0);
    EXPECT_EQ(r.state.anchor, r.theta);
    EXPECT_EQ(r.state.tasks_seen, t + 1);
    state = r.state;
    th = r.theta;
  }
}

TEST(Aqc, AccumulatedHessianIsIdentityPlusTaskHessians) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq);
  AqcLearner learner(ctx, 10.0);
  HessianMatrix expected = HessianMatrix::Identity(15, 15);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto th = learner.learn(seq, t);
    const auto nll = detail::nll_for(ctx.model, seq.tasks[t].train);
    expected += ad::hessian([&](auto& tape, auto v) { return nll(tape, v); }, th);
  }
  EXPECT_LE((learner.state().hessian - expected).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Aqc, BatchedHessianMatchesFullBatch) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq);
  const auto nll = detail::nll_for(ctx.model, seq.tasks[0].train);
  const auto th = nn::init_params(ctx.model, 5);
  const auto h16 = nll_hessian(nll, th, 16);
  const auto full = nll_hessian(nll, th, nll.size());
  EXPECT_LE((h16 - full).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((nll_hessian(nll, th, 5) - full).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Aqc, HugeLambdaPinsParameters) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq);
  auto r1 = aqc_task_step(DensePenaltyState::initial(15), seq.tasks[0], 1e8, ctx, initial_params(ctx), 0);
  auto r2 = aqc_task_step(r1.state, seq.tasks[1], 1e8, ctx, r1.theta, 1);
  EXPECT_LT((r2.theta - r1.theta).cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Aqc, ExactForLeastSquares) {
  const auto seq = st::least_squares_sequence(2, 50, 5, 42);
  const auto aqc = st::aqc_least_squares(seq, 1.0);
  EXPECT_LE((aqc - st::joint_least_squares(seq)).norm(), 1e-6);
}

TEST(Aqc, DimensionMismatchThrows) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq);
  EXPECT_THROW(aqc_task_step(DensePenaltyState::initial(4), seq.tasks[0], 1.0, ctx, initial_params(ctx), 0),
               std::invalid_argument);
}

TEST(Ewc, SingleExampleFisherIsSquaredGradient) {
  const nn::ModelSpec spec{3, {4}, 3};
  const auto one = st::random_dataset(1, 3, 3, 3);
  const auto nll = detail::nll_for(spec, one);
  const auto th = nn::init_params(spec, 4);
  const auto g = ad::value_and_grad([&](auto& tape, auto v) { return nll(tape, v); }, th).grad;
  EXPECT_LE((empirical_fisher_diagonal(nll, th) - g.cwiseAbs2()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Ewc, FisherTracksHessianDiagonal) {
  const auto split = tasks::split_train_val_test(tasks::load_builtin("iris"), 0);
  StepContext ctx;
  ctx.model = nn::ModelSpec{4, {}, 3};
  const auto th = detail::train_on(objectives::GaussianPrior{}, split.train, ctx, 0, initial_params(ctx));
  const auto nll = detail::nll_for(ctx.model, split.train);
  const auto fisher = empirical_fisher_diagonal(nll, th);
  const auto hess = ad::hessian([&](auto& tape, auto v) { return nll(tape, v); }, th).diagonal();
  EXPECT_GT(st::spearman(fisher, hess), 0.5);
}

TEST(Ewc, PenaltyVanishesAtAnchorAndAccumulates) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq);
  auto r1 = ewc_task_step(DiagonalPenaltyState::initial(15), seq.tasks[0], 5.0, ctx, initial_params(ctx), 0);
  EXPECT_EQ(objectives::quadratic_penalty(r1.state, r1.theta, 5.0), 0.0);
  EXPECT_TRUE((r1.state.diagonal.array() >= 1.0).all());
  auto r2 = ewc_task_step(r1.state, seq.tasks[1], 5.0, ctx, r1.theta, 1);
  EXPECT_TRUE((r2.state.diagonal.array() >= r1.state.diagonal.array()).all());
  EXPECT_EQ(objectives::quadratic_penalty(r2.state, r2.theta, 5.0), 0.0);
}

TEST(Si, ZeroStepsLeaveImportanceUnchanged) {
  const auto seq = iris_sequence();
  auto ctx = softmax_context(seq);
  ctx.train.epochs = 0;
  auto s = SiState::initial(initial_params(ctx));
  s.importance.setConstant(0.25);
  const auto r = si_task_step(s, seq.tasks[0], 1.0, 0.1, ctx, 0);
  EXPECT_EQ(r.state.importance, s.importance);
  EXPECT_EQ(r.theta, s.anchor);
  EXPECT_EQ(r.state.tasks_seen, 1u);
}

TEST(Si, PathIntegralMatchesLossDecreaseOnSeparableObjective) {
  // Inputs are all zero, so each weight only sees the prior 0.5 w^2 and the
  // bias sees 0.5 b^2 + bernoulli NLL: the objective separates per coordinate.
  tasks::Dataset ds;
  ds.x = Eigen::MatrixXd::Zero(20, 3);
  ds.y.assign(20, 1);
  for (int i = 0; i < 5; ++i) ds.y[static_cast<std::size_t>(i)] = 0;
  ds.num_classes = 2;
  tasks::Task task{ds, ds, ds, {0, 1}};
  StepContext ctx;
  ctx.model = nn::ModelSpec{3, {}, 1, nn::Activation::swish, nn::Head::bernoulli};
  ctx.train.batch_size = 20;
  ctx.train.epochs = 400;
  ctx.train.base_lr = 0.01;
  ParamVector start(4);
  start << 1.0, -0.8, 0.6, -1.5;
  SiState s = SiState::initial(start);
  const double xi = 0.1;
  const auto r = si_task_step(s, task, 1.0, xi, ctx, 0);

  const auto bias_loss = [&](double b) {
    double v = 0.5 * b * b;
    for (int y : ds.y) v += y ? std::log1p(std::exp(-b)) : std::log1p(std::exp(b));
    return v;
  };
  for (Eigen::Index k = 0; k < 4; ++k) {
    const double decrease = k < 3 ? 0.5 * (start(k) * start(k) - r.theta(k) * r.theta(k))
                                  : bias_loss(start(k)) - bias_loss(r.theta(k));
    const double delta = r.theta(k) - start(k);
    const double omega = r.state.importance(k) * (delta * delta + xi);
    EXPECT_NEAR(omega, decrease, 0.1 * std::abs(decrease)) << "coordinate " << k;
  }
}

TEST(Si, PenaltyVanishesAtAnchor) {
  SiState s = SiState::initial(Eigen::Vector3d(1, 2, 3));
  s.importance = Eigen::Vector3d(0.5, 0, 2);
  EXPECT_EQ(objectives::evaluate_penalty(si_penalty(s, 3.0), s.anchor), 0.0);
  // lambda * sum Omega (theta - anchor)^2
  EXPECT_NEAR(objectives::evaluate_penalty(si_penalty(s, 3.0), Eigen::Vector3d(2, 2, 4)), 3.0 * (0.5 + 2.0), 1e-12);
}

TEST(Si, NonPositiveDampingThrows) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq);
  EXPECT_THROW(si_task_step(SiState::initial(initial_params(ctx)), seq.tasks[0], 1.0, 0.0, ctx, 0),
               std::invalid_argument);
}

TEST(Ball, ZeroRadiusGivesCenter) {
  const Eigen::Vector3d c(1, -2, 0.5);
  const auto pts = sample_uniform_ball(c, 0.0, 10, 1);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) EXPECT_EQ(Eigen::Vector3d(pts.row(i).transpose()), c);
  EXPECT_THROW(sample_uniform_ball(c, -1.0, 1, 1), std::invalid_argument);
}

TEST(Ball, PointsStayInside) {
  const ParamVector c = st::random_matrix(40, 1, 2);
  const auto pts = sample_uniform_ball(c, 2.5, 2000, 3);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) EXPECT_LE((pts.row(i).transpose() - c).norm(), 2.5);
}

TEST(Ball, PlanarRadialDistribution) {
  const Eigen::Vector2d c(3, 4);
  const double r = 2.0;
  const auto pts = sample_uniform_ball(c, r, 100000, 4);
  std::size_t inside = 0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) inside += (pts.row(i).transpose() - c).norm() <= r / std::sqrt(2.0);
  EXPECT_NEAR(static_cast<double>(inside) / 1e5, 0.5, 0.01);
  // direction is uniform: each quadrant holds a quarter
  std::size_t q1 = 0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) q1 += pts(i, 0) > c(0) && pts(i, 1) > c(1);
  EXPECT_NEAR(static_cast<double>(q1) / 1e5, 0.25, 0.01);
}

TEST(Ball, SeedDeterminesDraws) {
  const Eigen::Vector2d c(0, 0);
  EXPECT_EQ(sample_uniform_ball(c, 1, 5, 7), sample_uniform_ball(c, 1, 5, 7));
  EXPECT_NE(sample_uniform_ball(c, 1, 5, 7), sample_uniform_ball(c, 1, 5, 8));
}

ConsolidatorState planar_settings() {
  ConsolidatorState s;
  s.spec = ConsolidatorState::make_spec(2);
  s.radius = 1.0;
  return s;
}

TEST(Consolidator, FitsQuadraticTarget) {
  const Eigen::Vector2d a(0.5, -0.3);
  const Eigen::Vector2d center(0.8, 0.1);
  const BatchTarget target = [&](const Eigen::MatrixXd& p) {
    return Eigen::VectorXd(0.5 * (p.rowwise() - a.transpose()).rowwise().squaredNorm());
  };
  auto s = planar_settings();
  s.phi = fit_consolidator(target, center, s, 11);
  const auto held_out = sample_uniform_ball(center, s.radius, 4096, 999);
  const auto pred = objectives::consolidator_batch(s, held_out);
  const auto truth = target(held_out);
  double err = 0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) err += objectives::huber(pred(i), truth(i), s.huber_delta);
  EXPECT_LE(err / static_cast<double>(pred.size()), 1e-2);
}

TEST(Consolidator, NonFiniteTargetNamesPoint) {
  auto s = planar_settings();
  s.fit_steps = 3;
  const BatchTarget target = [](const Eigen::MatrixXd& p) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(p.rows());
    v(5) = std::numeric_limits<double>::infinity();
    return v;
  };
  try {
    fit_consolidator(target, Eigen::Vector2d::Zero(), s, 1);
    FAIL() << "expected an evaluation error";
  } catch (const ad::EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("sampled point 5"), std::string::npos) << e.what();
  }
}

TEST(Consolidator, WarmStartBeginsFromGivenWeights) {
  auto s = planar_settings();
  s.fit_steps = 0;
  const BatchTarget target = [](const Eigen::MatrixXd& p) { return Eigen::VectorXd(Eigen::VectorXd::Zero(p.rows())); };
  const ParamVector init = nn::init_params(s.spec, 77);
  EXPECT_EQ(fit_consolidator(target, Eigen::Vector2d::Zero(), s, 1, &init), init);
  EXPECT_NE(fit_consolidator(target, Eigen::Vector2d::Zero(), s, 1), init);
  const ParamVector wrong = ParamVector::Zero(3);
  EXPECT_THROW(fit_consolidator(target, Eigen::Vector2d::Zero(), s, 1, &wrong), std::invalid_argument);
}

TEST(Consolidator, RecursiveLossValuesMatchDirectEvaluation) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq);
  const auto nll = detail::nll_for(ctx.model, seq.tasks[0].train);
  auto dense = std::make_shared<const DensePenaltyState>(DensePenaltyState::initial(15));
  const objectives::Penalty p = objectives::DensePenalty{dense, 2.0};
  const auto pts = sample_uniform_ball(initial_params(ctx), 1.0, 6, 3);
  const auto vals = recursive_loss_values(p, nll, pts, 16);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const ParamVector th = pts.row(i).transpose();
    const objectives::RecursiveLoss loss{p, nll, 1};
    EXPECT_NEAR(vals(i), loss.value(th), 1e-10);
  }
}

TEST(Nc, PenaltyIsConsolidatorFitAtNewOptimum) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq);
  NcSettings nc;
  nc.hidden = {16};
  nc.fit_steps = 50;
  NcLearner learner(ctx, 2.0, 1.0, nc);
  learner.learn(seq, 0);
  const auto& s = learner.state();
  EXPECT_EQ(s.tasks_seen, 1u);
  EXPECT_EQ(s.spec.input_dim, 15u);
  EXPECT_EQ(s.phi.size(), static_cast<Eigen::Index>(s.spec.parameter_count()));
  EXPECT_DOUBLE_EQ(s.lambda, 2.0);
}

TEST(LearnerTest, SaveRestoreResumesIdentically) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq, 3);
  NcSettings nc;
  nc.hidden = {8};
  nc.fit_steps = 20;
  for (const std::string method : {"finetune", "joint", "aqc", "ewc", "si", "nc"}) {
    HyperParams hp;
    for (const auto& name : hyperparameter_names(method)) hp.values.emplace_back(name, 1.0);
    auto a = make_learner(method, hp, ctx, nc);
    a->learn(seq, 0);
    const auto saved = a->save();
    auto b = make_learner(method, hp, ctx, nc);
    b->restore(io::json::parse(saved.dump()));
    EXPECT_EQ(b->tasks_completed(), 1u);
    EXPECT_EQ(a->learn(seq, 1), b->learn(seq, 1)) << method;
  }
}

TEST(LearnerTest, RejectsOutOfOrderTasksAndForeignState) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq);
  AqcLearner aqc(ctx, 1.0);
  EXPECT_THROW(aqc.learn(seq, 1), std::logic_error);
  EwcLearner ewc(ctx, 1.0);
  EXPECT_THROW(ewc.restore(aqc.save()), std::runtime_error);
  auto other = ctx;
  other.model.hidden_sizes = {3};
  AqcLearner wide(other, 1.0);
  EXPECT_THROW(wide.restore(aqc.save()), std::runtime_error);
}

TEST(LearnerTest, FactoryChecksHyperparameters) {
  const auto seq = iris_sequence();
  const auto ctx = softmax_context(seq);
  EXPECT_THROW(make_learner("aqc", {}, ctx), std::invalid_argument);
  EXPECT_THROW(make_learner("aqc", HyperParams{{{"lambda", 0.0}}}, ctx), std::invalid_argument);
  EXPECT_THROW(make_learner("vcl", {}, ctx), std::invalid_argument);
  EXPECT_EQ(make_learner("si", HyperParams{{{"lambda", 1.0}, {"xi", 0.1}}}, ctx)->method(), "si");
  EXPECT_EQ((HyperParams{{{"lambda", 10.0}, {"r", 1.0}}}.to_string()), "lambda=10;r=1");
  EXPECT_EQ(hyperparameter_names("nc"), (std::vector<std::string>{"lambda", "r"}));
}

}  // namespace
