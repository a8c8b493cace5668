#pragma once

// Continual-learning methods as per-task steps over explicit state:
// fine-tuning and joint training as references, quadratic consolidation with
// exact accumulated Hessians (AQC), neural consolidation (NC), EWC with a
// single cumulative Fisher penalty, and synaptic intelligence (SI).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "smi/ad.hpp"
#include "smi/nn.hpp"
#include "smi/objectives.hpp"
#include "smi/optim.hpp"
#include "smi/random.hpp"
#include "smi/tasks.hpp"

namespace smi::methods {

using objectives::ConsolidatorState;
using objectives::DensePenaltyState;
using objectives::DiagonalPenaltyState;

/// Everything a task step needs besides the method state.
struct StepContext {
  nn::ModelSpec model;
  optim::TrainConfig train;  // train.seed is the experiment seed
};

namespace detail {

inline objectives::NllTerm nll_for(const nn::ModelSpec& model, const tasks::Dataset& data) {
  return objectives::NllTerm(model, std::make_shared<const tasks::Dataset>(data),
                             objectives::likelihood_for(model.head));
}

inline optim::TrainConfig task_config(const optim::TrainConfig& base, std::size_t task_index) {
  optim::TrainConfig cfg = base;
  cfg.seed = derive_seed(base.seed, "train", task_index);
  return cfg;
}

inline ParamVector train_on(objectives::Penalty penalty, const tasks::Dataset& data,
                            const StepContext& ctx, std::size_t task_index, ParamVector start,
                            const optim::StepHook& hook = {}) {
  objectives::RecursiveLoss loss{std::move(penalty), nll_for(ctx.model, data), 1};
  loss.minibatch_count = optim::minibatch_count(data.size(), ctx.train.batch_size);
  return optim::train(loss, task_config(ctx.train, task_index), std::move(start), hook);
}

}  // namespace detail

inline ParamVector initial_params(const StepContext& ctx) {
  return nn::init_params(ctx.model, derive_seed(ctx.train.seed, "init"));
}

// ---------------------------------------------------------------------------
// Reference methods

/// Prior + current NLL at every task, warm-started from the previous optimum.
inline std::vector<ParamVector> run_finetune(const tasks::TaskSequence& seq, const StepContext& ctx) {
  if (seq.size() == 0) throw std::invalid_argument("run_finetune: empty task sequence");
  std::vector<ParamVector> out;
  ParamVector theta = initial_params(ctx);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    theta = detail::train_on(objectives::GaussianPrior{}, seq.tasks[t].train, ctx, t, theta);
    out.push_back(theta);
  }
  return out;
}

/// Union of the training data of tasks 0..t.
inline tasks::Dataset joint_data(const tasks::TaskSequence& seq, std::size_t t) {
  std::vector<tasks::Dataset> parts;
  for (std::size_t i = 0; i <= t; ++i) parts.push_back(seq.tasks[i].train);
  return tasks::concat(parts);
}

/// Exact joint MAP objective over all data seen so far.
inline std::vector<ParamVector> run_joint(const tasks::TaskSequence& seq, const StepContext& ctx) {
  if (seq.size() == 0) throw std::invalid_argument("run_joint: empty task sequence");
  std::vector<ParamVector> out;
  ParamVector theta = initial_params(ctx);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    theta = detail::train_on(objectives::GaussianPrior{}, joint_data(seq, t), ctx, t, theta);
    out.push_back(theta);
  }
  return out;
}

// ---------------------------------------------------------------------------
// AQC

/// Hessian of a dataset's NLL at theta, summed over consecutive batches.
inline HessianMatrix nll_hessian(const objectives::NllTerm& nll, const ParamVector& theta,
                                 std::size_t batch_size) {
  const std::size_t n = nll.size();
  std::vector<std::vector<std::size_t>> rows;
  for (std::size_t lo = 0; lo < n; lo += batch_size) {
    std::vector<std::size_t> r;
    for (std::size_t i = lo; i < std::min(n, lo + batch_size); ++i) r.push_back(i);
    rows.push_back(std::move(r));
  }
  const auto make = [&](const std::vector<std::size_t>& r) {
    return [&nll, &r](auto& tape, auto th) { return nll.on_rows(tape, th, r); };
  };
  std::vector<decltype(make(rows.front()))> batches;
  for (const auto& r : rows) batches.push_back(make(r));
  return ad::accumulate_hessian_over_batches(batches, theta);
}

struct AqcResult {
  ParamVector theta;
  DensePenaltyState state;
};

/// Trains on (lambda/2)(theta - anchor)^T H (theta - anchor) + nll (prior
/// alone before the first task), then adds the task's NLL Hessian at the new
/// optimum and moves the anchor there.
inline AqcResult aqc_task_step(const DensePenaltyState& state, const tasks::Task& task,
                               double lambda, const StepContext& ctx, const ParamVector& start,
                               std::size_t task_index) {
  const auto d = static_cast<Eigen::Index>(ctx.model.parameter_count());
  if (state.dimension() != d || state.hessian.rows() != d) {
    throw std::invalid_argument("aqc_task_step: state dimension differs from model");
  }
  objectives::Penalty penalty = objectives::GaussianPrior{};
  if (state.tasks_seen > 0) {
    penalty = objectives::DensePenalty{std::make_shared<const DensePenaltyState>(state), lambda};
  }
  AqcResult r;
  r.theta = detail::train_on(penalty, task.train, ctx, task_index, start);
  const auto nll = detail::nll_for(ctx.model, task.train);
  r.state.hessian =
      state.hessian + nll_hessian(nll, r.theta, static_cast<std::size_t>(ctx.train.batch_size));
  r.state.anchor = r.theta;
  r.state.tasks_seen = state.tasks_seen + 1;
  return r;
}

// ---------------------------------------------------------------------------
// EWC (single cumulative penalty)

/// Sum over examples of squared per-example NLL gradients.
inline Eigen::VectorXd empirical_fisher_diagonal(const objectives::NllTerm& nll,
                                                 const ParamVector& theta) {
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(theta.size());
  for (std::size_t i = 0; i < nll.size(); ++i) {
    const std::size_t row[1] = {i};
    const auto f = [&](auto& tape, auto th) { return nll.on_rows(tape, th, row); };
    diag += ad::value_and_grad(f, theta).grad.cwiseAbs2();
  }
  return diag;
}

struct EwcResult {
  ParamVector theta;
  DiagonalPenaltyState state;
};

inline EwcResult ewc_task_step(const DiagonalPenaltyState& state, const tasks::Task& task,
                               double lambda, const StepContext& ctx, const ParamVector& start,
                               std::size_t task_index) {
  if (state.dimension() != static_cast<Eigen::Index>(ctx.model.parameter_count())) {
    throw std::invalid_argument("ewc_task_step: state dimension differs from model");
  }
  objectives::Penalty penalty = objectives::GaussianPrior{};
  if (state.tasks_seen > 0) {
    penalty = objectives::DiagonalPenalty{std::make_shared<const DiagonalPenaltyState>(state), lambda};
  }
  EwcResult r;
  r.theta = detail::train_on(penalty, task.train, ctx, task_index, start);
  r.state.diagonal =
      state.diagonal + empirical_fisher_diagonal(detail::nll_for(ctx.model, task.train), r.theta);
  r.state.anchor = r.theta;
  r.state.tasks_seen = state.tasks_seen + 1;
  return r;
}

// ---------------------------------------------------------------------------
// SI

struct SiState {
  Eigen::VectorXd importance;  // Omega, accumulated over finished tasks
  Eigen::VectorXd path;        // omega, running path integral of the current task
  ParamVector anchor;          // parameters at the end of the previous task
  std::size_t tasks_seen = 0;

  static SiState initial(const ParamVector& start) {
    return {Eigen::VectorXd::Zero(start.size()), Eigen::VectorXd::Zero(start.size()), start, 0};
  }
};

/// lambda * sum_k Omega_k (theta_k - anchor_k)^2, expressed as a diagonal
/// quadratic penalty with curvature 2 * Omega.
inline objectives::DiagonalPenalty si_penalty(const SiState& s, double lambda) {
  auto diag = std::make_shared<DiagonalPenaltyState>();
  diag->anchor = s.anchor;
  diag->diagonal = 2.0 * s.importance;
  diag->tasks_seen = s.tasks_seen;
  return {std::move(diag), lambda};
}

/// Folds a finished task's path integral into the importance weights.
inline void si_consolidate(SiState& s, const ParamVector& theta_end, double xi) {
  const Eigen::VectorXd delta = theta_end - s.anchor;
  s.importance.array() += s.path.array().max(0.0) / (delta.array().square() + xi);
  s.path.setZero();
  s.anchor = theta_end;
  ++s.tasks_seen;
}

struct SiResult {
  ParamVector theta;
  SiState state;
};

/// Trains from the state's anchor, accumulating omega_k += -g_k * dtheta_k
/// over every optimizer step, then consolidates.
inline SiResult si_task_step(const SiState& state, const tasks::Task& task, double lambda,
                             double xi, const StepContext& ctx, std::size_t task_index) {
  if (state.anchor.size() != static_cast<Eigen::Index>(ctx.model.parameter_count())) {
    throw std::invalid_argument("si_task_step: state dimension differs from model");
  }
  if (!(xi > 0.0)) throw std::invalid_argument("si_task_step: damping must be positive");
  SiResult r{ParamVector(), state};
  objectives::Penalty penalty = objectives::GaussianPrior{};
  if (state.tasks_seen > 0) penalty = si_penalty(state, lambda);
  const optim::StepHook hook = [&r](const optim::StepReport& s) {
    r.state.path.array() -= s.grad.array() * (s.after - s.before).array();
  };
  r.theta = detail::train_on(penalty, task.train, ctx, task_index, state.anchor, hook);
  si_consolidate(r.state, r.theta, xi);
  return r;
}

// ---------------------------------------------------------------------------
// NC

/// n points drawn uniformly from the ball of radius r around center, one per row.
inline Eigen::MatrixXd sample_uniform_ball(const ParamVector& center, double radius, std::size_t n,
                                           std::uint64_t seed) {
  if (radius < 0.0) throw std::invalid_argument("sample_uniform_ball: negative radius");
  const Eigen::Index d = center.size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), d);
  Eigen::VectorXd dir(d);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    do {
      for (Eigen::Index k = 0; k < d; ++k) dir(k) = gauss(rng);
      norm = dir.norm();
    } while (norm == 0.0);
    const double rho = radius * std::pow(unif(rng), 1.0 / static_cast<double>(d));
    out.row(static_cast<Eigen::Index>(i)) = (center + (rho / norm) * dir).transpose();
  }
  return out;
}

/// Maps a batch of parameter points (rows) to loss values.
using BatchTarget = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

/// Fits a consolidator to `target` around `center`, starting from `init` or
/// a fresh initialization: every step draws new ball points and takes one
/// Adam step on beta/2 ||phi||^2 + sum_i huber(kappa(theta_i; phi), target(theta_i)).
inline ParamVector fit_consolidator(const BatchTarget& target, const ParamVector& center,
                                    const ConsolidatorState& settings, std::uint64_t seed,
                                    const ParamVector* init = nullptr) {
  const nn::ModelSpec& spec = settings.spec;
  if (spec.input_dim != static_cast<std::size_t>(center.size())) {
    throw std::invalid_argument("fit_consolidator: consolidator width differs from center");
  }
  if (init && init->size() != static_cast<Eigen::Index>(spec.parameter_count())) {
    throw std::invalid_argument("fit_consolidator: initial phi has the wrong size");
  }
  ParamVector phi = init ? *init : nn::init_params(spec, derive_seed(seed, "consolidator-init"));
  if (settings.fit_steps == 0) return phi;
  optim::AdamState adam = optim::AdamState::zeros(phi.size());
  for (std::size_t step = 0; step < settings.fit_steps; ++step) {
    const Eigen::MatrixXd points = sample_uniform_ball(
        center, settings.radius, settings.sample_size, derive_seed(seed, "ball", step));
    const Eigen::VectorXd y = target(points);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (!std::isfinite(y(i))) {
        std::string where;
        for (Eigen::Index k = 0; k < std::min<Eigen::Index>(points.cols(), 8); ++k) {
          where += (k ? "," : "") + std::to_string(points(i, k));
        }
        if (points.cols() > 8) where += ",...";
        throw ad::EvaluationError("consolidator target is not finite at sampled point " +
                                  std::to_string(i) + " of step " + std::to_string(step) + " (" +
                                  where + ")");
      }
    }
    const double beta = settings.beta;
    const double delta = settings.huber_delta;
    const auto objective = [&](auto& tape, auto p) {
      const auto pred = nn::forward(spec, p, tape.lift(points));
      return ad::add(ad::scale(ad::sum_squares(p), 0.5 * beta), ad::huber_sum(pred, y, delta));
    };
    const auto vg = ad::value_and_grad(objective, phi);
    optim::adam_step(adam, phi, vg.grad, optim::one_cycle_lr(step, settings.fit_steps, settings.fit_lr));
  }
  return phi;
}

/// Values of penalty + NLL at every row of `points`; the NLL is summed over
/// consecutive batches of the dataset.
inline Eigen::VectorXd recursive_loss_values(const objectives::Penalty& penalty,
                                             const objectives::NllTerm& nll,
                                             const Eigen::MatrixXd& points,
                                             std::size_t batch_size) {
  const Eigen::Index n = points.rows();
  Eigen::VectorXd out(n);
  if (const auto* np = std::get_if<objectives::NeuralPenalty>(&penalty)) {
    out = np->lambda * objectives::consolidator_batch(*np->state, points);
  } else if (std::holds_alternative<objectives::GaussianPrior>(penalty)) {
    out = 0.5 * points.rowwise().squaredNorm();
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      out(i) = objectives::evaluate_penalty(penalty, ParamVector(points.row(i).transpose()));
    }
  }
  const std::size_t rows = nll.size();
  std::vector<std::size_t> idx;
  for (Eigen::Index i = 0; i < n; ++i) {
    const ParamVector theta = points.row(i).transpose();
    double total = 0.0;
    for (std::size_t lo = 0; lo < rows; lo += batch_size) {
      idx.clear();
      for (std::size_t r = lo; r < std::min(rows, lo + batch_size); ++r) idx.push_back(r);
      ad::Tape<double> tape;
      total += nll.on_rows(tape, tape.constant(theta), idx).value()(0, 0);
    }
    out(i) += total;
  }
  return out;
}

struct NcResult {
  ParamVector theta;
  ConsolidatorState state;
};

/// Trains on lambda * kappa(theta; phi) + nll (prior alone before the first
/// task), then refits the consolidator to that objective around the new
/// optimum.
inline NcResult nc_task_step(const ConsolidatorState& state, const tasks::Task& task,
                             const StepContext& ctx, const ParamVector& start,
                             std::size_t task_index) {
  const std::size_t d = ctx.model.parameter_count();
  if (state.spec.input_dim != d) {
    throw std::invalid_argument("nc_task_step: consolidator width differs from model");
  }
  objectives::Penalty penalty = objectives::GaussianPrior{};
  if (state.tasks_seen > 0) {
    penalty = objectives::NeuralPenalty{std::make_shared<const ConsolidatorState>(state), state.lambda};
  }
  NcResult r;
  r.theta = detail::train_on(penalty, task.train, ctx, task_index, start);
  const auto nll = detail::nll_for(ctx.model, task.train);
  const auto batch = static_cast<std::size_t>(ctx.train.batch_size);
  const BatchTarget target = [&](const Eigen::MatrixXd& pts) {
    return recursive_loss_values(penalty, nll, pts, batch);
  };
  r.state = state;
  const bool warm = state.warm_start && state.tasks_seen > 0;
  r.state.phi = fit_consolidator(target, r.theta, state,
                                 derive_seed(ctx.train.seed, "consolidator", task_index),
                                 warm ? &state.phi : nullptr);
  r.state.tasks_seen = state.tasks_seen + 1;
  return r;
}

}  // namespace smi::methods
