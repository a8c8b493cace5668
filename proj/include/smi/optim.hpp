#pragma once

// Mini-batch Adam under a one-cycle learning-rate schedule.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "smi/ad.hpp"
#include "smi/objectives.hpp"

namespace smi::optim {

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  double base_lr = 0.1;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be non-negative");
    if (batch_size <= 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
    if (!(base_lr > 0.0)) throw std::invalid_argument("TrainConfig: base_lr must be positive");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
      throw std::invalid_argument("TrainConfig: Adam betas must lie in (0, 1)");
    }
    if (!(adam_eps > 0.0)) throw std::invalid_argument("TrainConfig: adam_eps must be positive");
  }
};

/// Linear warmup from base/10 to base over the first 30% of steps, then
/// cosine decay to base/1000 at the final step.
inline double one_cycle_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0) throw std::invalid_argument("one_cycle_lr: total_steps must be positive");
  if (step >= total_steps) throw std::out_of_range("one_cycle_lr: step past end of schedule");
  const double s = static_cast<double>(step);
  const double warm = 0.3 * static_cast<double>(total_steps);
  const double start = base_lr / 10.0;
  const double end = base_lr / 1000.0;
  if (s < warm) return start + (base_lr - start) * s / warm;
  const double span = static_cast<double>(total_steps - 1) - warm;
  const double progress = span > 0.0 ? (s - warm) / span : 1.0;
  return end + (base_lr - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(Eigen::Index d, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    return {Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d), 0, b1, b2, eps};
  }
};

/// One bias-corrected Adam update of theta in place.
inline void adam_step(AdamState& s, ParamVector& theta, const Eigen::VectorXd& grad, double lr) {
  if (grad.size() != theta.size() || s.m.size() != theta.size()) {
    throw std::invalid_argument("adam_step: dimension mismatch");
  }
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  theta.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

struct StepReport {
  std::size_t step;
  const ParamVector& before;
  const Eigen::VectorXd& grad;
  const ParamVector& after;
};

using StepHook = std::function<void(const StepReport&)>;

inline std::size_t minibatch_count(std::size_t n, int batch_size) {
  return (n + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
}

/// Trains a recursive loss over its NLL dataset. Each epoch draws a fresh
/// seeded permutation; the last batch may be short. Every batch objective is
/// batch NLL + penalty / minibatch_count.
inline ParamVector train(const objectives::RecursiveLoss& loss, const TrainConfig& cfg,
                         ParamVector theta, const StepHook& hook = {}) {
  cfg.validate();
  const std::size_t n = loss.nll.size();
  if (n == 0) throw std::invalid_argument("train: empty dataset");
  const std::size_t batches = minibatch_count(n, cfg.batch_size);
  const std::size_t total = batches * static_cast<std::size_t>(cfg.epochs);
  if (total == 0) return theta;

  AdamState adam = AdamState::zeros(theta.size(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      const std::size_t lo = b * static_cast<std::size_t>(cfg.batch_size);
      const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> rows(order.data() + lo, hi - lo);
      const auto objective = [&](auto& tape, auto th) { return loss.batch(tape, th, rows, batches); };
      ad::ValueAndGrad vg;
      try {
        vg = ad::value_and_grad(objective, theta);
      } catch (const ad::EvaluationError& e) {
        throw TrainingError(step, e.what());
      }
      const double lr = one_cycle_lr(step, total, cfg.base_lr);
      if (hook) {
        const ParamVector before = theta;
        adam_step(adam, theta, vg.grad, lr);
        hook(StepReport{step, before, vg.grad, theta});
      } else {
        adam_step(adam, theta, vg.grad, lr);
      }
    }
  }
  return theta;
}

}  // namespace smi::optim
