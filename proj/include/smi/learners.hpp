#pragma once

// Task-loop drivers for each continual-learning method. A learner owns the
// current parameters and its method state, consumes tasks strictly in order,
// and can be saved and restored between tasks.

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "smi/methods.hpp"
#include "smi/serialize.hpp"
#include "smi/tasks.hpp"

namespace smi::methods {

/// Ordered (name, value) pairs, e.g. lambda=10;r=1.
struct HyperParams {
  std::vector<std::pair<std::string, double>> values;

  bool has(std::string_view name) const {
    for (const auto& [k, v] : values) {
      if (k == name) return true;
    }
    return false;
  }

  double get(std::string_view name) const {
    for (const auto& [k, v] : values) {
      if (k == name) return v;
    }
    throw std::invalid_argument("missing hyperparameter '" + std::string(name) + "'");
  }

  std::string to_string() const {
    std::string s;
    for (const auto& [k, v] : values) {
      if (!s.empty()) s += ';';
      s += k + "=" + tasks::format_double(v);
    }
    return s;
  }

  bool operator==(const HyperParams&) const = default;
};

/// Hyperparameter names each method expects, in grid order.
inline std::vector<std::string> hyperparameter_names(std::string_view method) {
  if (method == "finetune" || method == "joint") return {};
  if (method == "aqc" || method == "ewc") return {"lambda"};
  if (method == "si") return {"lambda", "xi"};
  if (method == "nc") return {"lambda", "r"};
  throw std::invalid_argument("unknown method '" + std::string(method) +
                              "' (expected finetune, joint, aqc, nc, ewc or si)");
}

inline bool is_known_method(std::string_view method) {
  return method == "finetune" || method == "joint" || method == "aqc" || method == "nc" ||
         method == "ewc" || method == "si";
}

/// Consolidator architecture and fitting schedule.
struct NcSettings {
  std::vector<std::size_t> hidden{256, 256};
  std::size_t sample_size = 64;
  std::size_t fit_steps = 1000;
  double beta = 0.1;
  double lr = 1e-3;
  double huber_delta = 1.0;
  bool warm_start = false;
};

class Learner {
 public:
  explicit Learner(StepContext ctx) : ctx_(std::move(ctx)), theta_(initial_params(ctx_)) {}
  virtual ~Learner() = default;

  virtual std::string method() const = 0;

  /// Trains on task `t`, which must equal tasks_completed().
  ParamVector learn(const tasks::TaskSequence& seq, std::size_t t) {
    if (t != done_) {
      throw std::logic_error("learner expects task " + std::to_string(done_) + ", got " +
                             std::to_string(t));
    }
    if (t >= seq.size()) throw std::out_of_range("task index past end of sequence");
    step(seq, t);
    ++done_;
    return theta_;
  }

  const ParamVector& theta() const { return theta_; }
  std::size_t tasks_completed() const { return done_; }
  const StepContext& context() const { return ctx_; }

  io::json save() const {
    return io::json{{"method", method()},
                    {"tasks_completed", done_},
                    {"model", io::spec_to_json(ctx_.model)},
                    {"theta", io::vector_to_json(theta_)},
                    {"state", state_json()}};
  }

  void restore(const io::json& j) {
    if (j.at("method").get<std::string>() != method()) {
      throw std::runtime_error("state file belongs to method '" +
                               j.at("method").get<std::string>() + "', not '" + method() + "'");
    }
    if (!(io::spec_from_json(j.at("model")) == ctx_.model)) {
      throw std::runtime_error("state file was written for a different model");
    }
    theta_ = io::vector_from_json(j.at("theta"));
    done_ = j.at("tasks_completed").get<std::size_t>();
    restore_state(j.at("state"));
  }

 protected:
  virtual void step(const tasks::TaskSequence& seq, std::size_t t) = 0;
  virtual io::json state_json() const { return io::json::object(); }
  virtual void restore_state(const io::json&) {}

  StepContext ctx_;
  ParamVector theta_;
  std::size_t done_ = 0;
};

class FineTuneLearner final : public Learner {
 public:
  using Learner::Learner;
  std::string method() const override { return "finetune"; }

 protected:
  void step(const tasks::TaskSequence& seq, std::size_t t) override {
    theta_ = detail::train_on(objectives::GaussianPrior{}, seq.tasks[t].train, ctx_, t, theta_);
  }
};

class JointLearner final : public Learner {
 public:
  using Learner::Learner;
  std::string method() const override { return "joint"; }

 protected:
  void step(const tasks::TaskSequence& seq, std::size_t t) override {
    theta_ = detail::train_on(objectives::GaussianPrior{}, joint_data(seq, t), ctx_, t, theta_);
  }
};

class AqcLearner final : public Learner {
 public:
  AqcLearner(StepContext ctx, double lambda)
      : Learner(std::move(ctx)),
        lambda_(lambda),
        state_(DensePenaltyState::initial(static_cast<Eigen::Index>(ctx_.model.parameter_count()))) {}
  std::string method() const override { return "aqc"; }
  const DensePenaltyState& state() const { return state_; }

 protected:
  void step(const tasks::TaskSequence& seq, std::size_t t) override {
    auto r = aqc_task_step(state_, seq.tasks[t], lambda_, ctx_, theta_, t);
    theta_ = std::move(r.theta);
    state_ = std::move(r.state);
  }
  io::json state_json() const override { return io::to_json(state_); }
  void restore_state(const io::json& j) override { io::from_json(j, state_); }

 private:
  double lambda_;
  DensePenaltyState state_;
};

class EwcLearner final : public Learner {
 public:
  EwcLearner(StepContext ctx, double lambda)
      : Learner(std::move(ctx)),
        lambda_(lambda),
        state_(DiagonalPenaltyState::initial(static_cast<Eigen::Index>(ctx_.model.parameter_count()))) {}
  std::string method() const override { return "ewc"; }
  const DiagonalPenaltyState& state() const { return state_; }

 protected:
  void step(const tasks::TaskSequence& seq, std::size_t t) override {
    auto r = ewc_task_step(state_, seq.tasks[t], lambda_, ctx_, theta_, t);
    theta_ = std::move(r.theta);
    state_ = std::move(r.state);
  }
  io::json state_json() const override { return io::to_json(state_); }
  void restore_state(const io::json& j) override { io::from_json(j, state_); }

 private:
  double lambda_;
  DiagonalPenaltyState state_;
};

class SiLearner final : public Learner {
 public:
  SiLearner(StepContext ctx, double lambda, double xi)
      : Learner(std::move(ctx)), lambda_(lambda), xi_(xi), state_(SiState::initial(theta_)) {}
  std::string method() const override { return "si"; }
  const SiState& state() const { return state_; }

 protected:
  void step(const tasks::TaskSequence& seq, std::size_t t) override {
    auto r = si_task_step(state_, seq.tasks[t], lambda_, xi_, ctx_, t);
    theta_ = std::move(r.theta);
    state_ = std::move(r.state);
  }
  io::json state_json() const override { return io::to_json(state_); }
  void restore_state(const io::json& j) override { io::from_json(j, state_); }

 private:
  double lambda_;
  double xi_;
  SiState state_;
};

class NcLearner final : public Learner {
 public:
  NcLearner(StepContext ctx, double lambda, double radius, const NcSettings& nc)
      : Learner(std::move(ctx)) {
    state_.spec = ConsolidatorState::make_spec(ctx_.model.parameter_count(), nc.hidden);
    state_.lambda = lambda;
    state_.radius = radius;
    state_.beta = nc.beta;
    state_.sample_size = nc.sample_size;
    state_.fit_steps = nc.fit_steps;
    state_.fit_lr = nc.lr;
    state_.huber_delta = nc.huber_delta;
    state_.warm_start = nc.warm_start;
  }
  std::string method() const override { return "nc"; }
  const ConsolidatorState& state() const { return state_; }

 protected:
  void step(const tasks::TaskSequence& seq, std::size_t t) override {
    auto r = nc_task_step(state_, seq.tasks[t], ctx_, theta_, t);
    theta_ = std::move(r.theta);
    state_ = std::move(r.state);
  }
  io::json state_json() const override { return io::to_json(state_); }
  void restore_state(const io::json& j) override { io::from_json(j, state_); }

 private:
  ConsolidatorState state_;
};

inline std::unique_ptr<Learner> make_learner(std::string_view method, const HyperParams& hp,
                                             const StepContext& ctx, const NcSettings& nc = {}) {
  for (const auto& name : hyperparameter_names(method)) {
    if (!hp.has(name)) {
      throw std::invalid_argument("method '" + std::string(method) + "' needs hyperparameter '" +
                                  name + "'");
    }
    if (!(hp.get(name) > 0.0)) {
      throw std::invalid_argument("hyperparameter '" + name + "' must be positive");
    }
  }
  if (method == "finetune") return std::make_unique<FineTuneLearner>(ctx);
  if (method == "joint") return std::make_unique<JointLearner>(ctx);
  if (method == "aqc") return std::make_unique<AqcLearner>(ctx, hp.get("lambda"));
  if (method == "ewc") return std::make_unique<EwcLearner>(ctx, hp.get("lambda"));
  if (method == "si") return std::make_unique<SiLearner>(ctx, hp.get("lambda"), hp.get("xi"));
  if (method == "nc") return std::make_unique<NcLearner>(ctx, hp.get("lambda"), hp.get("r"), nc);
  throw std::invalid_argument("unknown method '" + std::string(method) + "'");
}

}  // namespace smi::methods
