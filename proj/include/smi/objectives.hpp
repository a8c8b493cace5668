#pragma once

// Likelihood, prior and consolidation terms, and the recursive training
// objective assembled from them.
//
// NLLs are sums over examples so that Hessians and Fisher diagonals of
// disjoint batches add up to those of the whole dataset.

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "smi/ad.hpp"
#include "smi/nn.hpp"
#include "smi/tape.hpp"
#include "smi/tasks.hpp"

namespace smi::objectives {

using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Likelihood terms on logits

inline double categorical_nll(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  Tape<double> tape;
  return ad::softmax_cross_entropy(tape.constant(logits), labels).value()(0, 0);
}

inline double bernoulli_nll(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  Tape<double> tape;
  return ad::sigmoid_cross_entropy(tape.constant(logits), labels).value()(0, 0);
}

/// m / n_c for every class c, with m the smallest class count.
inline std::vector<double> class_weights(std::span<const std::size_t> class_counts) {
  if (class_counts.empty()) throw std::invalid_argument("class_weights: no classes");
  for (std::size_t n : class_counts) {
    if (n == 0) throw std::invalid_argument("class_weights: class count must be at least 1");
  }
  const double m = static_cast<double>(*std::min_element(class_counts.begin(), class_counts.end()));
  std::vector<double> w;
  w.reserve(class_counts.size());
  for (std::size_t n : class_counts) w.push_back(m / static_cast<double>(n));
  return w;
}

inline std::vector<double> row_weights(std::span<const int> labels,
                                       std::span<const std::size_t> class_counts) {
  const auto w = class_weights(class_counts);
  std::vector<double> out;
  out.reserve(labels.size());
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= w.size()) {
      throw std::out_of_range("weighted_categorical_nll: label " + std::to_string(y) +
                              " has no class count");
    }
    out.push_back(w[static_cast<std::size_t>(y)]);
  }
  return out;
}

inline double weighted_categorical_nll(const Eigen::MatrixXd& logits, std::span<const int> labels,
                                       std::span<const std::size_t> class_counts) {
  const auto w = row_weights(labels, class_counts);
  Tape<double> tape;
  return ad::softmax_cross_entropy(tape.constant(logits), labels, w).value()(0, 0);
}

// ---------------------------------------------------------------------------
// Prior and consolidation penalties

/// 0.5 * ||theta||^2
template <class T>
Var<T> gaussian_prior(Var<T> theta) {
  return ad::scale(ad::sum_squares(theta), 0.5);
}

inline double gaussian_prior(const ParamVector& theta) { return 0.5 * theta.squaredNorm(); }

/// Anchor plus accumulated dense curvature (the prior's identity included).
struct DensePenaltyState {
  ParamVector anchor;
  HessianMatrix hessian;
  std::size_t tasks_seen = 0;

  static DensePenaltyState initial(Eigen::Index d) {
    return {ParamVector::Zero(d), HessianMatrix::Identity(d, d), 0};
  }
  Eigen::Index dimension() const { return anchor.size(); }
};

/// Anchor plus accumulated diagonal curvature.
struct DiagonalPenaltyState {
  ParamVector anchor;
  Eigen::VectorXd diagonal;
  std::size_t tasks_seen = 0;

  static DiagonalPenaltyState initial(Eigen::Index d) {
    return {ParamVector::Zero(d), Eigen::VectorXd::Ones(d), 0};
  }
  Eigen::Index dimension() const { return anchor.size(); }
};

namespace detail {

template <class T>
Var<T> displacement(Var<T> theta, const ParamVector& anchor) {
  if (theta.rows() != anchor.size() || theta.cols() != 1) {
    throw ad::ShapeError("penalty: parameter length " + std::to_string(theta.rows()) +
                         " differs from anchor length " + std::to_string(anchor.size()));
  }
  return ad::sub(theta, theta.tape->lift(anchor));
}

}  // namespace detail

/// (lambda / 2) (theta - anchor)^T H (theta - anchor)
template <class T>
Var<T> quadratic_penalty(const DensePenaltyState& s, Var<T> theta, double lambda) {
  return ad::scale(ad::quad_form(detail::displacement(theta, s.anchor), s.hessian), 0.5 * lambda);
}

template <class T>
Var<T> quadratic_penalty(const DiagonalPenaltyState& s, Var<T> theta, double lambda) {
  return ad::scale(ad::diag_quad_form(detail::displacement(theta, s.anchor), s.diagonal),
                   0.5 * lambda);
}

inline double quadratic_penalty(const DensePenaltyState& s, const ParamVector& theta,
                                double lambda) {
  if (theta.size() != s.anchor.size() || s.hessian.rows() != s.anchor.size() ||
      s.hessian.cols() != s.anchor.size()) {
    throw ad::ShapeError("quadratic_penalty: dimension mismatch");
  }
  const ParamVector delta = theta - s.anchor;
  return 0.5 * lambda * delta.dot(s.hessian * delta);
}

inline double quadratic_penalty(const DiagonalPenaltyState& s, const ParamVector& theta,
                                double lambda) {
  if (theta.size() != s.anchor.size() || s.diagonal.size() != s.anchor.size()) {
    throw ad::ShapeError("quadratic_penalty: dimension mismatch");
  }
  const ParamVector delta = theta - s.anchor;
  return 0.5 * lambda * delta.cwiseProduct(delta).dot(s.diagonal);
}

/// Trained surrogate of the previous loss surface, plus the settings used to fit it.
struct ConsolidatorState {
  nn::ModelSpec spec;  // input width = main model parameter count, scalar head
  ParamVector phi;
  double lambda = 1.0;
  double radius = 1.0;
  double beta = 0.1;
  std::size_t sample_size = 64;
  std::size_t fit_steps = 1000;
  double fit_lr = 1e-3;
  double huber_delta = 1.0;
  bool warm_start = false;  // start each fit from the previous phi
  std::size_t tasks_seen = 0;

  static nn::ModelSpec make_spec(std::size_t d, std::vector<std::size_t> hidden = {256, 256}) {
    nn::ModelSpec s;
    s.input_dim = d;
    s.hidden_sizes = std::move(hidden);
    s.output_dim = 1;
    s.head = nn::Head::scalar;
    return s;
  }
};

/// kappa(theta; phi) for one parameter vector, recorded on the tape.
template <class T>
Var<T> consolidator_value(const ConsolidatorState& s, Var<T> theta) {
  if (static_cast<std::size_t>(theta.rows()) != s.spec.input_dim || theta.cols() != 1) {
    throw ad::ShapeError("neural_penalty: consolidator expects " +
                         std::to_string(s.spec.input_dim) + " inputs, got " +
                         std::to_string(theta.rows()));
  }
  Tape<T>& tape = *theta.tape;
  const Var<T> phi = tape.lift(s.phi);
  return nn::forward(s.spec, phi, ad::transpose(theta));
}

/// lambda * kappa(theta; phi)
template <class T>
Var<T> neural_penalty(const ConsolidatorState& s, Var<T> theta, double lambda) {
  return ad::scale(consolidator_value(s, theta), lambda);
}

inline double neural_penalty(const ConsolidatorState& s, const ParamVector& theta, double lambda) {
  Tape<double> tape;
  return neural_penalty(s, tape.constant(theta), lambda).value()(0, 0);
}

/// kappa evaluated for every row of `points` (n x d).
inline Eigen::VectorXd consolidator_batch(const ConsolidatorState& s, const Eigen::MatrixXd& points) {
  return nn::forward(s.spec, s.phi, points).col(0);
}

/// Huber loss of r = a - b: r^2/2 inside [-delta, delta], linear outside.
inline double huber(double a, double b, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("huber: delta must be positive");
  const double r = std::abs(a - b);
  return r <= delta ? 0.5 * r * r : delta * (r - 0.5 * delta);
}

// ---------------------------------------------------------------------------
// Penalty selection and the recursive objective

struct GaussianPrior {};
struct DensePenalty {
  std::shared_ptr<const DensePenaltyState> state;
  double lambda = 1.0;
};
struct DiagonalPenalty {
  std::shared_ptr<const DiagonalPenaltyState> state;
  double lambda = 1.0;
};
struct NeuralPenalty {
  std::shared_ptr<const ConsolidatorState> state;
  double lambda = 1.0;
};

using Penalty = std::variant<GaussianPrior, DensePenalty, DiagonalPenalty, NeuralPenalty>;

template <class T>
Var<T> evaluate_penalty(const Penalty& p, Var<T> theta) {
  struct Visitor {
    Var<T> theta;
    Var<T> operator()(const GaussianPrior&) const { return gaussian_prior(theta); }
    Var<T> operator()(const DensePenalty& q) const {
      return quadratic_penalty(*q.state, theta, q.lambda);
    }
    Var<T> operator()(const DiagonalPenalty& q) const {
      return quadratic_penalty(*q.state, theta, q.lambda);
    }
    Var<T> operator()(const NeuralPenalty& q) const {
      return neural_penalty(*q.state, theta, q.lambda);
    }
  };
  return std::visit(Visitor{theta}, p);
}

inline double evaluate_penalty(const Penalty& p, const ParamVector& theta) {
  Tape<double> tape;
  return evaluate_penalty(p, tape.constant(theta)).value()(0, 0);
}

enum class Likelihood { categorical, bernoulli, weighted_categorical };

inline Likelihood likelihood_for(nn::Head head) {
  if (head == nn::Head::categorical) return Likelihood::categorical;
  if (head == nn::Head::bernoulli) return Likelihood::bernoulli;
  throw std::invalid_argument("no likelihood for a scalar head");
}

/// Negative log-likelihood of a model over a dataset (or a subset of its rows).
struct NllTerm {
  nn::ModelSpec spec;
  std::shared_ptr<const tasks::Dataset> data;
  Likelihood kind = Likelihood::categorical;
  std::vector<std::size_t> class_counts;  // weighted_categorical only

  NllTerm() = default;
  NllTerm(nn::ModelSpec s, std::shared_ptr<const tasks::Dataset> d, Likelihood k)
      : spec(std::move(s)), data(std::move(d)), kind(k) {
    if (kind == Likelihood::weighted_categorical) class_counts = data->class_counts();
  }

  std::size_t size() const { return data->size(); }

  template <class T>
  Var<T> on(Tape<T>& tape, Var<T> theta, const Eigen::MatrixXd& x, std::span<const int> y) const {
    const Var<T> logits = nn::forward(spec, theta, tape.lift(x));
    switch (kind) {
      case Likelihood::categorical: return ad::softmax_cross_entropy(logits, y);
      case Likelihood::bernoulli: return ad::sigmoid_cross_entropy(logits, y);
      case Likelihood::weighted_categorical: {
        const auto w = row_weights(y, class_counts);
        return ad::softmax_cross_entropy(logits, y, w);
      }
    }
    throw std::logic_error("unknown likelihood");
  }

  template <class T>
  Var<T> operator()(Tape<T>& tape, Var<T> theta) const {
    return on(tape, theta, data->x, data->y);
  }

  template <class T>
  Var<T> on_rows(Tape<T>& tape, Var<T> theta, std::span<const std::size_t> rows) const {
    const tasks::Dataset batch = tasks::subset(*data, rows);
    return on(tape, theta, batch.x, batch.y);
  }

  double value(const ParamVector& theta) const {
    Tape<double> tape;
    return (*this)(tape, tape.constant(theta)).value()(0, 0);
  }
};

/// penalty(theta) + nll(theta). In mini-batch form each batch carries
/// penalty / minibatch_count so the batch objectives sum to the full one.
struct RecursiveLoss {
  Penalty penalty;
  NllTerm nll;
  std::size_t minibatch_count = 1;

  template <class T>
  Var<T> operator()(Tape<T>& tape, Var<T> theta) const {
    return ad::add(evaluate_penalty(penalty, theta), nll(tape, theta));
  }

  template <class T>
  Var<T> batch(Tape<T>& tape, Var<T> theta, std::span<const std::size_t> rows,
               std::size_t batches) const {
    return ad::add(ad::scale(evaluate_penalty(penalty, theta), 1.0 / static_cast<double>(batches)),
                   nll.on_rows(tape, theta, rows));
  }

  double value(const ParamVector& theta) const {
    Tape<double> tape;
    return (*this)(tape, tape.constant(theta)).value()(0, 0);
  }
};

/// 0.5 ||theta||^2 + sum_i nll_i(theta) over every retained task dataset.
inline double exact_joint_loss(const nn::ModelSpec& spec, std::span<const tasks::Dataset> tasks,
                               const ParamVector& theta) {
  double total = gaussian_prior(theta);
  for (const auto& ds : tasks) {
    NllTerm term(spec, std::make_shared<const tasks::Dataset>(ds), likelihood_for(spec.head));
    total += term.value(theta);
  }
  return total;
}

}  // namespace smi::objectives
