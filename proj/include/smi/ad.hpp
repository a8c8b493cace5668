#pragma once

// Exact first and second derivatives of scalar objectives over a flat
// parameter vector.
//
// A scalar objective is any callable `f(tape, theta)` that records its
// computation on the given tape and returns a 1x1 node. Generic lambdas
// (`[&](auto& tape, auto theta) { ... }`) qualify, and the same callable is
// instantiated over double for gradients and over Dual for Hessians.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "smi/dual.hpp"
#include "smi/tape.hpp"

namespace smi {

using ParamVector = Eigen::VectorXd;
using HessianMatrix = Eigen::MatrixXd;

namespace ad {

template <class F>
concept ScalarObjective = requires(const F& f, Tape<double>& td, Var<double> vd, Tape<Dual>& tj,
                                   Var<Dual> vj) {
  { f(td, vd) } -> std::same_as<Var<double>>;
  { f(tj, vj) } -> std::same_as<Var<Dual>>;
};

struct ValueAndGrad {
  double value = 0.0;
  Eigen::VectorXd grad;
};

template <ScalarObjective F>
ValueAndGrad value_and_grad(const F& f, const ParamVector& theta) {
  Tape<double> tape;
  const Var<double> th = tape.variable(theta);
  const Var<double> out = f(tape, th);
  detail::require(out.rows() == 1 && out.cols() == 1, "objective must return a scalar");
  tape.backward(out);
  ValueAndGrad r{out.value()(0, 0), tape.gradient(th).col(0)};
  if (!std::isfinite(r.value)) {
    throw EvaluationError("objective value is not finite (" + std::to_string(r.value) + ")");
  }
  for (Eigen::Index i = 0; i < r.grad.size(); ++i) {
    if (!std::isfinite(r.grad(i))) {
      throw EvaluationError("gradient entry " + std::to_string(i) + " is not finite");
    }
  }
  return r;
}

/// Objective value only; records the program on a tape without a reverse sweep.
template <ScalarObjective F>
double value(const F& f, const ParamVector& theta) {
  Tape<double> tape;
  const Var<double> out = f(tape, tape.constant(theta));
  detail::require(out.rows() == 1 && out.cols() == 1, "objective must return a scalar");
  return out.value()(0, 0);
}

/// Jacobian of the gradient, one forward-over-reverse pass per coordinate.
/// No symmetrization is applied.
template <ScalarObjective F>
HessianMatrix raw_hessian(const F& f, const ParamVector& theta) {
  const Eigen::Index d = theta.size();
  HessianMatrix h(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Tape<Dual> tape;
    Mat<Dual> seed(d, 1);
    for (Eigen::Index i = 0; i < d; ++i) seed(i, 0) = Dual(theta(i), i == j ? 1.0 : 0.0);
    const Var<Dual> th = tape.variable(std::move(seed));
    const Var<Dual> out = f(tape, th);
    detail::require(out.rows() == 1 && out.cols() == 1, "objective must return a scalar");
    tape.backward(out);
    const Mat<Dual> g = tape.gradient(th);
    for (Eigen::Index i = 0; i < d; ++i) {
      const double hij = g(i, 0).tan;
      if (!std::isfinite(hij)) {
        throw EvaluationError("Hessian entry (" + std::to_string(i) + ", " + std::to_string(j) +
                              ") is not finite");
      }
      h(i, j) = hij;
    }
  }
  return h;
}

/// Exact Hessian, symmetrized as (H + H^T) / 2.
template <ScalarObjective F>
HessianMatrix hessian(const F& f, const ParamVector& theta) {
  HessianMatrix h = raw_hessian(f, theta);
  return (0.5 * (h + h.transpose())).eval();
}

/// Sum of per-batch Hessians; equals the Hessian of the summed objective.
template <ScalarObjective F>
HessianMatrix accumulate_hessian_over_batches(std::span<const F> batches, const ParamVector& theta) {
  if (batches.empty()) {
    throw std::invalid_argument("accumulate_hessian_over_batches: no batches given");
  }
  HessianMatrix total = HessianMatrix::Zero(theta.size(), theta.size());
  for (const F& f : batches) total += hessian(f, theta);
  return total;
}

template <ScalarObjective F>
HessianMatrix accumulate_hessian_over_batches(const std::vector<F>& batches,
                                              const ParamVector& theta) {
  return accumulate_hessian_over_batches(std::span<const F>(batches), theta);
}

}  // namespace ad
}  // namespace smi
