#pragma once

// Dense classifiers: softmax/logistic regression, fully connected swish nets
// and the scalar-output consolidator net.
//
// Parameters live in one flat vector. Each layer contributes its weight
// matrix (fan_in x fan_out, column-major) followed by its bias (fan_out).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "smi/ad.hpp"
#include "smi/tape.hpp"

namespace smi::nn {

enum class Activation { swish };
enum class Head { categorical, bernoulli, scalar };

inline std::string to_string(Head h) {
  switch (h) {
    case Head::categorical: return "categorical";
    case Head::bernoulli: return "bernoulli";
    case Head::scalar: return "scalar";
  }
  return "?";
}

struct ModelSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_sizes;
  std::size_t output_dim = 1;
  Activation activation = Activation::swish;
  Head head = Head::categorical;

  /// Layer widths from input to output.
  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{input_dim};
    w.insert(w.end(), hidden_sizes.begin(), hidden_sizes.end());
    w.push_back(output_dim);
    return w;
  }

  std::size_t parameter_count() const {
    const auto w = widths();
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) n += w[l] * w[l + 1] + w[l + 1];
    return n;
  }

  void validate() const {
    if (input_dim == 0 || output_dim == 0) {
      throw std::invalid_argument("ModelSpec: input and output widths must be positive");
    }
    for (std::size_t h : hidden_sizes) {
      if (h == 0) throw std::invalid_argument("ModelSpec: hidden widths must be positive");
    }
    if ((head == Head::bernoulli || head == Head::scalar) && output_dim != 1) {
      throw std::invalid_argument("ModelSpec: " + to_string(head) + " head requires output_dim 1");
    }
  }

  bool operator==(const ModelSpec&) const = default;
};

/// Lecun-normal weights (std 1/sqrt(fan_in)), zero biases.
inline ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector theta = ParamVector::Zero(static_cast<Eigen::Index>(spec.parameter_count()));
  std::mt19937_64 rng(seed);
  const auto w = spec.widths();
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(w[l])));
    const auto nw = static_cast<Eigen::Index>(w[l] * w[l + 1]);
    for (Eigen::Index i = 0; i < nw; ++i) theta(off + i) = dist(rng);
    off += nw + static_cast<Eigen::Index>(w[l + 1]);
  }
  return theta;
}

inline double swish(double z) { return z / (1.0 + std::exp(-z)); }

/// Records the network on a tape. `x` is n x input_dim; the result is
/// n x output_dim logits (no activation on the last layer).
template <class T>
ad::Var<T> forward(const ModelSpec& spec, ad::Var<T> params, ad::Var<T> x) {
  if (static_cast<std::size_t>(params.rows()) != spec.parameter_count() || params.cols() != 1) {
    throw ad::ShapeError("forward: expected " + std::to_string(spec.parameter_count()) +
                         " parameters, got " + std::to_string(params.rows()));
  }
  if (static_cast<std::size_t>(x.cols()) != spec.input_dim) {
    throw ad::ShapeError("forward: expected " + std::to_string(spec.input_dim) +
                         " input columns, got " + std::to_string(x.cols()));
  }
  const auto w = spec.widths();
  ad::Var<T> h = x;
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    const auto fin = static_cast<Eigen::Index>(w[l]);
    const auto fout = static_cast<Eigen::Index>(w[l + 1]);
    const ad::Var<T> weight = ad::block(params, off, fin, fout);
    off += fin * fout;
    const ad::Var<T> bias = ad::block(params, off, fout, 1);
    off += fout;
    h = ad::add_bias(ad::matmul(h, weight), bias);
    if (l + 2 < w.size()) h = ad::swish(h);
  }
  return h;
}

/// Plain evaluation of the logits.
inline Eigen::MatrixXd forward(const ModelSpec& spec, const ParamVector& theta,
                               const Eigen::MatrixXd& x) {
  ad::Tape<double> tape;
  return forward(spec, tape.constant(theta), tape.constant(x)).value();
}

/// Softmax rows (categorical) or the sigmoid of the single logit (bernoulli).
inline Eigen::MatrixXd probabilities_from_logits(Head head, const Eigen::MatrixXd& logits) {
  if (head == Head::scalar) {
    throw std::invalid_argument("predict_proba: scalar head has no probabilities");
  }
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  if (head == Head::bernoulli) {
    for (Eigen::Index r = 0; r < logits.rows(); ++r) p(r, 0) = ad::detail::sigmoid(logits(r, 0));
    return p;
  }
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

inline Eigen::MatrixXd predict_proba(const ModelSpec& spec, const ParamVector& theta,
                                     const Eigen::MatrixXd& x) {
  if (spec.head == Head::scalar) {
    throw std::invalid_argument("predict_proba: scalar head has no probabilities");
  }
  return probabilities_from_logits(spec.head, forward(spec, theta, x));
}

/// Hard labels from probability rows: argmax with ties to the lowest index,
/// or p >= 0.5 -> 1 for a single bernoulli column.
inline std::vector<int> classes_from_probabilities(Head head, const Eigen::MatrixXd& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    if (head == Head::bernoulli) {
      out[static_cast<std::size_t>(r)] = probs(r, 0) >= 0.5 ? 1 : 0;
      continue;
    }
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
      if (probs(r, c) > probs(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

inline std::vector<int> predict_class(const ModelSpec& spec, const ParamVector& theta,
                                      const Eigen::MatrixXd& x) {
  return classes_from_probabilities(spec.head, predict_proba(spec, theta, x));
}

}  // namespace smi::nn
