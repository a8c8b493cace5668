#pragma once

// Matrix-valued reverse-mode tape. Every node holds an Eigen matrix; the
// scalar type is a template parameter so the same recorded program can run
// over double (gradients) or Dual (Hessian columns).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "smi/dual.hpp"

namespace smi::ad {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline double exp_(double x) { return std::exp(x); }
inline Dual exp_(const Dual& x) { return exp(x); }
inline double log_(double x) { return std::log(x); }
inline Dual log_(const Dual& x) { return log(x); }
inline double log1p_(double x) { return std::log1p(x); }
inline Dual log1p_(const Dual& x) { return log1p(x); }

template <class T>
T sigmoid(const T& z) {
  if (z >= T(0.0)) {
    return T(1.0) / (T(1.0) + exp_(-z));
  }
  const T e = exp_(z);
  return e / (T(1.0) + e);
}

// log(1 + e^z) without overflow.
template <class T>
T softplus(const T& z) {
  const T neg_abs = z < T(0.0) ? z : -z;
  const T pos = z > T(0.0) ? z : T(0.0);
  return pos + log1p_(exp_(neg_abs));
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace detail

template <class T>
class Tape;

/// Handle to a node recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Mat<T>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <class T>
class Tape {
 public:
  using Matrix = Mat<T>;
  using Backward = std::function<void(Tape&, const Matrix& adjoint)>;

  Tape() { nodes_.reserve(64); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> variable(Matrix value) { return push(std::move(value), true, {}); }
  Var<T> constant(Matrix value) { return push(std::move(value), false, {}); }

  /// Constant node from double data, converted to the tape's scalar type.
  Var<T> lift(const Eigen::MatrixXd& value) {
    if constexpr (std::is_same_v<T, double>) {
      return constant(value);
    } else {
      return constant(value.template cast<T>());
    }
  }

  Var<T> push(Matrix value, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, std::move(backward)});
    return Var<T>{this, nodes_.size() - 1};
  }

  const Matrix& value(Var<T> v) const { return nodes_[v.id].value; }
  bool needs_grad(Var<T> v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adjoint of a node after backward(); zeros when the root did not depend on it.
  Matrix gradient(Var<T> v) const {
    const Node& n = nodes_[v.id];
    if (n.adjoint.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.adjoint;
  }

  template <class Derived>
  void accumulate(Var<T> v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.adjoint.size() == 0) {
      n.adjoint = g;
    } else {
      n.adjoint += g;
    }
  }

  /// Adds g into the rows x cols column-major slice of a column vector's adjoint.
  template <class Derived>
  void accumulate_slice(Var<T> v, Eigen::Index offset, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.adjoint.size() == 0) n.adjoint = Matrix::Zero(n.value.rows(), n.value.cols());
    Eigen::Map<Matrix>(n.adjoint.data() + offset, g.rows(), g.cols()) += g;
  }

  /// Reverse sweep from a 1x1 root.
  void backward(Var<T> root) {
    detail::require(value(root).rows() == 1 && value(root).cols() == 1,
                    "backward: root must be a scalar");
    for (auto& n : nodes_) n.adjoint.resize(0, 0);
    if (!nodes_[root.id].needs_grad) return;
    nodes_[root.id].adjoint = Matrix::Constant(1, 1, T(1.0));
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.adjoint.size() == 0) continue;
      n.backward(*this, n.adjoint);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix adjoint;
    bool needs_grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations

/// Column-major rows x cols view of a slice of a column vector.
template <class T>
Var<T> block(Var<T> vec, Eigen::Index offset, Eigen::Index rows, Eigen::Index cols) {
  const auto& v = vec.value();
  detail::require(v.cols() == 1, "block: source must be a column vector");
  detail::require(offset >= 0 && offset + rows * cols <= v.rows(), "block: slice out of range");
  Mat<T> out = Eigen::Map<const Mat<T>>(v.data() + offset, rows, cols);
  Tape<T>& tape = *vec.tape;
  return tape.push(std::move(out), tape.needs_grad(vec),
                   [vec, offset](Tape<T>& t, const Mat<T>& adj) {
                     t.accumulate_slice(vec, offset, adj);
                   });
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape<T>& tape = *a.tape;
  Mat<T> out = a.value() * b.value();
  const bool ng = tape.needs_grad(a) || tape.needs_grad(b);
  return tape.push(std::move(out), ng, [a, b](Tape<T>& t, const Mat<T>& adj) {
    if (t.needs_grad(a)) t.accumulate(a, adj * t.value(b).transpose());
    if (t.needs_grad(b)) t.accumulate(b, t.value(a).transpose() * adj);
  });
}

/// Adds the column vector `bias` (length a.cols()) to every row of `a`.
template <class T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
  detail::require(bias.cols() == 1 && bias.rows() == a.cols(), "add_bias: bias length mismatch");
  Tape<T>& tape = *a.tape;
  Mat<T> out = a.value();
  out.rowwise() += bias.value().col(0).transpose();
  const bool ng = tape.needs_grad(a) || tape.needs_grad(bias);
  return tape.push(std::move(out), ng, [a, bias](Tape<T>& t, const Mat<T>& adj) {
    t.accumulate(a, adj);
    if (t.needs_grad(bias)) t.accumulate(bias, adj.colwise().sum().transpose());
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape<T>& tape = *a.tape;
  Mat<T> out = a.value() + b.value();
  const bool ng = tape.needs_grad(a) || tape.needs_grad(b);
  return tape.push(std::move(out), ng, [a, b](Tape<T>& t, const Mat<T>& adj) {
    t.accumulate(a, adj);
    t.accumulate(b, adj);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape<T>& tape = *a.tape;
  Mat<T> out = a.value() - b.value();
  const bool ng = tape.needs_grad(a) || tape.needs_grad(b);
  return tape.push(std::move(out), ng, [a, b](Tape<T>& t, const Mat<T>& adj) {
    t.accumulate(a, adj);
    if (t.needs_grad(b)) t.accumulate(b, -adj);
  });
}

template <class T>
Var<T> scale(Var<T> a, double c) {
  Tape<T>& tape = *a.tape;
  Mat<T> out = a.value() * T(c);
  return tape.push(std::move(out), tape.needs_grad(a), [a, c](Tape<T>& t, const Mat<T>& adj) {
    t.accumulate(a, adj * T(c));
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  Tape<T>& tape = *a.tape;
  Mat<T> out = a.value().transpose();
  return tape.push(std::move(out), tape.needs_grad(a), [a](Tape<T>& t, const Mat<T>& adj) {
    t.accumulate(a, adj.transpose());
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  Tape<T>& tape = *a.tape;
  Mat<T> out = Mat<T>::Constant(1, 1, a.value().sum());
  const Eigen::Index r = a.rows(), c = a.cols();
  return tape.push(std::move(out), tape.needs_grad(a), [a, r, c](Tape<T>& t, const Mat<T>& adj) {
    t.accumulate(a, Mat<T>::Constant(r, c, adj(0, 0)));
  });
}

/// Sum of squared entries.
template <class T>
Var<T> sum_squares(Var<T> a) {
  Tape<T>& tape = *a.tape;
  Mat<T> out = Mat<T>::Constant(1, 1, a.value().squaredNorm());
  return tape.push(std::move(out), tape.needs_grad(a), [a](Tape<T>& t, const Mat<T>& adj) {
    t.accumulate(a, t.value(a) * (T(2.0) * adj(0, 0)));
  });
}

/// Elementwise z * sigmoid(z).
template <class T>
Var<T> swish(Var<T> a) {
  Tape<T>& tape = *a.tape;
  Mat<T> out = a.value().unaryExpr([](const T& z) { return z * detail::sigmoid(z); });
  return tape.push(std::move(out), tape.needs_grad(a), [a](Tape<T>& t, const Mat<T>& adj) {
    const Mat<T> d = t.value(a).unaryExpr([](const T& z) {
      const T s = detail::sigmoid(z);
      return s * (T(1.0) + z * (T(1.0) - s));
    });
    t.accumulate(a, adj.cwiseProduct(d));
  });
}

/// v^T H v for a column vector v and fixed matrix H.
template <class T>
Var<T> quad_form(Var<T> v, const Eigen::MatrixXd& h) {
  detail::require(v.cols() == 1 && h.rows() == v.rows() && h.cols() == v.rows(),
                  "quad_form: dimension mismatch");
  Tape<T>& tape = *v.tape;
  Mat<T> hc = h.template cast<T>();
  Mat<T> hv = hc * v.value();
  Mat<T> out = Mat<T>::Constant(1, 1, v.value().col(0).dot(hv.col(0)));
  return tape.push(std::move(out), tape.needs_grad(v),
                   [v, hc = std::move(hc)](Tape<T>& t, const Mat<T>& adj) {
                     t.accumulate(v, (hc * t.value(v) + hc.transpose() * t.value(v)) * adj(0, 0));
                   });
}

/// sum_k h_k v_k^2 for a column vector v and fixed weights h.
template <class T>
Var<T> diag_quad_form(Var<T> v, const Eigen::VectorXd& h) {
  detail::require(v.cols() == 1 && h.size() == v.rows(), "diag_quad_form: dimension mismatch");
  Tape<T>& tape = *v.tape;
  Mat<T> hc = h.template cast<T>();
  Mat<T> out = Mat<T>::Constant(1, 1, v.value().cwiseProduct(v.value()).cwiseProduct(hc).sum());
  return tape.push(std::move(out), tape.needs_grad(v),
                   [v, hc = std::move(hc)](Tape<T>& t, const Mat<T>& adj) {
                     t.accumulate(v, t.value(v).cwiseProduct(hc) * (T(2.0) * adj(0, 0)));
                   });
}

/// Sum over rows of w_r * (logsumexp(z_r) - z_r[label_r]). Empty weights means all ones.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels,
                             std::span<const double> weights = {}) {
  const Mat<T>& z = logits.value();
  detail::require(static_cast<Eigen::Index>(labels.size()) == z.rows(),
                  "softmax_cross_entropy: label count differs from row count");
  detail::require(weights.empty() || weights.size() == labels.size(),
                  "softmax_cross_entropy: weight count differs from row count");
  const Eigen::Index n = z.rows(), k = z.cols();
  Mat<T> probs(n, k);
  T total(0.0);
  for (Eigen::Index r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= k) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) +
                              " outside [0, " + std::to_string(k) + ")");
    }
    T m = z(r, 0);
    for (Eigen::Index c = 1; c < k; ++c) m = z(r, c) > m ? z(r, c) : m;
    T s(0.0);
    for (Eigen::Index c = 0; c < k; ++c) {
      probs(r, c) = detail::exp_(z(r, c) - m);
      s += probs(r, c);
    }
    for (Eigen::Index c = 0; c < k; ++c) probs(r, c) /= s;
    const T w = weights.empty() ? T(1.0) : T(weights[static_cast<std::size_t>(r)]);
    total += w * (m + detail::log_(s) - z(r, y));
  }
  Tape<T>& tape = *logits.tape;
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<double> wts(weights.begin(), weights.end());
  return tape.push(Mat<T>::Constant(1, 1, total), tape.needs_grad(logits),
                   [logits, probs = std::move(probs), lab = std::move(lab),
                    wts = std::move(wts)](Tape<T>& t, const Mat<T>& adj) {
                     Mat<T> g = probs;
                     for (Eigen::Index r = 0; r < g.rows(); ++r) {
                       g(r, lab[static_cast<std::size_t>(r)]) -= T(1.0);
                       const T w = wts.empty() ? T(1.0) : T(wts[static_cast<std::size_t>(r)]);
                       g.row(r) *= w * adj(0, 0);
                     }
                     t.accumulate(logits, g);
                   });
}

/// Sum over rows of softplus(z) - y z, i.e. Bernoulli NLL on the logit scale.
template <class T>
Var<T> sigmoid_cross_entropy(Var<T> logits, std::span<const int> labels) {
  const Mat<T>& z = logits.value();
  detail::require(z.cols() == 1, "sigmoid_cross_entropy: logits must have one column");
  detail::require(static_cast<Eigen::Index>(labels.size()) == z.rows(),
                  "sigmoid_cross_entropy: label count differs from row count");
  T total(0.0);
  Mat<T> resid(z.rows(), 1);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y != 0 && y != 1) {
      throw std::out_of_range("sigmoid_cross_entropy: label " + std::to_string(y) +
                              " not in {0, 1}");
    }
    total += detail::softplus(z(r, 0)) - T(static_cast<double>(y)) * z(r, 0);
    resid(r, 0) = detail::sigmoid(z(r, 0)) - T(static_cast<double>(y));
  }
  Tape<T>& tape = *logits.tape;
  return tape.push(Mat<T>::Constant(1, 1, total), tape.needs_grad(logits),
                   [logits, resid = std::move(resid)](Tape<T>& t, const Mat<T>& adj) {
                     t.accumulate(logits, resid * adj(0, 0));
                   });
}

/// Sum of Huber losses of (pred - target) with threshold delta; pred is n x 1.
template <class T>
Var<T> huber_sum(Var<T> pred, const Eigen::VectorXd& target, double delta) {
  const Mat<T>& p = pred.value();
  detail::require(p.cols() == 1 && p.rows() == target.size(), "huber_sum: shape mismatch");
  T total(0.0);
  Mat<T> slope(p.rows(), 1);
  const T dl(delta);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const T r = p(i, 0) - T(target(i));
    const T ar = r < T(0.0) ? -r : r;
    if (ar <= dl) {
      total += T(0.5) * r * r;
      slope(i, 0) = r;
    } else {
      total += dl * (ar - T(0.5) * dl);
      slope(i, 0) = r < T(0.0) ? -dl : dl;
    }
  }
  Tape<T>& tape = *pred.tape;
  return tape.push(Mat<T>::Constant(1, 1, total), tape.needs_grad(pred),
                   [pred, slope = std::move(slope)](Tape<T>& t, const Mat<T>& adj) {
                     t.accumulate(pred, slope * adj(0, 0));
                   });
}

}  // namespace smi::ad
