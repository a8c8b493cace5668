#pragma once

// Independent numerical oracles shared by the unit and acceptance tests.
// Nothing here calls the AD engine: derivatives come from function values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "smi/tasks.hpp"

namespace smi::testing {

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;

inline Eigen::VectorXd fd_gradient(const ScalarFn& f, const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd p = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    p(i) = x(i) + h;
    const double fp = f(p);
    p(i) = x(i) - h;
    const double fm = f(p);
    p(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Central second differences of values only.
inline Eigen::MatrixXd fd_hessian(const ScalarFn& f, const Eigen::VectorXd& x, double h = 1e-4) {
  const Eigen::Index d = x.size();
  Eigen::MatrixXd H(d, d);
  Eigen::VectorXd p = x;
  const double f0 = f(x);
  for (Eigen::Index i = 0; i < d; ++i) {
    p(i) = x(i) + h;
    const double fp = f(p);
    p(i) = x(i) - h;
    const double fm = f(p);
    p(i) = x(i);
    H(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
    for (Eigen::Index j = 0; j < i; ++j) {
      p(i) = x(i) + h;
      p(j) = x(j) + h;
      const double fpp = f(p);
      p(j) = x(j) - h;
      const double fpm = f(p);
      p(i) = x(i) - h;
      const double fmm = f(p);
      p(j) = x(j) + h;
      const double fmp = f(p);
      p(i) = x(i);
      p(j) = x(j);
      H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
    }
  }
  return H;
}

/// max |a - b| / max |b|
inline double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = n(rng);
  }
  return m;
}

inline std::vector<int> random_labels(std::size_t n, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, k - 1);
  std::vector<int> y(n);
  for (auto& v : y) v = u(rng);
  return y;
}

inline tasks::Dataset random_dataset(std::size_t n, std::size_t d, int k, std::uint64_t seed) {
  tasks::Dataset ds;
  ds.x = random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d), seed);
  ds.y = random_labels(n, k, seed + 1);
  ds.num_classes = k;
  return ds;
}

inline std::vector<double> ranks(const Eigen::VectorXd& v) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(v.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return v(static_cast<Eigen::Index>(a)) < v(static_cast<Eigen::Index>(b));
  });
  std::vector<double> r(idx.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() &&
           v(static_cast<Eigen::Index>(idx[j + 1])) == v(static_cast<Eigen::Index>(idx[i]))) {
      ++j;
    }
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const Eigen::Map<const Eigen::VectorXd> x(ra.data(), static_cast<Eigen::Index>(ra.size()));
  const Eigen::Map<const Eigen::VectorXd> y(rb.data(), static_cast<Eigen::Index>(rb.size()));
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  return xc.dot(yc) / std::sqrt(xc.squaredNorm() * yc.squaredNorm());
}

/// Hand-coded forward pass of a swish MLP with the library's parameter
/// layout: per layer a column-major fan_in x fan_out weight block, then bias.
inline Eigen::MatrixXd reference_forward(const std::vector<std::size_t>& widths, const Eigen::VectorXd& theta,
                                         const Eigen::MatrixXd& x) {
  Eigen::MatrixXd a = x;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    Eigen::MatrixXd z(a.rows(), static_cast<Eigen::Index>(out));
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        double s = theta(static_cast<Eigen::Index>(off + in * out + o));
        for (std::size_t i = 0; i < in; ++i) {
          s += a(r, static_cast<Eigen::Index>(i)) * theta(static_cast<Eigen::Index>(off + o * in + i));
        }
        z(r, static_cast<Eigen::Index>(o)) = s;
      }
    }
    off += in * out + out;
    if (l + 2 < widths.size()) {
      for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = z.data()[i] / (1.0 + std::exp(-z.data()[i]));
    }
    a = std::move(z);
  }
  return a;
}

/// -sum_i log softmax(z_i)[y_i], coded directly.
inline double reference_softmax_nll(const Eigen::MatrixXd& z, const std::vector<int>& y,
                                    const std::vector<double>& w = {}) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double denom = 0.0;
    for (Eigen::Index k = 0; k < z.cols(); ++k) denom += std::exp(z(i, k));
    const double p = std::exp(z(i, y[static_cast<std::size_t>(i)])) / denom;
    s -= (w.empty() ? 1.0 : w[static_cast<std::size_t>(i)]) * std::log(p);
  }
  return s;
}

inline double reference_bernoulli_nll(const Eigen::MatrixXd& z, const std::vector<int>& y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z(i, 0)));
    s -= y[static_cast<std::size_t>(i)] ? std::log(p) : std::log(1.0 - p);
  }
  return s;
}

}  // namespace smi::testing
