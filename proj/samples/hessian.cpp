// Gradient and Hessian of a softmax-regression loss on Iris task 1 through
// the AD tape, with the accumulated-batch Hessian for comparison.

#include <cstdio>

#include <Eigen/Eigenvalues>

#include "smi/ad.hpp"
#include "smi/learners.hpp"

int main() {
  using namespace smi;
  const auto seq = tasks::split_by_class(tasks::split_train_val_test(tasks::load_builtin("iris"), 0), 1);
  const auto spec = seq.model_spec({});
  const auto nll = methods::detail::nll_for(spec, seq.tasks[0].train);
  const ParamVector theta = nn::init_params(spec, 0);

  const auto f = [&](auto& tape, auto th) { return ad::add(objectives::gaussian_prior(th), nll(tape, th)); };
  const auto vg = ad::value_and_grad(f, theta);
  const HessianMatrix h = ad::hessian(f, theta);
  const HessianMatrix h16 = methods::nll_hessian(nll, theta, 16);

  std::printf("d = %lld, loss = %.6f, |grad| = %.6f\n", static_cast<long long>(theta.size()), vg.value,
              vg.grad.norm());
  std::printf("min eigenvalue of I + H_nll: %.6f\n",
              Eigen::SelfAdjointEigenSolver<HessianMatrix>(h).eigenvalues().minCoeff());
  std::printf("max |(H - I) - H_16| = %.3e\n",
              (h - HessianMatrix::Identity(theta.size(), theta.size()) - h16).cwiseAbs().maxCoeff());
}
