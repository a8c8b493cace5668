// AQC on CI Split Iris with softmax regression, printing the accuracy
// matrix after every task.

#include <cstdio>

#include "smi/learners.hpp"
#include "smi/results.hpp"

int main() {
  using namespace smi;
  const auto split = tasks::split_train_val_test(tasks::load_builtin("iris"), 0);
  const auto seq = tasks::split_by_class(split, 1);

  methods::StepContext ctx{seq.model_spec({}), optim::TrainConfig{}};
  auto learner = methods::make_learner("aqc", {{{"lambda", 10.0}}}, ctx);

  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto theta = learner->learn(seq, t);
    std::printf("after task %zu:", t + 1);
    std::vector<double> acc;
    for (const auto& task : seq.tasks) {
      acc.push_back(harness::accuracy(nn::predict_class(ctx.model, theta, task.test.x), task.test.y));
      std::printf(" %.4f", acc.back());
    }
    std::printf("  (average %.4f)\n", harness::final_average_accuracy(acc));
  }
}
