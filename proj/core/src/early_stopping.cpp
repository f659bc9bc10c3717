#include "metacal/early_stopping.hpp"

#include "metacal/error.hpp"

namespace metacal {

EarlyStoppingResult train_with_early_stopping(const ParamVector& init, const Batch& train,
                                              const Batch& val, const EarlyStopping& rule,
                                              const TrainStep& step) {
  if (train.empty()) throw InvalidArgument("training batch is empty");
  const Batch& monitor = val.empty() ? train : val;

  EarlyStoppingResult r;
  r.best = init;
  r.best_loss = loss_mae(init, monitor);
  r.monitored.push_back(r.best_loss);

  ParamVector current = init;
  std::size_t since_improvement = 0;
  for (std::size_t k = 1; k <= rule.step_cap; ++k) {
    step(current);
    const double loss = loss_mae(current, monitor);
    r.monitored.push_back(loss);
    r.steps_taken = k;
    if (loss < r.best_loss) {
      r.best_loss = loss;
      r.best = current;
      r.best_step = k;
      since_improvement = 0;
    } else if (++since_improvement >= rule.patience) {
      break;
    }
  }
  return r;
}

}  // namespace metacal
