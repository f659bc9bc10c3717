#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "metacal/nnet.hpp"

namespace metacal {

struct EarlyStopping {
  std::size_t patience = 20;
  std::size_t step_cap = 500;
};

struct EarlyStoppingResult {
  ParamVector best;
  double best_loss = 0.0;
  std::size_t best_step = 0;
  std::size_t steps_taken = 0;
  /// Monitored loss after each step; entry 0 is the initial parameters.
  std::vector<double> monitored;
};

/// Takes one optimizer step on the training objective, in place.
using TrainStep = std::function<void(ParamVector&)>;

/// Runs `step` until the monitored loss fails to strictly improve for
/// `patience` consecutive checks or `step_cap` steps have been taken, and
/// returns the best parameters seen (the initial point included). The
/// monitored loss is MAE on `val`, or on `train` when `val` is empty.
EarlyStoppingResult train_with_early_stopping(const ParamVector& init, const Batch& train,
                                              const Batch& val, const EarlyStopping& rule,
                                              const TrainStep& step);

}  // namespace metacal
