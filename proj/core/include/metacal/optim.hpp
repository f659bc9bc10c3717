#pragma once

#include <cstddef>

#include "metacal/nnet.hpp"

namespace metacal {

/// Plain gradient descent, the inner-loop update.
struct SgdConfig {
  double learning_rate = 1e-3;
  void validate() const;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  void validate() const;
};

/// Bias-corrected Adam moments. Moments start empty and are sized on the
/// first step, or can be pre-sized with `for_params`.
struct AdamState {
  AdamConfig config;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::size_t step_count = 0;

  static AdamState for_params(const ParamVector& params, AdamConfig config = {});
};

/// params - lr * gradient. Inputs are not modified.
ParamVector sgd_step(const ParamVector& params, const ParamVector& gradient, const SgdConfig& cfg);

struct AdamResult {
  ParamVector params;
  AdamState state;
};

AdamResult adam_step(const AdamState& state, const ParamVector& params, const ParamVector& gradient);

/// In-place variant used by the training loops.
void adam_update(AdamState& state, ParamVector& params, const ParamVector& gradient);

}  // namespace metacal
