#include "metacal/optim.hpp"

#include <cmath>

#include <fmt/format.h>

#include "metacal/error.hpp"

namespace metacal {

void SgdConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument(fmt::format("SGD learning rate must be finite and >= 0, got {}", learning_rate));
  }
}

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument(fmt::format("Adam learning rate must be positive, got {}", learning_rate));
  }
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw InvalidArgument(fmt::format("Adam betas must lie in (0,1), got {} and {}", beta1, beta2));
  }
  if (!(epsilon > 0.0)) throw InvalidArgument("Adam epsilon must be positive");
}

AdamState AdamState::for_params(const ParamVector& params, AdamConfig config) {
  config.validate();
  const auto n = Eigen::Index(params.size());
  return {config, Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
}

ParamVector sgd_step(const ParamVector& params, const ParamVector& gradient, const SgdConfig& cfg) {
  cfg.validate();
  ParamVector out = params;
  out.add_scaled(gradient, -cfg.learning_rate);
  return out;
}

void adam_update(AdamState& state, ParamVector& params, const ParamVector& gradient) {
  params.require_compatible(gradient);
  const auto n = Eigen::Index(params.size());
  if (state.step_count == 0 && state.first_moment.size() == 0) {
    state.config.validate();
    state.first_moment = Eigen::VectorXd::Zero(n);
    state.second_moment = Eigen::VectorXd::Zero(n);
  }
  if (state.first_moment.size() != n || state.second_moment.size() != n) {
    throw ShapeError(fmt::format("Adam moments sized {} but parameters have {} values",
                                 state.first_moment.size(), n));
  }
  const AdamConfig& c = state.config;
  const auto g = gradient.as_eigen();
  state.step_count += 1;
  state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * g;
  state.second_moment = c.beta2 * state.second_moment + (1.0 - c.beta2) * g.cwiseAbs2();
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  auto p = params.as_eigen();
  p.array() -= c.learning_rate * (state.first_moment.array() / correction1) /
               ((state.second_moment.array() / correction2).sqrt() + c.epsilon);
}

AdamResult adam_step(const AdamState& state, const ParamVector& params, const ParamVector& gradient) {
  AdamResult out{params, state};
  adam_update(out.state, out.params, gradient);
  return out;
}

}  // namespace metacal
