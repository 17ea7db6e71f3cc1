#include "sacfl/optimizer.hpp"

#include <cmath>

#include "sacfl/errors.hpp"

namespace sacfl {

OptimizerState OptimizerState::sgd(double learning_rate) {
  OptimizerState s;
  s.kind = OptimizerKind::SGD;
  s.learning_rate = learning_rate;
  return s;
}

OptimizerState OptimizerState::adam(double learning_rate, double beta1,
                                    double beta2, double epsilon) {
  OptimizerState s;
  s.kind = OptimizerKind::Adam;
  s.learning_rate = learning_rate;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  return s;
}

void OptimizerState::reset() {
  step = 0;
  first_moment.clear();
  second_moment.clear();
}

ParamVector optimizer_step(OptimizerState& state, const ParamVector& params,
                           const ParamVector& grads) {
  if (!params.same_layout(grads)) {
    throw ContractError("optimizer_step: parameter and gradient layouts differ");
  }
  ParamVector next = params;
  const std::size_t n = params.size();
  if (state.kind == OptimizerKind::SGD) {
    for (std::size_t i = 0; i < n; ++i) {
      next.values[i] = params.values[i] - state.learning_rate * grads.values[i];
    }
    state.step += 1;
    return next;
  }
  if (state.first_moment.empty()) {
    state.first_moment.assign(n, 0.0);
    state.second_moment.assign(n, 0.0);
  }
  if (state.first_moment.size() != n) {
    throw ContractError("optimizer_step: Adam moments do not match layout");
  }
  state.step += 1;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double bias1 = 1.0 - std::pow(b1, double(state.step));
  const double bias2 = 1.0 - std::pow(b2, double(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads.values[i];
    state.first_moment[i] = b1 * state.first_moment[i] + (1.0 - b1) * g;
    state.second_moment[i] = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
    const double m_hat = state.first_moment[i] / bias1;
    const double v_hat = state.second_moment[i] / bias2;
    next.values[i] = params.values[i] -
                     state.learning_rate * m_hat /
                         (std::sqrt(v_hat) + state.epsilon);
  }
  return next;
}

}  // namespace sacfl
