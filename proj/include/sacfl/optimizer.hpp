#pragma once

#include <cstdint>
#include <vector>

#include "sacfl/network.hpp"

namespace sacfl {

enum class OptimizerKind { SGD, Adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::SGD;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<double> first_moment;   // sized lazily on first Adam step
  std::vector<double> second_moment;

  static OptimizerState sgd(double learning_rate);
  static OptimizerState adam(double learning_rate, double beta1 = 0.9,
                             double beta2 = 0.999, double epsilon = 1e-8);

  void reset();
};

// One update step; SGD is exactly params - lr * grads, Adam the standard
// bias-corrected moment update. Mutates state (step counter, moments).
ParamVector optimizer_step(OptimizerState& state, const ParamVector& params,
                           const ParamVector& grads);

}  // namespace sacfl
