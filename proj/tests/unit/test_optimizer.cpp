#include <doctest.h>

#include <cmath>

#include "sacfl/errors.hpp"
#include "sacfl/network.hpp"
#include "sacfl/optimizer.hpp"

using namespace sacfl;

namespace {

ParamVector scalar_vec(double v) {
  ParamVector p;
  p.values = {v};
  p.layout = {{0, TensorRole::Bias, {1}}};
  return p;
}

}  // namespace

TEST_CASE("sgd: arithmetic and zero-gradient fixed point") {
  OptimizerState state = OptimizerState::sgd(0.1);
  const ParamVector next = optimizer_step(state, scalar_vec(1.0), scalar_vec(2.0));
  CHECK(next.values[0] == doctest::Approx(0.8).epsilon(1e-15));

  OptimizerState fresh = OptimizerState::sgd(0.1);
  const ParamVector same = optimizer_step(fresh, scalar_vec(1.5), scalar_vec(0.0));
  CHECK(same.values[0] == 1.5);  // exact identity
}

TEST_CASE("adam: zero gradient at step 1 leaves parameters unchanged") {
  OptimizerState state = OptimizerState::adam(0.1);
  const ParamVector next = optimizer_step(state, scalar_vec(0.7), scalar_vec(0.0));
  CHECK(next.values[0] == 0.7);
}

TEST_CASE("adam: three steps on f(w) = w^2 match the recurrence oracle") {
  // Oracle: the textbook Adam recurrence applied by hand, grad = 2w.
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double w = 1.0, m = 0.0, v = 0.0;
  double expected = w;
  for (int t = 1; t <= 3; ++t) {
    const double g = 2.0 * expected;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    expected -= lr * mh / (std::sqrt(vh) + eps);
  }

  OptimizerState state = OptimizerState::adam(lr, b1, b2, eps);
  ParamVector p = scalar_vec(1.0);
  for (int t = 1; t <= 3; ++t) {
    p = optimizer_step(state, p, scalar_vec(2.0 * p.values[0]));
  }
  CHECK(p.values[0] == doctest::Approx(expected).epsilon(1e-15));
  CHECK(state.step == 3);
}

TEST_CASE("layout mismatch is a contract violation") {
  OptimizerState state = OptimizerState::sgd(0.1);
  ParamVector p = scalar_vec(1.0);
  ParamVector g;
  g.values = {1.0, 2.0};
  g.layout = {{0, TensorRole::Bias, {2}}};
  CHECK_THROWS_AS(optimizer_step(state, p, g), ContractError);
}
