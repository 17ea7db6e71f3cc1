#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "sacfl/errors.hpp"
#include "sacfl/network.hpp"
#include "sacfl/rng.hpp"

using namespace sacfl;

namespace {

Network identity_two_layer() {
  // Two stacked 2x2 identity layers, no activation.
  Network net;
  for (int l = 0; l < 2; ++l) {
    DenseLayer layer;
    layer.weights = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
    layer.bias = Tensor({2}, {0.0, 0.0});
    layer.activation = Activation::Identity;
    net.layers.push_back(layer);
  }
  net.split_index = 1;
  return net;
}

// Test-local layer-by-layer evaluation, independent of forward().
std::vector<double> oracle_apply(const Network& net, std::vector<double> x,
                                 std::size_t layer_count) {
  for (std::size_t l = 0; l < layer_count; ++l) {
    const DenseLayer& layer = net.layers[l];
    std::vector<double> y(layer.out_dim());
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      double acc = layer.bias.data[o];
      for (std::size_t i = 0; i < layer.in_dim(); ++i) {
        acc += layer.weights.data[o * layer.in_dim() + i] * x[i];
      }
      y[o] = acc;
    }
    if (layer.activation == Activation::ReLU) {
      for (double& v : y) v = std::max(0.0, v);
    }
    x = std::move(y);
  }
  return x;
}

// Scalar loss of the whole pipeline as a function of flat parameters, for
// finite differences.
double loss_of_params(Network net, const ParamVector& params,
                      const Tensor& batch, const std::vector<int>& labels) {
  unflatten(net, params);
  const auto [logits, cache] = forward(net, batch);
  (void)cache;
  return softmax_cross_entropy(logits, labels).first;
}

}  // namespace

TEST_CASE("tensor shape/data consistency is enforced") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), DimensionError);
  const Tensor t = Tensor::zeros({3, 4});
  CHECK(t.size() == 12);
  CHECK(t.rows() == 3);
  CHECK(t.cols() == 4);
}

TEST_CASE("forward: identity net propagates the input") {
  const Network net = identity_two_layer();
  const Tensor batch({1, 2}, {1.0, 2.0});
  const auto [logits, cache] = forward(net, batch);
  CHECK(logits.data[0] == 1.0);
  CHECK(logits.data[1] == 2.0);
  CHECK(cache.inputs.size() == 2);
}

TEST_CASE("forward: empty batch yields empty logits") {
  const Network net = identity_two_layer();
  const Tensor batch = Tensor::zeros({0, 2});
  const auto [logits, cache] = forward(net, batch);
  (void)cache;
  CHECK(logits.rows() == 0);
  CHECK(logits.cols() == 2);
}

TEST_CASE("forward: two-layer hand matrix-multiply oracle") {
  Network net;
  DenseLayer l0;
  l0.weights = Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0});
  l0.bias = Tensor({2}, {0.5, -0.5});
  l0.activation = Activation::Identity;
  DenseLayer l1;
  l1.weights = Tensor({2, 2}, {-1.0, 0.5, 2.0, 1.0});
  l1.bias = Tensor({2}, {0.0, 1.0});
  l1.activation = Activation::Identity;
  net.layers = {l0, l1};
  net.split_index = 1;

  // x = [1, 0]: h = W0 x + b0 = [1.5, 2.5]; y = W1 h + b1 = [-0.25, 6.5].
  const auto [logits, cache] = forward(net, Tensor({1, 2}, {1.0, 0.0}));
  (void)cache;
  CHECK(logits.data[0] == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK(logits.data[1] == doctest::Approx(6.5).epsilon(1e-12));
}

TEST_CASE("forward: batch width mismatch raises") {
  const Network net = identity_two_layer();
  CHECK_THROWS_AS(forward(net, Tensor::zeros({1, 3})), DimensionError);
}

TEST_CASE("encoder_output agrees with forward cache and identity case") {
  const Network net = Network::random({4, 8, 6, 3}, 2, 42);
  const Tensor batch = Tensor({2, 4}, {0.1, -0.2, 0.3, 0.4,
                                       -0.5, 0.6, -0.7, 0.8});
  const Tensor features = encoder_output(net, batch);
  CHECK(features.cols() == 6);

  // split == layer count - 1: features equal the last layer's cached input.
  const Tensor penultimate = encoder_output(net, batch);
  const auto [logits, cache] = forward(net, batch);
  (void)logits;
  for (std::size_t i = 0; i < penultimate.data.size(); ++i) {
    CHECK(penultimate.data[i] == cache.inputs[net.split_index].data[i]);
  }

  // Identity single-encoder-layer net: features == batch.
  const Network id_net = identity_two_layer();
  const Tensor id_batch({1, 2}, {3.0, -4.0});
  const Tensor id_features = encoder_output(id_net, id_batch);
  CHECK(id_features.data[0] == 3.0);
  CHECK(id_features.data[1] == -4.0);
}

TEST_CASE("encoder_output matches a layer-by-layer oracle on a random net") {
  const Network net = Network::random({5, 7, 4, 3}, 2, 7);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> row(5);
  for (double& v : row) v = dist(rng);
  const Tensor batch({1, 5}, row);
  const Tensor features = encoder_output(net, batch);
  const std::vector<double> expect = oracle_apply(net, row, 2);
  REQUIRE(features.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(features.data[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward: zero loss gradient gives zero parameter gradient") {
  const Network net = Network::random({3, 5, 2}, 1, 3);
  const Tensor batch = Tensor({2, 3}, {0.4, 0.1, -0.2, 0.9, -0.8, 0.3});
  const auto [logits, cache] = forward(net, batch);
  (void)logits;
  const ParamVector grads = backward(net, cache, Tensor::zeros({2, 2}));
  for (double g : grads.values) CHECK(g == 0.0);
}

TEST_CASE("backward: one linear layer, squared error, closed form x*err") {
  Network net;
  DenseLayer layer;
  layer.weights = Tensor({1, 2}, {0.5, -1.0});
  layer.bias = Tensor({1}, {0.25});
  layer.activation = Activation::Identity;
  net.layers = {layer};
  net.split_index = 1;

  const Tensor x({1, 2}, {2.0, 3.0});
  const auto [logits, cache] = forward(net, x);
  // Squared error loss 0.5 (y - t)^2 with target 1: dL/dy = y - 1.
  const double y = logits.data[0];
  const double err = y - 1.0;
  const ParamVector grads = backward(net, cache, Tensor({1, 1}, {err}));
  CHECK(grads.values[0] == doctest::Approx(err * 2.0).epsilon(1e-12));
  CHECK(grads.values[1] == doctest::Approx(err * 3.0).epsilon(1e-12));
  CHECK(grads.values[2] == doctest::Approx(err).epsilon(1e-12));
}

TEST_CASE("backward: central finite differences on random small nets") {
  const double h = 1e-5;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const std::vector<std::vector<std::size_t>> archs = {
      {2, 4, 3}, {3, 3, 3, 2}, {4, 5, 2}};
  for (std::size_t a = 0; a < archs.size(); ++a) {
    Network net = Network::random(archs[a], 1, 100 + a);
    const std::size_t d = net.input_dim();
    const std::size_t C = net.output_dim();
    Tensor batch = Tensor::zeros({3, d});
    for (double& v : batch.data) v = dist(rng);
    std::vector<int> labels(3);
    for (int& l : labels) l = int(rng() % C);

    const auto [logits, cache] = forward(net, batch);
    const auto [loss, grad] = softmax_cross_entropy(logits, labels);
    (void)loss;
    const ParamVector analytic = backward(net, cache, grad);
    ParamVector params = flatten(net);
    REQUIRE(params.size() == analytic.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      ParamVector plus = params, minus = params;
      plus.values[i] += h;
      minus.values[i] -= h;
      const double fd = (loss_of_params(net, plus, batch, labels) -
                         loss_of_params(net, minus, batch, labels)) /
                        (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(analytic.values[i]),
                                     1e-4});
      CHECK(std::abs(fd - analytic.values[i]) / denom < 1e-4);
    }
  }
}

TEST_CASE("backward: stale cache is rejected") {
  const Network net = Network::random({3, 4, 2}, 1, 5);
  const Network other = Network::random({3, 6, 2}, 1, 6);
  const auto [logits, cache] = forward(other, Tensor::zeros({1, 3}));
  (void)logits;
  CHECK_THROWS_AS(backward(net, cache, Tensor::zeros({1, 2})), ContractError);
}

TEST_CASE("flatten/unflatten round-trips bit-exactly") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const std::vector<std::vector<std::size_t>> archs = {
        {2, 3, 2}, {5, 8, 8, 4}, {3, 16, 2}, {7, 4, 4, 4, 2}};
    Network net = Network::random(archs[seed], 1, seed);
    const ParamVector v = flatten(net);
    Network copy = Network::random(archs[seed], 1, seed + 99);
    unflatten(copy, v);
    const ParamVector round = flatten(copy);
    REQUIRE(round.size() == v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(round.values[i] == v.values[i]);
    }
    CHECK(round.same_layout(v));
  }
}

TEST_CASE("encoder/decoder params split the flat vector") {
  const Network net = Network::random({4, 6, 5, 3}, 2, 8);
  const ParamVector full = flatten(net);
  const ParamVector enc = encoder_params(net);
  const ParamVector dec = decoder_params(net);
  REQUIRE(enc.size() + dec.size() == full.size());
  for (std::size_t i = 0; i < enc.size(); ++i) {
    CHECK(enc.values[i] == full.values[i]);
  }
  for (std::size_t i = 0; i < dec.size(); ++i) {
    CHECK(dec.values[i] == full.values[enc.size() + i]);
  }
}

TEST_CASE("softmax_cross_entropy: analytic and limit cases") {
  // Uniform logits, C=2 -> ln 2.
  const auto [loss, grad] = softmax_cross_entropy(
      Tensor({1, 2}, {0.3, 0.3}), {0});
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(grad.data[0] == doctest::Approx(0.5 - 1.0).epsilon(1e-12));
  CHECK(grad.data[1] == doctest::Approx(0.5).epsilon(1e-12));

  // Strong margin -> loss -> 0.
  const auto [small_loss, g2] = softmax_cross_entropy(
      Tensor({1, 2}, {40.0, 0.0}), {0});
  (void)g2;
  CHECK(small_loss < 1e-12);

  CHECK_THROWS_AS(softmax_cross_entropy(Tensor({1, 2}, {0.0, 0.0}), {2}),
                  ValidationError);
}

TEST_CASE("softmax_cross_entropy: direct formula oracle, B=4 C=3") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  Tensor logits = Tensor::zeros({4, 3});
  for (double& v : logits.data) v = dist(rng);
  const std::vector<int> labels = {2, 0, 1, 1};
  const auto [loss, grad] = softmax_cross_entropy(logits, labels);

  double expect_loss = 0.0;
  Tensor expect_grad = Tensor::zeros({4, 3});
  for (int r = 0; r < 4; ++r) {
    double denom = 0.0;
    for (int c = 0; c < 3; ++c) denom += std::exp(logits.data[r * 3 + c]);
    expect_loss += -std::log(std::exp(logits.data[r * 3 + labels[r]]) / denom) / 4.0;
    for (int c = 0; c < 3; ++c) {
      const double p = std::exp(logits.data[r * 3 + c]) / denom;
      expect_grad.data[r * 3 + c] = (p - (c == labels[r] ? 1.0 : 0.0)) / 4.0;
    }
  }
  CHECK(loss == doctest::Approx(expect_loss).epsilon(1e-12));
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    CHECK(grad.data[i] == doctest::Approx(expect_grad.data[i]).epsilon(1e-10));
  }
}

TEST_CASE("layer_change_profile: identity, locality, formula oracle") {
  const Network net = Network::random({3, 5, 4, 2}, 2, 12);
  const std::vector<double> zero = layer_change_profile(net, net);
  for (double v : zero) CHECK(v == 0.0);

  Network bumped = net;
  bumped.layers.back().weights.data[0] += 0.5;
  const std::vector<double> local = layer_change_profile(net, bumped);
  CHECK(local[0] == 0.0);
  CHECK(local[1] == 0.0);
  CHECK(local[2] == doctest::Approx(0.5).epsilon(1e-12));

  Network perturbed = net;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist(0.0, 0.1);
  for (DenseLayer& layer : perturbed.layers) {
    for (double& w : layer.weights.data) w += dist(rng);
    for (double& b : layer.bias.data) b += dist(rng);
  }
  const std::vector<double> profile = layer_change_profile(net, perturbed);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    double sum = 0.0;
    for (std::size_t i = 0; i < net.layers[l].weights.data.size(); ++i) {
      const double d = net.layers[l].weights.data[i] -
                       perturbed.layers[l].weights.data[i];
      sum += d * d;
    }
    for (std::size_t i = 0; i < net.layers[l].bias.data.size(); ++i) {
      const double d =
          net.layers[l].bias.data[i] - perturbed.layers[l].bias.data[i];
      sum += d * d;
    }
    CHECK(profile[l] == doctest::Approx(std::sqrt(sum)).epsilon(1e-12));
  }

  const Network mismatched = Network::random({3, 6, 4, 2}, 2, 13);
  CHECK_THROWS_AS(layer_change_profile(net, mismatched), ValidationError);
}

TEST_CASE("network invariants are validated") {
  CHECK_THROWS_AS(Network::random({4, 3}, 1, 0), ValidationError);
  Network net = Network::random({4, 3, 2}, 1, 0);
  net.split_index = 0;
  CHECK_THROWS_AS(net.validate(), ValidationError);
  net.split_index = 2;
  CHECK_THROWS_AS(net.validate(), ValidationError);
}
