#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sacfl/tensor.hpp"

namespace sacfl {

enum class Activation { ReLU, Identity };

struct DenseLayer {
  Tensor weights;  // [out x in]
  Tensor bias;     // [out]
  Activation activation = Activation::ReLU;

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }
  std::size_t param_count() const { return weights.size() + bias.size(); }
};

// Layered dense model with an explicit encoder/decoder split: layers
// [0, split_index) form the encoder, [split_index, end) the decoder.
struct Network {
  std::vector<DenseLayer> layers;
  std::size_t split_index = 0;

  // Seeded He-style initialization. widths = [d_in, hidden..., C]; hidden
  // layers get ReLU, the output layer is linear.
  static Network random(const std::vector<std::size_t>& widths,
                        std::size_t split_index, std::uint64_t seed);

  void validate() const;  // throws ValidationError on broken invariants

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }
  std::size_t param_count() const;
  std::size_t encoder_param_count() const;
  std::size_t decoder_param_count() const;
  bool same_architecture(const Network& other) const;
};

enum class TensorRole { Weights, Bias };

struct LayoutEntry {
  std::size_t layer;
  TensorRole role;
  std::vector<std::size_t> shape;

  bool operator==(const LayoutEntry& other) const = default;
};

// Flat view of a contiguous range of layer parameters, carrying enough layout
// to reject mismatched use and to unflatten bit-exactly.
struct ParamVector {
  std::vector<double> values;
  std::vector<LayoutEntry> layout;

  std::size_t size() const { return values.size(); }
  bool same_layout(const ParamVector& other) const {
    return layout == other.layout;
  }
};

ParamVector flatten(const Network& net);
ParamVector encoder_params(const Network& net);
ParamVector decoder_params(const Network& net);
// Writes v back into the layers it was flattened from. Layout must match.
void unflatten(Network& net, const ParamVector& v);

struct ForwardCache {
  // inputs[l] is the batch fed to layer l; preacts[l] its pre-activation.
  std::vector<Tensor> inputs;
  std::vector<Tensor> preacts;
};

std::pair<Tensor, ForwardCache> forward(const Network& net,
                                        const Tensor& batch);
// Forward through encoder layers only: features extracted from the batch.
Tensor encoder_output(const Network& net, const Tensor& batch);
// Backprop the loss gradient through the cached forward pass.
ParamVector backward(const Network& net, const ForwardCache& cache,
                     const Tensor& loss_grad);
// Backprop a gradient given at the activated output of layer (last - 1) down
// through layers [first, last) only; gradients cover just those layers.
ParamVector backward_range(const Network& net, const ForwardCache& cache,
                           const Tensor& grad_at_output, std::size_t first,
                           std::size_t last);

// Mean cross-entropy over the batch and its gradient (softmax - onehot)/B.
std::pair<double, Tensor> softmax_cross_entropy(const Tensor& logits,
                                                const std::vector<int>& labels);

double manhattan(const Tensor& a, const Tensor& b);
double euclidean(const Tensor& a, const Tensor& b);
double cosine_distance(const Tensor& a, const Tensor& b);

// Rows of both tensors are softmax-normalized; returns the mean over rows of
// KL(ref_row || cur_row). Always >= 0, exactly 0 for identical inputs.
double kl_feature_divergence(const Tensor& f_ref, const Tensor& f_cur);

// Euclidean distance between corresponding layer parameters, one entry per
// layer. Architectures must match.
std::vector<double> layer_change_profile(const Network& net_a,
                                         const Network& net_b);

}  // namespace sacfl
