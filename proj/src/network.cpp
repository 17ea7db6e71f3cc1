#include "sacfl/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "sacfl/errors.hpp"
#include "sacfl/rng.hpp"

namespace sacfl {

Network Network::random(const std::vector<std::size_t>& widths,
                        std::size_t split_index, std::uint64_t seed) {
  if (widths.size() < 3) {
    throw ValidationError("network needs at least two layers (>= 3 widths)");
  }
  std::mt19937_64 rng(seed);
  Network net;
  net.split_index = split_index;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l];
    const std::size_t out = widths[l + 1];
    const bool last = (l + 2 == widths.size());
    DenseLayer layer;
    layer.activation = last ? Activation::Identity : Activation::ReLU;
    layer.weights = Tensor::zeros({out, in});
    layer.bias = Tensor::zeros({out});
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(in)));
    for (double& w : layer.weights.data) w = dist(rng);
    net.layers.push_back(std::move(layer));
  }
  net.validate();
  return net;
}

void Network::validate() const {
  if (layers.size() < 2) {
    throw ValidationError("network must have at least two layers");
  }
  if (split_index < 1 || split_index > layers.size() - 1) {
    throw ValidationError("split_index must keep encoder and decoder non-empty");
  }
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    if (layers[l].out_dim() != layers[l + 1].in_dim()) {
      throw ValidationError("layer " + std::to_string(l) +
                            " output dim does not chain into layer " +
                            std::to_string(l + 1));
    }
  }
  for (const DenseLayer& layer : layers) {
    if (layer.bias.size() != layer.out_dim()) {
      throw ValidationError("bias size does not match layer output dim");
    }
  }
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const DenseLayer& layer : layers) n += layer.param_count();
  return n;
}

std::size_t Network::encoder_param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < split_index; ++l) n += layers[l].param_count();
  return n;
}

std::size_t Network::decoder_param_count() const {
  return param_count() - encoder_param_count();
}

bool Network::same_architecture(const Network& other) const {
  if (layers.size() != other.layers.size()) return false;
  if (split_index != other.split_index) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].weights.shape != other.layers[l].weights.shape) return false;
    if (layers[l].activation != other.layers[l].activation) return false;
  }
  return true;
}

namespace {

ParamVector flatten_range(const Network& net, std::size_t first,
                          std::size_t last) {
  ParamVector v;
  for (std::size_t l = first; l < last; ++l) {
    const DenseLayer& layer = net.layers[l];
    v.layout.push_back({l, TensorRole::Weights, layer.weights.shape});
    v.values.insert(v.values.end(), layer.weights.data.begin(),
                    layer.weights.data.end());
    v.layout.push_back({l, TensorRole::Bias, layer.bias.shape});
    v.values.insert(v.values.end(), layer.bias.data.begin(),
                    layer.bias.data.end());
  }
  return v;
}

Tensor relu_forward(const Tensor& z) {
  Tensor out = z;
  for (double& v : out.data) v = std::max(0.0, v);
  return out;
}

}  // namespace

ParamVector flatten(const Network& net) {
  return flatten_range(net, 0, net.layers.size());
}

ParamVector encoder_params(const Network& net) {
  return flatten_range(net, 0, net.split_index);
}

ParamVector decoder_params(const Network& net) {
  return flatten_range(net, net.split_index, net.layers.size());
}

void unflatten(Network& net, const ParamVector& v) {
  std::size_t offset = 0;
  for (const LayoutEntry& entry : v.layout) {
    if (entry.layer >= net.layers.size()) {
      throw ContractError("param layout refers to a missing layer");
    }
    DenseLayer& layer = net.layers[entry.layer];
    Tensor& target =
        entry.role == TensorRole::Weights ? layer.weights : layer.bias;
    if (target.shape != entry.shape) {
      throw ContractError("param layout shape mismatch at layer " +
                          std::to_string(entry.layer));
    }
    std::copy_n(v.values.begin() + offset, target.size(),
                target.data.begin());
    offset += target.size();
  }
  if (offset != v.values.size()) {
    throw ContractError("param vector length does not match its layout");
  }
}

std::pair<Tensor, ForwardCache> forward(const Network& net,
                                        const Tensor& batch) {
  if (batch.cols() != net.input_dim()) {
    throw DimensionError("forward: batch width does not match input dim");
  }
  const std::size_t rows = batch.rows();
  ForwardCache cache;
  Tensor x = batch;
  for (const DenseLayer& layer : net.layers) {
    cache.inputs.push_back(x);
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    Tensor z = Tensor::zeros({rows, out});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        double acc = layer.bias.data[o];
        const double* w = &layer.weights.data[o * in];
        const double* xin = &x.data[r * in];
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * xin[i];
        z.data[r * out + o] = acc;
      }
    }
    cache.preacts.push_back(z);
    x = layer.activation == Activation::ReLU ? relu_forward(z) : std::move(z);
  }
  return {std::move(x), std::move(cache)};
}

Tensor encoder_output(const Network& net, const Tensor& batch) {
  if (batch.cols() != net.input_dim()) {
    throw DimensionError("encoder_output: batch width does not match input dim");
  }
  Tensor x = batch;
  const std::size_t rows = batch.rows();
  for (std::size_t l = 0; l < net.split_index; ++l) {
    const DenseLayer& layer = net.layers[l];
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    Tensor z = Tensor::zeros({rows, out});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        double acc = layer.bias.data[o];
        const double* w = &layer.weights.data[o * in];
        const double* xin = &x.data[r * in];
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * xin[i];
        z.data[r * out + o] = acc;
      }
    }
    x = layer.activation == Activation::ReLU ? relu_forward(z) : std::move(z);
  }
  return x;
}

ParamVector backward_range(const Network& net, const ForwardCache& cache,
                           const Tensor& grad_at_output, std::size_t first,
                           std::size_t last) {
  const std::size_t num_layers = net.layers.size();
  if (cache.inputs.size() != num_layers || cache.preacts.size() != num_layers) {
    throw ContractError("backward: cache does not match the network");
  }
  if (first >= last || last > num_layers) {
    throw ContractError("backward: bad layer range");
  }
  const std::size_t rows = grad_at_output.rows();
  if (cache.inputs[0].rows() != rows ||
      grad_at_output.cols() != net.layers[last - 1].out_dim()) {
    throw ContractError("backward: gradient does not match cached forward");
  }
  for (std::size_t l = 0; l < num_layers; ++l) {
    if (cache.inputs[l].cols() != net.layers[l].in_dim() ||
        cache.preacts[l].cols() != net.layers[l].out_dim()) {
      throw ContractError("backward: stale cache for layer " +
                          std::to_string(l));
    }
  }

  std::vector<Tensor> weight_grads(num_layers);
  std::vector<Tensor> bias_grads(num_layers);
  Tensor delta = grad_at_output;  // d loss / d activation of current layer
  for (std::size_t li = last; li-- > first;) {
    const DenseLayer& layer = net.layers[li];
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    // d loss / d preact
    Tensor dz = delta;
    if (layer.activation == Activation::ReLU) {
      const Tensor& z = cache.preacts[li];
      for (std::size_t i = 0; i < dz.data.size(); ++i) {
        if (z.data[i] <= 0.0) dz.data[i] = 0.0;
      }
    }
    const Tensor& x = cache.inputs[li];
    Tensor wg = Tensor::zeros({out, in});
    Tensor bg = Tensor::zeros({out});
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dzr = &dz.data[r * out];
      const double* xr = &x.data[r * in];
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dzr[o];
        if (d == 0.0) continue;
        double* wgo = &wg.data[o * in];
        for (std::size_t i = 0; i < in; ++i) wgo[i] += d * xr[i];
        bg.data[o] += d;
      }
    }
    weight_grads[li] = std::move(wg);
    bias_grads[li] = std::move(bg);
    if (li > first) {
      Tensor dx = Tensor::zeros({rows, in});
      for (std::size_t r = 0; r < rows; ++r) {
        const double* dzr = &dz.data[r * out];
        double* dxr = &dx.data[r * in];
        for (std::size_t o = 0; o < out; ++o) {
          const double d = dzr[o];
          if (d == 0.0) continue;
          const double* w = &net.layers[li].weights.data[o * in];
          for (std::size_t i = 0; i < in; ++i) dxr[i] += d * w[i];
        }
      }
      delta = std::move(dx);
    }
  }

  ParamVector grads;
  for (std::size_t l = first; l < last; ++l) {
    grads.layout.push_back({l, TensorRole::Weights, weight_grads[l].shape});
    grads.values.insert(grads.values.end(), weight_grads[l].data.begin(),
                        weight_grads[l].data.end());
    grads.layout.push_back({l, TensorRole::Bias, bias_grads[l].shape});
    grads.values.insert(grads.values.end(), bias_grads[l].data.begin(),
                        bias_grads[l].data.end());
  }
  return grads;
}

ParamVector backward(const Network& net, const ForwardCache& cache,
                     const Tensor& loss_grad) {
  return backward_range(net, cache, loss_grad, 0, net.layers.size());
}

std::pair<double, Tensor> softmax_cross_entropy(
    const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t rows = logits.rows();
  const std::size_t classes = logits.cols();
  if (labels.size() != rows) {
    throw DimensionError("softmax_cross_entropy: label count != batch rows");
  }
  Tensor grad = Tensor::zeros(logits.shape);
  if (rows == 0) return {0.0, std::move(grad)};
  for (int label : labels) {
    if (label < 0 || std::size_t(label) >= classes) {
      throw ValidationError("softmax_cross_entropy: label out of range");
    }
  }
  double loss = 0.0;
  const double inv_rows = 1.0 / double(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &logits.data[r * classes];
    double max_logit = row[0];
    for (std::size_t c = 1; c < classes; ++c) max_logit = std::max(max_logit, row[c]);
    double sum_exp = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum_exp += std::exp(row[c] - max_logit);
    const double log_sum = std::log(sum_exp) + max_logit;
    loss += (log_sum - row[labels[r]]) * inv_rows;
    double* grow = &grad.data[r * classes];
    for (std::size_t c = 0; c < classes; ++c) {
      grow[c] = std::exp(row[c] - log_sum) * inv_rows;
    }
    grow[labels[r]] -= inv_rows;
  }
  return {loss, std::move(grad)};
}

double manhattan(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "manhattan");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    sum += std::abs(a.data[i] - b.data[i]);
  }
  return sum;
}

double euclidean(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "euclidean");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

double cosine_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "cosine_distance");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    dot += a.data[i] * b.data[i];
    na += a.data[i] * a.data[i];
    nb += b.data[i] * b.data[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw ValidationError("cosine_distance: zero-norm input");
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

double kl_feature_divergence(const Tensor& f_ref, const Tensor& f_cur) {
  require_same_shape(f_ref, f_cur, "kl_feature_divergence");
  const std::size_t rows = f_ref.rows();
  const std::size_t cols = f_ref.cols();
  if (rows == 0) {
    throw ValidationError("kl_feature_divergence: empty batch");
  }
  auto log_softmax_row = [cols](const double* row, std::vector<double>& out) {
    double max_v = row[0];
    for (std::size_t c = 1; c < cols; ++c) max_v = std::max(max_v, row[c]);
    double sum_exp = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum_exp += std::exp(row[c] - max_v);
    const double log_sum = std::log(sum_exp) + max_v;
    for (std::size_t c = 0; c < cols; ++c) out[c] = row[c] - log_sum;
  };
  std::vector<double> lp(cols), lq(cols);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    log_softmax_row(&f_ref.data[r * cols], lp);
    log_softmax_row(&f_cur.data[r * cols], lq);
    double kl = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      kl += std::exp(lp[c]) * (lp[c] - lq[c]);
    }
    total += std::max(0.0, kl);
  }
  return total / double(rows);
}

std::vector<double> layer_change_profile(const Network& net_a,
                                         const Network& net_b) {
  if (!net_a.same_architecture(net_b)) {
    throw ValidationError("layer_change_profile: architectures differ");
  }
  std::vector<double> profile;
  profile.reserve(net_a.layers.size());
  for (std::size_t l = 0; l < net_a.layers.size(); ++l) {
    double sum = 0.0;
    const DenseLayer& la = net_a.layers[l];
    const DenseLayer& lb = net_b.layers[l];
    for (std::size_t i = 0; i < la.weights.data.size(); ++i) {
      const double d = la.weights.data[i] - lb.weights.data[i];
      sum += d * d;
    }
    for (std::size_t i = 0; i < la.bias.data.size(); ++i) {
      const double d = la.bias.data[i] - lb.bias.data[i];
      sum += d * d;
    }
    profile.push_back(std::sqrt(sum));
  }
  return profile;
}

}  // namespace sacfl
