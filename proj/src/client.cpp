#include "sacfl/client.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sacfl/errors.hpp"
#include "sacfl/rng.hpp"

namespace sacfl {

namespace {

Tensor gather_rows(const Tensor& features, const std::vector<std::size_t>& rows) {
  const std::size_t d = features.cols();
  Tensor out = Tensor::zeros({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(&features.data[rows[r] * d], d, &out.data[r * d]);
  }
  return out;
}

// d/d f_cur of mean-row KL(softmax(f_ref) || softmax(f_cur)):
// (softmax(f_cur) - softmax(f_ref)) / rows.
Tensor kl_gradient(const Tensor& f_ref, const Tensor& f_cur) {
  const std::size_t rows = f_cur.rows();
  const std::size_t cols = f_cur.cols();
  Tensor grad = Tensor::zeros(f_cur.shape);
  auto softmax_row = [cols](const double* row, double* out) {
    double max_v = row[0];
    for (std::size_t c = 1; c < cols; ++c) max_v = std::max(max_v, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out[c] = std::exp(row[c] - max_v);
      sum += out[c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[c] /= sum;
  };
  std::vector<double> p(cols), q(cols);
  const double inv_rows = 1.0 / double(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_row(&f_ref.data[r * cols], p.data());
    softmax_row(&f_cur.data[r * cols], q.data());
    for (std::size_t c = 0; c < cols; ++c) {
      grad.data[r * cols + c] = (q[c] - p[c]) * inv_rows;
    }
  }
  return grad;
}

}  // namespace

void begin_local_round(ClientState& state, const Network& global_model) {
  if (!state.model.layers.empty() &&
      !state.model.same_architecture(global_model)) {
    throw ValidationError("begin_local_round: architecture mismatch");
  }
  state.model = global_model;
  state.optimizer.reset();
}

std::vector<double> train_epochs(ClientState& state, const Dataset& data,
                                 int first_epoch, int n_epochs,
                                 const TrainOptions& opts) {
  if (data.size() == 0) throw ValidationError("train_epochs: empty dataset");
  if (data.dim() != state.model.input_dim()) {
    throw ValidationError("train_epochs: feature dim does not match model");
  }
  if (opts.alpha < 0.0 || opts.alpha > 1.0) {
    throw ValidationError("train_epochs: alpha must be in [0, 1]");
  }
  if (opts.alpha > 0.0 && opts.reference_encoder == nullptr) {
    throw ValidationError("train_epochs: alpha > 0 needs a reference encoder");
  }
  const std::size_t n = data.size();
  const std::size_t batch_size =
      std::min<std::size_t>(std::max(opts.batch_size, 1), n);
  const std::size_t split = state.model.split_index;
  const std::size_t enc_count = state.model.encoder_param_count();

  std::vector<double> epoch_losses;
  std::vector<std::size_t> order(n);
  for (int epoch = first_epoch; epoch < first_epoch + n_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_engine(opts.master_seed,
                           {seed_tag::kShuffle, opts.shuffle_path,
                            std::uint64_t(epoch)});
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t end = std::min(start + batch_size, n);
      std::vector<std::size_t> rows(order.begin() + start, order.begin() + end);
      Tensor batch = gather_rows(data.features, rows);
      std::vector<int> labels(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = data.labels[rows[i]];

      auto [logits, cache] = forward(state.model, batch);
      auto [ce_loss, ce_grad] = softmax_cross_entropy(logits, labels);
      double batch_loss = ce_loss;
      ParamVector grads = backward(state.model, cache, ce_grad);

      if (opts.alpha > 0.0) {
        // Features of the current encoder are the cached input of the first
        // decoder layer; the frozen reference runs its own forward.
        const Tensor& f_cur = cache.inputs[split];
        const Tensor f_ref = encoder_output(*opts.reference_encoder, batch);
        const double kl = kl_feature_divergence(f_ref, f_cur);
        const Tensor f_grad = kl_gradient(f_ref, f_cur);
        const ParamVector kl_grads =
            backward_range(state.model, cache, f_grad, 0, split);
        const double a = opts.alpha;
        for (double& g : grads.values) g *= (1.0 - a);
        for (std::size_t i = 0; i < enc_count; ++i) {
          grads.values[i] += a * kl_grads.values[i];
        }
        batch_loss = a * kl + (1.0 - a) * ce_loss;
      }

      ParamVector params = flatten(state.model);
      if (opts.fedprox_mu > 0.0) {
        if (opts.fedprox_reference == nullptr ||
            !params.same_layout(*opts.fedprox_reference)) {
          throw ContractError("train_epochs: bad fedprox reference");
        }
        double penalty = 0.0;
        for (std::size_t i = 0; i < params.size(); ++i) {
          const double d = params.values[i] - opts.fedprox_reference->values[i];
          penalty += d * d;
          grads.values[i] += opts.fedprox_mu * d;
        }
        batch_loss += 0.5 * opts.fedprox_mu * penalty;
      }

      const ParamVector next = optimizer_step(state.optimizer, params, grads);
      unflatten(state.model, next);
      loss_sum += batch_loss * double(rows.size());
    }
    epoch_losses.push_back(loss_sum / double(n));
  }
  return epoch_losses;
}

std::pair<Network, std::vector<double>> local_train(ClientState& state,
                                                    const Network& global_model,
                                                    const Dataset& data,
                                                    int epochs,
                                                    const TrainOptions& opts) {
  if (epochs < 1) throw ValidationError("local_train: epochs >= 1");
  begin_local_round(state, global_model);
  std::vector<double> losses = train_epochs(state, data, 1, epochs, opts);
  return {state.model, std::move(losses)};
}

void adopt_data(ClientState& state, const Dataset& data, int probe_size,
                std::uint64_t rng_seed) {
  if (data.size() == 0) throw ValidationError("adopt_data: empty dataset");
  const std::size_t take = std::min<std::size_t>(std::max(probe_size, 1),
                                                 data.size());
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(rng_seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(take);
  std::sort(idx.begin(), idx.end());
  state.probe_features = gather_rows(data.features, idx);
  state.data_size = int(data.size());
}

DriftReport detect_drift(const ClientState& state,
                         const ParamVector& encoder_before,
                         const ParamVector& encoder_after) {
  if (state.probe_features.size() == 0) {
    throw ValidationError("detect_drift: empty probe cache");
  }
  Network before = state.model;
  unflatten(before, encoder_before);
  Network after = state.model;
  unflatten(after, encoder_after);
  DriftReport report;
  report.diff = manhattan(encoder_output(after, state.probe_features),
                          encoder_output(before, state.probe_features));
  report.threshold = state.drift_threshold;
  report.shifted = report.diff > state.drift_threshold;
  return report;
}

void on_drift(ClientState& state, const std::optional<ParamVector>& prev_decoder,
              const Dataset& new_data, int probe_size, std::uint64_t rng_seed) {
  if (prev_decoder.has_value()) {
    const auto [it, inserted] =
        state.decoder_pool.emplace(state.current_task, *prev_decoder);
    (void)it;
    if (!inserted) {
      throw ContractError("on_drift: decoder pool already holds this task");
    }
  }
  // Fresh decoder head; encoder layers stay bit-identical.
  std::mt19937_64 rng(rng_seed);
  for (std::size_t l = state.model.split_index; l < state.model.layers.size();
       ++l) {
    DenseLayer& layer = state.model.layers[l];
    std::normal_distribution<double> dist(
        0.0, std::sqrt(2.0 / double(layer.in_dim())));
    for (double& w : layer.weights.data) w = dist(rng);
    std::fill(layer.bias.data.begin(), layer.bias.data.end(), 0.0);
  }
  state.current_task += 1;
  state.iter_in_task = 1;
  state.attack_mode = false;
  adopt_data(state, new_data, probe_size,
             derive_seed(rng_seed, {seed_tag::kProbe}));
}

Network defense_train(ClientState& state, const Network& prev_global_encoder,
                      const Dataset& data, double alpha, int epochs,
                      const TrainOptions& opts) {
  if (alpha < 0.0 || alpha > 1.0) {
    throw ValidationError("defense_train: alpha must be in [0, 1]");
  }
  TrainOptions defense_opts = opts;
  defense_opts.alpha = alpha;
  defense_opts.reference_encoder = alpha > 0.0 ? &prev_global_encoder : nullptr;
  train_epochs(state, data, 1, epochs, defense_opts);
  return state.model;
}

std::vector<int> infer_historical(const ClientState& state, int task_id,
                                  const Tensor& batch) {
  Network net = state.model;
  if (task_id != state.current_task) {
    const auto it = state.decoder_pool.find(task_id);
    if (it == state.decoder_pool.end()) {
      throw LookupError("infer_historical: unknown task id");
    }
    unflatten(net, it->second);
  }
  const auto [logits, cache] = forward(net, batch);
  (void)cache;
  const std::size_t classes = logits.cols();
  std::vector<int> preds(batch.rows());
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const double* row = &logits.data[r * classes];
    std::size_t arg = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[arg]) arg = c;
    }
    preds[r] = int(arg);
  }
  return preds;
}

}  // namespace sacfl
