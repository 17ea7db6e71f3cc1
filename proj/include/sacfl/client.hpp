#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "sacfl/data_gen.hpp"
#include "sacfl/network.hpp"
#include "sacfl/optimizer.hpp"

namespace sacfl {

struct DriftReport {
  double diff = 0.0;
  double threshold = 0.0;
  bool shifted = false;
};

// Per-client state machine: local model, drift detector inputs, and the
// local decoder pool for historical-task inference.
struct ClientState {
  int client_id = 0;
  int current_task = 0;
  Network model;
  OptimizerState optimizer;
  std::map<int, ParamVector> decoder_pool;  // task id -> decoder params
  Tensor probe_features;                    // fixed seeded batch, Eq.-5 input
  int data_size = 0;
  bool attack_mode = false;
  double drift_threshold = 0.0;
  // Federated iteration index of the current task; drift detection is only
  // active when iter_in_task > 1. Reset to 1 when a shift is declared.
  int iter_in_task = 1;
  // Decoder as of the end of the previous round; this is what gets pooled at
  // a task boundary (the boundary round itself already trained on new data).
  ParamVector prev_round_decoder;
};

// Knobs shared by plain, defense, and proximal local training.
struct TrainOptions {
  int batch_size = 32;
  // Defense loss weight: total = alpha * KL(ref features || cur features)
  //                            + (1 - alpha) * cross-entropy.
  double alpha = 0.0;
  const Network* reference_encoder = nullptr;  // frozen, required if alpha > 0
  double fedprox_mu = 0.0;
  const ParamVector* fedprox_reference = nullptr;
  std::uint64_t master_seed = 0;
  std::uint64_t shuffle_path = 0;  // e.g. packed (client, round)
};

// Runs epochs [first_epoch, first_epoch + n_epochs) of mini-batched training
// on state.model in place; returns mean per-sample loss of each epoch.
std::vector<double> train_epochs(ClientState& state, const Dataset& data,
                                 int first_epoch, int n_epochs,
                                 const TrainOptions& opts);

// Resets model to the distributed global and clears per-round optimizer state.
void begin_local_round(ClientState& state, const Network& global_model);

// Full local round: N epochs starting from global_model (Eq. 1).
std::pair<Network, std::vector<double>> local_train(ClientState& state,
                                                    const Network& global_model,
                                                    const Dataset& data,
                                                    int epochs,
                                                    const TrainOptions& opts);

// Rebuilds the fixed probe batch from the client's current data.
void adopt_data(ClientState& state, const Dataset& data, int probe_size,
                std::uint64_t rng_seed);

// Eq. 5: Manhattan distance between encoder outputs on the probe before and
// after one local epoch.
DriftReport detect_drift(const ClientState& state,
                         const ParamVector& encoder_before,
                         const ParamVector& encoder_after);

// Task-boundary transition: pool the previous task's decoder (unless the
// completed task was adversarial), re-initialize decoder layers, advance the
// task counter, and rebuild the probe from the new data. Encoder untouched.
void on_drift(ClientState& state, const std::optional<ParamVector>& prev_decoder,
              const Dataset& new_data, int probe_size, std::uint64_t rng_seed);

// Eq. 11 local training with the KL feature-alignment term against the last
// benign global encoder.
Network defense_train(ClientState& state, const Network& prev_global_encoder,
                      const Dataset& data, double alpha, int epochs,
                      const TrainOptions& opts);

// Forward through the current encoder and a pooled (or the current) decoder;
// argmax per row.
std::vector<int> infer_historical(const ClientState& state, int task_id,
                                  const Tensor& batch);

}  // namespace sacfl
