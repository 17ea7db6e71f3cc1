#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sacfl/client.hpp"
#include "sacfl/data_gen.hpp"
#include "sacfl/server.hpp"

namespace sacfl {

enum class Method { SacFL, FedAvg, FedProx, Krum, Median, TrimmedMean };

enum class RobustAggregator { Krum, Median, TrimmedMean };

struct ModelConfig {
  std::vector<std::size_t> hidden = {128, 64};
  // Index of the first decoder layer; -1 means "last layer is the decoder".
  int split_index = -1;
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SGD;
  double learning_rate = 0.05;
  int batch_size = 32;
  int local_epochs = 5;
};

struct DataConfig {
  TaskKind kind = TaskKind::ClassIncremental;
  int num_classes = 10;
  int dim = 8;
  int per_class = 210;          // train shards + test split source
  double separation = 8.0;
  double spread = 1.0;
  int test_per_class = 10;      // held out for the global per-task test sets
  int proxy_per_task = 10;      // held out per client/task for the proxy pool
  std::vector<NoiseSpec> noise; // domain-incremental schedule
};

struct AttackConfig {
  int task = -1;  // -1: no attack
  AttackKind kind = AttackKind::None;
  std::vector<int> trigger_dims = {0, 1};
  double trigger_value = 0.0;  // 0 -> default 3 * spread
  int target_label = 0;
  double poison_fraction = 0.5;
};

struct DetectionConfig {
  double drift_threshold = 0.0;  // used when auto_threshold is false
  bool auto_threshold = true;
  int calibration_rounds = 6;
  double degrade_threshold = 0.40;
  int probe_size = 32;
};

struct DefenseConfig {
  double alpha = 0.5;
  RobustAggregator aggregator = RobustAggregator::Krum;
  int krum_f = 1;
  double trim_beta = 0.1;
};

struct ExperimentConfig {
  int num_clients = 10;
  int clients_per_round = -1;  // -1: all clients
  int num_tasks = 5;
  std::vector<int> rounds_per_task = {10};  // broadcast if a single entry
  ModelConfig model;
  OptimizerConfig optimizer;
  DataConfig data;
  AttackConfig attack;
  DetectionConfig detection;
  DefenseConfig defense;
  Method method = Method::SacFL;
  double fedprox_mu = 0.01;
  std::uint64_t seed = 1;

  void validate() const;            // throws ValidationError
  std::vector<int> task_rounds() const;
  int total_rounds() const;
};

struct RoundMetrics {
  int round = 0;  // 1-based
  int task = 0;   // ground-truth stream task
  std::vector<double> task_acc;     // NaN for tasks not yet (or never) scored
  double avg_hist_acc = 0.0;
  double mean_train_loss = 0.0;
  std::vector<double> diffs;        // per client, NaN when detection inactive
  std::vector<std::uint8_t> drift_flags;
  bool any_drift = false;
  bool attack_evaluated = false;
  double degrade = 0.0;             // valid only when attack_evaluated
  bool attack_flag = false;         // detection verdict at evaluation
  bool defense_active = false;      // sticky state during this round
  double wall_ms = 0.0;             // informational; excluded from metrics.csv
};

struct StorageReport {
  std::uint64_t decoder_pool_bytes = 0;  // largest client pool
  std::uint64_t full_model_bytes = 0;
  std::uint64_t decoder_params = 0;
  std::uint64_t total_params = 0;
  int pool_entries = 0;
  double ratio = 0.0;  // decoder params / total params
};

struct SimulationResult {
  std::vector<RoundMetrics> rounds;
  std::vector<double> final_task_acc;
  double final_avg_hist_acc = 0.0;
  double drift_threshold_used = 0.0;
  int encoder_pool_size = 0;
  int server_decoder_pool_entries = 0;
  int client_decoder_pool_entries = 0;
  StorageReport storage;
};

// Algorithm-1 round loop: distribute, local train, drift check, attack check
// and defense, upload, aggregate. Deterministic under the master seed and any
// SACFL_THREADS setting.
SimulationResult run_simulation(const ExperimentConfig& cfg);

// Per-task accuracies (tasks <= current) and their mean. Historical tasks use
// the current global encoder with pooled decoders when use_pools is set, the
// plain current model otherwise. skip_task marks an adversarial task that is
// excluded from scoring.
std::pair<std::vector<double>, double> evaluate_historical(
    const ServerState& server, const std::vector<ClientState>& clients,
    const std::vector<Dataset>& test_sets, const Network& current_global,
    int current_task, bool use_pools, int skip_task = -1);

// Runs a short seeded two-task stream and returns the geometric mean between
// the max within-task diff and the min boundary diff. Throws CalibrationError
// if the two are not separated.
double calibrate_drift_threshold(const ExperimentConfig& cfg,
                                 int calibration_rounds);

// Proximal term: (mu/2) * ||local - ref||^2 and its gradient mu * (local - ref).
std::pair<double, ParamVector> fedprox_penalty(const ParamVector& local,
                                               const ParamVector& global_ref,
                                               double mu);

StorageReport storage_report(const ServerState& server,
                             const std::vector<ClientState>& clients,
                             const Network& model);

// Effective worker count: SACFL_THREADS when set, hardware otherwise.
int effective_thread_count();

struct LayerDiagnosticResult {
  std::vector<std::vector<double>> per_round_profiles;  // [round][layer]
  std::vector<int> boundaries;                          // 1-based rounds
  std::vector<double> cumulative;                       // per layer
  bool final_layer_max_cumulative = false;
  bool final_layer_max_at_boundaries = false;
  bool degenerate = false;  // no parameter movement at all
};

// Single-client sequential continual training; records per-round layer change
// profiles and checks that the final layer moves the most at task boundaries.
LayerDiagnosticResult diagnose_layers(const ExperimentConfig& cfg);

}  // namespace sacfl
