#pragma once

#include <map>
#include <utility>
#include <vector>

#include "sacfl/data_gen.hpp"
#include "sacfl/network.hpp"

namespace sacfl {

// Global pools and detection state. encoder_pool holds the final global
// encoder of every completed benign task; decoder_pool and proxy_pool are
// keyed by (client, task).
struct ServerState {
  std::vector<ParamVector> encoder_pool;
  std::map<std::pair<int, int>, ParamVector> decoder_pool;
  ProxyPool proxy_pool;
  std::map<std::pair<int, int>, double> baseline_acc;
  int global_task = 0;
  double degrade_threshold = 0.40;
};

// Normalized per-client weights DS_k / sum(DS); non-negative, sum to 1.
std::vector<double> aggregation_weights(const std::vector<int>& sizes);

// Weighted sum of updates (Eq. 4 / Eq. 6). Accumulation is centered on the
// first update so aggregating identical vectors returns them bit-exactly.
ParamVector spatial_aggregate(const std::vector<ParamVector>& updates,
                              const std::vector<int>& sizes);

// Eq. 3: unweighted mean of the t pooled encoders and the spatial aggregate.
// t == 0 returns spatial unchanged.
ParamVector temporal_fuse(const std::vector<ParamVector>& encoder_pool,
                          const ParamVector& spatial, int t);

// Krum selection: score_i is the sum of squared distances from update i to
// its n - f - 2 nearest other updates; the minimal-score update wins, ties
// broken by lowest index.
std::pair<ParamVector, std::vector<double>> krum(
    const std::vector<ParamVector>& updates, int f);

ParamVector coordinate_median(const std::vector<ParamVector>& updates);
ParamVector trimmed_mean(const std::vector<ParamVector>& updates, double beta);

struct AdversarialReport {
  double degrade = 0.0;
  bool adversarial = false;
};

// Fraction of correctly classified samples under net's argmax.
double evaluate_accuracy(const Network& net, const Dataset& ds);

// Network assembled from an architecture template with the given encoder and
// decoder parameter vectors written in.
Network compose_network(const Network& arch, const ParamVector& encoder,
                        const ParamVector& decoder);

// Eqs. 7-8: compose the candidate encoder with every pooled decoder of tasks
// [0, j), evaluate on the matching proxy data, and average the relative
// accuracy drop. Terms with a zero baseline are excluded.
AdversarialReport detect_adversarial(const ParamVector& candidate_encoder,
                                     const ServerState& server,
                                     const Network& arch, int j);

// Acc_k^t for every decoder-pool entry under the given global encoder.
std::map<std::pair<int, int>, double> record_baselines(
    const ParamVector& encoder, const ServerState& server, const Network& arch);

}  // namespace sacfl
