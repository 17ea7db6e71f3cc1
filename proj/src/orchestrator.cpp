#include "sacfl/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "sacfl/errors.hpp"
#include "sacfl/rng.hpp"

namespace sacfl {

void ExperimentConfig::validate() const {
  if (num_clients < 1) throw ValidationError("config: num_clients >= 1");
  const int per_round = clients_per_round < 0 ? num_clients : clients_per_round;
  if (per_round < 1 || per_round > num_clients) {
    throw ValidationError("config: clients_per_round must be in [1, K]");
  }
  if (num_tasks < 1) throw ValidationError("config: num_tasks >= 1");
  if (rounds_per_task.empty()) {
    throw ValidationError("config: rounds_per_task must not be empty");
  }
  if (rounds_per_task.size() != 1 &&
      int(rounds_per_task.size()) != num_tasks) {
    throw ValidationError("config: rounds_per_task must have 1 or T entries");
  }
  for (int r : rounds_per_task) {
    if (r < 1) throw ValidationError("config: rounds_per_task entries >= 1");
  }
  if (model.hidden.empty()) throw ValidationError("config: need hidden layers");
  const int layer_count = int(model.hidden.size()) + 1;
  const int split = model.split_index < 0 ? layer_count - 1 : model.split_index;
  if (split < 1 || split > layer_count - 1) {
    throw ValidationError("config: split_index out of range");
  }
  if (optimizer.learning_rate < 0.0) {
    throw ValidationError("config: learning_rate >= 0");
  }
  if (optimizer.batch_size < 1) throw ValidationError("config: batch_size >= 1");
  if (optimizer.local_epochs < 1) {
    throw ValidationError("config: local_epochs >= 1");
  }
  if (data.kind == TaskKind::ClassIncremental &&
      data.num_classes < num_tasks) {
    throw ValidationError("config: more tasks than classes");
  }
  if (data.kind == TaskKind::DomainIncremental &&
      int(data.noise.size()) != num_tasks) {
    throw ValidationError("config: domain noise schedule must have T entries");
  }
  if (data.num_classes < 2 || data.dim < 1 || data.per_class < 1) {
    throw ValidationError("config: bad data sizes");
  }
  if (data.separation <= 0.0 || data.spread < 0.0) {
    throw ValidationError("config: bad blob geometry");
  }
  if (data.test_per_class < 1 || data.test_per_class >= data.per_class) {
    throw ValidationError("config: test_per_class must be in [1, per_class)");
  }
  if (attack.task >= 0) {
    if (attack.task >= num_tasks) {
      throw ValidationError("config: attacked task out of range");
    }
    if (attack.kind == AttackKind::None) {
      throw ValidationError("config: attack task set but kind is none");
    }
    if (attack.poison_fraction <= 0.0 || attack.poison_fraction > 1.0) {
      throw ValidationError("config: poison_fraction in (0, 1]");
    }
    if (attack.target_label < 0 || attack.target_label >= data.num_classes) {
      throw ValidationError("config: target_label out of range");
    }
  }
  if (detection.probe_size < 1) throw ValidationError("config: probe_size >= 1");
  if (detection.calibration_rounds < 2) {
    throw ValidationError("config: calibration_rounds >= 2");
  }
  if (defense.alpha < 0.0 || defense.alpha > 1.0) {
    throw ValidationError("config: alpha must be in [0, 1]");
  }
  if (defense.krum_f < 0) throw ValidationError("config: krum_f >= 0");
  if (fedprox_mu < 0.0) throw ValidationError("config: fedprox_mu >= 0");
}

std::vector<int> ExperimentConfig::task_rounds() const {
  if (rounds_per_task.size() == 1) {
    return std::vector<int>(num_tasks, rounds_per_task[0]);
  }
  return rounds_per_task;
}

int ExperimentConfig::total_rounds() const {
  const std::vector<int> rounds = task_rounds();
  return std::accumulate(rounds.begin(), rounds.end(), 0);
}

int effective_thread_count() {
  if (const char* env = std::getenv("SACFL_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

namespace {

// Runs fn(0..n-1); work per index must be independent. Results are identical
// for any worker count because each index touches only its own state.
void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(effective_thread_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&]() {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<std::size_t> network_widths(const ExperimentConfig& cfg) {
  std::vector<std::size_t> widths;
  widths.push_back(std::size_t(cfg.data.dim));
  for (std::size_t h : cfg.model.hidden) widths.push_back(h);
  widths.push_back(std::size_t(cfg.data.num_classes));
  return widths;
}

std::size_t resolved_split(const ExperimentConfig& cfg) {
  const std::size_t layer_count = cfg.model.hidden.size() + 1;
  return cfg.model.split_index < 0 ? layer_count - 1
                                   : std::size_t(cfg.model.split_index);
}

struct StreamBundle {
  std::vector<TaskStream> streams;
  std::vector<Dataset> test_sets;  // one per task
};

// Carves `count` stratified rows out of ds; first = carved, second = rest.
std::pair<Dataset, Dataset> split_off(const Dataset& ds, int count,
                                      std::uint64_t seed) {
  Dataset carved = sample_proxy(ds, count, seed);
  // Locate carved rows by matching features; rows are unique with Gaussian
  // data, but fall back to index bookkeeping to stay exact.
  const std::size_t d = ds.dim();
  std::vector<bool> taken(ds.size(), false);
  for (std::size_t cr = 0; cr < carved.size(); ++cr) {
    for (std::size_t r = 0; r < ds.size(); ++r) {
      if (taken[r] || ds.labels[r] != carved.labels[cr]) continue;
      if (std::equal(&ds.features.data[r * d], &ds.features.data[(r + 1) * d],
                     &carved.features.data[cr * d])) {
        taken[r] = true;
        break;
      }
    }
  }
  std::vector<std::size_t> rest;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    if (!taken[r]) rest.push_back(r);
  }
  Dataset remainder;
  remainder.features = Tensor::zeros({rest.size(), d});
  remainder.labels.resize(rest.size());
  remainder.class_set = ds.class_set;
  for (std::size_t r = 0; r < rest.size(); ++r) {
    std::copy_n(&ds.features.data[rest[r] * d], d,
                &remainder.features.data[r * d]);
    remainder.labels[r] = ds.labels[rest[r]];
  }
  return {std::move(carved), std::move(remainder)};
}

Dataset apply_attack(const ExperimentConfig& cfg, const Dataset& clean,
                     std::uint64_t seed) {
  Dataset widened = clean;
  // Attacks draw poisoned labels from the full label space so they can
  // clobber historical classes, not just relabel within the task.
  for (int c = 0; c < cfg.data.num_classes; ++c) widened.class_set.insert(c);
  if (cfg.attack.kind == AttackKind::LabelFlip) {
    return apply_label_flip(widened, seed);
  }
  const double trigger = cfg.attack.trigger_value != 0.0
                             ? cfg.attack.trigger_value
                             : 3.0 * cfg.data.spread;
  return apply_backdoor(widened, cfg.attack.trigger_dims, trigger,
                        cfg.attack.target_label, cfg.attack.poison_fraction,
                        seed);
}

StreamBundle build_bundle(const ExperimentConfig& cfg) {
  const std::uint64_t master = cfg.seed;
  const int C = cfg.data.num_classes;
  Dataset base = make_blobs(C, cfg.data.dim, cfg.data.per_class,
                            cfg.data.separation, cfg.data.spread,
                            derive_seed(master, {seed_tag::kData, 100}));

  // Global test split, stratified per class.
  auto [test_base, train_base] = split_off(
      base, cfg.data.test_per_class * C, derive_seed(master, {seed_tag::kData, 101}));

  StreamBundle bundle;
  const std::vector<int> rounds = cfg.task_rounds();

  if (cfg.data.kind == TaskKind::ClassIncremental) {
    bundle.streams =
        partition_class_incremental(train_base, cfg.num_tasks, cfg.num_clients,
                                    master);
    // Per-task test sets grouped by the class groups the partition chose.
    for (int t = 0; t < cfg.num_tasks; ++t) {
      const std::set<int>& classes = bundle.streams[0].specs[t].classes;
      std::vector<std::size_t> rows;
      for (std::size_t r = 0; r < test_base.size(); ++r) {
        if (classes.count(test_base.labels[r])) rows.push_back(r);
      }
      Dataset ts;
      const std::size_t d = test_base.dim();
      ts.features = Tensor::zeros({rows.size(), d});
      ts.labels.resize(rows.size());
      ts.class_set = classes;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(&test_base.features.data[rows[r] * d], d,
                    &ts.features.data[r * d]);
        ts.labels[r] = test_base.labels[rows[r]];
      }
      bundle.test_sets.push_back(std::move(ts));
    }
  } else {
    // Domain-incremental: one shard of every class per client, then the
    // noise schedule turns it into T tasks.
    std::vector<TaskStream> shards =
        partition_class_incremental(train_base, 1, cfg.num_clients, master);
    bundle.streams.resize(cfg.num_clients);
    for (int k = 0; k < cfg.num_clients; ++k) {
      TaskStream& stream = bundle.streams[k];
      stream.client_id = k;
      std::vector<Dataset> tasks = make_domain_incremental(
          shards[k].datasets[0], cfg.data.noise,
          derive_seed(master, {seed_tag::kData, 102, std::uint64_t(k)}));
      for (int t = 0; t < cfg.num_tasks; ++t) {
        TaskSpec spec;
        spec.task_id = t;
        spec.kind = TaskKind::DomainIncremental;
        spec.classes = shards[k].datasets[0].class_set;
        spec.noise = cfg.data.noise[t];
        stream.specs.push_back(spec);
        stream.datasets.push_back(std::move(tasks[t]));
      }
    }
    std::vector<Dataset> test_tasks = make_domain_incremental(
        test_base, cfg.data.noise, derive_seed(master, {seed_tag::kData, 103}));
    bundle.test_sets = std::move(test_tasks);
  }

  // Attack injection, proxy carving, iteration counts, boundaries.
  for (int k = 0; k < cfg.num_clients; ++k) {
    TaskStream& stream = bundle.streams[k];
    int round_cursor = 1;
    for (int t = 0; t < cfg.num_tasks; ++t) {
      stream.specs[t].iterations = rounds[t];
      if (t > 0) stream.boundaries.push_back(round_cursor);
      round_cursor += rounds[t];

      auto [proxy, train] = split_off(
          stream.datasets[t], std::min<int>(cfg.data.proxy_per_task,
                                            int(stream.datasets[t].size()) - 1),
          derive_seed(master, {seed_tag::kProxy, std::uint64_t(k),
                               std::uint64_t(t)}));
      stream.proxies.push_back(std::move(proxy));
      if (cfg.attack.task == t) {
        stream.specs[t].attack = cfg.attack.kind;
        train = apply_attack(cfg, train,
                             derive_seed(master, {seed_tag::kAttack,
                                                  std::uint64_t(k),
                                                  std::uint64_t(t)}));
      }
      stream.datasets[t] = std::move(train);
    }
  }
  return bundle;
}

RobustAggregator aggregator_for(Method m, const DefenseConfig& d) {
  switch (m) {
    case Method::Krum: return RobustAggregator::Krum;
    case Method::Median: return RobustAggregator::Median;
    case Method::TrimmedMean: return RobustAggregator::TrimmedMean;
    default: return d.aggregator;
  }
}

ParamVector robust_aggregate(const std::vector<ParamVector>& updates,
                             RobustAggregator kind, const DefenseConfig& d) {
  switch (kind) {
    case RobustAggregator::Krum: {
      // Fall back to averaging when the cohort is too small for Krum.
      if (int(updates.size()) < d.krum_f + 3) {
        return spatial_aggregate(updates,
                                 std::vector<int>(updates.size(), 1));
      }
      return krum(updates, d.krum_f).first;
    }
    case RobustAggregator::Median: return coordinate_median(updates);
    case RobustAggregator::TrimmedMean: return trimmed_mean(updates, d.trim_beta);
  }
  throw ContractError("robust_aggregate: unknown aggregator");
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct CalibrationStats {
  double max_within = 0.0;
  double min_boundary = std::numeric_limits<double>::infinity();
  bool saw_boundary = false;
};

}  // namespace

std::pair<std::vector<double>, double> evaluate_historical(
    const ServerState& server, const std::vector<ClientState>& clients,
    const std::vector<Dataset>& test_sets, const Network& current_global,
    int current_task, bool use_pools, int skip_task) {
  std::vector<double> acc(test_sets.size(), kNaN);
  const ParamVector current_encoder = encoder_params(current_global);
  for (int t = 0; t <= current_task && t < int(test_sets.size()); ++t) {
    if (t == skip_task) continue;
    if (!use_pools || t == current_task) {
      acc[t] = evaluate_accuracy(current_global, test_sets[t]);
      continue;
    }
    double sum = 0.0;
    int count = 0;
    for (const ClientState& client : clients) {
      const auto it = client.decoder_pool.find(t);
      if (it == client.decoder_pool.end()) continue;
      const Network net =
          compose_network(current_global, current_encoder, it->second);
      sum += evaluate_accuracy(net, test_sets[t]);
      count += 1;
    }
    if (count == 0) {
      // No pooled decoder anywhere (e.g. missed boundary): score with the
      // current head instead of failing the run.
      acc[t] = evaluate_accuracy(current_global, test_sets[t]);
    } else {
      acc[t] = sum / double(count);
    }
  }
  double sum = 0.0;
  int count = 0;
  for (int t = 0; t <= current_task && t < int(acc.size()); ++t) {
    if (!std::isnan(acc[t])) {
      sum += acc[t];
      count += 1;
    }
  }
  return {acc, count > 0 ? sum / double(count) : kNaN};
}

std::pair<double, ParamVector> fedprox_penalty(const ParamVector& local,
                                               const ParamVector& global_ref,
                                               double mu) {
  if (!local.same_layout(global_ref)) {
    throw ContractError("fedprox_penalty: layouts differ");
  }
  if (mu < 0.0) throw ValidationError("fedprox_penalty: mu >= 0");
  ParamVector grad = local;
  double penalty = 0.0;
  for (std::size_t i = 0; i < local.size(); ++i) {
    const double d = local.values[i] - global_ref.values[i];
    penalty += d * d;
    grad.values[i] = mu * d;
  }
  return {0.5 * mu * penalty, std::move(grad)};
}

StorageReport storage_report(const ServerState& server,
                             const std::vector<ClientState>& clients,
                             const Network& model) {
  StorageReport report;
  report.decoder_params = model.decoder_param_count();
  report.total_params = model.param_count();
  report.full_model_bytes = report.total_params * 8;
  report.ratio = double(report.decoder_params) / double(report.total_params);
  for (const ClientState& client : clients) {
    report.pool_entries =
        std::max(report.pool_entries, int(client.decoder_pool.size()));
  }
  (void)server;
  report.decoder_pool_bytes =
      std::uint64_t(report.pool_entries) * report.decoder_params * 8;
  return report;
}

namespace {

SimulationResult run_simulation_impl(const ExperimentConfig& cfg,
                                     bool oracle_drift,
                                     CalibrationStats* calib) {
  cfg.validate();
  const std::uint64_t master = cfg.seed;
  const bool sacfl = cfg.method == Method::SacFL;
  const bool fedprox = cfg.method == Method::FedProx;
  const bool robust_always = cfg.method == Method::Krum ||
                             cfg.method == Method::Median ||
                             cfg.method == Method::TrimmedMean;
  const RobustAggregator robust_kind =
      aggregator_for(cfg.method, cfg.defense);

  StreamBundle bundle = build_bundle(cfg);
  const std::vector<int> rounds_per_task = cfg.task_rounds();
  const int total_rounds = cfg.total_rounds();
  const int K = cfg.num_clients;
  const int per_round = cfg.clients_per_round < 0 ? K : cfg.clients_per_round;

  const Network init_model =
      Network::random(network_widths(cfg), resolved_split(cfg),
                      derive_seed(master, {seed_tag::kModelInit}));

  double threshold = cfg.detection.drift_threshold;
  if (sacfl && !oracle_drift && cfg.detection.auto_threshold) {
    threshold = calibrate_drift_threshold(cfg, cfg.detection.calibration_rounds);
  }
  if (oracle_drift) threshold = std::numeric_limits<double>::infinity();

  ServerState server;
  server.degrade_threshold = cfg.detection.degrade_threshold;
  std::vector<ClientState> clients(K);
  for (int k = 0; k < K; ++k) {
    clients[k].client_id = k;
    clients[k].model = init_model;
    clients[k].optimizer = cfg.optimizer.kind == OptimizerKind::SGD
                               ? OptimizerState::sgd(cfg.optimizer.learning_rate)
                               : OptimizerState::adam(cfg.optimizer.learning_rate);
    clients[k].drift_threshold = threshold;
    clients[k].prev_round_decoder = decoder_params(init_model);
  }

  ParamVector spatial_enc = encoder_params(init_model);
  ParamVector global_dec = decoder_params(init_model);
  ParamVector global_full = flatten(init_model);
  bool attack_sticky = false;

  SimulationResult result;
  result.drift_threshold_used = threshold;

  for (int round = 1; round <= total_rounds; ++round) {
    const auto round_start = std::chrono::steady_clock::now();
    const int stream_task = bundle.streams[0].task_at_round(round);
    const bool stream_switched =
        round == 1 || std::find(bundle.streams[0].boundaries.begin(),
                                bundle.streams[0].boundaries.end(),
                                round) != bundle.streams[0].boundaries.end();

    if (stream_switched) {
      for (int k = 0; k < K; ++k) {
        adopt_data(clients[k], bundle.streams[k].datasets[stream_task],
                   cfg.detection.probe_size,
                   derive_seed(master, {seed_tag::kProbe, std::uint64_t(k),
                                        std::uint64_t(stream_task)}));
      }
    }

    // Participation.
    std::vector<int> participants(K);
    std::iota(participants.begin(), participants.end(), 0);
    if (per_round < K) {
      auto rng = make_engine(master,
                             {seed_tag::kParticipation, std::uint64_t(round)});
      std::shuffle(participants.begin(), participants.end(), rng);
      participants.resize(per_round);
      std::sort(participants.begin(), participants.end());
    }

    // Distribute.
    Network global_net = init_model;
    ParamVector enc_dist = spatial_enc;
    if (sacfl) {
      enc_dist = temporal_fuse(server.encoder_pool, spatial_enc,
                               server.global_task);
      global_net = compose_network(init_model, enc_dist, global_dec);
    } else {
      unflatten(global_net, global_full);
    }
    const ParamVector global_ref = flatten(global_net);

    const Network* defense_ref_net = nullptr;
    Network defense_ref_storage;
    if (sacfl && !server.encoder_pool.empty()) {
      defense_ref_storage = compose_network(init_model,
                                            server.encoder_pool.back(),
                                            global_dec);
      defense_ref_net = &defense_ref_storage;
    }

    auto options_for = [&](int k) {
      TrainOptions opts;
      opts.batch_size = cfg.optimizer.batch_size;
      opts.master_seed = master;
      opts.shuffle_path =
          (std::uint64_t(k) << 32) | std::uint64_t(std::uint32_t(round));
      if (fedprox) {
        opts.fedprox_mu = cfg.fedprox_mu;
        opts.fedprox_reference = &global_ref;
      }
      if (sacfl && clients[k].attack_mode && defense_ref_net != nullptr) {
        opts.alpha = cfg.defense.alpha;
        opts.reference_encoder = defense_ref_net;
      }
      return opts;
    };

    // Phase A: every participant trains its first local epoch; with SacFL the
    // drift statistic is computed right after it (Eq. 5, guard i > 1).
    std::vector<std::vector<double>> losses(K);
    std::vector<ParamVector> enc_after_first(K);
    std::vector<double> diffs(K, kNaN);
    std::vector<std::uint8_t> shifted(K, 0);
    const int epochs = cfg.optimizer.local_epochs;

    parallel_for(int(participants.size()), [&](int pi) {
      const int k = participants[pi];
      ClientState& client = clients[k];
      const Dataset& data = bundle.streams[k].datasets[stream_task];
      begin_local_round(client, global_net);
      const TrainOptions opts = options_for(k);
      if (sacfl) {
        std::vector<double> first = train_epochs(client, data, 1, 1, opts);
        losses[k] = std::move(first);
        enc_after_first[k] = encoder_params(client.model);
        if (client.iter_in_task > 1) {
          const DriftReport report =
              detect_drift(client, enc_dist, enc_after_first[k]);
          diffs[k] = report.diff;
          shifted[k] = report.shifted ? 1 : 0;
        }
      } else {
        losses[k] = train_epochs(client, data, 1, epochs, opts);
      }
    });

    // Phase B: drift bookkeeping and adversarial-task detection (sequential).
    bool round_drift = false;
    if (sacfl) {
      if (oracle_drift) {
        round_drift = stream_switched && round > 1;
        if (calib != nullptr) {
          for (int k : participants) {
            if (std::isnan(diffs[k])) continue;
            if (round_drift) {
              calib->min_boundary = std::min(calib->min_boundary, diffs[k]);
              calib->saw_boundary = true;
            } else {
              calib->max_within = std::max(calib->max_within, diffs[k]);
            }
          }
        }
      } else {
        for (int k : participants) round_drift = round_drift || shifted[k] != 0;
      }
    }

    bool attack_evaluated = false;
    double degrade = kNaN;
    bool attack_flag = false;
    if (round_drift) {
      const bool completed_adversarial = attack_sticky;
      attack_sticky = false;
      const int completed_task = clients[0].current_task;
      // The data trained on during the completed task is the previous round's
      // stream task (at a true boundary the stream has already switched).
      const int completed_stream_task =
          bundle.streams[0].task_at_round(round - 1);
      if (!completed_adversarial) {
        for (int k = 0; k < K; ++k) {
          const auto key = std::make_pair(k, completed_task);
          server.decoder_pool[key] = clients[k].prev_round_decoder;
          server.proxy_pool.entries[key] =
              bundle.streams[k].proxies[completed_stream_task];
          const Network baseline_net = compose_network(
              init_model, enc_dist, server.decoder_pool.at(key));
          server.baseline_acc[key] =
              evaluate_accuracy(baseline_net, server.proxy_pool.entries.at(key));
        }
        server.encoder_pool.push_back(spatial_enc);
        server.global_task += 1;
        // The defense reference is the newest pooled encoder from here on.
        defense_ref_storage =
            compose_network(init_model, server.encoder_pool.back(), global_dec);
        defense_ref_net = &defense_ref_storage;
      }
      for (int k = 0; k < K; ++k) {
        const std::optional<ParamVector> push =
            completed_adversarial
                ? std::nullopt
                : std::optional<ParamVector>(clients[k].prev_round_decoder);
        on_drift(clients[k], push, bundle.streams[k].datasets[stream_task],
                 cfg.detection.probe_size,
                 derive_seed(master, {seed_tag::kDecoderReinit,
                                      std::uint64_t(k),
                                      std::uint64_t(clients[k].current_task + 1)}));
      }
      const int j = clients[0].current_task;
      if (!server.decoder_pool.empty() && j >= 1) {
        attack_evaluated = true;
        degrade = -std::numeric_limits<double>::infinity();
        for (int z : participants) {
          if (enc_after_first[z].size() == 0) continue;
          const AdversarialReport report =
              detect_adversarial(enc_after_first[z], server, init_model, j);
          degrade = std::max(degrade, report.degrade);
        }
        attack_flag = degrade > server.degrade_threshold;
        if (attack_flag && !oracle_drift) {
          attack_sticky = true;
          for (int k = 0; k < K; ++k) clients[k].attack_mode = true;
        }
      }
    }

    // Phase C: remaining local epochs (parallel).
    if (sacfl && epochs > 1) {
      parallel_for(int(participants.size()), [&](int pi) {
        const int k = participants[pi];
        ClientState& client = clients[k];
        const Dataset& data = bundle.streams[k].datasets[stream_task];
        const TrainOptions opts = options_for(k);
        std::vector<double> rest =
            train_epochs(client, data, 2, epochs - 1, opts);
        losses[k].insert(losses[k].end(), rest.begin(), rest.end());
      });
    }

    // Phase D: uploads and aggregation (sequential, client order).
    std::vector<ParamVector> encs, decs, fulls;
    std::vector<int> sizes;
    for (int k : participants) {
      encs.push_back(encoder_params(clients[k].model));
      decs.push_back(decoder_params(clients[k].model));
      if (!sacfl) fulls.push_back(flatten(clients[k].model));
      sizes.push_back(int(bundle.streams[k].datasets[stream_task].size()));
    }
    if (sacfl) {
      if (attack_sticky) {
        spatial_enc = robust_aggregate(encs, robust_kind, cfg.defense);
        global_dec = robust_aggregate(decs, robust_kind, cfg.defense);
      } else {
        spatial_enc = spatial_aggregate(encs, sizes);
        global_dec = spatial_aggregate(decs, sizes);
      }
    } else if (robust_always) {
      global_full = robust_aggregate(fulls, robust_kind, cfg.defense);
    } else {
      global_full = spatial_aggregate(fulls, sizes);
    }
    for (int k = 0; k < K; ++k) {
      ClientState& client = clients[k];
      const bool participated =
          std::find(participants.begin(), participants.end(), k) !=
          participants.end();
      if (participated) client.prev_round_decoder = decoder_params(client.model);
      if (round_drift) {
        client.iter_in_task = 1;  // set by on_drift; keep non-participants in step
      } else {
        client.iter_in_task += 1;
      }
    }

    // Metrics and evaluation.
    RoundMetrics m;
    m.round = round;
    m.task = stream_task;
    m.diffs = diffs;
    m.drift_flags = shifted;
    m.any_drift = round_drift;
    m.attack_evaluated = attack_evaluated;
    m.degrade = degrade;
    m.attack_flag = attack_flag;
    m.defense_active = attack_sticky;
    double loss_sum = 0.0;
    int loss_count = 0;
    for (int k : participants) {
      if (losses[k].empty()) continue;
      loss_sum += std::accumulate(losses[k].begin(), losses[k].end(), 0.0) /
                  double(losses[k].size());
      loss_count += 1;
    }
    m.mean_train_loss = loss_count > 0 ? loss_sum / double(loss_count) : kNaN;
    if (!std::isfinite(m.mean_train_loss)) {
      throw NumericalError("run_simulation: non-finite training loss at round " +
                           std::to_string(round));
    }

    Network eval_net = init_model;
    if (sacfl) {
      const ParamVector eval_enc =
          temporal_fuse(server.encoder_pool, spatial_enc, server.global_task);
      eval_net = compose_network(init_model, eval_enc, global_dec);
    } else {
      unflatten(eval_net, global_full);
    }
    for (double v : flatten(eval_net).values) {
      if (!std::isfinite(v)) {
        throw NumericalError("run_simulation: non-finite global model at round " +
                             std::to_string(round));
      }
    }
    const auto [task_acc, avg] = evaluate_historical(
        server, clients, bundle.test_sets, eval_net, stream_task, sacfl,
        cfg.attack.task);
    m.task_acc = task_acc;
    m.avg_hist_acc = avg;
    m.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - round_start)
                    .count();
    result.rounds.push_back(std::move(m));
  }

  const RoundMetrics& last = result.rounds.back();
  result.final_task_acc = last.task_acc;
  result.final_avg_hist_acc = last.avg_hist_acc;
  result.encoder_pool_size = int(server.encoder_pool.size());
  result.server_decoder_pool_entries = int(server.decoder_pool.size());
  for (const ClientState& client : clients) {
    result.client_decoder_pool_entries =
        std::max(result.client_decoder_pool_entries,
                 int(client.decoder_pool.size()));
  }
  result.storage = storage_report(server, clients, clients[0].model);
  return result;
}

}  // namespace

SimulationResult run_simulation(const ExperimentConfig& cfg) {
  return run_simulation_impl(cfg, false, nullptr);
}

LayerDiagnosticResult diagnose_layers(const ExperimentConfig& cfg) {
  ExperimentConfig solo = cfg;
  solo.num_clients = 1;
  solo.clients_per_round = -1;
  solo.method = Method::FedAvg;  // plain sequential training, no pools
  solo.attack = AttackConfig{};
  solo.validate();
  if (solo.num_tasks < 2) {
    throw ValidationError("diagnose_layers: need at least 2 tasks");
  }

  StreamBundle bundle = build_bundle(solo);
  const std::uint64_t master = solo.seed;
  Network model = Network::random(network_widths(solo), resolved_split(solo),
                                  derive_seed(master, {seed_tag::kModelInit}));
  ClientState client;
  client.model = model;
  client.optimizer = solo.optimizer.kind == OptimizerKind::SGD
                         ? OptimizerState::sgd(solo.optimizer.learning_rate)
                         : OptimizerState::adam(solo.optimizer.learning_rate);

  // Per-layer displacement from the model snapshot at the end of task 0;
  // the last task-0 round itself reads as all zeros.
  LayerDiagnosticResult result;
  result.boundaries = bundle.streams[0].boundaries;
  const int total = solo.total_rounds();
  const int reference_round = solo.task_rounds()[0];
  std::vector<Network> snapshots;
  snapshots.reserve(total);
  for (int round = 1; round <= total; ++round) {
    const int task = bundle.streams[0].task_at_round(round);
    TrainOptions opts;
    opts.batch_size = solo.optimizer.batch_size;
    opts.master_seed = master;
    opts.shuffle_path = std::uint64_t(std::uint32_t(round));
    client.optimizer.reset();
    train_epochs(client, bundle.streams[0].datasets[task], 1,
                 solo.optimizer.local_epochs, opts);
    snapshots.push_back(client.model);
  }
  const Network& reference = snapshots[reference_round - 1];
  for (const Network& snapshot : snapshots) {
    result.per_round_profiles.push_back(
        layer_change_profile(snapshot, reference));
  }
  result.cumulative = result.per_round_profiles.back();

  const std::size_t last = result.cumulative.size() - 1;
  double total_change = 0.0;
  for (double c : result.cumulative) total_change += c;
  result.degenerate = total_change == 0.0;
  result.final_layer_max_cumulative = !result.degenerate;
  for (std::size_t l = 0; l < last; ++l) {
    if (result.cumulative[l] >= result.cumulative[last]) {
      result.final_layer_max_cumulative = false;
    }
  }
  bool boundaries_ok = !result.degenerate;
  for (int b : result.boundaries) {
    const std::vector<double>& profile = result.per_round_profiles[b - 1];
    for (std::size_t l = 0; l < last; ++l) {
      if (profile[l] >= profile[last]) boundaries_ok = false;
    }
  }
  result.final_layer_max_at_boundaries = boundaries_ok;
  return result;
}

double calibrate_drift_threshold(const ExperimentConfig& cfg,
                                 int calibration_rounds) {
  if (calibration_rounds < 2) {
    throw ValidationError("calibrate_drift_threshold: need >= 2 rounds per task");
  }
  // Same master seed: the calibration stream shares the run's data geometry
  // and init scale, which is what makes its diff magnitudes transferable.
  ExperimentConfig mini = cfg;
  mini.num_tasks = 2;
  mini.rounds_per_task = {calibration_rounds, calibration_rounds};
  mini.attack = AttackConfig{};
  mini.method = Method::SacFL;
  mini.detection.auto_threshold = false;
  mini.detection.drift_threshold = std::numeric_limits<double>::infinity();
  if (mini.data.kind == TaskKind::DomainIncremental) {
    // Two-task calibration schedule: clean task, then the first drifting spec.
    std::vector<NoiseSpec> schedule;
    schedule.push_back(NoiseSpec{});
    NoiseSpec second;
    second.kind = NoiseSpec::Kind::Gaussian;
    second.sigma = 1.0;
    for (const NoiseSpec& spec : cfg.data.noise) {
      if (spec.kind != NoiseSpec::Kind::Identity && spec.sigma > 0.0) {
        second = spec;
        break;
      }
    }
    schedule.push_back(second);
    mini.data.noise = schedule;
  }
  mini.validate();

  CalibrationStats stats;
  run_simulation_impl(mini, true, &stats);
  if (!stats.saw_boundary || !std::isfinite(stats.min_boundary)) {
    throw CalibrationError("calibration stream produced no boundary diffs");
  }
  if (stats.max_within == 0.0) {
    if (stats.min_boundary <= 0.0) {
      throw CalibrationError("boundary diff is zero; nothing to detect");
    }
    return stats.min_boundary / 2.0;
  }
  if (stats.min_boundary <= stats.max_within) {
    throw CalibrationError(
        "boundary diff does not exceed within-task diffs; Eq.-5 detection is "
        "not separable at this scale");
  }
  return std::sqrt(stats.max_within * stats.min_boundary);
}

}  // namespace sacfl
