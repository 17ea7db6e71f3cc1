#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sacfl/tensor.hpp"

namespace sacfl {

struct Dataset {
  Tensor features;          // [n x d]
  std::vector<int> labels;  // [n]
  std::set<int> class_set;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  void validate() const;
};

enum class TaskKind { ClassIncremental, DomainIncremental };
enum class AttackKind { None, LabelFlip, Backdoor };

struct NoiseSpec {
  enum class Kind { Identity, Gaussian, Multiplicative };
  Kind kind = Kind::Identity;
  double sigma = 0.0;
};

struct TaskSpec {
  int task_id = 0;
  TaskKind kind = TaskKind::ClassIncremental;
  std::set<int> classes;  // class-incremental group
  NoiseSpec noise;        // domain-incremental descriptor
  AttackKind attack = AttackKind::None;
  int iterations = 1;  // federated rounds I_t
};

// Per-client sequence of task datasets with hidden boundary ground truth.
struct TaskStream {
  int client_id = 0;
  std::vector<TaskSpec> specs;
  std::vector<Dataset> datasets;  // training data, one per spec
  std::vector<Dataset> proxies;   // held-out slice per task, never trained on
  std::vector<int> boundaries;    // 1-based global round where each task > 0 starts

  int task_at_round(int round) const;  // round is 1-based
};

struct ProxyPool {
  std::map<std::pair<int, int>, Dataset> entries;  // (client, task) -> data
};

// Gaussian clusters, one per class, centers pairwise >= separation apart.
Dataset make_blobs(int num_classes, int dim, int per_class, double separation,
                   double spread, std::uint64_t rng_seed);

// Splits classes into T disjoint groups (sizes as equal as possible, larger
// groups last) and every class's samples into K disjoint client shards; each
// client gets one seeded shard per class of its task's group.
std::vector<TaskStream> partition_class_incremental(const Dataset& base,
                                                    int num_tasks,
                                                    int num_clients,
                                                    std::uint64_t rng_seed);

// Same labels across tasks; features perturbed per noise spec.
std::vector<Dataset> make_domain_incremental(const Dataset& base,
                                             const std::vector<NoiseSpec>& specs,
                                             std::uint64_t rng_seed);

// Every label replaced by a uniformly chosen different label from class_set.
Dataset apply_label_flip(const Dataset& ds, std::uint64_t rng_seed);

// A seeded ceil(poison_fraction * n) subset gets features[trigger_dims] :=
// trigger_value and label := target_label.
Dataset apply_backdoor(const Dataset& ds, const std::vector<int>& trigger_dims,
                       double trigger_value, int target_label,
                       double poison_fraction, std::uint64_t rng_seed);

// Seeded subsample without replacement, stratified by class where possible.
Dataset sample_proxy(const Dataset& ds, int m, std::uint64_t rng_seed);

// IDX-format loaders (4-byte magic, big-endian dims) so small real datasets
// can stand in for blobs.
Tensor load_idx(const std::string& path);
Dataset dataset_from_idx(const std::string& images_path,
                         const std::string& labels_path);

}  // namespace sacfl
