#pragma once

#include <string>
#include <vector>

#include "sacfl/orchestrator.hpp"

namespace sacfl {

// metrics.csv body. Columns, in order:
//   round, task, drift, degrade, attack, defense_active,
//   mean_train_loss, avg_hist_acc,
//   acc_task_0..acc_task_{T-1}, diff_0..diff_{K-1}
// Floats use 17 significant digits; unevaluated cells are empty. Wall time is
// deliberately not a column so reruns are byte-identical.
std::string metrics_to_csv(const std::vector<RoundMetrics>& rounds,
                           int num_tasks, int num_clients);

std::string summary_to_json(const SimulationResult& result, double wall_ms);

std::string manifest_to_json(const std::string& config_path,
                             const std::string& resolved_config_json,
                             std::uint64_t master_seed,
                             const std::string& out_dir);

void write_text_file(const std::string& path, const std::string& content);

// Per-round layer_change_profile curves for the layer-sensitivity diagnostic.
std::string layer_changes_to_csv(
    const std::vector<std::vector<double>>& per_round_profiles);

}  // namespace sacfl
