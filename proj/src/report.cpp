#include "sacfl/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "sacfl/config.hpp"
#include "sacfl/errors.hpp"

namespace sacfl {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

std::string cell(double v) { return std::isnan(v) ? std::string() : fmt_double(v); }

}  // namespace

std::string metrics_to_csv(const std::vector<RoundMetrics>& rounds,
                           int num_tasks, int num_clients) {
  std::string out = "round,task,drift,degrade,attack,defense_active,"
                    "mean_train_loss,avg_hist_acc";
  for (int t = 0; t < num_tasks; ++t) {
    out += ",acc_task_" + std::to_string(t);
  }
  for (int k = 0; k < num_clients; ++k) {
    out += ",diff_" + std::to_string(k);
  }
  out += "\n";
  for (const RoundMetrics& m : rounds) {
    out += std::to_string(m.round);
    out += "," + std::to_string(m.task);
    out += "," + std::to_string(m.any_drift ? 1 : 0);
    out += "," + (m.attack_evaluated ? fmt_double(m.degrade) : std::string());
    out += "," + (m.attack_evaluated ? std::string(m.attack_flag ? "1" : "0")
                                     : std::string());
    out += "," + std::to_string(m.defense_active ? 1 : 0);
    out += "," + fmt_double(m.mean_train_loss);
    out += "," + cell(m.avg_hist_acc);
    for (int t = 0; t < num_tasks; ++t) {
      out += "," + (t < int(m.task_acc.size()) ? cell(m.task_acc[t])
                                               : std::string());
    }
    for (int k = 0; k < num_clients; ++k) {
      out += "," + (k < int(m.diffs.size()) ? cell(m.diffs[k]) : std::string());
    }
    out += "\n";
  }
  return out;
}

std::string summary_to_json(const SimulationResult& result, double wall_ms) {
  nlohmann::json root;
  nlohmann::json accs = nlohmann::json::array();
  for (double a : result.final_task_acc) {
    if (std::isnan(a)) {
      accs.push_back(nullptr);
    } else {
      accs.push_back(a);
    }
  }
  root["final_task_accuracies"] = accs;
  root["final_avg_historical_accuracy"] = result.final_avg_hist_acc;
  root["rounds"] = result.rounds.size();
  root["drift_threshold_used"] = result.drift_threshold_used;
  root["encoder_pool_size"] = result.encoder_pool_size;
  root["server_decoder_pool_entries"] = result.server_decoder_pool_entries;
  root["client_decoder_pool_entries"] = result.client_decoder_pool_entries;
  root["storage"] = {
      {"decoder_pool_bytes", result.storage.decoder_pool_bytes},
      {"full_model_bytes", result.storage.full_model_bytes},
      {"decoder_params", result.storage.decoder_params},
      {"total_params", result.storage.total_params},
      {"pool_entries", result.storage.pool_entries},
      {"ratio", result.storage.ratio}};
  root["wall_ms"] = wall_ms;
  return root.dump(2) + "\n";
}

std::string manifest_to_json(const std::string& config_path,
                             const std::string& resolved_config_json,
                             std::uint64_t master_seed,
                             const std::string& out_dir) {
  nlohmann::json root;
  root["config_path"] = config_path;
  root["resolved_config"] = nlohmann::json::parse(resolved_config_json);
  root["master_seed"] = master_seed;
  root["out_dir"] = out_dir;
  root["config_hash"] = config_content_hash(resolved_config_json);
  return root.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << content;
}

std::string layer_changes_to_csv(
    const std::vector<std::vector<double>>& per_round_profiles) {
  std::string out = "round";
  if (!per_round_profiles.empty()) {
    for (std::size_t l = 0; l < per_round_profiles[0].size(); ++l) {
      out += ",layer_" + std::to_string(l);
    }
  }
  out += "\n";
  for (std::size_t r = 0; r < per_round_profiles.size(); ++r) {
    out += std::to_string(r + 1);
    for (double v : per_round_profiles[r]) out += "," + fmt_double(v);
    out += "\n";
  }
  return out;
}

}  // namespace sacfl
