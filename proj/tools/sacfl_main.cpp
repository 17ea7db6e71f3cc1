#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sacfl/config.hpp"
#include "sacfl/errors.hpp"
#include "sacfl/orchestrator.hpp"
#include "sacfl/report.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitCalibration = 3;
constexpr int kExitNumerical = 4;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw sacfl::ValidationError("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

sacfl::ExperimentConfig resolve_config(const CommonArgs& args,
                                       std::string* resolved_json) {
  std::string text = read_file(args.config_path);
  std::vector<std::string> overrides = args.overrides;
  if (args.seed >= 0) {
    overrides.push_back("seed=" + std::to_string(args.seed));
  }
  if (!overrides.empty()) {
    text = sacfl::apply_overrides(text, overrides);
  }
  sacfl::ExperimentConfig cfg = sacfl::parse_config_json(text);
  if (resolved_json != nullptr) *resolved_json = sacfl::config_to_json(cfg);
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON experiment config")
      ->required();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--set", args.overrides,
                  "config override, dotted path (e.g. optimizer.learning_rate=0.1)");
  cmd->add_option("--seed", args.seed, "master seed override");
}

int run_one(const CommonArgs& args) {
  std::string resolved;
  sacfl::ExperimentConfig cfg = resolve_config(args, &resolved);
  std::filesystem::create_directories(args.out_dir);
  sacfl::write_text_file(
      args.out_dir + "/manifest.json",
      sacfl::manifest_to_json(args.config_path, resolved, cfg.seed,
                              args.out_dir));
  const auto start = std::chrono::steady_clock::now();
  const sacfl::SimulationResult result = sacfl::run_simulation(cfg);
  const double wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - start)
                             .count();
  sacfl::write_text_file(args.out_dir + "/metrics.csv",
                         sacfl::metrics_to_csv(result.rounds, cfg.num_tasks,
                                               cfg.num_clients));
  sacfl::write_text_file(args.out_dir + "/summary.json",
                         sacfl::summary_to_json(result, wall_ms));
  std::printf("run complete: %d rounds, final avg historical accuracy %.4f\n",
              int(result.rounds.size()), result.final_avg_hist_acc);
  return kExitOk;
}

sacfl::Method method_from_name(const std::string& name) {
  if (name == "sacfl") return sacfl::Method::SacFL;
  if (name == "fedavg") return sacfl::Method::FedAvg;
  if (name == "fedprox") return sacfl::Method::FedProx;
  if (name == "krum") return sacfl::Method::Krum;
  if (name == "median") return sacfl::Method::Median;
  if (name == "trimmed_mean") return sacfl::Method::TrimmedMean;
  throw sacfl::ValidationError("unknown method: " + name);
}

int run_compare(const CommonArgs& args, const std::vector<std::string>& methods) {
  if (methods.empty()) {
    throw sacfl::ValidationError("compare: need at least one method");
  }
  std::string resolved;
  sacfl::ExperimentConfig cfg = resolve_config(args, &resolved);
  std::filesystem::create_directories(args.out_dir);
  sacfl::write_text_file(
      args.out_dir + "/manifest.json",
      sacfl::manifest_to_json(args.config_path, resolved, cfg.seed,
                              args.out_dir));
  std::string table = "method,final_avg_hist_acc";
  for (int t = 0; t < cfg.num_tasks; ++t) {
    table += ",acc_task_" + std::to_string(t);
  }
  table += "\n";
  for (const std::string& name : methods) {
    sacfl::ExperimentConfig variant = cfg;
    variant.method = method_from_name(name);
    const sacfl::SimulationResult result = sacfl::run_simulation(variant);
    sacfl::write_text_file(args.out_dir + "/metrics_" + name + ".csv",
                           sacfl::metrics_to_csv(result.rounds,
                                                 cfg.num_tasks,
                                                 cfg.num_clients));
    char acc[64];
    std::snprintf(acc, sizeof(acc), "%.17g", result.final_avg_hist_acc);
    table += name;
    table += ",";
    table += acc;
    for (double a : result.final_task_acc) {
      std::snprintf(acc, sizeof(acc), "%.17g", a);
      table += ",";
      table += std::isnan(a) ? "" : acc;
    }
    table += "\n";
    std::printf("%-14s final avg historical accuracy %.4f\n", name.c_str(),
                result.final_avg_hist_acc);
  }
  sacfl::write_text_file(args.out_dir + "/comparison.csv", table);
  return kExitOk;
}

int run_diagnose(const CommonArgs& args) {
  std::string resolved;
  sacfl::ExperimentConfig cfg = resolve_config(args, &resolved);
  std::filesystem::create_directories(args.out_dir);
  sacfl::write_text_file(
      args.out_dir + "/manifest.json",
      sacfl::manifest_to_json(args.config_path, resolved, cfg.seed,
                              args.out_dir));
  const sacfl::LayerDiagnosticResult result = sacfl::diagnose_layers(cfg);
  sacfl::write_text_file(args.out_dir + "/layer_changes.csv",
                         sacfl::layer_changes_to_csv(result.per_round_profiles));
  nlohmann::json summary;
  summary["boundaries"] = result.boundaries;
  summary["cumulative_change_per_layer"] = result.cumulative;
  summary["final_layer_max_cumulative"] = result.final_layer_max_cumulative;
  summary["final_layer_max_at_boundaries"] = result.final_layer_max_at_boundaries;
  summary["degenerate"] = result.degenerate;
  sacfl::write_text_file(args.out_dir + "/diagnose.json", summary.dump(2) + "\n");
  if (result.degenerate) {
    std::printf("diagnose-layers: DEGENERATE (no parameter movement)\n");
  } else {
    std::printf("diagnose-layers: %s (final layer max at boundaries: %s)\n",
                result.final_layer_max_cumulative &&
                        result.final_layer_max_at_boundaries
                    ? "PASS"
                    : "FAIL",
                result.final_layer_max_at_boundaries ? "yes" : "no");
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SacFL federated continual-learning simulator"};
  app.require_subcommand(1);

  CommonArgs run_args, compare_args, diagnose_args;
  std::vector<std::string> methods;

  CLI::App* cmd_run = app.add_subcommand("run", "run one experiment");
  add_common(cmd_run, run_args);

  CLI::App* cmd_compare =
      app.add_subcommand("compare", "run several methods on the same stream");
  add_common(cmd_compare, compare_args);
  cmd_compare
      ->add_option("--methods", methods,
                   "comma-separated methods (sacfl,fedavg,fedprox,krum,median,"
                   "trimmed_mean)")
      ->required()
      ->delimiter(',');

  CLI::App* cmd_diagnose = app.add_subcommand(
      "diagnose-layers", "per-layer change diagnostic on a task stream");
  add_common(cmd_diagnose, diagnose_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_run->parsed()) return run_one(run_args);
    if (cmd_compare->parsed()) return run_compare(compare_args, methods);
    if (cmd_diagnose->parsed()) return run_diagnose(diagnose_args);
  } catch (const sacfl::CalibrationError& e) {
    std::fprintf(stderr, "calibration error: %s\n", e.what());
    return kExitCalibration;
  } catch (const sacfl::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kExitNumerical;
  } catch (const sacfl::ValidationError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const sacfl::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kExitOk;
}
