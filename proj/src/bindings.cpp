#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "sacfl/config.hpp"
#include "sacfl/data_gen.hpp"
#include "sacfl/errors.hpp"
#include "sacfl/network.hpp"
#include "sacfl/orchestrator.hpp"
#include "sacfl/report.hpp"
#include "sacfl/server.hpp"

namespace py = pybind11;
using namespace sacfl;

namespace {

Tensor tensor_from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Tensor::zeros({0, 0});
  Tensor t = Tensor::zeros({rows.size(), rows[0].size()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) {
      throw DimensionError("rows must be rectangular");
    }
    std::memcpy(&t.data[r * rows[0].size()], rows[r].data(),
                rows[0].size() * sizeof(double));
  }
  return t;
}

std::vector<std::vector<double>> tensor_to_rows(const Tensor& t) {
  std::vector<std::vector<double>> rows(t.rows());
  const std::size_t c = t.cols();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    rows[r].assign(t.data.begin() + r * c, t.data.begin() + (r + 1) * c);
  }
  return rows;
}

ParamVector pv_from(const std::vector<double>& values) {
  ParamVector p;
  p.values = values;
  p.layout = {{0, TensorRole::Bias, {values.size()}}};
  return p;
}

std::vector<ParamVector> pvs_from(const std::vector<std::vector<double>>& vs) {
  std::vector<ParamVector> out;
  out.reserve(vs.size());
  for (const auto& v : vs) out.push_back(pv_from(v));
  return out;
}

py::dict result_to_dict(const SimulationResult& result, int num_tasks,
                        int num_clients) {
  py::dict d;
  d["metrics_csv"] = metrics_to_csv(result.rounds, num_tasks, num_clients);
  d["final_task_accuracies"] = result.final_task_acc;
  d["final_avg_historical_accuracy"] = result.final_avg_hist_acc;
  d["drift_threshold_used"] = result.drift_threshold_used;
  d["encoder_pool_size"] = result.encoder_pool_size;
  d["client_decoder_pool_entries"] = result.client_decoder_pool_entries;
  d["storage_ratio"] = result.storage.ratio;
  py::list rounds;
  for (const RoundMetrics& m : result.rounds) {
    py::dict r;
    r["round"] = m.round;
    r["task"] = m.task;
    r["drift"] = m.any_drift;
    r["mean_train_loss"] = m.mean_train_loss;
    r["avg_hist_acc"] = m.avg_hist_acc;
    r["task_acc"] = m.task_acc;
    r["diffs"] = m.diffs;
    r["attack_evaluated"] = m.attack_evaluated;
    r["degrade"] = m.degrade;
    r["attack_flag"] = m.attack_flag;
    r["defense_active"] = m.defense_active;
    rounds.append(r);
  }
  d["rounds"] = rounds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "SacFL federated continual-learning simulator core";

  py::register_exception<Error>(m, "SacflError");

  m.def(
      "make_blobs",
      [](int num_classes, int dim, int per_class, double separation,
         double spread, std::uint64_t seed) {
        const Dataset ds =
            make_blobs(num_classes, dim, per_class, separation, spread, seed);
        return py::make_tuple(tensor_to_rows(ds.features), ds.labels);
      },
      py::arg("num_classes"), py::arg("dim"), py::arg("per_class"),
      py::arg("separation"), py::arg("spread"), py::arg("seed"));

  m.def(
      "manhattan",
      [](const std::vector<std::vector<double>>& a,
         const std::vector<std::vector<double>>& b) {
        return manhattan(tensor_from_rows(a), tensor_from_rows(b));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "kl_feature_divergence",
      [](const std::vector<std::vector<double>>& ref,
         const std::vector<std::vector<double>>& cur) {
        return kl_feature_divergence(tensor_from_rows(ref),
                                     tensor_from_rows(cur));
      },
      py::arg("ref"), py::arg("cur"));

  m.def(
      "spatial_aggregate",
      [](const std::vector<std::vector<double>>& updates,
         const std::vector<int>& sizes) {
        return spatial_aggregate(pvs_from(updates), sizes).values;
      },
      py::arg("updates"), py::arg("sizes"));

  m.def(
      "temporal_fuse",
      [](const std::vector<std::vector<double>>& pool,
         const std::vector<double>& spatial, int t) {
        return temporal_fuse(pvs_from(pool), pv_from(spatial), t).values;
      },
      py::arg("encoder_pool"), py::arg("spatial"), py::arg("t"));

  m.def(
      "krum",
      [](const std::vector<std::vector<double>>& updates, int f) {
        const auto [selected, scores] = krum(pvs_from(updates), f);
        return py::make_tuple(selected.values, scores);
      },
      py::arg("updates"), py::arg("f"));

  m.def(
      "coordinate_median",
      [](const std::vector<std::vector<double>>& updates) {
        return coordinate_median(pvs_from(updates)).values;
      },
      py::arg("updates"));

  m.def(
      "trimmed_mean",
      [](const std::vector<std::vector<double>>& updates, double beta) {
        return trimmed_mean(pvs_from(updates), beta).values;
      },
      py::arg("updates"), py::arg("beta"));

  m.def(
      "run_simulation",
      [](const std::string& config_json) {
        const ExperimentConfig cfg = parse_config_json(config_json);
        const SimulationResult result = run_simulation(cfg);
        return result_to_dict(result, cfg.num_tasks, cfg.num_clients);
      },
      py::arg("config_json"),
      "Run a full experiment from a JSON config string.");

  m.def(
      "calibrate_drift_threshold",
      [](const std::string& config_json, int rounds) {
        return calibrate_drift_threshold(parse_config_json(config_json),
                                         rounds);
      },
      py::arg("config_json"), py::arg("calibration_rounds"));

  m.def("default_config_json", []() {
    return config_to_json(ExperimentConfig{});
  });
}
