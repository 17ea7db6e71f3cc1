#include "sacfl/config.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sacfl/errors.hpp"

namespace sacfl {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& scope) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (known.find(key) == known.end()) {
      throw ValidationError("config: unknown key '" + scope + key + "'");
    }
  }
}

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::SGD;
  if (s == "adam") return OptimizerKind::Adam;
  throw ValidationError("config: optimizer.kind must be 'sgd' or 'adam'");
}

Method parse_method(const std::string& s) {
  if (s == "sacfl") return Method::SacFL;
  if (s == "fedavg") return Method::FedAvg;
  if (s == "fedprox") return Method::FedProx;
  if (s == "krum") return Method::Krum;
  if (s == "median") return Method::Median;
  if (s == "trimmed_mean") return Method::TrimmedMean;
  throw ValidationError("config: unknown method '" + s + "'");
}

RobustAggregator parse_aggregator(const std::string& s) {
  if (s == "krum") return RobustAggregator::Krum;
  if (s == "median") return RobustAggregator::Median;
  if (s == "trimmed_mean") return RobustAggregator::TrimmedMean;
  throw ValidationError("config: unknown aggregator '" + s + "'");
}

AttackKind parse_attack_kind(const std::string& s) {
  if (s == "none") return AttackKind::None;
  if (s == "label_flip") return AttackKind::LabelFlip;
  if (s == "backdoor") return AttackKind::Backdoor;
  throw ValidationError("config: unknown attack kind '" + s + "'");
}

NoiseSpec parse_noise(const json& entry) {
  reject_unknown_keys(entry, {"kind", "sigma"}, "data.noise.");
  NoiseSpec spec;
  const std::string kind = entry.value("kind", "identity");
  if (kind == "identity") {
    spec.kind = NoiseSpec::Kind::Identity;
  } else if (kind == "gaussian") {
    spec.kind = NoiseSpec::Kind::Gaussian;
  } else if (kind == "multiplicative") {
    spec.kind = NoiseSpec::Kind::Multiplicative;
  } else {
    throw ValidationError("config: unknown noise kind '" + kind + "'");
  }
  spec.sigma = entry.value("sigma", 0.0);
  return spec;
}

const char* method_name(Method m) {
  switch (m) {
    case Method::SacFL: return "sacfl";
    case Method::FedAvg: return "fedavg";
    case Method::FedProx: return "fedprox";
    case Method::Krum: return "krum";
    case Method::Median: return "median";
    case Method::TrimmedMean: return "trimmed_mean";
  }
  return "sacfl";
}

const char* aggregator_name(RobustAggregator a) {
  switch (a) {
    case RobustAggregator::Krum: return "krum";
    case RobustAggregator::Median: return "median";
    case RobustAggregator::TrimmedMean: return "trimmed_mean";
  }
  return "krum";
}

const char* attack_name(AttackKind k) {
  switch (k) {
    case AttackKind::None: return "none";
    case AttackKind::LabelFlip: return "label_flip";
    case AttackKind::Backdoor: return "backdoor";
  }
  return "none";
}

const char* noise_name(NoiseSpec::Kind k) {
  switch (k) {
    case NoiseSpec::Kind::Identity: return "identity";
    case NoiseSpec::Kind::Gaussian: return "gaussian";
    case NoiseSpec::Kind::Multiplicative: return "multiplicative";
  }
  return "identity";
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: JSON parse error: ") + e.what());
  }
  if (!root.is_object()) throw ValidationError("config: root must be an object");
  reject_unknown_keys(root,
                      {"clients", "tasks", "model", "optimizer", "data",
                       "attack", "detection", "defense", "method",
                       "fedprox_mu", "seed"},
                      "");

  ExperimentConfig cfg;
  if (root.contains("clients")) {
    const json& c = root["clients"];
    reject_unknown_keys(c, {"count", "per_round"}, "clients.");
    cfg.num_clients = c.value("count", cfg.num_clients);
    cfg.clients_per_round = c.value("per_round", cfg.clients_per_round);
  }
  if (root.contains("tasks")) {
    const json& t = root["tasks"];
    reject_unknown_keys(t, {"count", "rounds_per_task"}, "tasks.");
    cfg.num_tasks = t.value("count", cfg.num_tasks);
    if (t.contains("rounds_per_task")) {
      cfg.rounds_per_task.clear();
      if (t["rounds_per_task"].is_array()) {
        for (const auto& v : t["rounds_per_task"]) {
          cfg.rounds_per_task.push_back(v.get<int>());
        }
      } else {
        cfg.rounds_per_task.push_back(t["rounds_per_task"].get<int>());
      }
    }
  }
  if (root.contains("model")) {
    const json& m = root["model"];
    reject_unknown_keys(m, {"hidden", "split_index"}, "model.");
    if (m.contains("hidden")) {
      cfg.model.hidden.clear();
      for (const auto& v : m["hidden"]) {
        cfg.model.hidden.push_back(v.get<std::size_t>());
      }
    }
    cfg.model.split_index = m.value("split_index", cfg.model.split_index);
  }
  if (root.contains("optimizer")) {
    const json& o = root["optimizer"];
    reject_unknown_keys(
        o, {"kind", "learning_rate", "batch_size", "local_epochs"},
        "optimizer.");
    if (o.contains("kind")) {
      cfg.optimizer.kind = parse_optimizer_kind(o["kind"].get<std::string>());
    }
    cfg.optimizer.learning_rate =
        o.value("learning_rate", cfg.optimizer.learning_rate);
    cfg.optimizer.batch_size = o.value("batch_size", cfg.optimizer.batch_size);
    cfg.optimizer.local_epochs =
        o.value("local_epochs", cfg.optimizer.local_epochs);
  }
  if (root.contains("data")) {
    const json& d = root["data"];
    reject_unknown_keys(d,
                        {"kind", "num_classes", "dim", "per_class",
                         "separation", "spread", "test_per_class",
                         "proxy_per_task", "noise"},
                        "data.");
    if (d.contains("kind")) {
      const std::string kind = d["kind"].get<std::string>();
      if (kind == "class_incremental") {
        cfg.data.kind = TaskKind::ClassIncremental;
      } else if (kind == "domain_incremental") {
        cfg.data.kind = TaskKind::DomainIncremental;
      } else {
        throw ValidationError("config: unknown data kind '" + kind + "'");
      }
    }
    cfg.data.num_classes = d.value("num_classes", cfg.data.num_classes);
    cfg.data.dim = d.value("dim", cfg.data.dim);
    cfg.data.per_class = d.value("per_class", cfg.data.per_class);
    cfg.data.separation = d.value("separation", cfg.data.separation);
    cfg.data.spread = d.value("spread", cfg.data.spread);
    cfg.data.test_per_class = d.value("test_per_class", cfg.data.test_per_class);
    cfg.data.proxy_per_task = d.value("proxy_per_task", cfg.data.proxy_per_task);
    if (d.contains("noise")) {
      cfg.data.noise.clear();
      for (const auto& entry : d["noise"]) {
        cfg.data.noise.push_back(parse_noise(entry));
      }
    }
  }
  if (root.contains("attack")) {
    const json& a = root["attack"];
    reject_unknown_keys(a,
                        {"task", "kind", "trigger_dims", "trigger_value",
                         "target_label", "poison_fraction"},
                        "attack.");
    cfg.attack.task = a.value("task", cfg.attack.task);
    if (a.contains("kind")) {
      cfg.attack.kind = parse_attack_kind(a["kind"].get<std::string>());
    }
    if (a.contains("trigger_dims")) {
      cfg.attack.trigger_dims.clear();
      for (const auto& v : a["trigger_dims"]) {
        cfg.attack.trigger_dims.push_back(v.get<int>());
      }
    }
    cfg.attack.trigger_value = a.value("trigger_value", cfg.attack.trigger_value);
    cfg.attack.target_label = a.value("target_label", cfg.attack.target_label);
    cfg.attack.poison_fraction =
        a.value("poison_fraction", cfg.attack.poison_fraction);
  }
  if (root.contains("detection")) {
    const json& d = root["detection"];
    reject_unknown_keys(d,
                        {"drift_threshold", "calibration_rounds",
                         "degrade_threshold", "probe_size"},
                        "detection.");
    if (d.contains("drift_threshold")) {
      if (d["drift_threshold"].is_string()) {
        if (d["drift_threshold"].get<std::string>() != "auto") {
          throw ValidationError(
              "config: drift_threshold must be a number or 'auto'");
        }
        cfg.detection.auto_threshold = true;
      } else {
        cfg.detection.auto_threshold = false;
        cfg.detection.drift_threshold = d["drift_threshold"].get<double>();
      }
    }
    cfg.detection.calibration_rounds =
        d.value("calibration_rounds", cfg.detection.calibration_rounds);
    cfg.detection.degrade_threshold =
        d.value("degrade_threshold", cfg.detection.degrade_threshold);
    cfg.detection.probe_size = d.value("probe_size", cfg.detection.probe_size);
  }
  if (root.contains("defense")) {
    const json& d = root["defense"];
    reject_unknown_keys(d, {"alpha", "aggregator", "krum_f", "trim_beta"},
                        "defense.");
    cfg.defense.alpha = d.value("alpha", cfg.defense.alpha);
    if (d.contains("aggregator")) {
      cfg.defense.aggregator =
          parse_aggregator(d["aggregator"].get<std::string>());
    }
    cfg.defense.krum_f = d.value("krum_f", cfg.defense.krum_f);
    cfg.defense.trim_beta = d.value("trim_beta", cfg.defense.trim_beta);
  }
  if (root.contains("method")) {
    cfg.method = parse_method(root["method"].get<std::string>());
  }
  cfg.fedprox_mu = root.value("fedprox_mu", cfg.fedprox_mu);
  cfg.seed = root.value("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_json(buffer.str());
}

std::string apply_overrides(const std::string& json_text,
                            const std::vector<std::string>& overrides) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: JSON parse error: ") + e.what());
  }
  for (const std::string& entry : overrides) {
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValidationError("override must look like key.path=value: " + entry);
    }
    const std::string path = entry.substr(0, eq);
    const std::string value_text = entry.substr(eq + 1);
    json value;
    try {
      value = json::parse(value_text);
    } catch (const json::parse_error&) {
      value = value_text;  // bare strings are fine
    }
    json* node = &root;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = path.find('.', start);
      const std::string key = path.substr(
          start, dot == std::string::npos ? std::string::npos : dot - start);
      if (key.empty()) throw ValidationError("override has an empty key: " + entry);
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      node = &(*node)[key];
      start = dot + 1;
    }
  }
  return root.dump(2);
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json root;
  root["clients"] = {{"count", cfg.num_clients},
                     {"per_round", cfg.clients_per_round}};
  root["tasks"] = {{"count", cfg.num_tasks},
                   {"rounds_per_task", cfg.rounds_per_task}};
  root["model"] = {{"hidden", cfg.model.hidden},
                   {"split_index", cfg.model.split_index}};
  root["optimizer"] = {
      {"kind", cfg.optimizer.kind == OptimizerKind::SGD ? "sgd" : "adam"},
      {"learning_rate", cfg.optimizer.learning_rate},
      {"batch_size", cfg.optimizer.batch_size},
      {"local_epochs", cfg.optimizer.local_epochs}};
  json noise = json::array();
  for (const NoiseSpec& spec : cfg.data.noise) {
    noise.push_back({{"kind", noise_name(spec.kind)}, {"sigma", spec.sigma}});
  }
  root["data"] = {{"kind", cfg.data.kind == TaskKind::ClassIncremental
                               ? "class_incremental"
                               : "domain_incremental"},
                  {"num_classes", cfg.data.num_classes},
                  {"dim", cfg.data.dim},
                  {"per_class", cfg.data.per_class},
                  {"separation", cfg.data.separation},
                  {"spread", cfg.data.spread},
                  {"test_per_class", cfg.data.test_per_class},
                  {"proxy_per_task", cfg.data.proxy_per_task},
                  {"noise", noise}};
  root["attack"] = {{"task", cfg.attack.task},
                    {"kind", attack_name(cfg.attack.kind)},
                    {"trigger_dims", cfg.attack.trigger_dims},
                    {"trigger_value", cfg.attack.trigger_value},
                    {"target_label", cfg.attack.target_label},
                    {"poison_fraction", cfg.attack.poison_fraction}};
  if (cfg.detection.auto_threshold) {
    root["detection"]["drift_threshold"] = "auto";
  } else {
    root["detection"]["drift_threshold"] = cfg.detection.drift_threshold;
  }
  root["detection"]["calibration_rounds"] = cfg.detection.calibration_rounds;
  root["detection"]["degrade_threshold"] = cfg.detection.degrade_threshold;
  root["detection"]["probe_size"] = cfg.detection.probe_size;
  root["defense"] = {{"alpha", cfg.defense.alpha},
                     {"aggregator", aggregator_name(cfg.defense.aggregator)},
                     {"krum_f", cfg.defense.krum_f},
                     {"trim_beta", cfg.defense.trim_beta}};
  root["method"] = method_name(cfg.method);
  root["fedprox_mu"] = cfg.fedprox_mu;
  root["seed"] = cfg.seed;
  return root.dump(2);
}

std::string config_content_hash(const std::string& json_text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : json_text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace sacfl
