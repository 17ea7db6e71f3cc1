#include "sacfl/server.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "sacfl/errors.hpp"

namespace sacfl {

std::vector<double> aggregation_weights(const std::vector<int>& sizes) {
  if (sizes.empty()) throw ValidationError("aggregation_weights: empty sizes");
  long long total = 0;
  for (int s : sizes) {
    if (s <= 0) throw ValidationError("aggregation_weights: sizes must be positive");
    total += s;
  }
  std::vector<double> w;
  w.reserve(sizes.size());
  for (int s : sizes) w.push_back(double(s) / double(total));
  return w;
}

namespace {

void require_equal_layouts(const std::vector<ParamVector>& updates,
                           const char* op) {
  if (updates.empty()) throw ValidationError(std::string(op) + ": no updates");
  for (std::size_t i = 1; i < updates.size(); ++i) {
    if (!updates[i].same_layout(updates[0])) {
      throw ValidationError(std::string(op) + ": update layouts differ");
    }
  }
}

}  // namespace

ParamVector spatial_aggregate(const std::vector<ParamVector>& updates,
                              const std::vector<int>& sizes) {
  require_equal_layouts(updates, "spatial_aggregate");
  if (sizes.size() != updates.size()) {
    throw ValidationError("spatial_aggregate: sizes/updates length mismatch");
  }
  const std::vector<double> w = aggregation_weights(sizes);
  ParamVector out = updates[0];
  const std::size_t n = out.size();
  // Centered accumulation: sum_k w_k (u_k - u_0) + u_0. Identical updates
  // aggregate to themselves bit-exactly.
  std::vector<double> acc(n, 0.0);
  for (std::size_t k = 0; k < updates.size(); ++k) {
    const double wk = w[k];
    const std::vector<double>& u = updates[k].values;
    for (std::size_t i = 0; i < n; ++i) {
      acc[i] += wk * (u[i] - updates[0].values[i]);
    }
  }
  for (std::size_t i = 0; i < n; ++i) out.values[i] += acc[i];
  return out;
}

ParamVector temporal_fuse(const std::vector<ParamVector>& encoder_pool,
                          const ParamVector& spatial, int t) {
  if (int(encoder_pool.size()) != t) {
    throw ContractError("temporal_fuse: pool length != t");
  }
  if (t == 0) return spatial;
  for (const ParamVector& p : encoder_pool) {
    if (!p.same_layout(spatial)) {
      throw ContractError("temporal_fuse: pool/spatial layouts differ");
    }
  }
  ParamVector out = spatial;
  const std::size_t n = spatial.size();
  const double inv = 1.0 / double(t + 1);
  std::vector<double> acc(n, 0.0);
  for (const ParamVector& p : encoder_pool) {
    for (std::size_t i = 0; i < n; ++i) {
      acc[i] += inv * (p.values[i] - spatial.values[i]);
    }
  }
  for (std::size_t i = 0; i < n; ++i) out.values[i] += acc[i];
  return out;
}

std::pair<ParamVector, std::vector<double>> krum(
    const std::vector<ParamVector>& updates, int f) {
  require_equal_layouts(updates, "krum");
  const int n = int(updates.size());
  if (f < 0 || n < f + 3) {
    throw ValidationError("krum: need n >= f + 3 updates");
  }
  const int neighbors = n - f - 2;
  std::vector<std::vector<double>> dist2(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      const std::vector<double>& a = updates[i].values;
      const std::vector<double>& b = updates[j].values;
      for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        d2 += d * d;
      }
      dist2[i][j] = dist2[j][i] = d2;
    }
  }
  std::vector<double> scores(n, 0.0);
  for (int i = 0; i < n; ++i) {
    std::vector<double> others;
    others.reserve(n - 1);
    for (int j = 0; j < n; ++j) {
      if (j != i) others.push_back(dist2[i][j]);
    }
    std::sort(others.begin(), others.end());
    double s = 0.0;
    for (int j = 0; j < neighbors; ++j) s += others[j];
    scores[i] = s;
  }
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (scores[i] < scores[best]) best = i;
  }
  return {updates[best], scores};
}

ParamVector coordinate_median(const std::vector<ParamVector>& updates) {
  require_equal_layouts(updates, "coordinate_median");
  const std::size_t n = updates.size();
  ParamVector out = updates[0];
  std::vector<double> column(n);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < n; ++k) column[k] = updates[k].values[i];
    std::sort(column.begin(), column.end());
    out.values[i] = n % 2 == 1 ? column[n / 2]
                               : 0.5 * (column[n / 2 - 1] + column[n / 2]);
  }
  return out;
}

ParamVector trimmed_mean(const std::vector<ParamVector>& updates, double beta) {
  require_equal_layouts(updates, "trimmed_mean");
  const std::size_t n = updates.size();
  if (beta < 0.0) throw ValidationError("trimmed_mean: beta >= 0");
  const std::size_t trim = std::size_t(beta * double(n));
  if (2 * trim >= n) {
    throw ValidationError("trimmed_mean: trim fraction removes all updates");
  }
  ParamVector out = updates[0];
  std::vector<double> column(n);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < n; ++k) column[k] = updates[k].values[i];
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (std::size_t k = trim; k < n - trim; ++k) sum += column[k];
    out.values[i] = sum / double(n - 2 * trim);
  }
  return out;
}

double evaluate_accuracy(const Network& net, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  const auto [logits, cache] = forward(net, ds.features);
  (void)cache;
  const std::size_t classes = logits.cols();
  std::size_t correct = 0;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const double* row = &logits.data[r * classes];
    std::size_t arg = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[arg]) arg = c;
    }
    if (int(arg) == ds.labels[r]) ++correct;
  }
  return double(correct) / double(ds.size());
}

Network compose_network(const Network& arch, const ParamVector& encoder,
                        const ParamVector& decoder) {
  Network net = arch;
  unflatten(net, encoder);
  unflatten(net, decoder);
  return net;
}

AdversarialReport detect_adversarial(const ParamVector& candidate_encoder,
                                     const ServerState& server,
                                     const Network& arch, int j) {
  if (j < 1) throw ValidationError("detect_adversarial: j >= 1 required");
  // Group pool entries by client.
  std::map<int, std::vector<int>> tasks_of_client;
  for (const auto& [key, unused] : server.decoder_pool) {
    (void)unused;
    if (key.second < j) tasks_of_client[key.first].push_back(key.second);
  }
  if (tasks_of_client.empty()) {
    throw LookupError("detect_adversarial: decoder pool has no entries below j");
  }
  double client_sum = 0.0;
  int client_count = 0;
  for (const auto& [client, tasks] : tasks_of_client) {
    double task_sum = 0.0;
    int task_count = 0;
    for (int t : tasks) {
      const auto key = std::make_pair(client, t);
      const auto proxy_it = server.proxy_pool.entries.find(key);
      if (proxy_it == server.proxy_pool.entries.end()) {
        throw LookupError("detect_adversarial: missing proxy data for entry");
      }
      const auto base_it = server.baseline_acc.find(key);
      if (base_it == server.baseline_acc.end()) {
        throw LookupError("detect_adversarial: missing baseline accuracy");
      }
      const double base = base_it->second;
      if (base == 0.0) {
        std::fprintf(stderr,
                     "[sacfl] warning: baseline accuracy 0 for client %d task "
                     "%d; term excluded\n",
                     client, t);
        continue;
      }
      const Network net = compose_network(arch, candidate_encoder,
                                          server.decoder_pool.at(key));
      const double acc = evaluate_accuracy(net, proxy_it->second);
      task_sum += (base - acc) / base;
      task_count += 1;
    }
    if (task_count > 0) {
      client_sum += task_sum / double(task_count);
      client_count += 1;
    }
  }
  AdversarialReport report;
  report.degrade = client_count > 0 ? client_sum / double(client_count) : 0.0;
  report.adversarial = report.degrade > server.degrade_threshold;
  return report;
}

std::map<std::pair<int, int>, double> record_baselines(
    const ParamVector& encoder, const ServerState& server, const Network& arch) {
  std::map<std::pair<int, int>, double> acc;
  for (const auto& [key, decoder] : server.decoder_pool) {
    const auto proxy_it = server.proxy_pool.entries.find(key);
    if (proxy_it == server.proxy_pool.entries.end()) {
      throw LookupError("record_baselines: missing proxy data for entry");
    }
    const Network net = compose_network(arch, encoder, decoder);
    acc[key] = evaluate_accuracy(net, proxy_it->second);
  }
  return acc;
}

}  // namespace sacfl
