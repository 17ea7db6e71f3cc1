#include "sacfl/data_gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "sacfl/errors.hpp"
#include "sacfl/rng.hpp"

namespace sacfl {

void Dataset::validate() const {
  if (labels.size() != features.rows()) {
    throw ValidationError("dataset label count does not match feature rows");
  }
  for (int label : labels) {
    if (class_set.find(label) == class_set.end()) {
      throw ValidationError("dataset label outside its class set");
    }
  }
}

int TaskStream::task_at_round(int round) const {
  int task = 0;
  for (int b : boundaries) {
    if (round >= b) ++task;
  }
  return task;
}

Dataset make_blobs(int num_classes, int dim, int per_class, double separation,
                   double spread, std::uint64_t rng_seed) {
  if (num_classes < 2) throw ValidationError("make_blobs: num_classes >= 2");
  if (dim < 1 || per_class < 1) throw ValidationError("make_blobs: bad sizes");
  if (separation <= 0.0) throw ValidationError("make_blobs: separation > 0");
  if (spread < 0.0) throw ValidationError("make_blobs: spread >= 0");

  std::mt19937_64 rng(rng_seed);
  // Rejection-sample centers in a hypercube scaled so placement is easy.
  const double half = separation * std::ceil(std::pow(double(num_classes), 1.0 / dim)) + separation;
  std::uniform_real_distribution<double> box(-half, half);
  std::vector<std::vector<double>> centers;
  const int max_attempts = 100000;
  int attempts = 0;
  while (int(centers.size()) < num_classes) {
    if (++attempts > max_attempts) {
      throw ValidationError("make_blobs: could not place separated centers");
    }
    std::vector<double> c(dim);
    for (double& v : c) v = box(rng);
    bool ok = true;
    for (const auto& other : centers) {
      double d2 = 0.0;
      for (int i = 0; i < dim; ++i) {
        const double d = c[i] - other[i];
        d2 += d * d;
      }
      if (d2 < separation * separation) {
        ok = false;
        break;
      }
    }
    if (ok) centers.push_back(std::move(c));
  }

  const std::size_t n = std::size_t(num_classes) * per_class;
  Dataset ds;
  ds.features = Tensor::zeros({n, std::size_t(dim)});
  ds.labels.resize(n);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t row = 0;
  for (int c = 0; c < num_classes; ++c) {
    ds.class_set.insert(c);
    for (int s = 0; s < per_class; ++s, ++row) {
      for (int i = 0; i < dim; ++i) {
        ds.features.data[row * dim + i] = centers[c][i] + spread * noise(rng);
      }
      ds.labels[row] = c;
    }
  }
  return ds;
}

namespace {

// Class group sizes as equal as possible, larger groups at the tail
// (10 classes / 3 tasks -> 3, 3, 4).
std::vector<int> group_sizes(int num_classes, int num_tasks) {
  std::vector<int> sizes(num_tasks, num_classes / num_tasks);
  const int extra = num_classes % num_tasks;
  for (int i = 0; i < extra; ++i) sizes[num_tasks - 1 - i] += 1;
  return sizes;
}

std::vector<std::size_t> indices_of_class(const Dataset& ds, int cls) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    if (ds.labels[i] == cls) idx.push_back(i);
  }
  return idx;
}

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& rows,
               std::set<int> class_set) {
  const std::size_t d = ds.dim();
  Dataset out;
  out.features = Tensor::zeros({rows.size(), d});
  out.labels.resize(rows.size());
  out.class_set = std::move(class_set);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(&ds.features.data[rows[r] * d], d, &out.features.data[r * d]);
    out.labels[r] = ds.labels[rows[r]];
  }
  return out;
}

}  // namespace

std::vector<TaskStream> partition_class_incremental(const Dataset& base,
                                                    int num_tasks,
                                                    int num_clients,
                                                    std::uint64_t rng_seed) {
  if (num_clients < 1) {
    throw ValidationError("partition_class_incremental: need >= 1 client");
  }
  std::vector<int> classes(base.class_set.begin(), base.class_set.end());
  if (num_tasks < 1 || num_tasks > int(classes.size())) {
    throw ValidationError(
        "partition_class_incremental: task count exceeds class count");
  }

  std::mt19937_64 rng(derive_seed(rng_seed, {seed_tag::kData, 0}));
  std::shuffle(classes.begin(), classes.end(), rng);
  const std::vector<int> sizes = group_sizes(int(classes.size()), num_tasks);

  std::vector<std::set<int>> groups(num_tasks);
  std::size_t cursor = 0;
  for (int t = 0; t < num_tasks; ++t) {
    for (int i = 0; i < sizes[t]; ++i) groups[t].insert(classes[cursor++]);
  }

  // Per class: seeded permutation of its samples chunked into K shards, plus
  // a seeded shard->client assignment so no two clients share samples.
  std::vector<TaskStream> streams(num_clients);
  for (int k = 0; k < num_clients; ++k) streams[k].client_id = k;

  for (int t = 0; t < num_tasks; ++t) {
    std::vector<std::vector<std::size_t>> rows_per_client(num_clients);
    for (int cls : groups[t]) {
      std::vector<std::size_t> idx = indices_of_class(base, cls);
      std::mt19937_64 class_rng(
          derive_seed(rng_seed, {seed_tag::kData, 1, std::uint64_t(cls)}));
      std::shuffle(idx.begin(), idx.end(), class_rng);
      std::vector<int> shard_of_client(num_clients);
      std::iota(shard_of_client.begin(), shard_of_client.end(), 0);
      std::shuffle(shard_of_client.begin(), shard_of_client.end(), class_rng);
      std::vector<int> client_of_shard(num_clients);
      for (int k = 0; k < num_clients; ++k) client_of_shard[shard_of_client[k]] = k;
      // Chunk boundaries: first (n % K) shards get one extra sample.
      const std::size_t n = idx.size();
      std::size_t offset = 0;
      for (int shard = 0; shard < num_clients; ++shard) {
        std::size_t len = n / num_clients + (std::size_t(shard) < n % num_clients ? 1 : 0);
        for (std::size_t i = 0; i < len; ++i) {
          rows_per_client[client_of_shard[shard]].push_back(idx[offset + i]);
        }
        offset += len;
      }
    }
    for (int k = 0; k < num_clients; ++k) {
      TaskSpec spec;
      spec.task_id = t;
      spec.kind = TaskKind::ClassIncremental;
      spec.classes = groups[t];
      streams[k].specs.push_back(spec);
      streams[k].datasets.push_back(
          subset(base, rows_per_client[k], groups[t]));
    }
  }
  return streams;
}

std::vector<Dataset> make_domain_incremental(const Dataset& base,
                                             const std::vector<NoiseSpec>& specs,
                                             std::uint64_t rng_seed) {
  std::vector<Dataset> out;
  out.reserve(specs.size());
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const NoiseSpec& spec = specs[s];
    if (spec.sigma < 0.0) {
      throw ValidationError("make_domain_incremental: sigma >= 0");
    }
    Dataset ds = base;
    if (spec.kind != NoiseSpec::Kind::Identity && spec.sigma > 0.0) {
      std::mt19937_64 rng(derive_seed(rng_seed, {seed_tag::kData, 2, s}));
      std::normal_distribution<double> noise(0.0, spec.sigma);
      for (double& v : ds.features.data) {
        const double eps = noise(rng);
        v = spec.kind == NoiseSpec::Kind::Gaussian ? v + eps : v * (1.0 + eps);
      }
    }
    out.push_back(std::move(ds));
  }
  return out;
}

Dataset apply_label_flip(const Dataset& ds, std::uint64_t rng_seed) {
  if (ds.class_set.size() < 2) {
    throw ValidationError("apply_label_flip: need >= 2 classes");
  }
  const std::vector<int> classes(ds.class_set.begin(), ds.class_set.end());
  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, classes.size() - 2);
  Dataset out = ds;
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    // Draw from the class list with the true label removed.
    std::size_t j = pick(rng);
    if (classes[j] == out.labels[i]) j = classes.size() - 1;
    out.labels[i] = classes[j];
  }
  return out;
}

Dataset apply_backdoor(const Dataset& ds, const std::vector<int>& trigger_dims,
                       double trigger_value, int target_label,
                       double poison_fraction, std::uint64_t rng_seed) {
  if (poison_fraction <= 0.0 || poison_fraction > 1.0) {
    throw ValidationError("apply_backdoor: poison_fraction in (0, 1]");
  }
  if (ds.class_set.find(target_label) == ds.class_set.end()) {
    throw ValidationError("apply_backdoor: target label not in class set");
  }
  for (int d : trigger_dims) {
    if (d < 0 || std::size_t(d) >= ds.dim()) {
      throw ValidationError("apply_backdoor: trigger dim out of range");
    }
  }
  const std::size_t n = ds.size();
  const std::size_t poisoned =
      std::size_t(std::ceil(poison_fraction * double(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(rng_seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  Dataset out = ds;
  const std::size_t dim = ds.dim();
  for (std::size_t i = 0; i < poisoned; ++i) {
    const std::size_t row = idx[i];
    for (int d : trigger_dims) out.features.data[row * dim + d] = trigger_value;
    out.labels[row] = target_label;
  }
  return out;
}

Dataset sample_proxy(const Dataset& ds, int m, std::uint64_t rng_seed) {
  if (m < 1 || std::size_t(m) > ds.size()) {
    throw ValidationError("sample_proxy: m must be in [1, n]");
  }
  // Stratified: spread the budget across classes by largest remainder, then
  // take a seeded shuffle prefix per class.
  std::vector<int> classes(ds.class_set.begin(), ds.class_set.end());
  std::vector<std::vector<std::size_t>> per_class;
  per_class.reserve(classes.size());
  for (int cls : classes) per_class.push_back(indices_of_class(ds, cls));

  const double total = double(ds.size());
  std::vector<int> take(classes.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const double exact = m * double(per_class[c].size()) / total;
    take[c] = int(exact);
    remainders.push_back({exact - double(take[c]), c});
    assigned += take[c];
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < m && i < remainders.size(); ++i) {
    const std::size_t c = remainders[i].second;
    if (take[c] < int(per_class[c].size())) {
      take[c] += 1;
      assigned += 1;
    }
  }
  // Top up from any class with spare samples if rounding fell short.
  for (std::size_t c = 0; assigned < m && c < classes.size(); ++c) {
    while (assigned < m && take[c] < int(per_class[c].size())) {
      take[c] += 1;
      assigned += 1;
    }
  }

  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::mt19937_64 rng(
        derive_seed(rng_seed, {seed_tag::kProxy, std::uint64_t(classes[c])}));
    std::vector<std::size_t>& idx = per_class[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + take[c]);
  }
  std::sort(chosen.begin(), chosen.end());
  return subset(ds, chosen, ds.class_set);
}

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw ValidationError("idx: truncated header in " + path);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

Tensor load_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("idx: cannot open " + path);
  const std::uint32_t magic = read_be32(in, path);
  if ((magic & 0xFFFF0000u) != 0) {
    throw ValidationError("idx: bad magic in " + path);
  }
  const std::uint32_t dtype = (magic >> 8) & 0xFF;
  const std::uint32_t rank = magic & 0xFF;
  if (rank == 0 || rank > 4) throw ValidationError("idx: unsupported rank");
  std::vector<std::size_t> shape;
  std::size_t count = 1;
  for (std::uint32_t d = 0; d < rank; ++d) {
    const std::uint32_t n = read_be32(in, path);
    shape.push_back(n);
    count *= n;
  }
  // Flatten trailing dims into columns so images come out as [n x pixels].
  std::vector<double> data;
  data.reserve(count);
  auto read_all = [&](auto decode) {
    for (std::size_t i = 0; i < count; ++i) data.push_back(decode());
  };
  switch (dtype) {
    case 0x08:  // unsigned byte
      read_all([&]() -> double {
        unsigned char v;
        if (!in.read(reinterpret_cast<char*>(&v), 1)) {
          throw ValidationError("idx: truncated data in " + path);
        }
        return double(v);
      });
      break;
    case 0x0C:  // int32
      read_all([&]() -> double { return double(std::int32_t(read_be32(in, path))); });
      break;
    case 0x0D: {  // float32
      read_all([&]() -> double {
        const std::uint32_t raw = read_be32(in, path);
        float f;
        static_assert(sizeof(f) == 4);
        std::memcpy(&f, &raw, 4);
        return double(f);
      });
      break;
    }
    default:
      throw ValidationError("idx: unsupported element type");
  }
  if (rank == 1) return Tensor({shape[0]}, std::move(data));
  std::size_t cols = 1;
  for (std::size_t d = 1; d < shape.size(); ++d) cols *= shape[d];
  return Tensor({shape[0], cols}, std::move(data));
}

Dataset dataset_from_idx(const std::string& images_path,
                         const std::string& labels_path) {
  Tensor images = load_idx(images_path);
  Tensor labels = load_idx(labels_path);
  if (labels.shape.size() != 1 || labels.rows() != images.rows()) {
    throw ValidationError("idx: image/label row counts differ");
  }
  Dataset ds;
  ds.features = std::move(images);
  ds.labels.reserve(labels.size());
  for (double v : labels.data) {
    ds.labels.push_back(int(v));
    ds.class_set.insert(int(v));
  }
  return ds;
}

}  // namespace sacfl
