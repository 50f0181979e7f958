#include "hge/streams.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "hge/errors.hpp"
#include "hge/random.hpp"

namespace hge {

const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::Split:
      return "split";
    case ScenarioKind::Permuted:
      return "permuted";
    case ScenarioKind::Inverse:
      return "inverse";
    case ScenarioKind::AlternatingDomains:
      return "alternating-domains";
    case ScenarioKind::Custom:
      return "custom";
  }
  return "?";
}

ScenarioKind parse_scenario_kind(const std::string& name) {
  for (auto k : {ScenarioKind::Split, ScenarioKind::Permuted, ScenarioKind::Inverse, ScenarioKind::AlternatingDomains,
                 ScenarioKind::Custom})
    if (name == to_string(k)) return k;
  throw ConfigError("unknown scenario kind '" + name + "'");
}

void StreamConfig::validate() const {
  if (tasks < 1) throw ConfigError("stream.tasks must be at least 1");
  if (classes_per_task < 1) throw ConfigError("stream.classes_per_task must be at least 1");
  if (input_dim < 1 && kind != ScenarioKind::Custom) throw ConfigError("stream.input_dim must be at least 1");
  if (batch_size < 1) throw ConfigError("stream.batch_size must be at least 1");
  if (boundary_constant < 1) throw ConfigError("stream.boundary_constant must be at least 1");
  if (batches_per_task < boundary_constant)
    throw ConfigError("stream.batches_per_task must be at least stream.boundary_constant");
  if (test_batches_per_task < 0) throw ConfigError("stream.test_batches_per_task must be non-negative");
  if (!(sigma_cls >= 0.0)) throw ConfigError("stream.sigma_cls must be non-negative");
  if (!(class_spread >= 0.0 && class_spread < 0.8 * std::sqrt(2.0)))
    throw ConfigError("stream.class_spread must lie in [0, 1.13)");
  for (int t : task_order)
    if (t < 0 || t >= tasks) throw ConfigError("stream.task_order entry out of range: " + std::to_string(t));
  if (kind == ScenarioKind::Custom && !dataset) throw ConfigError("stream.dataset is required for the custom scenario");
}

std::vector<int> StreamConfig::order() const {
  if (!task_order.empty()) return task_order;
  std::vector<int> o(static_cast<std::size_t>(tasks));
  for (int t = 0; t < tasks; ++t) o[static_cast<std::size_t>(t)] = t;
  return o;
}

int StreamConfig::output_classes() const {
  switch (kind) {
    case ScenarioKind::Split:
    case ScenarioKind::Custom:
      return tasks * classes_per_task;
    default:
      return classes_per_task;
  }
}

std::uint64_t batch_uid(std::uint64_t seed, int split, long index) {
  return mix_seed(seed, static_cast<std::uint64_t>(split) + 1, static_cast<std::uint64_t>(index));
}

namespace {

constexpr int kPrototypeAttempts = 1000;

// Rejection sampling: each new prototype must keep distance >= min_dist to all
// earlier ones. `draw` produces a candidate row.
template <class Draw>
void place_prototypes(nn::Matrix& protos, int first, int count, double min_dist, Draw&& draw) {
  for (int i = first; i < first + count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kPrototypeAttempts && !placed; ++attempt) {
      nn::Vector cand = draw();
      placed = true;
      for (int j = 0; j < i; ++j) {
        if ((protos.row(j).transpose() - cand).norm() < min_dist) {
          placed = false;
          break;
        }
      }
      if (placed) protos.row(i) = cand.transpose();
    }
    if (!placed)
      throw ConfigError("stream: cannot place " + std::to_string(first + count) +
                        " class prototypes with the requested separation in " + std::to_string(protos.cols()) +
                        " dimensions");
  }
}

}  // namespace

TaskGenerator::TaskGenerator(const StreamConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int cpt = cfg_.classes_per_task;
  const double min_dist = 4.0 * cfg_.sigma_cls;
  Rng rng(mix_seed(cfg_.seed, 0x70726f746fULL));

  if (cfg_.kind == ScenarioKind::Custom) {
    const Dataset& d = *cfg_.dataset;
    cfg_.input_dim = d.dim();
    custom_rows_.assign(static_cast<std::size_t>(cfg_.tasks), {});
    for (int i = 0; i < d.size(); ++i) {
      const int label = d.labels[static_cast<std::size_t>(i)];
      const int task = label / cpt;
      if (task < cfg_.tasks) custom_rows_[static_cast<std::size_t>(task)].push_back(i);
    }
    for (int t = 0; t < cfg_.tasks; ++t)
      if (custom_rows_[static_cast<std::size_t>(t)].empty())
        throw ConfigError("stream: dataset has no rows for task " + std::to_string(t));
  } else {
    const int d = cfg_.input_dim;
    int count = 0;
    switch (cfg_.kind) {
      case ScenarioKind::Split:
      case ScenarioKind::AlternatingDomains:
        count = cfg_.tasks * cpt;
        break;
      case ScenarioKind::Permuted:
        count = cpt;
        break;
      case ScenarioKind::Inverse:
        count = ((cfg_.tasks + 1) / 2) * cpt;
        break;
      case ScenarioKind::Custom:
        break;
    }
    prototypes_.resize(count, d);
    if (cfg_.kind == ScenarioKind::AlternatingDomains) {
      nn::Vector center(d);
      for (int j = 0; j < d; ++j) center(j) = rng.uniform() < 0.5 ? 0.2 : 0.8;
      for (int t = 0; t < cfg_.tasks; ++t) {
        const nn::Vector c = (t % 2 == 0) ? center : nn::Vector((1.0 - center.array()).matrix());
        place_prototypes(prototypes_, t * cpt, cpt, min_dist, [&] {
          nn::Vector v(d);
          for (int j = 0; j < d; ++j) v(j) = c(j) + rng.uniform(-0.15, 0.15);
          return v;
        });
      }
    } else if (cfg_.class_spread > 0.0) {
      const double radius = cfg_.class_spread / std::sqrt(2.0);
      for (int g = 0; g < count / cpt; ++g) {
        nn::Vector center(d);
        for (int j = 0; j < d; ++j) center(j) = rng.uniform(0.1 + radius, 0.9 - radius);
        place_prototypes(prototypes_, g * cpt, cpt, min_dist, [&] {
          nn::Vector u(d);
          for (int j = 0; j < d; ++j) u(j) = rng.normal();
          return nn::Vector(center + radius * u / u.norm());
        });
      }
    } else {
      place_prototypes(prototypes_, 0, count, min_dist, [&] {
        nn::Vector v(d);
        for (int j = 0; j < d; ++j) v(j) = rng.uniform(0.1, 0.9);
        return v;
      });
    }
  }

  permutations_.resize(static_cast<std::size_t>(cfg_.tasks));
  for (int t = 0; t < cfg_.tasks; ++t) {
    auto& p = permutations_[static_cast<std::size_t>(t)];
    p.resize(static_cast<std::size_t>(cfg_.input_dim));
    for (int j = 0; j < cfg_.input_dim; ++j) p[static_cast<std::size_t>(j)] = j;
    if (cfg_.kind == ScenarioKind::Permuted && t > 0) {
      Rng prng(mix_seed(cfg_.seed, 0x7065726dULL, static_cast<std::uint64_t>(t)));
      for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[prng.below(i)]);
    }
  }
}

std::vector<int> TaskGenerator::task_labels(int task) const {
  std::vector<int> out;
  const int cpt = cfg_.classes_per_task;
  const bool global = cfg_.kind == ScenarioKind::Split || cfg_.kind == ScenarioKind::Custom;
  if (cfg_.kind == ScenarioKind::Custom) {
    std::set<int> s;
    for (int r : custom_rows_.at(static_cast<std::size_t>(task))) s.insert(cfg_.dataset->labels[static_cast<std::size_t>(r)]);
    return {s.begin(), s.end()};
  }
  for (int j = 0; j < cpt; ++j) out.push_back(global ? task * cpt + j : j);
  return out;
}

int TaskGenerator::domain(int task) const {
  return cfg_.kind == ScenarioKind::AlternatingDomains ? task % 2 : 0;
}

Batch TaskGenerator::base_batch(int task, std::uint64_t uid) const {
  Rng rng(uid);
  const int n = cfg_.batch_size;
  const int cpt = cfg_.classes_per_task;
  Batch b;
  b.uid = uid;
  b.truth_task = task;
  b.labels.resize(static_cast<std::size_t>(n));
  b.inputs.resize(n, cfg_.input_dim);

  if (cfg_.kind == ScenarioKind::Custom) {
    const auto& rows = custom_rows_.at(static_cast<std::size_t>(task));
    for (int i = 0; i < n; ++i) {
      const int r = rows[rng.below(rows.size())];
      b.inputs.row(i) = cfg_.dataset->inputs.row(r);
      b.labels[static_cast<std::size_t>(i)] = cfg_.dataset->labels[static_cast<std::size_t>(r)];
    }
    return b;
  }

  int proto_base = 0;
  switch (cfg_.kind) {
    case ScenarioKind::Split:
    case ScenarioKind::AlternatingDomains:
      proto_base = task * cpt;
      break;
    case ScenarioKind::Inverse:
      proto_base = (task / 2) * cpt;
      break;
    default:
      break;
  }
  const bool global = cfg_.kind == ScenarioKind::Split;
  for (int i = 0; i < n; ++i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(cpt)));
    b.labels[static_cast<std::size_t>(i)] = global ? task * cpt + j : j;
    for (int c = 0; c < cfg_.input_dim; ++c) {
      const double v = prototypes_(proto_base + j, c) + cfg_.sigma_cls * rng.normal();
      b.inputs(i, c) = std::clamp(v, 0.0, 1.0);
    }
  }
  return b;
}

Batch TaskGenerator::make_batch(int task, std::uint64_t uid) const {
  if (task < 0 || task >= cfg_.tasks) throw InputError("make_batch: task out of range");
  Batch b = base_batch(task, uid);
  if (cfg_.kind == ScenarioKind::Permuted && task > 0) {
    const auto& p = permutation(task);
    nn::Matrix out(b.inputs.rows(), b.inputs.cols());
    for (int c = 0; c < cfg_.input_dim; ++c) out.col(c) = b.inputs.col(p[static_cast<std::size_t>(c)]);
    b.inputs = std::move(out);
  } else if (cfg_.kind == ScenarioKind::Inverse && task % 2 == 1) {
    b.inputs = (1.0 - b.inputs.array()).matrix();
  }
  return b;
}

Stream make_stream(const StreamConfig& cfg) {
  TaskGenerator gen(cfg);
  Stream s;
  s.tasks = cfg.tasks;
  s.output_classes = cfg.output_classes();
  s.input_dim = cfg.kind == ScenarioKind::Custom ? cfg.dataset->dim() : cfg.input_dim;
  long index = 0;
  for (int task : cfg.order()) {
    s.segment_starts.push_back(index);
    s.segment_tasks.push_back(task);
    for (int j = 0; j < cfg.batches_per_task; ++j, ++index)
      s.train.push_back(std::make_shared<const Batch>(gen.make_batch(task, batch_uid(cfg.seed, 0, index))));
  }
  long test_index = 0;
  for (int t = 0; t < cfg.tasks; ++t)
    for (int j = 0; j < cfg.test_batches_per_task; ++j, ++test_index)
      s.test.push_back(std::make_shared<const Batch>(gen.make_batch(t, batch_uid(cfg.seed, 1, test_index))));
  return s;
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_u64(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffU;
    h *= kFnvPrime;
  }
}

void fnv_batches(std::uint64_t& h, const std::vector<BatchPtr>& batches) {
  for (const auto& b : batches) {
    fnv_u64(h, b->uid);
    fnv_u64(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(b->truth_task)));
    for (int l : b->labels) fnv_u64(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(l)));
    for (Eigen::Index i = 0; i < b->inputs.size(); ++i) {
      std::uint64_t bits = 0;
      const double v = b->inputs.data()[i];
      std::memcpy(&bits, &v, sizeof bits);
      fnv_u64(h, bits);
    }
  }
}

}  // namespace

std::uint64_t checksum(const Stream& stream) {
  std::uint64_t h = kFnvOffset;
  fnv_batches(h, stream.train);
  fnv_batches(h, stream.test);
  return h;
}

std::string checksum_hex(std::uint64_t value) {
  static const char* kDigits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xfU];
    value >>= 4;
  }
  return out;
}

}  // namespace hge
