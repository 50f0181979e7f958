#include "hge/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "hge/errors.hpp"
#include "hge/random.hpp"

namespace hge {

const char* to_string(Method m) {
  switch (m) {
    case Method::Separate:
      return "separate";
    case Method::Ge:
      return "ge";
    case Method::GeNoReview:
      return "ge-no-review";
    case Method::Hge:
      return "hge";
    case Method::Upper:
      return "upper";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::Separate, Method::Ge, Method::GeNoReview, Method::Hge, Method::Upper})
    if (name == to_string(m)) return m;
  throw ConfigError("unknown method '" + name + "' (expected separate, ge, ge-no-review, hge or upper)");
}

void HarnessConfig::validate() const {
  if (upper_trials < 1) throw ConfigError("harness.upper_trials must be at least 1");
  if (!(upper_tolerance >= 0.0)) throw ConfigError("harness.upper_tolerance must be non-negative");
  if (!(association_fraction > 0.0 && association_fraction <= 1.0))
    throw ConfigError("harness.association_fraction must lie in (0, 1]");
  if (dnf_limit < 1) throw ConfigError("harness.dnf_limit must be at least 1");
  if (lr_spike_every < 0) throw ConfigError("harness.lr_spike_every must be non-negative");
  if (!(lr_spike_factor > 0.0)) throw ConfigError("harness.lr_spike_factor must be positive");
  if (lr_spike_offset < 0) throw ConfigError("harness.lr_spike_offset must be non-negative");
  if (lr_spike_every > 0 && lr_spike_offset >= lr_spike_every)
    throw ConfigError("harness.lr_spike_offset must be below harness.lr_spike_every");
}

double HarnessConfig::lr_scale(long step) const {
  if (lr_spike_every > 0 && step % lr_spike_every == lr_spike_offset) return lr_spike_factor;
  return 1.0;
}

void RunConfig::validate() const {
  stream.validate();
  controller.ge.validate();
  harness.validate();
  if (stream.boundary_constant < controller.ge.hl_capacity)
    throw ConfigError("stream.boundary_constant must be at least ge.hl_capacity");
}

std::vector<std::string> scenario_names() {
  return {"split10", "split5", "permuted", "inverse", "alternating-domains", "instability", "custom"};
}

void apply_scenario(const std::string& name, RunConfig& cfg) {
  StreamConfig s;
  HarnessConfig h = cfg.harness;
  h.lr_spike_every = 0;
  if (name == "split10") {
    s.kind = ScenarioKind::Split;
  } else if (name == "split5") {
    s.kind = ScenarioKind::Split;
    s.tasks = 5;
  } else if (name == "permuted") {
    s.kind = ScenarioKind::Permuted;
    s.tasks = 5;
    s.classes_per_task = 4;
  } else if (name == "inverse") {
    s.kind = ScenarioKind::Inverse;
    s.tasks = 4;
    s.classes_per_task = 4;
  } else if (name == "alternating-domains") {
    s.kind = ScenarioKind::AlternatingDomains;
  } else if (name == "instability") {
    s.kind = ScenarioKind::Split;
    s.class_spread = 0.25;
    h.lr_spike_every = 150;
    h.lr_spike_offset = 100;
    h.lr_spike_factor = 50.0;
  } else if (name == "custom") {
    s.kind = ScenarioKind::Custom;
    s.tasks = 5;
  } else {
    throw ConfigError("unknown scenario '" + name + "'");
  }
  s.seed = cfg.stream.seed;
  cfg.scenario = name;
  cfg.stream = s;
  cfg.harness = h;
}

std::uint64_t model_seed(std::uint64_t seed) { return mix_seed(seed, 0x6d6f64656cULL); }

// ---------------------------------------------------------------------------

ControlledSetting::ControlledSetting(const Stream& stream, const ControllerConfig& config, std::uint64_t seed)
    : stream_(stream),
      noise_(config.model.sampled_routing_noise ? NoiseSource::keyed(mix_seed(seed, 0x6e6f697365ULL))
                                                : NoiseSource::zero()) {
  ModelConfig model = config.model;
  model.input_dim = stream.input_dim;
  model.classes = stream.output_classes;
  const ExpertConfig ec = make_expert_config(model, config.ge);
  task_batches_.resize(static_cast<std::size_t>(stream.tasks));
  for (const auto& b : stream.train) task_batches_.at(static_cast<std::size_t>(b->truth_task)).push_back(b);
  for (int k = 0; k < stream.tasks; ++k) {
    experts_.emplace_back(k, ec, mix_seed(seed, static_cast<std::uint64_t>(k)));
    experts_.back().promote();
  }
  for (const auto& b : stream.train) experts_[static_cast<std::size_t>(b->truth_task)].train(b);

  auto fill = [&](const BatchPtr& b) {
    if (table_.count(b->uid)) return;
    std::vector<double> row(experts_.size());
    for (std::size_t e = 0; e < experts_.size(); ++e) row[e] = experts_[e].autoencoding_loss(*b, noise_);
    table_.emplace(b->uid, std::move(row));
  };
  for (const auto& b : stream.train) fill(b);
  for (const auto& b : stream.test) fill(b);
}

double ControlledSetting::loss(ExpertId e, const Batch& batch) const {
  auto it = table_.find(batch.uid);
  if (it != table_.end()) return it->second.at(static_cast<std::size_t>(e));
  return experts_.at(static_cast<std::size_t>(e)).autoencoding_loss(batch, noise_);
}

ExpertTree ControlledSetting::build_tree(const std::vector<ExpertId>& order, double path_threshold) const {
  ExpertTree tree;
  auto replay_probes = [this](ExpertId masked) {
    std::vector<LossProbe> out;
    for (const auto& b : experts_.at(static_cast<std::size_t>(masked)).replay().items())
      out.push_back([this, b](ExpertId e) { return loss(e, *b); });
    return out;
  };
  for (ExpertId e : order) {
    PathTally tally;
    if (tree.expert_count() > 0) {
      for (const auto& b : task_batches_.at(static_cast<std::size_t>(e))) {
        const RouteResult r = hge_forward(tree, [&](ExpertId x) { return loss(x, *b); });
        tally.add(r.path);
      }
    }
    promote_into_tree(tree, e, tally.paths(), path_threshold, replay_probes);
  }
  return tree;
}

GateMetrics ControlledSetting::evaluate(const ExpertTree& tree) const {
  AssociationMap assoc;
  for (int k = 0; k < size(); ++k) assoc[k] = {k};
  return gating_metrics([&](const Batch& b) { return hge_forward(tree, [&](ExpertId x) { return loss(x, b); }); },
                        [&](ExpertId e, const Batch& b) { return experts_.at(static_cast<std::size_t>(e)).predict(b); },
                        stream_.test, assoc);
}

double ControlledSetting::oracle_accuracy() const {
  long correct = 0, samples = 0;
  for (const auto& b : stream_.test) {
    const auto pred = experts_.at(static_cast<std::size_t>(b->truth_task)).predict(*b);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b->labels[i] ? 1 : 0;
    samples += static_cast<long>(pred.size());
  }
  return samples ? 100.0 * static_cast<double>(correct) / static_cast<double>(samples) : 0.0;
}

UpperResult ControlledSetting::upper_search(int trials, double tolerance, double path_threshold,
                                            std::uint64_t seed) const {
  if (trials < 1) throw ConfigError("upper_search: trials must be at least 1");
  UpperResult u;
  std::vector<ExpertId> identity(static_cast<std::size_t>(size()));
  std::iota(identity.begin(), identity.end(), 0);
  const ExpertTree flat = ExpertTree::flat(identity);
  u.flat = evaluate(flat);
  for (int t = 0; t < trials; ++t) {
    std::vector<ExpertId> order = identity;
    if (t > 0) {
      Rng rng(mix_seed(seed, 0x7570706572ULL, static_cast<std::uint64_t>(t)));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    ExpertTree tree = build_tree(order, path_threshold);
    const GateMetrics m = evaluate(tree);
    if (t == 0) u.hge = m;
    u.accuracy.push_back(m.gate_accuracy);
    u.cost.push_back(m.avg_experts_queried);
    const bool admissible = m.gate_accuracy >= u.flat.gate_accuracy - tolerance;
    if (admissible && (u.chosen_trial < 0 || m.avg_experts_queried < u.cost[static_cast<std::size_t>(u.chosen_trial)])) {
      u.chosen_trial = t;
      u.tree = tree;
      u.metrics = m;
    }
  }
  if (u.chosen_trial < 0 || u.flat.avg_experts_queried < u.metrics.avg_experts_queried) {
    u.chosen_trial = -1;
    u.tree = flat;
    u.metrics = u.flat;
  }
  u.accuracy_summary = stats::summarize(u.accuracy);
  u.cost_summary = stats::summarize(u.cost);
  if (trials >= 2) {
    u.pearson = stats::pearson(u.accuracy, u.cost);
    u.spearman = stats::spearman(u.accuracy, u.cost);
  } else {
    u.pearson = u.spearman = std::numeric_limits<double>::quiet_NaN();
  }
  return u;
}

// ---------------------------------------------------------------------------

namespace {

int domain_of_task(const StreamConfig& s, int task) {
  return s.kind == ScenarioKind::AlternatingDomains ? task % 2 : task;
}

void separate_errors(RunReport& r) {
  r.errors.creations.assign(static_cast<std::size_t>(r.tasks), 1);
  r.errors.fp.assign(static_cast<std::size_t>(r.tasks), 0);
  r.errors.fn.assign(static_cast<std::size_t>(r.tasks), 0);
}

}  // namespace

RunReport run_once(const RunConfig& base, std::uint64_t seed) {
  RunConfig cfg = base;
  cfg.stream.seed = seed;
  if (cfg.stream.kind == ScenarioKind::Custom && !cfg.stream.dataset) {
    if (cfg.dataset_path.empty()) throw ConfigError("stream.dataset_path is required for the custom scenario");
    cfg.stream.dataset = std::make_shared<const Dataset>(load_external(cfg.dataset_path, parse_format(cfg.dataset_format)));
  }
  cfg.validate();
  const Stream stream = make_stream(cfg.stream);
  cfg.controller.model.input_dim = stream.input_dim;
  cfg.controller.model.classes = stream.output_classes;

  RunReport r;
  r.scenario = cfg.scenario;
  r.method = cfg.method;
  r.seed = seed;
  r.tasks = stream.tasks;
  r.stream_checksum = checksum_hex(checksum(stream));
  const std::uint64_t mseed = model_seed(seed);

  if (cfg.method == Method::Separate || cfg.method == Method::Upper) {
    ControlledSetting cs(stream, cfg.controller, mseed);
    separate_errors(r);
    r.expert_count = cs.size();
    r.steps = static_cast<long>(stream.train.size());
    for (int k = 0; k < cs.size(); ++k) r.domains[k] = domain_of_task(cfg.stream, k);
    if (cfg.method == Method::Separate) {
      std::vector<ExpertId> ids(static_cast<std::size_t>(cs.size()));
      std::iota(ids.begin(), ids.end(), 0);
      r.tree = ExpertTree::flat(ids);
      r.gate = cs.evaluate(r.tree);
      r.gate.test_accuracy = cs.oracle_accuracy();
    } else {
      UpperResult u = cs.upper_search(cfg.harness.upper_trials, cfg.harness.upper_tolerance,
                                      cfg.controller.hge.path_threshold, mseed);
      r.tree = u.tree;
      r.gate = u.metrics;
      r.upper = std::move(u);
    }
    return r;
  }

  ControllerConfig cc = cfg.controller;
  cc.ge.review = cfg.method != Method::GeNoReview;
  cc.routing = cfg.method == Method::Hge ? RoutingMode::Tree : RoutingMode::Flat;
  Controller ctl(cc, mseed);

  std::vector<int> creations(static_cast<std::size_t>(stream.tasks), 0);
  if (!stream.train.empty()) ++creations[static_cast<std::size_t>(stream.train.front()->truth_task)];
  for (const auto& b : stream.train) {
    StepTrace t = ctl.step(b, cfg.harness.lr_scale(ctl.steps()));
    const bool created = t.created.has_value();
    r.trace.push_back(std::move(t));
    if (created && ++creations[static_cast<std::size_t>(b->truth_task)] > cfg.harness.dnf_limit) break;
  }
  r.steps = ctl.steps();
  r.errors = count_switch_errors(r.trace, stream.tasks, cfg.harness.dnf_limit);
  const AssociationMap assoc = associate(r.trace, stream.tasks, cfg.harness.association_fraction);
  r.gate = gating_metrics([&](const Batch& b) { return ctl.route(b); },
                          [&](ExpertId e, const Batch& b) { return ctl.expert(e).predict(b); }, stream.test, assoc);
  r.expert_count = static_cast<int>(ctl.experts().size());
  r.tree = ctl.tree();
  for (const auto& [e, tasks] : assoc)
    if (!tasks.empty()) r.domains[e] = domain_of_task(cfg.stream, *tasks.begin());
  return r;
}

std::vector<RunReport> run_suite(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds, int jobs) {
  std::vector<RunReport> out(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        out[i] = run_once(cfg, seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(seeds.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string fixed(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

template <class T>
std::string joined(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(v[i]);
  }
  return s;
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json summary_json(const stats::Summary& s) {
  return {{"mean", number_or_null(s.mean)},
          {"std", number_or_null(s.std)},
          {"median", number_or_null(s.median)},
          {"iqr", number_or_null(s.iqr)},
          {"mad", number_or_null(s.mad)}};
}

}  // namespace

std::string report_csv(const std::vector<RunReport>& reports) {
  std::ostringstream os;
  os << "scenario,method,seed,tasks,experts,creations,fp,fn,dnf,gate_accuracy,avg_experts_queried,test_accuracy,"
        "tree_nodes,steps,stream_checksum\n";
  for (const auto& r : reports) {
    os << r.scenario << ',' << to_string(r.method) << ',' << r.seed << ',' << r.tasks << ',' << r.expert_count << ','
       << joined(r.errors.creations) << ',' << r.errors.fp_total << ',' << r.errors.fn_total << ','
       << (r.errors.dnf ? 1 : 0) << ',' << fixed(r.gate.gate_accuracy) << ',' << fixed(r.gate.avg_experts_queried)
       << ',' << fixed(r.gate.test_accuracy) << ',' << r.tree.size() << ',' << r.steps << ',' << r.stream_checksum
       << '\n';
  }
  return os.str();
}

std::string report_json(const RunReport& r) {
  nlohmann::json j;
  j["scenario"] = r.scenario;
  j["method"] = to_string(r.method);
  j["seed"] = r.seed;
  j["tasks"] = r.tasks;
  j["experts"] = r.expert_count;
  j["creations"] = r.errors.creations;
  j["fp"] = r.errors.fp;
  j["fn"] = r.errors.fn;
  j["fp_total"] = r.errors.fp_total;
  j["fn_total"] = r.errors.fn_total;
  j["dnf"] = r.errors.dnf;
  j["gate_accuracy"] = r.gate.gate_accuracy;
  j["avg_experts_queried"] = r.gate.avg_experts_queried;
  j["test_accuracy"] = r.gate.test_accuracy;
  j["steps"] = r.steps;
  j["tree_nodes"] = r.tree.size();
  j["stream_checksum"] = r.stream_checksum;
  if (r.upper) {
    const auto& u = *r.upper;
    j["upper"] = {{"trials", u.accuracy.size()},
                  {"chosen_trial", u.chosen_trial},
                  {"flat", {{"gate_accuracy", u.flat.gate_accuracy}, {"avg_experts_queried", u.flat.avg_experts_queried}}},
                  {"hge", {{"gate_accuracy", u.hge.gate_accuracy}, {"avg_experts_queried", u.hge.avg_experts_queried}}},
                  {"accuracy", summary_json(u.accuracy_summary)},
                  {"cost", summary_json(u.cost_summary)},
                  {"pearson", number_or_null(u.pearson)},
                  {"spearman", number_or_null(u.spearman)}};
  }
  return j.dump(2) + "\n";
}

std::string aggregate_json(const std::vector<RunReport>& reports) {
  nlohmann::json j;
  if (reports.empty()) return "{}\n";
  j["scenario"] = reports.front().scenario;
  j["method"] = to_string(reports.front().method);
  std::vector<std::uint64_t> seeds;
  std::vector<double> gate, cost, acc, fp, fn, experts;
  int dnf = 0, clean = 0;
  for (const auto& r : reports) {
    seeds.push_back(r.seed);
    gate.push_back(r.gate.gate_accuracy);
    cost.push_back(r.gate.avg_experts_queried);
    acc.push_back(r.gate.test_accuracy);
    fp.push_back(r.errors.fp_total);
    fn.push_back(r.errors.fn_total);
    experts.push_back(r.expert_count);
    dnf += r.errors.dnf ? 1 : 0;
    clean += (r.errors.fp_total == 0 && r.errors.fn_total == 0) ? 1 : 0;
  }
  j["seeds"] = seeds;
  auto ms = [](const std::vector<double>& v) {
    return nlohmann::json{{"mean", stats::mean(v)}, {"std", stats::stddev(v)}};
  };
  j["gate_accuracy"] = ms(gate);
  j["avg_experts_queried"] = ms(cost);
  j["test_accuracy"] = ms(acc);
  j["fp"] = ms(fp);
  j["fn"] = ms(fn);
  j["experts"] = ms(experts);
  j["dnf_runs"] = dnf;
  j["error_free_runs"] = clean;
  return j.dump(2) + "\n";
}

}  // namespace hge
