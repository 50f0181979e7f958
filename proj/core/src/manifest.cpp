#include "hge/manifest.hpp"

#include <set>

#include <nlohmann/json.hpp>

namespace hge {

using nlohmann::json;

std::vector<std::uint64_t> Manifest::seed_list() const {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < seeds; ++i) out.push_back(seed + static_cast<std::uint64_t>(i));
  return out;
}

namespace {

std::string join(const std::string& prefix, const std::string& key) { return prefix.empty() ? key : prefix + "." + key; }

/// Reads keys out of one JSON object, remembering which were consumed so the
/// rest can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ManifestError(path_.empty() ? "manifest" : path_, "expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ManifestError(join(path_, key), "wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  std::optional<Section> child(const char* key) {
    known_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), join(path_, key));
  }

  void reject_unknown() const {
    for (const auto& item : j_.items())
      if (!known_.count(item.key())) throw ManifestError(join(path_, item.key()), "unknown key");
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

std::string kind_name(nn::OptimizerKind k) { return k == nn::OptimizerKind::Adam ? "adam" : "sgd"; }

void read_optimizer(Section& s, nn::OptimizerConfig& o) {
  std::string kind = kind_name(o.kind);
  s.read("kind", kind);
  if (kind == "sgd")
    o.kind = nn::OptimizerKind::Sgd;
  else if (kind == "adam")
    o.kind = nn::OptimizerKind::Adam;
  else
    throw ManifestError(join(s.path(), "kind"), "expected sgd or adam");
  s.read("learning_rate", o.learning_rate);
  s.read("momentum", o.momentum);
  s.read("weight_decay", o.weight_decay);
  s.read("beta1", o.beta1);
  s.read("beta2", o.beta2);
  s.read("epsilon", o.adam_epsilon);
  s.reject_unknown();
}

json optimizer_json(const nn::OptimizerConfig& o) {
  return {{"kind", kind_name(o.kind)}, {"learning_rate", o.learning_rate}, {"momentum", o.momentum},
          {"weight_decay", o.weight_decay}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"epsilon", o.adam_epsilon}};
}

// Maps a ConfigError message "section.key must ..." onto the key it names.
[[noreturn]] void rethrow_with_key(const ConfigError& e) {
  const std::string msg = e.what();
  const auto space = msg.find(' ');
  const std::string key = msg.substr(0, space);
  if (key.find('.') != std::string::npos) throw ManifestError(key, msg.substr(space + 1));
  throw ManifestError("manifest", msg);
}

}  // namespace

Manifest parse_manifest(const std::string& text, const ManifestOverrides& ov) {
  json j;
  try {
    j = text.empty() ? json::object() : json::parse(text);
  } catch (const json::parse_error& e) {
    throw ManifestError("manifest", std::string("malformed JSON at byte ") + std::to_string(e.byte));
  }
  Section top(j, "");

  Manifest m;
  std::optional<std::string> scenario = ov.scenario;
  std::optional<std::string> method = ov.method;
  {
    std::string s;
    top.read("scenario", s);
    if (!scenario && top.has("scenario")) scenario = s;
    std::string me;
    top.read("method", me);
    if (!method && top.has("method")) method = me;
  }
  if (!scenario) throw ManifestError("scenario", "required (no default)");
  if (!method) throw ManifestError("method", "required (no default)");

  top.read("seed", m.seed);
  top.read("seeds", m.seeds);
  top.read("jobs", m.jobs);
  top.read("out", m.out);
  top.read("trace", m.trace);
  top.read("fail_on_dnf", m.fail_on_dnf);
  if (ov.seed) m.seed = *ov.seed;
  if (ov.seeds) m.seeds = *ov.seeds;
  if (ov.jobs) m.jobs = *ov.jobs;
  if (ov.out) m.out = *ov.out;
  if (ov.trace) m.trace = *ov.trace;
  if (ov.fail_on_dnf) m.fail_on_dnf = *ov.fail_on_dnf;
  if (m.seeds < 1) throw ManifestError("seeds", "must be at least 1");
  if (m.jobs < 1) throw ManifestError("jobs", "must be at least 1");
  if (m.out.empty()) throw ManifestError("out", "must not be empty");

  RunConfig& rc = m.run;
  try {
    apply_scenario(*scenario, rc);
  } catch (const ConfigError& e) {
    throw ManifestError("scenario", e.what());
  }
  try {
    rc.method = parse_method(*method);
  } catch (const ConfigError& e) {
    throw ManifestError("method", e.what());
  }

  if (auto s = top.child("stream")) {
    std::string kind = to_string(rc.stream.kind);
    s->read("kind", kind);
    try {
      rc.stream.kind = parse_scenario_kind(kind);
    } catch (const ConfigError& e) {
      throw ManifestError("stream.kind", e.what());
    }
    s->read("tasks", rc.stream.tasks);
    s->read("classes_per_task", rc.stream.classes_per_task);
    s->read("input_dim", rc.stream.input_dim);
    s->read("batch_size", rc.stream.batch_size);
    s->read("batches_per_task", rc.stream.batches_per_task);
    s->read("test_batches_per_task", rc.stream.test_batches_per_task);
    s->read("boundary_constant", rc.stream.boundary_constant);
    s->read("sigma_cls", rc.stream.sigma_cls);
    s->read("class_spread", rc.stream.class_spread);
    s->read("task_order", rc.stream.task_order);
    s->read("dataset_path", rc.dataset_path);
    s->read("dataset_format", rc.dataset_format);
    s->reject_unknown();
  }
  if (auto s = top.child("model")) {
    auto& md = rc.controller.model;
    s->read("classifier_hidden", md.classifier_hidden);
    s->read("ae_hidden", md.ae_hidden);
    s->read("latent", md.latent);
    s->read("sampled_routing_noise", md.sampled_routing_noise);
    if (auto o = s->child("classifier_optimizer")) read_optimizer(*o, md.classifier_optimizer);
    if (auto o = s->child("ae_optimizer")) read_optimizer(*o, md.ae_optimizer);
    s->reject_unknown();
  }
  if (auto s = top.child("ge")) {
    auto& g = rc.controller.ge;
    s->read("alpha", g.alpha);
    s->read("epsilon", g.epsilon);
    s->read("epsilon_review", g.epsilon_review);
    s->read("promotion_window", g.promotion_window);
    s->read("epsilon_promotion", g.epsilon_promotion);
    s->read("hl_capacity", g.hl_capacity);
    s->read("replay_capacity", g.replay_capacity);
    s->read("fast_path", g.fast_path);
    s->read("new_expert_epochs", g.new_expert_epochs);
    s->read("warmup", g.warmup);
    s->reject_unknown();
  }
  if (auto s = top.child("hge")) {
    auto& h = rc.controller.hge;
    s->read("path_threshold", h.path_threshold);
    s->read("epsilon_promotion", h.epsilon_promotion);
    s->read("flat", h.pin_to_root);
    s->reject_unknown();
  }
  if (auto s = top.child("harness")) {
    auto& h = rc.harness;
    s->read("upper_trials", h.upper_trials);
    s->read("upper_tolerance", h.upper_tolerance);
    s->read("association_fraction", h.association_fraction);
    s->read("dnf_limit", h.dnf_limit);
    s->read("lr_spike_every", h.lr_spike_every);
    s->read("lr_spike_factor", h.lr_spike_factor);
    s->read("lr_spike_offset", h.lr_spike_offset);
    s->reject_unknown();
  }
  top.reject_unknown();

  try {
    if (rc.stream.kind == ScenarioKind::Custom && rc.dataset_path.empty())
      throw ConfigError("stream.dataset_path is required for the custom scenario");
    RunConfig checked = rc;
    // The dataset itself is only loaded when the run starts.
    if (checked.stream.kind == ScenarioKind::Custom) checked.stream.dataset = std::make_shared<const Dataset>();
    checked.validate();
    rc.controller.model.validate();
    if (!(rc.controller.hge.path_threshold > 0.0 && rc.controller.hge.path_threshold <= 1.0))
      throw ConfigError("hge.path_threshold must lie in (0, 1]");
    if (!(rc.controller.hge.epsilon_promotion > 0.0 && rc.controller.hge.epsilon_promotion < 1.0))
      throw ConfigError("hge.epsilon_promotion must lie in (0, 1)");
  } catch (const ManifestError&) {
    throw;
  } catch (const ConfigError& e) {
    rethrow_with_key(e);
  }
  return m;
}

std::string emit_manifest(const Manifest& m) {
  const RunConfig& rc = m.run;
  json j;
  j["scenario"] = rc.scenario;
  j["method"] = to_string(rc.method);
  j["seed"] = m.seed;
  j["seeds"] = m.seeds;
  j["jobs"] = m.jobs;
  j["out"] = m.out;
  j["trace"] = m.trace;
  j["fail_on_dnf"] = m.fail_on_dnf;
  const auto& s = rc.stream;
  j["stream"] = {{"kind", to_string(s.kind)},
                 {"tasks", s.tasks},
                 {"classes_per_task", s.classes_per_task},
                 {"input_dim", s.input_dim},
                 {"batch_size", s.batch_size},
                 {"batches_per_task", s.batches_per_task},
                 {"test_batches_per_task", s.test_batches_per_task},
                 {"boundary_constant", s.boundary_constant},
                 {"sigma_cls", s.sigma_cls},
                 {"class_spread", s.class_spread},
                 {"task_order", s.task_order},
                 {"dataset_path", rc.dataset_path},
                 {"dataset_format", rc.dataset_format}};
  const auto& md = rc.controller.model;
  j["model"] = {{"classifier_hidden", md.classifier_hidden},
                {"ae_hidden", md.ae_hidden},
                {"latent", md.latent},
                {"sampled_routing_noise", md.sampled_routing_noise},
                {"classifier_optimizer", optimizer_json(md.classifier_optimizer)},
                {"ae_optimizer", optimizer_json(md.ae_optimizer)}};
  const auto& g = rc.controller.ge;
  j["ge"] = {{"alpha", g.alpha},
             {"epsilon", g.epsilon},
             {"epsilon_review", g.epsilon_review},
             {"promotion_window", g.promotion_window},
             {"epsilon_promotion", g.epsilon_promotion},
             {"hl_capacity", g.hl_capacity},
             {"replay_capacity", g.replay_capacity},
             {"fast_path", g.fast_path},
             {"new_expert_epochs", g.new_expert_epochs},
             {"warmup", g.warmup}};
  const auto& h = rc.controller.hge;
  j["hge"] = {{"path_threshold", h.path_threshold}, {"epsilon_promotion", h.epsilon_promotion}, {"flat", h.pin_to_root}};
  const auto& hc = rc.harness;
  j["harness"] = {{"upper_trials", hc.upper_trials},
                  {"upper_tolerance", hc.upper_tolerance},
                  {"association_fraction", hc.association_fraction},
                  {"dnf_limit", hc.dnf_limit},
                  {"lr_spike_every", hc.lr_spike_every},
                  {"lr_spike_factor", hc.lr_spike_factor},
                  {"lr_spike_offset", hc.lr_spike_offset}};
  return j.dump(2) + "\n";
}

Manifest default_manifest(const std::string& scenario, const std::string& method) {
  ManifestOverrides ov;
  ov.scenario = scenario;
  ov.method = method;
  return parse_manifest("", ov);
}

}  // namespace hge
