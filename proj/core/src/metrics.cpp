#include "hge/metrics.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "hge/errors.hpp"

namespace hge {

SwitchErrors count_switch_errors(const std::vector<StepTrace>& trace, int tasks, int dnf_limit) {
  SwitchErrors e;
  e.creations.assign(static_cast<std::size_t>(tasks), 0);
  e.fp.assign(static_cast<std::size_t>(tasks), 0);
  e.fn.assign(static_cast<std::size_t>(tasks), 0);
  auto bump = [&](int task) {
    if (task < 0 || task >= tasks) throw InputError("count_switch_errors: truth task out of range");
    ++e.creations[static_cast<std::size_t>(task)];
  };
  if (!trace.empty()) bump(trace.front().truth_task);
  for (const auto& t : trace)
    if (t.created) bump(t.truth_task);

  std::set<int> seen;
  for (const auto& t : trace) seen.insert(t.truth_task);
  for (int k = 0; k < tasks; ++k) {
    const auto i = static_cast<std::size_t>(k);
    e.fp[i] = std::max(0, e.creations[i] - 1);
    e.fn[i] = (seen.count(k) && e.creations[i] == 0) ? 1 : 0;
    e.fp_total += e.fp[i];
    e.fn_total += e.fn[i];
    if (e.creations[i] > dnf_limit) e.dnf = true;
  }
  return e;
}

AssociationMap associate(const std::vector<StepTrace>& trace, int tasks, double fraction) {
  std::vector<long> per_task(static_cast<std::size_t>(tasks), 0);
  std::map<long, int> task_of_step;
  for (const auto& t : trace) {
    if (t.truth_task < 0 || t.truth_task >= tasks) throw InputError("associate: truth task out of range");
    ++per_task[static_cast<std::size_t>(t.truth_task)];
    task_of_step[t.step] = t.truth_task;
  }
  std::set<std::pair<ExpertId, long>> trained;  // (expert, step of the batch)
  for (const auto& t : trace) {
    if (t.trained_on) trained.emplace(*t.trained_on, t.step);
    for (const auto& r : t.replays) trained.emplace(r.expert, r.batch_step);
  }
  std::map<std::pair<ExpertId, int>, long> counts;
  for (const auto& [expert, step] : trained) {
    auto it = task_of_step.find(step);
    if (it != task_of_step.end()) ++counts[{expert, it->second}];
  }
  AssociationMap out;
  for (const auto& [key, n] : counts) {
    const long total = per_task[static_cast<std::size_t>(key.second)];
    if (total > 0 && static_cast<double>(n) >= fraction * static_cast<double>(total)) out[key.first].insert(key.second);
  }
  return out;
}

GateMetrics gating_metrics(const BatchRouter& route, const BatchPredictor& predict, const std::vector<BatchPtr>& test,
                           const AssociationMap& associations) {
  GateMetrics m;
  if (test.empty()) return m;
  long hits = 0, queried = 0, correct = 0, samples = 0;
  for (const auto& b : test) {
    const RouteResult r = route(*b);
    queried += r.experts_queried;
    auto it = associations.find(r.expert);
    if (it != associations.end() && it->second.count(b->truth_task)) ++hits;
    const auto pred = predict(r.expert, *b);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b->labels[i] ? 1 : 0;
    samples += static_cast<long>(pred.size());
  }
  const auto n = static_cast<double>(test.size());
  m.gate_accuracy = 100.0 * static_cast<double>(hits) / n;
  m.avg_experts_queried = static_cast<double>(queried) / n;
  m.test_accuracy = samples ? 100.0 * static_cast<double>(correct) / static_cast<double>(samples) : 0.0;
  return m;
}

namespace {

using nlohmann::json;

json opt_id(const std::optional<ExpertId>& v) { return v ? json(*v) : json(nullptr); }

std::optional<ExpertId> get_opt_id(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<ExpertId>();
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double get_double(const json& j, const char* key) {
  const auto& v = j.at(key);
  return v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
}

Episode parse_episode(const std::string& s) {
  for (auto e : {Episode::Outlier, Episode::NewTask, Episode::Instability})
    if (s == to_string(e)) return e;
  throw InputError("trace: unknown episode '" + s + "'");
}

}  // namespace

std::string trace_record(const StepTrace& t) {
  json j;
  j["step"] = t.step;
  j["truth_task"] = t.truth_task;
  j["routed_to"] = t.routed_to;
  j["trained_on"] = opt_id(t.trained_on);
  j["high_loss"] = t.high_loss;
  j["created"] = opt_id(t.created);
  j["promoted"] = opt_id(t.promoted);
  j["losses"] = {{"classifier", finite_or_null(t.classifier_loss)}, {"threshold", finite_or_null(t.threshold)}};
  j["experts_queried"] = t.experts_queried;
  j["episode"] = t.episode ? json(to_string(*t.episode)) : json(nullptr);
  j["z_score"] = t.z_score ? finite_or_null(*t.z_score) : json(nullptr);
  j["has_z"] = t.z_score.has_value();
  json replays = json::array();
  for (const auto& r : t.replays) replays.push_back({{"step", r.batch_step}, {"expert", r.expert}, {"reason", r.reason}});
  j["replays"] = std::move(replays);
  return j.dump();
}

void write_trace(std::ostream& out, const std::vector<StepTrace>& trace) {
  for (const auto& t : trace) out << trace_record(t) << '\n';
}

std::vector<StepTrace> read_trace(std::istream& in) {
  std::vector<StepTrace> out;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      StepTrace t;
      t.step = j.at("step").get<long>();
      t.truth_task = j.at("truth_task").get<int>();
      t.routed_to = j.at("routed_to").get<ExpertId>();
      t.trained_on = get_opt_id(j, "trained_on");
      t.high_loss = j.at("high_loss").get<bool>();
      t.created = get_opt_id(j, "created");
      t.promoted = get_opt_id(j, "promoted");
      t.classifier_loss = get_double(j.at("losses"), "classifier");
      t.threshold = get_double(j.at("losses"), "threshold");
      t.experts_queried = j.at("experts_queried").get<int>();
      if (!j.at("episode").is_null()) t.episode = parse_episode(j.at("episode").get<std::string>());
      if (j.at("has_z").get<bool>()) t.z_score = get_double(j, "z_score");
      for (const auto& r : j.at("replays"))
        t.replays.push_back(TrainEvent{r.at("step").get<long>(), r.at("expert").get<ExpertId>(),
                                       r.at("reason").get<std::string>()});
      out.push_back(std::move(t));
    } catch (const json::parse_error& e) {
      throw IngestionError(std::string("trace: ") + e.what(), line_start + e.byte);
    } catch (const json::exception& e) {
      throw IngestionError(std::string("trace: ") + e.what(), line_start);
    }
  }
  return out;
}

}  // namespace hge
