#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hge/batch.hpp"
#include "hge/controller.hpp"
#include "hge/tree.hpp"

namespace hge {

struct SwitchErrors {
  std::vector<int> creations;  // per task
  std::vector<int> fp;         // per task: creations beyond the first
  std::vector<int> fn;         // per task: 1 when the task never got an expert
  int fp_total = 0;
  int fn_total = 0;
  bool dnf = false;            // some task spawned more than dnf_limit experts
};

/// The initial expert counts as the creation for the first task presented.
/// Creations are attributed to the ground-truth task of the step that
/// triggered them; revisits that reuse an expert add nothing.
SwitchErrors count_switch_errors(const std::vector<StepTrace>& trace, int tasks, int dnf_limit = 5);

/// Expert id -> tasks it is associated with.
using AssociationMap = std::map<ExpertId, std::set<int>>;

/// An expert is associated with a task iff it trained on at least `fraction`
/// of that task's training batches (main-branch and replayed training alike,
/// each batch counted once per expert).
AssociationMap associate(const std::vector<StepTrace>& trace, int tasks, double fraction = 0.1);

struct GateMetrics {
  double gate_accuracy = 0.0;        // percent of test batches routed to an associated expert
  double avg_experts_queried = 0.0;
  double test_accuracy = 0.0;        // percent of test samples classified correctly
};

using BatchRouter = std::function<RouteResult(const Batch&)>;
using BatchPredictor = std::function<std::vector<int>(ExpertId, const Batch&)>;

GateMetrics gating_metrics(const BatchRouter& route, const BatchPredictor& predict, const std::vector<BatchPtr>& test,
                           const AssociationMap& associations);

/// Newline-delimited JSON, one record per step.
void write_trace(std::ostream& out, const std::vector<StepTrace>& trace);
std::vector<StepTrace> read_trace(std::istream& in);
std::string trace_record(const StepTrace& t);

}  // namespace hge
