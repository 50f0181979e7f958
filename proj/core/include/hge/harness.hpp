#pragma once

// Experiment protocols: online runs of the controllers, the controlled setting
// with one pre-trained expert per task, randomized-order tree search, and
// report emission.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hge/controller.hpp"
#include "hge/metrics.hpp"
#include "hge/stats.hpp"
#include "hge/streams.hpp"

namespace hge {

enum class Method { Separate, Ge, GeNoReview, Hge, Upper };

const char* to_string(Method m);
Method parse_method(const std::string& name);

struct HarnessConfig {
  int upper_trials = 200;
  double upper_tolerance = 0.5;  // accuracy points below flat an Upper tree may lose
  double association_fraction = 0.1;
  int dnf_limit = 5;
  int lr_spike_every = 0;        // 0 disables instability injection
  double lr_spike_factor = 50.0;
  int lr_spike_offset = 100;

  void validate() const;
  /// Learning-rate multiplier for the step with this index.
  double lr_scale(long step) const;
};

struct RunConfig {
  std::string scenario = "split10";
  Method method = Method::Ge;
  StreamConfig stream;
  ControllerConfig controller;
  HarnessConfig harness;
  std::string dataset_path;  // custom scenario source, loaded per run
  std::string dataset_format = "csv";

  void validate() const;
};

/// Named scenario presets: split10, split5, permuted, inverse,
/// alternating-domains, instability, custom. Resets stream and harness
/// fields the preset owns.
void apply_scenario(const std::string& name, RunConfig& cfg);
std::vector<std::string> scenario_names();

/// Seeds used by a run: the stream is generated from `seed`, models from this.
std::uint64_t model_seed(std::uint64_t seed);

struct UpperResult {
  ExpertTree tree;
  GateMetrics metrics;
  int chosen_trial = -1;  // -1: no trial admissible, flat tree returned
  std::vector<double> accuracy;
  std::vector<double> cost;
  GateMetrics flat;
  GateMetrics hge;         // trial 0, the identity insertion order
  double pearson = 0.0;
  double spearman = 0.0;
  stats::Summary accuracy_summary;
  stats::Summary cost_summary;
};

/// One expert per task trained only on that task's batches, with every
/// autoencoding loss the tree experiments need precomputed.
class ControlledSetting {
 public:
  ControlledSetting(const Stream& stream, const ControllerConfig& config, std::uint64_t model_seed);

  const std::vector<Expert>& experts() const { return experts_; }
  int size() const { return static_cast<int>(experts_.size()); }
  const NoiseSource& noise() const { return noise_; }

  double loss(ExpertId e, const Batch& batch) const;

  /// Inserts experts in `order`, each with the traversal paths of its task's
  /// training batches through the tree built so far.
  ExpertTree build_tree(const std::vector<ExpertId>& order, double path_threshold) const;

  /// Gate accuracy (expert k serves task k), cost and test accuracy over the test stream.
  GateMetrics evaluate(const ExpertTree& tree) const;
  /// Test accuracy with ground-truth routing.
  double oracle_accuracy() const;

  UpperResult upper_search(int trials, double tolerance, double path_threshold, std::uint64_t seed) const;

 private:
  const Stream& stream_;
  NoiseSource noise_;
  std::vector<Expert> experts_;
  std::vector<std::vector<BatchPtr>> task_batches_;
  std::unordered_map<std::uint64_t, std::vector<double>> table_;
};

struct RunReport {
  std::string scenario;
  Method method = Method::Ge;
  std::uint64_t seed = 0;
  int tasks = 0;
  SwitchErrors errors;
  int expert_count = 0;
  GateMetrics gate;
  long steps = 0;
  std::string stream_checksum;
  ExpertTree tree;
  std::map<ExpertId, int> domains;
  std::vector<StepTrace> trace;
  std::optional<UpperResult> upper;
};

RunReport run_once(const RunConfig& cfg, std::uint64_t seed);

/// Seeds run on up to `jobs` threads; results come back in seed order.
std::vector<RunReport> run_suite(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds, int jobs);

std::string report_csv(const std::vector<RunReport>& reports);
std::string report_json(const RunReport& report);
std::string aggregate_json(const std::vector<RunReport>& reports);

}  // namespace hge
