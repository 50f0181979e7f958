#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hge/batch.hpp"
#include "hge/ingest.hpp"

namespace hge {

enum class ScenarioKind { Split, Permuted, Inverse, AlternatingDomains, Custom };

const char* to_string(ScenarioKind k);
ScenarioKind parse_scenario_kind(const std::string& name);

struct StreamConfig {
  ScenarioKind kind = ScenarioKind::Split;
  int tasks = 10;
  int classes_per_task = 2;
  int input_dim = 32;
  int batch_size = 32;
  int batches_per_task = 150;
  int test_batches_per_task = 10;
  int boundary_constant = 20;  // minimum run length after a switch
  double sigma_cls = 0.05;
  /// 0: every class prototype drawn independently. Otherwise a task's class
  /// prototypes sit around a shared task center at roughly this pairwise
  /// distance, which keeps within-task classification from saturating.
  double class_spread = 0.0;
  std::uint64_t seed = 1;
  /// Order in which tasks are presented; repeats allowed. Empty: 0..tasks-1.
  std::vector<int> task_order;
  /// Source rows for ScenarioKind::Custom.
  std::shared_ptr<const Dataset> dataset;

  void validate() const;
  std::vector<int> order() const;
  /// Size of the label space the classifier must cover.
  int output_classes() const;
};

struct Stream {
  std::vector<BatchPtr> train;
  std::vector<BatchPtr> test;         // test_batches_per_task per task, task-major
  std::vector<long> segment_starts;   // index in `train` where each segment begins
  std::vector<int> segment_tasks;
  int tasks = 0;
  int output_classes = 0;
  int input_dim = 0;
};

/// Task-level generator. Everything is a pure function of the config and the
/// key passed in, so a batch can be regenerated in isolation.
class TaskGenerator {
 public:
  explicit TaskGenerator(const StreamConfig& cfg);

  /// Batch of `task` drawn from the sample key `uid`.
  Batch make_batch(int task, std::uint64_t uid) const;

  /// Labels of a task, ascending.
  std::vector<int> task_labels(int task) const;
  /// Column permutation applied by a permuted-scenario task (identity for task 0).
  const std::vector<int>& permutation(int task) const { return permutations_.at(static_cast<std::size_t>(task)); }
  /// Domain (0 or 1) of a task in the alternating-domains scenario; 0 otherwise.
  int domain(int task) const;
  const nn::Matrix& prototypes() const { return prototypes_; }

 private:
  Batch base_batch(int task, std::uint64_t uid) const;

  StreamConfig cfg_;
  nn::Matrix prototypes_;  // one row per class prototype
  std::vector<std::vector<int>> permutations_;
  std::vector<std::vector<int>> custom_rows_;  // per task, dataset rows of its classes
};

Stream make_stream(const StreamConfig& cfg);

/// Key of the index-th batch in a split (0 train, 1 test).
std::uint64_t batch_uid(std::uint64_t seed, int split, long index);

/// FNV-1a 64 over uids, tasks, labels and input bit patterns.
std::uint64_t checksum(const Stream& stream);
std::string checksum_hex(std::uint64_t value);

}  // namespace hge
