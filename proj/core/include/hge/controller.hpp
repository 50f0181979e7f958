#pragma once

// The online controller. With flat routing it is the Gated Experts loop: route
// to the lowest-autoencoding-loss expert, quarantine batches above that
// expert's loss bound, hand them to a newly created expert if one accepts them,
// replay isolated outliers, and review sustained high loss before creating an
// expert. With tree routing the same loop routes through an ExpertTree and
// inserts promoted experts by their traversal paths.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hge/batch.hpp"
#include "hge/detector.hpp"
#include "hge/expert.hpp"
#include "hge/tree.hpp"

namespace hge {

struct GeConfig {
  double alpha = 0.9;
  double epsilon = 4.0;
  double epsilon_review = 20.0;
  int promotion_window = 50;
  double epsilon_promotion = 0.5;
  int hl_capacity = 20;
  int replay_capacity = 10;
  bool fast_path = false;
  bool review = true;          // false: every sustained high-loss run creates an expert
  int new_expert_epochs = 3;   // passes over the buffer when creating an expert
  int warmup = 5;

  void validate() const;
};

struct ModelConfig {
  int input_dim = 32;
  int classes = 2;
  std::vector<int> classifier_hidden{64, 64};
  int ae_hidden = 64;
  int latent = 8;
  nn::OptimizerConfig classifier_optimizer = nn::OptimizerConfig::sgd();
  nn::OptimizerConfig ae_optimizer = nn::OptimizerConfig::adam();
  bool sampled_routing_noise = true;

  void validate() const;
};

ExpertConfig make_expert_config(const ModelConfig& model, const GeConfig& ge);

enum class RoutingMode { Flat, Tree };

struct HgeConfig {
  double path_threshold = 0.98;
  double epsilon_promotion = 0.98;  // replaces ge.epsilon_promotion under tree routing
  bool pin_to_root = false;  // degenerate mode: every insertion under the root
};

struct ControllerConfig {
  GeConfig ge;
  ModelConfig model;
  RoutingMode routing = RoutingMode::Flat;
  HgeConfig hge;
};

/// A batch trained outside the main routing decision.
struct TrainEvent {
  long batch_step = 0;
  ExpertId expert = -1;
  std::string reason;  // "outlier", "new_expert", "instability"

  bool operator==(const TrainEvent&) const = default;
};

struct StepTrace {
  long step = 0;
  int truth_task = -1;
  ExpertId routed_to = -1;
  std::optional<ExpertId> trained_on;
  bool high_loss = false;
  std::optional<ExpertId> created;
  std::optional<ExpertId> promoted;
  double classifier_loss = 0.0;
  double threshold = 0.0;
  int experts_queried = 0;
  std::optional<Episode> episode;
  std::optional<double> z_score;
  std::vector<TrainEvent> replays;

  bool operator==(const StepTrace&) const = default;
};

class Controller {
 public:
  Controller(const ControllerConfig& config, std::uint64_t model_seed);

  /// One full iteration over an incoming batch. lr_scale multiplies the
  /// classifier learning rate of the main-branch training step (instability
  /// injection).
  StepTrace step(const BatchPtr& batch, double lr_scale = 1.0);

  /// Expert with the lowest autoencoding loss among promoted experts: a full
  /// sweep (ties to the lowest id) in flat mode, tree descent in tree mode.
  RouteResult route(const Batch& batch) const;
  ExpertId forward(const Batch& batch) const { return route(batch).expert; }

  /// Pops the oldest buffered entry when the buffer is full; a high-loss entry
  /// is trained on the expert that trained the entry before it.
  void process_oldest(StepTrace& trace);

  /// When every buffered entry is high-loss: review against the best expert for
  /// the oldest entry, then create a new expert or retrain that expert on the
  /// buffer. The buffer is cleared either way.
  void detect_and_expand(StepTrace& trace);

  const Expert& expert(ExpertId id) const { return experts_.at(static_cast<std::size_t>(id)); }
  Expert& expert(ExpertId id) { return experts_.at(static_cast<std::size_t>(id)); }
  const std::vector<Expert>& experts() const { return experts_; }
  const std::vector<ExpertId>& promoted() const { return promoted_; }
  const std::vector<ExpertId>& fresh() const { return fresh_; }
  const ExpertTree& tree() const { return tree_; }
  const RecentBuffer& recent() const { return recent_; }
  const PathTally& path_tally(ExpertId id) const;
  const NoiseSource& noise() const { return noise_; }
  const ControllerConfig& config() const { return config_; }
  std::optional<ExpertId> last_used() const { return last_used_; }
  long steps() const { return steps_; }

  /// Test hook: lets fixtures place a batch in the buffer without routing it.
  void push_recent(RecentEntry entry) { recent_.push(std::move(entry)); }
  void set_previous_trainer(std::optional<ExpertId> id) { previous_trainer_ = id; }

 private:
  ExpertId create_expert();
  void promote(ExpertId id);
  void tally(ExpertId id, const std::vector<NodeId>& path);

  ControllerConfig config_;
  ExpertConfig expert_config_;
  std::uint64_t model_seed_;
  NoiseSource noise_;
  std::vector<Expert> experts_;
  std::vector<ExpertId> promoted_;
  std::vector<ExpertId> fresh_;
  ExpertTree tree_;
  std::map<ExpertId, PathTally> tallies_;
  RecentBuffer recent_;
  std::optional<ExpertId> last_used_;
  std::optional<ExpertId> previous_trainer_;
  long steps_ = 0;
};

}  // namespace hge
