#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <limits>
#include <vector>

#include "hge/batch.hpp"
#include "hge/nn.hpp"
#include "hge/random.hpp"

namespace hge {

/// EWMA of an expert's training loss and of its absolute deviation.
///
///   mu_1 = L_1,  mu_n = a mu_{n-1} + (1-a) L_n
///   s_1 = 0,     s_2 = |L_2 - L_1|,  s_n = a s_{n-1} + (1-a) |L_n - mu_{n-1}|
///
/// The deviation is taken in absolute value so s stays non-negative and
/// mu + eps * s remains an upper bound.
class LossStats {
 public:
  LossStats() = default;
  LossStats(double alpha, double epsilon, int warmup = 5);

  void update(double loss);

  /// mu + epsilon * sigma, or +inf until `warmup` losses have been absorbed.
  double threshold() const;

  double mu() const { return mu_; }
  double sigma() const { return sigma_; }
  long count() const { return count_; }
  double alpha() const { return alpha_; }
  double epsilon() const { return epsilon_; }
  int warmup() const { return warmup_; }

  /// Snapshot restore.
  void restore(double mu, double sigma, long count) {
    mu_ = mu;
    sigma_ = sigma;
    count_ = count;
  }

 private:
  double alpha_ = 0.9;
  double epsilon_ = 4.0;
  int warmup_ = 5;
  double mu_ = 0.0;
  double sigma_ = 0.0;
  long count_ = 0;
};

/// Reservoir sample of the batches an expert was trained on.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity = 10, std::uint64_t seed = 0);

  void offer(const BatchPtr& batch);

  const std::vector<BatchPtr>& items() const { return items_; }
  int capacity() const { return capacity_; }
  long seen() const { return seen_; }
  bool empty() const { return items_.empty(); }

  void restore(std::vector<BatchPtr> items, long seen, Rng rng);
  const Rng& rng() const { return rng_; }

 private:
  int capacity_;
  long seen_ = 0;
  std::vector<BatchPtr> items_;
  Rng rng_;
};

/// Sliding window of "new expert beat the incumbent" flags.
class PromotionWindow {
 public:
  explicit PromotionWindow(int capacity = 50) : capacity_(capacity) {}

  void push(bool lower);
  bool full() const { return static_cast<int>(flags_.size()) == capacity_; }
  int size() const { return static_cast<int>(flags_.size()); }
  int capacity() const { return capacity_; }
  int true_count() const;
  const std::deque<bool>& flags() const { return flags_; }

  /// True iff the window is full and the share of true flags is strictly above `fraction`.
  bool exceeds(double fraction) const;

 private:
  int capacity_;
  std::deque<bool> flags_;
};

enum class ExpertState { New, Promoted };

struct ExpertConfig {
  int input_dim = 32;
  int classes = 2;
  std::vector<int> classifier_hidden{64, 64};
  int ae_hidden = 64;
  int latent = 8;
  nn::OptimizerConfig classifier_optimizer = nn::OptimizerConfig::sgd();
  nn::OptimizerConfig ae_optimizer = nn::OptimizerConfig::adam();

  double alpha = 0.9;
  double epsilon = 4.0;
  int warmup = 5;
  int replay_capacity = 10;
  int promotion_window = 50;
  double epsilon_promotion = 0.5;

  nn::ClassifierShape classifier_shape() const { return {input_dim, classifier_hidden, classes}; }
  nn::VaeShape vae_shape() const { return {input_dim, ae_hidden, latent}; }
  void validate() const;
};

/// Where the reparameterization noise comes from when an expert is evaluated
/// (not trained). Keyed noise depends only on (seed, batch uid, expert id), so
/// a loss is the same whenever and however often it is computed.
class NoiseSource {
 public:
  static NoiseSource zero() { return NoiseSource(false, 0); }
  static NoiseSource keyed(std::uint64_t seed) { return NoiseSource(true, seed); }

  nn::Matrix draw(std::uint64_t batch_uid, ExpertId expert, int rows, int cols) const;
  bool sampled() const { return sampled_; }
  std::uint64_t seed() const { return seed_; }

 private:
  NoiseSource(bool sampled, std::uint64_t seed) : sampled_(sampled), seed_(seed) {}
  bool sampled_;
  std::uint64_t seed_;
};

struct ExpertLosses {
  double classifier = 0.0;
  double autoencoding = 0.0;
};

/// A classifier + variational autoencoder pair with its loss statistics,
/// replay buffer and promotion bookkeeping.
class Expert {
 public:
  Expert(ExpertId id, const ExpertConfig& config, std::uint64_t seed);

  ExpertId id() const { return id_; }
  ExpertState state() const { return state_; }
  const ExpertConfig& config() const { return config_; }

  double classifier_loss(const Batch& batch) const;
  double autoencoding_loss(const Batch& batch, const NoiseSource& noise) const;
  ExpertLosses losses(const Batch& batch, const NoiseSource& noise) const;
  std::vector<int> predict(const Batch& batch) const;

  /// Whether a classifier loss is acceptable for this expert. A New expert
  /// accepts everything until its promotion window has filled.
  bool accepts(double classifier_loss) const;
  double threshold() const { return stats_.threshold(); }

  /// One optimizer step on each network, stats update with the classifier
  /// loss, replay offer. lr_scale multiplies the classifier learning rate only.
  /// Returns the classifier loss observed before the step.
  /// Repeat passes over the same batch should pass offer_replay = false.
  double train(const BatchPtr& batch, double lr_scale = 1.0, bool offer_replay = true);

  /// Records a comparison flag; returns true iff promotion conditions now hold.
  /// Throws std::logic_error on a Promoted expert.
  bool promotion_check(bool new_loss_lower);
  void promote();

  const LossStats& stats() const { return stats_; }
  const ReplayBuffer& replay() const { return replay_; }
  const PromotionWindow& promotion_history() const { return promotion_; }
  long trained_batch_count() const { return trained_batches_; }
  const nn::ParamStore& classifier() const { return classifier_; }
  const nn::ParamStore& autoencoder() const { return autoencoder_; }
  nn::ParamStore& classifier() { return classifier_; }
  nn::ParamStore& autoencoder() { return autoencoder_; }

  /// Binary snapshot, magic "GEXP1". Replay batches are stored inline.
  void save(std::ostream& out) const;
  static Expert load(std::istream& in);

 private:
  Expert() = default;

  ExpertId id_ = 0;
  ExpertConfig config_;
  nn::ParamStore classifier_;
  nn::ParamStore autoencoder_;
  LossStats stats_;
  ReplayBuffer replay_;
  ExpertState state_ = ExpertState::New;
  PromotionWindow promotion_;
  long trained_batches_ = 0;
  Rng noise_rng_;
};

}  // namespace hge
