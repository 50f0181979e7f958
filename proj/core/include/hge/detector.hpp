#pragma once

#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "hge/batch.hpp"
#include "hge/expert.hpp"
#include "hge/tree.hpp"

namespace hge {

/// Floor applied to the replay-loss standard deviation before dividing.
inline constexpr double kSigmaFloor = 1e-8;

struct ReviewVerdict {
  double z_score = 0.0;
  double standard_error = 0.0;
  bool is_new_task = false;
};

/// Z-test of high-loss losses against replay losses:
///   SE = sigma / sqrt(n),  ZS = |mean(high) - mean(replay)| / SE
/// with sigma the population standard deviation of the n replay losses.
/// Fewer than two replay losses cannot support the test; the verdict is then
/// a new task with an infinite score.
ReviewVerdict z_review(std::span<const double> replay_losses, std::span<const double> high_losses,
                       double epsilon_review);

struct RecentEntry {
  BatchPtr batch;
  long step = 0;
  bool high_loss = false;
  std::optional<ExpertId> trained_on;
  std::vector<NodeId> path;  // routing path, kept for tree insertion tallies
};

/// FIFO review window shared by outlier replay and switch detection.
class RecentBuffer {
 public:
  explicit RecentBuffer(int capacity = 20);

  void push(RecentEntry entry);
  RecentEntry pop_oldest();
  void clear() { entries_.clear(); }

  bool full() const { return static_cast<int>(entries_.size()) >= capacity_; }
  bool empty() const { return entries_.empty(); }
  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return capacity_; }
  bool all_high_loss() const;
  const std::deque<RecentEntry>& entries() const { return entries_; }

 private:
  int capacity_;
  std::deque<RecentEntry> entries_;
};

enum class Episode { Outlier, NewTask, Instability };

const char* to_string(Episode e);

struct EpisodeResult {
  Episode kind = Episode::Outlier;
  std::optional<ReviewVerdict> verdict;
};

/// Outlier while any buffered entry is not high-loss; otherwise a Z-review of
/// the candidate's current classifier losses on its replay batches against the
/// buffered batches decides NewTask vs Instability.
EpisodeResult classify_high_loss_episode(const RecentBuffer& buffer, const Expert& candidate, double epsilon_review);

}  // namespace hge
