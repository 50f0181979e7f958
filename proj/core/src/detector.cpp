#include "hge/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "hge/errors.hpp"

namespace hge {

ReviewVerdict z_review(std::span<const double> replay_losses, std::span<const double> high_losses,
                       double epsilon_review) {
  ReviewVerdict v;
  if (replay_losses.size() < 2 || high_losses.empty()) {
    v.z_score = std::numeric_limits<double>::infinity();
    v.standard_error = 0.0;
    v.is_new_task = true;
    return v;
  }
  for (double l : replay_losses)
    if (!std::isfinite(l)) throw NumericError("z_review: non-finite replay loss");
  for (double l : high_losses)
    if (!std::isfinite(l)) throw NumericError("z_review: non-finite high loss");

  const double n = static_cast<double>(replay_losses.size());
  double mu1 = 0.0;
  for (double l : replay_losses) mu1 += l;
  mu1 /= n;
  double var = 0.0;
  for (double l : replay_losses) var += (l - mu1) * (l - mu1);
  var /= n;
  const double sigma = std::max(std::sqrt(var), kSigmaFloor);

  double mu2 = 0.0;
  for (double l : high_losses) mu2 += l;
  mu2 /= static_cast<double>(high_losses.size());

  v.standard_error = sigma / std::sqrt(n);
  v.z_score = std::abs(mu2 - mu1) / v.standard_error;
  v.is_new_task = v.z_score > epsilon_review;
  return v;
}

RecentBuffer::RecentBuffer(int capacity) : capacity_(capacity) {
  if (capacity < 2) throw ConfigError("high-loss buffer capacity must be at least 2");
}

void RecentBuffer::push(RecentEntry entry) {
  if (full()) throw std::logic_error("RecentBuffer::push on a full buffer");
  entries_.push_back(std::move(entry));
}

RecentEntry RecentBuffer::pop_oldest() {
  if (entries_.empty()) throw std::logic_error("RecentBuffer::pop_oldest on an empty buffer");
  RecentEntry e = std::move(entries_.front());
  entries_.pop_front();
  return e;
}

bool RecentBuffer::all_high_loss() const {
  return std::all_of(entries_.begin(), entries_.end(), [](const RecentEntry& e) { return e.high_loss; });
}

const char* to_string(Episode e) {
  switch (e) {
    case Episode::Outlier:
      return "outlier";
    case Episode::NewTask:
      return "new_task";
    case Episode::Instability:
      return "instability";
  }
  return "?";
}

EpisodeResult classify_high_loss_episode(const RecentBuffer& buffer, const Expert& candidate, double epsilon_review) {
  if (buffer.empty()) throw std::logic_error("classify_high_loss_episode: empty buffer");
  EpisodeResult r;
  if (!buffer.all_high_loss()) {
    r.kind = Episode::Outlier;
    return r;
  }
  std::vector<double> replay;
  for (const auto& b : candidate.replay().items()) replay.push_back(candidate.classifier_loss(*b));
  std::vector<double> high;
  for (const auto& e : buffer.entries()) high.push_back(candidate.classifier_loss(*e.batch));
  r.verdict = z_review(replay, high, epsilon_review);
  r.kind = r.verdict->is_new_task ? Episode::NewTask : Episode::Instability;
  return r;
}

}  // namespace hge
