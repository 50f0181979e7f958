#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "hge/nn.hpp"

namespace hge {

using ExpertId = int;

/// The atomic stream unit. truth_task is ground truth for the harness only;
/// controllers never read it when making decisions.
struct Batch {
  nn::Matrix inputs;
  std::vector<int> labels;
  int truth_task = -1;
  std::uint64_t uid = 0;

  int size() const { return static_cast<int>(labels.size()); }
};

/// Streams are immutable once built, so batches are shared rather than copied
/// into replay and recent buffers.
using BatchPtr = std::shared_ptr<const Batch>;

}  // namespace hge
