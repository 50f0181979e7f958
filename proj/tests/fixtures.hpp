#pragma once

#include <memory>
#include <vector>

#include "hge/batch.hpp"
#include "hge/controller.hpp"
#include "hge/expert.hpp"
#include "hge/streams.hpp"

namespace fixtures {

inline hge::BatchPtr batch(hge::nn::Matrix x, std::vector<int> y, int task = 0, std::uint64_t uid = 0) {
  auto b = std::make_shared<hge::Batch>();
  b->inputs = std::move(x);
  b->labels = std::move(y);
  b->truth_task = task;
  b->uid = uid;
  return b;
}

inline hge::StreamConfig split(int tasks, int batches_per_task = 150, std::uint64_t seed = 1) {
  hge::StreamConfig c;
  c.kind = hge::ScenarioKind::Split;
  c.tasks = tasks;
  c.batches_per_task = batches_per_task;
  c.seed = seed;
  return c;
}

inline hge::ControllerConfig controller(const hge::Stream& s, hge::RoutingMode routing = hge::RoutingMode::Flat) {
  hge::ControllerConfig c;
  c.model.input_dim = s.input_dim;
  c.model.classes = s.output_classes;
  c.routing = routing;
  return c;
}

inline hge::ExpertConfig expert_config(int input_dim, int classes) {
  hge::ExpertConfig c;
  c.input_dim = input_dim;
  c.classes = classes;
  return c;
}

}  // namespace fixtures
