#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fixtures.hpp"
#include "hge/controller.hpp"
#include "hge/errors.hpp"
#include "hge/harness.hpp"
#include "hge/metrics.hpp"

using namespace hge;

namespace {

std::vector<StepTrace> run(Controller& c, const std::vector<BatchPtr>& batches,
                           const std::function<double(long)>& lr = nullptr) {
  std::vector<StepTrace> out;
  for (std::size_t i = 0; i < batches.size(); ++i)
    out.push_back(c.step(batches[i], lr ? lr(static_cast<long>(i)) : 1.0));
  return out;
}

std::vector<long> creation_steps(const std::vector<StepTrace>& trace) {
  std::vector<long> out;
  for (const auto& t : trace)
    if (t.created) out.push_back(t.step);
  return out;
}

StreamConfig single_task(int batches) {
  StreamConfig c = fixtures::split(1, batches, 11);
  c.classes_per_task = 4;
  return c;
}

}  // namespace

TEST(Controller, StationaryStreamHasNoLateHighLoss) {
  const Stream s = make_stream(single_task(200));
  Controller c(fixtures::controller(s), 3);
  const auto trace = run(c, s.train);
  for (const auto& t : trace) {
    if (t.step < 20) continue;
    EXPECT_FALSE(t.high_loss) << t.step;
  }
  EXPECT_TRUE(creation_steps(trace).empty());
  EXPECT_EQ(c.experts().size(), 1u);
}

TEST(Controller, ScaledOutlierIsReplayedOnPreviousExpert) {
  const Stream s = make_stream(single_task(200));
  std::vector<BatchPtr> batches = s.train;
  auto outlier = std::make_shared<Batch>(*batches[120]);
  // A positive factor only widens a ReLU classifier's margins; flip the sign too.
  outlier->inputs *= -10.0;
  batches[120] = outlier;
  Controller c(fixtures::controller(s), 3);
  const auto trace = run(c, batches);
  int marks = 0;
  for (const auto& t : trace) marks += t.step >= 20 && t.high_loss ? 1 : 0;
  EXPECT_EQ(marks, 1);
  EXPECT_TRUE(trace[120].high_loss);
  EXPECT_TRUE(creation_steps(trace).empty());
  std::vector<TrainEvent> replays;
  for (const auto& t : trace)
    for (const auto& r : t.replays)
      if (r.batch_step == 120) replays.push_back(r);
  ASSERT_EQ(replays.size(), 1u);
  EXPECT_EQ(replays[0].reason, "outlier");
  EXPECT_EQ(replays[0].expert, *trace[119].trained_on);
}

TEST(Controller, SwitchCreatesOnceNearBoundary) {
  const Stream s = make_stream(fixtures::split(2, 150, 4));
  Controller c(fixtures::controller(s), 5);
  const auto trace = run(c, s.train);
  const auto created = creation_steps(trace);
  ASSERT_EQ(created.size(), 1u);
  const long boundary = s.segment_starts[1];
  EXPECT_GE(created[0], boundary);
  EXPECT_LE(created[0], boundary + c.config().ge.hl_capacity + 5);
}

TEST(Controller, TenTasksGiveTenExperts) {
  const Stream s = make_stream(fixtures::split(10));
  Controller c(fixtures::controller(s), model_seed(1));
  const auto trace = run(c, s.train);
  EXPECT_EQ(c.experts().size(), 10u);
  EXPECT_EQ(c.promoted().size(), 10u);
  const SwitchErrors e = count_switch_errors(trace, s.tasks);
  EXPECT_EQ(e.fp_total, 0);
  EXPECT_EQ(e.fn_total, 0);
}

TEST(Controller, RevisitReusesOriginalExpert) {
  StreamConfig cfg = fixtures::split(2, 150, 6);
  cfg.task_order = {0, 1, 0};
  const Stream s = make_stream(cfg);
  Controller c(fixtures::controller(s), 7);
  const auto trace = run(c, s.train);
  EXPECT_EQ(c.experts().size(), 2u);
  const long back = s.segment_starts[2];
  int on_first = 0, total = 0;
  for (long i = back + 30; i < static_cast<long>(trace.size()); ++i) {
    ++total;
    on_first += trace[static_cast<std::size_t>(i)].routed_to == 0 ? 1 : 0;
  }
  EXPECT_GE(on_first, total * 95 / 100);
}

TEST(Controller, NoReviewTurnsSpikesIntoFalsePositives) {
  StreamConfig cfg = fixtures::split(4, 150, 2);
  cfg.class_spread = 0.25;
  const Stream s = make_stream(cfg);
  HarnessConfig h;
  h.lr_spike_every = 150;
  const auto lr = [&](long step) { return h.lr_scale(step); };

  ControllerConfig no_review = fixtures::controller(s);
  no_review.ge.review = false;
  Controller a(no_review, 3);
  EXPECT_GT(count_switch_errors(run(a, s.train, lr), s.tasks).fp_total, 0);

  Controller b(fixtures::controller(s), 3);
  EXPECT_EQ(count_switch_errors(run(b, s.train, lr), s.tasks).fp_total, 0);
}

TEST(Controller, ProcessOldestWaitsForFullBuffer) {
  const Stream s = make_stream(single_task(30));
  Controller c(fixtures::controller(s), 3);
  RecentEntry e;
  e.batch = s.train[0];
  e.high_loss = true;
  c.push_recent(e);
  StepTrace t;
  c.process_oldest(t);
  EXPECT_EQ(c.recent().size(), 1);
  EXPECT_TRUE(t.replays.empty());
}

TEST(Controller, ProcessOldestDropsNormalEntry) {
  const Stream s = make_stream(single_task(30));
  Controller c(fixtures::controller(s), 3);
  for (int i = 0; i < 20; ++i) {
    RecentEntry e;
    e.batch = s.train[static_cast<std::size_t>(i)];
    e.step = i;
    e.trained_on = 0;
    c.push_recent(e);
  }
  const long seen = c.expert(0).trained_batch_count();
  StepTrace t;
  c.process_oldest(t);
  EXPECT_EQ(c.recent().size(), 19);
  EXPECT_TRUE(t.replays.empty());
  EXPECT_EQ(c.expert(0).trained_batch_count(), seen);
}

TEST(Controller, ProcessOldestTrainsOnPreviousTrainer) {
  const Stream s = make_stream(fixtures::split(2, 150, 4));
  Controller c(fixtures::controller(s), 5);
  // Stop right after the creation step, which leaves the buffer empty.
  for (const auto& b : s.train)
    if (c.step(b).created) break;
  ASSERT_EQ(c.experts().size(), 2u);
  ASSERT_TRUE(c.recent().empty());
  for (int i = 0; i < 20; ++i) {
    RecentEntry e;
    e.batch = s.train[static_cast<std::size_t>(i)];
    e.step = 1000 + i;
    e.high_loss = i == 0;
    if (i > 0) e.trained_on = 0;
    c.push_recent(e);
  }
  c.set_previous_trainer(1);
  const long before0 = c.expert(0).trained_batch_count(), before1 = c.expert(1).trained_batch_count();
  StepTrace t;
  c.process_oldest(t);
  ASSERT_EQ(t.replays.size(), 1u);
  EXPECT_EQ(t.replays[0].expert, 1);
  EXPECT_EQ(t.replays[0].batch_step, 1000);
  EXPECT_EQ(c.expert(1).trained_batch_count(), before1 + 1);
  EXPECT_EQ(c.expert(0).trained_batch_count(), before0);
}

TEST(Controller, OrphanOutlierGoesToForwardChoice) {
  const Stream s = make_stream(single_task(30));
  Controller c(fixtures::controller(s), 3);
  for (int i = 0; i < 20; ++i) {
    RecentEntry e;
    e.batch = s.train[static_cast<std::size_t>(i)];
    e.step = i;
    e.high_loss = i == 0;
    c.push_recent(e);
  }
  c.set_previous_trainer(std::nullopt);
  StepTrace t;
  c.process_oldest(t);
  ASSERT_EQ(t.replays.size(), 1u);
  EXPECT_EQ(t.replays[0].expert, c.forward(*s.train[0]));
}

TEST(Controller, BufferEmptyAfterEpisode) {
  StreamConfig cfg = fixtures::split(3, 150, 8);
  cfg.class_spread = 0.25;
  const Stream s = make_stream(cfg);
  HarnessConfig h;
  h.lr_spike_every = 150;
  Controller c(fixtures::controller(s), 9);
  int episodes = 0;
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    const StepTrace t = c.step(s.train[i], h.lr_scale(static_cast<long>(i)));
    if (t.episode) {
      ++episodes;
      EXPECT_TRUE(c.recent().empty()) << t.step;
    }
  }
  EXPECT_GE(episodes, 2);
}

TEST(Controller, QuarantinedBatchesNeverTrainTheRoutedExpert) {
  StreamConfig cfg = fixtures::split(4, 150, 12);
  const Stream s = make_stream(cfg);
  Controller c(fixtures::controller(s), 13);
  for (const auto& t : run(c, s.train)) {
    if (t.high_loss) {
      EXPECT_FALSE(t.trained_on.has_value());
    }
    if (t.trained_on && *t.trained_on == t.routed_to) {
      EXPECT_FALSE(t.classifier_loss > t.threshold) << t.step;
    }
  }
}

TEST(Controller, RepeatRunsGiveIdenticalTraces) {
  const Stream s = make_stream(fixtures::split(3, 150, 14));
  Controller a(fixtures::controller(s), 15), b(fixtures::controller(s), 15);
  EXPECT_EQ(run(a, s.train), run(b, s.train));
}

TEST(Controller, NewAndPromotedSetsStayDisjoint) {
  const Stream s = make_stream(fixtures::split(3, 150, 16));
  Controller c(fixtures::controller(s), 17);
  for (const auto& b : s.train) {
    c.step(b);
    for (ExpertId id : c.fresh())
      ASSERT_EQ(std::count(c.promoted().begin(), c.promoted().end(), id), 0);
  }
}

TEST(Controller, PinnedTreeRoutesLikeFlat) {
  const Stream s = make_stream(fixtures::split(5, 150, 18));
  ControllerConfig flat = fixtures::controller(s);
  ControllerConfig pinned = fixtures::controller(s, RoutingMode::Tree);
  pinned.hge.pin_to_root = true;
  pinned.hge.epsilon_promotion = flat.ge.epsilon_promotion;
  Controller a(flat, 19), b(pinned, 19);
  EXPECT_EQ(run(a, s.train), run(b, s.train));
  for (const auto& n : b.tree().nodes())
    if (n.id != b.tree().root()) EXPECT_GE(b.tree().depth(n.id), 1);
}

TEST(Controller, FastPathKeepsAssociations) {
  for (std::uint64_t seed : {21u, 22u}) {
    const Stream s = make_stream(fixtures::split(5, 150, seed));
    ControllerConfig fast = fixtures::controller(s);
    fast.ge.fast_path = true;
    Controller a(fixtures::controller(s), seed), b(fast, seed);
    const auto ta = run(a, s.train), tb = run(b, s.train);
    EXPECT_EQ(associate(ta, s.tasks), associate(tb, s.tasks)) << seed;
  }
}

TEST(Controller, TreeInvariantsHoldAfterEveryPromotion) {
  const Stream s = make_stream(fixtures::split(6, 150, 23));
  Controller c(fixtures::controller(s, RoutingMode::Tree), 24);
  for (const auto& b : s.train) {
    const StepTrace t = c.step(b);
    if (!t.promoted) continue;
    EXPECT_NO_THROW(c.tree().validate());
    for (ExpertId id : c.promoted()) EXPECT_TRUE(c.tree().references(id)) << id;
    for (ExpertId id : c.fresh()) EXPECT_FALSE(c.tree().references(id)) << id;
    EXPECT_LE(t.experts_queried, c.tree().expert_count());
  }
}

TEST(Controller, AlternatingDomainsGroupUnderSharedAncestors) {
  RunConfig cfg;
  apply_scenario("alternating-domains", cfg);
  cfg.method = Method::Hge;
  int grouped = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const RunReport r = run_once(cfg, seed);
    double depth = 0;
    int counted = 0;
    for (const auto& n : r.tree.nodes()) {
      if (!n.expert) continue;
      depth += r.tree.depth(n.id);
      ++counted;
    }
    grouped += counted > 0 && depth / counted > 1.0 ? 1 : 0;
  }
  EXPECT_GE(grouped, 4);
}

TEST(Controller, InvalidConfigRejected) {
  ControllerConfig c;
  c.ge.epsilon_promotion = 1.0;
  EXPECT_THROW(Controller(c, 1), ConfigError);
  c = ControllerConfig{};
  c.ge.hl_capacity = 1;
  EXPECT_THROW(Controller(c, 1), ConfigError);
  c = ControllerConfig{};
  c.hge.path_threshold = 0.0;
  EXPECT_THROW(Controller(c, 1), ConfigError);
  Controller ok{ControllerConfig{}, 1};
  EXPECT_THROW(ok.step(nullptr), InputError);
}
