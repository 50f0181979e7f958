#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "hge/errors.hpp"
#include "hge/expert.hpp"
#include "hge/streams.hpp"
#include "numerics_oracle.hpp"

using namespace hge;

namespace {

struct TaskData {
  TaskGenerator gen;
  explicit TaskData(StreamConfig c) : gen(c) {}
  BatchPtr batch(int task, std::uint64_t uid) const { return std::make_shared<Batch>(gen.make_batch(task, uid)); }
};

TaskData two_class_task() {
  StreamConfig c = fixtures::split(1);
  c.seed = 5;
  return TaskData(c);
}

}  // namespace

TEST(LossStats, FirstLoss) {
  LossStats s(0.9, 4.0);
  s.update(3.0);
  EXPECT_EQ(s.mu(), 3.0);
  EXPECT_EQ(s.sigma(), 0.0);
  EXPECT_EQ(s.count(), 1);
}

TEST(LossStats, TwoLossesHandUnrolled) {
  LossStats s(0.9, 4.0);
  s.update(1.0);
  s.update(2.0);
  EXPECT_DOUBLE_EQ(s.mu(), 1.1);
  EXPECT_DOUBLE_EQ(s.sigma(), 1.0);
}

TEST(LossStats, MatchesFromScratchOracle) {
  Rng rng(2024);
  for (int seq = 0; seq < 1000; ++seq) {
    const double a = rng.uniform(0.05, 0.99);
    const int n = 1 + static_cast<int>(rng.below(40));
    std::vector<double> losses;
    for (int i = 0; i < n; ++i) losses.push_back(rng.uniform(0.0, 5.0));
    LossStats s(a, 4.0);
    for (int i = 0; i < n; ++i) {
      s.update(losses[static_cast<std::size_t>(i)]);
      const auto [mu, sigma] = oracle::ewma(losses, static_cast<std::size_t>(i + 1), a);
      ASSERT_NEAR(s.mu(), mu, 1e-12);
      ASSERT_NEAR(s.sigma(), sigma, 1e-12);
      ASSERT_GE(s.sigma(), 0.0);
      ASSERT_EQ(s.count(), i + 1);
    }
  }
}

TEST(LossStats, DeviationStaysNonNegativeOnFallingLosses) {
  LossStats s(0.9, 4.0);
  for (double l = 10.0; l > 0.0; l -= 0.5) {
    s.update(l);
    EXPECT_GE(s.sigma(), 0.0);
    EXPECT_GE(s.threshold(), s.mu());
  }
}

TEST(LossStats, ThresholdInfiniteDuringWarmup) {
  LossStats s(0.9, 4.0, 5);
  EXPECT_EQ(s.threshold(), std::numeric_limits<double>::infinity());
  for (int i = 0; i < 4; ++i) {
    s.update(1.0);
    EXPECT_TRUE(std::isinf(s.threshold()));
  }
  s.update(1.0);
  EXPECT_EQ(s.threshold(), 1.0);
}

TEST(LossStats, ThresholdFormula) {
  LossStats s(0.9, 4.0);
  s.restore(1.0, 0.5, 10);
  EXPECT_EQ(s.threshold(), 3.0);
  s.restore(2.5, 0.0, 10);
  EXPECT_EQ(s.threshold(), 2.5);
}

TEST(LossStats, ThresholdIncreasesWithEpsilon) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double mu = rng.uniform(0, 3), sigma = rng.uniform(1e-3, 2);
    const double e1 = rng.uniform(0.1, 10), e2 = e1 + rng.uniform(1e-3, 5);
    LossStats a(0.9, e1), b(0.9, e2);
    a.restore(mu, sigma, 10);
    b.restore(mu, sigma, 10);
    EXPECT_LT(a.threshold(), b.threshold());
  }
}

TEST(LossStats, NonFiniteLossRejected) {
  LossStats s(0.9, 4.0);
  EXPECT_THROW(s.update(std::numeric_limits<double>::infinity()), NumericError);
  EXPECT_THROW(s.update(std::nan("")), NumericError);
  EXPECT_EQ(s.count(), 0);
}

TEST(LossStats, BadParametersRejected) {
  EXPECT_THROW(LossStats(1.0, 4.0), ConfigError);
  EXPECT_THROW(LossStats(0.9, 0.0), ConfigError);
}

TEST(ExpertConfig, DefaultsMatchPublishedValues) {
  const ExpertConfig c;
  EXPECT_EQ(c.alpha, 0.9);
  EXPECT_EQ(c.epsilon, 4.0);
  EXPECT_EQ(c.replay_capacity, 10);
  EXPECT_EQ(c.promotion_window, 50);
  EXPECT_EQ(c.epsilon_promotion, 0.5);
}

TEST(PromotionWindow, TwentySixOfFiftyPromotes) {
  PromotionWindow w(50);
  for (int i = 0; i < 26; ++i) w.push(true);
  for (int i = 0; i < 24; ++i) w.push(false);
  EXPECT_TRUE(w.exceeds(0.5));
}

TEST(PromotionWindow, TwentyFiveOfFiftyHolds) {
  PromotionWindow w(50);
  for (int i = 0; i < 25; ++i) w.push(false);
  for (int i = 0; i < 25; ++i) w.push(true);
  EXPECT_FALSE(w.exceeds(0.5));
}

TEST(PromotionWindow, PartialWindowHolds) {
  PromotionWindow w(50);
  for (int i = 0; i < 49; ++i) w.push(true);
  EXPECT_FALSE(w.exceeds(0.5));
  w.push(true);
  EXPECT_TRUE(w.exceeds(0.5));
}

TEST(PromotionWindow, SlidesOverOldestFlags) {
  PromotionWindow w(4);
  for (bool f : {true, true, true, false, false}) w.push(f);
  EXPECT_EQ(w.size(), 4);
  EXPECT_EQ(w.true_count(), 2);
}

TEST(PromotionWindow, MonotoneInTrueFlags) {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<bool> flags(20);
    for (auto&& f : flags) f = rng.uniform() < 0.5;
    const double frac = rng.uniform(0.05, 0.95);
    PromotionWindow before(20);
    for (bool f : flags) before.push(f);
    for (std::size_t i = 0; i < flags.size(); ++i) {
      if (flags[i]) continue;
      auto more = flags;
      more[i] = true;
      PromotionWindow after(20);
      for (bool f : more) after.push(f);
      if (before.exceeds(frac)) {
        EXPECT_TRUE(after.exceeds(frac));
      }
    }
  }
}

TEST(ReplayBuffer, HoldsCapacityAfterOverflow) {
  ReplayBuffer r(10, 1);
  std::set<const Batch*> offered;
  for (int i = 0; i < 15; ++i) {
    auto b = fixtures::batch(hge::nn::Matrix::Zero(1, 1), {0}, 0, static_cast<std::uint64_t>(i));
    offered.insert(b.get());
    r.offer(b);
  }
  EXPECT_EQ(static_cast<int>(r.items().size()), 10);
  EXPECT_EQ(r.seen(), 15);
  for (const auto& b : r.items()) EXPECT_TRUE(offered.count(b.get()));
}

TEST(ReplayBuffer, ReservoirInclusionIsUniform) {
  constexpr int n = 40, cap = 10, runs = 4000;
  std::vector<int> hits(n, 0);
  std::vector<BatchPtr> items;
  for (int i = 0; i < n; ++i) items.push_back(fixtures::batch(hge::nn::Matrix::Zero(1, 1), {0}, 0, static_cast<std::uint64_t>(i)));
  for (int run = 0; run < runs; ++run) {
    ReplayBuffer r(cap, static_cast<std::uint64_t>(run) + 100);
    for (const auto& b : items) r.offer(b);
    for (const auto& b : r.items()) ++hits[b->uid];
  }
  for (int i = 0; i < n; ++i) EXPECT_NEAR(hits[static_cast<std::size_t>(i)] / static_cast<double>(runs), 0.25, 0.035) << i;
}

TEST(NoiseSource, KeyedIsReproducibleAndDistinct) {
  const NoiseSource n = NoiseSource::keyed(9);
  EXPECT_EQ(n.draw(5, 1, 3, 2), n.draw(5, 1, 3, 2));
  EXPECT_NE(n.draw(5, 1, 3, 2), n.draw(5, 2, 3, 2));
  EXPECT_NE(n.draw(5, 1, 3, 2), n.draw(6, 1, 3, 2));
  EXPECT_TRUE(NoiseSource::zero().draw(5, 1, 3, 2).isZero(0.0));
}

TEST(Expert, UntrainedLossNearLogK) {
  for (int k : {2, 4, 10}) {
    Expert e(0, fixtures::expert_config(32, k), 11);
    hge::nn::Matrix x(32, 32);
    Rng rng(4);
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) x(i, j) = rng.uniform();
    std::vector<int> y(32);
    for (int i = 0; i < 32; ++i) y[static_cast<std::size_t>(i)] = i % k;
    const auto b = fixtures::batch(x, y);
    EXPECT_NEAR(e.classifier_loss(*b), std::log(static_cast<double>(k)), 0.2) << k;
  }
}

TEST(Expert, TrainingReducesLoss) {
  const auto data = two_class_task();
  Expert e(0, fixtures::expert_config(32, 2), 3);
  const auto b = data.batch(0, 1);
  const double before = e.classifier_loss(*b);
  for (int i = 0; i < 30; ++i) e.train(b);
  EXPECT_LT(e.classifier_loss(*b), before);
}

TEST(Expert, LossesAreBitwiseDeterministic) {
  const auto data = two_class_task();
  const NoiseSource noise = NoiseSource::keyed(1);
  Expert a(3, fixtures::expert_config(32, 2), 8), b(3, fixtures::expert_config(32, 2), 8);
  for (std::uint64_t u = 0; u < 5; ++u) {
    a.train(data.batch(0, u));
    b.train(data.batch(0, u));
  }
  const auto probe = data.batch(0, 99);
  EXPECT_EQ(a.losses(*probe, noise).classifier, b.losses(*probe, noise).classifier);
  EXPECT_EQ(a.losses(*probe, noise).autoencoding, b.losses(*probe, noise).autoencoding);
  EXPECT_EQ(a.autoencoding_loss(*probe, noise), a.autoencoding_loss(*probe, noise));
}

TEST(Expert, BookkeepingAfterTraining) {
  const auto data = two_class_task();
  Expert e(0, fixtures::expert_config(32, 2), 3);
  for (std::uint64_t u = 0; u < 15; ++u) e.train(data.batch(0, u));
  EXPECT_EQ(static_cast<int>(e.replay().items().size()), 10);
  EXPECT_EQ(e.stats().count(), e.trained_batch_count());
  e.train(data.batch(0, 100), 1.0, false);
  EXPECT_EQ(e.replay().seen(), 15);
  EXPECT_EQ(e.stats().count(), 16);
}

TEST(Expert, NewExpertAcceptsUntilWindowFills) {
  ExpertConfig c = fixtures::expert_config(32, 2);
  c.promotion_window = 3;
  Expert e(0, c, 1);
  const auto data = two_class_task();
  for (std::uint64_t u = 0; u < 6; ++u) e.train(data.batch(0, u));
  EXPECT_TRUE(e.accepts(1e9));
  for (int i = 0; i < 3; ++i) e.promotion_check(false);
  EXPECT_FALSE(e.accepts(1e9));
  EXPECT_TRUE(e.accepts(e.threshold()));
}

TEST(Expert, PromotionCheckOnPromotedIsLogicError) {
  Expert e(0, fixtures::expert_config(32, 2), 1);
  e.promote();
  EXPECT_EQ(e.state(), ExpertState::Promoted);
  EXPECT_THROW(e.promotion_check(true), std::logic_error);
}

TEST(Expert, PromotionWithPublishedWindow) {
  Expert e(0, fixtures::expert_config(32, 2), 1);
  bool promoted = false;
  for (int i = 0; i < 24; ++i) promoted = e.promotion_check(false);
  for (int i = 0; i < 26; ++i) promoted = e.promotion_check(true);
  EXPECT_TRUE(promoted);
}

TEST(Expert, ThresholdStabilizesOnStationaryStream) {
  const auto data = two_class_task();
  Expert e(0, fixtures::expert_config(32, 2), 21);
  e.promote();
  int exceed = 0;
  for (std::uint64_t u = 0; u < 500; ++u) {
    const auto b = data.batch(0, u);
    if (u >= 400 && e.classifier_loss(*b) > e.threshold()) ++exceed;
    e.train(b);
  }
  EXPECT_LT(exceed, 5);
}

TEST(ExpertSnapshot, RoundTripPreservesBehaviour) {
  const auto data = two_class_task();
  Expert e(4, fixtures::expert_config(32, 2), 12);
  for (std::uint64_t u = 0; u < 14; ++u) e.train(data.batch(0, u));
  e.promotion_check(true);

  std::stringstream buf;
  e.save(buf);
  EXPECT_EQ(buf.str().substr(0, 5), "GEXP1");
  Expert r = Expert::load(buf);

  EXPECT_EQ(r.id(), 4);
  EXPECT_EQ(r.state(), e.state());
  EXPECT_EQ(r.stats().mu(), e.stats().mu());
  EXPECT_EQ(r.stats().sigma(), e.stats().sigma());
  EXPECT_EQ(r.stats().count(), e.stats().count());
  EXPECT_EQ(r.trained_batch_count(), e.trained_batch_count());
  EXPECT_EQ(r.promotion_history().flags(), e.promotion_history().flags());
  ASSERT_EQ(r.replay().items().size(), e.replay().items().size());
  for (std::size_t i = 0; i < r.replay().items().size(); ++i) {
    EXPECT_EQ(r.replay().items()[i]->inputs, e.replay().items()[i]->inputs);
    EXPECT_EQ(r.replay().items()[i]->uid, e.replay().items()[i]->uid);
  }

  const NoiseSource noise = NoiseSource::keyed(3);
  const auto probe = data.batch(0, 500);
  EXPECT_EQ(r.losses(*probe, noise).classifier, e.losses(*probe, noise).classifier);
  EXPECT_EQ(r.losses(*probe, noise).autoencoding, e.losses(*probe, noise).autoencoding);

  // Training continues identically, optimizer state and RNGs included.
  const auto next = data.batch(0, 501);
  e.train(next);
  r.train(next);
  EXPECT_EQ(r.losses(*probe, noise).autoencoding, e.losses(*probe, noise).autoencoding);
  EXPECT_EQ(r.replay().seen(), e.replay().seen());
}

TEST(ExpertSnapshot, BadMagicRejected) {
  std::stringstream buf("GEXP2 and then some bytes");
  EXPECT_THROW(Expert::load(buf), IngestionError);
}

TEST(ExpertSnapshot, TruncationRejected) {
  Expert e(0, fixtures::expert_config(8, 2), 1);
  std::stringstream buf;
  e.save(buf);
  const std::string full = buf.str();
  for (std::size_t cut : {std::size_t{5}, full.size() / 2, full.size() - 1}) {
    std::stringstream part(full.substr(0, cut));
    EXPECT_THROW(Expert::load(part), IngestionError) << cut;
  }
}
