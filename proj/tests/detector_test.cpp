#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "hge/detector.hpp"
#include "hge/errors.hpp"
#include "numerics_oracle.hpp"

using namespace hge;

namespace {

RecentEntry entry(BatchPtr b, bool high, long step = 0) {
  RecentEntry e;
  e.batch = std::move(b);
  e.high_loss = high;
  e.step = step;
  return e;
}

}  // namespace

TEST(ZReview, HandEvaluation) {
  // sigma 2 over 16 replay losses with mean 1.
  std::vector<double> replay;
  for (int i = 0; i < 8; ++i) {
    replay.push_back(-1.0);
    replay.push_back(3.0);
  }
  const std::vector<double> high{2.0, 2.0};
  const ReviewVerdict v = z_review(replay, high, 20.0);
  EXPECT_DOUBLE_EQ(v.standard_error, 0.5);
  EXPECT_DOUBLE_EQ(v.z_score, 2.0);
  EXPECT_FALSE(v.is_new_task);
}

TEST(ZReview, EqualMeansScoreZero) {
  const std::vector<double> replay{1.0, 2.0, 3.0};
  const std::vector<double> high{2.0};
  const ReviewVerdict v = z_review(replay, high, 20.0);
  EXPECT_EQ(v.z_score, 0.0);
  EXPECT_FALSE(v.is_new_task);
}

TEST(ZReview, ClearShiftIsNewTask) {
  std::vector<double> replay;
  for (int i = 0; i < 10; ++i) replay.push_back(i % 2 ? 1.01 : 0.99);
  const std::vector<double> high(20, 5.0);
  const ReviewVerdict v = z_review(replay, high, 20.0);
  EXPECT_GT(v.z_score, 100.0);
  EXPECT_TRUE(v.is_new_task);
}

TEST(ZReview, ZeroSigmaUsesFloor) {
  const std::vector<double> replay(5, 1.0);
  const std::vector<double> high{1.0 + 1e-6};
  const ReviewVerdict v = z_review(replay, high, 20.0);
  EXPECT_NEAR(v.standard_error, kSigmaFloor / std::sqrt(5.0), 1e-20);
  EXPECT_TRUE(std::isfinite(v.z_score));
  EXPECT_TRUE(v.is_new_task);
}

TEST(ZReview, TooFewReplayLossesIsNewTask) {
  const std::vector<double> one{1.0};
  const std::vector<double> high{1.0};
  const ReviewVerdict v = z_review(one, high, 20.0);
  EXPECT_TRUE(std::isinf(v.z_score));
  EXPECT_TRUE(v.is_new_task);
  EXPECT_TRUE(z_review({}, high, 20.0).is_new_task);
}

TEST(ZReview, MatchesTextbookOracle) {
  Rng rng(31);
  for (int i = 0; i < 1000; ++i) {
    const int n = 2 + static_cast<int>(rng.below(20));
    const int m = 1 + static_cast<int>(rng.below(20));
    const double scale = rng.uniform(0.01, 3.0);
    std::vector<double> a, b;
    for (int k = 0; k < n; ++k) a.push_back(rng.uniform(0, scale));
    for (int k = 0; k < m; ++k) b.push_back(rng.uniform(0, 3 * scale));
    const double eps = rng.uniform(0.5, 30.0);
    const ReviewVerdict v = z_review(a, b, eps);
    const double z = oracle::z_score(a, b);
    ASSERT_NEAR(v.z_score, z, 1e-12 * std::max(1.0, z));
    ASSERT_EQ(v.is_new_task, v.z_score > eps);
    ASSERT_GE(v.z_score, 0.0);
  }
}

TEST(ZReview, ScaleInvariant) {
  Rng rng(32);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> a, b;
    for (int k = 0; k < 10; ++k) a.push_back(rng.uniform(0.5, 1.5));
    for (int k = 0; k < 20; ++k) b.push_back(rng.uniform(1.0, 4.0));
    const double c = rng.uniform(0.1, 50.0);
    std::vector<double> ca = a, cb = b;
    for (double& x : ca) x *= c;
    for (double& x : cb) x *= c;
    const double z1 = z_review(a, b, 20).z_score, z2 = z_review(ca, cb, 20).z_score;
    EXPECT_NEAR(z1, z2, 1e-9 * std::max(1.0, z1));
  }
}

TEST(ZReview, NonFiniteRejected) {
  const std::vector<double> replay{1.0, std::nan("")};
  EXPECT_THROW(z_review(replay, std::vector<double>{1.0}, 20), NumericError);
}

TEST(RecentBuffer, FifoAndCapacity) {
  RecentBuffer r(3);
  for (long s = 0; s < 3; ++s) r.push(entry(nullptr, false, s));
  EXPECT_TRUE(r.full());
  EXPECT_THROW(r.push(entry(nullptr, false, 9)), std::logic_error);
  EXPECT_EQ(r.pop_oldest().step, 0);
  EXPECT_EQ(r.entries().front().step, 1);
  r.clear();
  EXPECT_THROW(r.pop_oldest(), std::logic_error);
  EXPECT_THROW(RecentBuffer(1), ConfigError);
}

TEST(RecentBuffer, DefaultCapacityIsTwenty) { EXPECT_EQ(RecentBuffer().capacity(), 20); }

class EpisodeTest : public ::testing::Test {
 protected:
  EpisodeTest() : gen_(config()), expert_(0, fixtures::expert_config(32, 20), 5) {
    expert_.promote();
    for (std::uint64_t u = 0; u < 200; ++u) expert_.train(batch(0, u));
  }

  static StreamConfig config() {
    StreamConfig c = fixtures::split(10);
    c.class_spread = 0.25;
    c.seed = 3;
    return c;
  }
  BatchPtr batch(int task, std::uint64_t uid) const { return std::make_shared<Batch>(gen_.make_batch(task, uid)); }

  TaskGenerator gen_;
  Expert expert_;
};

TEST_F(EpisodeTest, IsolatedHighEntryIsOutlier) {
  RecentBuffer r(20);
  r.push(entry(batch(1, 1000), true));
  for (int i = 1; i < 20; ++i) r.push(entry(batch(0, 1000 + static_cast<std::uint64_t>(i)), false));
  const EpisodeResult e = classify_high_loss_episode(r, expert_, 20.0);
  EXPECT_EQ(e.kind, Episode::Outlier);
  EXPECT_FALSE(e.verdict.has_value());
}

TEST_F(EpisodeTest, NeverNewTaskWhileNormalEntryRemains) {
  for (int pos = 0; pos < 20; ++pos) {
    RecentBuffer r(20);
    for (int i = 0; i < 20; ++i) r.push(entry(batch(i == pos ? 0 : 1, 2000 + static_cast<std::uint64_t>(i)), i != pos));
    EXPECT_NE(classify_high_loss_episode(r, expert_, 20.0).kind, Episode::NewTask) << pos;
  }
}

TEST_F(EpisodeTest, DisjointTaskIsNewTask) {
  RecentBuffer r(20);
  for (int i = 0; i < 20; ++i) r.push(entry(batch(1, 3000 + static_cast<std::uint64_t>(i)), true));
  const EpisodeResult e = classify_high_loss_episode(r, expert_, 20.0);
  EXPECT_EQ(e.kind, Episode::NewTask);
  ASSERT_TRUE(e.verdict.has_value());
  EXPECT_GT(e.verdict->z_score, 20.0);
}

TEST_F(EpisodeTest, LearningRateSpikeIsInstability) {
  // One classifier step at 50x the learning rate, then the same task keeps coming.
  expert_.train(batch(0, 4000), 50.0);
  RecentBuffer r(20);
  int above = 0;
  for (int i = 0; i < 20; ++i) {
    const auto b = batch(0, 4001 + static_cast<std::uint64_t>(i));
    above += expert_.classifier_loss(*b) > expert_.threshold() ? 1 : 0;
    r.push(entry(b, true));
  }
  EXPECT_GT(above, 0);
  const EpisodeResult e = classify_high_loss_episode(r, expert_, 20.0);
  EXPECT_EQ(e.kind, Episode::Instability);
  ASSERT_TRUE(e.verdict.has_value());
  EXPECT_LE(e.verdict->z_score, 20.0);
}

TEST_F(EpisodeTest, EmptyReplayIsNewTask) {
  Expert fresh(1, fixtures::expert_config(32, 20), 6);
  RecentBuffer r(20);
  for (int i = 0; i < 20; ++i) r.push(entry(batch(0, 5000 + static_cast<std::uint64_t>(i)), true));
  EXPECT_EQ(classify_high_loss_episode(r, fresh, 20.0).kind, Episode::NewTask);
}
