#include "confex/datagen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace confex;

namespace {

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(Centroids, ZeroShiftCollapsesToOrigin) {
  SynthConfig cfg;
  cfg.delta = 0.0;
  for (const auto& mu : centroids(cfg)) {
    for (double x : mu) EXPECT_DOUBLE_EQ(x, 0.0);
  }
}

TEST(Centroids, EquilateralTriangleGeometry) {
  SynthConfig cfg;
  cfg.delta = 2.0;
  const auto mus = centroids(cfg);
  ASSERT_EQ(mus.size(), 3u);
  EXPECT_NEAR(mus[0][0], 2.0 / std::sqrt(10.0), 1e-12);  // first coordinate of delta*u
  for (const auto& mu : mus) EXPECT_NEAR(norm(mu), 2.0, 1e-12);
  const double side = 2.0 * std::sqrt(3.0);
  EXPECT_NEAR(dist(mus[0], mus[1]), side, 1e-12);
  EXPECT_NEAR(dist(mus[0], mus[2]), side, 1e-12);
  EXPECT_NEAR(dist(mus[1], mus[2]), side, 1e-12);
}

TEST(Centroids, GeneralKSitsOnTheCircle) {
  SynthConfig cfg;
  cfg.K = 5;
  cfg.delta = 1.5;
  const auto mus = centroids(cfg);
  ASSERT_EQ(mus.size(), 5u);
  for (const auto& mu : mus) EXPECT_NEAR(norm(mu), 1.5, 1e-12);
}

TEST(Centroids, TinyDimensionRejected) {
  SynthConfig cfg;
  cfg.d = 1;
  EXPECT_THROW(centroids(cfg), std::invalid_argument);
}

TEST(NoveltyMean, SparseShiftValues) {
  SynthConfig cfg;
  const auto mu = novelty_mean(cfg);
  const double expect = std::sqrt(2.0 * std::log(20.0));
  EXPECT_NEAR(expect, 2.4477, 1e-4);
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(mu[static_cast<std::size_t>(i)], expect);
  for (std::size_t i = 5; i < mu.size(); ++i) EXPECT_DOUBLE_EQ(mu[i], 0.0);
  EXPECT_NEAR(norm(mu), 5.4733, 1e-4);

  SynthConfig small;
  small.d = 5;
  EXPECT_NEAR(novelty_mean(small)[0], 1.7941, 1e-4);

  SynthConfig too_small;
  too_small.d = 4;
  EXPECT_THROW(novelty_mean(too_small), std::invalid_argument);
}

TEST(Generate, DefaultCountsAndShares) {
  SynthConfig cfg;
  cfg.delta = 1.0;
  cfg.seed = 9;
  const auto agents = generate(cfg);
  ASSERT_EQ(agents.size(), 3u);
  EXPECT_EQ(agents[0].train_nulls.size(), 1000u);
  EXPECT_EQ(agents[1].train_nulls.size(), 1000u);
  EXPECT_EQ(agents[2].train_nulls.size(), 1000u);
  // 1000 tests split 334 / 334 / 332
  EXPECT_EQ(agents[0].tests.size(), 334u);
  EXPECT_EQ(agents[1].tests.size(), 334u);
  EXPECT_EQ(agents[2].tests.size(), 332u);
  // pi0 = 0.9 of all 4000 observations -> 400 novelties, shared 134/134/132
  int novel0 = 0;
  for (auto b : agents[0].is_novelty) novel0 += b;
  EXPECT_EQ(novel0, 134);
  int novel1 = 0;
  for (auto b : agents[1].is_novelty) novel1 += b;
  EXPECT_EQ(novel1, 134);
  int novel2 = 0;
  for (auto b : agents[2].is_novelty) novel2 += b;
  EXPECT_EQ(novel2, 132);
}

TEST(Generate, RejectsNoveltyBudgetBeyondTestSet) {
  SynthConfig cfg;
  cfg.pi0 = Rational(1, 2);  // 2000 novelties cannot fit into 1000 test points
  EXPECT_THROW(generate(cfg), std::invalid_argument);
}

TEST(Generate, PureNullTestSets) {
  SynthConfig cfg;
  cfg.pi0 = Rational(1, 1);
  cfg.seed = 4;
  for (const auto& agent : generate(cfg)) {
    for (auto b : agent.is_novelty) EXPECT_EQ(b, 0);
  }
}

TEST(Generate, DeterministicGivenSeed) {
  SynthConfig cfg;
  cfg.delta = 2.0;
  cfg.seed = 77;
  const auto a = generate(cfg);
  const auto b = generate(cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].train_nulls, b[k].train_nulls);
    EXPECT_EQ(a[k].tests, b[k].tests);
    EXPECT_EQ(a[k].is_novelty, b[k].is_novelty);
  }
}

TEST(Generate, SampleMeansMatchCentroids) {
  SynthConfig cfg;
  cfg.delta = 3.0;
  cfg.seed = 123;
  cfg.pi0 = Rational(1, 1);
  cfg.n_train_total = 300000;  // 1e5 draws per centroid
  cfg.n_test_total = 3;
  const auto agents = generate(cfg);
  const auto mus = centroids(cfg);
  for (std::size_t k = 0; k < agents.size(); ++k) {
    std::vector<double> mean(static_cast<std::size_t>(cfg.d), 0.0);
    for (const auto& x : agents[k].train_nulls) {
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += x[i];
    }
    for (std::size_t i = 0; i < mean.size(); ++i) {
      mean[i] /= static_cast<double>(agents[k].train_nulls.size());
      EXPECT_NEAR(mean[i], mus[k][i], 0.02);
    }
  }
}

TEST(ExportCsv, RowPerPointWithHeader) {
  SynthConfig cfg;
  cfg.d = 5;
  cfg.n_train_total = 12;
  cfg.n_test_total = 6;
  cfg.seed = 2;
  std::ostringstream os;
  export_csv(os, generate(cfg));
  const std::string text = os.str();
  EXPECT_NE(text.find("agent,role,label,x0,x1,x2,x3,x4"), std::string::npos);
  // header + 12 train rows + 6 test rows
  std::size_t lines = 0;
  for (char c : text) lines += c == '\n';
  EXPECT_EQ(lines, 19u);
}
