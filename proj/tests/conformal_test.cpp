#include "confex/conformal.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "confex/rng.hpp"

using namespace confex;

namespace {

Rational dec(const char* s) { return Rational::from_decimal(s); }

PValueVector make_vector(int agent, std::vector<Rational> ps) {
  PValueVector v;
  v.agent_id = agent;
  v.test_index.resize(ps.size());
  std::iota(v.test_index.begin(), v.test_index.end(), 0);
  v.pvals = std::move(ps);
  return v;
}

// Oracle for the count exchange: pool every p-value and run the step-up scan
// directly over the sorted sequence.
RejectionSet pooled_bh_oracle(const std::vector<PValueVector>& agents, const Rational& alpha) {
  std::vector<Rational> pooled;
  for (const auto& a : agents) pooled.insert(pooled.end(), a.pvals.begin(), a.pvals.end());
  const BHResult bh = bh_procedure(pooled, alpha);
  RejectionSet out;
  out.threshold = bh.threshold;
  for (const auto& a : agents) {
    for (std::size_t i = 0; i < a.pvals.size(); ++i) {
      if (bh.k_hat > 0 && a.pvals[i] <= bh.threshold) {
        out.rejected.push_back({a.agent_id, a.test_index[i]});
      }
    }
  }
  return out;
}

}  // namespace

TEST(EmpiricalPvalue, CountsTiesConservatively) {
  const std::vector<double> cal{0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(empirical_pvalue(0.35, cal), Rational(2, 5));
  EXPECT_EQ(empirical_pvalue(0.5, cal), Rational(1, 5));
  EXPECT_EQ(empirical_pvalue(0.0, cal), Rational(1, 1));
  // a tie with a calibration score counts toward the p-value
  EXPECT_EQ(empirical_pvalue(0.4, cal), Rational(2, 5));
}

TEST(EmpiricalPvalue, EmptyCalibrationThrows) {
  EXPECT_THROW(empirical_pvalue(0.5, {}), std::invalid_argument);
}

TEST(EmpiricalPvalue, SuperUniformUnderTheNull) {
  // continuous i.i.d. scores: Pr(p <= t) <= t, Monte Carlo at 3 standard errors
  constexpr int kDraws = 100000;
  constexpr std::size_t kCal = 99;
  Rng rng(20260810);
  std::vector<double> cal(kCal);
  int hits_05 = 0, hits_10 = 0, hits_20 = 0;
  for (int i = 0; i < kDraws; ++i) {
    for (auto& c : cal) c = rng.next_gaussian();
    const Rational p = empirical_pvalue(rng.next_gaussian(), cal);
    if (p <= dec("0.05")) ++hits_05;
    if (p <= dec("0.1")) ++hits_10;
    if (p <= dec("0.2")) ++hits_20;
  }
  auto bound = [&](double t) {
    return t + 3.0 * std::sqrt(t * (1.0 - t) / static_cast<double>(kDraws));
  };
  EXPECT_LE(hits_05 / static_cast<double>(kDraws), bound(0.05));
  EXPECT_LE(hits_10 / static_cast<double>(kDraws), bound(0.10));
  EXPECT_LE(hits_20 / static_cast<double>(kDraws), bound(0.20));
}

TEST(BhProcedure, WorkedExample) {
  const std::vector<Rational> ps{dec("0.01"), dec("0.02"), dec("0.5")};
  const BHResult r = bh_procedure(ps, dec("0.15"));
  EXPECT_EQ(r.k_hat, 2u);
  EXPECT_EQ(r.threshold, dec("0.10"));
  EXPECT_EQ(r.rejected, (std::vector<std::size_t>{0, 1}));
}

TEST(BhProcedure, NothingBelowAnyStepLine) {
  const std::vector<Rational> ps{dec("0.9"), dec("0.8")};
  const BHResult r = bh_procedure(ps, dec("0.1"));
  EXPECT_EQ(r.k_hat, 0u);
  EXPECT_TRUE(r.rejected.empty());
  EXPECT_EQ(r.threshold, Rational(0, 1));
}

TEST(BhProcedure, RejectsEverythingUnderTheFirstLine) {
  const std::vector<Rational> ps{dec("0.01"), dec("0.01"), dec("0.01")};
  const BHResult r = bh_procedure(ps, dec("0.1"));
  EXPECT_EQ(r.rejected.size(), 3u);
  EXPECT_EQ(r.threshold, dec("0.10"));
}

TEST(BhProcedure, PreconditionsThrow) {
  EXPECT_THROW(bh_procedure({}, dec("0.1")), std::invalid_argument);
  const std::vector<Rational> ps{dec("0.5")};
  EXPECT_THROW(bh_procedure(ps, Rational(0, 1)), std::invalid_argument);
  EXPECT_THROW(bh_procedure(ps, Rational(1, 1)), std::invalid_argument);
}

TEST(BhProcedure, PermutationInvariant) {
  Rng rng(7);
  std::vector<Rational> ps;
  for (int i = 0; i < 40; ++i) {
    ps.emplace_back(1 + static_cast<std::int64_t>(rng.below(50)), 51);
  }
  const BHResult base = bh_procedure(ps, dec("0.2"));
  std::vector<std::size_t> order(ps.size());
  std::iota(order.begin(), order.end(), 0);
  for (int rep = 0; rep < 20; ++rep) {
    rng.shuffle(order);
    std::vector<Rational> shuffled;
    for (std::size_t i : order) shuffled.push_back(ps[i]);
    const BHResult perm = bh_procedure(shuffled, dec("0.2"));
    EXPECT_EQ(perm.k_hat, base.k_hat);
    EXPECT_EQ(perm.threshold, base.threshold);
    EXPECT_EQ(perm.rejected.size(), base.rejected.size());
  }
}

TEST(FastLsu, WorkedTrace) {
  const std::vector<PValueVector> agents{
      make_vector(0, {dec("0.01"), dec("0.4")}),
      make_vector(1, {dec("0.03"), dec("0.9")}),
  };
  const FastLsuResult r = fastlsu(agents, dec("0.2"));

  // init round fixes R_0 = M = 4, then 4 -> 2 -> 2 (confirmation)
  ASSERT_EQ(r.log.size(), 3u);
  EXPECT_EQ(r.log[0].global_count, 4);
  EXPECT_EQ(r.log[0].local_counts, (std::vector<std::int64_t>{2, 2}));
  EXPECT_EQ(r.log[1].global_count, 2);
  EXPECT_EQ(r.log[2].global_count, 2);

  ASSERT_EQ(r.rejections.rejected.size(), 2u);
  EXPECT_EQ(r.rejections.rejected[0], (Rejection{0, 0}));
  EXPECT_EQ(r.rejections.rejected[1], (Rejection{1, 0}));
  EXPECT_EQ(r.rejections.threshold, dec("0.1"));
}

TEST(FastLsu, SingleAgentMatchesLocalBh) {
  const auto agent = make_vector(0, {dec("0.04"), dec("0.3"), dec("0.02"), dec("0.77")});
  const std::vector<PValueVector> agents{agent};
  const FastLsuResult r = fastlsu(agents, dec("0.1"));
  const BHResult bh = bh_procedure(agent.pvals, dec("0.1"));
  EXPECT_EQ(r.rejections.rejected.size(), bh.rejected.size());
  EXPECT_EQ(r.rejections.threshold, bh.threshold);
}

TEST(FastLsu, AllOnesRejectNothing) {
  const std::vector<PValueVector> agents{
      make_vector(0, {Rational(1, 1), Rational(1, 1)}),
      make_vector(1, {Rational(1, 1)}),
  };
  const FastLsuResult r = fastlsu(agents, dec("0.1"));
  EXPECT_TRUE(r.rejections.rejected.empty());
  ASSERT_GE(r.log.size(), 2u);
  EXPECT_EQ(r.log[1].global_count, 0);
}

TEST(FastLsu, EmptyAgentContributesZeroCounts) {
  const std::vector<PValueVector> agents{
      make_vector(0, {dec("0.01")}),
      make_vector(1, {}),
  };
  const FastLsuResult r = fastlsu(agents, dec("0.1"));
  EXPECT_EQ(r.rejections.rejected.size(), 1u);
  for (const auto& round : r.log) EXPECT_EQ(round.local_counts[1], 0);
}

TEST(FastLsu, MatchesPooledBhOnRandomInstances) {
  Rng rng(42424242);
  for (int rep = 0; rep < 200; ++rep) {
    const int K = 1 + static_cast<int>(rng.below(5));
    std::vector<PValueVector> agents;
    for (int j = 0; j < K; ++j) {
      const int m = 1 + static_cast<int>(rng.below(50));
      const std::int64_t denom = 1 + static_cast<std::int64_t>(rng.below(60));
      std::vector<Rational> ps;
      for (int t = 0; t < m; ++t) {
        // mixture biased toward small p-values so rejections actually happen
        std::int64_t k = rng.below(4) == 0
                             ? 1 + static_cast<std::int64_t>(rng.below(std::max<std::int64_t>(1, denom / 8)))
                             : 1 + static_cast<std::int64_t>(rng.below(denom));
        ps.emplace_back(std::min(k, denom), denom);
      }
      agents.push_back(make_vector(j, std::move(ps)));
    }
    const FastLsuResult fast = fastlsu(agents, dec("0.2"));
    const RejectionSet oracle = pooled_bh_oracle(agents, dec("0.2"));

    auto sorted_fast = fast.rejections.rejected;
    auto sorted_oracle = oracle.rejected;
    std::sort(sorted_fast.begin(), sorted_fast.end());
    std::sort(sorted_oracle.begin(), sorted_oracle.end());
    ASSERT_EQ(sorted_fast, sorted_oracle);

    // counts never increase and the iteration count stays within M + 1
    std::int64_t total = fast.log.front().global_count;
    for (std::size_t i = 1; i < fast.log.size(); ++i) {
      EXPECT_LE(fast.log[i].global_count, fast.log[i - 1].global_count);
    }
    EXPECT_LE(static_cast<std::int64_t>(fast.log.size()) - 1, total + 1);
  }
}

TEST(FastLsu, PreconditionsThrow) {
  EXPECT_THROW(fastlsu({}, dec("0.1")), std::invalid_argument);
  const std::vector<PValueVector> empty_agents{make_vector(0, {})};
  EXPECT_THROW(fastlsu(empty_agents, dec("0.1")), std::invalid_argument);
}

TEST(CommBound, ClosedForm) {
  EXPECT_EQ(fastlsu_comm_bound(333, 3), 999 * (9 + 10));
  EXPECT_EQ(fastlsu_comm_bound(1, 1), 2);
  EXPECT_EQ(fastlsu_comm_bound(7, 2), 14 * (3 + 4));
  EXPECT_THROW(fastlsu_comm_bound(0, 3), std::invalid_argument);
}

TEST(CommActual, CountsLoggedRounds) {
  std::vector<FastLsuRound> two_rounds(2);
  EXPECT_EQ(fastlsu_actual_comm(two_rounds, 333, 3), 2 * 19);

  std::vector<FastLsuRound> one_round(1);
  EXPECT_EQ(fastlsu_actual_comm(one_round, 1, 1), 2);

  // the worked trace: three rounds including confirmation, m=2, K=2
  const std::vector<PValueVector> agents{
      make_vector(0, {dec("0.01"), dec("0.4")}),
      make_vector(1, {dec("0.03"), dec("0.9")}),
  };
  const FastLsuResult r = fastlsu(agents, dec("0.2"));
  EXPECT_EQ(fastlsu_actual_comm(r.log, 2, 2), 3 * (2 + 3));
  EXPECT_LE(fastlsu_actual_comm(r.log, 2, 2), fastlsu_comm_bound(2, 2));
}

TEST(ScoreMetrics, WorkedExamples) {
  GroundTruth truth;
  // 30 test points at one agent: 10 nulls, 20 novelties
  for (int i = 0; i < 10; ++i) truth.add(0, i, false);
  for (int i = 10; i < 30; ++i) truth.add(0, i, true);

  RejectionSet rej;
  rej.rejected.push_back({0, 0});  // one false discovery
  for (int i = 10; i < 19; ++i) rej.rejected.push_back({0, i});
  const ErrorMetrics m = score_metrics(rej, truth);
  EXPECT_EQ(m.rejections, 10);
  EXPECT_EQ(m.false_discoveries, 1);
  EXPECT_EQ(m.fdp, Rational(1, 10));
  EXPECT_EQ(m.power, Rational(9, 20));
}

TEST(ScoreMetrics, EmptyRejectionSet) {
  GroundTruth truth;
  truth.add(0, 0, true);
  const ErrorMetrics m = score_metrics(RejectionSet{}, truth);
  EXPECT_EQ(m.fdp, Rational(0, 1));
  EXPECT_EQ(m.power, Rational(0, 1));
}

TEST(ScoreMetrics, PerfectDetection) {
  GroundTruth truth;
  RejectionSet rej;
  for (int i = 0; i < 5; ++i) {
    truth.add(0, i, true);
    rej.rejected.push_back({0, i});
  }
  truth.add(0, 99, false);
  const ErrorMetrics m = score_metrics(rej, truth);
  EXPECT_EQ(m.fdp, Rational(0, 1));
  EXPECT_EQ(m.power, Rational(1, 1));
}

TEST(ScoreMetrics, UnknownIdentityThrows) {
  GroundTruth truth;
  truth.add(0, 0, false);
  RejectionSet rej;
  rej.rejected.push_back({1, 0});
  EXPECT_THROW(score_metrics(rej, truth), std::invalid_argument);
}
