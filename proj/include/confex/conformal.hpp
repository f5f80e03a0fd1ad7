#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "confex/rational.hpp"

namespace confex {

// Empirical conformal p-value of a test score against held-out calibration
// scores: (1 + #{cal_i >= s}) / (l + 1). The comparison is >=, so ties push
// the p-value up rather than down; validity survives score degradation that
// introduces ties (quantized surrogates do exactly that).
inline Rational empirical_pvalue(double test_score, std::span<const double> calibration_scores) {
  if (calibration_scores.empty()) {
    throw std::invalid_argument("empirical_pvalue: calibration set is empty");
  }
  std::int64_t ge = 0;
  for (double c : calibration_scores) {
    if (c >= test_score) ++ge;
  }
  return Rational(1 + ge, static_cast<std::int64_t>(calibration_scores.size()) + 1);
}

// One agent's p-values, tagged with the identity of the originating test
// points so rejections can be traced back to ground truth.
struct PValueVector {
  int agent_id = 0;
  std::vector<Rational> pvals;
  std::vector<std::int64_t> test_index;
};

struct Rejection {
  int agent_id = 0;
  std::int64_t test_index = 0;

  friend bool operator==(const Rejection&, const Rejection&) = default;
  friend auto operator<=>(const Rejection&, const Rejection&) = default;
};

// Realized rejection set. `threshold` is the step-up cutoff alpha*k_hat/M
// (zero when nothing is rejected); a pair is in `rejected` iff its p-value
// is <= threshold.
struct RejectionSet {
  std::vector<Rejection> rejected;
  Rational threshold;
};

struct BHResult {
  std::vector<std::size_t> rejected;  // indices into the input sequence
  Rational threshold;
  std::size_t k_hat = 0;
};

// Benjamini-Hochberg step-up: k_hat = max{k : p_(k) <= alpha*k/m}, reject
// everything at or below alpha*k_hat/m. Output depends only on the multiset
// of p-values, never on their order.
inline BHResult bh_procedure(std::span<const Rational> pvals, const Rational& alpha) {
  if (pvals.empty()) throw std::invalid_argument("bh_procedure: no p-values");
  if (alpha <= Rational(0, 1) || alpha >= Rational(1, 1)) {
    throw std::invalid_argument("bh_procedure: alpha must lie in (0, 1)");
  }
  const std::int64_t m = static_cast<std::int64_t>(pvals.size());
  std::vector<Rational> sorted(pvals.begin(), pvals.end());
  std::sort(sorted.begin(), sorted.end());

  std::size_t k_hat = 0;
  for (std::int64_t k = 1; k <= m; ++k) {
    if (sorted[static_cast<std::size_t>(k - 1)] <= alpha * Rational(k, m)) {
      k_hat = static_cast<std::size_t>(k);
    }
  }

  BHResult out;
  out.k_hat = k_hat;
  out.threshold = k_hat == 0 ? Rational(0, 1) : alpha * Rational(static_cast<std::int64_t>(k_hat), m);
  if (k_hat > 0) {
    for (std::size_t i = 0; i < pvals.size(); ++i) {
      if (pvals[i] <= out.threshold) out.rejected.push_back(i);
    }
  }
  return out;
}

// One exchange round: the scalar each agent transmits plus their aggregate.
// Round 0 reports local test counts (fixing R_0 = M); every later round
// reports rejection counts at the current candidate threshold. The final
// logged round is the confirmation that detected the fixed point.
struct FastLsuRound {
  std::vector<std::int64_t> local_counts;
  std::int64_t global_count = 0;
};

struct FastLsuResult {
  RejectionSet rejections;
  std::vector<FastLsuRound> log;
};

// Fast Local Step-Up: fixed-point iteration over per-agent rejection counts.
// R_0 = M, R_{t+1} = sum_j #{p in agent j : p <= alpha*R_t/M}, stop at
// R_{t+1} = R_t. Because thresholds are monotone in R, the counts are
// non-increasing; the fixed point reproduces the pooled BH rejection set
// exactly, without any p-value ever leaving its agent.
inline FastLsuResult fastlsu(std::span<const PValueVector> agents, const Rational& alpha) {
  if (agents.empty()) throw std::invalid_argument("fastlsu: no agents");
  if (alpha <= Rational(0, 1) || alpha >= Rational(1, 1)) {
    throw std::invalid_argument("fastlsu: alpha must lie in (0, 1)");
  }
  std::int64_t total = 0;
  for (const auto& a : agents) {
    if (a.pvals.size() != a.test_index.size()) {
      throw std::invalid_argument("fastlsu: p-value vector and test identity length mismatch");
    }
    total += static_cast<std::int64_t>(a.pvals.size());
  }
  if (total < 1) throw std::invalid_argument("fastlsu: no p-values in the network");

  FastLsuResult out;

  // Round 0: agents report their local test counts; the aggregate fixes
  // R_0 = M, the starting point of the step-up scan.
  {
    FastLsuRound init;
    for (const auto& a : agents) {
      init.local_counts.push_back(static_cast<std::int64_t>(a.pvals.size()));
    }
    init.global_count = total;
    out.log.push_back(std::move(init));
  }

  std::int64_t r_prev = total;
  std::int64_t r_cur = total;
  for (;;) {
    const Rational thr = alpha * Rational(r_prev, total);
    FastLsuRound round;
    r_cur = 0;
    for (const auto& a : agents) {
      std::int64_t c = 0;
      for (const auto& p : a.pvals) {
        if (p <= thr) ++c;
      }
      round.local_counts.push_back(c);
      r_cur += c;
    }
    round.global_count = r_cur;
    out.log.push_back(std::move(round));
    if (r_cur > r_prev) {
      throw std::logic_error("fastlsu: rejection count increased between rounds");
    }
    if (r_cur == r_prev) break;
    r_prev = r_cur;
  }

  out.rejections.threshold = r_cur == 0 ? Rational(0, 1) : alpha * Rational(r_cur, total);
  if (r_cur > 0) {
    for (const auto& a : agents) {
      for (std::size_t i = 0; i < a.pvals.size(); ++i) {
        if (a.pvals[i] <= out.rejections.threshold) {
          out.rejections.rejected.push_back({a.agent_id, a.test_index[i]});
        }
      }
    }
  }
  return out;
}

inline std::int64_t ceil_log2(std::int64_t x) {
  if (x <= 1) return 0;
  return static_cast<std::int64_t>(std::bit_width(static_cast<std::uint64_t>(x - 1)));
}

// Worst-case count-exchange payload per agent, in bits: K*m rounds of one
// count sent (log2(m+1) bits) and one aggregate received (log2(K*m+1) bits).
inline std::int64_t fastlsu_comm_bound(std::int64_t m, std::int64_t K) {
  if (m < 1 || K < 1) throw std::invalid_argument("fastlsu_comm_bound: m and K must be >= 1");
  return K * m * (ceil_log2(m + 1) + ceil_log2(K * m + 1));
}

// Realized count-exchange payload per agent for a logged run: one
// send/receive pair per logged round, confirmation included.
inline std::int64_t fastlsu_actual_comm(const std::vector<FastLsuRound>& iteration_log,
                                        std::int64_t m, std::int64_t K) {
  if (m < 1 || K < 1) throw std::invalid_argument("fastlsu_actual_comm: m and K must be >= 1");
  return static_cast<std::int64_t>(iteration_log.size()) *
         (ceil_log2(m + 1) + ceil_log2(K * m + 1));
}

// Hidden novelty labels for the evaluated test points, kept outside the
// detection pipeline and consulted only when scoring an outcome.
class GroundTruth {
 public:
  void add(int agent_id, std::int64_t test_index, bool is_novelty) {
    auto [it, inserted] = labels_.emplace(std::make_pair(agent_id, test_index), is_novelty);
    if (!inserted) throw std::invalid_argument("GroundTruth: duplicate test identity");
    if (is_novelty) ++total_novelties_;
  }

  bool is_novelty(int agent_id, std::int64_t test_index) const {
    auto it = labels_.find(std::make_pair(agent_id, test_index));
    if (it == labels_.end()) {
      throw std::invalid_argument("GroundTruth: unknown test identity");
    }
    return it->second;
  }

  std::int64_t total_novelties() const { return total_novelties_; }
  std::size_t size() const { return labels_.size(); }

 private:
  std::map<std::pair<int, std::int64_t>, bool> labels_;
  std::int64_t total_novelties_ = 0;
};

struct ErrorMetrics {
  std::int64_t false_discoveries = 0;  // V
  std::int64_t rejections = 0;         // R
  Rational fdp;                        // V / (R v 1)
  Rational power;                      // true novelties rejected / total true novelties
};

inline ErrorMetrics score_metrics(const RejectionSet& rejections, const GroundTruth& truth) {
  ErrorMetrics m;
  m.rejections = static_cast<std::int64_t>(rejections.rejected.size());
  for (const auto& r : rejections.rejected) {
    if (!truth.is_novelty(r.agent_id, r.test_index)) ++m.false_discoveries;
  }
  m.fdp = Rational(m.false_discoveries, std::max<std::int64_t>(m.rejections, 1));
  const std::int64_t novel = truth.total_novelties();
  m.power = novel == 0 ? Rational(0, 1) : Rational(m.rejections - m.false_discoveries, novel);
  return m;
}

}  // namespace confex
