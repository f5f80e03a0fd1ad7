#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "confex/conformal.hpp"
#include "confex/forest.hpp"
#include "confex/rational.hpp"
#include "confex/rng.hpp"

namespace confex {

// One agent's raw holdings: known nulls for training/calibration, unlabeled
// test points, and the novelty labels nobody in the pipeline may read.
struct AgentData {
  std::vector<std::vector<double>> train_nulls;
  std::vector<std::vector<double>> tests;
  std::vector<std::uint8_t> is_novelty;  // parallel to tests; metrics only
};

// Where a canonicalized mix entry came from: a calibration null (orig_index
// into the nulls argument) or a test point (orig_index into the tests
// argument).
struct MixRole {
  bool is_test = false;
  std::int64_t orig_index = 0;
};

// Positive-unlabeled training block: k nulls with known labels plus the
// unordered pool {calibration nulls} u {test points}. The pool is stored
// lexicographically sorted, so everything trained on it is invariant to the
// order the points arrived in; `roles` carries the identities back out.
struct PUDataset {
  std::vector<std::vector<double>> train_nulls;
  std::vector<std::vector<double>> unlabeled_mix;
  std::vector<MixRole> roles;           // parallel to unlabeled_mix
  std::vector<std::int64_t> train_src;  // positions in the nulls argument
  std::size_t cal_count = 0;            // l
  std::size_t test_count = 0;           // m
  std::size_t dim = 0;
};

inline PUDataset build_pu_dataset(const std::vector<std::vector<double>>& nulls,
                                  const std::vector<std::vector<double>>& tests,
                                  const Rational& train_fraction, std::uint64_t seed) {
  const std::int64_t n = static_cast<std::int64_t>(nulls.size());
  if (n < 2) throw std::invalid_argument("build_pu_dataset: need at least two null samples");
  if (train_fraction <= Rational(0, 1) || train_fraction >= Rational(1, 1)) {
    throw std::invalid_argument("build_pu_dataset: train_fraction must lie in (0, 1)");
  }
  const std::int64_t k = train_fraction.num() * n / train_fraction.den();
  const std::int64_t l = n - k;
  if (k == 0 || l == 0) {
    throw std::invalid_argument("build_pu_dataset: split leaves an empty train or calibration set");
  }

  PUDataset out;
  out.dim = nulls.front().size();
  for (const auto& v : nulls) {
    if (v.size() != out.dim) throw std::invalid_argument("build_pu_dataset: null dimension mismatch");
  }
  for (const auto& v : tests) {
    if (v.size() != out.dim) throw std::invalid_argument("build_pu_dataset: test dimension mismatch");
  }

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed_chain(seed, 0x5917ull));
  rng.shuffle(order);

  out.train_src.assign(order.begin(), order.begin() + k);
  out.train_nulls.reserve(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    out.train_nulls.push_back(nulls[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
  }

  std::vector<std::pair<std::vector<double>, MixRole>> mix;
  mix.reserve(static_cast<std::size_t>(l) + tests.size());
  for (std::int64_t i = k; i < n; ++i) {
    const std::int64_t src = order[static_cast<std::size_t>(i)];
    mix.emplace_back(nulls[static_cast<std::size_t>(src)], MixRole{false, src});
  }
  for (std::size_t t = 0; t < tests.size(); ++t) {
    mix.emplace_back(tests[t], MixRole{true, static_cast<std::int64_t>(t)});
  }

  // canonical order: lexicographic on the point, roles only break exact
  // duplicates so the sort is a total order
  std::sort(mix.begin(), mix.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    if (a.second.is_test != b.second.is_test) return b.second.is_test;
    return a.second.orig_index < b.second.orig_index;
  });

  out.unlabeled_mix.reserve(mix.size());
  out.roles.reserve(mix.size());
  for (auto& [point, role] : mix) {
    out.unlabeled_mix.push_back(std::move(point));
    out.roles.push_back(role);
  }
  out.cal_count = static_cast<std::size_t>(l);
  out.test_count = tests.size();
  return out;
}

// PU classifier fit: train nulls labeled 0, the unlabeled pool labeled 1.
// The score is the forest's class-1 probability, so larger means further
// from the local null distribution.
inline RandomForest train_score_model(const PUDataset& data, const ForestConfig& cfg,
                                      std::uint64_t seed) {
  if (data.dim == 0) throw std::invalid_argument("train_score_model: zero-dimensional data");
  FeatureMatrix x(data.dim);
  std::vector<std::uint8_t> y;
  y.reserve(data.train_nulls.size() + data.unlabeled_mix.size());
  for (const auto& row : data.train_nulls) {
    if (row.size() != data.dim) throw std::invalid_argument("train_score_model: dimension mismatch");
    x.add_row(row);
    y.push_back(0);
  }
  for (const auto& row : data.unlabeled_mix) {
    if (row.size() != data.dim) throw std::invalid_argument("train_score_model: dimension mismatch");
    x.add_row(row);
    y.push_back(1);
  }
  return train_forest(x, y, cfg, seed);
}

// Composite non-conformity score: the local model's view or any remote
// surrogate's, whichever flags the point harder. An empty remote list
// degenerates to the plain local score.
inline double composite_score(const RandomForest& local, std::span<const RandomForest> remotes,
                              std::span<const double> point) {
  double best = local.evaluate(point);
  for (const auto& r : remotes) best = std::max(best, r.evaluate(point));
  return best;
}

namespace detail {

// Local view of a mix point, out-of-bag with respect to the local model's
// bootstrap. Mix row i sits at training row k + i (train nulls come first),
// so a freshly trained local model can score its own calibration and test
// members without the in-bag memorization bump.
inline double composite_score_oob(const RandomForest& local,
                                  std::span<const RandomForest> remotes,
                                  std::span<const double> point, std::size_t training_row) {
  double best = local.evaluate_oob(point, training_row);
  for (const auto& r : remotes) best = std::max(best, r.evaluate(point));
  return best;
}

}  // namespace detail

// Composite scores for a block, split back into calibration and test lanes.
// test_scores[i] belongs to original test point i.
struct ScoredBlock {
  std::vector<double> calibration_scores;
  std::vector<double> test_scores;
};

inline ScoredBlock score_block(const RandomForest& local, std::span<const RandomForest> remotes,
                               const PUDataset& data) {
  ScoredBlock out;
  out.calibration_scores.reserve(data.cal_count);
  out.test_scores.assign(data.test_count, 0.0);
  const std::size_t row_offset = data.train_nulls.size();
  for (std::size_t i = 0; i < data.unlabeled_mix.size(); ++i) {
    const double s =
        detail::composite_score_oob(local, remotes, data.unlabeled_mix[i], row_offset + i);
    if (data.roles[i].is_test) {
      out.test_scores[static_cast<std::size_t>(data.roles[i].orig_index)] = s;
    } else {
      out.calibration_scores.push_back(s);
    }
  }
  return out;
}

// Empirical p-values for every test point of a scored block, in original
// test order.
inline std::vector<Rational> block_pvalues(const ScoredBlock& scored) {
  std::vector<Rational> out;
  out.reserve(scored.test_scores.size());
  for (double s : scored.test_scores) {
    out.push_back(empirical_pvalue(s, scored.calibration_scores));
  }
  return out;
}

}  // namespace confex
