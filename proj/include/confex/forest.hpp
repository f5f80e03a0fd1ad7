#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "confex/rng.hpp"

namespace confex {

inline constexpr std::uint16_t kLeafSentinel = 0xFFFF;
inline constexpr std::uint8_t kLearnerRandomForest = 1;

struct ForestConfig {
  int n_trees = 100;
  int max_depth = 8;  // <= 0 grows to purity
  int min_leaf = 5;
  int mtry = 0;  // features tried per split; 0 = ceil(sqrt(dim))
  // Laplace-smoothed leaf probabilities (ones+1)/(n+2). Keeps a leaf that
  // memorized one bootstrap row from claiming certainty, which matters when
  // scored points are themselves training members.
  bool smooth_leaves = true;
};

// Flat node record. Internal nodes route on x[feature] < param; leaves carry
// the class-1 vote fraction in param and are flagged by feature == 0xFFFF.
// Children always follow their parent in the array, so index order alone
// proves the tree walk terminates.
struct TreeNode {
  std::uint16_t feature = kLeafSentinel;
  std::uint16_t left = 0;
  std::uint16_t right = 0;
  double param = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const {
    std::size_t i = 0;
    while (nodes[i].feature != kLeafSentinel) {
      i = x[nodes[i].feature] < nodes[i].param ? nodes[i].left : nodes[i].right;
    }
    return nodes[i].param;
  }
};

// Row-major feature storage.
class FeatureMatrix {
 public:
  explicit FeatureMatrix(std::size_t cols) : cols_(cols) {}

  void add_row(std::span<const double> row) {
    if (row.size() != cols_) throw std::invalid_argument("FeatureMatrix: row width mismatch");
    data_.insert(data_.end(), row.begin(), row.end());
    ++rows_;
  }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data_.data() + i * cols_, cols_);
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

 private:
  std::vector<double> data_;
  std::size_t cols_ = 0;
  std::size_t rows_ = 0;
};

// Score model: bagged trees voting the probability that a point belongs to
// the unlabeled class. Evaluation is a pure function of (params, point);
// training is a pure function of (data, config, seed).
struct RandomForest {
  std::uint8_t learner_id = kLearnerRandomForest;
  std::uint16_t dim = 0;           // declared input width; 0 = accept any wide-enough point
  std::uint16_t required_dim = 0;  // minimum width the tree walks actually touch
  std::uint64_t train_seed = 0;
  std::vector<Tree> trees;

  // per-tree in-bag row bitmaps, kept only on freshly trained models; they
  // enable out-of-bag scoring of training members and never cross the wire
  std::vector<std::vector<std::uint64_t>> inbag;
  std::size_t train_rows = 0;

  double evaluate(std::span<const double> x) const {
    if (trees.empty()) throw std::invalid_argument("RandomForest: no trees");
    check_point(x);
    double sum = 0.0;
    for (const auto& t : trees) sum += t.predict(x);
    return sum / static_cast<double>(trees.size());
  }

  // Score for a point that was itself a training row: average only the trees
  // whose bootstrap missed it. A model without in-bag records (hand-built or
  // reconstructed from the wire) falls back to the plain average, as does the
  // rare row that every bootstrap happened to include.
  double evaluate_oob(std::span<const double> x, std::size_t training_row) const {
    if (trees.empty()) throw std::invalid_argument("RandomForest: no trees");
    check_point(x);
    if (inbag.empty() || training_row >= train_rows) return evaluate(x);
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t t = 0; t < trees.size(); ++t) {
      if (inbag[t][training_row >> 6] & (std::uint64_t{1} << (training_row & 63))) continue;
      sum += trees[t].predict(x);
      ++used;
    }
    if (used == 0) return evaluate(x);
    return sum / static_cast<double>(used);
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& t : trees) n += t.nodes.size();
    return n;
  }

  void check_point(std::span<const double> x) const {
    if (dim != 0 && x.size() != dim) {
      throw std::invalid_argument("RandomForest: point dimension mismatch");
    }
    if (x.size() < required_dim) {
      throw std::invalid_argument("RandomForest: point narrower than model features");
    }
  }

  void refresh_required_dim() {
    std::uint16_t need = 0;
    for (const auto& t : trees) {
      for (const auto& n : t.nodes) {
        if (n.feature != kLeafSentinel && n.feature + 1 > need) {
          need = static_cast<std::uint16_t>(n.feature + 1);
        }
      }
    }
    required_dim = need;
  }
};

namespace detail {

struct SplitChoice {
  bool found = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  // split quality as the exact fraction num/den; compared cross-multiplied
  std::int64_t num = 0;
  std::int64_t den = 1;
};

inline bool split_improves(const SplitChoice& cand, const SplitChoice& best) {
  if (!best.found) return true;
  // strictly-greater quality wins; scan order (ascending feature, ascending
  // threshold) resolves exact ties toward the lowest feature and threshold
  return static_cast<__int128>(cand.num) * best.den > static_cast<__int128>(best.num) * cand.den;
}

class TreeBuilder {
 public:
  TreeBuilder(const FeatureMatrix& x, const std::vector<std::uint8_t>& y,
              const ForestConfig& cfg, std::size_t mtry, Rng& rng)
      : x_(x), y_(y), cfg_(cfg), mtry_(mtry), rng_(rng) {
    feature_pool_.resize(x.cols());
    for (std::size_t f = 0; f < x.cols(); ++f) feature_pool_[f] = f;
  }

  Tree build(std::vector<std::size_t> rows) {
    tree_.nodes.clear();
    grow(std::move(rows), 0);
    return std::move(tree_);
  }

 private:
  std::size_t grow(std::vector<std::size_t> rows, int depth) {
    const std::size_t id = tree_.nodes.size();
    tree_.nodes.emplace_back();

    const std::int64_t n = static_cast<std::int64_t>(rows.size());
    std::int64_t ones = 0;
    for (std::size_t r : rows) ones += y_[r];

    const bool depth_capped = cfg_.max_depth > 0 && depth >= cfg_.max_depth;
    const bool splittable = n >= 2 * cfg_.min_leaf && ones != 0 && ones != n &&
                            tree_.nodes.size() < kLeafSentinel - 2u && !depth_capped;

    SplitChoice best;
    if (splittable) best = find_split(rows, ones);

    if (!best.found) {
      tree_.nodes[id].feature = kLeafSentinel;
      tree_.nodes[id].param = cfg_.smooth_leaves
                                  ? static_cast<double>(ones + 1) / static_cast<double>(n + 2)
                                  : static_cast<double>(ones) / static_cast<double>(n);
      return id;
    }

    std::vector<std::size_t> left_rows, right_rows;
    left_rows.reserve(rows.size());
    right_rows.reserve(rows.size());
    for (std::size_t r : rows) {
      (x_.row(r)[best.feature] < best.threshold ? left_rows : right_rows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();

    const std::size_t left_id = grow(std::move(left_rows), depth + 1);
    const std::size_t right_id = grow(std::move(right_rows), depth + 1);
    if (right_id >= kLeafSentinel) {
      throw std::length_error("train_forest: tree exceeds 16-bit node index space");
    }
    tree_.nodes[id].feature = static_cast<std::uint16_t>(best.feature);
    tree_.nodes[id].param = best.threshold;
    tree_.nodes[id].left = static_cast<std::uint16_t>(left_id);
    tree_.nodes[id].right = static_cast<std::uint16_t>(right_id);
    return id;
  }

  SplitChoice find_split(const std::vector<std::size_t>& rows, std::int64_t ones_total) {
    // partial Fisher-Yates, then ascending scan for deterministic tie-breaks
    for (std::size_t i = 0; i < mtry_; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng_.below(feature_pool_.size() - i));
      std::swap(feature_pool_[i], feature_pool_[j]);
    }
    std::sort(feature_pool_.begin(), feature_pool_.begin() + static_cast<std::ptrdiff_t>(mtry_));

    const std::int64_t n = static_cast<std::int64_t>(rows.size());
    SplitChoice best;
    for (std::size_t fi = 0; fi < mtry_; ++fi) {
      const std::size_t f = feature_pool_[fi];
      scratch_.clear();
      for (std::size_t r : rows) scratch_.push_back({x_.row(r)[f], y_[r]});
      std::sort(scratch_.begin(), scratch_.end(),
                [](const auto& a, const auto& b) { return a.value < b.value; });

      std::int64_t ones_left = 0;
      for (std::int64_t i = 0; i + 1 < n; ++i) {
        ones_left += scratch_[static_cast<std::size_t>(i)].label;
        const std::int64_t n_left = i + 1;
        const std::int64_t n_right = n - n_left;
        if (n_left < cfg_.min_leaf) continue;
        if (n_right < cfg_.min_leaf) break;
        const double v = scratch_[static_cast<std::size_t>(i)].value;
        const double w = scratch_[static_cast<std::size_t>(i + 1)].value;
        if (!(v < w)) continue;  // candidates only between distinct values

        // Gini split quality, left as the exact fraction
        //   (sL*nR + sR*nL) / (nL*nR),  s = ones^2 + zeros^2,
        // so equal-quality candidates compare exactly, not by float luck.
        const std::int64_t zeros_left = n_left - ones_left;
        const std::int64_t ones_right = ones_total - ones_left;
        const std::int64_t zeros_right = n_right - ones_right;
        const std::int64_t s_left = ones_left * ones_left + zeros_left * zeros_left;
        const std::int64_t s_right = ones_right * ones_right + zeros_right * zeros_right;

        SplitChoice cand;
        cand.found = true;
        cand.feature = f;
        cand.threshold = v + (w - v) / 2.0;
        cand.num = s_left * n_right + s_right * n_left;
        cand.den = n_left * n_right;
        if (split_improves(cand, best)) best = cand;
      }
    }
    return best;
  }

  struct ValueLabel {
    double value;
    std::uint8_t label;
  };

  const FeatureMatrix& x_;
  const std::vector<std::uint8_t>& y_;
  const ForestConfig& cfg_;
  std::size_t mtry_;
  Rng& rng_;
  std::vector<std::size_t> feature_pool_;
  std::vector<ValueLabel> scratch_;
  Tree tree_;
};

}  // namespace detail

inline RandomForest train_forest(const FeatureMatrix& x, const std::vector<std::uint8_t>& y,
                                 const ForestConfig& cfg, std::uint64_t seed) {
  if (x.rows() == 0 || x.cols() == 0) throw std::invalid_argument("train_forest: empty data");
  if (x.rows() != y.size()) throw std::invalid_argument("train_forest: label count mismatch");
  if (x.cols() >= kLeafSentinel) throw std::invalid_argument("train_forest: too many features");
  if (cfg.n_trees < 1) throw std::invalid_argument("train_forest: need at least one tree");
  if (cfg.min_leaf < 1) throw std::invalid_argument("train_forest: min_leaf must be >= 1");

  const std::size_t mtry =
      cfg.mtry > 0 ? std::min<std::size_t>(static_cast<std::size_t>(cfg.mtry), x.cols())
                   : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(x.cols()))));

  RandomForest model;
  model.dim = static_cast<std::uint16_t>(x.cols());
  model.train_seed = seed;
  model.trees.reserve(static_cast<std::size_t>(cfg.n_trees));

  const std::size_t n = x.rows();
  model.train_rows = n;
  model.inbag.reserve(static_cast<std::size_t>(cfg.n_trees));
  const std::size_t words = (n + 63) / 64;
  for (int t = 0; t < cfg.n_trees; ++t) {
    Rng rng(seed_chain(seed, static_cast<std::uint64_t>(t)));
    std::vector<std::size_t> sample(n);
    std::vector<std::uint64_t> mask(words, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sample[i] = static_cast<std::size_t>(rng.below(n));
      mask[sample[i] >> 6] |= std::uint64_t{1} << (sample[i] & 63);
    }
    model.inbag.push_back(std::move(mask));
    detail::TreeBuilder builder(x, y, cfg, mtry, rng);
    model.trees.push_back(builder.build(std::move(sample)));
  }
  model.refresh_required_dim();
  return model;
}

}  // namespace confex
