#include "confex/forest.hpp"

#include <gtest/gtest.h>

#include <vector>

#include "confex/rng.hpp"

using namespace confex;

namespace {

// two well-separated 2-d blobs
void make_blobs(FeatureMatrix& x, std::vector<std::uint8_t>& y, std::size_t per_class,
                std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < per_class; ++i) {
    const std::vector<double> row{-5.0 + rng.next_gaussian(), -5.0 + rng.next_gaussian()};
    x.add_row(row);
    y.push_back(0);
  }
  for (std::size_t i = 0; i < per_class; ++i) {
    const std::vector<double> row{5.0 + rng.next_gaussian(), 5.0 + rng.next_gaussian()};
    x.add_row(row);
    y.push_back(1);
  }
}

RandomForest hand_built_stump() {
  RandomForest model;
  model.dim = 1;
  Tree tree;
  tree.nodes.push_back({0, 1, 2, 0.0});
  tree.nodes.push_back({kLeafSentinel, 0, 0, 0.2});
  tree.nodes.push_back({kLeafSentinel, 0, 0, 0.8});
  model.trees.push_back(tree);
  model.refresh_required_dim();
  return model;
}

}  // namespace

TEST(Tree, StumpRoutesOnStrictLess) {
  const RandomForest model = hand_built_stump();
  EXPECT_DOUBLE_EQ(model.evaluate(std::vector<double>{1.0}), 0.8);
  EXPECT_DOUBLE_EQ(model.evaluate(std::vector<double>{-1.0}), 0.2);
  // boundary value goes right: the split is x < threshold
  EXPECT_DOUBLE_EQ(model.evaluate(std::vector<double>{0.0}), 0.8);
}

TEST(Forest, AveragingIdenticalStumpsChangesNothing) {
  RandomForest two = hand_built_stump();
  two.trees.push_back(two.trees.front());
  const RandomForest one = hand_built_stump();
  EXPECT_DOUBLE_EQ(two.evaluate(std::vector<double>{1.0}),
                   one.evaluate(std::vector<double>{1.0}));
}

TEST(Forest, SeparatesWellSeparatedBlobs) {
  FeatureMatrix x(2);
  std::vector<std::uint8_t> y;
  make_blobs(x, y, 50, 11);
  ForestConfig cfg;
  cfg.n_trees = 30;
  const RandomForest model = train_forest(x, y, cfg, 99);
  const double hi = model.evaluate(std::vector<double>{5.0, 5.0});
  const double lo = model.evaluate(std::vector<double>{-5.0, -5.0});
  EXPECT_GT(hi, lo);
  EXPECT_GT(hi, 0.9);
  EXPECT_LT(lo, 0.1);
}

TEST(Forest, ScoresStayInUnitInterval) {
  FeatureMatrix x(3);
  std::vector<std::uint8_t> y;
  Rng rng(5);
  for (int i = 0; i < 80; ++i) {
    x.add_row(std::vector<double>{rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()});
    y.push_back(static_cast<std::uint8_t>(rng.below(2)));
  }
  const RandomForest model = train_forest(x, y, ForestConfig{.n_trees = 20}, 3);
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> p{rng.next_gaussian() * 3, rng.next_gaussian() * 3,
                                rng.next_gaussian() * 3};
    const double s = model.evaluate(p);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Forest, TrainingIsDeterministic) {
  FeatureMatrix x(2);
  std::vector<std::uint8_t> y;
  make_blobs(x, y, 40, 21);
  const RandomForest a = train_forest(x, y, ForestConfig{}, 1234);
  const RandomForest b = train_forest(x, y, ForestConfig{}, 1234);
  ASSERT_EQ(a.trees.size(), b.trees.size());
  for (std::size_t t = 0; t < a.trees.size(); ++t) {
    ASSERT_EQ(a.trees[t].nodes.size(), b.trees[t].nodes.size());
    for (std::size_t n = 0; n < a.trees[t].nodes.size(); ++n) {
      EXPECT_EQ(a.trees[t].nodes[n].feature, b.trees[t].nodes[n].feature);
      EXPECT_EQ(a.trees[t].nodes[n].left, b.trees[t].nodes[n].left);
      EXPECT_EQ(a.trees[t].nodes[n].right, b.trees[t].nodes[n].right);
      EXPECT_EQ(a.trees[t].nodes[n].param, b.trees[t].nodes[n].param);
    }
  }
}

TEST(Forest, SeedChangesTheModel) {
  FeatureMatrix x(2);
  std::vector<std::uint8_t> y;
  make_blobs(x, y, 40, 21);
  const RandomForest a = train_forest(x, y, ForestConfig{}, 1);
  const RandomForest b = train_forest(x, y, ForestConfig{}, 2);
  bool differs = a.trees.size() != b.trees.size();
  for (std::size_t t = 0; !differs && t < a.trees.size(); ++t) {
    differs = a.trees[t].nodes.size() != b.trees[t].nodes.size();
    for (std::size_t n = 0; !differs && n < a.trees[t].nodes.size(); ++n) {
      differs = a.trees[t].nodes[n].param != b.trees[t].nodes[n].param ||
                a.trees[t].nodes[n].feature != b.trees[t].nodes[n].feature;
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Forest, RespectsDepthAndLeafBounds) {
  FeatureMatrix x(2);
  std::vector<std::uint8_t> y;
  make_blobs(x, y, 100, 31);
  ForestConfig cfg;
  cfg.n_trees = 10;
  cfg.max_depth = 3;
  cfg.min_leaf = 10;
  const RandomForest model = train_forest(x, y, cfg, 7);
  for (const auto& tree : model.trees) {
    EXPECT_LE(tree.nodes.size(), 15u);  // depth-3 binary tree
  }
}

TEST(Forest, InputValidation) {
  FeatureMatrix x(2);
  std::vector<std::uint8_t> y;
  EXPECT_THROW(train_forest(x, y, ForestConfig{}, 0), std::invalid_argument);
  x.add_row(std::vector<double>{1.0, 2.0});
  EXPECT_THROW(train_forest(x, y, ForestConfig{}, 0), std::invalid_argument);

  const RandomForest stump = hand_built_stump();
  EXPECT_THROW(stump.evaluate(std::vector<double>{1.0, 2.0}), std::invalid_argument);
}
