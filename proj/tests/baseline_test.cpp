#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "marcel/fingerprint.hpp"
#include "marcel/forest.hpp"
#include "marcel/rng.hpp"
#include "test_util.hpp"

using namespace marcel;
using testutil::make_molecule;

namespace {

Molecule methane() {
  return make_molecule({"C", "H", "H", "H", "H"},
                       {{0, 1, BondOrder::Single},
                        {0, 2, BondOrder::Single},
                        {0, 3, BondOrder::Single},
                        {0, 4, BondOrder::Single}});
}

Molecule ammonia() {
  return make_molecule({"N", "H", "H", "H"},
                       {{0, 1, BondOrder::Single},
                        {0, 2, BondOrder::Single},
                        {0, 3, BondOrder::Single}});
}

Molecule ethane() {
  std::vector<std::string> el{"C", "C"};
  std::vector<std::tuple<int, int, BondOrder>> bonds{{0, 1, BondOrder::Single}};
  for (int h = 0; h < 6; ++h) {
    el.push_back("H");
    bonds.push_back({h < 3 ? 0 : 1, 2 + h, BondOrder::Single});
  }
  return make_molecule(el, bonds);
}

Molecule aspirin_fragment() {
  // benzene ring with a carboxyl-like tail: enough branching to exercise paths
  std::vector<std::string> el{"C", "C", "C", "C", "C", "C", "C", "O", "O"};
  std::vector<std::tuple<int, int, BondOrder>> bonds;
  for (int i = 0; i < 6; ++i) bonds.push_back({i, (i + 1) % 6, BondOrder::Aromatic});
  bonds.push_back({0, 6, BondOrder::Single});
  bonds.push_back({6, 7, BondOrder::Double});
  bonds.push_back({6, 8, BondOrder::Single});
  return make_molecule(el, bonds);
}

double jaccard(const Fingerprint& a, const Fingerprint& b) {
  int inter = 0, uni = 0;
  for (int i = 0; i < a.nbits; ++i) {
    inter += a.bits[i] & b.bits[i];
    uni += a.bits[i] | b.bits[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

TEST(CircularFp, LengthSchemeAndDeterminism) {
  const Fingerprint fp = circular_fingerprint(methane(), 2, 512);
  EXPECT_EQ(fp.bits.size(), 512u);
  EXPECT_EQ(fp.nbits, 512);
  EXPECT_EQ(fp.scheme, FingerprintScheme::Circular);
  EXPECT_EQ(fp.parameter, 2);
  EXPECT_GT(fp.popcount(), 0);
  EXPECT_EQ(circular_fingerprint(methane(), 2, 512).bits, fp.bits);
}

TEST(CircularFp, PermutationInvariant) {
  Rng rng(314);
  for (const Molecule& mol : {methane(), ethane(), aspirin_fragment()}) {
    const Fingerprint base = circular_fingerprint(mol, 3, 1024);
    for (int trial = 0; trial < 100; ++trial) {
      const auto perm = testutil::random_permutation(mol.atom_count(), rng);
      const Molecule shuffled = testutil::permute_molecule(mol, perm);
      EXPECT_EQ(circular_fingerprint(shuffled, 3, 1024).bits, base.bits);
    }
  }
}

TEST(CircularFp, RadiusZeroSeparatesDifferentRootAtoms) {
  const Fingerprint ch4 = circular_fingerprint(methane(), 0, 2048);
  const Fingerprint nh3 = circular_fingerprint(ammonia(), 0, 2048);
  EXPECT_NE(ch4.bits, nh3.bits);
}

TEST(CircularFp, MethaneEthaneOverlapButDiffer) {
  const Fingerprint a = circular_fingerprint(methane(), 1, 2048);
  const Fingerprint b = circular_fingerprint(ethane(), 1, 2048);
  const double j = jaccard(a, b);
  EXPECT_LT(j, 1.0);
  EXPECT_GT(j, 0.0);  // the lone-H environment is shared
}

TEST(PathFp, SingleAtomIsAllZero) {
  const Fingerprint fp = path_fingerprint(make_molecule({"Ne"}, {}), 7, 256);
  EXPECT_EQ(fp.popcount(), 0);
}

TEST(PathFp, SingleBondSetsExactlyOneBit) {
  const Fingerprint fp =
      path_fingerprint(make_molecule({"C", "O"}, {{0, 1, BondOrder::Single}}), 7, 2048);
  EXPECT_EQ(fp.popcount(), 1);
}

TEST(PathFp, ReversedChainHashesIdentically) {
  const Molecule abc = make_molecule({"C", "N", "O"},
                                     {{0, 1, BondOrder::Single}, {1, 2, BondOrder::Double}});
  const Molecule cba = make_molecule({"O", "N", "C"},
                                     {{0, 1, BondOrder::Double}, {1, 2, BondOrder::Single}});
  EXPECT_EQ(path_fingerprint(abc, 7, 2048).bits, path_fingerprint(cba, 7, 2048).bits);
}

TEST(PathFp, PermutationInvariant) {
  Rng rng(2718);
  for (const Molecule& mol : {ethane(), aspirin_fragment()}) {
    const Fingerprint base = path_fingerprint(mol, 5, 1024);
    for (int trial = 0; trial < 100; ++trial) {
      const auto perm = testutil::random_permutation(mol.atom_count(), rng);
      EXPECT_EQ(path_fingerprint(testutil::permute_molecule(mol, perm), 5, 1024).bits, base.bits);
    }
  }
}

TEST(Fingerprints, BaselineFeatureRowConcatenates) {
  const std::vector<double> row = baseline_features(ethane(), 2, 512, 5, 256);
  EXPECT_EQ(row.size(), 512u + 256u);
  for (double v : row) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

// --- correlation pruning ------------------------------------------------

double pearson(const std::vector<std::vector<double>>& X, std::size_t a, std::size_t b) {
  const std::size_t m = X.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < m; ++i) {
    ma += X[i][a];
    mb += X[i][b];
  }
  ma /= m;
  mb /= m;
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < m; ++i) {
    num += (X[i][a] - ma) * (X[i][b] - mb);
    da += (X[i][a] - ma) * (X[i][a] - ma);
    db += (X[i][b] - mb) * (X[i][b] - mb);
  }
  return num / std::sqrt(da * db);
}

TEST(Prune, IdenticalColumnDropped) {
  std::vector<std::vector<double>> X{{1, 1, 0}, {2, 2, 1}, {3, 3, 0}, {4, 4, 1}};
  EXPECT_EQ(prune_correlated(X, 0.9), (std::vector<uint8_t>{1, 0, 1}));
}

TEST(Prune, AntiCorrelatedColumnDropped) {
  std::vector<std::vector<double>> X{{1, -1}, {2, -2}, {5, -5}, {3, -3}};
  EXPECT_EQ(prune_correlated(X, 0.9), (std::vector<uint8_t>{1, 0}));
}

TEST(Prune, ConstantColumnsDroppedFirstNonConstantKept) {
  std::vector<std::vector<double>> X{{7, 1, 2}, {7, 2, 1}, {7, 3, 5}};
  const auto mask = prune_correlated(X, 0.9);
  EXPECT_EQ(mask[0], 0);
  EXPECT_EQ(mask[1], 1);  // first non-constant column always survives
}

TEST(Prune, IndependentColumnsAllKept) {
  Rng rng(99);
  std::vector<std::vector<double>> X(200, std::vector<double>(4));
  for (auto& row : X)
    for (double& v : row) v = rng.normal();
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) ASSERT_LT(std::abs(pearson(X, a, b)), 0.5);
  EXPECT_EQ(prune_correlated(X, 0.9), (std::vector<uint8_t>{1, 1, 1, 1}));
}

TEST(Prune, NoisyCopyDropped) {
  Rng rng(7);
  std::vector<std::vector<double>> X(300, std::vector<double>(3));
  for (auto& row : X) {
    row[0] = rng.normal();
    row[1] = rng.normal();
    row[2] = row[0] + 0.25 * rng.normal();  // strongly but not perfectly correlated
  }
  const double r = std::abs(pearson(X, 0, 2));
  ASSERT_GT(r, 0.9);
  ASSERT_LT(r, 1.0);
  EXPECT_EQ(prune_correlated(X, 0.9), (std::vector<uint8_t>{1, 1, 0}));
}

TEST(Prune, GreedyResultIsConsistent) {
  Rng rng(555);
  const std::size_t m = 120, k = 12;
  std::vector<std::vector<double>> X(m, std::vector<double>(k));
  for (auto& row : X)
    for (double& v : row) v = rng.normal();
  // plant near-duplicates and a constant
  for (auto& row : X) {
    row[4] = row[1] + 0.05 * rng.normal();
    row[9] = -row[3] + 0.05 * rng.normal();
    row[6] = 2.5;
  }
  const double threshold = 0.9;
  const auto mask = prune_correlated(X, threshold);
  ASSERT_EQ(mask.size(), k);
  EXPECT_EQ(mask[6], 0);
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < k; ++j)
    if (mask[j]) kept.push_back(j);
  // kept columns are pairwise below the threshold
  for (std::size_t a = 0; a < kept.size(); ++a)
    for (std::size_t b = a + 1; b < kept.size(); ++b)
      EXPECT_LE(std::abs(pearson(X, kept[a], kept[b])), threshold);
  // every dropped non-constant column conflicts with an earlier kept one
  for (std::size_t j = 0; j < k; ++j) {
    if (mask[j] || j == 6) continue;
    bool conflict = false;
    for (std::size_t p : kept) {
      if (p >= j) break;
      if (std::abs(pearson(X, p, j)) > threshold) conflict = true;
    }
    EXPECT_TRUE(conflict) << "column " << j << " dropped without cause";
  }
}

TEST(Prune, RejectsBadInput) {
  EXPECT_THROW(prune_correlated({{1.0, 2.0}}, 0.9), InvalidArgument);
  EXPECT_THROW(prune_correlated({{1.0}, {2.0}}, 0.0), InvalidArgument);
  EXPECT_THROW(prune_correlated({{1.0}, {2.0}}, 1.5), InvalidArgument);
  EXPECT_THROW(prune_correlated({{1.0, 2.0}, {1.0}}, 0.9), ShapeMismatch);
}

TEST(Prune, ApplyMaskFiltersColumns) {
  std::vector<std::vector<double>> X{{1, 2, 3}, {4, 5, 6}};
  const auto filtered = apply_keep_mask(X, {1, 0, 1});
  EXPECT_EQ(filtered, (std::vector<std::vector<double>>{{1, 3}, {4, 6}}));
  EXPECT_THROW(apply_keep_mask(X, {1, 0}), ShapeMismatch);
}

// --- random forest ------------------------------------------------------

std::pair<std::vector<std::vector<double>>, std::vector<double>> noisy_regression(
    int m, int k, uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> X(m, std::vector<double>(k));
  std::vector<double> y(m);
  for (int i = 0; i < m; ++i) {
    for (double& v : X[i]) v = rng.uniform(-2.0, 2.0);
    y[i] = 2.0 * X[i][0] - X[i][1] + 0.3 * X[i][2] * X[i][2] + 0.05 * rng.normal();
  }
  return {X, y};
}

TEST(Forest, ConstantTargetPredictsConstant) {
  std::vector<std::vector<double>> X{{0, 1}, {1, 0}, {2, 2}, {3, 1}};
  std::vector<double> y{4.25, 4.25, 4.25, 4.25};
  ForestParams p;
  p.n_trees = 10;
  const ForestModel model = fit_forest(X, y, p);
  for (double v : predict_forest(model, X)) EXPECT_DOUBLE_EQ(v, 4.25);
}

TEST(Forest, SeparableBinaryFeatureFitsExactly) {
  std::vector<std::vector<double>> X;
  std::vector<double> y;
  Rng rng(11);
  for (int i = 0; i < 40; ++i) {
    const double flag = i % 2;
    X.push_back({flag, rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    y.push_back(flag == 0 ? 3.0 : 7.0);
  }
  ForestParams p;
  p.n_trees = 50;
  p.seed = 5;
  // with every feature in play, each tree's first split is the separating one
  p.feature_fraction = 1.0;
  const ForestModel model = fit_forest(X, y, p);
  const std::vector<double> pred = predict_forest(model, X);
  double mae = 0;
  for (std::size_t i = 0; i < y.size(); ++i) mae += std::abs(pred[i] - y[i]);
  mae /= y.size();
  EXPECT_LT(mae, 1e-9);
}

// exhaustive reference: every feature, every midpoint between adjacent
// sorted values, children scored by directly computed sum of squared errors
struct OracleSplit {
  int feature;
  double threshold;
  double sse;
  int n_optima;
};

OracleSplit exhaustive_best_split(const std::vector<std::vector<double>>& X,
                                  const std::vector<double>& y) {
  OracleSplit best{-1, 0, 0, 0};
  const int m = static_cast<int>(X.size());
  const int k = static_cast<int>(X[0].size());
  for (int f = 0; f < k; ++f) {
    std::vector<double> vals;
    for (int i = 0; i < m; ++i) vals.push_back(X[i][f]);
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (std::size_t t = 0; t + 1 < vals.size(); ++t) {
      const double thr = 0.5 * (vals[t] + vals[t + 1]);
      std::vector<double> yl, yr;
      for (int i = 0; i < m; ++i) (X[i][f] <= thr ? yl : yr).push_back(y[i]);
      auto sse = [](const std::vector<double>& v) {
        double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        double s = 0;
        for (double x : v) s += (x - mean) * (x - mean);
        return s;
      };
      const double total = sse(yl) + sse(yr);
      if (best.feature < 0 || total < best.sse - 1e-15) {
        best = {f, thr, total, 1};
      } else if (std::abs(total - best.sse) <= 1e-15) {
        ++best.n_optima;
      }
    }
  }
  return best;
}

TEST(Forest, StumpMatchesExhaustiveSearch) {
  const std::vector<std::vector<double>> X{{0, 5}, {1, 2}, {2, 8}, {3, 1}};
  const std::vector<double> y{0.1, 0.2, 0.9, 1.0};
  const OracleSplit oracle = exhaustive_best_split(X, y);
  ASSERT_EQ(oracle.n_optima, 1) << "test data must have a unique best split";

  ForestParams p;
  p.n_trees = 1;
  p.max_depth = 1;
  p.bootstrap = false;
  p.feature_fraction = 1.0;
  const ForestModel model = fit_forest(X, y, p);
  const TreeNode& root = model.trees[0].nodes[0];
  EXPECT_EQ(root.feature, oracle.feature);
  EXPECT_DOUBLE_EQ(root.threshold, oracle.threshold);
}

TEST(Forest, StumpMatchesExhaustiveSearchRandomized) {
  Rng rng(404);
  for (int trial = 0; trial < 30; ++trial) {
    const int m = 6 + static_cast<int>(rng.uniform_index(8));
    const int k = 1 + static_cast<int>(rng.uniform_index(3));
    std::vector<std::vector<double>> X(m, std::vector<double>(k));
    std::vector<double> y(m);
    for (int i = 0; i < m; ++i) {
      for (double& v : X[i]) v = std::round(rng.uniform(-3.0, 3.0) * 4) / 4;  // force some ties
      y[i] = rng.uniform(-1.0, 1.0);
    }
    const OracleSplit oracle = exhaustive_best_split(X, y);
    if (oracle.feature < 0) continue;  // all feature columns constant

    ForestParams p;
    p.n_trees = 1;
    p.max_depth = 1;
    p.bootstrap = false;
    p.feature_fraction = 1.0;
    const ForestModel model = fit_forest(X, y, p);
    const TreeNode& root = model.trees[0].nodes[0];
    ASSERT_GE(root.feature, 0);
    // with ties the chosen split may differ, but its quality must match
    std::vector<double> yl, yr;
    for (int i = 0; i < m; ++i)
      (X[i][root.feature] <= root.threshold ? yl : yr).push_back(y[i]);
    auto sse = [](const std::vector<double>& v) {
      double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
      double s = 0;
      for (double x : v) s += (x - mean) * (x - mean);
      return s;
    };
    EXPECT_NEAR(sse(yl) + sse(yr), oracle.sse, 1e-9);
  }
}

TEST(Forest, DeterministicGivenSeed) {
  const auto [X, y] = noisy_regression(50, 5, 8);
  ForestParams p;
  p.n_trees = 25;
  p.seed = 42;
  const std::vector<double> a = predict_forest(fit_forest(X, y, p), X);
  const std::vector<double> b = predict_forest(fit_forest(X, y, p), X);
  EXPECT_EQ(a, b);  // bit-exact replay
  p.seed = 43;
  const std::vector<double> c = predict_forest(fit_forest(X, y, p), X);
  EXPECT_NE(a, c);
}

TEST(Forest, ParallelMatchesSerial) {
  const auto [X, y] = noisy_regression(60, 5, 21);
  ForestParams serial;
  serial.n_trees = 16;
  serial.seed = 3;
  ForestParams parallel = serial;
  parallel.n_threads = 4;
  const std::vector<double> a = predict_forest(fit_forest(X, y, serial), X);
  const std::vector<double> b = predict_forest(fit_forest(X, y, parallel), X);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(a[i], b[i]);
}

TEST(Forest, TrainMaeNonIncreasingInDepth) {
  const int depths[] = {1, 2, 4, 8};
  std::vector<double> mean_mae;
  for (int depth : depths) {
    double acc = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
      const auto [X, y] = noisy_regression(80, 6, 1000 + seed);
      ForestParams p;
      p.n_trees = 30;
      p.max_depth = depth;
      p.seed = seed;
      const std::vector<double> pred = predict_forest(fit_forest(X, y, p), X);
      double mae = 0;
      for (std::size_t i = 0; i < y.size(); ++i) mae += std::abs(pred[i] - y[i]);
      acc += mae / y.size();
    }
    mean_mae.push_back(acc / 10.0);
  }
  for (std::size_t d = 1; d < mean_mae.size(); ++d)
    EXPECT_LE(mean_mae[d], mean_mae[d - 1] + 1e-12) << "depth step " << d;
}

TEST(Forest, SerializationRoundTrip) {
  const auto [X, y] = noisy_regression(40, 4, 77);
  ForestParams p;
  p.n_trees = 20;
  p.seed = 9;
  const ForestModel model = fit_forest(X, y, p);

  std::ostringstream out;
  save_forest(model, out);
  std::istringstream in(out.str());
  const ForestModel back = load_forest(in);
  EXPECT_EQ(back.n_features, model.n_features);
  ASSERT_EQ(back.trees.size(), model.trees.size());
  const std::vector<double> a = predict_forest(model, X);
  const std::vector<double> b = predict_forest(back, X);
  EXPECT_EQ(a, b);

  std::string corrupt = out.str();
  corrupt[0] = 'X';
  std::istringstream bad(corrupt);
  EXPECT_THROW(load_forest(bad), DataError);

  std::istringstream truncated(out.str().substr(0, 40));
  EXPECT_THROW(load_forest(truncated), DataError);
}

TEST(Forest, InputValidation) {
  std::vector<std::vector<double>> X{{1, 2}, {3, 4}};
  EXPECT_THROW(fit_forest(X, {1.0}, {}), ShapeMismatch);
  EXPECT_THROW(fit_forest({{1.0, 2.0}}, {1.0}, {}), InvalidArgument);
  EXPECT_THROW(fit_forest(X, {1.0, std::nan("")}, {}), DataError);
  ForestParams bad;
  bad.feature_fraction = 0;
  EXPECT_THROW(fit_forest(X, {1.0, 2.0}, bad), InvalidArgument);
  const ForestModel model = fit_forest(X, {1.0, 2.0}, {});
  EXPECT_THROW(predict_forest_one(model, {1.0}), ShapeMismatch);
}

}  // namespace
