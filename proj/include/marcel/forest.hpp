#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "marcel/errors.hpp"
#include "marcel/rng.hpp"

namespace marcel {

struct ForestParams {
  int n_trees = 500;
  int max_depth = 0;  // 0 = grow until pure
  int min_samples_leaf = 1;
  double feature_fraction = 1.0 / 3.0;  // per-split subsampling
  bool bootstrap = true;
  std::uint64_t seed = 0;
  int n_threads = 1;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // x[feature] <= threshold goes left
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;  // leaf mean
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // node 0 is the root
};

struct ForestModel {
  ForestParams params;
  std::int32_t n_features = 0;
  std::vector<RegressionTree> trees;
};

namespace detail {

struct SplitChoice {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double sse = 0.0;  // combined child sum of squared errors
};

// Exact best split over the candidate features: sort the node's rows by each
// feature and sweep with prefix sums. Ties keep the first candidate seen, so
// iterating features in ascending order makes the result deterministic.
inline SplitChoice best_split(const std::vector<std::vector<double>>& X,
                              const std::vector<double>& y, const std::vector<int>& rows,
                              const std::vector<int>& features, int min_leaf) {
  SplitChoice best;
  const int n = static_cast<int>(rows.size());
  std::vector<std::pair<double, int>> order(n);
  for (int f : features) {
    for (int i = 0; i < n; ++i) order[i] = {X[rows[i]][f], rows[i]};
    std::sort(order.begin(), order.end());
    double sum_left = 0, sumsq_left = 0;
    double sum_right = 0, sumsq_right = 0;
    for (int i = 0; i < n; ++i) {
      const double v = y[order[i].second];
      sum_right += v;
      sumsq_right += v * v;
    }
    for (int i = 0; i + 1 < n; ++i) {
      const double v = y[order[i].second];
      sum_left += v;
      sumsq_left += v * v;
      sum_right -= v;
      sumsq_right -= v * v;
      if (order[i].first == order[i + 1].first) continue;  // can't separate equal values
      const int nl = i + 1, nr = n - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      const double sse = (sumsq_left - sum_left * sum_left / nl) +
                         (sumsq_right - sum_right * sum_right / nr);
      if (!best.found || sse < best.sse) {
        best.found = true;
        best.feature = f;
        best.threshold = 0.5 * (order[i].first + order[i + 1].first);
        best.sse = sse;
      }
    }
  }
  return best;
}

inline RegressionTree fit_tree(const std::vector<std::vector<double>>& X,
                               const std::vector<double>& y, const ForestParams& params,
                               std::uint64_t tree_seed) {
  Rng rng(tree_seed);
  const int m = static_cast<int>(X.size());
  const int k = static_cast<int>(X[0].size());
  const int m_try =
      std::max(1, std::min(k, static_cast<int>(std::llround(params.feature_fraction * k))));

  std::vector<int> rows(m);
  if (params.bootstrap) {
    for (int i = 0; i < m; ++i) rows[i] = static_cast<int>(rng.uniform_index(m));
  } else {
    std::iota(rows.begin(), rows.end(), 0);
  }

  RegressionTree tree;
  std::vector<int> all_features(k);
  std::iota(all_features.begin(), all_features.end(), 0);

  auto build = [&](auto&& self, std::vector<int> node_rows, int depth) -> std::int32_t {
    const std::int32_t id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    double mean = 0;
    for (int r : node_rows) mean += y[r];
    mean /= static_cast<double>(node_rows.size());
    tree.nodes[id].value = mean;

    const bool depth_ok = params.max_depth == 0 || depth < params.max_depth;
    bool constant = true;
    for (int r : node_rows)
      if (y[r] != y[node_rows[0]]) {
        constant = false;
        break;
      }
    if (!depth_ok || constant ||
        static_cast<int>(node_rows.size()) < 2 * params.min_samples_leaf)
      return id;

    // per-split feature subsample, drawn then sorted so ties resolve by index
    std::vector<int> candidates;
    if (m_try == k) {
      candidates = all_features;
    } else {
      std::vector<int> pool = all_features;
      for (int i = 0; i < m_try; ++i) {
        const auto j = i + rng.uniform_index(pool.size() - i);
        std::swap(pool[i], pool[j]);
      }
      candidates.assign(pool.begin(), pool.begin() + m_try);
      std::sort(candidates.begin(), candidates.end());
    }

    const SplitChoice split = best_split(X, y, node_rows, candidates, params.min_samples_leaf);
    if (!split.found) return id;

    std::vector<int> left_rows, right_rows;
    for (int r : node_rows)
      (X[r][split.feature] <= split.threshold ? left_rows : right_rows).push_back(r);
    node_rows.clear();
    node_rows.shrink_to_fit();

    tree.nodes[id].feature = split.feature;
    tree.nodes[id].threshold = split.threshold;
    const std::int32_t left = self(self, std::move(left_rows), depth + 1);
    tree.nodes[id].left = left;
    const std::int32_t right = self(self, std::move(right_rows), depth + 1);
    tree.nodes[id].right = right;
    return id;
  };
  build(build, std::move(rows), 0);
  return tree;
}

}  // namespace detail

inline ForestModel fit_forest(const std::vector<std::vector<double>>& X,
                              const std::vector<double>& y, const ForestParams& params = {}) {
  if (X.size() < 2) throw InvalidArgument("need at least two training rows");
  if (X.size() != y.size())
    throw ShapeMismatch(std::to_string(X.size()) + " rows vs " + std::to_string(y.size()) +
                        " targets");
  const std::size_t k = X[0].size();
  if (k == 0) throw InvalidArgument("feature matrix has no columns");
  for (const auto& row : X)
    if (row.size() != k) throw ShapeMismatch("ragged feature matrix");
  for (double v : y)
    if (!std::isfinite(v)) throw DataError("non-finite training target");
  if (params.n_trees < 1) throw InvalidArgument("n_trees must be >= 1");
  if (params.min_samples_leaf < 1) throw InvalidArgument("min_samples_leaf must be >= 1");
  if (!(params.feature_fraction > 0) || params.feature_fraction > 1)
    throw InvalidArgument("feature_fraction must be in (0, 1]");

  ForestModel model;
  model.params = params;
  model.n_features = static_cast<std::int32_t>(k);
  model.trees.resize(params.n_trees);

  // trees are independent; each gets its own derived seed, so the result is
  // the same no matter how the work is scheduled
  auto fit_range = [&](int lo, int hi) {
    for (int t = lo; t < hi; ++t)
      model.trees[t] = detail::fit_tree(X, y, params, derive_seed(params.seed, t));
  };
  const int threads = std::max(1, params.n_threads);
  if (threads == 1) {
    fit_range(0, params.n_trees);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (params.n_trees + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int lo = t * chunk, hi = std::min(params.n_trees, lo + chunk);
      if (lo < hi) pool.emplace_back(fit_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  return model;
}

inline double predict_tree(const RegressionTree& tree, const std::vector<double>& x) {
  std::int32_t node = 0;
  while (tree.nodes[node].feature >= 0) {
    const TreeNode& nd = tree.nodes[node];
    node = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
  }
  return tree.nodes[node].value;
}

inline double predict_forest_one(const ForestModel& model, const std::vector<double>& x) {
  if (static_cast<std::int32_t>(x.size()) != model.n_features)
    throw ShapeMismatch("row of " + std::to_string(x.size()) + " features, model expects " +
                        std::to_string(model.n_features));
  double acc = 0;
  for (const RegressionTree& t : model.trees) acc += predict_tree(t, x);
  return acc / static_cast<double>(model.trees.size());
}

inline std::vector<double> predict_forest(const ForestModel& model,
                                          const std::vector<std::vector<double>>& X) {
  std::vector<double> out;
  out.reserve(X.size());
  for (const auto& row : X) out.push_back(predict_forest_one(model, row));
  return out;
}

// --- serialization ---------------------------------------------------------
// Little-endian binary layout, versioned by the magic string:
//   "MRCLRF01"
//   i32 n_features, i32 n_trees, i32 max_depth, i32 min_samples_leaf,
//   f64 feature_fraction, u8 bootstrap, u64 seed
//   per tree: u32 node count; per node: i32 feature, i32 left, i32 right,
//             f64 threshold, f64 value

namespace detail {

constexpr char kForestMagic[8] = {'M', 'R', 'C', 'L', 'R', 'F', '0', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  in.read(buf, sizeof(T));
  if (!in) throw DataError("truncated forest model file");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void save_forest(const ForestModel& model, std::ostream& out) {
  out.write(detail::kForestMagic, sizeof(detail::kForestMagic));
  detail::put<std::int32_t>(out, model.n_features);
  detail::put<std::int32_t>(out, static_cast<std::int32_t>(model.trees.size()));
  detail::put<std::int32_t>(out, model.params.max_depth);
  detail::put<std::int32_t>(out, model.params.min_samples_leaf);
  detail::put<double>(out, model.params.feature_fraction);
  detail::put<std::uint8_t>(out, model.params.bootstrap ? 1 : 0);
  detail::put<std::uint64_t>(out, model.params.seed);
  for (const RegressionTree& t : model.trees) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.nodes.size()));
    for (const TreeNode& nd : t.nodes) {
      detail::put<std::int32_t>(out, nd.feature);
      detail::put<std::int32_t>(out, nd.left);
      detail::put<std::int32_t>(out, nd.right);
      detail::put<double>(out, nd.threshold);
      detail::put<double>(out, nd.value);
    }
  }
  if (!out) throw IoError("failed writing forest model");
}

inline ForestModel load_forest(std::istream& in) {
  char magic[sizeof(detail::kForestMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kForestMagic, sizeof(magic)) != 0)
    throw DataError("not a forest model file (bad magic)");
  ForestModel model;
  model.n_features = detail::get<std::int32_t>(in);
  const std::int32_t n_trees = detail::get<std::int32_t>(in);
  if (model.n_features < 1 || n_trees < 1) throw DataError("corrupt forest model header");
  model.params.n_trees = n_trees;
  model.params.max_depth = detail::get<std::int32_t>(in);
  model.params.min_samples_leaf = detail::get<std::int32_t>(in);
  model.params.feature_fraction = detail::get<double>(in);
  model.params.bootstrap = detail::get<std::uint8_t>(in) != 0;
  model.params.seed = detail::get<std::uint64_t>(in);
  model.trees.resize(n_trees);
  for (RegressionTree& t : model.trees) {
    const std::uint32_t count = detail::get<std::uint32_t>(in);
    if (count == 0) throw DataError("corrupt forest model: empty tree");
    t.nodes.resize(count);
    for (TreeNode& nd : t.nodes) {
      nd.feature = detail::get<std::int32_t>(in);
      nd.left = detail::get<std::int32_t>(in);
      nd.right = detail::get<std::int32_t>(in);
      nd.threshold = detail::get<double>(in);
      nd.value = detail::get<double>(in);
      if (nd.feature >= model.n_features)
        throw DataError("corrupt forest model: split feature out of range");
      if (nd.feature >= 0 &&
          (nd.left < 0 || nd.right < 0 || nd.left >= static_cast<std::int32_t>(count) ||
           nd.right >= static_cast<std::int32_t>(count)))
        throw DataError("corrupt forest model: child index out of range");
      if (!std::isfinite(nd.value)) throw DataError("corrupt forest model: non-finite leaf");
    }
  }
  return model;
}

inline void save_forest_file(const ForestModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  save_forest(model, out);
}

inline ForestModel load_forest_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return load_forest(in);
}

}  // namespace marcel
