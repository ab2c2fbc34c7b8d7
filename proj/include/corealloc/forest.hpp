#pragma once

// Embedded selection: random forest regressor with impurity-decrease
// importance and a CV sweep over top-k feature subsets.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "corealloc/error.hpp"
#include "corealloc/ols.hpp"
#include "corealloc/random.hpp"
#include "corealloc/trace.hpp"

namespace corealloc {

struct TreeParams {
  std::optional<std::size_t> max_depth;  // unlimited when empty
  std::size_t min_samples_leaf = 2;
  std::size_t features_per_split = 0;    // 0 selects ceil(sqrt(d))

  std::size_t resolved_features(std::size_t d) const {
    if (min_samples_leaf < 1) throw DataError("tree params: min_samples_leaf must be >= 1");
    if (features_per_split == 0) {
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d)))));
    }
    if (features_per_split > d) {
      throw DataError("tree params: features_per_split " + std::to_string(features_per_split) + " exceeds d=" +
                      std::to_string(d));
    }
    return features_per_split;
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  double value = 0.0;  // mean target of the node's samples
  int left = -1;
  int right = -1;
  std::size_t samples = 0;

  bool is_leaf() const noexcept { return feature < 0; }
};

/// Flat regression tree; node 0 is the root. Rows with x[feature] <= threshold
/// go left.
struct RegressionTree {
  std::vector<TreeNode> nodes;
  std::size_t n_features = 0;

  double predict(std::span<const double> row) const {
    std::size_t at = 0;
    while (!nodes[at].is_leaf()) {
      const auto& n = nodes[at];
      at = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return nodes[at].value;
  }

  std::size_t depth() const {
    std::size_t best = 0;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [at, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (!nodes[at].is_leaf()) {
        stack.emplace_back(static_cast<std::size_t>(nodes[at].left), d + 1);
        stack.emplace_back(static_cast<std::size_t>(nodes[at].right), d + 1);
      }
    }
    return best;
  }

  std::size_t leaves() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const TreeParams& params, std::uint64_t seed)
      : x_(x), y_(y), params_(params), mtry_(params.resolved_features(static_cast<std::size_t>(x.cols()))),
        rng_(seed), importance_(static_cast<std::size_t>(x.cols()), 0.0) {}

  /// Grows a tree over `rows` (repeats allowed). Importance accumulates the
  /// RSS decrease of each split divided by rows.size().
  RegressionTree build(std::vector<std::size_t> rows) {
    rows_ = std::move(rows);
    total_ = static_cast<double>(rows_.size());
    tree_.nodes.clear();
    tree_.n_features = static_cast<std::size_t>(x_.cols());
    grow(0, rows_.size(), 0);
    return std::move(tree_);
  }

  const std::vector<double>& importance() const noexcept { return importance_; }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };

  int grow(std::size_t begin, std::size_t end, std::size_t depth) {
    const std::size_t n = end - begin;
    double sum = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      const double v = y_(static_cast<Eigen::Index>(rows_[i]));
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back(TreeNode{-1, 0.0, sum / static_cast<double>(n), -1, -1, n});

    const bool depth_ok = !params_.max_depth || depth < *params_.max_depth;
    if (!depth_ok || n < 2 * params_.min_samples_leaf || lo == hi) return id;

    const Split best = find_split(begin, end, sum);
    if (best.feature < 0 || !(best.gain > 0.0)) return id;

    const auto col = static_cast<Eigen::Index>(best.feature);
    const auto mid = std::stable_partition(rows_.begin() + static_cast<std::ptrdiff_t>(begin),
                                           rows_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t r) {
                                             return x_(static_cast<Eigen::Index>(r), col) <= best.threshold;
                                           });
    const auto split_at = static_cast<std::size_t>(mid - rows_.begin());
    importance_[static_cast<std::size_t>(best.feature)] += best.gain / total_;
    const int left = grow(begin, split_at, depth + 1);
    const int right = grow(split_at, end, depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = left;
    node.right = right;
    return id;
  }

  /// Candidate features are visited in random order until `mtry` non-constant
  /// ones have been scored and a valid split exists.
  Split find_split(std::size_t begin, std::size_t end, double sum) {
    const std::size_t n = end - begin;
    const std::size_t d = static_cast<std::size_t>(x_.cols());
    const std::size_t leaf = params_.min_samples_leaf;
    // Targets are centred on the node mean, so the RSS decrease of a split
    // with left sum L reduces to L^2 (1/nl + 1/nr) without cancellation.
    const double mean = sum / static_cast<double>(n);
    double spread = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const double v = y_(static_cast<Eigen::Index>(rows_[i])) - mean;
      spread += v * v;
    }
    const double tol = 1e-12 * std::max(spread, std::numeric_limits<double>::min());

    order_.resize(d);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pairs_.resize(n);
    Split best;
    std::size_t scored = 0;
    for (std::size_t visited = 0; visited < d; ++visited) {
      if (scored >= mtry_ && best.feature >= 0) break;
      std::swap(order_[visited], order_[visited + uniform_index(rng_, d - visited)]);
      const std::size_t f = order_[visited];
      const auto col = static_cast<Eigen::Index>(f);
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(rows_[begin + i]);
        pairs_[i] = {x_(r, col), y_(r) - mean};
      }
      std::sort(pairs_.begin(), pairs_.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      if (pairs_.front().first == pairs_.back().first) continue;  // constant in this node
      ++scored;
      double left_sum = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_sum += pairs_[i].second;
        const std::size_t nl = i + 1;
        const std::size_t nr = n - nl;
        if (pairs_[i].first == pairs_[i + 1].first) continue;
        if (nl < leaf || nr < leaf) continue;
        const double gain = left_sum * left_sum * (1.0 / static_cast<double>(nl) + 1.0 / static_cast<double>(nr));
        const double a = pairs_[i].first;
        const double b = pairs_[i + 1].first;
        double thr = a + (b - a) / 2.0;
        if (!(thr < b)) thr = a;
        if (best.feature < 0 || gain > best.gain + tol ||
            (gain >= best.gain - tol &&
             (static_cast<int>(f) < best.feature || (static_cast<int>(f) == best.feature && thr < best.threshold)))) {
          best = Split{static_cast<int>(f), thr, gain};
        }
      }
    }
    if (best.feature >= 0) best.gain = std::max(0.0, best.gain);
    return best;
  }

  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  const TreeParams& params_;
  std::size_t mtry_;
  Rng rng_;
  std::vector<std::size_t> rows_;
  std::vector<std::size_t> order_;
  std::vector<std::pair<double, double>> pairs_;
  std::vector<double> importance_;
  RegressionTree tree_;
  double total_ = 1.0;
};

}  // namespace detail

/// n row indices drawn uniformly with replacement.
inline std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DataError("bootstrap: empty dataset");
  Rng rng(seed);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = uniform_index(rng, n);
  return idx;
}

inline FeatureMatrix bootstrap_sample(const FeatureMatrix& data, std::uint64_t seed) {
  const auto idx = bootstrap_indices(data.rows(), seed);
  return data.select_rows(idx);
}

/// Single tree on all rows of (x, y).
inline RegressionTree fit_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const TreeParams& params,
                               std::uint64_t seed) {
  if (x.rows() == 0) throw DataError("fit_tree: empty sample");
  if (x.rows() != y.size()) throw DataError("fit_tree: X and y row counts differ");
  detail::TreeBuilder builder(x, y, params, seed);
  std::vector<std::size_t> rows(static_cast<std::size_t>(x.rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return builder.build(std::move(rows));
}

inline RegressionTree fit_tree(const FeatureMatrix& sample, const TreeParams& params, std::uint64_t seed) {
  return fit_tree(sample.features(), sample.target(), params, seed);
}

struct ForestModel {
  std::vector<RegressionTree> trees;
  std::vector<double> importance;
  std::vector<std::string> feature_names;
  /// Out-of-bag row indices per tree; diagnostics only.
  std::vector<std::vector<std::size_t>> oob_rows;
  std::uint64_t seed = 0;

  std::size_t n_trees() const noexcept { return trees.size(); }
  std::size_t n_features() const noexcept { return importance.size(); }

  double predict(std::span<const double> row) const {
    if (row.size() != n_features()) {
      throw DataError("forest predict: row has " + std::to_string(row.size()) + " values, model expects " +
                      std::to_string(n_features()));
    }
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(row);
    return s / static_cast<double>(trees.size());
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    if (static_cast<std::size_t>(x.cols()) != n_features()) {
      throw DataError("forest predict: X has " + std::to_string(x.cols()) + " columns, model expects " +
                      std::to_string(n_features()));
    }
    Eigen::VectorXd out(x.rows());
    std::vector<double> row(n_features());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = x(r, static_cast<Eigen::Index>(c));
      out(r) = predict(row);
    }
    return out;
  }
};

inline constexpr std::size_t kDefaultTrees = 100;

/// Bagged forest: tree t is grown on bootstrap sample derive_seed(seed, t).
/// Importance I_j = (1/N) sum over trees of split RSS decreases on feature j,
/// each divided by the tree's sample size.
inline ForestModel fit_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::size_t n_trees,
                              const TreeParams& params, std::uint64_t seed, std::vector<std::string> names = {}) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  if (n == 0) throw DataError("fit_forest: empty dataset");
  if (static_cast<std::size_t>(y.size()) != n) throw DataError("fit_forest: X and y row counts differ");
  if (n_trees == 0) throw DataError("fit_forest: n_trees must be >= 1");
  if (d == 0) throw DataError("fit_forest: no features");
  params.resolved_features(d);
  if (names.empty()) {
    for (std::size_t j = 0; j < d; ++j) names.push_back("x" + std::to_string(j));
  }
  if (names.size() != d) throw DataError("fit_forest: feature name count does not match X");

  ForestModel model;
  model.seed = seed;
  model.feature_names = std::move(names);
  model.trees.resize(n_trees);
  model.oob_rows.resize(n_trees);
  std::vector<std::vector<double>> per_tree(n_trees);
  parallel_for(n_trees, [&](std::size_t t) {
    const std::uint64_t tree_seed = derive_seed(seed, t);
    auto rows = bootstrap_indices(n, tree_seed);
    std::vector<bool> in_bag(n, false);
    for (auto r : rows) in_bag[r] = true;
    for (std::size_t r = 0; r < n; ++r) {
      if (!in_bag[r]) model.oob_rows[t].push_back(r);
    }
    detail::TreeBuilder builder(x, y, params, derive_seed(tree_seed, 1));
    model.trees[t] = builder.build(std::move(rows));
    per_tree[t] = builder.importance();
  });
  model.importance.assign(d, 0.0);
  for (const auto& imp : per_tree) {
    for (std::size_t j = 0; j < d; ++j) model.importance[j] += imp[j];
  }
  for (auto& v : model.importance) v /= static_cast<double>(n_trees);
  return model;
}

inline ForestModel fit_forest(const FeatureMatrix& data, std::size_t n_trees, const TreeParams& params,
                              std::uint64_t seed) {
  return fit_forest(data.features(), data.target(), n_trees, params, seed, data.feature_names());
}

/// Feature positions by descending importance; ties go to the lower position.
inline std::vector<std::size_t> importance_ranking(std::span<const double> importance) {
  std::vector<std::size_t> order(importance.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
  return order;
}

/// Mean over folds of held-out MSE of a forest.
inline double forest_kfold_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::size_t folds,
                              std::uint64_t seed, std::size_t n_trees, const TreeParams& params) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto parts = kfold_partition(n, folds, seed);
  double total = 0.0;
  for (std::size_t f = 0; f < parts.size(); ++f) {
    const auto train = complement_rows(n, parts[f]);
    const auto model = fit_forest(take_rows(x, train), take_rows(y, train), n_trees, params, derive_seed(seed, 100 + f));
    const Eigen::VectorXd resid = take_rows(y, parts[f]) - model.predict(take_rows(x, parts[f]));
    total += resid.squaredNorm() / static_cast<double>(parts[f].size());
  }
  return total / static_cast<double>(parts.size());
}

struct TopKOptions {
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  std::size_t n_trees = kDefaultTrees;
  TreeParams params;
  /// best_k is the smallest k whose CV error is within this relative margin
  /// of the minimum.
  double tolerance = 0.05;
};

struct TopKPoint {
  std::size_t k = 0;
  double cv_error = 0.0;
};

struct TopKSelection {
  std::size_t best_k = 0;
  std::vector<std::string> features;  // top best_k names by importance
  std::vector<std::size_t> feature_positions;
  std::vector<TopKPoint> curve;
};

inline TopKSelection select_top_k(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                  const std::vector<std::string>& names, std::span<const double> importance,
                                  std::vector<std::size_t> k_grid, const TopKOptions& opt = {}) {
  const auto d = static_cast<std::size_t>(x.cols());
  if (importance.size() != d || names.size() != d) throw DataError("select_top_k: importance/name arity mismatch");
  if (k_grid.empty()) throw DataError("select_top_k: k_grid is empty");
  for (auto k : k_grid) {
    if (k < 1 || k > d) throw DataError("select_top_k: invalid k=" + std::to_string(k) + " (d=" + std::to_string(d) + ")");
  }
  std::sort(k_grid.begin(), k_grid.end());
  k_grid.erase(std::unique(k_grid.begin(), k_grid.end()), k_grid.end());

  const auto ranking = importance_ranking(importance);
  TopKSelection out;
  out.curve.resize(k_grid.size());
  for (std::size_t g = 0; g < k_grid.size(); ++g) {
    const std::size_t k = k_grid[g];
    Eigen::MatrixXd sub(x.rows(), static_cast<Eigen::Index>(k));
    for (std::size_t c = 0; c < k; ++c) sub.col(static_cast<Eigen::Index>(c)) = x.col(static_cast<Eigen::Index>(ranking[c]));
    TreeParams p = opt.params;
    if (p.features_per_split > k) p.features_per_split = k;
    out.curve[g] = {k, forest_kfold_cv(sub, y, opt.folds, opt.seed, opt.n_trees, p)};
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& pt : out.curve) best = std::min(best, pt.cv_error);
  for (const auto& pt : out.curve) {
    if (pt.cv_error <= best * (1.0 + opt.tolerance)) {
      out.best_k = pt.k;
      break;
    }
  }
  for (std::size_t c = 0; c < out.best_k; ++c) {
    out.feature_positions.push_back(ranking[c]);
    out.features.push_back(names[ranking[c]]);
  }
  return out;
}

inline TopKSelection select_top_k(const FeatureMatrix& data, std::span<const double> importance,
                                  std::vector<std::size_t> k_grid, const TopKOptions& opt = {}) {
  return select_top_k(data.features(), data.target(), data.feature_names(), importance, std::move(k_grid), opt);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const ForestModel& m) {
  nlohmann::json j;
  j["format"] = "corealloc-forest";
  j["version"] = 1;
  j["seed"] = m.seed;
  j["feature_names"] = m.feature_names;
  j["importance"] = m.importance;
  auto& trees = j["trees"] = nlohmann::json::array();
  for (const auto& t : m.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      if (n.is_leaf()) {
        nodes.push_back({{"value", n.value}, {"samples", n.samples}});
      } else {
        nodes.push_back({{"feature", n.feature},
                         {"threshold", n.threshold},
                         {"left", n.left},
                         {"right", n.right},
                         {"value", n.value},
                         {"samples", n.samples}});
      }
    }
    trees.push_back(std::move(nodes));
  }
  return j;
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "corealloc-forest") throw DataError("not a forest model file");
    ForestModel m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    m.importance = j.at("importance").get<std::vector<double>>();
    const auto d = m.importance.size();
    if (m.feature_names.size() != d) throw DataError("forest model: name/importance arity mismatch");
    for (const auto& jt : j.at("trees")) {
      RegressionTree t;
      t.n_features = d;
      for (const auto& jn : jt) {
        TreeNode n;
        n.value = jn.at("value").get<double>();
        n.samples = jn.at("samples").get<std::size_t>();
        if (jn.contains("feature")) {
          n.feature = jn.at("feature").get<int>();
          n.threshold = jn.at("threshold").get<double>();
          n.left = jn.at("left").get<int>();
          n.right = jn.at("right").get<int>();
        }
        t.nodes.push_back(n);
      }
      const auto count = static_cast<int>(t.nodes.size());
      if (count == 0) throw DataError("forest model: empty tree");
      for (const auto& n : t.nodes) {
        if (!n.is_leaf() && (n.feature >= static_cast<int>(d) || n.left <= 0 || n.right <= 0 || n.left >= count ||
                             n.right >= count)) {
          throw DataError("forest model: malformed node");
        }
      }
      m.trees.push_back(std::move(t));
    }
    if (m.trees.empty()) throw DataError("forest model: no trees");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("forest model: ") + e.what());
  }
}

}  // namespace corealloc
