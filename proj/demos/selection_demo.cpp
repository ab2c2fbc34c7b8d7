// Planted-signal selection: y = 3 x1 - 2 x2 + noise with eight distractors.
// Prints forest importances, the top-k curve and the stepwise trace.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "corealloc/corealloc.hpp"

using namespace corealloc;

int main() {
  const Eigen::Index n = 500, d = 10;
  Rng rng(3);
  Eigen::MatrixXd x(n, d);
  Eigen::VectorXd y(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) x(r, c) = standard_normal(rng);
    y(r) = 3.0 * x(r, 0) - 2.0 * x(r, 1) + 0.1 * standard_normal(rng);
  }
  std::vector<std::string> names;
  for (Eigen::Index c = 0; c < d; ++c) names.push_back("x" + std::to_string(c + 1));

  const auto forest = fit_forest(x, y, kDefaultTrees, TreeParams{}, 1, names);
  std::printf("importance (descending):\n");
  for (auto j : importance_ranking(forest.importance)) std::printf("  %-4s %.4f\n", names[j].c_str(), forest.importance[j]);

  TopKOptions opt;
  opt.n_trees = 30;
  opt.seed = 2;
  const auto topk = select_top_k(x, y, names, forest.importance, {1, 2, 3, 5, 10}, opt);
  std::printf("top-k curve:\n");
  for (const auto& pt : topk.curve) std::printf("  k=%-2zu cv=%.4f\n", pt.k, pt.cv_error);
  std::printf("chosen k = %zu\n", topk.best_k);

  const auto trace = backward_stepwise(x, y, names);
  write_stepwise_csv(std::cout, trace);
}
