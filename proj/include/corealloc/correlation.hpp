#pragma once

// Filter stage: Pearson correlation between per-core temperature series,
// per-core correlation scores, and the allocators built on them.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "corealloc/error.hpp"
#include "corealloc/random.hpp"
#include "corealloc/trace.hpp"

namespace corealloc {

struct PearsonResult {
  double r = 0.0;
  /// Set when either series has zero variance; r is then defined as 0.
  bool degenerate = false;
};

/// Two-pass Pearson coefficient, clamped to [-1, 1].
inline PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw DataError("pearson: series lengths differ (" + std::to_string(x.size()) + " vs " +
                    std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) throw DataError("pearson: need at least 2 samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double dx = x[k] - mx;
    const double dy = y[k] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return {0.0, true};
  const double r = sxy / (std::sqrt(sxx) * std::sqrt(syy));
  return {std::clamp(r, -1.0, 1.0), false};
}

/// Symmetric m x m matrix of pairwise core correlations.
struct CorrelationMatrix {
  Eigen::MatrixXd r;
  std::vector<int> core_ids;
  std::vector<bool> degenerate;
  std::size_t samples = 0;

  std::size_t cores() const noexcept { return static_cast<std::size_t>(r.rows()); }

  /// Wraps an explicit coefficient matrix; core ids default to 0..m-1.
  static CorrelationMatrix from_values(Eigen::MatrixXd values, std::vector<int> ids = {}) {
    if (values.rows() != values.cols()) throw DataError("correlation matrix must be square");
    CorrelationMatrix c;
    c.r = std::move(values);
    if (ids.empty()) {
      ids.resize(static_cast<std::size_t>(c.r.rows()));
      std::iota(ids.begin(), ids.end(), 0);
    }
    c.core_ids = std::move(ids);
    c.degenerate.assign(c.core_ids.size(), false);
    return c;
  }
};

/// Correlation over the full buffer, or over the last `window` samples.
inline CorrelationMatrix correlation_matrix(const TemperatureBuffer& buffer, std::size_t window = 0) {
  const std::size_t used = (window == 0 || window > buffer.size()) ? buffer.size() : window;
  if (used < 2) {
    throw DataError("correlation_matrix: insufficient samples (" + std::to_string(used) + ", need 2)");
  }
  const std::size_t m = buffer.cores();
  std::vector<std::vector<double>> series(m);
  for (std::size_t i = 0; i < m; ++i) series[i] = buffer.series(i, used);

  CorrelationMatrix out;
  out.r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  out.core_ids = buffer.core_ids();
  out.degenerate.assign(m, false);
  out.samples = used;
  for (std::size_t i = 0; i < m; ++i) {
    const auto self = pearson(series[i], series[i]);
    out.degenerate[i] = self.degenerate;
    out.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = self.degenerate ? 0.0 : 1.0;
    for (std::size_t j = i + 1; j < m; ++j) {
      const double rij = pearson(series[i], series[j]).r;
      out.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rij;
      out.r(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = rij;
    }
  }
  return out;
}

/// s_i: mean absolute correlation of core i with every other core.
inline std::vector<double> correlation_scores(const CorrelationMatrix& corr) {
  const std::size_t m = corr.cores();
  if (m < 2) throw DataError("correlation_scores: need at least 2 cores");
  std::vector<double> s(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) sum += std::abs(corr.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
    s[i] = sum / static_cast<double>(m - 1);
  }
  return s;
}

/// Positions 0..m-1 ordered by ascending score; ties go to the lower position.
inline std::vector<std::size_t> rank_cores(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return order;
}

enum class AllocationPolicy { Correlation, Random };

inline const char* to_string(AllocationPolicy p) {
  return p == AllocationPolicy::Correlation ? "correlation" : "random";
}

/// Cores chosen for T tasks, in assignment order (task t runs on cores[t]).
struct AllocationPlan {
  std::vector<int> cores;
  /// Scores at decision time, indexed by core position; empty for random plans.
  std::vector<double> scores;
  AllocationPolicy policy = AllocationPolicy::Correlation;
  std::set<int> reserved;
};

inline std::set<int> default_reserved() { return {0}; }

/// First T non-reserved cores of a ranked list.
inline AllocationPlan allocate(std::span<const int> ranked, std::size_t tasks,
                               const std::set<int>& reserved = default_reserved()) {
  AllocationPlan plan;
  plan.policy = AllocationPolicy::Correlation;
  plan.reserved = reserved;
  for (int core : ranked) {
    if (plan.cores.size() == tasks) break;
    if (!reserved.contains(core)) plan.cores.push_back(core);
  }
  if (plan.cores.size() < tasks) {
    throw DataError("allocate: " + std::to_string(tasks) + " tasks exceed " + std::to_string(plan.cores.size()) +
                    " eligible cores");
  }
  return plan;
}

/// Uniform sample without replacement from cores 0..m-1 minus `reserved`.
inline AllocationPlan allocate_random(std::size_t m, std::size_t tasks, const std::set<int>& reserved,
                                      std::uint64_t seed) {
  std::vector<int> eligible;
  for (int c = 0; c < static_cast<int>(m); ++c) {
    if (!reserved.contains(c)) eligible.push_back(c);
  }
  if (tasks > eligible.size()) {
    throw DataError("allocate_random: " + std::to_string(tasks) + " tasks exceed " +
                    std::to_string(eligible.size()) + " eligible cores");
  }
  Rng rng(seed);
  // Partial Fisher-Yates: the first `tasks` slots are a uniform sample.
  for (std::size_t i = 0; i < tasks; ++i) {
    std::swap(eligible[i], eligible[i + uniform_index(rng, eligible.size() - i)]);
  }
  AllocationPlan plan;
  plan.policy = AllocationPolicy::Random;
  plan.reserved = reserved;
  plan.cores.assign(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(tasks));
  return plan;
}

/// Full correlation-aware decision from a temperature history.
inline AllocationPlan allocate_by_correlation(const TemperatureBuffer& buffer, std::size_t tasks,
                                              const std::set<int>& reserved = default_reserved(),
                                              std::size_t window = 0) {
  const auto corr = correlation_matrix(buffer, window);
  const auto scores = correlation_scores(corr);
  const auto order = rank_cores(scores);
  std::vector<int> ranked;
  ranked.reserve(order.size());
  for (auto pos : order) ranked.push_back(corr.core_ids[pos]);
  auto plan = allocate(ranked, tasks, reserved);
  plan.scores = scores;
  return plan;
}

/// Records a new reading and recomputes the plan from the updated history.
inline AllocationPlan update_and_reallocate(TemperatureBuffer& buffer, std::span<const double> reading,
                                            std::size_t tasks, const std::set<int>& reserved = default_reserved(),
                                            std::size_t window = 0) {
  buffer.push(reading);
  return allocate_by_correlation(buffer, tasks, reserved, window);
}

// ---------------------------------------------------------------------------
// Export

/// Square CSV with a `core` label column.
inline void write_correlation_csv(std::ostream& out, const CorrelationMatrix& c) {
  out << "core";
  for (int id : c.core_ids) out << ",core_" << id;
  out << '\n';
  for (std::size_t i = 0; i < c.cores(); ++i) {
    out << "core_" << c.core_ids[i];
    for (std::size_t j = 0; j < c.cores(); ++j) {
      out << ',' << format_double(c.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
    out << '\n';
  }
}

/// Long form: one (i, j, r) record per ordered pair.
inline void write_correlation_long_csv(std::ostream& out, const CorrelationMatrix& c) {
  out << "i,j,r\n";
  for (std::size_t i = 0; i < c.cores(); ++i) {
    for (std::size_t j = 0; j < c.cores(); ++j) {
      out << c.core_ids[i] << ',' << c.core_ids[j] << ','
          << format_double(c.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
    }
  }
}

}  // namespace corealloc
