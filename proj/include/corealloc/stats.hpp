#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

namespace corealloc {

/// Two-sided p-value 2 * (1 - F_t(|t|; dof)). Infinite |t| maps to 0.
inline double student_t_two_sided_p(double t, double dof) {
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(t)) return 0.0;
  const boost::math::students_t dist(dof);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return std::min(1.0, std::max(0.0, p));
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Sample variance (n - 1 denominator).
inline double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return s / static_cast<double>(v.size() - 1);
}

struct PairedTest {
  double mean_diff = 0.0;
  double sd_diff = 0.0;
  double t = 0.0;
  double p = 1.0;
  std::size_t n = 0;
};

/// Paired two-sided t-test on differences a[i] - b[i].
inline PairedTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  PairedTest out;
  out.n = std::min(a.size(), b.size());
  if (out.n < 2) return out;
  std::vector<double> d(out.n);
  for (std::size_t i = 0; i < out.n; ++i) d[i] = a[i] - b[i];
  out.mean_diff = mean_of(d);
  out.sd_diff = std::sqrt(sample_variance(d));
  if (out.sd_diff == 0.0) {
    out.t = out.mean_diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), out.mean_diff);
    out.p = out.mean_diff == 0.0 ? 1.0 : 0.0;
    return out;
  }
  out.t = out.mean_diff / (out.sd_diff / std::sqrt(static_cast<double>(out.n)));
  out.p = student_t_two_sided_p(out.t, static_cast<double>(out.n - 1));
  return out;
}

/// 64-bit FNV-1a, used for manifest content hashes.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace corealloc
