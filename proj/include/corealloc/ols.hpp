#pragma once

// Wrapper-stage selection: ordinary least squares with inferential
// statistics, information criteria, K-fold cross-validation and backward
// stepwise elimination driven by coefficient p-values.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "corealloc/error.hpp"
#include "corealloc/random.hpp"
#include "corealloc/stats.hpp"
#include "corealloc/trace.hpp"

namespace corealloc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// OLS fit with intercept. Coefficient vectors are ordered
/// [intercept, slope_1, ..., slope_d]; k counts all of them.
struct RegressionFit {
  std::vector<std::string> feature_names;
  Eigen::VectorXd coef;
  Eigen::VectorXd se;
  Eigen::VectorXd t;
  Eigen::VectorXd p;
  double rss = 0.0;
  double tss = 0.0;
  double r2 = 0.0;
  double adj_r2 = 0.0;
  double sigma2 = 0.0;
  std::size_t n = 0;
  std::size_t k = 0;

  std::size_t dof() const noexcept { return n - k; }
  std::size_t slopes() const noexcept { return k - 1; }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    return (x * coef.tail(static_cast<Eigen::Index>(slopes()))).array() + coef(0);
  }
};

// Formula helpers. Each is the plain textbook expression so callers (and
// tests) can evaluate criteria for arbitrary k, n, L.

/// Gaussian log-likelihood at the MLE of the error variance.
inline double gaussian_log_likelihood(double rss, std::size_t n) {
  if (rss <= 0.0) return kInf;
  const double nn = static_cast<double>(n);
  return -0.5 * nn * (std::log(2.0 * std::numbers::pi) + std::log(rss / nn) + 1.0);
}

inline double aic(double k, double log_likelihood) { return 2.0 * k - 2.0 * log_likelihood; }

inline double bic(double k, double n, double log_likelihood) {
  return k * std::log(n) - 2.0 * log_likelihood;
}

inline double mallows_cp(double rss, double sigma2, double n, double k) {
  return rss / sigma2 - (n - 2.0 * k);
}

/// Adjusted R^2 with `predictors` slope terms (intercept excluded).
inline double adjusted_r2(double r2, double n, double predictors) {
  return 1.0 - (1.0 - r2) * (n - 1.0) / (n - predictors - 1.0);
}

struct CoefficientTest {
  double t = 0.0;
  double p = 1.0;
};

/// t = beta / SE and two-sided p from Student-t with n - k dof. A zero SE
/// (perfect fit) yields a signed infinite t and p = 0; a zero coefficient
/// always gives t = 0, p = 1.
inline CoefficientTest coefficient_test(double beta, double se, double dof) {
  if (beta == 0.0) return {0.0, 1.0};
  if (se == 0.0) return {std::copysign(kInf, beta), 0.0};
  const double t = beta / se;
  return {t, student_t_two_sided_p(t, dof)};
}

inline std::vector<CoefficientTest> t_and_p(const RegressionFit& fit) {
  std::vector<CoefficientTest> out;
  out.reserve(static_cast<std::size_t>(fit.coef.size()));
  for (Eigen::Index i = 0; i < fit.coef.size(); ++i) {
    out.push_back(coefficient_test(fit.coef(i), fit.se(i), static_cast<double>(fit.dof())));
  }
  return out;
}

/// Fits y = b0 + X b by column-pivoted Householder QR on unit-norm columns.
/// Requires n >= d + 2. Throws NumericError naming a dependent column when
/// the design is rank deficient.
inline RegressionFit fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             std::vector<std::string> names = {}) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  if (static_cast<std::size_t>(y.size()) != n) {
    throw DataError("fit_ols: X has " + std::to_string(n) + " rows but y has " + std::to_string(y.size()));
  }
  if (names.empty()) {
    for (std::size_t j = 0; j < d; ++j) names.push_back("x" + std::to_string(j + 1));
  }
  if (names.size() != d) throw DataError("fit_ols: feature name count does not match columns");
  if (n < d + 2) {
    throw DataError("fit_ols: need n >= d + 2 (n=" + std::to_string(n) + ", d=" + std::to_string(d) + ")");
  }
  if (!x.allFinite() || !y.allFinite()) throw DataError("fit_ols: non-finite input");

  const auto k = d + 1;
  const auto kk = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd design(static_cast<Eigen::Index>(n), kk);
  design.col(0).setOnes();
  design.rightCols(static_cast<Eigen::Index>(d)) = x;

  Eigen::VectorXd col_scale(kk);
  for (Eigen::Index j = 0; j < kk; ++j) {
    const double norm = design.col(j).norm();
    if (norm == 0.0) {
      throw NumericError("fit_ols: singular design, column '" + names[static_cast<std::size_t>(j - 1)] +
                         "' is identically zero");
    }
    col_scale(j) = norm;
    design.col(j) /= norm;
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < kk) {
    const auto& perm = qr.colsPermutation().indices();
    std::string culprit = "(intercept)";
    for (Eigen::Index j = qr.rank(); j < kk; ++j) {
      if (perm(j) != 0) {
        culprit = names[static_cast<std::size_t>(perm(j) - 1)];
        break;
      }
    }
    throw NumericError("fit_ols: singular design, column '" + culprit + "' is linearly dependent on the others");
  }

  RegressionFit fit;
  fit.feature_names = std::move(names);
  fit.n = n;
  fit.k = k;
  const Eigen::VectorXd beta_scaled = qr.solve(y);
  fit.coef = beta_scaled.cwiseQuotient(col_scale);

  const Eigen::VectorXd resid = y - design * beta_scaled;
  fit.rss = resid.squaredNorm();
  // Snap round-off residuals of an exact fit to zero so the perfect-fit
  // sentinels apply.
  const double eps_scale = 64.0 * std::numeric_limits<double>::epsilon();
  if (fit.rss <= eps_scale * eps_scale * std::max(1.0, y.squaredNorm())) fit.rss = 0.0;
  fit.tss = (y.array() - y.mean()).square().sum();
  fit.r2 = fit.tss > 0.0 ? 1.0 - fit.rss / fit.tss : (fit.rss == 0.0 ? 1.0 : 0.0);
  fit.adj_r2 = adjusted_r2(fit.r2, static_cast<double>(n), static_cast<double>(d));
  fit.sigma2 = fit.rss / static_cast<double>(n - k);

  // diag((X'X)^-1) from R^-1 of the scaled, permuted design.
  const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(kk, kk).template triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv =
      r.template triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(kk, kk));
  const auto& perm = qr.colsPermutation().indices();
  fit.se.resize(kk);
  for (Eigen::Index j = 0; j < kk; ++j) {
    const Eigen::Index orig = perm(j);
    const double var = fit.sigma2 * r_inv.row(j).squaredNorm() / (col_scale(orig) * col_scale(orig));
    fit.se(orig) = std::sqrt(var);
  }
  fit.t.resize(kk);
  fit.p.resize(kk);
  const auto tests = t_and_p(fit);
  for (Eigen::Index j = 0; j < kk; ++j) {
    fit.t(j) = tests[static_cast<std::size_t>(j)].t;
    fit.p(j) = tests[static_cast<std::size_t>(j)].p;
  }
  return fit;
}

struct ModelMetrics {
  double aic = 0.0;
  double bic = 0.0;
  double cp = 0.0;
  double adj_r2 = 0.0;
};

/// Information criteria for a fit. AIC/BIC count every coefficient plus the
/// error variance; Cp uses `reference_sigma2` (the full model's estimate).
/// A perfect fit (RSS = 0) makes AIC and BIC -inf.
inline ModelMetrics metrics(const RegressionFit& fit, double reference_sigma2) {
  ModelMetrics m;
  const double n = static_cast<double>(fit.n);
  const double k_lik = static_cast<double>(fit.k) + 1.0;
  const double lnl = gaussian_log_likelihood(fit.rss, fit.n);
  m.aic = aic(k_lik, lnl);
  m.bic = bic(k_lik, n, lnl);
  m.cp = reference_sigma2 > 0.0 ? mallows_cp(fit.rss, reference_sigma2, n, static_cast<double>(fit.k))
                                : std::numeric_limits<double>::quiet_NaN();
  m.adj_r2 = fit.adj_r2;
  return m;
}

// ---------------------------------------------------------------------------
// Cross-validation

/// Seeded shuffled partition of n rows into K folds whose sizes differ by at
/// most one.
inline std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, std::size_t folds,
                                                             std::uint64_t seed) {
  if (folds < 2 || folds > n) {
    throw DataError("K-fold needs 2 <= K <= n (K=" + std::to_string(folds) + ", n=" + std::to_string(n) + ")");
  }
  Rng rng(seed);
  const auto idx = shuffled_indices(n, rng);
  std::vector<std::vector<std::size_t>> out(folds);
  for (std::size_t i = 0; i < n; ++i) out[i % folds].push_back(idx[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

inline std::vector<std::size_t> complement_rows(std::size_t n, const std::vector<std::size_t>& held_out) {
  std::vector<bool> mask(n, false);
  for (auto i : held_out) mask[i] = true;
  std::vector<std::size_t> out;
  out.reserve(n - held_out.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) out.push_back(i);
  }
  return out;
}

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

inline Eigen::VectorXd take_rows(const Eigen::VectorXd& v, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Eigen::Index>(r)) = v(static_cast<Eigen::Index>(rows[r]));
  return out;
}

/// Mean over folds of held-out MSE of the OLS fit.
inline double kfold_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::size_t folds,
                       std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto parts = kfold_partition(n, folds, seed);
  double total = 0.0;
  for (const auto& held : parts) {
    const auto train = complement_rows(n, held);
    const auto fit = fit_ols(take_rows(x, train), take_rows(y, train));
    const Eigen::VectorXd resid = take_rows(y, held) - fit.predict(take_rows(x, held));
    total += resid.squaredNorm() / static_cast<double>(held.size());
  }
  return total / static_cast<double>(parts.size());
}

/// Positions of a maximal prefix-greedy set of columns that, with an
/// intercept, form a full-rank design: column j is kept unless it is (nearly)
/// constant or a linear combination of the intercept and earlier kept columns.
inline std::vector<std::size_t> independent_columns(const Eigen::MatrixXd& x, double threshold = 1e-10) {
  const auto n = x.rows();
  std::vector<std::size_t> kept;
  Eigen::MatrixXd design(n, 1);
  design.col(0).setOnes();
  design.col(0) /= std::sqrt(static_cast<double>(n));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double norm = x.col(j).norm();
    if (norm == 0.0 || design.cols() >= n) continue;
    Eigen::MatrixXd trial(n, design.cols() + 1);
    trial << design, x.col(j) / norm;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(trial);
    qr.setThreshold(threshold);
    if (qr.rank() == trial.cols()) {
      design = std::move(trial);
      kept.push_back(static_cast<std::size_t>(j));
    }
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Backward stepwise elimination

enum class StepwiseStop { Significance, MinCvError };

struct StepwiseOptions {
  double alpha = 0.05;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  StepwiseStop stop = StepwiseStop::Significance;
};

/// One refit. Iteration 0 is the initial full model and removes nothing.
struct StepwiseIteration {
  std::size_t iteration = 0;
  std::string removed_feature;
  double removed_p = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> features;
  double rss = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  double cp = 0.0;
  double adj_r2 = 0.0;
  double cv_error = 0.0;
};

struct StepwiseTrace {
  std::vector<StepwiseIteration> iterations;
  std::size_t selected_iteration = 0;
  std::vector<std::string> final_features;
  RegressionFit final_fit;

  std::size_t removals() const noexcept { return iterations.empty() ? 0 : iterations.size() - 1; }
};

/// Repeatedly refits OLS and drops the single slope with the largest p-value
/// above alpha (ties to the lowest position). Stops when every p <= alpha or
/// one feature remains. In MinCvError mode elimination continues to a single
/// feature regardless of alpha and the minimum-CV iteration is selected.
inline StepwiseTrace backward_stepwise(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                       std::vector<std::string> names, const StepwiseOptions& opt = {}) {
  const auto d = static_cast<std::size_t>(x.cols());
  if (names.empty()) {
    for (std::size_t j = 0; j < d; ++j) names.push_back("x" + std::to_string(j + 1));
  }
  if (names.size() != d) throw DataError("backward_stepwise: feature name count does not match columns");
  if (d == 0) throw DataError("backward_stepwise: no candidate features");

  std::vector<std::size_t> active(d);
  std::iota(active.begin(), active.end(), std::size_t{0});

  auto subset = [&](const std::vector<std::size_t>& cols) {
    Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
    std::vector<std::string> sub_names;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      out.col(static_cast<Eigen::Index>(c)) = x.col(static_cast<Eigen::Index>(cols[c]));
      sub_names.push_back(names[cols[c]]);
    }
    return std::pair{out, sub_names};
  };

  StepwiseTrace trace;
  double full_sigma2 = 0.0;
  std::string removed;
  double removed_p = std::numeric_limits<double>::quiet_NaN();
  std::vector<RegressionFit> fits;

  for (std::size_t iter = 0;; ++iter) {
    auto [xs, sub_names] = subset(active);
    auto fit = fit_ols(xs, y, sub_names);
    if (iter == 0) full_sigma2 = fit.sigma2;
    const auto m = metrics(fit, full_sigma2);

    StepwiseIteration rec;
    rec.iteration = iter;
    rec.removed_feature = removed;
    rec.removed_p = removed_p;
    rec.features = sub_names;
    rec.rss = fit.rss;
    rec.aic = m.aic;
    rec.bic = m.bic;
    rec.cp = m.cp;
    rec.adj_r2 = m.adj_r2;
    rec.cv_error = kfold_cv(xs, y, opt.folds, opt.seed);
    trace.iterations.push_back(std::move(rec));

    if (active.size() <= 1) {
      fits.push_back(std::move(fit));
      break;
    }
    // Worst slope; the intercept (index 0) is never a candidate.
    std::size_t worst = 0;
    double worst_p = -1.0;
    for (std::size_t j = 0; j < active.size(); ++j) {
      const double pj = fit.p(static_cast<Eigen::Index>(j + 1));
      if (pj > worst_p) {
        worst_p = pj;
        worst = j;
      }
    }
    const bool keep_going = opt.stop == StepwiseStop::MinCvError || worst_p > opt.alpha;
    if (!keep_going) {
      fits.push_back(std::move(fit));
      break;
    }
    removed = names[active[worst]];
    removed_p = worst_p;
    fits.push_back(std::move(fit));
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(worst));
  }

  if (opt.stop == StepwiseStop::MinCvError) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < trace.iterations.size(); ++i) {
      if (trace.iterations[i].cv_error <= trace.iterations[best].cv_error) best = i;
    }
    trace.selected_iteration = best;
  } else {
    trace.selected_iteration = trace.iterations.size() - 1;
  }
  trace.final_features = trace.iterations[trace.selected_iteration].features;
  trace.final_fit = std::move(fits[trace.selected_iteration]);
  return trace;
}

/// Columns: iteration, removed_feature, p, AIC, BIC, Cp, adjR2, CV.
inline void write_stepwise_csv(std::ostream& out, const StepwiseTrace& trace) {
  auto num = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  out << "iteration,removed_feature,p,AIC,BIC,Cp,adjR2,CV\n";
  for (const auto& it : trace.iterations) {
    out << it.iteration << ',' << it.removed_feature << ',' << num(it.removed_p) << ',' << num(it.aic) << ','
        << num(it.bic) << ',' << num(it.cp) << ',' << num(it.adj_r2) << ',' << num(it.cv_error) << '\n';
  }
}

}  // namespace corealloc
