#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

// <resolv.h> (pulled in by the HTTP client) defines _res, which Eigen uses
// as a parameter name.
#pragma push_macro("_res")
#undef _res
#include <Eigen/Dense>
#pragma pop_macro("_res")
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>

#include "audit/error.hpp"

// Main-effects OLS with treatment coding, Type-II sums of squares,
// omega-squared and cluster-robust (CR1) inference.
namespace audit::stats {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double normal_two_sided_p(double z) {
  if (!std::isfinite(z)) return std::isnan(z) ? NAN : 0.0;
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), std::abs(z)));
}

inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

inline double chi2_sf(double x, double df) {
  if (!(x > 0)) return 1.0;
  if (!std::isfinite(x)) return 0.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), x));
}

inline double f_sf(double x, double df1, double df2) {
  if (!(x > 0)) return 1.0;
  if (!std::isfinite(x)) return 0.0;
  return boost::math::cdf(boost::math::complement(boost::math::fisher_f(df1, df2), x));
}

// Categorical regressor. Level 0 is the reference.
struct Factor {
  std::string name;
  std::vector<std::string> levels;
  std::vector<uint32_t> codes;  // per row, index into levels

  // Builds codes from raw labels; `reference` becomes level 0, the remaining
  // levels sort lexicographically.
  static Factor from_labels(std::string name, const std::vector<std::string>& labels, const std::string& reference) {
    Factor f;
    f.name = std::move(name);
    std::set<std::string> distinct(labels.begin(), labels.end());
    if (!distinct.count(reference)) {
      throw ValidationError("factor '" + f.name + "': reference level '" + reference + "' not present in data");
    }
    f.levels.push_back(reference);
    for (const auto& l : distinct) {
      if (l != reference) f.levels.push_back(l);
    }
    std::map<std::string, uint32_t> pos;
    for (uint32_t i = 0; i < f.levels.size(); ++i) pos[f.levels[i]] = i;
    f.codes.reserve(labels.size());
    for (const auto& l : labels) f.codes.push_back(pos.at(l));
    return f;
  }

  size_t df() const { return levels.size() - 1; }
};

struct Dataset {
  std::vector<double> y;
  std::vector<Factor> factors;
  std::vector<std::string> clusters;  // empty: every row is its own cluster
};

// Column j > 0 of the design is the dummy of (factor, level).
struct Column {
  size_t factor = 0;
  uint32_t level = 0;
};

struct Design {
  std::vector<Column> columns;              // columns[0] is the intercept
  std::vector<std::vector<size_t>> factor_columns;  // design columns of each factor
  std::vector<std::vector<size_t>> level_column;    // [factor][level] -> column (0 for the reference)

  explicit Design(const std::vector<Factor>& factors) {
    columns.push_back({});
    for (size_t f = 0; f < factors.size(); ++f) {
      factor_columns.emplace_back();
      level_column.emplace_back(factors[f].levels.size(), 0);
      for (uint32_t l = 1; l < factors[f].levels.size(); ++l) {
        level_column[f][l] = columns.size();
        factor_columns[f].push_back(columns.size());
        columns.push_back({f, l});
      }
    }
  }

  size_t size() const { return columns.size(); }

  // Non-zero columns of row i (all dummies equal 1).
  void active(const std::vector<Factor>& factors, size_t i, std::vector<size_t>& out) const {
    out.clear();
    out.push_back(0);
    for (size_t f = 0; f < factors.size(); ++f) {
      const size_t c = level_column[f][factors[f].codes[i]];
      if (c != 0) out.push_back(c);
    }
  }
};

// Cross products accumulated in one pass over the rows.
struct CrossProducts {
  MatrixXd xtx;
  VectorXd xty;
  double yty = 0;
  double sum_y = 0;
  size_t n = 0;
};

inline CrossProducts accumulate(const Dataset& d, const Design& design) {
  const size_t p = design.size();
  CrossProducts cp;
  cp.xtx = MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  cp.xty = VectorXd::Zero(static_cast<Eigen::Index>(p));
  cp.n = d.y.size();
  std::vector<size_t> act;
  for (size_t i = 0; i < d.y.size(); ++i) {
    design.active(d.factors, i, act);
    const double y = d.y[i];
    for (size_t a : act) {
      cp.xty(static_cast<Eigen::Index>(a)) += y;
      for (size_t b : act) cp.xtx(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += 1.0;
    }
    cp.yty += y * y;
    cp.sum_y += y;
  }
  return cp;
}

namespace detail {

// Sequential Cholesky pass: returns the columns (in order) that are linear
// combinations of the columns before them.
inline std::vector<size_t> aliased_columns(const MatrixXd& a, double tol = 1e-9) {
  const auto p = a.rows();
  MatrixXd l = MatrixXd::Zero(p, p);
  std::vector<bool> kept(static_cast<size_t>(p), false);
  std::vector<size_t> aliased;
  for (Eigen::Index j = 0; j < p; ++j) {
    double d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) {
      if (kept[static_cast<size_t>(k)]) d -= l(j, k) * l(j, k);
    }
    if (!(d > tol * std::max(1.0, a(j, j)))) {
      aliased.push_back(static_cast<size_t>(j));
      continue;
    }
    kept[static_cast<size_t>(j)] = true;
    l(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < p; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) {
        if (kept[static_cast<size_t>(k)]) s -= l(i, k) * l(j, k);
      }
      l(i, j) = s / l(j, j);
    }
  }
  return aliased;
}

inline MatrixXd sub_matrix(const MatrixXd& m, const std::vector<size_t>& idx) {
  MatrixXd out(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) {
    for (size_t j = 0; j < idx.size(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          m(static_cast<Eigen::Index>(idx[i]), static_cast<Eigen::Index>(idx[j]));
    }
  }
  return out;
}

inline VectorXd sub_vector(const VectorXd& v, const std::vector<size_t>& idx) {
  VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace detail

struct OlsFit {
  std::vector<Factor> factors;
  Design design{std::vector<Factor>{}};
  CrossProducts cp;
  VectorXd beta;
  MatrixXd xtx_inv;
  std::vector<double> residuals;
  std::vector<double> fitted;
  double rss = 0;
  double tss = 0;
  size_t n = 0;
  size_t p = 0;

  size_t df_res() const { return n - p; }
  double r2() const { return tss > 0 ? 1.0 - rss / tss : 0.0; }
  double adj_r2() const {
    if (n <= p || tss <= 0) return NAN;
    return 1.0 - (rss / static_cast<double>(n - p)) / (tss / static_cast<double>(n - 1));
  }
  double ms_res() const { return rss / static_cast<double>(df_res()); }

  std::string column_name(size_t j) const {
    if (j == 0) return "(intercept)";
    const auto& c = design.columns[j];
    return factors[c.factor].name + "=" + factors[c.factor].levels[c.level];
  }
};

inline OlsFit fit_ols(const Dataset& d) {
  if (d.y.size() < 2) throw ValidationError("regression needs at least 2 rows");
  {
    const double first = d.y.front();
    if (std::all_of(d.y.begin(), d.y.end(), [first](double v) { return v == first; })) {
      throw ValidationError("response has fewer than 2 distinct values");
    }
  }
  for (const auto& f : d.factors) {
    if (f.codes.size() != d.y.size()) throw ValidationError("factor '" + f.name + "' length differs from response");
  }
  OlsFit fit;
  fit.factors = d.factors;
  fit.design = Design(d.factors);
  fit.cp = accumulate(d, fit.design);
  fit.n = d.y.size();
  fit.p = fit.design.size();

  const auto aliased = detail::aliased_columns(fit.cp.xtx);
  if (!aliased.empty()) {
    std::string names;
    for (size_t j : aliased) names += (names.empty() ? "" : ", ") + fit.column_name(j);
    throw ValidationError("rank-deficient design; aliased columns: " + names);
  }
  if (fit.n <= fit.p) throw ValidationError("no residual degrees of freedom (n <= p)");

  Eigen::LLT<MatrixXd> llt(fit.cp.xtx);
  if (llt.info() != Eigen::Success) throw NumericError("X'X is not positive definite");
  fit.beta = llt.solve(fit.cp.xty);
  fit.xtx_inv = llt.solve(MatrixXd::Identity(fit.cp.xtx.rows(), fit.cp.xtx.cols()));

  const double mean = fit.cp.sum_y / static_cast<double>(fit.n);
  fit.residuals.resize(fit.n);
  fit.fitted.resize(fit.n);
  std::vector<size_t> act;
  for (size_t i = 0; i < fit.n; ++i) {
    fit.design.active(d.factors, i, act);
    double yhat = 0;
    for (size_t a : act) yhat += fit.beta(static_cast<Eigen::Index>(a));
    fit.fitted[i] = yhat;
    fit.residuals[i] = d.y[i] - yhat;
    fit.rss += fit.residuals[i] * fit.residuals[i];
    fit.tss += (d.y[i] - mean) * (d.y[i] - mean);
  }
  return fit;
}

// Explained sum of squares b'X'y of the model restricted to `cols`.
inline double explained_ss(const CrossProducts& cp, const std::vector<size_t>& cols) {
  const MatrixXd a = detail::sub_matrix(cp.xtx, cols);
  const VectorXd b = detail::sub_vector(cp.xty, cols);
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw NumericError("reduced model is rank deficient");
  return b.dot(llt.solve(b));
}

struct FactorSS {
  std::string factor;
  double ss = 0;
  size_t df = 0;
};

// Type-II SS of each factor: RSS(model without the factor) - RSS(full).
// With main effects only this is the same as Type-II in the usual sense.
inline std::vector<FactorSS> anova_type2(const OlsFit& fit) {
  std::vector<size_t> all(fit.p);
  std::iota(all.begin(), all.end(), 0);
  const double full = explained_ss(fit.cp, all);
  std::vector<FactorSS> out;
  for (size_t f = 0; f < fit.factors.size(); ++f) {
    const auto& drop = fit.design.factor_columns[f];
    std::vector<size_t> keep;
    for (size_t j : all) {
      if (std::find(drop.begin(), drop.end(), j) == drop.end()) keep.push_back(j);
    }
    const double reduced = explained_ss(fit.cp, keep);
    out.push_back({fit.factors[f].name, std::max(0.0, full - reduced), drop.size()});
  }
  return out;
}

inline double omega_squared(double ss_f, double df_f, double ss_res, double df_res, double ss_total) {
  if (!(df_res > 0)) throw NumericError("omega squared needs positive residual degrees of freedom");
  const double ms_res = ss_res / df_res;
  return (ss_f - df_f * ms_res) / (ss_total + ms_res);
}

struct RobustCovariance {
  MatrixXd cov;
  size_t clusters = 0;
  double scale = 1;  // finite-sample factor applied
};

// Sandwich covariance clustered on `clusters` (one label per row, or empty
// for one cluster per row). cr = 1 applies G/(G-1) * (n-1)/(n-p); cr = 0
// applies none.
inline RobustCovariance cluster_robust(const OlsFit& fit, const std::vector<std::string>& clusters, int cr = 1) {
  if (!clusters.empty() && clusters.size() != fit.n) throw ValidationError("cluster labels length differs from rows");
  std::vector<size_t> order(fit.n);
  std::iota(order.begin(), order.end(), 0);
  if (!clusters.empty()) {
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return clusters[a] < clusters[b]; });
  }
  const auto p = static_cast<Eigen::Index>(fit.p);
  MatrixXd meat = MatrixXd::Zero(p, p);
  VectorXd score = VectorXd::Zero(p);
  size_t g = 0;
  std::vector<size_t> act;
  for (size_t k = 0; k < order.size(); ++k) {
    const size_t i = order[k];
    fit.design.active(fit.factors, i, act);
    for (size_t a : act) score(static_cast<Eigen::Index>(a)) += fit.residuals[i];
    const bool last = k + 1 == order.size() || clusters.empty() || clusters[order[k + 1]] != clusters[i];
    if (last) {
      meat.noalias() += score * score.transpose();
      score.setZero();
      ++g;
    }
  }
  if (g < 2) throw ValidationError("cluster-robust covariance needs at least 2 clusters");
  RobustCovariance rc;
  rc.clusters = g;
  if (cr == 1) {
    const double gd = static_cast<double>(g), n = static_cast<double>(fit.n), pd = static_cast<double>(fit.p);
    rc.scale = gd / (gd - 1.0) * (n - 1.0) / (n - pd);
  } else if (cr != 0) {
    throw ConfigError("unsupported cluster-robust variant CR" + std::to_string(cr));
  }
  rc.cov = rc.scale * fit.xtx_inv * meat * fit.xtx_inv;
  rc.cov = 0.5 * (rc.cov + rc.cov.transpose());
  return rc;
}

// Benjamini-Hochberg step-up adjusted p-values, in input order. NaN entries
// are passed through and excluded from the family.
inline std::vector<double> bh_adjust(const std::vector<double>& p) {
  std::vector<size_t> idx;
  for (size_t i = 0; i < p.size(); ++i) {
    if (std::isnan(p[i])) continue;
    if (p[i] < 0 || p[i] > 1) throw ValidationError("p-value outside [0,1]");
    idx.push_back(i);
  }
  std::vector<double> out(p);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return p[a] < p[b]; });
  const double m = static_cast<double>(idx.size());
  double running = 1.0;
  for (size_t r = idx.size(); r-- > 0;) {
    running = std::min(running, p[idx[r]] * m / static_cast<double>(r + 1));
    out[idx[r]] = std::max(p[idx[r]], std::min(1.0, running));  // guards rounding in p*m/m
  }
  return out;
}

// Share of R^2 lost when the named factor is dropped.
inline double r2_share(const OlsFit& fit, const std::vector<FactorSS>& ss, const std::string& factor) {
  if (!(fit.tss > 0)) return 0.0;
  const double r2_full = fit.r2();
  if (r2_full <= 0) return 0.0;
  for (const auto& s : ss) {
    if (s.factor == factor) {
      const double r2_without = 1.0 - (fit.rss + s.ss) / fit.tss;
      return std::clamp((r2_full - r2_without) / r2_full, 0.0, 1.0);
    }
  }
  throw ValidationError("factor '" + factor + "' not in model");
}

}  // namespace audit::stats
