#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "audit/error.hpp"
#include "audit/stats/linear_model.hpp"
#include "audit/util/rng.hpp"

// Residual diagnostics: Shapiro-Wilk normality, Breusch-Pagan
// heteroskedasticity and the share of fitted values outside [0, 1].
namespace audit::stats {

struct ShapiroWilk {
  double w = NAN;
  double p = NAN;
  size_t n = 0;
};

namespace detail {

inline double poly(const double* c, int nord, double x) {
  double r = c[nord - 1];
  for (int i = nord - 2; i >= 0; --i) r = r * x + c[i];
  return r;
}

}  // namespace detail

// Royston's AS R94 approximation, valid for 3 <= n <= 5000.
inline ShapiroWilk shapiro_wilk(std::vector<double> x) {
  const size_t n = x.size();
  if (n < 3) throw ValidationError("Shapiro-Wilk needs at least 3 values");
  if (n > 5000) throw ValidationError("Shapiro-Wilk is limited to 5000 values; subsample first");
  std::sort(x.begin(), x.end());
  if (x.back() - x.front() < 1e-19 * std::max(1.0, std::abs(x.front()))) {
    throw ValidationError("Shapiro-Wilk: all values identical");
  }

  static const double c1[] = {0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056};
  static const double c2[] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
  static const double c3[] = {0.544, -0.39978, 0.025054, -6.714e-4};
  static const double c4[] = {1.3822, -0.77857, 0.062767, -0.0020322};
  static const double c5[] = {-1.5861, -0.31082, -0.083751, 0.0038915};
  static const double c6[] = {-0.4803, -0.082676, 0.0030302};
  static const double g[] = {-2.273, 0.459};

  const double an = static_cast<double>(n);
  const size_t half = n / 2;
  std::vector<double> a(half);
  if (n == 3) {
    a[0] = std::sqrt(0.5);
  } else {
    std::vector<double> m(half);
    double summ2 = 0;
    for (size_t i = 0; i < half; ++i) {
      m[i] = normal_quantile((static_cast<double>(i + 1) - 0.375) / (an + 0.25));
      summ2 += m[i] * m[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(an);
    const double a1 = detail::poly(c1, 6, rsn) - m[0] / ssumm2;
    size_t first;
    double fac;
    if (n > 5) {
      first = 2;
      const double a2 = -m[1] / ssumm2 + detail::poly(c2, 6, rsn);
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      a[1] = a2;
    } else {
      first = 1;
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
    }
    a[0] = a1;
    for (size_t i = first; i < half; ++i) a[i] = -m[i] / fac;
  }

  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / an;
  double ssx = 0;
  for (double v : x) ssx += (v - mean) * (v - mean);
  double num = 0;
  for (size_t i = 0; i < half; ++i) num += a[i] * (x[n - 1 - i] - x[i]);
  ShapiroWilk out;
  out.n = n;
  out.w = std::min(1.0, num * num / ssx);

  if (n == 3) {
    const double pi6 = 6.0 / M_PI, stqr = M_PI / 3.0;
    out.p = std::max(0.0, pi6 * (std::asin(std::sqrt(out.w)) - stqr));
    return out;
  }
  const double w1 = std::log(1.0 - out.w);
  double y = w1, mu, sigma;
  if (n <= 11) {
    const double gamma = detail::poly(g, 2, an);
    if (y >= gamma) {
      out.p = 1e-99;
      return out;
    }
    y = -std::log(gamma - y);
    mu = detail::poly(c3, 4, an);
    sigma = std::exp(detail::poly(c4, 4, an));
  } else {
    const double xx = std::log(an);
    mu = detail::poly(c5, 4, xx);
    sigma = std::exp(detail::poly(c6, 3, xx));
  }
  out.p = boost::math::cdf(boost::math::complement(boost::math::normal(), (y - mu) / sigma));
  return out;
}

// Shapiro-Wilk on at most `limit` values drawn without replacement with a
// seeded generator.
inline ShapiroWilk shapiro_wilk_subsample(const std::vector<double>& x, uint64_t seed, size_t limit = 5000) {
  if (x.size() <= limit) return shapiro_wilk(x);
  std::vector<size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  rng::Rng r(seed);
  for (size_t i = 0; i < limit; ++i) {
    const size_t j = i + r.below(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  std::vector<double> sample(limit);
  for (size_t i = 0; i < limit; ++i) sample[i] = x[idx[i]];
  return shapiro_wilk(std::move(sample));
}

struct BreuschPagan {
  double lm = NAN;
  double df = NAN;
  double p = NAN;
};

// Studentized (Koenker) form: LM = n * R^2 of the squared residuals
// regressed on the model's own design.
inline BreuschPagan breusch_pagan(const OlsFit& fit) {
  BreuschPagan out;
  out.df = static_cast<double>(fit.p - 1);
  const auto p = static_cast<Eigen::Index>(fit.p);
  VectorXd xtu = VectorXd::Zero(p);
  double sum = 0, sum2 = 0;
  std::vector<size_t> act;
  for (size_t i = 0; i < fit.n; ++i) {
    const double u = fit.residuals[i] * fit.residuals[i];
    fit.design.active(fit.factors, i, act);
    for (size_t a : act) xtu(static_cast<Eigen::Index>(a)) += u;
    sum += u;
    sum2 += u * u;
  }
  const double n = static_cast<double>(fit.n);
  const double tss = sum2 - sum * sum / n;
  if (!(tss > 1e-300)) {
    out.lm = 0;
    out.p = 1;
    return out;
  }
  const VectorXd b = fit.xtx_inv * xtu;
  const double ess = b.dot(xtu) - sum * sum / n;
  const double r2 = std::clamp(ess / tss, 0.0, 1.0);
  out.lm = n * r2;
  out.p = chi2_sf(out.lm, out.df);
  return out;
}

inline double fraction_outside_unit(const std::vector<double>& fitted) {
  if (fitted.empty()) return NAN;
  size_t outside = 0;
  for (double v : fitted) outside += (v < 0.0 || v > 1.0) ? 1 : 0;
  return static_cast<double>(outside) / static_cast<double>(fitted.size());
}

}  // namespace audit::stats
