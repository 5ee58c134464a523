#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "audit/stats/analyze.hpp"
#include "audit/stats/diagnostics.hpp"
#include "audit/stats/linear_model.hpp"
#include "audit/util/csv.hpp"
#include "../common/stats_oracles.hpp"

using namespace audit;
using namespace audit::stats;
using nlohmann::json;
using namespace audit::testsupport;

namespace {

const std::string kData = AUDIT_TEST_DATA_DIR;

Dataset load_fixture() {
  std::ifstream in(kData + "/stats_fixture.csv");
  csv::Reader r(in);
  csv::Row row;
  r.next(row);
  Dataset d;
  std::vector<std::string> a, b, c;
  while (r.next(row)) {
    if (row.size() < 5) continue;
    d.y.push_back(csv::parse_double(row[0]));
    a.push_back(row[1]);
    b.push_back(row[2]);
    c.push_back(row[3]);
    d.clusters.push_back(row[4]);
  }
  d.factors = {factor_of("a", a, "a0"), factor_of("b", b, "b0"), factor_of("c", c, "c0")};
  return d;
}

json load_reference() {
  std::ifstream in(kData + "/stats_reference.json");
  return json::parse(in);
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

// ---- fit_ols ----

TEST(Ols, NoiselessRecoveryIsExact) {
  std::vector<std::string> loc;
  std::vector<double> y;
  for (int i = 0; i < 40; ++i) {
    const bool japan = i % 3 == 0;
    loc.push_back(japan ? "Japan" : (i % 3 == 1 ? "Germany" : "Canada"));
    y.push_back(2.0 + 3.0 * (japan ? 1 : 0));
  }
  Dataset d;
  d.y = y;
  d.factors = {factor_of("location", loc, "Germany")};
  const auto fit = fit_ols(d);
  EXPECT_NEAR(fit.beta(0), 2.0, 1e-12);
  const size_t japan = fit.design.level_column[0][std::find(fit.factors[0].levels.begin(),
                                                            fit.factors[0].levels.end(), "Japan") -
                                                  fit.factors[0].levels.begin()];
  const size_t canada = fit.design.level_column[0][1];
  EXPECT_NEAR(fit.beta(static_cast<Eigen::Index>(japan)), 3.0, 1e-12);
  EXPECT_NEAR(fit.beta(static_cast<Eigen::Index>(canada)), 0.0, 1e-12);
  EXPECT_NEAR(fit.rss, 0.0, 1e-20);
}

TEST(Ols, ConstantResponseIsRejected) {
  Dataset d;
  d.y = {1, 1, 1, 1};
  d.factors = {factor_of("f", {"x", "y", "x", "y"}, "x")};
  EXPECT_THROW(fit_ols(d), ValidationError);
}

TEST(Ols, AliasedColumnsAreNamed) {
  // g duplicates f exactly.
  Dataset d;
  d.y = {1, 2, 3, 5, 4, 6};
  d.factors = {factor_of("f", {"x", "y", "x", "y", "x", "y"}, "x"), factor_of("g", {"p", "q", "p", "q", "p", "q"}, "p")};
  try {
    fit_ols(d);
    FAIL() << "expected rank deficiency";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("g=q"), std::string::npos) << e.what();
  }
}

TEST(Ols, MissingReferenceLevelIsAnError) {
  EXPECT_THROW(factor_of("f", {"a", "b"}, "c"), ValidationError);
}

TEST(Ols, MatchesNormalEquationsOracle) {
  for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const Dataset d = random_dataset(seed, 300 + 40 * seed, 0.2);
    const auto fit = fit_ols(d);
    const auto oracle = dense_ols(dense_design(d), d.y);
    for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
      EXPECT_LE(rel(fit.beta(j), static_cast<double>(oracle.beta[static_cast<size_t>(j)])), 1e-10) << seed << " " << j;
    }
    EXPECT_LE(rel(fit.rss, static_cast<double>(oracle.rss)), 1e-10);
  }
}

TEST(Ols, EstimatesWithinFourStandardErrorsOfTruth) {
  std::vector<std::vector<double>> eff;
  const Dataset d = random_dataset(99, 4000, 0.3, &eff);
  const auto fit = fit_ols(d);
  for (size_t f = 0; f < d.factors.size(); ++f) {
    for (uint32_t l = 1; l < d.factors[f].levels.size(); ++l) {
      const auto j = static_cast<Eigen::Index>(fit.design.level_column[f][l]);
      const double se = std::sqrt(fit.ms_res() * fit.xtx_inv(j, j));
      const size_t true_level = static_cast<size_t>(std::stoi(d.factors[f].levels[l].substr(1)));
      EXPECT_LT(std::abs(fit.beta(j) - eff[f][true_level]), 4 * se);
    }
  }
}

TEST(Ols, ResidualsOrthogonalToDesign) {
  const Dataset d = random_dataset(11, 500, 0.5);
  const auto fit = fit_ols(d);
  const auto x = dense_design(d);
  for (size_t j = 0; j < x[0].size(); ++j) {
    long double dot = 0, norm = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      dot += x[i][j] * fit.residuals[i];
      norm += std::fabs(x[i][j] * d.y[i]);
    }
    EXPECT_LE(std::fabs(dot) / norm, 1e-8);
  }
}

TEST(Ols, MatchesStatsmodelsOnFrozenFixture) {
  const Dataset d = load_fixture();
  const json ref = load_reference();
  const auto fit = fit_ols(d);
  for (size_t j = 0; j < fit.p; ++j) {
    const std::string name = fit.column_name(j);
    EXPECT_NEAR(fit.beta(static_cast<Eigen::Index>(j)), ref["params"][name].get<double>(), 1e-10) << name;
    const double naive = std::sqrt(fit.ms_res() * fit.xtx_inv(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)));
    EXPECT_NEAR(naive, ref["bse_naive"][name].get<double>(), 1e-10) << name;
  }
  EXPECT_NEAR(fit.rss, ref["ssr"].get<double>(), 1e-9);
  EXPECT_EQ(static_cast<double>(fit.df_res()), ref["df_resid"].get<double>());
  EXPECT_NEAR(fit.r2(), ref["rsquared"].get<double>(), 1e-12);
  EXPECT_NEAR(fit.adj_r2(), ref["rsquared_adj"].get<double>(), 1e-12);
}

// ---- Type-II SS and omega squared ----

TEST(Anova, MatchesStatsmodelsTypeTwo) {
  const Dataset d = load_fixture();
  const json ref = load_reference();
  const auto fit = fit_ols(d);
  for (const auto& s : anova_type2(fit)) {
    EXPECT_NEAR(s.ss, ref["anova_ss"][s.factor].get<double>(), 1e-9) << s.factor;
    const double f = (s.ss / s.df) / fit.ms_res();
    EXPECT_NEAR(f, ref["anova_F"][s.factor].get<double>(), 1e-8 * f);
    const double p = f_sf(f, s.df, fit.df_res());
    EXPECT_NEAR(p, ref["anova_p"][s.factor].get<double>(), 1e-6 * p + 1e-300);
  }
}

TEST(Anova, MatchesDropOneRefitOracle) {
  const Dataset d = random_dataset(5, 700, 0.4);
  const auto fit = fit_ols(d);
  const long double full = dense_rss(d, {0, 1, 2});
  const auto ss = anova_type2(fit);
  for (size_t f = 0; f < 3; ++f) {
    std::vector<size_t> others;
    for (size_t g = 0; g < 3; ++g)
      if (g != f) others.push_back(g);
    const double expect = static_cast<double>(dense_rss(d, others) - full);
    EXPECT_LE(rel(ss[f].ss, expect), 1e-9);
    EXPECT_EQ(ss[f].df, d.factors[f].df());
  }
}

TEST(Anova, OrderingInvariantUnderAllPermutations) {
  const Dataset base = random_dataset(8, 500, 0.3);
  std::map<std::string, double> first;
  for (const auto& s : anova_type2(fit_ols(base))) first[s.factor] = s.ss;
  std::vector<size_t> perm = {0, 1, 2};
  int count = 0;
  do {
    Dataset d = base;
    d.factors = {base.factors[perm[0]], base.factors[perm[1]], base.factors[perm[2]]};
    for (const auto& s : anova_type2(fit_ols(d))) EXPECT_LE(rel(s.ss, first[s.factor]), 1e-10) << s.factor;
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  EXPECT_EQ(count, 6);
}

TEST(Anova, BalancedDesignEqualsSequentialForEveryOrder) {
  // Full factorial 3 x 2 x 4 replicated 5 times.
  std::mt19937_64 eng(3);
  std::normal_distribution<double> gauss;
  Dataset d;
  std::vector<std::string> a, b, c;
  for (int r = 0; r < 5; ++r)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 4; ++k) {
          a.push_back("a" + std::to_string(i));
          b.push_back("b" + std::to_string(j));
          c.push_back("c" + std::to_string(k));
          d.y.push_back(0.2 * i - 0.3 * j + 0.1 * k + gauss(eng));
        }
  d.factors = {factor_of("a", a, "a0"), factor_of("b", b, "b0"), factor_of("c", c, "c0")};
  const auto ss = anova_type2(fit_ols(d));
  std::vector<size_t> perm = {0, 1, 2};
  do {
    std::vector<size_t> prefix;
    long double prev = dense_rss(d, prefix);
    for (size_t f : perm) {
      prefix.push_back(f);
      const long double cur = dense_rss(d, prefix);
      EXPECT_LE(rel(ss[f].ss, static_cast<double>(prev - cur)), 1e-9);
      prev = cur;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST(Anova, TwoGroupHandCase) {
  Dataset d;
  d.y = {0, 0, 1, 1};
  d.factors = {factor_of("g", {"A", "A", "B", "B"}, "A")};
  const auto fit = fit_ols(d);
  const auto ss = anova_type2(fit);
  EXPECT_NEAR(ss[0].ss, 1.0, 1e-14);
  EXPECT_EQ(ss[0].df, 1u);
  EXPECT_NEAR(fit.rss, 0.0, 1e-28);
  EXPECT_NEAR(omega_squared(ss[0].ss, 1, fit.rss, 2, fit.tss), 1.0, 1e-14);
}

TEST(Anova, NoiselessNullFactorHasZeroSS) {
  Dataset d;
  std::vector<std::string> f, g;
  for (int i = 0; i < 24; ++i) {
    f.push_back("f" + std::to_string(i % 3));
    g.push_back("g" + std::to_string(i % 4));
    d.y.push_back(1.0 + 0.5 * (i % 3));
  }
  d.factors = {factor_of("f", f, "f0"), factor_of("g", g, "g0")};
  const auto ss = anova_type2(fit_ols(d));
  EXPECT_NEAR(ss[1].ss, 0.0, 1e-12);
  EXPECT_GT(ss[0].ss, 1.0);
}

TEST(Omega, FormulaAndBoundary) {
  EXPECT_DOUBLE_EQ(omega_squared(4.0, 2.0, 10.0, 5.0, 20.0), (4.0 - 2.0 * 2.0) / (20.0 + 2.0));
  EXPECT_EQ(omega_squared(6.0, 3.0, 8.0, 4.0, 30.0), 0.0);
  EXPECT_LT(omega_squared(1.0, 3.0, 8.0, 4.0, 30.0), 0.0);
  EXPECT_THROW(omega_squared(1.0, 1.0, 0.0, 0.0, 1.0), NumericError);
}

TEST(Omega, NullFactorOnNoiseIsNearZero) {
  std::mt19937_64 eng(2025);
  std::normal_distribution<double> gauss;
  Dataset d;
  std::vector<std::string> f;
  for (int i = 0; i < 10000; ++i) {
    f.push_back("l" + std::to_string(eng() % 4));
    d.y.push_back(gauss(eng));
  }
  d.factors = {factor_of("f", f, "l0")};
  const auto fit = fit_ols(d);
  const auto ss = anova_type2(fit);
  const double w = omega_squared(ss[0].ss, 3, fit.rss, static_cast<double>(fit.df_res()), fit.tss);
  EXPECT_LT(std::abs(w), 0.01);
}

// ---- cluster-robust covariance ----

TEST(Robust, SingletonClustersEqualIndependentHc1) {
  Dataset d = random_dataset(21, 400, 0.3);
  for (size_t i = 0; i < d.y.size(); ++i) d.y[i] += 0.3 * d.y[i] * std::sin(static_cast<double>(i));
  const auto fit = fit_ols(d);
  std::vector<std::string> singletons;
  for (size_t i = 0; i < d.y.size(); ++i) singletons.push_back("r" + std::to_string(i));
  const auto rc = cluster_robust(fit, singletons, 1);
  const auto rc_empty = cluster_robust(fit, {}, 1);
  const auto x = dense_design(d);
  const auto cov = dense_hc1(x, dense_ols(x, d.y));
  for (size_t j = 0; j < fit.p; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double se = std::sqrt(rc.cov(jj, jj));
    const double expect = std::sqrt(static_cast<double>(cov[j][j]));
    EXPECT_LE(std::abs(se - expect) / expect, 1e-10) << j;
    EXPECT_LE(std::abs(std::sqrt(rc_empty.cov(jj, jj)) - expect) / expect, 1e-10);
  }
  EXPECT_EQ(rc.clusters, d.y.size());
}

TEST(Robust, MatchesStatsmodelsClusterAndHc1) {
  const Dataset d = load_fixture();
  const json ref = load_reference();
  const auto fit = fit_ols(d);
  const auto rc = cluster_robust(fit, d.clusters, 1);
  const auto hc = cluster_robust(fit, {}, 1);
  for (size_t j = 0; j < fit.p; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const std::string name = fit.column_name(j);
    EXPECT_NEAR(std::sqrt(rc.cov(jj, jj)), ref["bse_cluster"][name].get<double>(), 1e-10) << name;
    EXPECT_NEAR(std::sqrt(hc.cov(jj, jj)), ref["bse_hc1"][name].get<double>(), 1e-10) << name;
  }
  for (size_t f = 0; f < fit.factors.size(); ++f) {
    const auto& cols = fit.design.factor_columns[f];
    const MatrixXd v = audit::stats::detail::sub_matrix(rc.cov, cols);
    const VectorXd b = audit::stats::detail::sub_vector(fit.beta, cols);
    const double wald = b.dot(v.ldlt().solve(b));
    EXPECT_NEAR(wald, ref["wald_cluster"][fit.factors[f].name].get<double>(), 1e-8 * wald);
  }
}

TEST(Robust, DuplicatedRowsWithinClusters) {
  const Dataset base = random_dataset(31, 200, 0.4);
  Dataset dup;
  std::vector<std::vector<std::string>> labels(base.factors.size());
  for (size_t i = 0; i < base.y.size(); ++i) {
    for (int r = 0; r < 10; ++r) {
      dup.y.push_back(base.y[i]);
      dup.clusters.push_back("c" + std::to_string(i));
      for (size_t f = 0; f < base.factors.size(); ++f) {
        labels[f].push_back(base.factors[f].levels[base.factors[f].codes[i]]);
      }
    }
  }
  for (size_t f = 0; f < base.factors.size(); ++f) {
    dup.factors.push_back(factor_of(base.factors[f].name, labels[f], base.factors[f].levels[0]));
  }
  std::vector<std::string> base_clusters;
  for (size_t i = 0; i < base.y.size(); ++i) base_clusters.push_back("c" + std::to_string(i));

  const auto f1 = fit_ols(base);
  const auto f10 = fit_ols(dup);
  const auto r1 = cluster_robust(f1, base_clusters, 1);
  const auto r10 = cluster_robust(f10, dup.clusters, 1);
  const double n = static_cast<double>(base.y.size()), p = static_cast<double>(f1.p);
  for (size_t j = 0; j < f1.p; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    EXPECT_NEAR(f10.beta(jj), f1.beta(jj), 1e-12);
    // Identical up to the finite-sample factor.
    EXPECT_LE(rel(r10.cov(jj, jj) / r10.scale, r1.cov(jj, jj) / r1.scale), 1e-10);
    const double naive1 = std::sqrt(f1.ms_res() * f1.xtx_inv(jj, jj));
    const double naive10 = std::sqrt(f10.ms_res() * f10.xtx_inv(jj, jj));
    EXPECT_LE(rel(naive10 * std::sqrt(10.0), naive1 * std::sqrt(10.0 * (n - p) / (10.0 * n - p))), 1e-10);
  }
}

TEST(Robust, HomoskedasticRobustCloseToClassical) {
  const Dataset d = random_dataset(41, 20000, 0.5);
  const auto fit = fit_ols(d);
  const auto rc = cluster_robust(fit, {}, 1);
  for (size_t j = 0; j < fit.p; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double naive = std::sqrt(fit.ms_res() * fit.xtx_inv(jj, jj));
    EXPECT_NEAR(std::sqrt(rc.cov(jj, jj)) / naive, 1.0, 0.05);
  }
}

TEST(Robust, Cr0OmitsTheFactorAndOneClusterFails) {
  const Dataset d = load_fixture();
  const auto fit = fit_ols(d);
  const auto r0 = cluster_robust(fit, d.clusters, 0);
  const auto r1 = cluster_robust(fit, d.clusters, 1);
  const double g = static_cast<double>(r1.clusters), n = static_cast<double>(fit.n), p = static_cast<double>(fit.p);
  EXPECT_DOUBLE_EQ(r1.scale, g / (g - 1) * (n - 1) / (n - p));
  EXPECT_LE(rel(r1.cov(1, 1), r0.cov(1, 1) * r1.scale), 1e-12);
  EXPECT_THROW(cluster_robust(fit, std::vector<std::string>(fit.n, "same"), 1), ValidationError);
}

// ---- Benjamini-Hochberg ----


TEST(Bh, HandCases) {
  const auto a = bh_adjust({0.01, 0.02, 0.03, 0.04});
  for (double v : a) EXPECT_NEAR(v, 0.04, 1e-15);
  const auto same = bh_adjust({0.2, 0.2, 0.2});
  for (double v : same) EXPECT_DOUBLE_EQ(v, 0.2);
  EXPECT_DOUBLE_EQ(bh_adjust({0.37})[0], 0.37);
  EXPECT_THROW(bh_adjust({0.5, 1.5}), ValidationError);
  const auto with_nan = bh_adjust({0.01, NAN, 0.04});
  EXPECT_TRUE(std::isnan(with_nan[1]));
  EXPECT_DOUBLE_EQ(with_nan[0], 0.02);
}

TEST(Bh, PropertiesOnRandomInputs) {
  std::mt19937_64 eng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(1 + eng() % 40);
    for (auto& v : p) v = trial % 3 == 0 ? std::round(u(eng) * 10) / 10 : u(eng) * u(eng);
    const auto adj = bh_adjust(p);
    const auto oracle = bh_oracle(p);
    for (size_t i = 0; i < p.size(); ++i) {
      EXPECT_GE(adj[i], p[i]);
      EXPECT_LE(adj[i], 1.0);
      EXPECT_NEAR(adj[i], oracle[i], 1e-15);
      for (size_t j = 0; j < p.size(); ++j) {
        if (p[i] <= p[j]) EXPECT_LE(adj[i], adj[j]);
      }
    }
  }
}

// ---- R^2 share ----

namespace {

Dataset llm_dataset(const std::function<double(int llm, int k)>& y) {
  Dataset d;
  std::vector<std::string> llm, k;
  for (int i = 0; i < 60; ++i) {
    llm.push_back("m" + std::to_string(i % 3));
    k.push_back(std::to_string((i / 3) % 4));
    d.y.push_back(y(i % 3, (i / 3) % 4));
  }
  d.factors = {factor_of("k", k, "0"), factor_of("llm", llm, "m0")};
  return d;
}

}  // namespace

TEST(R2Share, LlmOnlyIsOneAndIndependentIsZero) {
  {
    const auto fit = fit_ols(llm_dataset([](int m, int) { return 0.3 * m; }));
    EXPECT_NEAR(r2_share(fit, anova_type2(fit), "llm"), 1.0, 1e-12);
  }
  {
    const auto fit = fit_ols(llm_dataset([](int, int k) { return 0.2 * k; }));
    EXPECT_NEAR(r2_share(fit, anova_type2(fit), "llm"), 0.0, 1e-12);
  }
}

TEST(R2Share, MixedMatchesTwoExplicitFits) {
  std::mt19937_64 eng(9);
  std::normal_distribution<double> gauss;
  Dataset d = llm_dataset([&](int m, int k) { return 0.3 * m + 0.1 * k + 0.2 * gauss(eng); });
  const auto fit = fit_ols(d);
  Dataset without = d;
  without.factors = {d.factors[0]};
  const auto fit_without = fit_ols(without);
  const double expect = (fit.r2() - fit_without.r2()) / fit.r2();
  EXPECT_NEAR(r2_share(fit, anova_type2(fit), "llm"), expect, 1e-12);
}

// ---- diagnostics ----

TEST(ShapiroWilk, MatchesScipyFrozenValues) {
  const json ref = load_reference();
  const auto resid = ref["shapiro_samples"]["resid"].get<std::vector<double>>();
  for (const auto& [key, v] : ref["shapiro"].items()) {
    const size_t m = std::stoul(key);
    const auto sw = shapiro_wilk(std::vector<double>(resid.begin(), resid.begin() + static_cast<long>(m)));
    // scipy derives the coefficients from a lower-precision normal quantile.
    EXPECT_NEAR(sw.w, v["w"].get<double>(), 1e-6) << m;
    EXPECT_NEAR(sw.p, v["p"].get<double>(), 1e-4) << m;
  }
}

TEST(ShapiroWilk, NormalSampleAndErrors) {
  std::mt19937_64 eng(123);
  std::normal_distribution<double> gauss;
  std::vector<double> x(5000);
  for (auto& v : x) v = gauss(eng);
  const auto sw = shapiro_wilk(x);
  EXPECT_GT(sw.w, 0.99);
  EXPECT_GT(sw.p, 0.001);
  std::vector<double> skewed(2000);
  for (auto& v : skewed) v = std::exp(gauss(eng));
  EXPECT_LT(shapiro_wilk(skewed).p, 1e-6);
  EXPECT_THROW(shapiro_wilk({1.0, 2.0}), ValidationError);
  EXPECT_THROW(shapiro_wilk({1.0, 1.0, 1.0, 1.0}), ValidationError);
  EXPECT_THROW(shapiro_wilk(std::vector<double>(5001, 0.5)), ValidationError);
}

TEST(ShapiroWilk, SubsampleIsSeededAndBounded) {
  std::mt19937_64 eng(1);
  std::normal_distribution<double> gauss;
  std::vector<double> x(12000);
  for (auto& v : x) v = gauss(eng);
  const auto a = shapiro_wilk_subsample(x, 42);
  const auto b = shapiro_wilk_subsample(x, 42);
  const auto c = shapiro_wilk_subsample(x, 43);
  EXPECT_EQ(a.n, 5000u);
  EXPECT_EQ(a.w, b.w);
  EXPECT_NE(a.w, c.w);
  EXPECT_GT(a.w, 0.99);
}

TEST(BreuschPagan, MatchesStatsmodelsAndRejectsHeteroskedasticity) {
  const Dataset d = load_fixture();
  const json ref = load_reference();
  const auto bp = breusch_pagan(fit_ols(d));
  EXPECT_NEAR(bp.lm, ref["bp_lm"].get<double>(), 1e-8);
  EXPECT_NEAR(bp.p, ref["bp_p"].get<double>(), 1e-12);

  // Residual spread proportional to a design column.
  std::mt19937_64 eng(77);
  std::normal_distribution<double> gauss;
  Dataset h;
  std::vector<std::string> g;
  for (int i = 0; i < 2000; ++i) {
    const int level = i % 4;
    g.push_back("g" + std::to_string(level));
    h.y.push_back(0.1 * level + (1 + 2 * level) * gauss(eng));
  }
  h.factors = {factor_of("g", g, "g0")};
  const auto het = breusch_pagan(fit_ols(h));
  const double crit = boost::math::quantile(boost::math::chi_squared(3), 0.99);
  EXPECT_GT(het.lm, crit);
  EXPECT_LT(het.p, 0.01);
}

TEST(Diagnostics, FractionOutsideUnit) {
  EXPECT_EQ(fraction_outside_unit({0.0, 0.5, 1.0, 0.2}), 0.0);
  EXPECT_EQ(fraction_outside_unit({-0.1, 0.5, 1.2, 0.2}), 0.5);
  EXPECT_EQ(fraction_outside_unit({-1e-12, 0.5, 0.5, 0.5, 0.5}), 0.2);
}

// ---- end-to-end analysis on metric rows ----

namespace {

std::vector<evaluate::MetricRow> synthetic_rows(uint64_t seed, bool drop_some = true) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> gauss;
  std::vector<evaluate::MetricRow> rows;
  const std::vector<std::string> langs = {"en", "de"}, locs = {"Germany", "Japan"}, roles = {"Director/Recruiter", "PhD student"},
                                  fields = {"Physics", "Biology"}, sens = {"Junior Professor", "Senior Professor"},
                                  llms = {"beta", "alpha", "gamma"};
  const std::vector<std::pair<std::string, std::string>> subs = {{"condensed matter", "anatomy"},
                                                                 {"physics education", "neuroscience"}};
  size_t id = 0;
  for (const auto& llm : llms)
    for (const auto& lang : langs)
      for (const auto& loc : locs)
        for (const auto& role : roles)
          for (int k : {1, 5})
            for (size_t fi = 0; fi < fields.size(); ++fi)
              for (int slot = 1; slot <= 2; ++slot)
                for (const auto& sen : sens) {
                  evaluate::MetricRow r;
                  r.prompt_id = "p" + std::to_string(id++ % 128);
                  r.llm_id = llm;
                  r.dims = {role, lang, loc, fields[fi],
                            fi == 0 ? (slot == 1 ? subs[0].first : subs[1].first)
                                    : (slot == 1 ? subs[0].second : subs[1].second),
                            sen, k};
                  r.subfield_slot = slot;
                  const double base = 0.5 + (llm == "gamma" ? 0.2 : 0) + (sen == "Senior Professor" ? 0.1 : 0) +
                                      (k == 5 ? -0.05 : 0);
                  for (size_t m = 0; m < r.values.size(); ++m) r.values[m] = base + 0.05 * gauss(eng) + 0.01 * m;
                  if (drop_some && id % 7 == 0) r["fact_field"] = std::nullopt;
                  r.n_runs = 3;
                  r.n_valid_runs = 3;
                  rows.push_back(r);
                }
  return rows;
}

}  // namespace

TEST(Analyze, EndToEndTablesAreConsistent) {
  const auto rows = synthetic_rows(1);
  AnalyzeOptions opt;
  const auto a = analyze(rows, opt);
  ASSERT_EQ(a.fits.size(), opt.metrics.size());
  for (const auto& f : a.fits) EXPECT_EQ(f.status, "ok") << f.metric;
  EXPECT_EQ(a.factors.size(), opt.metrics.size() * 8);
  // 1+1+1+1+1+1+1+2 non-reference levels per metric.
  EXPECT_EQ(a.coefs.size(), opt.metrics.size() * 9);

  const auto& validity = *std::find_if(a.fits.begin(), a.fits.end(), [](const FitRow& f) { return f.metric == "validity"; });
  EXPECT_EQ(validity.n_used, rows.size());
  EXPECT_EQ(validity.n_dropped, 0u);
  const auto& ff = *std::find_if(a.fits.begin(), a.fits.end(), [](const FitRow& f) { return f.metric == "fact_field"; });
  EXPECT_GT(ff.n_dropped, 0u);
  EXPECT_EQ(ff.n_used + ff.n_dropped, rows.size());
  EXPECT_GT(validity.r2_share_llm, 0.3);

  for (const auto& c : a.coefs) {
    if (c.factor == "llm") EXPECT_EQ(c.reference, "alpha");
    if (c.factor == "subfield") {
      EXPECT_EQ(c.reference, "2");
      EXPECT_EQ(c.level, "1");
    }
    if (c.factor == "k") EXPECT_EQ(c.reference, "1");
    EXPECT_NEAR(c.ci_hi - c.estimate, c.estimate - c.ci_lo, 1e-12);
    EXPECT_GE(c.p_bh, c.p);
  }
  // omega2 recomputed from emitted fields is bitwise identical.
  for (const auto& f : a.factors) {
    const auto& fit = *std::find_if(a.fits.begin(), a.fits.end(), [&](const FitRow& x) { return x.metric == f.metric; });
    EXPECT_EQ(f.omega2, omega_squared(f.ss, f.df, fit.ss_res, fit.df_res, fit.ss_total));
    EXPECT_GE(f.p_bh, f.p);
  }
}

TEST(Analyze, RobustnessChangesOnlyStandardErrors) {
  const auto rows = synthetic_rows(2);
  AnalyzeOptions o1, o0;
  o0.cr = 0;
  const auto a1 = analyze(rows, o1);
  const auto a0 = analyze(rows, o0);
  ASSERT_EQ(a1.coefs.size(), a0.coefs.size());
  for (size_t i = 0; i < a1.coefs.size(); ++i) {
    EXPECT_EQ(a1.coefs[i].estimate, a0.coefs[i].estimate);
    EXPECT_NE(a1.coefs[i].robust_se, a0.coefs[i].robust_se);
  }
}

TEST(Analyze, BhFamilies) {
  const auto rows = synthetic_rows(3);
  AnalyzeOptions pooled, per;
  per.bh_per_metric = true;
  const auto a = analyze(rows, pooled);
  const auto b = analyze(rows, per);
  std::vector<double> all;
  for (const auto& f : a.factors) all.push_back(f.p);
  const auto adj = bh_adjust(all);
  for (size_t i = 0; i < a.factors.size(); ++i) EXPECT_EQ(a.factors[i].p_bh, adj[i]);
  std::vector<double> validity;
  std::vector<size_t> idx;
  for (size_t i = 0; i < b.factors.size(); ++i) {
    if (b.factors[i].metric == "validity") {
      validity.push_back(b.factors[i].p);
      idx.push_back(i);
    }
  }
  const auto adj_v = bh_adjust(validity);
  for (size_t k = 0; k < idx.size(); ++k) EXPECT_EQ(b.factors[idx[k]].p_bh, adj_v[k]);
}

TEST(Analyze, SingleLevelFactorIsDroppedWithNote) {
  auto rows = synthetic_rows(4);
  rows.erase(std::remove_if(rows.begin(), rows.end(), [](const auto& r) { return r.dims.language != "en"; }),
             rows.end());
  AnalyzeOptions opt;
  opt.metrics = {"validity"};
  const auto a = analyze(rows, opt);
  EXPECT_EQ(a.fits[0].dropped_factors, "language");
  EXPECT_EQ(a.factors.size(), 7u);
}

TEST(Analyze, MissingReferenceLevelIsAnError) {
  auto rows = synthetic_rows(5);
  for (auto& r : rows)
    if (r.dims.location == "Germany") r.dims.location = "Canada";
  EXPECT_THROW(analyze(rows), ValidationError);
}

TEST(Analyze, ConstantMetricReportsStatusAndContinues) {
  auto rows = synthetic_rows(6);
  for (auto& r : rows) r["refusals"] = 0.0;
  const auto a = analyze(rows);
  const auto& fr = *std::find_if(a.fits.begin(), a.fits.end(), [](const FitRow& f) { return f.metric == "refusals"; });
  EXPECT_NE(fr.status.find("distinct"), std::string::npos);
  EXPECT_TRUE(std::none_of(a.factors.begin(), a.factors.end(), [](const FactorRow& f) { return f.metric == "refusals"; }));
}

TEST(Analyze, OutputsRoundTripAtFullPrecision) {
  const auto rows = synthetic_rows(7);
  const auto a = analyze(rows);
  const auto dir = std::filesystem::temp_directory_path() / "audit_stats_roundtrip";
  std::filesystem::remove_all(dir);
  write_outputs(a, dir);
  const auto b = read_outputs(dir);
  ASSERT_EQ(a.factors.size(), b.factors.size());
  ASSERT_EQ(a.coefs.size(), b.coefs.size());
  for (size_t i = 0; i < a.factors.size(); ++i) {
    EXPECT_EQ(a.factors[i].ss, b.factors[i].ss);
    EXPECT_EQ(a.factors[i].omega2, b.factors[i].omega2);
    EXPECT_EQ(a.factors[i].p_bh, b.factors[i].p_bh);
  }
  for (size_t i = 0; i < a.coefs.size(); ++i) {
    EXPECT_EQ(a.coefs[i].estimate, b.coefs[i].estimate);
    EXPECT_EQ(a.coefs[i].robust_se, b.coefs[i].robust_se);
    EXPECT_EQ(a.coefs[i].level, b.coefs[i].level);
  }
  for (size_t i = 0; i < a.fits.size(); ++i) {
    EXPECT_EQ(a.fits[i].r2, b.fits[i].r2);
    EXPECT_EQ(a.fits[i].status, b.fits[i].status);
  }
  EXPECT_EQ(a.diagnostics.size(), b.diagnostics.size());
  std::filesystem::remove_all(dir);
}
