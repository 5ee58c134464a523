#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "audit/error.hpp"
#include "audit/evaluate.hpp"
#include "audit/stats/diagnostics.hpp"
#include "audit/stats/linear_model.hpp"
#include "audit/util/csv.hpp"
#include "audit/util/io.hpp"
#include "audit/util/rng.hpp"

// Per-metric fixed-effects analysis of metrics.csv.
namespace audit::stats {

struct FactorSpec {
  std::string name;
  std::string reference;  // empty: first level in lexicographic order
};

// Factor order and reference configuration of the model.
inline std::vector<FactorSpec> default_factors() {
  return {{"language", "en"},
          {"location", "Germany"},
          {"role", "Director/Recruiter"},
          {"k", "1"},
          {"field", "Physics"},
          {"subfield", "physics education"},
          {"seniority", "Junior Professor"},
          {"llm", ""}};
}

// Metrics modelled by default; the raw entropies are descriptive only.
inline std::vector<std::string> default_metrics() {
  std::vector<std::string> out;
  for (const auto& m : evaluate::metric_names()) {
    if (m.rfind("h_", 0) != 0) out.push_back(m);
  }
  return out;
}

struct AnalyzeOptions {
  double confidence = 0.95;
  int cr = 1;
  bool bh_per_metric = false;  // default: one pooled family across metrics
  std::vector<std::string> metrics = default_metrics();
  std::vector<FactorSpec> factors = default_factors();
  uint64_t seed = 7;  // Shapiro-Wilk subsampling
};

// Level label of a row for a model factor. Subfields are nested in fields,
// so they enter the model as their slot within the field.
inline std::string factor_label(const evaluate::MetricRow& r, const std::string& factor) {
  if (factor == "language") return r.dims.language;
  if (factor == "location") return r.dims.location;
  if (factor == "role") return r.dims.role;
  if (factor == "k") return std::to_string(r.dims.k);
  if (factor == "field") return r.dims.field;
  if (factor == "subfield") return std::to_string(r.subfield_slot);
  if (factor == "seniority") return r.dims.seniority;
  if (factor == "llm") return r.llm_id;
  throw ConfigError("unknown model factor '" + factor + "'");
}

struct FactorRow {
  std::string metric, factor;
  double ss = NAN, df = NAN, omega2 = NAN;
  double wald = NAN, p = NAN, p_bh = NAN;  // cluster-robust joint Wald test
  double f = NAN, p_f = NAN;               // classical F test
};

struct CoefRow {
  std::string metric, factor, level, reference;
  double estimate = NAN, robust_se = NAN, naive_se = NAN, ci_lo = NAN, ci_hi = NAN, p = NAN, p_bh = NAN;
};

struct DiagRow {
  std::string metric;
  double shapiro_w = NAN, shapiro_p = NAN, bp_stat = NAN, bp_p = NAN, frac_outside_unit = NAN;
  size_t shapiro_n = 0;
};

struct FitRow {
  std::string metric;
  double r2 = NAN, adj_r2 = NAN, r2_share_llm = NAN;
  size_t n_used = 0, n_dropped = 0;
  double ss_res = NAN, df_res = NAN, ss_total = NAN;
  size_t clusters = 0;
  double cr_scale = NAN;
  std::string dropped_factors;  // single-level factors left out of the model
  std::string status = "ok";
};

struct Analysis {
  std::vector<FactorRow> factors;
  std::vector<CoefRow> coefs;
  std::vector<DiagRow> diagnostics;
  std::vector<FitRow> fits;
};

namespace detail {

inline std::string resolve_reference(const std::vector<evaluate::MetricRow>& rows, const FactorSpec& spec,
                                     const std::vector<std::string>& labels) {
  if (spec.reference.empty()) return *std::min_element(labels.begin(), labels.end());
  if (spec.name != "subfield") return spec.reference;
  for (const auto& r : rows) {
    if (r.dims.subfield == spec.reference) return std::to_string(r.subfield_slot);
  }
  throw ValidationError("factor 'subfield': reference level '" + spec.reference + "' not present in data");
}

}  // namespace detail

// Fits one metric. Errors propagate; analyze() turns them into a status.
inline void analyze_metric(const std::vector<evaluate::MetricRow>& rows, const std::string& metric,
                           const AnalyzeOptions& opt, Analysis& out) {
  const size_t mi = evaluate::metric_index(metric);
  FitRow fr;
  fr.metric = metric;

  Dataset d;
  std::vector<const evaluate::MetricRow*> used;
  for (const auto& r : rows) {
    if (r.values[mi]) {
      used.push_back(&r);
      d.y.push_back(*r.values[mi]);
      d.clusters.push_back(r.prompt_id + "|" + r.llm_id);
    }
  }
  fr.n_used = used.size();
  fr.n_dropped = rows.size() - used.size();

  for (const auto& spec : opt.factors) {
    std::vector<std::string> labels;
    labels.reserve(used.size());
    for (const auto* r : used) labels.push_back(factor_label(*r, spec.name));
    if (labels.empty()) break;
    if (std::set<std::string>(labels.begin(), labels.end()).size() < 2) {
      fr.dropped_factors += (fr.dropped_factors.empty() ? "" : ";") + spec.name;
      continue;
    }
    d.factors.push_back(Factor::from_labels(spec.name, labels, detail::resolve_reference(rows, spec, labels)));
  }

  const OlsFit fit = fit_ols(d);
  const auto ss = anova_type2(fit);
  const RobustCovariance rc = cluster_robust(fit, d.clusters, opt.cr);
  const double z = normal_quantile(0.5 + opt.confidence / 2.0);
  const double ms_res = fit.ms_res();

  fr.r2 = fit.r2();
  fr.adj_r2 = fit.adj_r2();
  fr.ss_res = fit.rss;
  fr.df_res = static_cast<double>(fit.df_res());
  fr.ss_total = fit.tss;
  fr.clusters = rc.clusters;
  fr.cr_scale = rc.scale;
  const bool has_llm =
      std::any_of(fit.factors.begin(), fit.factors.end(), [](const Factor& f) { return f.name == "llm"; });
  if (has_llm) fr.r2_share_llm = r2_share(fit, ss, "llm");

  for (size_t f = 0; f < fit.factors.size(); ++f) {
    const auto& factor = fit.factors[f];
    FactorRow row;
    row.metric = metric;
    row.factor = factor.name;
    row.ss = ss[f].ss;
    row.df = static_cast<double>(ss[f].df);
    row.omega2 = omega_squared(row.ss, row.df, fit.rss, fr.df_res, fit.tss);
    row.f = ms_res > 0 ? (row.ss / row.df) / ms_res : (row.ss > 0 ? INFINITY : NAN);
    row.p_f = std::isnan(row.f) ? NAN : f_sf(row.f, row.df, fr.df_res);

    const auto& cols = fit.design.factor_columns[f];
    const MatrixXd v = detail::sub_matrix(rc.cov, cols);
    const VectorXd b = detail::sub_vector(fit.beta, cols);
    Eigen::LDLT<MatrixXd> ldlt(v);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && v.diagonal().minCoeff() > 0) {
      row.wald = b.dot(ldlt.solve(b));
      row.p = chi2_sf(row.wald, row.df);
    }
    out.factors.push_back(row);

    for (uint32_t l = 1; l < factor.levels.size(); ++l) {
      const auto j = static_cast<Eigen::Index>(fit.design.level_column[f][l]);
      CoefRow c;
      c.metric = metric;
      c.factor = factor.name;
      c.level = factor.levels[l];
      c.reference = factor.levels[0];
      c.estimate = fit.beta(j);
      c.robust_se = std::sqrt(std::max(0.0, rc.cov(j, j)));
      c.naive_se = std::sqrt(std::max(0.0, ms_res * fit.xtx_inv(j, j)));
      c.ci_lo = c.estimate - z * c.robust_se;
      c.ci_hi = c.estimate + z * c.robust_se;
      if (c.robust_se > 0) c.p = normal_two_sided_p(c.estimate / c.robust_se);
      out.coefs.push_back(c);
    }
  }

  DiagRow dg;
  dg.metric = metric;
  try {
    const auto sw = shapiro_wilk_subsample(fit.residuals, rng::seed_from(std::to_string(opt.seed) + "|" + metric));
    dg.shapiro_w = sw.w;
    dg.shapiro_p = sw.p;
    dg.shapiro_n = sw.n;
  } catch (const ValidationError&) {
    // constant or too few residuals: W undefined
  }
  const auto bp = breusch_pagan(fit);
  dg.bp_stat = bp.lm;
  dg.bp_p = bp.p;
  dg.frac_outside_unit = fraction_outside_unit(fit.fitted);
  out.diagnostics.push_back(dg);
  out.fits.push_back(fr);
}

namespace detail {

// BH over the p-values selected by `member`, either pooled or per metric.
template <typename Row>
void apply_bh(std::vector<Row>& rows, bool per_metric) {
  std::map<std::string, std::vector<size_t>> families;
  for (size_t i = 0; i < rows.size(); ++i) families[per_metric ? rows[i].metric : std::string()].push_back(i);
  for (const auto& [key, idx] : families) {
    std::vector<double> p;
    for (size_t i : idx) p.push_back(rows[i].p);
    const auto adj = bh_adjust(p);
    for (size_t k = 0; k < idx.size(); ++k) rows[idx[k]].p_bh = adj[k];
  }
}

}  // namespace detail

inline Analysis analyze(const std::vector<evaluate::MetricRow>& rows, const AnalyzeOptions& opt = {}) {
  if (rows.empty()) throw ValidationError("no metric rows to analyze");
  if (!(opt.confidence > 0 && opt.confidence < 1)) throw ConfigError("confidence must be in (0, 1)");
  if (opt.cr != 0 && opt.cr != 1) throw ConfigError("--cr must be 0 or 1");
  // Fixed reference levels must exist somewhere in the data; a missing one is
  // a configuration problem rather than a per-metric gap.
  for (const auto& spec : opt.factors) {
    if (spec.reference.empty()) continue;
    bool found = false;
    for (const auto& r : rows) {
      const std::string label = spec.name == "subfield" ? r.dims.subfield : factor_label(r, spec.name);
      if (label == spec.reference) {
        found = true;
        break;
      }
    }
    if (!found) {
      throw ValidationError("factor '" + spec.name + "': reference level '" + spec.reference + "' not present in data");
    }
  }

  Analysis out;
  for (const auto& metric : opt.metrics) {
    Analysis one;
    try {
      analyze_metric(rows, metric, opt, one);
    } catch (const ValidationError& e) {
      one = {};
      FitRow fr;
      fr.metric = metric;
      fr.status = e.what();
      const size_t mi = evaluate::metric_index(metric);
      for (const auto& r : rows) (r.values[mi] ? fr.n_used : fr.n_dropped) += 1;
      one.fits.push_back(fr);
    } catch (const NumericError& e) {
      one = {};
      FitRow fr;
      fr.metric = metric;
      fr.status = e.what();
      one.fits.push_back(fr);
    }
    for (auto& v : one.factors) out.factors.push_back(std::move(v));
    for (auto& v : one.coefs) out.coefs.push_back(std::move(v));
    for (auto& v : one.diagnostics) out.diagnostics.push_back(std::move(v));
    for (auto& v : one.fits) out.fits.push_back(std::move(v));
  }
  detail::apply_bh(out.factors, opt.bh_per_metric);
  detail::apply_bh(out.coefs, opt.bh_per_metric);
  return out;
}

// ---- CSV emission ----

inline std::string num(double v) { return std::isnan(v) ? std::string() : csv::format_double(v); }
inline double parse_num(const std::string& s) { return s.empty() ? NAN : csv::parse_double(s); }

inline void write_outputs(const Analysis& a, const std::filesystem::path& dir) {
  {
    std::ostringstream o;
    csv::write_row(o, {"metric", "factor", "ss", "df", "omega2", "p", "p_bh", "wald", "F", "p_F"});
    for (const auto& r : a.factors) {
      csv::write_row(o, {r.metric, r.factor, num(r.ss), num(r.df), num(r.omega2), num(r.p), num(r.p_bh), num(r.wald),
                         num(r.f), num(r.p_f)});
    }
    io::write_file(dir / "omega.csv", o.str());
  }
  {
    std::ostringstream o;
    csv::write_row(o, {"metric", "factor", "level", "reference", "estimate", "robust_se", "ci_lo", "ci_hi", "p", "p_bh",
                       "naive_se"});
    for (const auto& r : a.coefs) {
      csv::write_row(o, {r.metric, r.factor, r.level, r.reference, num(r.estimate), num(r.robust_se), num(r.ci_lo),
                         num(r.ci_hi), num(r.p), num(r.p_bh), num(r.naive_se)});
    }
    io::write_file(dir / "coef.csv", o.str());
  }
  {
    std::ostringstream o;
    csv::write_row(o, {"metric", "shapiro_w", "bp_stat", "frac_outside_unit", "shapiro_p", "shapiro_n", "bp_p"});
    for (const auto& r : a.diagnostics) {
      csv::write_row(o, {r.metric, num(r.shapiro_w), num(r.bp_stat), num(r.frac_outside_unit), num(r.shapiro_p),
                         std::to_string(r.shapiro_n), num(r.bp_p)});
    }
    io::write_file(dir / "diagnostics.csv", o.str());
  }
  {
    std::ostringstream o;
    csv::write_row(o, {"metric", "r2", "adj_r2", "r2_share_llm", "n_used", "n_dropped", "ss_res", "df_res", "ss_total",
                       "clusters", "cr_scale", "dropped_factors", "status"});
    for (const auto& r : a.fits) {
      csv::write_row(o, {r.metric, num(r.r2), num(r.adj_r2), num(r.r2_share_llm), std::to_string(r.n_used),
                         std::to_string(r.n_dropped), num(r.ss_res), num(r.df_res), num(r.ss_total),
                         std::to_string(r.clusters), num(r.cr_scale), r.dropped_factors, r.status});
    }
    io::write_file(dir / "fit.csv", o.str());
  }
}

namespace detail {

inline std::vector<csv::Row> read_table(const std::filesystem::path& path, csv::Header& header) {
  io::require_file(path, "stats table");
  std::istringstream in(io::read_file(path));
  csv::Reader reader(in);
  csv::Row row;
  if (!reader.next(row)) throw ParseError(path.string() + ": empty file");
  header = csv::Header(row);
  std::vector<csv::Row> rows;
  while (reader.next(row)) {
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != header.names().size()) {
      throw ParseError(path.string() + ":" + std::to_string(reader.line()) + ": wrong column count");
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace detail

// Reads a directory written by write_outputs. Missing files raise ConfigError.
inline Analysis read_outputs(const std::filesystem::path& dir) {
  Analysis a;
  csv::Header h;
  for (const auto& row : detail::read_table(dir / "omega.csv", h)) {
    FactorRow r;
    r.metric = row[h.index("metric")];
    r.factor = row[h.index("factor")];
    r.ss = parse_num(row[h.index("ss")]);
    r.df = parse_num(row[h.index("df")]);
    r.omega2 = parse_num(row[h.index("omega2")]);
    r.p = parse_num(row[h.index("p")]);
    r.p_bh = parse_num(row[h.index("p_bh")]);
    r.wald = parse_num(row[h.index("wald")]);
    r.f = parse_num(row[h.index("F")]);
    r.p_f = parse_num(row[h.index("p_F")]);
    a.factors.push_back(r);
  }
  for (const auto& row : detail::read_table(dir / "coef.csv", h)) {
    CoefRow r;
    r.metric = row[h.index("metric")];
    r.factor = row[h.index("factor")];
    r.level = row[h.index("level")];
    r.reference = row[h.index("reference")];
    r.estimate = parse_num(row[h.index("estimate")]);
    r.robust_se = parse_num(row[h.index("robust_se")]);
    r.ci_lo = parse_num(row[h.index("ci_lo")]);
    r.ci_hi = parse_num(row[h.index("ci_hi")]);
    r.p = parse_num(row[h.index("p")]);
    r.p_bh = parse_num(row[h.index("p_bh")]);
    r.naive_se = parse_num(row[h.index("naive_se")]);
    a.coefs.push_back(r);
  }
  for (const auto& row : detail::read_table(dir / "diagnostics.csv", h)) {
    DiagRow r;
    r.metric = row[h.index("metric")];
    r.shapiro_w = parse_num(row[h.index("shapiro_w")]);
    r.bp_stat = parse_num(row[h.index("bp_stat")]);
    r.frac_outside_unit = parse_num(row[h.index("frac_outside_unit")]);
    r.shapiro_p = parse_num(row[h.index("shapiro_p")]);
    r.shapiro_n = static_cast<size_t>(csv::parse_int(row[h.index("shapiro_n")]));
    r.bp_p = parse_num(row[h.index("bp_p")]);
    a.diagnostics.push_back(r);
  }
  for (const auto& row : detail::read_table(dir / "fit.csv", h)) {
    FitRow r;
    r.metric = row[h.index("metric")];
    r.r2 = parse_num(row[h.index("r2")]);
    r.adj_r2 = parse_num(row[h.index("adj_r2")]);
    r.r2_share_llm = parse_num(row[h.index("r2_share_llm")]);
    r.n_used = static_cast<size_t>(csv::parse_int(row[h.index("n_used")]));
    r.n_dropped = static_cast<size_t>(csv::parse_int(row[h.index("n_dropped")]));
    r.ss_res = parse_num(row[h.index("ss_res")]);
    r.df_res = parse_num(row[h.index("df_res")]);
    r.ss_total = parse_num(row[h.index("ss_total")]);
    r.clusters = static_cast<size_t>(csv::parse_int(row[h.index("clusters")]));
    r.cr_scale = parse_num(row[h.index("cr_scale")]);
    r.dropped_factors = row[h.index("dropped_factors")];
    r.status = row[h.index("status")];
    a.fits.push_back(r);
  }
  return a;
}

}  // namespace audit::stats
