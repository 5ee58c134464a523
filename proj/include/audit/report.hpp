#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "audit/error.hpp"
#include "audit/evaluate.hpp"
#include "audit/stats/analyze.hpp"
#include "audit/util/csv.hpp"
#include "audit/util/io.hpp"

// Per-model summaries, composite socio-technical scores and the report
// tables behind the figures.
namespace audit::report {

inline const std::vector<std::string>& technical_terms() {
  static const std::vector<std::string> t = {"validity",   "refusals",       "duplicates",   "fact_author",
                                             "fact_field", "fact_seniority", "fact_location"};
  return t;
}

inline const std::vector<std::string>& social_terms() {
  static const std::vector<std::string> t = {"par_gender", "par_ethnicity", "par_works", "par_citations"};
  return t;
}

enum class Quadrant { Q1, Q2, Q3, Q4 };

inline std::string_view to_string(Quadrant q) {
  switch (q) {
    case Quadrant::Q1: return "Q1";
    case Quadrant::Q2: return "Q2";
    case Quadrant::Q3: return "Q3";
    case Quadrant::Q4: return "Q4";
  }
  return "?";
}

// Q1 high/high, Q2 low technical/high social, Q3 low/low, Q4 high technical/low social.
inline Quadrant quadrant_of(bool tech_high, bool social_high) {
  if (tech_high) return social_high ? Quadrant::Q1 : Quadrant::Q4;
  return social_high ? Quadrant::Q2 : Quadrant::Q3;
}

struct ModelSummary {
  std::string llm_id;
  size_t cells = 0;
  std::vector<std::optional<double>> means = std::vector<std::optional<double>>(evaluate::metric_names().size());
  std::vector<size_t> counts = std::vector<size_t>(evaluate::metric_names().size(), 0);
  double composite_technical = 0;
  double composite_social = 0;
  std::vector<std::string> imputed;  // composite terms that were absent and counted as 0
  Quadrant quadrant = Quadrant::Q3;

  std::optional<double> mean(std::string_view metric) const { return means[evaluate::metric_index(metric)]; }
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ValidationError("median of an empty set");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Fills composites from means. Refusals and duplicates enter as complements.
inline void compute_composites(ModelSummary& s) {
  s.imputed.clear();
  s.composite_technical = 0;
  for (const auto& t : technical_terms()) {
    const auto v = s.mean(t);
    if (!v) {
      s.imputed.push_back(t);
      continue;
    }
    s.composite_technical += (t == "refusals" || t == "duplicates") ? 1.0 - *v : *v;
  }
  s.composite_social = 0;
  for (const auto& t : social_terms()) {
    const auto v = s.mean(t);
    if (!v) {
      s.imputed.push_back(t);
      continue;
    }
    s.composite_social += *v;
  }
}

// Splits both axes at the median over models; values equal to the median go
// to the upper half.
inline void assign_quadrants(std::vector<ModelSummary>& models) {
  if (models.empty()) throw ValidationError("no models to place in quadrants");
  std::vector<double> tech, social;
  for (const auto& m : models) {
    tech.push_back(m.composite_technical);
    social.push_back(m.composite_social);
  }
  const double mt = median(tech), ms = median(social);
  for (auto& m : models) m.quadrant = quadrant_of(m.composite_technical >= mt, m.composite_social >= ms);
}

// Unweighted per-model means over cells; absent values are excluded from
// the mean of that metric.
inline std::vector<ModelSummary> summarize(const std::vector<evaluate::MetricRow>& rows) {
  std::map<std::string, ModelSummary> by_model;
  std::map<std::string, std::vector<double>> sums;
  const size_t nm = evaluate::metric_names().size();
  for (const auto& r : rows) {
    auto& s = by_model[r.llm_id];
    s.llm_id = r.llm_id;
    ++s.cells;
    auto& sum = sums[r.llm_id];
    sum.resize(nm, 0.0);
    for (size_t i = 0; i < nm; ++i) {
      if (r.values[i]) {
        sum[i] += *r.values[i];
        ++s.counts[i];
      }
    }
  }
  if (by_model.empty()) throw ValidationError("no models in metrics input");
  std::vector<ModelSummary> out;
  for (auto& [id, s] : by_model) {
    for (size_t i = 0; i < nm; ++i) {
      if (s.counts[i]) s.means[i] = sums[id][i] / static_cast<double>(s.counts[i]);
    }
    compute_composites(s);
    out.push_back(std::move(s));
  }
  assign_quadrants(out);
  return out;
}

// ---- emission ----

inline std::vector<std::string> summary_columns() {
  std::vector<std::string> cols = {"llm_id", "n_cells"};
  for (const auto& m : evaluate::metric_names()) cols.push_back(m);
  for (const auto& m : evaluate::metric_names()) cols.push_back("n_" + m);
  cols.insert(cols.end(), {"composite_technical", "composite_social", "imputed_terms", "quadrant"});
  return cols;
}

inline std::string join(const std::vector<std::string>& v, char sep = ';') {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : std::string(1, sep)) + s;
  return out;
}

inline std::vector<std::string> split(const std::string& s, char sep = ';') {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string model_summary_csv(const std::vector<ModelSummary>& models) {
  std::ostringstream o;
  csv::write_row(o, summary_columns());
  for (const auto& m : models) {
    csv::Row row = {m.llm_id, std::to_string(m.cells)};
    for (const auto& v : m.means) row.push_back(csv::format_optional(v));
    for (size_t c : m.counts) row.push_back(std::to_string(c));
    row.push_back(csv::format_double(m.composite_technical));
    row.push_back(csv::format_double(m.composite_social));
    row.push_back(join(m.imputed));
    row.push_back(std::string(to_string(m.quadrant)));
    csv::write_row(o, row);
  }
  return o.str();
}

inline std::vector<ModelSummary> read_model_summary(const std::filesystem::path& path) {
  io::require_file(path, "model summary");
  std::istringstream in(io::read_file(path));
  csv::Reader reader(in);
  csv::Row row;
  if (!reader.next(row)) throw ParseError(path.string() + ": empty file");
  const csv::Header h(row);
  std::vector<ModelSummary> out;
  while (reader.next(row)) {
    if (row.size() == 1 && row[0].empty()) continue;
    ModelSummary m;
    m.llm_id = row[h.index("llm_id")];
    m.cells = static_cast<size_t>(csv::parse_int(row[h.index("n_cells")]));
    const auto& names = evaluate::metric_names();
    for (size_t i = 0; i < names.size(); ++i) {
      m.means[i] = csv::parse_optional_double(row[h.index(names[i])]);
      m.counts[i] = static_cast<size_t>(csv::parse_int(row[h.index("n_" + names[i])]));
    }
    m.composite_technical = csv::parse_double(row[h.index("composite_technical")]);
    m.composite_social = csv::parse_double(row[h.index("composite_social")]);
    m.imputed = split(row[h.index("imputed_terms")]);
    const std::string q = row[h.index("quadrant")];
    m.quadrant = q == "Q1" ? Quadrant::Q1 : q == "Q2" ? Quadrant::Q2 : q == "Q3" ? Quadrant::Q3 : Quadrant::Q4;
    out.push_back(std::move(m));
  }
  return out;
}

inline std::string quadrants_csv(const std::vector<ModelSummary>& models) {
  std::vector<double> tech, social;
  for (const auto& m : models) {
    tech.push_back(m.composite_technical);
    social.push_back(m.composite_social);
  }
  const double mt = median(tech), ms = median(social);
  std::ostringstream o;
  csv::write_row(o, {"llm_id", "composite_technical", "composite_social", "median_technical", "median_social",
                     "technical_high", "social_high", "quadrant"});
  for (const auto& m : models) {
    csv::write_row(o, {m.llm_id, csv::format_double(m.composite_technical), csv::format_double(m.composite_social),
                       csv::format_double(mt), csv::format_double(ms), m.composite_technical >= mt ? "1" : "0",
                       m.composite_social >= ms ? "1" : "0", std::string(to_string(m.quadrant))});
  }
  return o.str();
}

// Factor x metric grid of raw omega-squared values plus a residual row
// holding 1 - R^2. Metrics that failed to fit leave their column empty.
inline std::string heatmap_csv(const stats::Analysis& a, const std::vector<std::string>& metrics,
                               const std::vector<std::string>& factors) {
  std::map<std::pair<std::string, std::string>, double> omega;
  for (const auto& f : a.factors) omega[{f.factor, f.metric}] = f.omega2;
  std::map<std::string, double> r2;
  for (const auto& f : a.fits) r2[f.metric] = f.r2;
  std::ostringstream o;
  csv::Row header = {"factor"};
  header.insert(header.end(), metrics.begin(), metrics.end());
  csv::write_row(o, header);
  for (const auto& factor : factors) {
    csv::Row row = {factor};
    for (const auto& m : metrics) {
      auto it = omega.find({factor, m});
      row.push_back(it == omega.end() ? std::string() : stats::num(it->second));
    }
    csv::write_row(o, row);
  }
  csv::Row res = {"residual"};
  for (const auto& m : metrics) {
    auto it = r2.find(m);
    res.push_back(it == r2.end() || std::isnan(it->second) ? std::string() : csv::format_double(1.0 - it->second));
  }
  csv::write_row(o, res);
  return o.str();
}

inline std::string coefficients_csv(const stats::Analysis& a, double alpha = 0.05) {
  std::ostringstream o;
  csv::write_row(o, {"metric", "factor", "level", "reference", "estimate", "ci_lo", "ci_hi", "robust_se", "p_bh",
                     "significant"});
  for (const auto& c : a.coefs) {
    csv::write_row(o, {c.metric, c.factor, c.level, c.reference, stats::num(c.estimate), stats::num(c.ci_lo),
                       stats::num(c.ci_hi), stats::num(c.robust_se), stats::num(c.p_bh),
                       (!std::isnan(c.p_bh) && c.p_bh < alpha) ? "1" : "0"});
  }
  return o.str();
}

struct EmitResult {
  std::vector<std::string> written;
  std::vector<std::string> gaps;
};

// Writes model_summary.csv and quadrants.csv from metrics, and the
// statistics-derived tables when `analysis` is available. Anything that
// cannot be produced is listed in gap_log.txt.
inline EmitResult emit_reports(const std::vector<ModelSummary>& models, const std::optional<stats::Analysis>& analysis,
                               const std::filesystem::path& out_dir) {
  EmitResult r;
  io::write_file(out_dir / "model_summary.csv", model_summary_csv(models));
  r.written.push_back("model_summary.csv");
  io::write_file(out_dir / "quadrants.csv", quadrants_csv(models));
  r.written.push_back("quadrants.csv");
  for (const auto& m : models) {
    if (!m.imputed.empty()) r.gaps.push_back("model " + m.llm_id + ": absent composite terms counted as 0: " + join(m.imputed));
  }

  if (analysis) {
    std::vector<std::string> metrics, factors;
    for (const auto& f : analysis->fits) {
      if (std::find(metrics.begin(), metrics.end(), f.metric) == metrics.end()) metrics.push_back(f.metric);
      if (f.status != "ok") r.gaps.push_back("metric " + f.metric + ": not fitted: " + f.status);
      if (!f.dropped_factors.empty()) r.gaps.push_back("metric " + f.metric + ": single-level factors dropped: " + f.dropped_factors);
    }
    for (const auto& spec : stats::default_factors()) factors.push_back(spec.name);
    for (const auto& f : analysis->factors) {
      if (std::find(factors.begin(), factors.end(), f.factor) == factors.end()) factors.push_back(f.factor);
    }
    io::write_file(out_dir / "heatmap_omega.csv", heatmap_csv(*analysis, metrics, factors));
    r.written.push_back("heatmap_omega.csv");
    io::write_file(out_dir / "coefficients.csv", coefficients_csv(*analysis));
    r.written.push_back("coefficients.csv");
  } else {
    r.gaps.push_back("statistics unavailable: heatmap_omega.csv and coefficients.csv not written");
  }

  std::string log;
  for (const auto& g : r.gaps) log += g + "\n";
  io::write_file(out_dir / "gap_log.txt", log);
  r.written.push_back("gap_log.txt");
  return r;
}

}  // namespace audit::report
