#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "audit/classify.hpp"
#include "audit/corpus.hpp"
#include "audit/error.hpp"
#include "audit/grid.hpp"
#include "audit/resolve.hpp"
#include "audit/util/csv.hpp"
#include "audit/util/io.hpp"
#include "audit/util/text.hpp"

// Per-(prompt, LLM) technical and social metrics.
namespace audit::evaluate {

// Metric columns in output order.
inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {
      "validity",    "refusals",      "duplicates",   "consistency",  "fact_author",   "fact_field",
      "fact_seniority", "fact_location", "div_gender", "div_ethnicity", "div_location",  "div_works",
      "div_citations", "par_gender",  "par_ethnicity", "par_works",   "par_citations", "pop_works",
      "pop_citations", "h_gender",    "h_ethnicity",  "h_location",   "h_works",       "h_citations"};
  return names;
}

inline size_t metric_index(std::string_view name) {
  const auto& names = metric_names();
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw ValidationError("unknown metric '" + std::string(name) + "'");
}

struct MetricRow {
  std::string prompt_id;
  std::string llm_id;
  grid::PromptDims dims;
  int subfield_slot = 1;
  std::vector<std::optional<double>> values = std::vector<std::optional<double>>(metric_names().size());
  int n_runs = 0;
  int n_valid_runs = 0;
  int n_matched = 0;

  std::optional<double>& operator[](std::string_view metric) { return values[metric_index(metric)]; }
  const std::optional<double>& operator[](std::string_view metric) const { return values[metric_index(metric)]; }
};

inline std::vector<std::string> csv_columns() {
  std::vector<std::string> cols = {"prompt_id", "llm_id",    "role",      "language", "location",
                                   "field",     "subfield",  "subfield_slot", "seniority", "k"};
  for (const auto& m : metric_names()) cols.push_back(m);
  cols.insert(cols.end(), {"n_runs", "n_valid_runs", "n_matched"});
  return cols;
}

// Shannon entropy (natural log) of the empirical distribution.
inline double entropy(const std::map<std::string, size_t>& counts) {
  size_t total = 0;
  for (const auto& [c, n] : counts) total += n;
  if (total == 0) return 0;
  double h = 0;
  for (const auto& [c, n] : counts) {
    if (n == 0) continue;
    const double p = static_cast<double>(n) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h;
}

// Entropy normalized by ln(support_size); 0 when the support has one category.
inline double diversity(const std::map<std::string, size_t>& counts, size_t support_size) {
  if (support_size <= 1) return 0;
  return std::clamp(entropy(counts) / std::log(static_cast<double>(support_size)), 0.0, 1.0);
}

// One minus the total-variation distance between two distributions.
inline double parity(const std::map<std::string, double>& observed, const std::map<std::string, double>& reference) {
  std::set<std::string> keys;
  for (const auto& [k, v] : observed) keys.insert(k);
  for (const auto& [k, v] : reference) keys.insert(k);
  double tv = 0;
  for (const auto& k : keys) {
    const auto o = observed.count(k) ? observed.at(k) : 0.0;
    const auto r = reference.count(k) ? reference.at(k) : 0.0;
    tv += std::abs(o - r);
  }
  return std::clamp(1.0 - 0.5 * tv, 0.0, 1.0);
}

// Proportions over known categories; nullopt when nothing is left.
inline std::optional<std::map<std::string, double>> known_proportions(const std::map<std::string, size_t>& counts,
                                                                      corpus::Attribute a) {
  double total = 0;
  for (const auto& [c, n] : counts) {
    if (!corpus::ScholarIndex::is_unknown(a, c)) total += static_cast<double>(n);
  }
  if (total == 0) return std::nullopt;
  std::map<std::string, double> out;
  for (const auto& [c, n] : counts) {
    if (!corpus::ScholarIndex::is_unknown(a, c)) out[c] = static_cast<double>(n) / total;
  }
  return out;
}

inline double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1;
  size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

inline std::string name_key(const std::string& name, const std::string& lastname) {
  return text::match_key(name) + '\x1f' + text::match_key(lastname);
}

// One run of a cell as seen by the metrics.
struct RunView {
  classify::Category category = classify::Category::invalid;
  const classify::ClassifiedResponse* classified = nullptr;
  const resolve::ResolvedResponse* resolved = nullptr;  // valid runs only
};

struct Options {
  bool per_field_reference = false;  // parity reference restricted to the prompt's field
  bool per_run_average = false;      // social metrics per run, then averaged
};

struct Context {
  const corpus::ScholarIndex& index;
  const grid::DimensionSet& dims;
  Options options;
};

namespace detail {

struct Social {
  std::optional<double> div[5];
  std::optional<double> h[5];
  std::optional<double> par[4];
  std::optional<double> pop[2];
};

inline constexpr corpus::Attribute kDivAttrs[5] = {corpus::Attribute::gender, corpus::Attribute::ethnicity,
                                                   corpus::Attribute::country, corpus::Attribute::works_bin,
                                                   corpus::Attribute::citations_bin};
inline constexpr corpus::Attribute kParAttrs[4] = {corpus::Attribute::gender, corpus::Attribute::ethnicity,
                                                   corpus::Attribute::works_bin, corpus::Attribute::citations_bin};

inline Social social(const std::vector<const corpus::ScholarRecord*>& matched, const Context& ctx,
                     const std::string& field) {
  Social s;
  if (matched.empty()) return s;
  for (int a = 0; a < 5; ++a) {
    std::map<std::string, size_t> counts;
    for (const auto* r : matched) ++counts[ctx.index.category(*r, kDivAttrs[a])];
    s.h[a] = entropy(counts);
    s.div[a] = diversity(counts, ctx.index.support_size(kDivAttrs[a]));
  }
  for (int a = 0; a < 4; ++a) {
    std::map<std::string, size_t> counts;
    for (const auto* r : matched) ++counts[ctx.index.category(*r, kParAttrs[a])];
    const auto observed = known_proportions(counts, kParAttrs[a]);
    if (!observed) continue;
    const auto reference = ctx.index.population_marginal(
        kParAttrs[a], ctx.options.per_field_reference ? std::optional<std::string>(field) : std::nullopt);
    s.par[a] = parity(*observed, reference);
  }
  size_t high_works = 0, high_cites = 0;
  for (const auto* r : matched) {
    high_works += ctx.index.works_tier(*r) == corpus::Tier::high;
    high_cites += ctx.index.citations_tier(*r) == corpus::Tier::high;
  }
  s.pop[0] = static_cast<double>(high_works) / static_cast<double>(matched.size());
  s.pop[1] = static_cast<double>(high_cites) / static_cast<double>(matched.size());
  return s;
}

inline std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  double sum = 0;
  size_t n = 0;
  for (const auto& x : xs) {
    if (x) {
      sum += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace detail

// Metrics of one (prompt, LLM) cell from all of its runs.
inline MetricRow evaluate_cell(const grid::PromptInstance& prompt, const std::string& llm_id,
                               const std::vector<RunView>& runs, const Context& ctx) {
  if (runs.empty()) throw ValidationError("cell " + prompt.prompt_id + "/" + llm_id + " has no runs");
  MetricRow row;
  row.prompt_id = prompt.prompt_id;
  row.llm_id = llm_id;
  row.dims = prompt.dims;
  row.subfield_slot = prompt.subfield_slot;
  row.n_runs = static_cast<int>(runs.size());

  const std::string field = ctx.dims.canonical_field(prompt.dims.field).value_or(prompt.dims.field);
  const std::string stage = ctx.dims.seniority_level(prompt.dims.seniority).stage;
  const auto iso = ctx.dims.location_iso(prompt.dims.location);
  if (!iso) throw ValidationError("no ISO code for location '" + prompt.dims.location + "'");

  size_t n_valid = 0, n_refused = 0;
  std::vector<double> dup_shares;
  std::vector<std::set<std::string>> name_sets;
  size_t total_recs = 0, found = 0, field_ok = 0, seniority_ok = 0, location_ok = 0;
  std::vector<const corpus::ScholarRecord*> pooled;
  std::vector<detail::Social> per_run;

  for (const auto& run : runs) {
    if (run.category == classify::Category::refused) ++n_refused;
    if (run.category != classify::Category::valid) continue;
    ++n_valid;
    if (run.resolved == nullptr || run.classified == nullptr) {
      throw ValidationError("valid run of " + prompt.prompt_id + "/" + llm_id + " has no resolution");
    }
    const auto& recs = run.classified->records;
    std::set<std::string> names;
    for (const auto& r : recs) names.insert(name_key(r.name, r.lastname));
    dup_shares.push_back(recs.empty() ? 0.0
                                      : static_cast<double>(recs.size() - names.size()) / static_cast<double>(recs.size()));
    name_sets.push_back(std::move(names));

    std::vector<const corpus::ScholarRecord*> matched;
    for (const auto& rr : run.resolved->records) {
      ++total_recs;
      if (rr.fuzzy.status != resolve::Status::found) continue;
      const auto i = ctx.index.find_id(*rr.fuzzy.scholar_id);
      if (!i) throw ValidationError("resolved scholar_id '" + *rr.fuzzy.scholar_id + "' not in index");
      const auto& s = ctx.index.at(*i);
      ++found;
      field_ok += s.field == field;
      if (const auto age = s.career_age()) {
        seniority_ok += (stage == "junior" && *age <= 10) || (stage == "senior" && *age >= 20);
      }
      location_ok += s.country_code && *s.country_code == *iso;
      matched.push_back(&s);
    }
    if (ctx.options.per_run_average) per_run.push_back(detail::social(matched, ctx, field));
    pooled.insert(pooled.end(), matched.begin(), matched.end());
  }

  const double runs_d = static_cast<double>(runs.size());
  row["validity"] = static_cast<double>(n_valid) / runs_d;
  row["refusals"] = static_cast<double>(n_refused) / runs_d;
  if (n_valid > 0) {
    double sum = 0;
    for (double d : dup_shares) sum += d;
    row["duplicates"] = sum / static_cast<double>(n_valid);
  }
  if (n_valid >= 2) {
    double sum = 0;
    size_t pairs = 0;
    for (size_t i = 0; i < name_sets.size(); ++i) {
      for (size_t j = i + 1; j < name_sets.size(); ++j) {
        sum += jaccard(name_sets[i], name_sets[j]);
        ++pairs;
      }
    }
    row["consistency"] = sum / static_cast<double>(pairs);
  }
  if (total_recs > 0) row["fact_author"] = static_cast<double>(found) / static_cast<double>(total_recs);
  if (found > 0) {
    const double f = static_cast<double>(found);
    row["fact_field"] = static_cast<double>(field_ok) / f;
    row["fact_seniority"] = static_cast<double>(seniority_ok) / f;
    row["fact_location"] = static_cast<double>(location_ok) / f;
  }

  static const char* kDiv[5] = {"div_gender", "div_ethnicity", "div_location", "div_works", "div_citations"};
  static const char* kH[5] = {"h_gender", "h_ethnicity", "h_location", "h_works", "h_citations"};
  static const char* kPar[4] = {"par_gender", "par_ethnicity", "par_works", "par_citations"};
  static const char* kPop[2] = {"pop_works", "pop_citations"};
  if (ctx.options.per_run_average) {
    auto avg = [&](auto member) {
      std::vector<std::optional<double>> xs;
      for (const auto& s : per_run) xs.push_back(member(s));
      return detail::mean_of(xs);
    };
    for (int a = 0; a < 5; ++a) {
      row[kDiv[a]] = avg([a](const detail::Social& s) { return s.div[a]; });
      row[kH[a]] = avg([a](const detail::Social& s) { return s.h[a]; });
    }
    for (int a = 0; a < 4; ++a) row[kPar[a]] = avg([a](const detail::Social& s) { return s.par[a]; });
    for (int a = 0; a < 2; ++a) row[kPop[a]] = avg([a](const detail::Social& s) { return s.pop[a]; });
  } else {
    const auto s = detail::social(pooled, ctx, field);
    for (int a = 0; a < 5; ++a) {
      row[kDiv[a]] = s.div[a];
      row[kH[a]] = s.h[a];
    }
    for (int a = 0; a < 4; ++a) row[kPar[a]] = s.par[a];
    for (int a = 0; a < 2; ++a) row[kPop[a]] = s.pop[a];
  }

  row.n_valid_runs = static_cast<int>(n_valid);
  row.n_matched = static_cast<int>(found);
  return row;
}

// Joins classified responses (all runs) with resolutions (valid runs) and
// evaluates every (prompt, LLM) cell. Rows follow grid order within each LLM,
// LLMs sorted by id.
inline std::vector<MetricRow> evaluate_all(const std::vector<grid::PromptInstance>& prompts,
                                           const std::vector<classify::ClassifiedResponse>& classified,
                                           const std::vector<resolve::ResolvedResponse>& resolved, const Context& ctx) {
  std::map<std::string, size_t> prompt_pos;
  for (size_t i = 0; i < prompts.size(); ++i) prompt_pos.emplace(prompts[i].prompt_id, i);

  using Key = std::tuple<std::string, std::string, int>;
  std::map<Key, const resolve::ResolvedResponse*> by_key;
  for (const auto& r : resolved) {
    if (!by_key.emplace(Key{r.prompt_id, r.llm_id, r.run_idx}, &r).second) {
      throw ValidationError("duplicate resolved record " + r.prompt_id + "/" + r.llm_id + "/" + std::to_string(r.run_idx));
    }
  }

  std::map<std::pair<std::string, size_t>, std::vector<RunView>> cells;  // (llm, prompt position)
  std::set<Key> seen;
  for (const auto& c : classified) {
    auto pos = prompt_pos.find(c.prompt_id);
    if (pos == prompt_pos.end()) throw ValidationError("prompt_id '" + c.prompt_id + "' not in grid");
    if (!seen.insert(Key{c.prompt_id, c.llm_id, c.run_idx}).second) {
      throw ValidationError("duplicate classified record " + c.prompt_id + "/" + c.llm_id + "/" + std::to_string(c.run_idx));
    }
    RunView v;
    v.category = c.category;
    v.classified = &c;
    if (c.category == classify::Category::valid) {
      auto it = by_key.find(Key{c.prompt_id, c.llm_id, c.run_idx});
      if (it == by_key.end()) {
        throw ValidationError("no resolution for valid response " + c.prompt_id + "/" + c.llm_id + "/" +
                              std::to_string(c.run_idx));
      }
      v.resolved = it->second;
    }
    cells[{c.llm_id, pos->second}].push_back(v);
  }

  std::vector<MetricRow> rows;
  rows.reserve(cells.size());
  for (const auto& [key, runs] : cells) rows.push_back(evaluate_cell(prompts[key.second], key.first, runs, ctx));
  return rows;
}

inline void write_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  csv::write_row(out, csv_columns());
  for (const auto& r : rows) {
    csv::Row cells = {r.prompt_id,     r.llm_id,           r.dims.role,     r.dims.language,
                      r.dims.location, r.dims.field,       r.dims.subfield, std::to_string(r.subfield_slot),
                      r.dims.seniority, std::to_string(r.dims.k)};
    for (const auto& v : r.values) cells.push_back(csv::format_optional(v));
    cells.push_back(std::to_string(r.n_runs));
    cells.push_back(std::to_string(r.n_valid_runs));
    cells.push_back(std::to_string(r.n_matched));
    csv::write_row(out, cells);
  }
}

inline void write_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ostringstream out;
  write_csv(out, rows);
  io::write_file(path, out.str());
}

inline std::vector<MetricRow> read_csv(std::istream& in) {
  csv::Reader reader(in);
  csv::Row row;
  if (!reader.next(row)) throw ParseError("metrics CSV is empty");
  const csv::Header h(row);
  std::vector<size_t> metric_cols;
  for (const auto& m : metric_names()) metric_cols.push_back(h.index(m));
  const size_t c_pid = h.index("prompt_id"), c_llm = h.index("llm_id"), c_role = h.index("role"),
               c_lang = h.index("language"), c_loc = h.index("location"), c_field = h.index("field"),
               c_sub = h.index("subfield"), c_slot = h.index("subfield_slot"), c_sen = h.index("seniority"),
               c_k = h.index("k"), c_runs = h.index("n_runs"), c_valid = h.index("n_valid_runs"),
               c_matched = h.index("n_matched");
  std::vector<MetricRow> rows;
  while (reader.next(row)) {
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != h.names().size()) {
      throw ParseError("metrics CSV line " + std::to_string(reader.line()) + ": wrong column count");
    }
    MetricRow r;
    r.prompt_id = row[c_pid];
    r.llm_id = row[c_llm];
    r.dims = {row[c_role], row[c_lang], row[c_loc], row[c_field], row[c_sub], row[c_sen],
              static_cast<int>(csv::parse_int(row[c_k]))};
    r.subfield_slot = static_cast<int>(csv::parse_int(row[c_slot]));
    for (size_t i = 0; i < metric_cols.size(); ++i) r.values[i] = csv::parse_optional_double(row[metric_cols[i]]);
    r.n_runs = static_cast<int>(csv::parse_int(row[c_runs]));
    r.n_valid_runs = static_cast<int>(csv::parse_int(row[c_valid]));
    r.n_matched = static_cast<int>(csv::parse_int(row[c_matched]));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<MetricRow> read_csv(const std::filesystem::path& path) {
  io::require_file(path, "metrics file");
  std::istringstream in(io::read_file(path));
  return read_csv(in);
}

}  // namespace audit::evaluate
