#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "audit/evaluate.hpp"
#include "audit/report.hpp"
#include "audit/util/csv.hpp"
#include "audit/util/io.hpp"

// Comparison of a scripted mini campaign against the golden files written by
// tests/oracles/make_mini_fixture.py.
namespace audit::testsupport {

// GCC 11 reports a spurious maybe-uninitialized read inside std::optional here.
#pragma GCC diagnostic push
#pragma GCC diagnostic ignored "-Wmaybe-uninitialized"

inline int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string("\"") + AUDIT_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

inline std::string mini_all_args(const std::filesystem::path& fixture, const std::filesystem::path& work) {
  return "all --endpoints \"" + (fixture / "endpoints.json").string() + "\" --manifest \"" +
         (fixture / "manifest.json").string() + "\" --corpus \"" + (fixture / "corpus.csv").string() +
         "\" --reps 3 --work-dir \"" + work.string() + "\"";
}

// Returns one line per disagreement; empty when everything matches.
inline std::vector<std::string> compare_mini_golden(const std::filesystem::path& work,
                                                    const std::filesystem::path& fixture, double tol) {
  std::vector<std::string> bad;
  auto close = [tol](const std::optional<double>& a, const std::optional<double>& b) {
    if (a.has_value() != b.has_value()) return false;
    return std::abs(a.value_or(0.0) - b.value_or(0.0)) <= tol;
  };
  auto show = [](const std::optional<double>& v) { return csv::format_optional(v); };

  const auto rows = evaluate::read_csv(work / "metrics.csv");
  std::map<std::pair<std::string, std::string>, const evaluate::MetricRow*> got;
  for (const auto& r : rows) got[{r.prompt_id, r.llm_id}] = &r;

  std::istringstream in(io::read_file(fixture / "golden_metrics.csv"));
  csv::Reader reader(in);
  csv::Row row;
  reader.next(row);
  const csv::Header h(row);
  size_t golden_cells = 0;
  while (reader.next(row)) {
    if (row.size() == 1 && row[0].empty()) continue;
    ++golden_cells;
    const std::string pid = row[h.index("prompt_id")], llm = row[h.index("llm_id")];
    auto it = got.find({pid, llm});
    if (it == got.end()) {
      bad.push_back("missing cell " + pid + "/" + llm);
      continue;
    }
    const auto& r = *it->second;
    const std::string cell = pid + "/" + llm + " ";
    if (r.dims.role != row[h.index("role")]) bad.push_back(cell + "role");
    if (r.dims.language != row[h.index("language")]) bad.push_back(cell + "language");
    if (std::to_string(r.dims.k) != row[h.index("k")]) bad.push_back(cell + "k");
    for (const auto& m : evaluate::metric_names()) {
      const auto want = csv::parse_optional_double(row[h.index(m)]);
      if (!close(r[m], want)) bad.push_back(cell + m + ": got '" + show(r[m]) + "', want '" + show(want) + "'");
    }
    const std::pair<const char*, int> counts[] = {
        {"n_runs", r.n_runs}, {"n_valid_runs", r.n_valid_runs}, {"n_matched", r.n_matched}};
    for (const auto& [name, v] : counts) {
      if (std::to_string(v) != row[h.index(name)]) bad.push_back(cell + name);
    }
  }
  if (golden_cells != rows.size()) {
    bad.push_back("cell count: got " + std::to_string(rows.size()) + ", want " + std::to_string(golden_cells));
  }

  const auto models = report::read_model_summary(work / "report" / "model_summary.csv");
  const auto golden = nlohmann::json::parse(io::read_file(fixture / "golden_models.json"));
  if (models.size() != golden.size()) bad.push_back("model count");
  for (size_t i = 0; i < std::min(models.size(), golden.size()); ++i) {
    const auto& m = models[i];
    const auto& g = golden[i];
    const std::string who = "model " + m.llm_id + " ";
    if (m.llm_id != g.at("llm_id").get<std::string>()) bad.push_back(who + "order");
    for (const auto& name : evaluate::metric_names()) {
      const auto& v = g.at("means").at(name);
      const std::optional<double> want = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      if (!close(m.mean(name), want)) bad.push_back(who + "mean " + name);
    }
    if (!close(m.composite_technical, g.at("composite_technical").get<double>())) bad.push_back(who + "technical");
    if (!close(m.composite_social, g.at("composite_social").get<double>())) bad.push_back(who + "social");
    if (m.imputed != g.at("imputed").get<std::vector<std::string>>()) bad.push_back(who + "imputed terms");
    if (std::string(report::to_string(m.quadrant)) != g.at("quadrant").get<std::string>()) bad.push_back(who + "quadrant");
  }
  return bad;
}

#pragma GCC diagnostic pop

}  // namespace audit::testsupport
