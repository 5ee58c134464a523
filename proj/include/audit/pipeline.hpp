#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "audit/classify.hpp"
#include "audit/corpus.hpp"
#include "audit/error.hpp"
#include "audit/evaluate.hpp"
#include "audit/grid.hpp"
#include "audit/llm_gateway.hpp"
#include "audit/report.hpp"
#include "audit/resolve.hpp"
#include "audit/stats/analyze.hpp"
#include "audit/util/digest.hpp"
#include "audit/util/io.hpp"

// Stage runners. Every stage reads and writes files only, and records a
// provenance sidecar next to its output.
namespace audit::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";

// Sidecar path: <file>.prov.json for file outputs, <dir>/provenance.json
// for directory outputs.
inline fs::path provenance_path(const fs::path& output, bool is_dir) {
  return is_dir ? output / "provenance.json" : fs::path(output.string() + ".prov.json");
}

// Inputs are recorded by file name and SHA-256 so that the sidecar does
// not depend on where the working directory lives.
inline void write_provenance(const std::string& stage, const fs::path& output, bool is_dir, const json& config,
                             const std::vector<fs::path>& inputs) {
  json j;
  j["stage"] = stage;
  j["tool_version"] = kToolVersion;
  j["config"] = config;
  j["config_sha256"] = digest::sha256_hex(config.dump());
  json ins = json::array();
  for (const auto& p : inputs) ins.push_back({{"file", p.filename().string()}, {"sha256", digest::file_sha256(p)}});
  j["inputs"] = ins;
  if (!is_dir) j["output_sha256"] = digest::file_sha256(output);
  io::write_file(provenance_path(output, is_dir), j.dump(2) + "\n");
}

// ---- grid ----

inline size_t run_grid(const fs::path& manifest, const fs::path& out) {
  const auto dims = grid::load_manifest(manifest);
  const auto prompts = grid::enumerate_grid(dims);
  std::string text;
  for (const auto& p : prompts) text += io::dump(grid::to_json(p)) + "\n";
  io::write_file(out, text);
  write_provenance("grid", out, false, json::object(), {manifest});
  return prompts.size();
}

// ---- corpus ----

inline json marginals_report(const corpus::ScholarIndex& index, const std::vector<std::string>& diagnostics) {
  json j;
  j["records"] = index.size();
  j["blocks"] = index.block_count();
  j["tertiles"] = {{"works", {index.works_cuts().t33, index.works_cuts().t67}},
                   {"citations", {index.citation_cuts().t33, index.citation_cuts().t67}}};
  json m;
  for (auto a : {corpus::Attribute::gender, corpus::Attribute::ethnicity, corpus::Attribute::works_bin,
                 corpus::Attribute::citations_bin, corpus::Attribute::country}) {
    const std::string name(corpus::to_string(a));
    m[name]["support_size"] = index.support_size(a);
    try {
      m[name]["population"] = index.population_marginal(a);
    } catch (const ValidationError&) {
      m[name]["population"] = json::object();
    }
  }
  j["marginals"] = m;
  j["rejected_rows"] = diagnostics;
  return j;
}

inline corpus::IngestResult run_corpus(const fs::path& in, const fs::path& out, const std::optional<fs::path>& report,
                                       double max_reject_fraction = 0.05) {
  corpus::IngestOptions opts;
  opts.max_reject_fraction = max_reject_fraction;
  auto result = corpus::ingest(in, opts);
  corpus::save_index(result.index, out);
  const json config{{"max_reject_fraction", max_reject_fraction}};
  write_provenance("corpus", out, false, config, {in});
  if (report) io::write_file(*report, marginals_report(result.index, result.diagnostics).dump(2) + "\n");
  return result;
}

// ---- query ----

struct QueryOptions {
  int repetitions = 10;
  bool resume = false;
  uint64_t seed = 7;                          // mock endpoints
  std::optional<fs::path> index;              // required for mock endpoints
  std::optional<fs::path> manifest;           // lets mock endpoints honour location/seniority
  std::optional<std::string> fixed_timestamp;  // reproducible records
};

inline gateway::CampaignSummary run_query(const fs::path& grid_path, const std::vector<gateway::EndpointConfig>& endpoints,
                                          const fs::path& out, const QueryOptions& opt,
                                          const std::vector<fs::path>& extra_inputs = {}) {
  const auto prompts = grid::read_grid(grid_path);
  std::optional<corpus::ScholarIndex> index;
  std::optional<grid::DimensionSet> dims;
  const bool needs_mock = std::any_of(endpoints.begin(), endpoints.end(),
                                      [](const auto& e) { return e.api_style == gateway::ApiStyle::mock; });
  std::unique_ptr<gateway::MockTransport> mock;
  if (needs_mock) {
    if (!opt.index) throw ConfigError("mock endpoints need --index");
    index = corpus::load_index(*opt.index);
    if (opt.manifest) dims = grid::load_manifest(*opt.manifest);
    mock = std::make_unique<gateway::MockTransport>(*index, dims ? &*dims : nullptr, opt.seed);
  }
  gateway::RoutingTransport transport(mock.get());
  if (!opt.resume && fs::exists(out)) fs::remove(out);
  gateway::JsonlSink sink(out, opt.resume);
  gateway::CampaignOptions copts;
  copts.repetitions = opt.repetitions;
  if (opt.fixed_timestamp) {
    const std::string ts = *opt.fixed_timestamp;
    copts.now = [ts] { return ts; };
    copts.record_latency = false;
  }
  auto summary = gateway::run_campaign(prompts, endpoints, transport, sink, copts);

  json eps = json::array();
  for (const auto& e : endpoints) {
    eps.push_back({{"llm_id", e.llm_id}, {"api_style", gateway::to_string(e.api_style)}, {"model_name", e.model_name},
                   {"params", e.params}});
  }
  json config{{"repetitions", opt.repetitions}, {"seed", opt.seed}, {"endpoints", eps}, {"resume", opt.resume}};
  config["campaign"] = summary.to_json();
  std::vector<fs::path> inputs = {grid_path};
  if (opt.index) inputs.push_back(*opt.index);
  inputs.insert(inputs.end(), extra_inputs.begin(), extra_inputs.end());
  write_provenance("query", out, false, config, inputs);
  return summary;
}

// ---- classify ----

inline std::map<std::string, size_t> run_classify(const fs::path& in, const fs::path& out,
                                                  const std::optional<fs::path>& patterns_path) {
  io::require_file(in, "raw responses file");
  const auto patterns = patterns_path ? classify::RefusalPatterns::load(*patterns_path) : classify::RefusalPatterns::defaults();
  std::map<std::string, size_t> counts;
  std::string text;
  io::for_each_jsonl(in, [&](size_t, const json& j) {
    const auto c = classify::classify_response(raw_from_json(j), patterns);
    ++counts[std::string(classify::to_string(c.category))];
    text += io::dump(classify::to_json(c)) + "\n";
  });
  io::write_file(out, text);
  std::vector<fs::path> inputs = {in};
  if (patterns_path) inputs.push_back(*patterns_path);
  write_provenance("classify", out, false, json{{"counts", counts}}, inputs);
  return counts;
}

// ---- resolve ----

inline resolve::ResolveStats run_resolve(const fs::path& in, const fs::path& index_path, const fs::path& out,
                                         bool oracle_check) {
  const auto index = corpus::load_index(index_path);
  const auto st = resolve::resolve_file(in, index, out, oracle_check);
  const json config{{"oracle_check", oracle_check},
                    {"responses", st.responses},
                    {"records", st.records},
                    {"found", st.found},
                    {"oracle_mismatches", st.oracle_mismatches}};
  write_provenance("resolve", out, false, config, {in, index_path});
  return st;
}

// ---- evaluate ----

inline std::vector<evaluate::MetricRow> run_evaluate(const fs::path& grid_path, const fs::path& manifest,
                                                     const fs::path& classified_path, const fs::path& resolved_path,
                                                     const fs::path& index_path, const fs::path& out,
                                                     const evaluate::Options& options) {
  const auto prompts = grid::read_grid(grid_path);
  const auto dims = grid::load_manifest(manifest);
  const auto index = corpus::load_index(index_path);
  io::require_file(classified_path, "classified file");
  std::vector<classify::ClassifiedResponse> classified;
  io::for_each_jsonl(classified_path, [&](size_t, const json& j) { classified.push_back(classify::classified_from_json(j)); });
  const auto resolved = resolve::read_resolved(resolved_path);
  const evaluate::Context ctx{index, dims, options};
  auto rows = evaluate::evaluate_all(prompts, classified, resolved, ctx);
  evaluate::write_csv(out, rows);
  const json config{{"per_field_reference", options.per_field_reference}, {"per_run_average", options.per_run_average}};
  write_provenance("evaluate", out, false, config, {grid_path, manifest, classified_path, resolved_path, index_path});
  return rows;
}

// ---- analyze ----

inline stats::Analysis run_analyze(const fs::path& metrics, const fs::path& out_dir, const stats::AnalyzeOptions& opt) {
  const auto rows = evaluate::read_csv(metrics);
  const auto analysis = stats::analyze(rows, opt);
  fs::create_directories(out_dir);
  stats::write_outputs(analysis, out_dir);
  const json config{{"confidence", opt.confidence},
                    {"cr", opt.cr},
                    {"bh_per_metric", opt.bh_per_metric},
                    {"seed", opt.seed},
                    {"metrics", opt.metrics}};
  write_provenance("analyze", out_dir, true, config, {metrics});
  return analysis;
}

// ---- report ----

inline report::EmitResult run_report(const fs::path& metrics, const std::optional<fs::path>& stats_dir,
                                     const fs::path& out_dir) {
  const auto rows = evaluate::read_csv(metrics);
  const auto models = report::summarize(rows);
  std::optional<stats::Analysis> analysis;
  std::vector<fs::path> inputs = {metrics};
  std::string stats_gap;
  if (stats_dir) {
    try {
      analysis = stats::read_outputs(*stats_dir);
      for (const char* f : {"omega.csv", "coef.csv", "diagnostics.csv", "fit.csv"}) inputs.push_back(*stats_dir / f);
    } catch (const ConfigError& e) {
      stats_gap = e.what();
    }
  }
  fs::create_directories(out_dir);
  auto result = report::emit_reports(models, analysis, out_dir);
  if (!stats_gap.empty()) {
    result.gaps.push_back(stats_gap);
    std::string log;
    for (const auto& g : result.gaps) log += g + "\n";
    io::write_file(out_dir / "gap_log.txt", log);
  }
  write_provenance("report", out_dir, true, json::object(), inputs);
  return result;
}

// ---- all ----

// Two in-process endpoints with different behavior mixes.
inline std::vector<gateway::EndpointConfig> builtin_mock_endpoints() {
  std::vector<gateway::EndpointConfig> eps(2);
  eps[0].llm_id = "mock-steady";
  eps[0].params = {{"mock_mix", {{"faithful", 0.8}, {"hallucinate", 0.08}, {"refuse", 0.04}, {"truncate", 0.04},
                                 {"empty", 0.02}, {"malformed", 0.02}}}};
  eps[1].llm_id = "mock-erratic";
  eps[1].params = {{"mock_mix", {{"faithful", 0.45}, {"hallucinate", 0.25}, {"refuse", 0.12}, {"truncate", 0.06},
                                 {"empty", 0.06}, {"malformed", 0.06}}}};
  for (auto& e : eps) {
    e.api_style = gateway::ApiStyle::mock;
    e.model_name = "mixed";
    e.max_concurrency = 1;
  }
  return eps;
}

struct AllConfig {
  fs::path work_dir = "audit_run";
  fs::path manifest;
  fs::path corpus;
  std::optional<fs::path> endpoints;  // absent: built-in mock endpoints
  std::optional<fs::path> refusal_patterns;
  int repetitions = 10;
  uint64_t seed = 7;
  evaluate::Options eval;
  stats::AnalyzeOptions stats;
};

// Runs every stage into work_dir. Timestamps are pinned so that a seeded
// mock or replay campaign reproduces byte-identical files.
inline void run_all(const AllConfig& cfg, const std::function<void(const std::string&)>& log = nullptr) {
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  const fs::path w = cfg.work_dir;
  fs::create_directories(w);
  io::require_file(cfg.manifest, "manifest file");
  io::require_file(cfg.corpus, "corpus file");

  say("grid: " + std::to_string(run_grid(cfg.manifest, w / "grid.jsonl")) + " prompts");
  const auto ingest = run_corpus(cfg.corpus, w / "index.bin", w / "marginals.json");
  say("corpus: " + std::to_string(ingest.index.size()) + " scholars, " + std::to_string(ingest.diagnostics.size()) +
      " rows rejected");

  std::vector<gateway::EndpointConfig> endpoints;
  std::vector<fs::path> extra;
  if (cfg.endpoints) {
    endpoints = gateway::load_endpoints(*cfg.endpoints);
    extra.push_back(*cfg.endpoints);
  } else {
    endpoints = builtin_mock_endpoints();
  }
  QueryOptions q;
  q.repetitions = cfg.repetitions;
  q.seed = cfg.seed;
  q.index = w / "index.bin";
  q.manifest = cfg.manifest;
  q.fixed_timestamp = "2025-01-01T00:00:00Z";
  const auto summary = run_query(w / "grid.jsonl", endpoints, w / "raw.jsonl", q, extra);
  say("query: " + std::to_string(summary.written) + " responses");

  const auto counts = run_classify(w / "raw.jsonl", w / "classified.jsonl", cfg.refusal_patterns);
  std::string c;
  for (const auto& [k, v] : counts) c += " " + k + "=" + std::to_string(v);
  say("classify:" + c);
  const auto st = run_resolve(w / "classified.jsonl", w / "index.bin", w / "resolved.jsonl", false);
  say("resolve: " + std::to_string(st.found) + " of " + std::to_string(st.records) + " records found");
  const auto rows = run_evaluate(w / "grid.jsonl", cfg.manifest, w / "classified.jsonl", w / "resolved.jsonl",
                                 w / "index.bin", w / "metrics.csv", cfg.eval);
  say("evaluate: " + std::to_string(rows.size()) + " cells");
  const auto analysis = run_analyze(w / "metrics.csv", w / "stats", cfg.stats);
  size_t fitted = 0;
  for (const auto& f : analysis.fits) fitted += f.status == "ok" ? 1 : 0;
  say("analyze: " + std::to_string(fitted) + " of " + std::to_string(analysis.fits.size()) + " metrics fitted");
  const auto rep = run_report(w / "metrics.csv", w / "stats", w / "report");
  say("report: " + std::to_string(rep.written.size()) + " files, " + std::to_string(rep.gaps.size()) + " gaps");
}

}  // namespace audit::pipeline
