// audit: command-line driver for the recommendation audit pipeline.
//
//   audit grid      --manifest M --out grid.jsonl
//   audit corpus    --in scholars.csv --out index.bin [--report marginals.json]
//   audit query     --grid grid.jsonl --endpoints ep.json --reps 10 --out raw.jsonl [--resume]
//   audit classify  --in raw.jsonl --out classified.jsonl [--refusal-patterns patterns.json]
//   audit resolve   --in classified.jsonl --index index.bin --out resolved.jsonl [--oracle-check]
//   audit evaluate  --classified ... --resolved ... --index ... --grid ... --manifest ... --out metrics.csv
//   audit analyze   --metrics metrics.csv --out-dir stats/ [--confidence 0.95] [--cr 1]
//   audit report    --metrics metrics.csv --stats-dir stats/ --out-dir report/
//   audit all       --mock --seed 7 [--work-dir DIR]
//   audit synth-corpus --n 3000 --seed 1 --out scholars.csv
//
// Exit status: 0 ok, 1 runtime failure, 2 usage or configuration error.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "audit/error.hpp"
#include "audit/pipeline.hpp"
#include "audit/synthetic.hpp"

namespace fs = std::filesystem;
using namespace audit;

namespace {

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

fs::path data_file(const char* name) { return fs::path(AUDIT_DATA_DIR) / name; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audit LLM scholar recommendations: grid, query, classify, resolve, evaluate, analyze, report"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pipeline::kToolVersion);

  // grid
  std::string g_manifest = data_file("manifest.json").string(), g_out;
  auto* grid_cmd = app.add_subcommand("grid", "Enumerate the prompt grid");
  grid_cmd->add_option("--manifest", g_manifest, "Manifest JSON")->capture_default_str();
  grid_cmd->add_option("--out", g_out, "Output grid.jsonl")->required();

  // corpus
  std::string c_in, c_out, c_report;
  double c_max_reject = 0.05;
  auto* corpus_cmd = app.add_subcommand("corpus", "Ingest the scholar CSV into an index");
  corpus_cmd->add_option("--in", c_in, "Scholar CSV")->required();
  corpus_cmd->add_option("--out", c_out, "Output index.bin")->required();
  corpus_cmd->add_option("--report", c_report, "Write marginals JSON");
  corpus_cmd->add_option("--max-reject", c_max_reject, "Abort when more than this fraction of rows is rejected")
      ->capture_default_str();

  // query
  std::string q_grid, q_endpoints, q_out, q_index, q_manifest, q_timestamp;
  int q_reps = 10;
  bool q_resume = false;
  uint64_t q_seed = 7;
  auto* query_cmd = app.add_subcommand("query", "Run the query campaign");
  query_cmd->add_option("--grid", q_grid, "grid.jsonl")->required();
  query_cmd->add_option("--endpoints", q_endpoints, "Endpoints JSON")->required();
  query_cmd->add_option("--reps", q_reps, "Repetitions per prompt")->capture_default_str();
  query_cmd->add_option("--out", q_out, "Output raw.jsonl")->required();
  query_cmd->add_flag("--resume", q_resume, "Skip responses already in the output");
  query_cmd->add_option("--index", q_index, "Scholar index (mock endpoints)");
  query_cmd->add_option("--manifest", q_manifest, "Manifest (mock endpoints)");
  query_cmd->add_option("--seed", q_seed, "Mock seed")->capture_default_str();
  query_cmd->add_option("--fixed-timestamp", q_timestamp, "Record this timestamp and no latency");

  // classify
  std::string k_in, k_out, k_patterns;
  auto* classify_cmd = app.add_subcommand("classify", "Classify raw responses");
  classify_cmd->add_option("--in", k_in, "raw.jsonl")->required();
  classify_cmd->add_option("--out", k_out, "Output classified.jsonl")->required();
  classify_cmd->add_option("--refusal-patterns", k_patterns, "Refusal pattern JSON");

  // resolve
  std::string r_in, r_index, r_out;
  bool r_oracle = false;
  auto* resolve_cmd = app.add_subcommand("resolve", "Match recommended names to the scholar index");
  resolve_cmd->add_option("--in", r_in, "classified.jsonl")->required();
  resolve_cmd->add_option("--index", r_index, "index.bin")->required();
  resolve_cmd->add_option("--out", r_out, "Output resolved.jsonl")->required();
  resolve_cmd->add_flag("--oracle-check", r_oracle, "Cross-check every match against an exhaustive scan");

  // evaluate
  std::string e_classified, e_resolved, e_index, e_grid, e_manifest = data_file("manifest.json").string(), e_out;
  evaluate::Options e_opts;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Compute per-cell metrics");
  evaluate_cmd->add_option("--classified", e_classified, "classified.jsonl")->required();
  evaluate_cmd->add_option("--resolved", e_resolved, "resolved.jsonl")->required();
  evaluate_cmd->add_option("--index", e_index, "index.bin")->required();
  evaluate_cmd->add_option("--grid", e_grid, "grid.jsonl")->required();
  evaluate_cmd->add_option("--manifest", e_manifest, "Manifest JSON")->capture_default_str();
  evaluate_cmd->add_option("--out", e_out, "Output metrics.csv")->required();
  evaluate_cmd->add_flag("--per-field-reference", e_opts.per_field_reference, "Parity reference per field");
  evaluate_cmd->add_flag("--per-run-average", e_opts.per_run_average, "Average social metrics over runs");

  // analyze
  std::string a_metrics, a_out;
  stats::AnalyzeOptions a_opts;
  auto* analyze_cmd = app.add_subcommand("analyze", "Fit the per-metric models");
  analyze_cmd->add_option("--metrics", a_metrics, "metrics.csv")->required();
  analyze_cmd->add_option("--out-dir", a_out, "Output directory")->required();
  analyze_cmd->add_option("--confidence", a_opts.confidence, "Confidence level")->capture_default_str();
  analyze_cmd->add_option("--cr", a_opts.cr, "Cluster-robust variant (0 or 1)")->capture_default_str();
  analyze_cmd->add_flag("--bh-per-metric", a_opts.bh_per_metric, "BH families per metric instead of pooled");
  analyze_cmd->add_option("--seed", a_opts.seed, "Shapiro-Wilk subsampling seed")->capture_default_str();

  // report
  std::string p_metrics, p_stats, p_out;
  auto* report_cmd = app.add_subcommand("report", "Summaries, composites, quadrants and heatmap tables");
  report_cmd->add_option("--metrics", p_metrics, "metrics.csv")->required();
  report_cmd->add_option("--stats-dir", p_stats, "Directory written by analyze");
  report_cmd->add_option("--out-dir", p_out, "Output directory")->required();

  // all
  pipeline::AllConfig all;
  all.manifest = data_file("manifest.json");
  all.corpus = data_file("sample_corpus.csv");
  std::string l_work = "audit_run", l_manifest = all.manifest.string(), l_corpus = all.corpus.string(), l_endpoints,
              l_patterns;
  bool l_mock = false;
  auto* all_cmd = app.add_subcommand("all", "Run every stage into a working directory");
  all_cmd->add_flag("--mock", l_mock, "Use the built-in mock endpoints");
  all_cmd->add_option("--endpoints", l_endpoints, "Endpoints JSON");
  all_cmd->add_option("--seed", all.seed, "Mock seed")->capture_default_str();
  all_cmd->add_option("--work-dir", l_work, "Working directory")->capture_default_str();
  all_cmd->add_option("--manifest", l_manifest, "Manifest JSON")->capture_default_str();
  all_cmd->add_option("--corpus", l_corpus, "Scholar CSV")->capture_default_str();
  all_cmd->add_option("--reps", all.repetitions, "Repetitions per prompt")->capture_default_str();
  all_cmd->add_option("--refusal-patterns", l_patterns, "Refusal pattern JSON");
  all_cmd->add_flag("--per-field-reference", all.eval.per_field_reference, "Parity reference per field");
  all_cmd->add_option("--confidence", all.stats.confidence, "Confidence level")->capture_default_str();
  all_cmd->add_option("--cr", all.stats.cr, "Cluster-robust variant (0 or 1)")->capture_default_str();

  // synth-corpus
  synthetic::Options s_opts;
  std::string s_out;
  auto* synth_cmd = app.add_subcommand("synth-corpus", "Write a synthetic scholar CSV");
  synth_cmd->add_option("--n", s_opts.n, "Number of scholars")->capture_default_str();
  synth_cmd->add_option("--seed", s_opts.seed, "Seed")->capture_default_str();
  synth_cmd->add_option("--out", s_out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (*grid_cmd) {
      const auto n = pipeline::run_grid(g_manifest, g_out);
      std::cerr << "grid: " << n << " prompts -> " << g_out << "\n";
    } else if (*corpus_cmd) {
      const auto r = pipeline::run_corpus(c_in, c_out, opt_path(c_report), c_max_reject);
      for (const auto& d : r.diagnostics) std::cerr << "corpus: rejected " << d << "\n";
      std::cerr << "corpus: " << r.index.size() << " scholars -> " << c_out << "\n";
    } else if (*query_cmd) {
      pipeline::QueryOptions o;
      o.repetitions = q_reps;
      o.resume = q_resume;
      o.seed = q_seed;
      o.index = opt_path(q_index);
      o.manifest = opt_path(q_manifest);
      if (!q_timestamp.empty()) o.fixed_timestamp = q_timestamp;
      const auto eps = gateway::load_endpoints(q_endpoints);
      const auto s = pipeline::run_query(q_grid, eps, q_out, o, {q_endpoints});
      std::cerr << "query: " << s.written << " written, " << s.skipped << " skipped\n" << s.to_json().dump(2) << "\n";
    } else if (*classify_cmd) {
      for (const auto& [cat, n] : pipeline::run_classify(k_in, k_out, opt_path(k_patterns))) {
        std::cerr << "classify: " << cat << " " << n << "\n";
      }
    } else if (*resolve_cmd) {
      const auto s = pipeline::run_resolve(r_in, r_index, r_out, r_oracle);
      std::cerr << "resolve: " << s.found << " of " << s.records << " records found";
      if (r_oracle) std::cerr << ", " << s.oracle_mismatches << " oracle mismatches";
      std::cerr << "\n";
      if (r_oracle && s.oracle_mismatches > 0) return 1;
    } else if (*evaluate_cmd) {
      const auto rows = pipeline::run_evaluate(e_grid, e_manifest, e_classified, e_resolved, e_index, e_out, e_opts);
      std::cerr << "evaluate: " << rows.size() << " cells -> " << e_out << "\n";
    } else if (*analyze_cmd) {
      const auto a = pipeline::run_analyze(a_metrics, a_out, a_opts);
      for (const auto& f : a.fits) {
        if (f.status != "ok") std::cerr << "analyze: " << f.metric << ": " << f.status << "\n";
      }
      std::cerr << "analyze: " << a.fits.size() << " metrics -> " << a_out << "\n";
    } else if (*report_cmd) {
      const auto r = pipeline::run_report(p_metrics, opt_path(p_stats), p_out);
      for (const auto& g : r.gaps) std::cerr << "report: gap: " << g << "\n";
    } else if (*all_cmd) {
      if (l_mock == !l_endpoints.empty()) throw ConfigError("all: give exactly one of --mock or --endpoints");
      all.work_dir = l_work;
      all.manifest = l_manifest;
      all.corpus = l_corpus;
      all.endpoints = opt_path(l_endpoints);
      all.refusal_patterns = opt_path(l_patterns);
      pipeline::run_all(all, [](const std::string& s) { std::cerr << s << "\n"; });
    } else if (*synth_cmd) {
      std::ostringstream out;
      corpus::write_csv(out, synthetic::scholars(s_opts));
      io::write_file(s_out, out.str());
    }
  } catch (const ConfigError& e) {
    std::cerr << "audit " << stage << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "audit " << stage << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
