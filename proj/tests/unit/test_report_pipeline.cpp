#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "../common/mini_golden.hpp"
#include "audit/pipeline.hpp"
#include "audit/report.hpp"

using namespace audit;
namespace fs = std::filesystem;

namespace {

evaluate::MetricRow cell(const std::string& llm, const std::map<std::string, double>& values) {
  evaluate::MetricRow r;
  r.prompt_id = "p";
  r.llm_id = llm;
  for (const auto& [k, v] : values) r[k] = v;
  return r;
}

std::map<std::string, double> uniform(double tech, double social) {
  std::map<std::string, double> v;
  for (const auto& t : report::technical_terms()) v[t] = (t == "refusals" || t == "duplicates") ? 1 - tech : tech;
  for (const auto& t : report::social_terms()) v[t] = social;
  return v;
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const fs::path kMini = fs::path(AUDIT_TEST_DATA_DIR) / "mini";

}  // namespace

TEST(Composite, StaysWithinBoundsForRandomMeans) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::map<std::string, double> v;
    for (const auto& t : report::technical_terms()) v[t] = u(gen);
    for (const auto& t : report::social_terms()) v[t] = u(gen);
    const auto m = report::summarize({cell("a", v)});
    ASSERT_GE(m[0].composite_technical, 0);
    ASSERT_LE(m[0].composite_technical, 7);
    ASSERT_GE(m[0].composite_social, 0);
    ASSERT_LE(m[0].composite_social, 4);
  }
}

TEST(Composite, ParityOfPointFiftyFiveEverywhereGivesTwoPointTwo) {
  const auto m = report::summarize({cell("a", uniform(1, 0.55))});
  EXPECT_NEAR(m[0].composite_social, 2.2, 1e-12);
  EXPECT_NEAR(m[0].composite_technical, 7.0, 1e-12);
  EXPECT_TRUE(m[0].imputed.empty());
}

TEST(Composite, RefusalsAndDuplicatesEnterAsComplements) {
  auto v = uniform(1, 1);
  v["refusals"] = 0.25;
  v["duplicates"] = 0.5;
  const auto m = report::summarize({cell("a", v)});
  EXPECT_NEAR(m[0].composite_technical, 5 + 0.75 + 0.5, 1e-12);
}

TEST(Composite, AbsentTermsCountAsZeroAndAreListed) {
  auto v = uniform(1, 0.5);
  v.erase("fact_field");
  v.erase("par_gender");
  const auto m = report::summarize({cell("a", v)});
  EXPECT_NEAR(m[0].composite_technical, 6, 1e-12);
  EXPECT_NEAR(m[0].composite_social, 1.5, 1e-12);
  EXPECT_EQ(m[0].imputed, (std::vector<std::string>{"fact_field", "par_gender"}));
}

TEST(Composite, MeansSkipAbsentCells) {
  auto full = uniform(1, 0.5);
  auto partial = uniform(1, 0.5);
  partial.erase("par_works");
  full["par_works"] = 0.9;
  const auto m = report::summarize({cell("a", full), cell("a", partial)});
  EXPECT_DOUBLE_EQ(*m[0].mean("par_works"), 0.9);
  EXPECT_EQ(m[0].counts[evaluate::metric_index("par_works")], 1u);
  EXPECT_EQ(m[0].cells, 2u);
}

TEST(Quadrant, MappingIsExhaustive) {
  EXPECT_EQ(report::quadrant_of(true, true), report::Quadrant::Q1);
  EXPECT_EQ(report::quadrant_of(false, true), report::Quadrant::Q2);
  EXPECT_EQ(report::quadrant_of(false, false), report::Quadrant::Q3);
  EXPECT_EQ(report::quadrant_of(true, false), report::Quadrant::Q4);
}

TEST(Quadrant, DominantModelIsQ1AndDominatedIsQ3) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<evaluate::MetricRow> rows = {cell("best", uniform(0.95, 0.95)), cell("worst", uniform(0.05, 0.05))};
    for (int i = 0; i < 4; ++i) rows.push_back(cell("m" + std::to_string(i), uniform(u(gen), u(gen))));
    for (const auto& m : report::summarize(rows)) {
      if (m.llm_id == "best") {
        ASSERT_EQ(m.quadrant, report::Quadrant::Q1);
      } else if (m.llm_id == "worst") {
        ASSERT_EQ(m.quadrant, report::Quadrant::Q3);
      }
    }
  }
}

TEST(Quadrant, FourCornersLandInFourQuadrants) {
  const auto m = report::summarize({cell("hh", uniform(0.9, 0.9)), cell("lh", uniform(0.1, 0.9)),
                                    cell("ll", uniform(0.1, 0.1)), cell("hl", uniform(0.9, 0.1))});
  std::map<std::string, report::Quadrant> q;
  for (const auto& s : m) q[s.llm_id] = s.quadrant;
  EXPECT_EQ(q["hh"], report::Quadrant::Q1);
  EXPECT_EQ(q["lh"], report::Quadrant::Q2);
  EXPECT_EQ(q["ll"], report::Quadrant::Q3);
  EXPECT_EQ(q["hl"], report::Quadrant::Q4);
}

TEST(Quadrant, MedianTiesGoToTheUpperHalf) {
  const auto m = report::summarize({cell("a", uniform(0.5, 0.5)), cell("b", uniform(0.5, 0.5))});
  for (const auto& s : m) EXPECT_EQ(s.quadrant, report::Quadrant::Q1);
  const auto odd = report::summarize({cell("a", uniform(0.2, 0.2)), cell("b", uniform(0.5, 0.5)),
                                      cell("c", uniform(0.8, 0.8))});
  EXPECT_EQ(odd[1].quadrant, report::Quadrant::Q1);
  EXPECT_EQ(odd[0].quadrant, report::Quadrant::Q3);
}

TEST(Quadrant, EmptyInputIsAnError) { EXPECT_THROW(report::summarize({}), ValidationError); }

TEST(Report, HeatmapResidualRowIsOneMinusR2) {
  stats::Analysis a;
  a.factors.push_back({"validity", "llm", 1, 1, 0.4});
  a.factors.push_back({"validity", "k", 1, 1, -0.01});
  stats::FitRow fit;
  fit.metric = "validity";
  fit.r2 = 0.625;
  a.fits.push_back(fit);
  stats::FitRow failed;
  failed.metric = "duplicates";
  failed.status = "response has fewer than 2 distinct values";
  a.fits.push_back(failed);
  const std::string csv = report::heatmap_csv(a, {"validity", "duplicates"}, {"llm", "k", "role"});
  EXPECT_EQ(csv,
            "factor,validity,duplicates\n"
            "llm,0.4,\n"
            "k,-0.01,\n"
            "role,,\n"
            "residual,0.375,\n");
}

TEST(Report, SummaryRoundTripsThroughCsv) {
  auto v = uniform(0.7, 0.3);
  v.erase("consistency");
  v.erase("fact_location");
  const auto models = report::summarize({cell("b", v), cell("a", uniform(1.0 / 3, 2.0 / 7))});
  const auto dir = fresh_dir("audit_report_roundtrip");
  io::write_file(dir / "s.csv", report::model_summary_csv(models));
  const auto back = report::read_model_summary(dir / "s.csv");
  ASSERT_EQ(back.size(), models.size());
  for (size_t i = 0; i < models.size(); ++i) {
    EXPECT_EQ(back[i].llm_id, models[i].llm_id);
    EXPECT_EQ(back[i].means, models[i].means);
    EXPECT_EQ(back[i].counts, models[i].counts);
    EXPECT_EQ(back[i].composite_technical, models[i].composite_technical);
    EXPECT_EQ(back[i].composite_social, models[i].composite_social);
    EXPECT_EQ(back[i].imputed, models[i].imputed);
    EXPECT_EQ(back[i].quadrant, models[i].quadrant);
  }
}

TEST(Report, MissingStatisticsAreLoggedAsGaps) {
  const auto dir = fresh_dir("audit_report_gaps");
  auto v = uniform(1, 0.5);
  v.erase("par_ethnicity");
  const auto models = report::summarize({cell("a", v)});
  const auto r = report::emit_reports(models, std::nullopt, dir);
  EXPECT_TRUE(fs::exists(dir / "model_summary.csv"));
  EXPECT_TRUE(fs::exists(dir / "quadrants.csv"));
  EXPECT_FALSE(fs::exists(dir / "heatmap_omega.csv"));
  ASSERT_EQ(r.gaps.size(), 2u);
  EXPECT_EQ(io::read_file(dir / "gap_log.txt"),
            "model a: absent composite terms counted as 0: par_ethnicity\n"
            "statistics unavailable: heatmap_omega.csv and coefficients.csv not written\n");
}

TEST(Pipeline, ProvenanceRecordsStageInputsAndOutputHash) {
  const auto dir = fresh_dir("audit_prov");
  const auto n = pipeline::run_grid(kMini / "manifest.json", dir / "grid.jsonl");
  EXPECT_EQ(n, 8u);
  const auto prov = nlohmann::json::parse(io::read_file(dir / "grid.jsonl.prov.json"));
  EXPECT_EQ(prov.at("stage"), "grid");
  EXPECT_EQ(prov.at("tool_version"), pipeline::kToolVersion);
  EXPECT_EQ(prov.at("output_sha256"), digest::file_sha256(dir / "grid.jsonl"));
  ASSERT_EQ(prov.at("inputs").size(), 1u);
  EXPECT_EQ(prov.at("inputs")[0].at("file"), "manifest.json");
  EXPECT_EQ(prov.at("inputs")[0].at("sha256"), digest::file_sha256(kMini / "manifest.json"));
  EXPECT_FALSE(prov.contains("timestamp"));
}

TEST(Pipeline, ReportWithoutStatsDirectoryWritesGap) {
  const auto dir = fresh_dir("audit_report_nostats");
  std::vector<evaluate::MetricRow> rows = {cell("a", uniform(1, 0.5))};
  evaluate::write_csv(dir / "metrics.csv", rows);
  const auto r = pipeline::run_report(dir / "metrics.csv", dir / "no_such_stats", dir / "report");
  ASSERT_FALSE(r.gaps.empty());
  EXPECT_NE(io::read_file(dir / "report" / "gap_log.txt").find("no_such_stats"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "report" / "provenance.json"));
}

TEST(Cli, ExitCodes) {
  const auto dir = fresh_dir("audit_cli_codes");
  const auto log = dir / "log.txt";
  EXPECT_EQ(testsupport::run_cli("--help", log), 0);
  EXPECT_EQ(testsupport::run_cli("no-such-command", log), 2);
  EXPECT_EQ(testsupport::run_cli("grid", log), 2);
  EXPECT_EQ(testsupport::run_cli("grid --manifest \"" + (dir / "missing.json").string() + "\" --out \"" +
                                 (dir / "g.jsonl").string() + "\"",
                             log),
            2);
  EXPECT_NE(io::read_file(log).find("missing.json"), std::string::npos);
  EXPECT_EQ(testsupport::run_cli("grid --manifest \"" + (kMini / "manifest.json").string() + "\" --out \"" +
                                 (dir / "g.jsonl").string() + "\"",
                             log),
            0);
  EXPECT_TRUE(fs::exists(dir / "g.jsonl.prov.json"));
}

TEST(Cli, MiniCampaignMatchesGoldenFiles) {
  const auto work = fresh_dir("audit_mini_unit");
  ASSERT_EQ(testsupport::run_cli(testsupport::mini_all_args(kMini, work), work / "log.txt"), 0) << io::read_file(work / "log.txt");
  const auto bad = testsupport::compare_mini_golden(work, kMini, 1e-12);
  for (const auto& b : bad) ADD_FAILURE() << b;
  EXPECT_TRUE(bad.empty());
}
