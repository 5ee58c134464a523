#include <gtest/gtest.h>

#include <set>

#include "audit/grid.hpp"

using namespace audit;

namespace {

grid::DimensionSet bundled() { return grid::load_manifest(std::string(AUDIT_DATA_DIR) + "/manifest.json"); }

nlohmann::json tiny_manifest() {
  return nlohmann::json::parse(R"({
    "dimensions": {
      "role": [{"label": "R", "surface": {"en": "a recruiter"}}],
      "language": ["en"],
      "location": [{"label": "Japan", "surface": {"en": "Japan"}, "iso": "JP"}],
      "field": [{"label": "Physics", "surface": {"en": "Physics"},
                 "subfields": [{"label": "optics", "surface": {"en": "optics"}}]}],
      "seniority": [{"label": "Junior", "surface": {"en": "junior professor"}, "stage": "junior"}],
      "k": [1, 5]
    },
    "templates": {"en": "I am {role-and-task} in {location}. Name {k} {seniority} scholars in {field} ({sub-field})."}
  })");
}

}  // namespace

TEST(Grid, BundledManifestHas2160Prompts) {
  const auto dims = bundled();
  EXPECT_EQ(dims.grid_size(), 2160u);
  const auto prompts = grid::enumerate_grid(dims);
  ASSERT_EQ(prompts.size(), 2160u);
  std::set<std::string> ids;
  for (const auto& p : prompts) ids.insert(p.prompt_id);
  EXPECT_EQ(ids.size(), 2160u);
}

TEST(Grid, PromptIdMatchesIndependentDigest) {
  // Frozen with Python hashlib over the same unit-separator-joined tuple.
  grid::PromptDims d{"Director/Recruiter", "en", "Germany", "Physics", "physics education", "Senior Professor", 5};
  EXPECT_EQ(grid::prompt_id(d), "84453d0f561ef554");
}

TEST(Grid, EnumerationIsDeterministic) {
  const auto a = grid::enumerate_grid(bundled());
  const auto b = grid::enumerate_grid(bundled());
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].prompt_id, b[i].prompt_id);
    EXPECT_EQ(a[i].text, b[i].text);
  }
}

TEST(Grid, RenderedTextRoundTripsThroughTemplate) {
  const auto dims = bundled();
  for (const auto& p : grid::enumerate_grid(dims)) {
    const auto& tpl = dims.templates.at(p.dims.language);
    const auto values = grid::extract_placeholders(tpl, p.text);
    ASSERT_TRUE(values.has_value()) << p.text;
    EXPECT_EQ(values->at("k"), std::to_string(p.dims.k));
    EXPECT_EQ(values->at("location"), dims.location_level(p.dims.location).surface_for(p.dims.language));
    EXPECT_EQ(values->at("field"), dims.field_level(p.dims.field).surface_for(p.dims.language));
    EXPECT_EQ(values->at("seniority"), dims.seniority_level(p.dims.seniority).surface_for(p.dims.language));
    EXPECT_EQ(p.text.find('{'), std::string::npos);
  }
}

TEST(Grid, SubfieldSlotFollowsManifestOrder) {
  const auto dims = bundled();
  for (const auto& p : grid::enumerate_grid(dims)) {
    const auto& subs = dims.field_level(p.dims.field).subfields;
    ASSERT_GE(p.subfield_slot, 1);
    EXPECT_EQ(subs[static_cast<size_t>(p.subfield_slot - 1)].label, p.dims.subfield);
  }
}

TEST(Grid, TinyManifestEnumeratesProduct) {
  const auto dims = grid::parse_manifest(tiny_manifest());
  const auto prompts = grid::enumerate_grid(dims);
  ASSERT_EQ(prompts.size(), 2u);
  EXPECT_EQ(prompts[0].text, "I am a recruiter in Japan. Name 1 junior professor scholars in Physics (optics).");
  EXPECT_EQ(prompts[1].dims.k, 5);
}

TEST(Grid, UnresolvedPlaceholderIsRejected) {
  auto m = tiny_manifest();
  m["templates"]["en"] = "I am {role-and-task} in {location} {country}. Name {k} {seniority} in {field} ({sub-field}).";
  try {
    grid::enumerate_grid(grid::parse_manifest(m));
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("{country}"), std::string::npos) << e.what();
  }
}

TEST(Grid, MissingPlaceholderIsRejected) {
  auto m = tiny_manifest();
  m["templates"]["en"] = "I am {role-and-task}. Name {k} {seniority} in {field} ({sub-field}).";
  EXPECT_THROW(grid::enumerate_grid(grid::parse_manifest(m)), ValidationError);
}

TEST(Grid, ManifestValidation) {
  {
    auto m = tiny_manifest();
    m["dimensions"]["language"] = {"fr"};
    EXPECT_THROW(grid::parse_manifest(m), ValidationError);
  }
  {
    auto m = tiny_manifest();
    m["dimensions"]["k"] = nlohmann::json::array();
    EXPECT_THROW(grid::parse_manifest(m), ValidationError);
  }
  {
    auto m = tiny_manifest();
    m["dimensions"]["location"][0]["iso"] = "JPN";
    EXPECT_THROW(grid::parse_manifest(m), ValidationError);
  }
  {
    auto m = tiny_manifest();
    m["dimensions"]["seniority"][0]["stage"] = "mid";
    EXPECT_THROW(grid::parse_manifest(m), ValidationError);
  }
  {
    auto m = tiny_manifest();
    m["dimensions"]["role"][0]["surface"].erase("en");
    EXPECT_THROW(grid::enumerate_grid(grid::parse_manifest(m)), ValidationError);
  }
}

TEST(Grid, MissingManifestFileIsConfigError) {
  EXPECT_THROW(grid::load_manifest("/nonexistent/manifest.json"), ConfigError);
}

TEST(Grid, JsonRoundTrip) {
  for (const auto& p : grid::enumerate_grid(grid::parse_manifest(tiny_manifest()))) {
    const auto q = grid::prompt_from_json(grid::to_json(p));
    EXPECT_EQ(q.prompt_id, p.prompt_id);
    EXPECT_EQ(q.dims, p.dims);
    EXPECT_EQ(q.text, p.text);
    EXPECT_EQ(q.subfield_slot, p.subfield_slot);
  }
}

TEST(Grid, FieldAndLocationLookupsAcceptAnySurface) {
  const auto dims = bundled();
  EXPECT_EQ(dims.canonical_field("Informatik"), "Computer Science");
  EXPECT_EQ(dims.canonical_field("Física"), "Physics");
  EXPECT_EQ(dims.location_iso("Deutschland"), "DE");
  EXPECT_EQ(dims.location_iso("Sudáfrica"), "ZA");
  EXPECT_FALSE(dims.canonical_field("Chemistry").has_value());
}
