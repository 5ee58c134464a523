#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <cereal/archives/binary.hpp>
#include <cereal/types/optional.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/vector.hpp>

#include "audit/error.hpp"
#include "audit/util/csv.hpp"
#include "audit/util/io.hpp"
#include "audit/util/text.hpp"

// Scholar ground truth: CSV ingestion, lookup indices, tertile bins and
// population marginals.
namespace audit::corpus {

inline constexpr int kReferenceYear = 2025;

inline const std::vector<std::string>& disciplines() {
  static const std::vector<std::string> d = {"Biology",    "Computer Science", "Mathematics",
                                             "Physics",    "Psychology",       "Sociology"};
  return d;
}

enum class Gender : uint8_t { female, male, unknown };
enum class Ethnicity : uint8_t { White, Asian, Black_or_African_American, Hispanic_or_Latino, Unknown };
enum class Tier : uint8_t { low, medium, high };
enum class Attribute { gender, ethnicity, works_bin, citations_bin, country };
inline constexpr size_t kAttributeCount = 5;

inline std::string_view to_string(Gender g) {
  switch (g) {
    case Gender::female: return "female";
    case Gender::male: return "male";
    default: return "unknown";
  }
}

inline std::string_view to_string(Ethnicity e) {
  switch (e) {
    case Ethnicity::White: return "White";
    case Ethnicity::Asian: return "Asian";
    case Ethnicity::Black_or_African_American: return "Black_or_African_American";
    case Ethnicity::Hispanic_or_Latino: return "Hispanic_or_Latino";
    default: return "Unknown";
  }
}

inline std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::low: return "low";
    case Tier::medium: return "medium";
    default: return "high";
  }
}

inline std::string_view to_string(Attribute a) {
  switch (a) {
    case Attribute::gender: return "gender";
    case Attribute::ethnicity: return "ethnicity";
    case Attribute::works_bin: return "works-bin";
    case Attribute::citations_bin: return "citations-bin";
    default: return "country";
  }
}

inline std::optional<Gender> parse_gender(std::string_view s) {
  if (s == "female") return Gender::female;
  if (s == "male") return Gender::male;
  if (s.empty() || s == "unknown") return Gender::unknown;
  return std::nullopt;
}

inline std::optional<Ethnicity> parse_ethnicity(std::string_view s) {
  for (auto e : {Ethnicity::White, Ethnicity::Asian, Ethnicity::Black_or_African_American, Ethnicity::Hispanic_or_Latino,
                 Ethnicity::Unknown}) {
    if (s == to_string(e)) return e;
  }
  if (s.empty()) return Ethnicity::Unknown;
  return std::nullopt;
}

struct ScholarRecord {
  std::string scholar_id;
  std::string display_name;
  std::string lastname;
  std::string field;
  Gender gender = Gender::unknown;
  Ethnicity ethnicity = Ethnicity::Unknown;
  std::optional<int> year_first_pub;
  std::optional<int64_t> works_count;
  std::optional<int64_t> citation_count;
  std::optional<std::string> country_code;

  std::optional<int> career_age() const {
    if (!year_first_pub) return std::nullopt;
    return kReferenceYear - *year_first_pub;
  }

  template <class Archive>
  void serialize(Archive& ar) {
    uint8_t g = static_cast<uint8_t>(gender);
    uint8_t e = static_cast<uint8_t>(ethnicity);
    ar(scholar_id, display_name, lastname, field, g, e, year_first_pub, works_count, citation_count, country_code);
    gender = static_cast<Gender>(g);
    ethnicity = static_cast<Ethnicity>(e);
  }
};

struct TertileCuts {
  int64_t t33 = 0;
  int64_t t67 = 0;

  Tier bin(std::optional<int64_t> v) const {
    if (!v || *v <= t33) return Tier::low;
    if (*v <= t67) return Tier::medium;
    return Tier::high;
  }

  template <class Archive>
  void serialize(Archive& ar) {
    ar(t33, t67);
  }
};

// Nearest-rank percentile cuts at the 33rd and 67th percentiles.
inline TertileCuts compute_tertiles(std::vector<int64_t> values) {
  if (values.size() < 3) throw ValidationError("tertiles need at least 3 values, got " + std::to_string(values.size()));
  std::sort(values.begin(), values.end());
  const auto n = static_cast<int64_t>(values.size());
  auto rank = [n](int64_t pct) {
    int64_t r = (pct * n + 99) / 100;  // ceil(pct/100 * n)
    return std::clamp<int64_t>(r, 1, n);
  };
  return {values[static_cast<size_t>(rank(33) - 1)], values[static_cast<size_t>(rank(67) - 1)]};
}

using Marginal = std::map<std::string, double>;

// Per-record data precomputed for fuzzy matching.
struct MatchProfile {
  std::u32string display;             // lower-cased, normalized display name
  std::array<uint8_t, 32> histogram;  // code point counts bucketed by (c & 31), saturating
  std::array<char32_t, 4> head{};     // first four code points, zero padded
};

inline MatchProfile make_profile(std::string_view lowered_display) {
  MatchProfile p;
  p.display = text::to_u32(lowered_display);
  p.histogram.fill(0);
  for (size_t i = 0; i < p.display.size() && i < 4; ++i) p.head[i] = p.display[i];
  for (char32_t c : p.display) {
    auto& h = p.histogram[c & 31u];
    if (h < 255) ++h;
  }
  return p;
}

// Blocking key: first two code points of the lower-cased normalized lastname.
inline std::string block_key(std::string_view lastname) {
  const std::u32string u = text::to_u32(text::to_lower(text::normalize_name(lastname).value));
  std::string out;
  for (size_t i = 0; i < u.size() && i < 2; ++i) {
    const char32_t c = u[i];
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
    } else {
      // Re-encode as UTF-8.
      icu::UnicodeString tmp(static_cast<UChar32>(c));
      tmp.toUTF8String(out);
    }
  }
  return out;
}

inline std::string fuzzy_display(std::string_view display_name) {
  return text::to_lower(text::normalize_name(display_name).value);
}

class ScholarIndex {
 public:
  ScholarIndex() = default;

  explicit ScholarIndex(std::vector<ScholarRecord> records) : records_(std::move(records)) { build(); }

  const std::vector<ScholarRecord>& records() const { return records_; }
  size_t size() const { return records_.size(); }
  const ScholarRecord& at(uint32_t i) const { return records_[i]; }
  const MatchProfile& profile(uint32_t i) const { return profiles_[profile_pos_[i]]; }

  // Profiles stored contiguously, grouped by block, with the record index of
  // each entry.
  struct ProfileSpan {
    const MatchProfile* profiles = nullptr;
    const uint32_t* records = nullptr;
    size_t size = 0;
  };

  ProfileSpan block_profiles(const std::string& key) const {
    auto it = block_ranges_.find(key);
    if (it == block_ranges_.end()) return {};
    return {profiles_.data() + it->second.first, profile_record_.data() + it->second.first,
            it->second.second - it->second.first};
  }

  ProfileSpan all_profiles() const { return {profiles_.data(), profile_record_.data(), profiles_.size()}; }

  const std::vector<uint32_t>& block(const std::string& key) const {
    static const std::vector<uint32_t> empty;
    auto it = block_index_.find(key);
    return it == block_index_.end() ? empty : it->second;
  }
  size_t block_count() const { return block_index_.size(); }
  const std::unordered_map<std::string, std::vector<uint32_t>>& blocks() const { return block_index_; }

  const std::vector<uint32_t>& exact(const std::string& key) const {
    static const std::vector<uint32_t> empty;
    auto it = exact_index_.find(key);
    return it == exact_index_.end() ? empty : it->second;
  }

  std::optional<uint32_t> find_id(const std::string& scholar_id) const {
    auto it = id_index_.find(scholar_id);
    if (it == id_index_.end()) return std::nullopt;
    return it->second;
  }

  const TertileCuts& works_cuts() const { return works_cuts_; }
  const TertileCuts& citation_cuts() const { return citation_cuts_; }

  Tier works_tier(const ScholarRecord& r) const { return works_cuts_.bin(r.works_count); }
  Tier citations_tier(const ScholarRecord& r) const { return citation_cuts_.bin(r.citation_count); }

  // Category label of a record for an attribute. Absent country maps to
  // "unknown".
  std::string category(const ScholarRecord& r, Attribute a) const {
    switch (a) {
      case Attribute::gender: return std::string(to_string(r.gender));
      case Attribute::ethnicity: return std::string(to_string(r.ethnicity));
      case Attribute::works_bin: return std::string(to_string(works_tier(r)));
      case Attribute::citations_bin: return std::string(to_string(citations_tier(r)));
      default: return r.country_code.value_or("unknown");
    }
  }

  // True for the categories dropped from parity references and observations.
  static bool is_unknown(Attribute a, std::string_view category) {
    if (a == Attribute::gender) return category == "unknown";
    if (a == Attribute::ethnicity) return category == "Unknown";
    if (a == Attribute::country) return category == "unknown";
    return false;
  }

  // Number of categories the population actually spans, unknowns included.
  size_t support_size(Attribute a) const { return support_.at(static_cast<size_t>(a)); }

  // Population proportions; unknown categories excluded and the rest
  // renormalized. `field` restricts the population to one discipline.
  const Marginal& population_marginal(Attribute a, const std::optional<std::string>& field = std::nullopt) const {
    const auto& m = marginals_.at(static_cast<size_t>(a));
    auto it = m.find(field.value_or(""));
    if (it == m.end() || it->second.empty()) {
      throw ValidationError("empty population for attribute '" + std::string(to_string(a)) + "'" +
                            (field ? " in field '" + *field + "'" : std::string()));
    }
    return it->second;
  }

  template <class Archive>
  void save(Archive& ar) const {
    ar(std::string("scholar-index-v1"), records_);
  }

  template <class Archive>
  void load(Archive& ar) {
    std::string tag;
    ar(tag);
    if (tag != "scholar-index-v1") throw ParseError("not a scholar index file");
    ar(records_);
    build();
  }

 private:
  void build() {
    profiles_.clear();
    profile_pos_.clear();
    profile_record_.clear();
    block_ranges_.clear();
    block_index_.clear();
    exact_index_.clear();
    id_index_.clear();
    std::vector<MatchProfile> by_record;
    by_record.reserve(records_.size());
    std::vector<int64_t> works;
    std::vector<int64_t> cites;
    for (uint32_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      if (!id_index_.emplace(r.scholar_id, i).second) throw ValidationError("duplicate scholar_id '" + r.scholar_id + "'");
      by_record.push_back(make_profile(fuzzy_display(r.display_name)));
      block_index_[block_key(r.lastname)].push_back(i);
      exact_index_[text::match_key(r.display_name)].push_back(i);
      if (r.works_count) works.push_back(*r.works_count);
      if (r.citation_count) cites.push_back(*r.citation_count);
    }
    // Lay profiles out block by block so a blocked scan reads memory in order.
    std::vector<std::string> keys;
    keys.reserve(block_index_.size());
    for (const auto& [k, members] : block_index_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    profiles_.reserve(records_.size());
    profile_record_.reserve(records_.size());
    profile_pos_.assign(records_.size(), 0);
    for (const auto& k : keys) {
      const auto begin = profiles_.size();
      for (uint32_t i : block_index_.at(k)) {
        profile_pos_[i] = static_cast<uint32_t>(profiles_.size());
        profile_record_.push_back(i);
        profiles_.push_back(std::move(by_record[i]));
      }
      block_ranges_.emplace(k, std::make_pair(begin, profiles_.size()));
    }
    if (works.size() >= 3) works_cuts_ = compute_tertiles(std::move(works));
    if (cites.size() >= 3) citation_cuts_ = compute_tertiles(std::move(cites));
    build_marginals();
  }

  // Support sizes and population marginals, overall ("" key) and per field.
  void build_marginals() {
    for (size_t ai = 0; ai < kAttributeCount; ++ai) {
      const auto a = static_cast<Attribute>(ai);
      std::map<std::string, std::map<std::string, double>> counts;
      std::set<std::string> seen;
      for (const auto& r : records_) {
        const std::string c = category(r, a);
        seen.insert(c);
        if (is_unknown(a, c)) continue;
        counts[""][c] += 1;
        counts[r.field][c] += 1;
      }
      support_[ai] = (a == Attribute::works_bin || a == Attribute::citations_bin) ? 3 : seen.size();
      for (auto& [f, m] : counts) {
        double total = 0;
        for (const auto& [c, v] : m) total += v;
        for (auto& [c, v] : m) v /= total;
      }
      marginals_[ai] = std::move(counts);
    }
  }

  std::vector<ScholarRecord> records_;
  std::vector<MatchProfile> profiles_;  // in block order
  std::vector<uint32_t> profile_pos_;    // record -> position in profiles_
  std::vector<uint32_t> profile_record_; // position -> record
  std::unordered_map<std::string, std::pair<size_t, size_t>> block_ranges_;
  std::unordered_map<std::string, std::vector<uint32_t>> block_index_;
  std::unordered_map<std::string, std::vector<uint32_t>> exact_index_;
  std::unordered_map<std::string, uint32_t> id_index_;
  TertileCuts works_cuts_;
  TertileCuts citation_cuts_;
  std::array<size_t, kAttributeCount> support_{};
  std::array<std::map<std::string, Marginal>, kAttributeCount> marginals_;
};

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {"scholar_id",     "display_name",  "lastname",   "field",
                                                "gender",         "ethnicity",     "year_first_pub",
                                                "works_count",    "citation_count", "country_code"};
  return cols;
}

struct IngestOptions {
  double max_reject_fraction = 0.05;
};

struct IngestResult {
  ScholarIndex index;
  size_t rows_read = 0;
  std::vector<std::string> diagnostics;  // "line N: reason"
};

namespace detail {

inline std::optional<int64_t> parse_count(const std::string& s, const char* col) {
  if (s.empty()) return std::nullopt;
  int64_t v = csv::parse_int(s);
  if (v < 0) throw ValidationError(std::string(col) + " must be non-negative, got " + s);
  return v;
}

inline ScholarRecord parse_row(const csv::Row& row) {
  ScholarRecord r;
  auto mandatory = [&](size_t i, const char* col) {
    std::string v = text::trim(row[i]);
    if (v.empty()) throw ValidationError(std::string("empty mandatory field ") + col);
    return v;
  };
  r.scholar_id = mandatory(0, "scholar_id");
  r.display_name = mandatory(1, "display_name");
  r.lastname = mandatory(2, "lastname");
  r.field = mandatory(3, "field");
  const auto& ds = disciplines();
  if (std::find(ds.begin(), ds.end(), r.field) == ds.end()) throw ValidationError("unknown field '" + r.field + "'");
  auto g = parse_gender(row[4]);
  if (!g) throw ValidationError("invalid gender '" + row[4] + "'");
  r.gender = *g;
  auto e = parse_ethnicity(row[5]);
  if (!e) throw ValidationError("invalid ethnicity '" + row[5] + "'");
  r.ethnicity = *e;
  if (!row[6].empty()) {
    const auto y = csv::parse_int(row[6]);
    if (y > kReferenceYear) throw ValidationError("year_first_pub " + row[6] + " is after " + std::to_string(kReferenceYear));
    r.year_first_pub = static_cast<int>(y);
  }
  r.works_count = parse_count(row[7], "works_count");
  r.citation_count = parse_count(row[8], "citation_count");
  if (!row[9].empty()) {
    if (row[9].size() != 2) throw ValidationError("country_code '" + row[9] + "' is not ISO 3166-1 alpha-2");
    r.country_code = row[9];
  }
  return r;
}

}  // namespace detail

inline IngestResult ingest(std::istream& in, const IngestOptions& opts = {}) {
  csv::Reader reader(in);
  csv::Row row;
  if (!reader.next(row)) throw ParseError("corpus CSV is empty");
  if (!row.empty() && row[0].rfind("\xEF\xBB\xBF", 0) == 0) row[0].erase(0, 3);
  if (row != csv_columns()) {
    std::string expected;
    for (const auto& c : csv_columns()) expected += (expected.empty() ? "" : ",") + c;
    throw ParseError("corpus CSV header mismatch; expected " + expected);
  }
  IngestResult result;
  std::vector<ScholarRecord> records;
  std::unordered_map<std::string, size_t> ids;
  while (reader.next(row)) {
    if (row.size() == 1 && row[0].empty()) continue;
    ++result.rows_read;
    const size_t line = reader.line();
    try {
      if (row.size() != csv_columns().size()) {
        throw ValidationError("expected " + std::to_string(csv_columns().size()) + " columns, got " + std::to_string(row.size()));
      }
      ScholarRecord r = detail::parse_row(row);
      if (!ids.emplace(r.scholar_id, line).second) throw ValidationError("duplicate scholar_id '" + r.scholar_id + "'");
      records.push_back(std::move(r));
    } catch (const Error& e) {
      result.diagnostics.push_back("line " + std::to_string(line) + ": " + e.what());
    }
  }
  if (result.rows_read > 0 &&
      static_cast<double>(result.diagnostics.size()) > opts.max_reject_fraction * static_cast<double>(result.rows_read)) {
    std::string msg = "corpus ingest aborted: " + std::to_string(result.diagnostics.size()) + " of " +
                      std::to_string(result.rows_read) + " rows rejected";
    if (!result.diagnostics.empty()) msg += " (first: " + result.diagnostics.front() + ")";
    throw ValidationError(msg);
  }
  result.index = ScholarIndex(std::move(records));
  return result;
}

inline IngestResult ingest(const std::filesystem::path& path, const IngestOptions& opts = {}) {
  io::require_file(path, "corpus file");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return ingest(in, opts);
}

inline void write_csv(std::ostream& out, const std::vector<ScholarRecord>& records) {
  csv::write_row(out, csv_columns());
  for (const auto& r : records) {
    csv::write_row(out, {r.scholar_id, r.display_name, r.lastname, r.field, std::string(to_string(r.gender)),
                         std::string(to_string(r.ethnicity)),
                         r.year_first_pub ? std::to_string(*r.year_first_pub) : "",
                         r.works_count ? std::to_string(*r.works_count) : "",
                         r.citation_count ? std::to_string(*r.citation_count) : "", r.country_code.value_or("")});
  }
}

inline void save_index(const ScholarIndex& index, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  cereal::BinaryOutputArchive ar(out);
  ar(index);
}

inline ScholarIndex load_index(const std::filesystem::path& path) {
  io::require_file(path, "index file");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  ScholarIndex index;
  try {
    cereal::BinaryInputArchive ar(in);
    ar(index);
  } catch (const cereal::Exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return index;
}

}  // namespace audit::corpus
