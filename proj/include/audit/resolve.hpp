#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "audit/classify.hpp"
#include "audit/corpus.hpp"
#include "audit/jaro_winkler.hpp"
#include "audit/util/text.hpp"

// Name resolution against the scholar index: prefix-blocked Jaro-Winkler
// matching with a per-token filter, plus normalized exact matching.
namespace audit::resolve {

inline constexpr double kDisplayThreshold = 0.85;  // strict: similarity must exceed
inline constexpr double kTokenThreshold = 0.95;    // inclusive

enum class Status { found, hallucinated };
enum class MatchPath { fuzzy, exact };

inline std::string_view to_string(Status s) { return s == Status::found ? "found" : "hallucinated"; }
inline std::string_view to_string(MatchPath p) { return p == MatchPath::fuzzy ? "fuzzy" : "exact"; }

struct MatchResult {
  std::string query_name;
  std::string query_lastname;
  Status status = Status::hallucinated;
  std::optional<std::string> scholar_id;
  std::optional<double> similarity;
  MatchPath match_path = MatchPath::fuzzy;
};

struct PreparedQuery {
  std::u32string display;
  std::array<uint8_t, 32> histogram{};
  std::array<char32_t, 4> head{};
  std::vector<std::u32string> tokens;  // tokens longer than one character
  std::string block;
};

inline PreparedQuery prepare_query(std::string_view name, std::string_view lastname) {
  PreparedQuery q;
  std::string full = std::string(name);
  if (!full.empty() && !lastname.empty()) full.push_back(' ');
  full += lastname;
  const corpus::MatchProfile p = corpus::make_profile(corpus::fuzzy_display(full));
  q.display = p.display;
  q.histogram = p.histogram;
  q.head = p.head;
  for (auto& t : text::name_tokens(q.display)) {
    if (t.size() > 1) q.tokens.push_back(std::move(t));
  }
  q.block = corpus::block_key(lastname);
  return q;
}

namespace detail {

// Upper bound on Jaro-Winkler from lengths, bucketed character counts and
// the common prefix. Returns false only when the display threshold is
// provably unreachable. With prefix length p the similarity is
// J + 0.1p(1 - J), so exceeding 0.85 needs J > (8.5 - p)/(10 - p); Jaro is
// at most (M/la + M/lb + 1)/3 where M bounds the number of matching
// characters. The integer comparison is non-strict so rounding in the exact
// score can never turn a rejected candidate into a passing one.
inline bool may_pass(const PreparedQuery& q, const corpus::MatchProfile& p) {
  const uint64_t la = q.display.size();
  const uint64_t lb = p.display.size();
  if (la == 0 || lb == 0) return false;
  if (la > 255 || lb > 255) return true;
  uint64_t pre = 0;
  const uint64_t max_pre = std::min<uint64_t>({4, la, lb});
  while (pre < max_pre && q.head[pre] == p.head[pre]) ++pre;
  unsigned shared = 0;
  for (size_t i = 0; i < 32; ++i) shared += std::min(q.histogram[i], p.histogram[i]);
  const uint64_t m = std::min<uint64_t>({shared, la, lb});
  return 2 * (10 - pre) * (m * (la + lb) + la * lb) >= 3 * la * lb * (17 - 2 * pre);
}

inline bool tokens_pass(const PreparedQuery& q, const std::u32string& reference) {
  if (q.tokens.empty()) return true;
  const auto ref_tokens = text::name_tokens(reference);
  for (const auto& qt : q.tokens) {
    bool ok = false;
    for (const auto& rt : ref_tokens) {
      if (jaro_winkler(std::u32string_view(qt), std::u32string_view(rt)) >= kTokenThreshold) {
        ok = true;
        break;
      }
    }
    if (!ok) return false;
  }
  return true;
}

}  // namespace detail

// Accepted similarity of a candidate, or nullopt when it fails the display
// threshold or the per-token filter.
inline std::optional<double> score_candidate(const PreparedQuery& q, const corpus::MatchProfile& p) {
  if (!detail::may_pass(q, p)) return std::nullopt;
  const double sim = jaro_winkler(std::u32string_view(q.display), std::u32string_view(p.display));
  if (!(sim > kDisplayThreshold)) return std::nullopt;
  if (!detail::tokens_pass(q, p.display)) return std::nullopt;
  return sim;
}

// Tie-breaking order among accepted candidates: similarity, then citations,
// then scholar_id.
struct Best {
  std::optional<uint32_t> index;
  double similarity = 0;

  void offer(const corpus::ScholarIndex& idx, uint32_t i, double sim) {
    if (!index) {
      index = i;
      similarity = sim;
      return;
    }
    if (sim != similarity) {
      if (sim > similarity) {
        index = i;
        similarity = sim;
      }
      return;
    }
    const auto& cur = idx.at(*index);
    const auto& cand = idx.at(i);
    const int64_t cc = cand.citation_count.value_or(0);
    const int64_t bc = cur.citation_count.value_or(0);
    if (cc > bc || (cc == bc && cand.scholar_id < cur.scholar_id)) index = i;
  }
};

inline MatchResult make_result(std::string_view name, std::string_view lastname, const corpus::ScholarIndex& index,
                               const Best& best) {
  MatchResult r;
  r.query_name = name;
  r.query_lastname = lastname;
  r.match_path = MatchPath::fuzzy;
  if (best.index) {
    r.status = Status::found;
    r.scholar_id = index.at(*best.index).scholar_id;
    r.similarity = best.similarity;
  }
  return r;
}

inline MatchResult fuzzy_match(std::string_view name, std::string_view lastname, const corpus::ScholarIndex& index) {
  const PreparedQuery q = prepare_query(name, lastname);
  Best best;
  const auto span = index.block_profiles(q.block);
  for (size_t j = 0; j < span.size; ++j) {
    if (auto s = score_candidate(q, span.profiles[j])) best.offer(index, span.records[j], *s);
  }
  return make_result(name, lastname, index, best);
}

// Same scoring as fuzzy_match over every record, without blocking.
inline MatchResult exhaustive_match(std::string_view name, std::string_view lastname, const corpus::ScholarIndex& index) {
  const PreparedQuery q = prepare_query(name, lastname);
  Best best;
  const auto span = index.all_profiles();
  for (size_t j = 0; j < span.size; ++j) {
    if (auto s = score_candidate(q, span.profiles[j])) best.offer(index, span.records[j], *s);
  }
  return make_result(name, lastname, index, best);
}

inline MatchResult exact_match(std::string_view name, std::string_view lastname, const corpus::ScholarIndex& index) {
  std::string full = std::string(name) + " " + std::string(lastname);
  MatchResult r;
  r.query_name = name;
  r.query_lastname = lastname;
  r.match_path = MatchPath::exact;
  const auto& hits = index.exact(text::match_key(full));
  std::optional<uint32_t> best;
  for (uint32_t i : hits) {
    if (!best) {
      best = i;
      continue;
    }
    const auto& cur = index.at(*best);
    const auto& cand = index.at(i);
    const int64_t cc = cand.citation_count.value_or(0);
    const int64_t bc = cur.citation_count.value_or(0);
    if (cc > bc || (cc == bc && cand.scholar_id < cur.scholar_id)) best = i;
  }
  if (best) {
    r.status = Status::found;
    r.scholar_id = index.at(*best).scholar_id;
  }
  return r;
}

using json = nlohmann::json;

inline json to_json(const MatchResult& m) {
  json j{{"name", m.query_name},
         {"lastname", m.query_lastname},
         {"status", to_string(m.status)},
         {"match_path", to_string(m.match_path)}};
  j["scholar_id"] = m.scholar_id ? json(*m.scholar_id) : json(nullptr);
  j["similarity"] = m.similarity ? json(*m.similarity) : json(nullptr);
  return j;
}

inline MatchResult match_from_json(const json& j) {
  MatchResult m;
  m.query_name = j.at("name").get<std::string>();
  m.query_lastname = j.at("lastname").get<std::string>();
  m.status = j.at("status").get<std::string>() == "found" ? Status::found : Status::hallucinated;
  m.match_path = j.value("match_path", std::string("fuzzy")) == "exact" ? MatchPath::exact : MatchPath::fuzzy;
  if (j.contains("scholar_id") && !j.at("scholar_id").is_null()) m.scholar_id = j.at("scholar_id").get<std::string>();
  if (j.contains("similarity") && !j.at("similarity").is_null()) m.similarity = j.at("similarity").get<double>();
  return m;
}

// One recommendation of a valid response: the fuzzy result drives the
// metrics, the exact result is kept for diagnostics.
struct ResolvedRecord {
  MatchResult fuzzy;
  MatchResult exact;
};

struct ResolvedResponse {
  std::string prompt_id;
  std::string llm_id;
  int run_idx = 0;
  std::vector<ResolvedRecord> records;
};

inline json to_json(const ResolvedResponse& r) {
  json recs = json::array();
  for (const auto& rec : r.records) {
    json j = to_json(rec.fuzzy);
    j["exact"] = {{"status", to_string(rec.exact.status)},
                  {"scholar_id", rec.exact.scholar_id ? json(*rec.exact.scholar_id) : json(nullptr)}};
    recs.push_back(std::move(j));
  }
  return json{{"prompt_id", r.prompt_id}, {"llm_id", r.llm_id}, {"run_idx", r.run_idx}, {"records", std::move(recs)}};
}

inline ResolvedResponse resolved_from_json(const json& j) {
  try {
    ResolvedResponse r;
    r.prompt_id = j.at("prompt_id").get<std::string>();
    r.llm_id = j.at("llm_id").get<std::string>();
    r.run_idx = j.at("run_idx").get<int>();
    for (const auto& rec : j.at("records")) {
      ResolvedRecord out;
      out.fuzzy = match_from_json(rec);
      out.exact.query_name = out.fuzzy.query_name;
      out.exact.query_lastname = out.fuzzy.query_lastname;
      out.exact.match_path = MatchPath::exact;
      if (rec.contains("exact")) {
        const auto& e = rec.at("exact");
        out.exact.status = e.at("status").get<std::string>() == "found" ? Status::found : Status::hallucinated;
        if (!e.at("scholar_id").is_null()) out.exact.scholar_id = e.at("scholar_id").get<std::string>();
      }
      r.records.push_back(std::move(out));
    }
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("resolved record: ") + e.what());
  }
}

struct ResolveStats {
  size_t responses = 0;
  size_t records = 0;
  size_t found = 0;
  size_t exact_found = 0;
  size_t oracle_checked = 0;
  size_t oracle_mismatches = 0;
};

// Resolves every record of valid responses in order. Model outputs repeat
// names heavily, so results are memoized per (name, lastname).
class Resolver {
 public:
  explicit Resolver(const corpus::ScholarIndex& index, bool oracle_check = false)
      : index_(index), oracle_check_(oracle_check) {}

  std::optional<ResolvedResponse> resolve(const classify::ClassifiedResponse& c) {
    if (c.category != classify::Category::valid) return std::nullopt;
    ResolvedResponse out;
    out.prompt_id = c.prompt_id;
    out.llm_id = c.llm_id;
    out.run_idx = c.run_idx;
    for (const auto& rec : c.records) out.records.push_back(lookup(rec.name, rec.lastname));
    ++stats_.responses;
    return out;
  }

  ResolvedRecord lookup(const std::string& name, const std::string& lastname) {
    ++stats_.records;
    const std::string key = name + '\x1f' + lastname;
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      ResolvedRecord r{fuzzy_match(name, lastname, index_), exact_match(name, lastname, index_)};
      if (oracle_check_) {
        const MatchResult o = exhaustive_match(name, lastname, index_);
        ++stats_.oracle_checked;
        if (o.status != r.fuzzy.status || o.scholar_id != r.fuzzy.scholar_id) ++stats_.oracle_mismatches;
      }
      it = cache_.emplace(key, std::move(r)).first;
    }
    stats_.found += it->second.fuzzy.status == Status::found;
    stats_.exact_found += it->second.exact.status == Status::found;
    return it->second;
  }

  const ResolveStats& stats() const { return stats_; }

 private:
  const corpus::ScholarIndex& index_;
  bool oracle_check_;
  std::unordered_map<std::string, ResolvedRecord> cache_;
  ResolveStats stats_;
};

inline ResolveStats resolve_file(const std::filesystem::path& classified, const corpus::ScholarIndex& index,
                                 const std::filesystem::path& out_path, bool oracle_check = false) {
  io::require_file(classified, "classified file");
  Resolver resolver(index, oracle_check);
  std::string out;
  io::for_each_jsonl(classified, [&](size_t, const json& j) {
    if (auto r = resolver.resolve(classify::classified_from_json(j))) {
      out += io::dump(to_json(*r));
      out += '\n';
    }
  });
  io::write_file(out_path, out);
  return resolver.stats();
}

inline std::vector<ResolvedResponse> read_resolved(const std::filesystem::path& path) {
  io::require_file(path, "resolved file");
  std::vector<ResolvedResponse> out;
  io::for_each_jsonl(path, [&](size_t, const json& j) { out.push_back(resolved_from_json(j)); });
  return out;
}

}  // namespace audit::resolve
