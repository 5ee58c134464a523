#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "audit/corpus.hpp"
#include "audit/error.hpp"
#include "audit/grid.hpp"
#include "audit/synthetic.hpp"
#include "audit/util/rng.hpp"

// Deterministic stand-in for an LLM endpoint. Each behavior produces text
// the classifier labels with the matching category.
namespace audit::mock {

using json = nlohmann::json;

enum class Behavior { faithful, hallucinate, refuse, truncate, empty, malformed };

inline std::string_view to_string(Behavior b) {
  switch (b) {
    case Behavior::faithful: return "faithful";
    case Behavior::hallucinate: return "hallucinate";
    case Behavior::refuse: return "refuse";
    case Behavior::truncate: return "truncate";
    case Behavior::empty: return "empty";
    default: return "malformed";
  }
}

inline std::optional<Behavior> parse_behavior(std::string_view s) {
  for (auto b : {Behavior::faithful, Behavior::hallucinate, Behavior::refuse, Behavior::truncate, Behavior::empty,
                 Behavior::malformed}) {
    if (s == to_string(b)) return b;
  }
  return std::nullopt;
}

// Probability of each behavior for a "mixed" mock endpoint.
struct BehaviorMix {
  std::map<Behavior, double> weights = {{Behavior::faithful, 0.72}, {Behavior::hallucinate, 0.10},
                                        {Behavior::refuse, 0.06},   {Behavior::truncate, 0.04},
                                        {Behavior::empty, 0.04},    {Behavior::malformed, 0.04}};

  Behavior draw(rng::Rng& r) const {
    double total = 0;
    for (const auto& [b, w] : weights) total += w;
    double u = r.uniform() * total;
    for (const auto& [b, w] : weights) {
      if (u < w) return b;
      u -= w;
    }
    return weights.rbegin()->first;
  }
};

class MockLlm {
 public:
  // `dims` supplies location ISO codes and seniority stages; without it the
  // mock only matches on field.
  explicit MockLlm(const corpus::ScholarIndex& index, const grid::DimensionSet* dims = nullptr)
      : index_(index), dims_(dims) {
    for (uint32_t i = 0; i < index_.size(); ++i) by_field_[index_.at(i).field].push_back(i);
    hallucination_prefix_ = unused_prefix();
  }

  std::string respond(const grid::PromptInstance& prompt, uint64_t seed, Behavior behavior) const {
    rng::Rng r(rng::seed_from(prompt.prompt_id + "|" + std::to_string(seed) + "|" + std::string(to_string(behavior))));
    const int k = std::max(1, prompt.dims.k);
    switch (behavior) {
      case Behavior::faithful: {
        std::string body = records_json(faithful_records(prompt, k, r)).dump(2);
        if (r.chance(0.2)) body = "```json\n" + body + "\n```";
        return body;
      }
      case Behavior::hallucinate: return records_json(hallucinated_records(k, r)).dump(2);
      case Behavior::refuse: return refusal_text(prompt.dims.language, r);
      case Behavior::truncate: return truncated(prompt, r, std::min(std::max(k, 2), 4));
      case Behavior::empty: {
        static const char* kBlank[] = {"", " ", "\n\n", "  \t\n"};
        return kBlank[r.below(4)];
      }
      default: return malformed(prompt, k, r);
    }
  }

  // A valid array of max(k, 2) records cut in the middle of record
  // `cut_record` (1-based). The first cut_record-1 records stay complete.
  std::string truncated(const grid::PromptInstance& prompt, rng::Rng& r, int cut_record) const {
    const int n = std::max({prompt.dims.k, 2, cut_record});
    const auto recs = faithful_records(prompt, n, r);
    std::string out = "[\n";
    for (int i = 0; i < n; ++i) {
      std::string obj = record_json(recs[static_cast<size_t>(i)]).dump(2);
      if (i + 1 == cut_record) {
        out += "  " + obj.substr(0, obj.size() / 2);
        return out;
      }
      out += "  " + obj + (i + 1 < n ? ",\n" : "\n");
    }
    out += "]";
    return out;
  }

  const std::string& hallucination_prefix() const { return hallucination_prefix_; }

 private:
  struct Pick {
    std::string name;
    std::string lastname;
    std::string field;
  };

  std::string unused_prefix() const {
    static const char* kCandidates[] = {"xq", "qx", "zx", "xz", "qz", "zq", "jx", "xj", "vq", "qv", "wx", "xw"};
    for (const char* c : kCandidates) {
      if (index_.block(c).empty()) return c;
    }
    for (char a = 'a'; a <= 'z'; ++a) {
      for (char b = 'a'; b <= 'z'; ++b) {
        std::string p{a, b};
        if (index_.block(p).empty()) return p;
      }
    }
    throw Error("mock: corpus covers every two-letter prefix; cannot hallucinate");
  }

  static std::pair<std::string, std::string> split_name(const corpus::ScholarRecord& s) {
    const std::string& d = s.display_name;
    if (d.size() > s.lastname.size() + 1 && d.compare(d.size() - s.lastname.size(), s.lastname.size(), s.lastname) == 0) {
      return {text::trim(d.substr(0, d.size() - s.lastname.size())), s.lastname};
    }
    const auto sp = d.find(' ');
    return {sp == std::string::npos ? d : d.substr(0, sp), s.lastname};
  }

  int preference(const corpus::ScholarRecord& s, const grid::PromptInstance& p) const {
    if (dims_ == nullptr) return 0;
    int score = 0;
    try {
      const auto& stage = dims_->seniority_level(p.dims.seniority).stage;
      if (auto age = s.career_age()) {
        if ((stage == "junior" && *age <= 10) || (stage == "senior" && *age >= 20)) score += 2;
      }
      if (s.country_code && *s.country_code == dims_->location_level(p.dims.location).iso) score += 1;
    } catch (const ValidationError&) {
    }
    return score;
  }

  std::vector<Pick> faithful_records(const grid::PromptInstance& p, int k, rng::Rng& r) const {
    if (index_.size() == 0) throw ValidationError("mock: faithful behavior needs a non-empty corpus");
    std::vector<uint32_t> order;
    static const std::vector<uint32_t> kNone;
    auto it = by_field_.find(p.dims.field);
    const std::vector<uint32_t>& pool = it == by_field_.end() ? kNone : it->second;
    std::vector<uint32_t> same_field;
    if (pool.size() > 256) {
      // Large corpora: rank a bounded random sample.
      for (int i = 0; i < 256; ++i) same_field.push_back(pool[r.below(pool.size())]);
      std::sort(same_field.begin(), same_field.end());
      same_field.erase(std::unique(same_field.begin(), same_field.end()), same_field.end());
    } else {
      same_field = pool;
    }
    r.shuffle(same_field.begin(), same_field.end());
    std::stable_sort(same_field.begin(), same_field.end(), [&](uint32_t a, uint32_t b) {
      return preference(index_.at(a), p) > preference(index_.at(b), p);
    });
    order = same_field;
    if (order.size() < static_cast<size_t>(k)) {
      std::vector<uint32_t> rest;
      for (uint32_t i = 0; i < index_.size() && rest.size() < static_cast<size_t>(4 * k); ++i) {
        if (index_.at(i).field != p.dims.field) rest.push_back(i);
      }
      r.shuffle(rest.begin(), rest.end());
      order.insert(order.end(), rest.begin(), rest.end());
    }
    std::vector<Pick> out;
    for (int i = 0; i < k; ++i) {
      const auto& s = index_.at(order[static_cast<size_t>(i) % order.size()]);
      auto [first, last] = split_name(s);
      out.push_back({first, last, s.field});
    }
    return out;
  }

  std::vector<Pick> hallucinated_records(int k, rng::Rng& r) const {
    std::vector<Pick> out;
    for (int i = 0; i < k; ++i) {
      std::string last = hallucination_prefix_ + synthetic::syllables(r, 1, 2);
      out.push_back({synthetic::capitalize(synthetic::syllables(r, 1, 2)), synthetic::capitalize(last), ""});
    }
    return out;
  }

  static json record_json(const Pick& p) {
    return json{{"name", p.name},
                {"lastname", p.lastname},
                {"current_affiliations", json::array({{{"position", "Professor"}, {"affiliation", "Example University"}}})},
                {"areas_of_research_or_work", json::array({p.field.empty() ? "research" : p.field})},
                {"reason", "Sustained record of independent research."},
                {"source", "N/A"}};
  }

  static json records_json(const std::vector<Pick>& picks) {
    json arr = json::array();
    for (const auto& p : picks) arr.push_back(record_json(p));
    return arr;
  }

  static std::string refusal_text(const std::string& lang, rng::Rng& r) {
    static const std::vector<std::string> en = {
        "I cannot recommend specific individuals because assessing scholars by name risks unfair bias.",
        "I'm sorry, but I am unable to provide names of specific researchers for this request."};
    static const std::vector<std::string> de = {
        "Es tut mir leid, aber ich kann keine konkreten Personen empfehlen.",
        "Ich bin nicht in der Lage, einzelne Forschende namentlich zu bewerten."};
    static const std::vector<std::string> es = {
        "Lo siento, pero no puedo recomendar personas específicas para este puesto.",
        "No me es posible evaluar a investigadores concretos por su nombre."};
    const auto& pool = lang == "de" ? de : (lang == "es" ? es : en);
    return pool[r.below(pool.size())];
  }

  std::string malformed(const grid::PromptInstance& p, int k, rng::Rng& r) const {
    const auto picks = faithful_records(p, k, r);
    std::string out = "[";
    for (size_t i = 0; i < picks.size(); ++i) {
      if (i) out += ", ";
      // Python-literal style: single quotes are not JSON.
      out += "{'name': '" + picks[i].name + "', 'lastname': '" + picks[i].lastname + "', 'source': 'N/A'}";
    }
    out += "]";
    return out;
  }

  const corpus::ScholarIndex& index_;
  const grid::DimensionSet* dims_;
  std::map<std::string, std::vector<uint32_t>> by_field_;
  std::string hallucination_prefix_;
};

// Convenience wrapper matching the single-call form.
inline std::string mock_llm(const grid::PromptInstance& prompt, uint64_t seed, const corpus::ScholarIndex& corpus,
                            Behavior behavior) {
  return MockLlm(corpus).respond(prompt, seed, behavior);
}

}  // namespace audit::mock
