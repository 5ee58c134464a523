#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "audit/error.hpp"

namespace audit {

enum class TransportStatus { ok, http_error, timeout, exhausted_retries };

inline std::string_view to_string(TransportStatus s) {
  switch (s) {
    case TransportStatus::ok: return "ok";
    case TransportStatus::http_error: return "http_error";
    case TransportStatus::timeout: return "timeout";
    default: return "exhausted_retries";
  }
}

inline TransportStatus parse_transport_status(std::string_view s) {
  if (s == "ok") return TransportStatus::ok;
  if (s == "http_error") return TransportStatus::http_error;
  if (s == "timeout") return TransportStatus::timeout;
  if (s == "exhausted_retries") return TransportStatus::exhausted_retries;
  throw ParseError("unknown transport_status '" + std::string(s) + "'");
}

// One reply of one LLM to one prompt repetition, as persisted by the gateway.
struct RawResponse {
  std::string prompt_id;
  std::string llm_id;
  int run_idx = 0;
  std::string raw_text;
  TransportStatus transport_status = TransportStatus::ok;
  std::optional<int> http_code;
  int64_t latency_ms = 0;
  std::string timestamp;  // ISO 8601 UTC
};

inline nlohmann::json to_json(const RawResponse& r) {
  nlohmann::json j{{"prompt_id", r.prompt_id},
                   {"llm_id", r.llm_id},
                   {"run_idx", r.run_idx},
                   {"raw_text", r.raw_text},
                   {"transport_status", to_string(r.transport_status)}};
  j["http_code"] = r.http_code ? nlohmann::json(*r.http_code) : nlohmann::json(nullptr);
  j["latency_ms"] = r.latency_ms;
  j["timestamp"] = r.timestamp;
  return j;
}

inline RawResponse raw_from_json(const nlohmann::json& j) {
  try {
    RawResponse r;
    r.prompt_id = j.at("prompt_id").get<std::string>();
    r.llm_id = j.at("llm_id").get<std::string>();
    r.run_idx = j.at("run_idx").get<int>();
    r.raw_text = j.at("raw_text").get<std::string>();
    r.transport_status = parse_transport_status(j.at("transport_status").get<std::string>());
    if (j.contains("http_code") && !j.at("http_code").is_null()) r.http_code = j.at("http_code").get<int>();
    r.latency_ms = j.value("latency_ms", int64_t{0});
    r.timestamp = j.value("timestamp", std::string());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("raw response record: ") + e.what());
  }
}

}  // namespace audit
