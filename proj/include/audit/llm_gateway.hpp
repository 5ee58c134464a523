#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "audit/error.hpp"
#include "audit/grid.hpp"
#include "audit/mock_llm.hpp"
#include "audit/raw_response.hpp"
#include "audit/util/io.hpp"
#include "audit/util/rng.hpp"

// Campaign driver: sends every prompt to every endpoint N times, with
// bounded per-endpoint concurrency, retries and a resumable JSONL sink.
namespace audit::gateway {

using json = nlohmann::json;

// replay serves scripted responses from a JSONL file named by base_url.
enum class ApiStyle { openai_chat, ollama_generate, mock, replay };

inline std::string_view to_string(ApiStyle s) {
  switch (s) {
    case ApiStyle::openai_chat: return "openai_chat";
    case ApiStyle::ollama_generate: return "ollama_generate";
    case ApiStyle::replay: return "replay";
    default: return "mock";
  }
}

struct EndpointConfig {
  std::string llm_id;
  std::string base_url;
  ApiStyle api_style = ApiStyle::openai_chat;
  std::string model_name;
  int max_concurrency = 1;
  double timeout_s = 60;
  int max_retries = 3;
  int backoff_ms = 500;  // first retry delay; doubles each attempt
  json params = json::object();  // decoding parameters, passed through verbatim
  std::string api_key_env = "AUDIT_API_KEY";

  void validate() const {
    if (llm_id.empty()) throw ValidationError("endpoint: empty llm_id");
    if (max_concurrency < 1) throw ValidationError("endpoint '" + llm_id + "': max_concurrency must be >= 1");
    if (!(timeout_s > 0)) throw ValidationError("endpoint '" + llm_id + "': timeout must be > 0");
    if (max_retries < 0) throw ValidationError("endpoint '" + llm_id + "': max_retries must be >= 0");
    if (api_style != ApiStyle::mock && base_url.empty()) throw ValidationError("endpoint '" + llm_id + "': empty base_url");
  }
};

inline EndpointConfig endpoint_from_json(const json& j) {
  EndpointConfig e;
  try {
    e.llm_id = j.at("llm_id").get<std::string>();
    e.base_url = j.value("base_url", std::string());
    const std::string style = j.at("api_style").get<std::string>();
    if (style == "openai_chat") {
      e.api_style = ApiStyle::openai_chat;
    } else if (style == "ollama_generate") {
      e.api_style = ApiStyle::ollama_generate;
    } else if (style == "mock") {
      e.api_style = ApiStyle::mock;
    } else if (style == "replay") {
      e.api_style = ApiStyle::replay;
    } else {
      throw ValidationError("endpoint '" + e.llm_id + "': unknown api_style '" + style + "'");
    }
    e.model_name = j.value("model_name", std::string());
    e.max_concurrency = j.value("max_concurrency", 1);
    e.timeout_s = j.value("timeout", 60.0);
    e.max_retries = j.value("max_retries", 3);
    e.backoff_ms = j.value("backoff_ms", 500);
    e.params = j.value("params", json::object());
    e.api_key_env = j.value("api_key_env", std::string("AUDIT_API_KEY"));
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("endpoint config: ") + ex.what());
  }
  e.validate();
  return e;
}

inline std::vector<EndpointConfig> load_endpoints(const std::filesystem::path& path) {
  io::require_file(path, "endpoints file");
  const json doc = io::read_json(path);
  if (!doc.is_array()) throw ValidationError(path.string() + ": expected a JSON list of endpoints");
  std::vector<EndpointConfig> out;
  std::set<std::string> ids;
  for (const auto& j : doc) {
    out.push_back(endpoint_from_json(j));
    // Replay scripts are located relative to the endpoints file.
    if (out.back().api_style == ApiStyle::replay && std::filesystem::path(out.back().base_url).is_relative()) {
      out.back().base_url = (path.parent_path() / out.back().base_url).lexically_normal().string();
    }
    if (!ids.insert(out.back().llm_id).second) throw ValidationError("duplicate llm_id '" + out.back().llm_id + "'");
  }
  return out;
}

// Outcome of a single HTTP attempt.
struct Attempt {
  enum class Kind { ok, http_status, timeout, connection } kind = Kind::ok;
  std::string text;
  std::optional<int> http_code;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual Attempt send(const EndpointConfig& ep, const grid::PromptInstance& prompt, int run_idx) = 0;
};

namespace detail {

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

inline UrlParts split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("base_url lacks a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  UrlParts p;
  p.origin = url.substr(0, path_start);
  p.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!p.path.empty() && p.path.back() == '/') p.path.pop_back();
  return p;
}

}  // namespace detail

// openai_chat: POST {base_url}/chat/completions, reply in choices[0].message.content.
// ollama_generate: POST {base_url}/api/generate with stream=false, reply in "response".
class HttpTransport : public Transport {
 public:
  Attempt send(const EndpointConfig& ep, const grid::PromptInstance& prompt, int) override {
    const auto url = detail::split_url(ep.base_url);
    httplib::Client cli(url.origin);
    const auto secs = static_cast<time_t>(ep.timeout_s);
    const auto usecs = static_cast<time_t>((ep.timeout_s - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);

    httplib::Headers headers;
    if (const char* key = std::getenv(ep.api_key_env.c_str()); key != nullptr && *key != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    json body;
    std::string path;
    if (ep.api_style == ApiStyle::ollama_generate) {
      path = url.path + "/api/generate";
      body = {{"model", ep.model_name}, {"prompt", prompt.text}, {"stream", false}};
      if (!ep.params.empty()) body["options"] = ep.params;
    } else {
      path = url.path + "/chat/completions";
      body = {{"model", ep.model_name}, {"messages", json::array({{{"role", "user"}, {"content", prompt.text}}})}};
      for (const auto& [k, v] : ep.params.items()) body[k] = v;
    }

    auto res = cli.Post(path, headers, io::dump(body), "application/json");
    Attempt a;
    if (!res) {
      const auto err = res.error();
      a.kind = (err == httplib::Error::Read || err == httplib::Error::Write || err == httplib::Error::ConnectionTimeout)
                   ? Attempt::Kind::timeout
                   : Attempt::Kind::connection;
      return a;
    }
    a.http_code = res->status;
    if (res->status != 200) {
      a.kind = Attempt::Kind::http_status;
      return a;
    }
    const json reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded()) {
      a.text = res->body;
      return a;
    }
    try {
      if (ep.api_style == ApiStyle::ollama_generate) {
        a.text = reply.value("response", std::string());
      } else {
        const auto& msg = reply.at("choices").at(0).at("message");
        a.text = msg.contains("content") && msg.at("content").is_string() ? msg.at("content").get<std::string>() : "";
      }
    } catch (const json::exception&) {
      a.text = res->body;
    }
    return a;
  }
};

// In-process endpoint backed by MockLlm. model_name selects a behavior, or
// "mixed" to draw one per request.
class MockTransport : public Transport {
 public:
  MockTransport(const corpus::ScholarIndex& index, const grid::DimensionSet* dims, uint64_t seed)
      : llm_(index, dims), seed_(seed) {}

  Attempt send(const EndpointConfig& ep, const grid::PromptInstance& prompt, int run_idx) override {
    const uint64_t request_seed = rng::seed_from(ep.llm_id + "|" + std::to_string(seed_) + "|" + std::to_string(run_idx));
    mock::Behavior behavior;
    if (auto b = mock::parse_behavior(ep.model_name)) {
      behavior = *b;
    } else {
      rng::Rng r(rng::seed_from(prompt.prompt_id + "|" + std::to_string(request_seed)));
      behavior = mix_for(ep).draw(r);
    }
    Attempt a;
    a.http_code = 200;
    a.text = llm_.respond(prompt, request_seed, behavior);
    return a;
  }

 private:
  static mock::BehaviorMix mix_for(const EndpointConfig& ep) {
    mock::BehaviorMix mix;
    if (ep.params.contains("mock_mix") && ep.params.at("mock_mix").is_object()) {
      mix.weights.clear();
      for (const auto& [name, w] : ep.params.at("mock_mix").items()) {
        if (auto b = mock::parse_behavior(name)) mix.weights[*b] = w.get<double>();
      }
      if (mix.weights.empty()) mix = mock::BehaviorMix{};
    }
    return mix;
  }

  mock::MockLlm llm_;
  uint64_t seed_;
};

// Scripted responses: each JSONL line holds prompt_id, llm_id, run_idx and
// text, optionally http_code for a failed attempt.
class ReplayTransport : public Transport {
 public:
  Attempt send(const EndpointConfig& ep, const grid::PromptInstance& prompt, int run_idx) override {
    const auto& script = load(ep.base_url);
    auto it = script.find({prompt.prompt_id, ep.llm_id, run_idx});
    if (it == script.end()) {
      throw ValidationError("replay script " + ep.base_url + " has no response for (" + prompt.prompt_id + ", " +
                            ep.llm_id + ", " + std::to_string(run_idx) + ")");
    }
    return it->second;
  }

 private:
  using Key = std::tuple<std::string, std::string, int>;

  const std::map<Key, Attempt>& load(const std::string& path) {
    std::lock_guard lock(mu_);
    auto it = scripts_.find(path);
    if (it != scripts_.end()) return it->second;
    io::require_file(path, "replay script");
    std::map<Key, Attempt> script;
    io::for_each_jsonl(path, [&](size_t line, const json& j) {
      try {
        Attempt a;
        const int code = j.value("http_code", 200);
        a.http_code = code;
        a.kind = code == 200 ? Attempt::Kind::ok : Attempt::Kind::http_status;
        a.text = j.value("text", std::string());
        script[{j.at("prompt_id").get<std::string>(), j.at("llm_id").get<std::string>(), j.at("run_idx").get<int>()}] =
            std::move(a);
      } catch (const json::exception& e) {
        throw ParseError(path + ":" + std::to_string(line) + ": " + e.what());
      }
    });
    return scripts_.emplace(path, std::move(script)).first->second;
  }

  std::mutex mu_;
  std::map<std::string, std::map<Key, Attempt>> scripts_;
};

// Dispatches each endpoint to the transport for its api_style. The mock
// transport is optional and only needed when mock endpoints are present.
class RoutingTransport : public Transport {
 public:
  explicit RoutingTransport(Transport* mock = nullptr) : mock_(mock) {}

  Attempt send(const EndpointConfig& ep, const grid::PromptInstance& prompt, int run_idx) override {
    switch (ep.api_style) {
      case ApiStyle::mock:
        if (!mock_) throw ConfigError("endpoint '" + ep.llm_id + "' is a mock endpoint but no corpus index was given");
        return mock_->send(ep, prompt, run_idx);
      case ApiStyle::replay: return replay_.send(ep, prompt, run_idx);
      default: return http_.send(ep, prompt, run_idx);
    }
  }

 private:
  Transport* mock_;
  ReplayTransport replay_;
  HttpTransport http_;
};

// Append-only destination for raw responses.
class RecordSink {
 public:
  virtual ~RecordSink() = default;
  virtual void append(const RawResponse& r) = 0;
  // (prompt_id, llm_id, run_idx) triples already present.
  virtual std::set<std::tuple<std::string, std::string, int>> existing() const = 0;
};

class MemorySink : public RecordSink {
 public:
  void append(const RawResponse& r) override { records.push_back(r); }
  std::set<std::tuple<std::string, std::string, int>> existing() const override {
    std::set<std::tuple<std::string, std::string, int>> keys;
    for (const auto& r : records) keys.emplace(r.prompt_id, r.llm_id, r.run_idx);
    return keys;
  }
  std::vector<RawResponse> records;
};

class JsonlSink : public RecordSink {
 public:
  // With resume=false the file is truncated. With resume=true an unfinished
  // trailing line left by an interrupted run is cut off before appending.
  JsonlSink(std::filesystem::path path, bool resume) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    if (resume && std::filesystem::exists(path_)) {
      repair_tail();
      io::for_each_jsonl(path_, [&](size_t, const json& j) {
        keys_.emplace(j.at("prompt_id").get<std::string>(), j.at("llm_id").get<std::string>(), j.at("run_idx").get<int>());
      });
      out_.open(path_, std::ios::binary | std::ios::app);
    } else {
      out_.open(path_, std::ios::binary | std::ios::trunc);
    }
    if (!out_) throw IoError("cannot open sink " + path_.string());
  }

  void append(const RawResponse& r) override {
    out_ << io::dump(to_json(r)) << '\n';
    if (!out_) throw IoError("sink write failed: " + path_.string());
  }

  void flush() { out_.flush(); }

  std::set<std::tuple<std::string, std::string, int>> existing() const override { return keys_; }

 private:
  void repair_tail() {
    const std::string content = io::read_file(path_);
    if (content.empty() || content.back() == '\n') return;
    const auto last_nl = content.find_last_of('\n');
    const auto keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    std::filesystem::resize_file(path_, keep);
  }

  std::filesystem::path path_;
  std::ofstream out_;
  std::set<std::tuple<std::string, std::string, int>> keys_;
};

struct CampaignOptions {
  int repetitions = 10;
  // Returns the ISO 8601 UTC timestamp recorded on each response.
  std::function<std::string()> now;
  bool record_latency = true;
  // Upper bound on completed-but-unwritten responses, as a multiple of the
  // endpoint's max_concurrency.
  int reorder_window_factor = 8;
};

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct CampaignSummary {
  std::map<std::string, std::map<std::string, size_t>> counts;  // llm_id -> transport_status -> n
  std::map<std::string, json> decoding_params;                 // llm_id -> params
  size_t written = 0;
  size_t skipped = 0;
  size_t peak_in_flight = 0;

  json to_json() const {
    json j{{"written", written}, {"skipped", skipped}};
    j["counts"] = counts;
    j["decoding_params"] = decoding_params;
    return j;
  }
};

// Retries transport errors, HTTP 429 and 5xx with exponential backoff; other
// 4xx responses are final.
inline RawResponse request_with_retries(Transport& transport, const EndpointConfig& ep, const grid::PromptInstance& prompt,
                                        int run_idx) {
  RawResponse r;
  r.prompt_id = prompt.prompt_id;
  r.llm_id = ep.llm_id;
  r.run_idx = run_idx;
  for (int attempt = 0;; ++attempt) {
    const Attempt a = transport.send(ep, prompt, run_idx);
    r.http_code = a.http_code;
    bool retryable = false;
    switch (a.kind) {
      case Attempt::Kind::ok:
        r.transport_status = TransportStatus::ok;
        r.raw_text = a.text;
        return r;
      case Attempt::Kind::http_status: {
        const int code = a.http_code.value_or(0);
        retryable = code == 429 || code >= 500;
        r.transport_status = retryable ? TransportStatus::exhausted_retries : TransportStatus::http_error;
        break;
      }
      case Attempt::Kind::timeout:
        retryable = true;
        r.transport_status = TransportStatus::timeout;
        break;
      case Attempt::Kind::connection:
        retryable = true;
        r.transport_status = TransportStatus::exhausted_retries;
        break;
    }
    if (!retryable || attempt >= ep.max_retries) return r;
    std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<int64_t>(ep.backoff_ms) << std::min(attempt, 16)));
  }
}

// Emits |grid| x |endpoints| x repetitions records (minus those already in
// the sink). Endpoints run one after another; within an endpoint up to
// max_concurrency requests are in flight, and records are written in task
// order so seeded mock campaigns produce identical files.
inline CampaignSummary run_campaign(const std::vector<grid::PromptInstance>& prompts,
                                    const std::vector<EndpointConfig>& endpoints, Transport& transport, RecordSink& sink,
                                    const CampaignOptions& opts) {
  if (opts.repetitions < 1) throw ValidationError("repetitions must be >= 1");
  for (const auto& ep : endpoints) ep.validate();
  const auto done = sink.existing();
  const auto now = opts.now ? opts.now : utc_now;

  CampaignSummary summary;
  for (const auto& ep : endpoints) {
    summary.decoding_params[ep.llm_id] = ep.params;
    auto& counts = summary.counts[ep.llm_id];

    struct Task {
      size_t prompt;
      int run;
    };
    std::vector<Task> tasks;
    for (size_t p = 0; p < prompts.size(); ++p) {
      for (int run = 0; run < opts.repetitions; ++run) {
        if (done.count({prompts[p].prompt_id, ep.llm_id, run})) {
          ++summary.skipped;
          continue;
        }
        tasks.push_back({p, run});
      }
    }
    if (tasks.empty()) continue;

    std::mutex mu;
    std::condition_variable cv;
    std::map<size_t, RawResponse> pending;
    size_t next_to_write = 0;
    size_t next_task = 0;
    size_t in_flight = 0;
    std::exception_ptr failure;
    const size_t window = static_cast<size_t>(ep.max_concurrency) * static_cast<size_t>(std::max(1, opts.reorder_window_factor));

    auto worker = [&] {
      for (;;) {
        size_t mine;
        {
          std::unique_lock lock(mu);
          cv.wait(lock, [&] { return failure || next_task >= tasks.size() || next_task < next_to_write + window; });
          if (failure || next_task >= tasks.size()) return;
          mine = next_task++;
          ++in_flight;
          summary.peak_in_flight = std::max(summary.peak_in_flight, in_flight);
        }
        RawResponse rec;
        try {
          const auto t0 = std::chrono::steady_clock::now();
          rec = request_with_retries(transport, ep, prompts[tasks[mine].prompt], tasks[mine].run);
          const auto t1 = std::chrono::steady_clock::now();
          rec.latency_ms = opts.record_latency
                               ? std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count()
                               : 0;
          rec.timestamp = now();
        } catch (...) {
          std::lock_guard lock(mu);
          failure = std::current_exception();
          --in_flight;
          cv.notify_all();
          return;
        }
        std::unique_lock lock(mu);
        --in_flight;
        pending.emplace(mine, std::move(rec));
        try {
          for (auto it = pending.find(next_to_write); it != pending.end(); it = pending.find(next_to_write)) {
            sink.append(it->second);
            ++counts[std::string(to_string(it->second.transport_status))];
            ++summary.written;
            pending.erase(it);
            ++next_to_write;
          }
        } catch (...) {
          failure = std::current_exception();
        }
        cv.notify_all();
      }
    };

    std::vector<std::thread> threads;
    const int n_threads = std::min<int>(ep.max_concurrency, static_cast<int>(tasks.size()));
    threads.reserve(static_cast<size_t>(n_threads));
    for (int i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  return summary;
}

}  // namespace audit::gateway
