#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "httplib.h"
#include "kgattach/common.hpp"
#include "kgattach/prompts.hpp"

namespace kgattach::gateway {

struct SamplingParams {
  double temperature = 0.6;
  double top_p = 0.95;
  int top_k = 10;
  int max_new_tokens = 256;
  std::optional<std::int64_t> seed;
  int batch_concurrency = 128;
};

inline constexpr int kReasoningMaxNewTokens = 16384;
inline constexpr int kStandardMaxNewTokens = 256;
inline constexpr std::int64_t kExtractionSeed = 42;

inline SamplingParams generation_defaults(bool reasoning_model) {
  SamplingParams p;
  p.max_new_tokens = reasoning_model ? kReasoningMaxNewTokens : kStandardMaxNewTokens;
  return p;
}

// Extraction is seeded for reproducibility; generation is not by default.
inline SamplingParams extraction_defaults() {
  SamplingParams p;
  p.max_new_tokens = kReasoningMaxNewTokens;
  p.seed = kExtractionSeed;
  return p;
}

struct LlmRequest {
  std::string prompt;
  SamplingParams params;
  std::string model_id;
  std::string tag;  // caller correlation key; mock backends key responses on it
};

struct LlmResponse {
  std::string raw_text;
  std::string visible_text;  // raw_text with the reasoning trace removed
  long latency_ms = 0;
  int attempts = 1;
  bool malformed_reasoning = false;
};

struct GatewayError : Error {
  using Error::Error;
};

struct StripResult {
  std::string text;
  bool malformed = false;
};

// Removes reasoning traces delimited by open/close markers. Completions from
// prompts that end with the open marker start mid-trace, so a close marker
// with no preceding open marker ends such a trace. An open marker that is
// never closed makes the whole text unusable (malformed). The returned text
// contains neither marker, which makes stripping idempotent.
inline StripResult strip_reasoning(std::string_view raw,
                                   std::string_view open = prompts::kReasoningOpen,
                                   std::string_view close = prompts::kReasoningClose) {
  std::string s(raw);
  std::string prev;
  do {
    prev = s;
    std::size_t first_open = s.find(open);
    std::size_t first_close = s.find(close);
    if (first_close != std::string::npos &&
        (first_open == std::string::npos || first_close < first_open)) {
      s.erase(0, first_close + close.size());
      continue;
    }
    std::size_t o;
    while ((o = s.find(open)) != std::string::npos) {
      std::size_t c = s.find(close, o + open.size());
      if (c == std::string::npos) return {"", true};
      s.erase(o, c + close.size() - o);
    }
  } while (s != prev);
  return {strings::trim(s), false};
}

class Backend {
 public:
  virtual ~Backend() = default;
  // Returns the raw completion text; throws GatewayError on failure.
  virtual std::string complete(const LlmRequest& req) = 0;
  virtual std::string name() const = 0;
};

// Scriptable offline backend. Resolution order: per-tag response, then the
// rule function. Responses are keyed by request tag, so results are
// deterministic no matter how the batch is scheduled.
class MockBackend final : public Backend {
 public:
  using Rule = std::function<std::string(const LlmRequest&)>;

  MockBackend() : rule_([](const LlmRequest& r) { return r.prompt; }) {}
  explicit MockBackend(Rule rule) : rule_(std::move(rule)) {}

  static std::shared_ptr<MockBackend> echo() { return std::make_shared<MockBackend>(); }
  static std::shared_ptr<MockBackend> fixed(std::string text) {
    return std::make_shared<MockBackend>(
        [text = std::move(text)](const LlmRequest&) { return text; });
  }

  void set_rule(Rule rule) {
    std::lock_guard lock(mu_);
    rule_ = std::move(rule);
  }

  void set_response(const std::string& tag, std::string text) {
    std::lock_guard lock(mu_);
    by_tag_[tag] = std::move(text);
  }

  // The next n calls fail with a transient error, then normal service resumes.
  void fail_times(int n, std::string message = "injected transient failure") {
    std::lock_guard lock(mu_);
    fail_remaining_ = n;
    fail_message_ = std::move(message);
  }

  void set_latency(std::chrono::milliseconds d) { latency_ = d; }

  int calls() const { return calls_.load(); }
  int max_in_flight() const { return max_in_flight_.load(); }

  std::string complete(const LlmRequest& req) override {
    calls_.fetch_add(1);
    int now_in_flight = in_flight_.fetch_add(1) + 1;
    int seen = max_in_flight_.load();
    while (now_in_flight > seen && !max_in_flight_.compare_exchange_weak(seen, now_in_flight)) {
    }
    struct Guard {
      std::atomic<int>& counter;
      ~Guard() { counter.fetch_sub(1); }
    } guard{in_flight_};

    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);

    std::lock_guard lock(mu_);
    if (fail_remaining_ > 0) {
      --fail_remaining_;
      throw GatewayError(fail_message_);
    }
    if (auto it = by_tag_.find(req.tag); it != by_tag_.end()) return it->second;
    return rule_(req);
  }

  std::string name() const override { return "mock"; }

 private:
  mutable std::mutex mu_;
  Rule rule_;
  std::map<std::string, std::string> by_tag_;
  int fail_remaining_ = 0;
  std::string fail_message_;
  std::chrono::milliseconds latency_{0};
  std::atomic<int> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
};

struct EndpointConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string chat_path = "/v1/chat/completions";
  std::string api_key;
  int timeout_seconds = 300;
  bool send_seed = true;  // endpoints without seed support get it logged, not sent
  bool send_top_k = true; // vLLM-style sampling extension
  int max_attempts = 3;
  long retry_base_ms = 1000;  // 1s, 2s, 4s with jitter
};

// OpenAI-compatible chat-completion client.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(EndpointConfig config) : config_(std::move(config)) {}

  std::string complete(const LlmRequest& req) override {
    json body = {
        {"model", req.model_id},
        {"messages", json::array({{{"role", "user"}, {"content", req.prompt}}})},
        {"temperature", req.params.temperature},
        {"top_p", req.params.top_p},
        {"max_tokens", req.params.max_new_tokens},
    };
    if (config_.send_top_k && req.params.top_k > 0) body["top_k"] = req.params.top_k;
    if (req.params.seed) {
      if (config_.send_seed) {
        body["seed"] = *req.params.seed;
      } else {
        log_seed_unsupported();
      }
    }

    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    auto res = client.Post(config_.chat_path, headers, body.dump(), "application/json");
    if (!res) {
      throw GatewayError("endpoint unreachable: " + config_.base_url + " (" +
                         httplib::to_string(res.error()) + ")");
    }
    if (res->status < 200 || res->status >= 300) {
      throw GatewayError("HTTP " + std::to_string(res->status) + " from " + config_.base_url +
                         ": " + res->body.substr(0, 512));
    }
    return extract_completion_text(res->body);
  }

  std::string name() const override { return config_.base_url; }

 private:
  static std::string extract_completion_text(const std::string& body) {
    json payload;
    try {
      payload = json::parse(body);
    } catch (const json::exception& ex) {
      throw GatewayError(std::string("unparseable completion payload: ") + ex.what());
    }
    if (payload.contains("choices") && payload["choices"].is_array() &&
        !payload["choices"].empty()) {
      const json& choice = payload["choices"][0];
      if (choice.contains("message") && choice["message"].contains("content") &&
          choice["message"]["content"].is_string()) {
        return choice["message"]["content"].get<std::string>();
      }
      if (choice.contains("text") && choice["text"].is_string()) {
        return choice["text"].get<std::string>();
      }
    }
    throw GatewayError("completion payload has no choices[0] text");
  }

  void log_seed_unsupported() {
    if (!seed_warned_.exchange(true)) {
      std::fprintf(stderr, "[gateway] endpoint %s does not support seed; request unseeded\n",
                   config_.base_url.c_str());
    }
  }

  EndpointConfig config_;
  std::atomic<bool> seed_warned_{false};
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{1000};  // 1s, then 2s, 4s
  double jitter = 0.2;
};

struct BatchFailure {
  std::size_t index = 0;
  std::string message;
};

struct BatchError : Error {
  std::vector<BatchFailure> failures;
  explicit BatchError(std::vector<BatchFailure> fails)
      : Error(describe(fails)), failures(std::move(fails)) {}

 private:
  static std::string describe(const std::vector<BatchFailure>& fails) {
    std::string msg = std::to_string(fails.size()) + " request(s) failed at indices [";
    for (std::size_t i = 0; i < fails.size(); ++i) {
      if (i) msg += ", ";
      msg += std::to_string(fails[i].index);
    }
    msg += "]";
    return msg;
  }
};

class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Backend> backend, RetryPolicy retry = {})
      : backend_(std::move(backend)), retry_(retry) {
    if (!backend_) throw ConfigError("gateway requires a backend");
  }

  const Backend& backend() const { return *backend_; }

  // Completes one request, retrying transient failures with exponential
  // backoff. Empty completions count as failures.
  LlmResponse complete(const LlmRequest& req) const {
    if (req.prompt.empty()) throw GatewayError("empty prompt");
    std::string last_error;
    const auto start = std::chrono::steady_clock::now();
    for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
      try {
        std::string raw = backend_->complete(req);
        if (strings::trim_view(raw).empty()) throw GatewayError("empty completion");
        StripResult stripped = strip_reasoning(raw);
        LlmResponse resp;
        resp.raw_text = std::move(raw);
        resp.visible_text = std::move(stripped.text);
        resp.malformed_reasoning = stripped.malformed;
        resp.attempts = attempt;
        resp.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - start)
                              .count();
        return resp;
      } catch (const GatewayError& ex) {
        last_error = ex.what();
        if (attempt < retry_.max_attempts) backoff(attempt);
      }
    }
    throw GatewayError("request \"" + req.tag + "\" failed after " +
                       std::to_string(retry_.max_attempts) + " attempts: " + last_error);
  }

  struct BatchResult {
    LlmResponse response;
    bool ok = false;
    std::string error;
  };

  // Runs requests with at most params.batch_concurrency in flight. Output
  // order equals input order; per-request failures are carried in place.
  std::vector<BatchResult> complete_batch(const std::vector<LlmRequest>& reqs) const {
    if (reqs.empty()) throw Error("complete_batch: empty request list");
    std::vector<BatchResult> results(reqs.size());
    const int concurrency = std::max(1, reqs.front().params.batch_concurrency);
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(concurrency),
                                                      reqs.size());
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
      while (true) {
        std::size_t i = next.fetch_add(1);
        if (i >= reqs.size()) return;
        try {
          results[i].response = complete(reqs[i]);
          results[i].ok = true;
        } catch (const std::exception& ex) {
          results[i].ok = false;
          results[i].error = ex.what();
        }
      }
    };
    if (workers <= 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
      for (std::thread& t : pool) t.join();
    }
    return results;
  }

  // Unwraps a batch, throwing a BatchError that lists every failed index.
  static std::vector<LlmResponse> require_all(std::vector<BatchResult> batch) {
    std::vector<BatchFailure> failures;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (!batch[i].ok) failures.push_back({i, batch[i].error});
    }
    if (!failures.empty()) throw BatchError(std::move(failures));
    std::vector<LlmResponse> out;
    out.reserve(batch.size());
    for (BatchResult& r : batch) out.push_back(std::move(r.response));
    return out;
  }

 private:
  void backoff(int attempt) const {
    auto delay = retry_.base_delay * (1ll << (attempt - 1));
    if (retry_.jitter > 0) {
      thread_local std::mt19937 rng(0x9e3779b9u);
      std::uniform_real_distribution<double> dist(1.0 - retry_.jitter, 1.0 + retry_.jitter);
      delay = std::chrono::milliseconds(
          static_cast<long long>(static_cast<double>(delay.count()) * dist(rng)));
    }
    std::this_thread::sleep_for(delay);
  }

  std::shared_ptr<Backend> backend_;
  RetryPolicy retry_;
};

}  // namespace kgattach::gateway
