#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "kgattach/common.hpp"
#include "kgattach/llm_gateway.hpp"

namespace kgattach::config {

struct ModelRoles {
  std::string generator = "deepseek-r1-32b";
  std::string anonymizer = "qwq-32b";
  std::string extractor = "deepseek-r1-32b";
  std::string judge = "deepseek-r1-32b";
};

struct ReasoningFlags {
  bool generator = true;
  bool anonymizer = true;
  bool extractor = true;
  bool judge = true;
};

struct RunConfig {
  std::string corpus_path;
  std::string out_dir = "runs/default";
  gateway::EndpointConfig endpoint;
  ModelRoles models;
  ReasoningFlags reasoning;
  gateway::SamplingParams generation = gateway::generation_defaults(true);
  gateway::SamplingParams extraction = gateway::extraction_defaults();
  gateway::SamplingParams anonymization = gateway::generation_defaults(true);
  gateway::SamplingParams judging = gateway::generation_defaults(true);
  std::string style = "default";
  std::string variant = "normal";        // normal | anonymized | half
  std::string mask = "tail";             // tail | head | both
  std::string knowledge_scope = "turn";  // condition generation on turn | session knowledge
  bool anon_bracketed_ids = true;        // "[F1]" substitution form vs bare "Person1"
  bool exclude_impossible = false;
  std::uint64_t seed = 42;
  bool seed_generation = false;     // opt-in; extraction is always seeded
  bool mock = false;
  // Per-role mock rule specs: "role" (scripted default), "echo",
  // "fixed:<text>", "fail-n-times:<n>"; plus a tag-keyed response map.
  std::map<std::string, std::string> mock_rules;
  std::map<std::string, std::string> mock_responses;
};

inline json sampling_to_json(const gateway::SamplingParams& p) {
  json j = {{"temperature", p.temperature},
            {"top_p", p.top_p},
            {"top_k", p.top_k},
            {"max_new_tokens", p.max_new_tokens},
            {"batch_concurrency", p.batch_concurrency}};
  if (p.seed) j["seed"] = *p.seed;
  return j;
}

inline gateway::SamplingParams sampling_from_json(const json& j,
                                                  gateway::SamplingParams base) {
  base.temperature = j.value("temperature", base.temperature);
  base.top_p = j.value("top_p", base.top_p);
  base.top_k = j.value("top_k", base.top_k);
  base.max_new_tokens = j.value("max_new_tokens", base.max_new_tokens);
  base.batch_concurrency = j.value("batch_concurrency", base.batch_concurrency);
  if (j.contains("seed") && !j["seed"].is_null()) base.seed = j["seed"].get<std::int64_t>();
  if (base.temperature < 0) throw ConfigError("temperature must be >= 0");
  if (base.top_p <= 0 || base.top_p > 1) throw ConfigError("top_p must be in (0, 1]");
  if (base.top_k <= 0) throw ConfigError("top_k must be positive");
  if (base.max_new_tokens <= 0) throw ConfigError("max_new_tokens must be positive");
  if (base.batch_concurrency <= 0) throw ConfigError("batch_concurrency must be positive");
  return base;
}

// Serialization covers every parameter that affects outputs; the API key is
// deliberately absent (secret, and output-neutral).
inline json to_json(const RunConfig& c) {
  return {{"corpus", c.corpus_path},
          {"out_dir", c.out_dir},
          {"endpoint",
           {{"base_url", c.endpoint.base_url},
            {"chat_path", c.endpoint.chat_path},
            {"timeout_seconds", c.endpoint.timeout_seconds},
            {"send_seed", c.endpoint.send_seed},
            {"send_top_k", c.endpoint.send_top_k},
            {"max_attempts", c.endpoint.max_attempts},
            {"retry_base_ms", c.endpoint.retry_base_ms}}},
          {"models",
           {{"generator", c.models.generator},
            {"anonymizer", c.models.anonymizer},
            {"extractor", c.models.extractor},
            {"judge", c.models.judge}}},
          {"reasoning",
           {{"generator", c.reasoning.generator},
            {"anonymizer", c.reasoning.anonymizer},
            {"extractor", c.reasoning.extractor},
            {"judge", c.reasoning.judge}}},
          {"sampling",
           {{"generation", sampling_to_json(c.generation)},
            {"extraction", sampling_to_json(c.extraction)},
            {"anonymization", sampling_to_json(c.anonymization)},
            {"judging", sampling_to_json(c.judging)}}},
          {"style", c.style},
          {"variant", c.variant},
          {"mask", c.mask},
          {"knowledge_scope", c.knowledge_scope},
          {"anon_bracketed_ids", c.anon_bracketed_ids},
          {"exclude_impossible", c.exclude_impossible},
          {"seed", c.seed},
          {"seed_generation", c.seed_generation},
          {"mock", c.mock},
          {"mock_rules", c.mock_rules},
          {"mock_responses", c.mock_responses}};
}

inline RunConfig from_json(const json& j) {
  RunConfig c;
  c.corpus_path = j.value("corpus", c.corpus_path);
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("endpoint")) {
    const json& e = j["endpoint"];
    c.endpoint.base_url = e.value("base_url", c.endpoint.base_url);
    c.endpoint.chat_path = e.value("chat_path", c.endpoint.chat_path);
    c.endpoint.api_key = e.value("api_key", c.endpoint.api_key);
    c.endpoint.timeout_seconds = e.value("timeout_seconds", c.endpoint.timeout_seconds);
    c.endpoint.send_seed = e.value("send_seed", c.endpoint.send_seed);
    c.endpoint.send_top_k = e.value("send_top_k", c.endpoint.send_top_k);
    c.endpoint.max_attempts = e.value("max_attempts", c.endpoint.max_attempts);
    c.endpoint.retry_base_ms = e.value("retry_base_ms", c.endpoint.retry_base_ms);
  }
  if (j.contains("models")) {
    const json& m = j["models"];
    c.models.generator = m.value("generator", c.models.generator);
    c.models.anonymizer = m.value("anonymizer", c.models.anonymizer);
    c.models.extractor = m.value("extractor", c.models.extractor);
    c.models.judge = m.value("judge", c.models.judge);
  }
  if (j.contains("reasoning")) {
    const json& r = j["reasoning"];
    c.reasoning.generator = r.value("generator", c.reasoning.generator);
    c.reasoning.anonymizer = r.value("anonymizer", c.reasoning.anonymizer);
    c.reasoning.extractor = r.value("extractor", c.reasoning.extractor);
    c.reasoning.judge = r.value("judge", c.reasoning.judge);
  }
  c.generation = gateway::generation_defaults(c.reasoning.generator);
  if (j.contains("sampling")) {
    const json& s = j["sampling"];
    if (s.contains("generation")) c.generation = sampling_from_json(s["generation"], c.generation);
    if (s.contains("extraction")) c.extraction = sampling_from_json(s["extraction"], c.extraction);
    if (s.contains("anonymization")) {
      c.anonymization = sampling_from_json(s["anonymization"], c.anonymization);
    }
    if (s.contains("judging")) c.judging = sampling_from_json(s["judging"], c.judging);
  }
  c.style = j.value("style", c.style);
  c.variant = j.value("variant", c.variant);
  c.mask = j.value("mask", c.mask);
  c.knowledge_scope = j.value("knowledge_scope", c.knowledge_scope);
  if (c.knowledge_scope != "turn" && c.knowledge_scope != "session") {
    throw ConfigError("knowledge_scope must be \"turn\" or \"session\"");
  }
  c.anon_bracketed_ids = j.value("anon_bracketed_ids", c.anon_bracketed_ids);
  c.exclude_impossible = j.value("exclude_impossible", c.exclude_impossible);
  c.seed = j.value("seed", c.seed);
  c.seed_generation = j.value("seed_generation", c.seed_generation);
  c.mock = j.value("mock", c.mock);
  if (j.contains("mock_rules")) {
    c.mock_rules = j["mock_rules"].get<std::map<std::string, std::string>>();
  }
  if (j.contains("mock_responses")) {
    c.mock_responses = j["mock_responses"].get<std::map<std::string, std::string>>();
  }
  if (c.seed_generation) c.generation.seed = static_cast<std::int64_t>(c.seed);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  json parsed;
  try {
    parsed = json::parse(io::read_file(path));
  } catch (const json::exception& ex) {
    throw ConfigError("config " + path.string() + ": " + ex.what());
  }
  return from_json(parsed);
}

// Secrets and deploy details come from the environment when present.
inline void apply_env_overrides(RunConfig& c) {
  if (const char* v = std::getenv("KGATTACH_API_KEY")) c.endpoint.api_key = v;
  if (const char* v = std::getenv("KGATTACH_BASE_URL")) c.endpoint.base_url = v;
  if (const char* v = std::getenv("KGATTACH_MODEL")) {
    c.models.generator = v;
    c.models.anonymizer = v;
    c.models.extractor = v;
    c.models.judge = v;
  }
}

inline std::string config_hash(const RunConfig& c) {
  return hex64(fnv1a64(to_json(c).dump()));
}

}  // namespace kgattach::config
