#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "kgattach/corpus.hpp"
#include "kgattach/llm_gateway.hpp"
#include "kgattach/prompts.hpp"

namespace kgattach::gen {

enum class StyleName { Default, Detailed };

inline std::string_view style_label(StyleName s) {
  return s == StyleName::Default ? "default" : "detailed";
}

struct PromptStyle {
  StyleName name = StyleName::Default;
  std::string template_text;
  bool reasoning_suffix = true;
};

inline PromptStyle make_style(StyleName name, bool reasoning_suffix) {
  PromptStyle style;
  style.name = name;
  style.template_text = std::string(name == StyleName::Default ? prompts::kGenerationDefault
                                                               : prompts::kGenerationDetailed);
  style.reasoning_suffix = reasoning_suffix;
  return style;
}

inline PromptStyle style_from_name(std::string_view name, bool reasoning_suffix) {
  if (name == "default") return make_style(StyleName::Default, reasoning_suffix);
  if (name == "detailed") return make_style(StyleName::Detailed, reasoning_suffix);
  throw ConfigError("unknown prompt style \"" + std::string(name) + "\" (default|detailed)");
}

struct GeneratedResponse {
  std::string session_id;
  int turn_index = 0;
  std::string style;
  std::string corpus_variant;  // normal | anonymized | half
  std::string text;            // visible text, reasoning trace removed
  std::string model_id;
  bool failed = false;
  std::string error;
};

inline std::string request_tag(std::string_view session_id, int turn_index) {
  return std::string(session_id) + "#" + std::to_string(turn_index);
}

inline std::string render_prompt(const corpus::EvalUnit& unit, const PromptStyle& style) {
  return prompts::render(style.template_text,
                         {{"history", corpus::render_history(unit.history)},
                          {"external_kg", corpus::serialize_triplets(unit.triplets)}},
                         style.reasoning_suffix);
}

// One response record per unit, failures flagged in place so record counts
// always reconcile with unit counts.
inline std::vector<GeneratedResponse> generate(const std::vector<corpus::EvalUnit>& units,
                                               const PromptStyle& style,
                                               std::string_view corpus_variant,
                                               const gateway::Gateway& gw,
                                               const gateway::SamplingParams& params,
                                               std::string_view model_id) {
  std::vector<gateway::LlmRequest> requests;
  requests.reserve(units.size());
  for (const corpus::EvalUnit& unit : units) {
    gateway::LlmRequest req;
    req.prompt = render_prompt(unit, style);
    req.params = params;
    req.model_id = std::string(model_id);
    req.tag = request_tag(unit.session_id, unit.turn_index);
    requests.push_back(std::move(req));
  }

  std::vector<GeneratedResponse> out;
  out.reserve(units.size());
  auto batch = requests.empty() ? std::vector<gateway::Gateway::BatchResult>{}
                                : gw.complete_batch(requests);
  for (std::size_t i = 0; i < units.size(); ++i) {
    GeneratedResponse r;
    r.session_id = units[i].session_id;
    r.turn_index = units[i].turn_index;
    r.style = std::string(style_label(style.name));
    r.corpus_variant = std::string(corpus_variant);
    r.model_id = std::string(model_id);
    const auto& result = batch[i];
    if (!result.ok) {
      r.failed = true;
      r.error = result.error;
    } else if (result.response.malformed_reasoning) {
      r.failed = true;
      r.error = "malformed reasoning trace";
    } else if (result.response.visible_text.empty()) {
      r.failed = true;
      r.error = "empty visible text";
    } else {
      r.text = result.response.visible_text;
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline json response_to_json(const GeneratedResponse& r) {
  return {{"session_id", r.session_id}, {"turn_index", r.turn_index},
          {"style", r.style},           {"corpus_variant", r.corpus_variant},
          {"text", r.text},             {"model_id", r.model_id},
          {"failed", r.failed},         {"error", r.error}};
}

inline GeneratedResponse response_from_json(const json& j, long line_no = 0) {
  for (const char* key : {"session_id", "turn_index", "style", "corpus_variant", "text"}) {
    if (!j.contains(key)) throw SchemaError(std::string("response missing \"") + key + "\"",
                                            line_no);
  }
  GeneratedResponse r;
  r.session_id = j["session_id"].get<std::string>();
  r.turn_index = j["turn_index"].get<int>();
  r.style = j["style"].get<std::string>();
  r.corpus_variant = j["corpus_variant"].get<std::string>();
  r.text = j["text"].get<std::string>();
  r.model_id = j.value("model_id", "");
  r.failed = j.value("failed", false);
  r.error = j.value("error", "");
  return r;
}

inline void save_responses(const std::filesystem::path& path,
                           const std::vector<GeneratedResponse>& responses) {
  std::vector<json> rows;
  rows.reserve(responses.size());
  for (const GeneratedResponse& r : responses) rows.push_back(response_to_json(r));
  io::write_jsonl(path, rows);
}

inline std::vector<GeneratedResponse> load_responses(const std::filesystem::path& path) {
  std::vector<GeneratedResponse> out;
  io::for_each_jsonl(path, [&](const json& row, long line_no) {
    out.push_back(response_from_json(row, line_no));
  });
  return out;
}

// Output files are named {model}_{style}_{variant}.jsonl; model ids may
// contain path separators.
inline std::string response_file_name(std::string_view model_id, std::string_view style,
                                      std::string_view variant) {
  std::string model(model_id);
  for (char& c : model) {
    if (c == '/' || c == '\\' || c == ' ' || c == ':') c = '-';
  }
  return model + "_" + std::string(style) + "_" + std::string(variant) + ".jsonl";
}

}  // namespace kgattach::gen
