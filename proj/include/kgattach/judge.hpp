#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "kgattach/corpus.hpp"
#include "kgattach/generation.hpp"
#include "kgattach/llm_gateway.hpp"
#include "kgattach/prompts.hpp"

namespace kgattach::judge {

enum class RawChoice { A, B, Both, Invalid };
enum class Resolved { Normal, Anonymized, Tie, Invalid };

inline std::string_view raw_choice_label(RawChoice c) {
  switch (c) {
    case RawChoice::A: return "A";
    case RawChoice::B: return "B";
    case RawChoice::Both: return "Both";
    case RawChoice::Invalid: return "invalid";
  }
  return "invalid";
}

inline RawChoice raw_choice_from_label(std::string_view s) {
  if (s == "A") return RawChoice::A;
  if (s == "B") return RawChoice::B;
  if (strings::iequals(s, "Both")) return RawChoice::Both;
  return RawChoice::Invalid;
}

inline std::string_view resolved_label(Resolved r) {
  switch (r) {
    case Resolved::Normal: return "normal";
    case Resolved::Anonymized: return "anonymized";
    case Resolved::Tie: return "tie";
    case Resolved::Invalid: return "invalid";
  }
  return "invalid";
}

struct JudgeItem {
  std::string session_id;
  int turn_index = 0;
  std::string history;  // rendered, speaker-prefixed
  std::vector<corpus::Triplet> triplets;
  std::string response_normal;
  std::string response_anonymized;
  bool normal_is_a = true;  // positional assignment, seeded coin flip
};

struct JudgeVerdict {
  std::string session_id;
  int turn_index = 0;
  bool normal_is_a = true;
  RawChoice raw = RawChoice::Invalid;
  Resolved resolved = Resolved::Invalid;
};

struct PairedResponses {
  std::string session_id;
  int turn_index = 0;
  std::string history;
  std::vector<corpus::Triplet> triplets;
  std::string normal_text;
  std::string anonymized_text;
};

// Each item's A/B assignment is an independent fair coin under the run seed,
// which is what removes positional bias from the tallies.
inline std::vector<JudgeItem> build_items(const std::vector<PairedResponses>& pairs,
                                          std::uint64_t seed) {
  DeterministicRng rng(seed);
  std::vector<JudgeItem> items;
  items.reserve(pairs.size());
  for (const PairedResponses& pair : pairs) {
    JudgeItem item;
    item.session_id = pair.session_id;
    item.turn_index = pair.turn_index;
    item.history = pair.history;
    item.triplets = pair.triplets;
    item.response_normal = pair.normal_text;
    item.response_anonymized = pair.anonymized_text;
    item.normal_is_a = rng.coin();
    items.push_back(std::move(item));
  }
  return items;
}

inline std::string render_judge_prompt(const JudgeItem& item, bool reasoning_suffix = true) {
  if (item.response_normal.empty() || item.response_anonymized.empty()) {
    throw Error("judge item " + gen::request_tag(item.session_id, item.turn_index) +
                " is missing a response");
  }
  const std::string& a = item.normal_is_a ? item.response_normal : item.response_anonymized;
  const std::string& b = item.normal_is_a ? item.response_anonymized : item.response_normal;
  return prompts::render(prompts::kJudge,
                         {{"history", item.history},
                          {"knowledge_triplets", corpus::serialize_triplets(item.triplets)},
                          {"A", a},
                          {"B", b}},
                         reasoning_suffix);
}

// The last standalone A, B, or Both (case-insensitive for "both") wins.
// A and B must be uppercase; lowercase "a"/"b" are ordinary words.
inline RawChoice parse_verdict(std::string_view visible_text) {
  RawChoice last = RawChoice::Invalid;
  std::size_t i = 0;
  while (i < visible_text.size()) {
    if (!std::isalnum(static_cast<unsigned char>(visible_text[i]))) {
      ++i;
      continue;
    }
    std::size_t start = i;
    while (i < visible_text.size() &&
           std::isalnum(static_cast<unsigned char>(visible_text[i]))) {
      ++i;
    }
    std::string_view token = visible_text.substr(start, i - start);
    if (token == "A") {
      last = RawChoice::A;
    } else if (token == "B") {
      last = RawChoice::B;
    } else if (strings::iequals(token, "Both")) {
      last = RawChoice::Both;
    }
  }
  return last;
}

// Maps the positional choice back to provenance. Flipping the assignment and
// swapping A/B yields the same resolution (involution).
inline Resolved resolve(RawChoice raw, bool normal_is_a) {
  switch (raw) {
    case RawChoice::Both: return Resolved::Tie;
    case RawChoice::Invalid: return Resolved::Invalid;
    case RawChoice::A: return normal_is_a ? Resolved::Normal : Resolved::Anonymized;
    case RawChoice::B: return normal_is_a ? Resolved::Anonymized : Resolved::Normal;
  }
  return Resolved::Invalid;
}

inline JudgeVerdict make_verdict(const JudgeItem& item, std::string_view visible_text) {
  JudgeVerdict v;
  v.session_id = item.session_id;
  v.turn_index = item.turn_index;
  v.normal_is_a = item.normal_is_a;
  v.raw = parse_verdict(visible_text);
  v.resolved = resolve(v.raw, item.normal_is_a);
  return v;
}

struct Tally {
  std::size_t n_normal = 0, n_tie = 0, n_anonymized = 0, n_invalid = 0;
  double normal_pct = 0.0, tie_pct = 0.0, anonymized_pct = 0.0;  // over valid verdicts
  double invalid_pct = 0.0;                                      // over all verdicts

  std::size_t n_valid() const { return n_normal + n_tie + n_anonymized; }
  std::size_t n_total() const { return n_valid() + n_invalid; }
};

inline Tally tally(const std::vector<JudgeVerdict>& verdicts) {
  Tally t;
  for (const JudgeVerdict& v : verdicts) {
    switch (v.resolved) {
      case Resolved::Normal: ++t.n_normal; break;
      case Resolved::Tie: ++t.n_tie; break;
      case Resolved::Anonymized: ++t.n_anonymized; break;
      case Resolved::Invalid: ++t.n_invalid; break;
    }
  }
  if (t.n_valid() > 0) {
    const double valid = static_cast<double>(t.n_valid());
    t.normal_pct = 100.0 * static_cast<double>(t.n_normal) / valid;
    t.tie_pct = 100.0 * static_cast<double>(t.n_tie) / valid;
    t.anonymized_pct = 100.0 * static_cast<double>(t.n_anonymized) / valid;
  }
  if (t.n_total() > 0) {
    t.invalid_pct = 100.0 * static_cast<double>(t.n_invalid) / static_cast<double>(t.n_total());
  }
  return t;
}

namespace detail {
inline std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}
}  // namespace detail

inline std::string tally_markdown(const Tally& t, std::string_view model_id) {
  std::string out;
  out += "| Model | Normal (%) | Tie (%) | Anonymized (%) |\n";
  out += "|---|---|---|---|\n";
  out += "| " + std::string(model_id) + " | " + detail::pct(t.normal_pct) + " | " +
         detail::pct(t.tie_pct) + " | " + detail::pct(t.anonymized_pct) + " |\n";
  out += "\nInvalid verdicts: " + detail::pct(t.invalid_pct) + "% (" +
         std::to_string(t.n_invalid) + " of " + std::to_string(t.n_total()) + ")\n";
  return out;
}

inline std::string tally_csv(const Tally& t, std::string_view model_id) {
  std::string out = "model,normal_pct,tie_pct,anonymized_pct,invalid_pct,n_valid,n_total\n";
  out += std::string(model_id) + "," + detail::pct(t.normal_pct) + "," + detail::pct(t.tie_pct) +
         "," + detail::pct(t.anonymized_pct) + "," + detail::pct(t.invalid_pct) + "," +
         std::to_string(t.n_valid()) + "," + std::to_string(t.n_total()) + "\n";
  return out;
}

// ---- persistence -------------------------------------------------------------

inline json verdict_to_json(const JudgeVerdict& v) {
  return {{"session_id", v.session_id},
          {"turn_index", v.turn_index},
          {"normal_is_a", v.normal_is_a},
          {"raw", std::string(raw_choice_label(v.raw))},
          {"resolved", std::string(resolved_label(v.resolved))}};
}

inline JudgeVerdict verdict_from_json(const json& j, long line_no = 0) {
  for (const char* key : {"session_id", "turn_index", "normal_is_a", "raw"}) {
    if (!j.contains(key)) throw SchemaError(std::string("verdict missing \"") + key + "\"",
                                            line_no);
  }
  JudgeVerdict v;
  v.session_id = j["session_id"].get<std::string>();
  v.turn_index = j["turn_index"].get<int>();
  v.normal_is_a = j["normal_is_a"].get<bool>();
  v.raw = raw_choice_from_label(j["raw"].get<std::string>());
  v.resolved = resolve(v.raw, v.normal_is_a);
  return v;
}

inline void save_verdicts(const std::filesystem::path& path,
                          const std::vector<JudgeVerdict>& verdicts) {
  std::vector<json> rows;
  rows.reserve(verdicts.size());
  for (const JudgeVerdict& v : verdicts) rows.push_back(verdict_to_json(v));
  io::write_jsonl(path, rows);
}

inline std::vector<JudgeVerdict> load_verdicts(const std::filesystem::path& path) {
  std::vector<JudgeVerdict> out;
  io::for_each_jsonl(path, [&](const json& row, long line_no) {
    out.push_back(verdict_from_json(row, line_no));
  });
  return out;
}

}  // namespace kgattach::judge
