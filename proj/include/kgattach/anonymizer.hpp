#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "kgattach/corpus.hpp"
#include "kgattach/llm_gateway.hpp"
#include "kgattach/prompts.hpp"

namespace kgattach::anon {

struct MappingEntry {
  std::string anon_id;
  std::string original;
  std::string entity_type;

  bool operator==(const MappingEntry&) const = default;
};

struct EntityMapping {
  std::string session_id;
  std::vector<MappingEntry> entries;
};

// Anonymized IDs are a letter prefix plus a positive integer (F1, P2, LI1,
// Person1, ...).
inline bool valid_anon_id(std::string_view id) {
  std::size_t i = 0;
  while (i < id.size() && std::isalpha(static_cast<unsigned char>(id[i]))) ++i;
  if (i == 0 || i == id.size()) return false;
  if (id[i] == '0' && i + 1 < id.size()) return false;
  for (std::size_t j = i; j < id.size(); ++j) {
    if (!std::isdigit(static_cast<unsigned char>(id[j]))) return false;
  }
  return true;
}

inline std::string bracketed(std::string_view anon_id) {
  return "[" + std::string(anon_id) + "]";
}

struct ResidualMention {
  int turn_index = 0;
  std::string original;

  bool operator==(const ResidualMention&) const = default;
};

struct AnonymizedSession {
  corpus::Session session;
  EntityMapping mapping;
  std::vector<ResidualMention> residual_mentions;
};

// ---- prompt ----------------------------------------------------------------

inline std::string render_anon_prompt(const corpus::Session& session,
                                      bool reasoning_suffix = true) {
  if (session.turns.empty()) {
    throw Error("anonymization requires dialogue text (session \"" + session.session_id +
                "\" has no turns)");
  }
  std::string knowledge =
      session.subgraph.empty() ? std::string() : corpus::serialize_triplets(session.subgraph);
  return prompts::render(prompts::kAnonymization,
                         {{"history", corpus::render_history(session.turns)},
                          {"external_kg", std::move(knowledge)}},
                         reasoning_suffix);
}

// ---- output parsing ---------------------------------------------------------

struct AnonOutput {
  EntityMapping mapping;  // session_id filled by the caller
  std::vector<std::string> dialogue_lines;
  std::vector<corpus::Triplet> triplets;
};

namespace detail {

inline std::string strip_decorations(std::string_view cell) {
  std::string out = strings::trim(cell);
  while (out.size() >= 2 && out.front() == '*' && out.back() == '*') {
    out = strings::trim(std::string_view(out).substr(1, out.size() - 2));
  }
  return out;
}

inline bool is_table_separator(const std::vector<std::string>& cells) {
  for (const std::string& cell : cells) {
    if (cell.empty()) continue;
    for (char c : cell) {
      if (c != '-' && c != ':' && c != ' ') return false;
    }
  }
  return true;
}

inline std::vector<std::string> table_cells(std::string_view line) {
  std::string_view s = strings::trim_view(line);
  if (s.size() < 2 || s.front() != '|') return {};
  s.remove_prefix(1);
  if (!s.empty() && s.back() == '|') s.remove_suffix(1);
  std::vector<std::string> cells;
  for (const std::string& cell : strings::split(s, "|")) {
    cells.push_back(strip_decorations(cell));
  }
  return cells;
}

inline std::string strip_list_marker(std::string_view line) {
  std::string_view s = strings::trim_view(line);
  if (!s.empty() && (s.front() == '-' || s.front() == '*')) {
    s = strings::trim_view(s.substr(1));
  } else {
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) {
      s = strings::trim_view(s.substr(i + 1));
    }
  }
  return std::string(s);
}

inline std::string normalized_heading(std::string_view line) {
  std::string s = strip_list_marker(line);
  while (!s.empty() && (s.front() == '#' || s.front() == '*')) s.erase(s.begin());
  while (!s.empty() && (s.back() == ':' || s.back() == '*' || strings::is_space(s.back()))) {
    s.pop_back();
  }
  return strings::to_lower(strings::trim(s));
}

}  // namespace detail

// Extracts the mapping table, the anonymized dialogue block, and the
// anonymized triplet list. All three sections are required.
inline AnonOutput parse_anon_output(const std::string& visible_text) {
  enum class Section { None, Mapping, Dialogue, Triplets };
  Section current = Section::None;
  AnonOutput out;
  std::set<std::string> seen_ids;
  std::set<std::string> seen_originals;
  bool saw_mapping = false, saw_dialogue = false, saw_triplets = false;

  for (const std::string& raw_line : strings::split_lines(visible_text)) {
    std::string heading = detail::normalized_heading(raw_line);
    if (heading.find("mapping table") != std::string::npos) {
      current = Section::Mapping;
      saw_mapping = true;
      continue;
    }
    if (heading.find("anonymized dialogue") != std::string::npos) {
      current = Section::Dialogue;
      saw_dialogue = true;
      continue;
    }
    if (heading.find("anonymized knowledge triplets") != std::string::npos ||
        heading.find("anonymized triplets") != std::string::npos) {
      current = Section::Triplets;
      saw_triplets = true;
      continue;
    }
    std::string_view line = strings::trim_view(raw_line);
    if (line.empty()) continue;

    switch (current) {
      case Section::None:
        break;
      case Section::Mapping: {
        std::vector<std::string> cells = detail::table_cells(line);
        if (cells.empty()) break;  // prose around the table
        if (detail::is_table_separator(cells)) break;
        if (!cells.empty() && strings::iequals(cells.front(), "id")) break;  // header row
        if (cells.size() < 3) {
          throw ParseError("malformed mapping table row: " + std::string(line));
        }
        MappingEntry entry{cells[0], cells[1], cells[2]};
        if (!valid_anon_id(entry.anon_id)) {
          throw ParseError("malformed anonymized id \"" + entry.anon_id + "\"");
        }
        if (entry.original.empty()) {
          throw ParseError("mapping row with empty original entity");
        }
        if (!seen_ids.insert(entry.anon_id).second) {
          throw ParseError("duplicate anonymized id \"" + entry.anon_id + "\"");
        }
        if (!seen_originals.insert(strings::to_lower(entry.original)).second) {
          throw ParseError("duplicate original entity \"" + entry.original + "\"");
        }
        out.mapping.entries.push_back(std::move(entry));
        break;
      }
      case Section::Dialogue:
        out.dialogue_lines.push_back(detail::strip_list_marker(line));
        break;
      case Section::Triplets: {
        std::string body = detail::strip_list_marker(line);
        if (body.empty()) break;
        if (body.front() == '[') {
          json arr;
          try {
            arr = json::parse(body);
          } catch (const json::exception&) {
            throw ParseError("malformed anonymized triplet row: " + body);
          }
          if (!arr.is_array() || arr.size() != 3 || !arr[0].is_string() || !arr[1].is_string() ||
              !arr[2].is_string()) {
            throw ParseError("anonymized triplet must hold three strings: " + body);
          }
          out.triplets.push_back(
              {arr[0].get<std::string>(), arr[1].get<std::string>(), arr[2].get<std::string>()});
        } else if (body.front() == '(') {
          out.triplets.push_back(corpus::parse_triplet_line(body));
        } else {
          throw ParseError("unrecognized anonymized triplet row: " + body);
        }
        break;
      }
    }
  }

  if (!saw_mapping || out.mapping.entries.empty()) {
    throw ParseError("anonymizer output missing the mapping table section");
  }
  if (!saw_dialogue || out.dialogue_lines.empty()) {
    throw ParseError("anonymizer output missing the anonymized dialogue section");
  }
  if (!saw_triplets) {
    throw ParseError("anonymizer output missing the anonymized triplets section");
  }
  return out;
}

// ---- substitution ----------------------------------------------------------

namespace detail {

inline bool is_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c >= 128;
}

// Matching is case-insensitive and word-boundary aware: an alphanumeric needle
// edge may not touch an alphanumeric neighbor, so "GOT" never fires inside
// "forgotten".
inline bool boundary_ok(std::string_view text, std::size_t pos, std::size_t len) {
  if (len == 0) return false;
  unsigned char first = static_cast<unsigned char>(text[pos]);
  unsigned char last = static_cast<unsigned char>(text[pos + len - 1]);
  if (pos > 0 && is_word_byte(first) &&
      is_word_byte(static_cast<unsigned char>(text[pos - 1]))) {
    return false;
  }
  if (pos + len < text.size() && is_word_byte(last) &&
      is_word_byte(static_cast<unsigned char>(text[pos + len]))) {
    return false;
  }
  return true;
}

struct Needle {
  std::string lowered;
  std::string replacement;  // bracketed id, or original for reversal audits
};

// Longest-original-first keeps "Iron Man 2" from being clobbered by "Iron Man".
inline std::vector<Needle> sorted_needles(const EntityMapping& mapping,
                                          bool bracketed_ids = true) {
  std::vector<Needle> needles;
  needles.reserve(mapping.entries.size());
  for (const MappingEntry& e : mapping.entries) {
    needles.push_back({strings::to_lower(e.original),
                       bracketed_ids ? bracketed(e.anon_id) : e.anon_id});
  }
  std::sort(needles.begin(), needles.end(), [](const Needle& a, const Needle& b) {
    if (a.lowered.size() != b.lowered.size()) return a.lowered.size() > b.lowered.size();
    return a.lowered < b.lowered;
  });
  return needles;
}

inline std::string substitute_text(std::string_view text, const std::vector<Needle>& needles) {
  std::string lowered = strings::to_lower(text);
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const Needle* hit = nullptr;
    for (const Needle& needle : needles) {
      if (needle.lowered.empty() || i + needle.lowered.size() > text.size()) continue;
      if (lowered.compare(i, needle.lowered.size(), needle.lowered) == 0 &&
          boundary_ok(text, i, needle.lowered.size())) {
        hit = &needle;
        break;
      }
    }
    if (hit) {
      out += hit->replacement;
      i += hit->lowered.size();
    } else {
      out += text[i++];
    }
  }
  return out;
}

inline bool contains_mention(std::string_view text, std::string_view original) {
  std::string lowered = strings::to_lower(text);
  std::string needle = strings::to_lower(original);
  if (needle.empty()) return false;
  std::size_t pos = 0;
  while ((pos = lowered.find(needle, pos)) != std::string::npos) {
    if (boundary_ok(text, pos, needle.size())) return true;
    ++pos;
  }
  return false;
}

}  // namespace detail

inline void validate_mapping(const EntityMapping& mapping) {
  std::set<std::string> ids, originals;
  for (const MappingEntry& e : mapping.entries) {
    if (!valid_anon_id(e.anon_id)) {
      throw Error("invalid anonymized id \"" + e.anon_id + "\"");
    }
    if (!ids.insert(e.anon_id).second) throw Error("duplicate anonymized id \"" + e.anon_id + "\"");
    if (!originals.insert(strings::to_lower(e.original)).second) {
      throw Error("duplicate original \"" + e.original + "\"");
    }
  }
}

// Mechanical substitution: anonymized ids in turn texts (longest-first,
// case-insensitive) and exact whole-field replacement in triplets. The audit
// lists originals that survived in dialogue text. Ids are bracketed ("[F1]",
// the worked-example form) unless bracketed_ids is false ("Person1"-style);
// only the bracketed form supports reversal.
inline AnonymizedSession apply_mapping(const corpus::Session& session,
                                       const EntityMapping& mapping,
                                       bool bracketed_ids = true) {
  validate_mapping(mapping);
  std::vector<detail::Needle> needles = detail::sorted_needles(mapping, bracketed_ids);
  std::map<std::string, std::string> exact;
  for (const MappingEntry& e : mapping.entries) {
    exact[e.original] = bracketed_ids ? bracketed(e.anon_id) : e.anon_id;
  }

  AnonymizedSession out;
  out.mapping = mapping;
  out.mapping.session_id = session.session_id;
  out.session = session;
  for (corpus::Turn& turn : out.session.turns) {
    turn.text = detail::substitute_text(turn.text, needles);
    for (corpus::Triplet& t : turn.triplets) {
      if (auto it = exact.find(t.head); it != exact.end()) t.head = it->second;
      if (auto it = exact.find(t.tail); it != exact.end()) t.tail = it->second;
    }
    for (const MappingEntry& e : mapping.entries) {
      if (detail::contains_mention(turn.text, e.original)) {
        out.residual_mentions.push_back({turn.turn_index, e.original});
      }
    }
  }
  out.session.subgraph = corpus::build_subgraph(out.session.turns);
  return out;
}

struct UnknownAnonIdError : Error {
  explicit UnknownAnonIdError(const std::string& id)
      : Error("unknown anonymized id token \"[" + id + "]\"") {}
};

// Replaces every [id] token with its original. Tokens that look like ids but
// are not in the mapping are errors; other bracketed text passes through.
inline std::string reverse_text(std::string_view text, const EntityMapping& mapping) {
  std::map<std::string, const MappingEntry*> by_id;
  for (const MappingEntry& e : mapping.entries) by_id[e.anon_id] = &e;
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '[') {
      out += text[i++];
      continue;
    }
    std::size_t close = text.find(']', i + 1);
    if (close == std::string_view::npos) {
      out += text[i++];
      continue;
    }
    std::string token(text.substr(i + 1, close - i - 1));
    if (!valid_anon_id(token)) {
      out += text[i++];
      continue;
    }
    auto it = by_id.find(token);
    if (it == by_id.end()) throw UnknownAnonIdError(token);
    out += it->second->original;
    i = close + 1;
  }
  return out;
}

// Inverse of apply_mapping. Exact restoration holds when the audit found no
// residuals and every mention was an exact surface form.
inline corpus::Session reverse_mapping(const AnonymizedSession& anon) {
  corpus::Session out = anon.session;
  for (corpus::Turn& turn : out.turns) {
    turn.text = reverse_text(turn.text, anon.mapping);
    for (corpus::Triplet& t : turn.triplets) {
      t.head = reverse_text(t.head, anon.mapping);
      t.tail = reverse_text(t.tail, anon.mapping);
    }
  }
  out.subgraph = corpus::build_subgraph(out.turns);
  return out;
}

// Audit helper: where a restored session differs from the original (aliases
// the anonymizer normalized make reversal non-bijective).
inline std::vector<std::string> round_trip_diffs(const corpus::Session& original,
                                                 const corpus::Session& restored) {
  std::vector<std::string> diffs;
  if (original.turns.size() != restored.turns.size()) {
    diffs.push_back("turn count changed");
    return diffs;
  }
  for (std::size_t i = 0; i < original.turns.size(); ++i) {
    if (original.turns[i].text != restored.turns[i].text) {
      diffs.push_back("turn " + std::to_string(i) + " text differs (non-bijective reversal)");
    }
    if (original.turns[i].triplets != restored.turns[i].triplets) {
      diffs.push_back("turn " + std::to_string(i) + " triplets differ");
    }
  }
  return diffs;
}

// ---- half-anonymized mix -----------------------------------------------------

enum class Provenance { Normal, Anonymized };

inline std::string_view provenance_label(Provenance p) {
  return p == Provenance::Normal ? "normal" : "anonymized";
}

struct MixEntry {
  corpus::Session session;
  Provenance provenance = Provenance::Normal;
};

// Seeded 50/50 draw over session ids; odd counts round toward normal. Output
// keeps the normal corpus's session order.
inline std::vector<MixEntry> build_half_mix(const std::vector<corpus::Session>& normal,
                                            const std::vector<corpus::Session>& anonymized,
                                            std::uint64_t seed) {
  std::map<std::string, const corpus::Session*> anon_by_id;
  for (const corpus::Session& s : anonymized) anon_by_id[s.session_id] = &s;
  std::vector<std::string> ids;
  ids.reserve(normal.size());
  for (const corpus::Session& s : normal) {
    if (!anon_by_id.contains(s.session_id)) {
      throw Error("session \"" + s.session_id + "\" missing from the anonymized corpus");
    }
    ids.push_back(s.session_id);
  }
  if (anonymized.size() != normal.size()) {
    throw Error("corpora cover different session_id sets (" + std::to_string(normal.size()) +
                " vs " + std::to_string(anonymized.size()) + ")");
  }

  std::vector<std::string> order = ids;
  std::sort(order.begin(), order.end());
  DeterministicRng rng(seed);
  rng.shuffle(order);
  const std::size_t take_normal = (order.size() + 1) / 2;  // rounding toward normal
  std::set<std::string> normal_ids(order.begin(),
                                   order.begin() + static_cast<std::ptrdiff_t>(take_normal));

  std::vector<MixEntry> mix;
  mix.reserve(normal.size());
  for (const corpus::Session& s : normal) {
    if (normal_ids.contains(s.session_id)) {
      mix.push_back({s, Provenance::Normal});
    } else {
      mix.push_back({*anon_by_id.at(s.session_id), Provenance::Anonymized});
    }
  }
  return mix;
}

// ---- LLM-driven anonymization ------------------------------------------------

// Composes an anonymized session from parsed LLM output: the model's rewritten
// dialogue is used verbatim when its line count matches the session, otherwise
// mechanical substitution; triplets are always substituted mechanically.
inline AnonymizedSession compose_anonymized(const corpus::Session& session,
                                            const std::string& visible_text,
                                            bool* used_llm_dialogue = nullptr,
                                            bool bracketed_ids = true) {
  AnonOutput parsed = parse_anon_output(visible_text);
  parsed.mapping.session_id = session.session_id;
  AnonymizedSession anonymized = apply_mapping(session, parsed.mapping, bracketed_ids);

  std::vector<std::string> lines = parsed.dialogue_lines;
  bool use_llm = lines.size() == session.turns.size();
  if (use_llm) {
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::string_view line = lines[i];
      for (std::string_view label : {"user:", "assistant:", "s1:", "s2:"}) {
        if (line.size() > label.size() &&
            strings::iequals(line.substr(0, label.size()), label)) {
          line = strings::trim_view(line.substr(label.size()));
          break;
        }
      }
      anonymized.session.turns[i].text = std::string(line);
    }
    // Re-audit against the LLM's own rewriting.
    anonymized.residual_mentions.clear();
    for (const corpus::Turn& turn : anonymized.session.turns) {
      for (const MappingEntry& e : anonymized.mapping.entries) {
        if (detail::contains_mention(turn.text, e.original)) {
          anonymized.residual_mentions.push_back({turn.turn_index, e.original});
        }
      }
    }
  }
  if (used_llm_dialogue) *used_llm_dialogue = use_llm;
  return anonymized;
}

struct AnonymizeOutcome {
  std::optional<AnonymizedSession> anonymized;
  int attempts = 0;
  bool used_llm_dialogue = false;
  std::string error;  // set when the session was excluded
};

// One parse retry with the same prompt, then the session is excluded.
inline AnonymizeOutcome anonymize_session(const corpus::Session& session,
                                          const gateway::Gateway& gw,
                                          const gateway::SamplingParams& params,
                                          const std::string& model_id,
                                          bool reasoning_suffix = true) {
  gateway::LlmRequest req;
  req.prompt = render_anon_prompt(session, reasoning_suffix);
  req.params = params;
  req.model_id = model_id;
  req.tag = "anon:" + session.session_id;
  AnonymizeOutcome outcome;
  for (int attempt = 1; attempt <= 2; ++attempt) {
    outcome.attempts = attempt;
    try {
      gateway::LlmResponse resp = gw.complete(req);
      outcome.anonymized =
          compose_anonymized(session, resp.visible_text, &outcome.used_llm_dialogue);
      return outcome;
    } catch (const std::exception& ex) {
      outcome.error = ex.what();
    }
  }
  return outcome;
}

// ---- persistence -------------------------------------------------------------

inline json mapping_to_json(const EntityMapping& mapping) {
  json entries = json::array();
  for (const MappingEntry& e : mapping.entries) {
    entries.push_back(json::array({e.anon_id, e.original, e.entity_type}));
  }
  return {{"session_id", mapping.session_id}, {"entries", std::move(entries)}};
}

inline EntityMapping mapping_from_json(const json& j, long line_no = 0) {
  if (!j.contains("session_id") || !j.contains("entries") || !j["entries"].is_array()) {
    throw SchemaError("mapping row requires session_id and entries", line_no);
  }
  EntityMapping mapping;
  mapping.session_id = j["session_id"].get<std::string>();
  for (const json& row : j["entries"]) {
    if (!row.is_array() || row.size() != 3) {
      throw SchemaError("mapping entry must be [anon_id, original, type]", line_no);
    }
    mapping.entries.push_back(
        {row[0].get<std::string>(), row[1].get<std::string>(), row[2].get<std::string>()});
  }
  validate_mapping(mapping);
  return mapping;
}

inline void save_mappings(const std::filesystem::path& path,
                          const std::vector<EntityMapping>& mappings) {
  std::vector<json> rows;
  rows.reserve(mappings.size());
  for (const EntityMapping& m : mappings) rows.push_back(mapping_to_json(m));
  io::write_jsonl(path, rows);
}

inline std::vector<EntityMapping> load_mappings(const std::filesystem::path& path) {
  std::vector<EntityMapping> out;
  io::for_each_jsonl(path, [&](const json& row, long line_no) {
    out.push_back(mapping_from_json(row, line_no));
  });
  return out;
}

}  // namespace kgattach::anon
