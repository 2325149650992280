#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "kgattach/anonymizer.hpp"
#include "kgattach/corpus.hpp"
#include "kgattach/kat_eval.hpp"
#include "kgattach/llm_gateway.hpp"

// Deterministic scripted backends for --mock runs. The generation rule writes
// responses in a fixed sentence grammar ("The <relation> of <head> is <tail>;")
// and the extraction rule reads the same grammar back, so an offline pipeline
// produces meaningful, reproducible scores without any model.

namespace kgattach::mockrules {

namespace detail {

inline std::vector<std::string> block_after(const std::vector<std::string>& lines,
                                            std::string_view header) {
  std::vector<std::string> block;
  bool in_block = false;
  for (const std::string& line : lines) {
    std::string_view trimmed = strings::trim_view(line);
    if (!in_block) {
      if (trimmed == header) in_block = true;
      continue;
    }
    if (trimmed.empty() || trimmed == prompts::kReasoningOpen) break;
    block.emplace_back(trimmed);
  }
  return block;
}

inline std::string find_icase(std::string_view haystack, std::string_view needle,
                              std::size_t* pos_out) {
  std::string h = strings::to_lower(haystack);
  std::string n = strings::to_lower(needle);
  std::size_t pos = h.find(n);
  if (pos_out) *pos_out = pos;
  return pos == std::string::npos ? std::string() : std::string(haystack.substr(pos, n.size()));
}

}  // namespace detail

inline std::string grounded_sentence(const corpus::Triplet& t) {
  return "The " + t.relation + " of " + t.head + " is " + t.tail + ";";
}

// Reads the Knowledge block of a generation prompt and answers with one
// grounded sentence per triplet.
inline gateway::MockBackend::Rule generation_rule() {
  return [](const gateway::LlmRequest& req) {
    std::vector<std::string> lines = strings::split_lines(req.prompt);
    std::vector<std::string> block = detail::block_after(lines, "Knowledge:");
    if (block.empty()) {
      block = detail::block_after(lines, "External Knowledge (Triplets):");
    }
    std::string out;
    for (const std::string& line : block) {
      if (line.empty() || line.front() != '(') continue;
      corpus::Triplet t = corpus::parse_triplet_line(line);
      if (!out.empty()) out += ' ';
      out += grounded_sentence(t);
    }
    return out.empty() ? std::string("I have no knowledge to share on that.") : out;
  };
}

// Answers each batched sample by searching the context for the grounded
// grammar; anything else (notably the synthetic "... is not found in the
// database" contexts) is IS_IMPOSSIBLE.
inline gateway::MockBackend::Rule extraction_rule() {
  return [](const gateway::LlmRequest& req) {
    std::vector<std::string> lines = strings::split_lines(req.prompt);
    std::string out;
    bool in_samples = false;
    for (const std::string& line : lines) {
      std::string_view trimmed = strings::trim_view(line);
      if (!in_samples) {
        if (trimmed == "Input:") in_samples = true;
        continue;
      }
      if (trimmed.empty() || trimmed == prompts::kReasoningOpen) break;
      std::vector<std::string> fields = strings::split(trimmed, kat::kFieldSep);
      if (fields.size() < 3) continue;
      const std::string& context = fields[1];
      corpus::Triplet question = corpus::parse_triplet_line(fields[2]);
      std::string answer;
      if (question.tail == kat::kMaskToken) {
        std::size_t pos = 0;
        std::string pattern = "the " + question.relation + " of " + question.head + " is ";
        detail::find_icase(context, pattern, &pos);
        if (pos != std::string::npos) {
          std::size_t start = pos + pattern.size();
          std::size_t end = context.find(';', start);
          answer = strings::trim(context.substr(start, end == std::string::npos
                                                            ? std::string::npos
                                                            : end - start));
        }
      } else if (question.head == kat::kMaskToken) {
        std::size_t pos = 0;
        std::string pattern = "the " + question.relation + " of ";
        detail::find_icase(context, pattern, &pos);
        if (pos != std::string::npos) {
          std::size_t start = pos + pattern.size();
          std::size_t end = context.find(" is ", start);
          if (end != std::string::npos) answer = strings::trim(context.substr(start, end - start));
        }
      }
      if (answer.empty()) answer = std::string(kat::kImpossibleToken);
      out += fields[0] + std::string(kat::kFieldSep) + context + std::string(kat::kFieldSep) +
             fields[2] + std::string(kat::kFieldSep) + answer + "\n";
    }
    return out;
  };
}

// Mechanically anonymizes the query's dialogue and knowledge with E1..En ids,
// emitting the three sections the parser expects.
inline gateway::MockBackend::Rule anonymizer_rule() {
  return [](const gateway::LlmRequest& req) {
    std::vector<std::string> lines = strings::split_lines(req.prompt);
    // The in-context example also has Dialogue/Knowledge blocks; only read the
    // query after the "Now, please perform..." marker.
    std::size_t query_start = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].find("perform the anonymization") != std::string::npos) query_start = i;
    }
    std::vector<std::string> dialogue;
    std::vector<corpus::Triplet> triplets;
    enum class Block { None, Dialogue, Knowledge } block = Block::None;
    for (std::size_t i = query_start; i < lines.size(); ++i) {
      std::string_view trimmed = strings::trim_view(lines[i]);
      if (trimmed == "Dialogue:") {
        block = Block::Dialogue;
        continue;
      }
      if (trimmed == "Knowledge:") {
        block = Block::Knowledge;
        continue;
      }
      if (trimmed.starts_with("---")) {
        if (block == Block::Knowledge) break;
        continue;
      }
      if (trimmed.empty()) continue;
      if (block == Block::Dialogue) {
        dialogue.emplace_back(trimmed);
      } else if (block == Block::Knowledge && trimmed.front() == '(') {
        triplets.push_back(corpus::parse_triplet_line(trimmed));
      }
    }

    anon::EntityMapping mapping;
    std::set<std::string> seen;
    int next_id = 1;
    for (const corpus::Triplet& t : triplets) {
      for (const std::string& entity : {t.head, t.tail}) {
        if (seen.insert(strings::to_lower(entity)).second) {
          mapping.entries.push_back({"E" + std::to_string(next_id++), entity, "Entity"});
        }
      }
    }

    std::string out;
    out += "Mapping Table:\n";
    out += "| ID | Original Entity | Type |\n";
    out += "|----|-----------------|------|\n";
    for (const anon::MappingEntry& e : mapping.entries) {
      out += "| " + e.anon_id + " | " + e.original + " | " + e.entity_type + " |\n";
    }
    out += "\nAnonymized Dialogue:\n";
    auto needles = anon::detail::sorted_needles(mapping);
    for (const std::string& line : dialogue) {
      out += anon::detail::substitute_text(line, needles) + "\n";
    }
    out += "\nAnonymized Knowledge Triplets:\n";
    std::map<std::string, std::string> exact;
    for (const anon::MappingEntry& e : mapping.entries) exact[e.original] = anon::bracketed(e.anon_id);
    int row = 1;
    for (const corpus::Triplet& t : triplets) {
      std::string head = exact.contains(t.head) ? exact[t.head] : t.head;
      std::string tail = exact.contains(t.tail) ? exact[t.tail] : t.tail;
      out += std::to_string(row++) + ". " +
             json::array({head, t.relation, tail}).dump() + "\n";
    }
    return out;
  };
}

// Hash of the prompt picks A/B/Both: stable across runs, varied across items.
inline gateway::MockBackend::Rule judge_rule() {
  return [](const gateway::LlmRequest& req) {
    switch (fnv1a64(req.prompt) % 3) {
      case 0: return std::string("A");
      case 1: return std::string("B");
      default: return std::string("Both");
    }
  };
}

inline gateway::MockBackend::Rule rule_for_role(std::string_view role) {
  if (role == "generator") return generation_rule();
  if (role == "extractor") return extraction_rule();
  if (role == "anonymizer") return anonymizer_rule();
  if (role == "judge") return judge_rule();
  throw ConfigError("no mock rule for role \"" + std::string(role) + "\"");
}

}  // namespace kgattach::mockrules
