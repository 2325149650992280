#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgattach/corpus.hpp"
#include "kgattach/generation.hpp"
#include "kgattach/prompts.hpp"

namespace kgattach::kat {

inline constexpr std::string_view kMaskToken = "X";
inline constexpr std::string_view kImpossibleToken = "IS_IMPOSSIBLE";
inline constexpr std::string_view kFieldSep = "|||";
inline constexpr std::string_view kAnswerSep = "@@";
inline constexpr std::size_t kBatchSize = 20;

enum class MaskSide { Tail, Head, Both };

inline MaskSide mask_side_from_name(std::string_view name) {
  if (name == "tail") return MaskSide::Tail;
  if (name == "head") return MaskSide::Head;
  if (name == "both") return MaskSide::Both;
  throw ConfigError("unknown mask side \"" + std::string(name) + "\" (tail|head|both)");
}

// One extraction question: which span of the context fills the masked slot?
struct KatItem {
  long item_id = 0;
  std::string context;  // the generated response under test
  corpus::Triplet masked_triplet;
  std::vector<std::string> gold;  // empty == designed-unanswerable
  std::string session_id;
  int turn_index = 0;
  bool generation_failed = false;

  bool designed_unanswerable() const { return gold.empty(); }
};

struct KatPrediction {
  long item_id = 0;
  std::vector<std::string> candidates;
  bool impossible = false;
  bool parse_ok = true;
};

struct KatScore {
  long item_id = 0;
  double f1 = 0.0;
  bool counted_impossible = false;
  bool parse_failed = false;
};

// f1 values are percentages (x100, paper scale); the two rates are fractions.
struct AggregateReport {
  double f1_per_turn = 0.0;     // micro: mean over per-turn scores
  double f1_per_session = 0.0;  // macro: mean over per-session means
  double impossible_rate = 0.0;
  double parse_failure_rate = 0.0;
  std::size_t n_turns = 0;
  std::size_t n_sessions = 0;
  std::size_t n_items = 0;
  std::size_t n_failed_generations = 0;
};

// ---- SQuAD-style scoring --------------------------------------------------

inline bool is_ascii_punct(char c) {
  constexpr std::string_view punct = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
  return punct.find(c) != std::string_view::npos;
}

// SQuAD answer normalization: lowercase, strip punctuation, drop the articles
// a/an/the as whole tokens, collapse whitespace.
inline std::string normalize_answer(std::string_view s) {
  std::string cleaned;
  cleaned.reserve(s.size());
  for (char c : s) {
    unsigned char u = static_cast<unsigned char>(c);
    if (u < 128) {
      if (is_ascii_punct(c)) continue;
      cleaned += static_cast<char>(std::tolower(u));
    } else {
      cleaned += c;
    }
  }
  std::string out;
  std::size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && strings::is_space(cleaned[i])) ++i;
    std::size_t start = i;
    while (i < cleaned.size() && !strings::is_space(cleaned[i])) ++i;
    if (i == start) break;
    std::string_view token(cleaned.data() + start, i - start);
    if (token == "a" || token == "an" || token == "the") continue;
    if (!out.empty()) out += ' ';
    out += token;
  }
  return out;
}

inline std::vector<std::string> normalized_tokens(std::string_view s) {
  std::string norm = normalize_answer(s);
  if (norm.empty()) return {};
  return strings::split(norm, " ");
}

// Token-multiset F1 between prediction and gold. Both empty -> 1, exactly one
// empty -> 0 (SQuAD no-answer convention).
inline double token_f1(std::string_view pred, std::string_view gold) {
  std::vector<std::string> p = normalized_tokens(pred);
  std::vector<std::string> g = normalized_tokens(gold);
  if (p.empty() || g.empty()) return (p.empty() && g.empty()) ? 1.0 : 0.0;
  std::map<std::string, int> gold_counts;
  for (const std::string& t : g) ++gold_counts[t];
  int same = 0;
  for (const std::string& t : p) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++same;
    }
  }
  if (same == 0) return 0.0;
  double precision = static_cast<double>(same) / static_cast<double>(p.size());
  double recall = static_cast<double>(same) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

// ---- item construction ----------------------------------------------------

inline KatItem make_masked_item(const corpus::Triplet& t, bool mask_tail) {
  KatItem item;
  if (mask_tail) {
    item.masked_triplet = {t.head, t.relation, std::string(kMaskToken)};
    item.gold = {t.tail};
  } else {
    item.masked_triplet = {std::string(kMaskToken), t.relation, t.tail};
    item.gold = {t.head};
  }
  return item;
}

// One item per (response, triplet) pair; the response text is the extraction
// context. Failed generations keep their items (empty context, scored 0) so
// counts reconcile.
inline std::vector<KatItem> build_items(const std::vector<gen::GeneratedResponse>& responses,
                                        const std::vector<corpus::EvalUnit>& units,
                                        MaskSide mask = MaskSide::Tail) {
  std::map<std::pair<std::string, int>, const corpus::EvalUnit*> by_key;
  for (const corpus::EvalUnit& unit : units) {
    by_key[{unit.session_id, unit.turn_index}] = &unit;
  }
  std::vector<KatItem> items;
  long next_id = 1;
  for (const gen::GeneratedResponse& response : responses) {
    auto it = by_key.find({response.session_id, response.turn_index});
    if (it == by_key.end()) {
      throw Error("no eval unit for response " +
                  gen::request_tag(response.session_id, response.turn_index));
    }
    for (const corpus::Triplet& t : it->second->triplets) {
      for (bool mask_tail : mask == MaskSide::Tail   ? std::vector<bool>{true}
                            : mask == MaskSide::Head ? std::vector<bool>{false}
                                                     : std::vector<bool>{true, false}) {
        KatItem item = make_masked_item(t, mask_tail);
        item.item_id = next_id++;
        item.context = response.failed ? "" : response.text;
        item.generation_failed = response.failed;
        item.session_id = response.session_id;
        item.turn_index = response.turn_index;
        items.push_back(std::move(item));
      }
    }
  }
  return items;
}

// Synthetic unanswerable set: the context names the would-be answer but in a
// sentence the triplet cannot attach to, so the only correct extraction
// verdict is IS_IMPOSSIBLE.
inline std::vector<KatItem> build_synthetic(const std::vector<corpus::Triplet>& triplets) {
  std::vector<KatItem> items;
  items.reserve(triplets.size());
  long next_id = 1;
  for (const corpus::Triplet& t : triplets) {
    if (strings::trim_view(t.tail).empty()) throw Error("build_synthetic: empty gold entity");
    KatItem item = make_masked_item(t, /*mask_tail=*/true);
    item.gold.clear();  // designed-unanswerable
    item.context = t.tail + " is not found in the database";
    item.session_id = "synthetic";
    item.turn_index = static_cast<int>(next_id - 1);
    item.item_id = next_id++;
    items.push_back(std::move(item));
  }
  return items;
}

// ---- batch wire format ----------------------------------------------------

// Sample fields ride a |||-delimited single-line grammar; embedded newlines
// become spaces and literal ||| is defused to "| | |".
inline std::string sanitize_field(std::string_view s) {
  std::string flat = strings::collapse_to_single_line(s);
  return strings::replace_all(std::move(flat), kFieldSep, "| | |");
}

inline std::string render_kat_sample_line(const KatItem& item) {
  return std::to_string(item.item_id) + std::string(kFieldSep) + sanitize_field(item.context) +
         std::string(kFieldSep) + sanitize_field(corpus::serialize_triplet(item.masked_triplet));
}

inline std::string render_kat_batch(std::span<const KatItem> items,
                                    bool reasoning_suffix = true) {
  if (items.empty() || items.size() > kBatchSize) {
    throw Error("kat batch must hold 1.." + std::to_string(kBatchSize) + " items, got " +
                std::to_string(items.size()));
  }
  std::string samples;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) samples += '\n';
    samples += render_kat_sample_line(items[i]);
  }
  return prompts::render(prompts::kKatExtraction,
                         {{"n", std::to_string(items.size())}, {"samples", samples}},
                         reasoning_suffix);
}

// Recovers one prediction per expected id from extractor output. Nothing
// throws: malformed lines, missing ids, duplicates and strays all degrade to
// parse_ok=false predictions or warnings.
inline std::vector<KatPrediction> parse_kat_batch(std::string_view visible_text,
                                                  const std::vector<long>& expected_ids,
                                                  std::vector<std::string>* warnings = nullptr) {
  auto warn = [&](std::string msg) {
    if (warnings) warnings->push_back(std::move(msg));
  };
  std::map<long, KatPrediction> found;
  std::set<long> expected(expected_ids.begin(), expected_ids.end());
  for (const std::string& raw_line : strings::split_lines(visible_text)) {
    std::string_view line = strings::trim_view(raw_line);
    if (line.empty()) continue;
    std::vector<std::string> fields = strings::split(line, kFieldSep);
    if (fields.size() < 4) continue;  // chatter or echoed instructions
    std::string id_text = strings::trim(fields.front());
    long id = 0;
    auto [ptr, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
    if (ec != std::errc() || ptr != id_text.data() + id_text.size()) {
      warn("unparseable id in line: " + std::string(line.substr(0, 80)));
      continue;
    }
    if (!expected.contains(id)) {
      warn("unexpected id " + std::to_string(id) + " ignored");
      continue;
    }
    if (found.contains(id)) {
      warn("duplicate id " + std::to_string(id) + " ignored (first occurrence wins)");
      continue;
    }
    KatPrediction pred;
    pred.item_id = id;
    std::string answer = strings::trim(fields.back());
    if (strings::iequals(answer, kImpossibleToken)) {
      pred.impossible = true;
    } else {
      for (const std::string& part : strings::split(answer, kAnswerSep)) {
        std::string candidate = strings::trim(part);
        if (!candidate.empty()) pred.candidates.push_back(std::move(candidate));
      }
      if (pred.candidates.empty()) pred.parse_ok = false;  // line present, answer unusable
    }
    found.emplace(id, std::move(pred));
  }
  std::vector<KatPrediction> out;
  out.reserve(expected_ids.size());
  for (long id : expected_ids) {
    auto it = found.find(id);
    if (it != found.end()) {
      out.push_back(std::move(it->second));
    } else {
      warn("no output line for id " + std::to_string(id));
      KatPrediction missing;
      missing.item_id = id;
      missing.parse_ok = false;
      out.push_back(std::move(missing));
    }
  }
  return out;
}

// ---- scoring and aggregation ----------------------------------------------

inline KatScore score_item(const KatItem& item, const KatPrediction& pred) {
  if (item.item_id != pred.item_id) {
    throw Error("score_item: id mismatch (" + std::to_string(item.item_id) + " vs " +
                std::to_string(pred.item_id) + ")");
  }
  KatScore score;
  score.item_id = item.item_id;
  score.parse_failed = !pred.parse_ok;
  score.counted_impossible = pred.impossible;
  if (item.designed_unanswerable()) {
    // Correctness here is the impossible-flag match, not span overlap.
    score.f1 = pred.impossible ? 1.0 : 0.0;
    return score;
  }
  if (!pred.parse_ok || pred.impossible || pred.candidates.empty()) return score;
  double best = 0.0;
  for (const std::string& candidate : pred.candidates) {
    for (const std::string& gold : item.gold) {
      best = std::max(best, token_f1(candidate, gold));
    }
  }
  score.f1 = best;
  return score;
}

inline std::vector<KatScore> score_all(const std::vector<KatItem>& items,
                                       const std::vector<KatPrediction>& preds) {
  if (items.size() != preds.size()) throw Error("score_all: item/prediction count mismatch");
  std::vector<KatScore> scores;
  scores.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    scores.push_back(score_item(items[i], preds[i]));
  }
  return scores;
}

// Micro = mean over turns (a turn's score is the mean of its items); macro =
// mean over per-session means. When exclude_impossible is set, items the
// extractor flagged impossible are dropped from the F1 means (they still count
// toward impossible_rate).
inline AggregateReport aggregate(const std::vector<KatItem>& items,
                                 const std::vector<KatScore>& scores,
                                 bool exclude_impossible = false) {
  std::map<long, const KatItem*> by_id;
  for (const KatItem& item : items) by_id[item.item_id] = &item;

  std::map<std::pair<std::string, int>, std::vector<double>> turn_scores;
  AggregateReport report;
  report.n_items = scores.size();
  for (const KatScore& score : scores) {
    auto it = by_id.find(score.item_id);
    if (it == by_id.end()) {
      throw Error("aggregate: unmapped item " + std::to_string(score.item_id));
    }
    const KatItem& item = *it->second;
    if (score.counted_impossible) report.impossible_rate += 1.0;
    if (score.parse_failed) report.parse_failure_rate += 1.0;
    if (item.generation_failed) ++report.n_failed_generations;
    if (exclude_impossible && score.counted_impossible) continue;
    turn_scores[{item.session_id, item.turn_index}].push_back(score.f1);
  }
  if (report.n_items > 0) {
    report.impossible_rate /= static_cast<double>(report.n_items);
    report.parse_failure_rate /= static_cast<double>(report.n_items);
  }

  std::map<std::string, std::vector<double>> session_turn_means;
  double micro_sum = 0.0;
  for (const auto& [key, values] : turn_scores) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    micro_sum += mean;
    session_turn_means[key.first].push_back(mean);
  }
  report.n_turns = turn_scores.size();
  report.n_sessions = session_turn_means.size();
  if (report.n_turns > 0) {
    report.f1_per_turn = 100.0 * micro_sum / static_cast<double>(report.n_turns);
  }
  if (report.n_sessions > 0) {
    double macro_sum = 0.0;
    for (const auto& [session_id, means] : session_turn_means) {
      double mean = 0.0;
      for (double v : means) mean += v;
      macro_sum += mean / static_cast<double>(means.size());
    }
    report.f1_per_session = 100.0 * macro_sum / static_cast<double>(report.n_sessions);
  }
  return report;
}

// Robustness on the designed-unanswerable set, Table-3 style. Percentages;
// imp + fp + parse_failure always total 100.
struct RobustnessReport {
  double imp_rate = 0.0;
  double fp_rate = 0.0;
  double parse_failure_rate = 0.0;
  std::size_t n_items = 0;
};

inline RobustnessReport robustness_report(const std::vector<KatItem>& items,
                                          const std::vector<KatPrediction>& preds) {
  if (items.size() != preds.size()) {
    throw Error("robustness_report: item/prediction count mismatch");
  }
  RobustnessReport report;
  report.n_items = items.size();
  std::size_t imp = 0, fp = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].designed_unanswerable()) {
      throw Error("robustness_report: answerable item " + std::to_string(items[i].item_id));
    }
    if (preds[i].impossible) {
      ++imp;
    } else if (preds[i].parse_ok && !preds[i].candidates.empty()) {
      ++fp;
    }
  }
  if (report.n_items > 0) {
    const double n = static_cast<double>(report.n_items);
    report.imp_rate = 100.0 * static_cast<double>(imp) / n;
    report.fp_rate = 100.0 * static_cast<double>(fp) / n;
    report.parse_failure_rate = 100.0 - report.imp_rate - report.fp_rate;
  }
  return report;
}

// ---- persistence ----------------------------------------------------------

inline json item_to_json(const KatItem& item) {
  return {{"item_id", item.item_id},
          {"context", item.context},
          {"masked_triplet", corpus::triplet_to_json(item.masked_triplet)},
          {"gold", item.gold},
          {"session_id", item.session_id},
          {"turn_index", item.turn_index},
          {"generation_failed", item.generation_failed}};
}

inline KatItem item_from_json(const json& j, long line_no = 0) {
  for (const char* key : {"item_id", "context", "masked_triplet", "gold", "session_id"}) {
    if (!j.contains(key)) {
      throw SchemaError(std::string("kat item missing \"") + key + "\"", line_no);
    }
  }
  KatItem item;
  item.item_id = j["item_id"].get<long>();
  item.context = j["context"].get<std::string>();
  const json& mt = j["masked_triplet"];
  if (!mt.is_array() || mt.size() != 3) {
    throw SchemaError("masked_triplet must be a 3-element array", line_no);
  }
  item.masked_triplet = {mt[0].get<std::string>(), mt[1].get<std::string>(),
                         mt[2].get<std::string>()};
  item.gold = j["gold"].get<std::vector<std::string>>();
  item.session_id = j["session_id"].get<std::string>();
  item.turn_index = j.value("turn_index", 0);
  item.generation_failed = j.value("generation_failed", false);
  return item;
}

inline void save_items(const std::filesystem::path& path, const std::vector<KatItem>& items) {
  std::vector<json> rows;
  rows.reserve(items.size());
  for (const KatItem& item : items) rows.push_back(item_to_json(item));
  io::write_jsonl(path, rows);
}

inline std::vector<KatItem> load_items(const std::filesystem::path& path) {
  std::vector<KatItem> items;
  io::for_each_jsonl(path,
                     [&](const json& row, long line_no) { items.push_back(item_from_json(row, line_no)); });
  return items;
}

inline json score_row_to_json(const KatItem& item, const KatScore& score) {
  return {{"item_id", score.item_id},
          {"session_id", item.session_id},
          {"turn_index", item.turn_index},
          {"f1", score.f1},
          {"impossible", score.counted_impossible},
          {"parse_ok", !score.parse_failed}};
}

inline json report_to_json(const AggregateReport& r) {
  return {{"f1_per_turn", r.f1_per_turn},
          {"f1_per_session", r.f1_per_session},
          {"impossible_rate", r.impossible_rate},
          {"parse_failure_rate", r.parse_failure_rate},
          {"n_turns", r.n_turns},
          {"n_sessions", r.n_sessions},
          {"n_items", r.n_items},
          {"n_failed_generations", r.n_failed_generations}};
}

inline AggregateReport report_from_json(const json& j) {
  AggregateReport r;
  r.f1_per_turn = j.value("f1_per_turn", 0.0);
  r.f1_per_session = j.value("f1_per_session", 0.0);
  r.impossible_rate = j.value("impossible_rate", 0.0);
  r.parse_failure_rate = j.value("parse_failure_rate", 0.0);
  r.n_turns = j.value("n_turns", std::size_t{0});
  r.n_sessions = j.value("n_sessions", std::size_t{0});
  r.n_items = j.value("n_items", std::size_t{0});
  r.n_failed_generations = j.value("n_failed_generations", std::size_t{0});
  return r;
}

}  // namespace kgattach::kat
