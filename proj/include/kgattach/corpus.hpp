#pragma once

#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgattach/common.hpp"

namespace kgattach::corpus {

// One knowledge fact in canonical (head, relation, tail) form.
struct Triplet {
  std::string head;
  std::string relation;
  std::string tail;

  bool operator==(const Triplet&) const = default;
  auto operator<=>(const Triplet&) const = default;
};

enum class Speaker { User, Assistant };

inline std::string_view speaker_label(Speaker s) {
  return s == Speaker::User ? "user" : "assistant";
}

inline Speaker parse_speaker(std::string_view s, long line_no = 0) {
  if (s == "user") return Speaker::User;
  if (s == "assistant") return Speaker::Assistant;
  throw SchemaError("speaker must be \"user\" or \"assistant\", got \"" + std::string(s) + "\"",
                    line_no);
}

struct Turn {
  std::string session_id;
  int turn_index = 0;  // 0-based, contiguous within a session
  Speaker speaker = Speaker::User;
  std::string text;
  std::vector<Triplet> triplets;

  bool operator==(const Turn&) const = default;
};

struct Session {
  std::string session_id;
  std::vector<Turn> turns;
  // Deduplicated union of all turn triplets, in first-appearance order.
  std::vector<Triplet> subgraph;

  bool operator==(const Session&) const = default;
};

// One scoring unit: an assistant turn with at least one annotated triplet,
// plus everything said before it.
struct EvalUnit {
  std::string session_id;
  int turn_index = 0;
  std::vector<Turn> history;  // all turns strictly before turn_index
  Turn target_turn;
  std::vector<Triplet> triplets;
};

inline void validate_triplet(const Triplet& t, long line_no = 0) {
  if (strings::trim_view(t.head).empty() || strings::trim_view(t.relation).empty() ||
      strings::trim_view(t.tail).empty()) {
    throw SchemaError("triplet fields must be non-empty after trimming", line_no);
  }
}

inline std::vector<Triplet> build_subgraph(const std::vector<Turn>& turns) {
  std::vector<Triplet> subgraph;
  std::set<Triplet> seen;
  for (const Turn& turn : turns) {
    for (const Triplet& t : turn.triplets) {
      if (seen.insert(t).second) subgraph.push_back(t);
    }
  }
  return subgraph;
}

inline json triplet_to_json(const Triplet& t) {
  return json::array({t.head, t.relation, t.tail});
}

inline Triplet triplet_from_json(const json& j, long line_no = 0) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_string() || !j[1].is_string() ||
      !j[2].is_string()) {
    throw SchemaError("triplet must be a [head, relation, tail] string array", line_no);
  }
  Triplet t{j[0].get<std::string>(), j[1].get<std::string>(), j[2].get<std::string>()};
  validate_triplet(t, line_no);
  return t;
}

inline json session_to_json(const Session& s) {
  json turns = json::array();
  for (const Turn& turn : s.turns) {
    json triplets = json::array();
    for (const Triplet& t : turn.triplets) triplets.push_back(triplet_to_json(t));
    turns.push_back({{"speaker", std::string(speaker_label(turn.speaker))},
                     {"text", turn.text},
                     {"triplets", std::move(triplets)}});
  }
  return {{"session_id", s.session_id}, {"turns", std::move(turns)}};
}

inline Session session_from_json(const json& j, long line_no = 0) {
  if (!j.is_object() || !j.contains("session_id") || !j["session_id"].is_string()) {
    throw SchemaError("session object requires a string \"session_id\"", line_no);
  }
  if (!j.contains("turns") || !j["turns"].is_array()) {
    throw SchemaError("session object requires a \"turns\" array", line_no);
  }
  Session s;
  s.session_id = j["session_id"].get<std::string>();
  if (strings::trim_view(s.session_id).empty()) {
    throw SchemaError("session_id must be non-empty", line_no);
  }
  int index = 0;
  for (const json& tj : j["turns"]) {
    if (!tj.is_object() || !tj.contains("speaker") || !tj["speaker"].is_string() ||
        !tj.contains("text") || !tj["text"].is_string()) {
      throw SchemaError("turn requires string \"speaker\" and \"text\"", line_no);
    }
    Turn turn;
    turn.session_id = s.session_id;
    turn.turn_index = index++;
    turn.speaker = parse_speaker(tj["speaker"].get<std::string>(), line_no);
    turn.text = tj["text"].get<std::string>();
    if (tj.contains("triplets")) {
      if (!tj["triplets"].is_array()) throw SchemaError("\"triplets\" must be an array", line_no);
      for (const json& trip : tj["triplets"]) {
        turn.triplets.push_back(triplet_from_json(trip, line_no));
      }
    }
    s.turns.push_back(std::move(turn));
  }
  s.subgraph = build_subgraph(s.turns);
  return s;
}

// Loads a JSONL corpus (one session per line). Rejects duplicate session_ids
// and schema violations, naming the offending line.
inline std::vector<Session> load_corpus(const std::filesystem::path& path) {
  std::vector<Session> sessions;
  std::set<std::string> ids;
  io::for_each_jsonl(path, [&](const json& row, long line_no) {
    Session s = session_from_json(row, line_no);
    if (!ids.insert(s.session_id).second) {
      throw SchemaError("duplicate session_id \"" + s.session_id + "\"", line_no);
    }
    sessions.push_back(std::move(s));
  });
  return sessions;
}

inline void save_corpus(const std::filesystem::path& path, const std::vector<Session>& sessions) {
  std::vector<json> rows;
  rows.reserve(sessions.size());
  for (const Session& s : sessions) rows.push_back(session_to_json(s));
  io::write_jsonl(path, rows);
}

// One EvalUnit per assistant turn carrying at least one triplet. Turns without
// knowledge are filtered silently; callers report counts.
inline std::vector<EvalUnit> segment(const std::vector<Session>& sessions) {
  std::vector<EvalUnit> units;
  for (const Session& session : sessions) {
    for (std::size_t i = 0; i < session.turns.size(); ++i) {
      const Turn& turn = session.turns[i];
      if (turn.speaker != Speaker::Assistant || turn.triplets.empty()) continue;
      EvalUnit unit;
      unit.session_id = session.session_id;
      unit.turn_index = turn.turn_index;
      unit.history.assign(session.turns.begin(),
                          session.turns.begin() + static_cast<std::ptrdiff_t>(i));
      unit.target_turn = turn;
      unit.triplets = turn.triplets;
      units.push_back(std::move(unit));
    }
  }
  return units;
}

inline std::string serialize_triplet(const Triplet& t) {
  return "(" + t.head + ", " + t.relation + ", " + t.tail + ")";
}

// Canonical prompt form: one "(e1, r, e2)" per line, input order preserved.
inline std::string serialize_triplets(std::span<const Triplet> triplets) {
  if (triplets.empty()) throw Error("serialize_triplets: empty triplet list");
  std::string out;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    if (i) out += '\n';
    out += serialize_triplet(triplets[i]);
  }
  return out;
}

inline std::string serialize_triplets(const std::vector<Triplet>& triplets) {
  return serialize_triplets(std::span<const Triplet>(triplets));
}

// Inverse of serialize_triplet for a single line. The first two comma-splits
// are head and relation; everything after the second comma belongs to the tail
// (tails may contain commas verbatim).
inline Triplet parse_triplet_line(std::string_view line) {
  std::string_view s = strings::trim_view(line);
  if (s.size() < 2 || s.front() != '(' || s.back() != ')') {
    throw ParseError("triplet line must be parenthesized: " + std::string(line));
  }
  s = s.substr(1, s.size() - 2);
  std::size_t first = s.find(", ");
  if (first == std::string_view::npos) throw ParseError("triplet line missing relation");
  std::size_t second = s.find(", ", first + 2);
  if (second == std::string_view::npos) throw ParseError("triplet line missing tail");
  Triplet t{std::string(s.substr(0, first)), std::string(s.substr(first + 2, second - first - 2)),
            std::string(s.substr(second + 2))};
  validate_triplet(t);
  return t;
}

// Speaker-prefixed rendering used by every {history} prompt slot.
inline std::string render_history(std::span<const Turn> turns) {
  std::string out;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    if (i) out += '\n';
    out += speaker_label(turns[i].speaker);
    out += ": ";
    out += turns[i].text;
  }
  return out;
}

inline std::string render_history(const std::vector<Turn>& turns) {
  return render_history(std::span<const Turn>(turns));
}

}  // namespace kgattach::corpus
