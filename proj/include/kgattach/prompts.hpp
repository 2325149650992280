#pragma once

#include <map>
#include <string>
#include <string_view>

#include "kgattach/common.hpp"

namespace kgattach::prompts {

// Prompt templates. {slot} placeholders are filled by fill(); each template
// ends with the reasoning-open marker, dropped for non-reasoning models.

inline constexpr std::string_view kReasoningOpen = "<think>";
inline constexpr std::string_view kReasoningClose = "</think>";

inline constexpr std::string_view kGenerationDefault =
    R"PROMPT(You are an expert dialogue agent. Use the provided conversation history and external knowledge (as triplets) to generate a precise, fact-based reply. The response should not be longer than 2-3 sentences. Remember to stick to the knowledge.

History:
{history}

Knowledge:
{external_kg}

<think>)PROMPT";

inline constexpr std::string_view kGenerationDetailed =
    R"PROMPT(You are a concise dialogue agent. Your task is to generate a short, precise, and fact-based response grounded strictly in the provided external knowledge, which is given in the form of structured triplets. Use the conversation history to understand the context, but only use facts that are directly supported by the external knowledge when forming your reply. Do not infer any information not explicitly present in the external knowledge.

Guidelines:

- Limit your response to 2-3 sentences.
- Use clear and factual language.
- Do not invent or speculate beyond the given knowledge.
- You may rephrase or combine knowledge triplets for naturalness, but do not introduce new facts.

Conversation History:
{history}

External Knowledge (Triplets):
{external_kg}

<think>)PROMPT";

// Batch extraction prompt. {n} is the instance count (20 for full batches; the
// final batch of a run may hold fewer). Two lines end in a significant trailing
// space, hence the escaped concatenation instead of a raw literal.
inline constexpr std::string_view kKatExtraction =
    "Your task is to extract, similar to the SQuAD V2 dataset, from the provided context that"
    " fills triplets. The triplets are of format (Subject, predicate, Object) in which either"
    " Subject or Object is missing. I use X instead of missing Subject or Object in the"
    " triplet, you need to extract the appropriate values for the X from the context. Each"
    " extracted answer must be an exact substring from the context. If there are multiple"
    " valid answers, separate them with @@. If no answer exists in the context, output"
    " IS_IMPOSSIBLE.\x20\n"
    "\n"
    "\n"
    "Input Structure: The input is given in the following format: ID|||context|||triplet\n"
    "There are {n} instances that you should response to.\x20\n"
    "\n"
    "Output Format: The final output should follow this format:"
    " ID|||context|||triplet|||answer_1@@answer_2@@answer_3 Replace"
    " answer_1@@answer_2@@answer_3 with the actual answers found, or IS_IMPOSSIBLE if none are"
    " found. You should output {n} lines.\n"
    "\n"
    "Input:\n"
    "{samples}\n"
    "\n"
    "<think>";

inline constexpr std::string_view kAnonymization =
    R"PROMPT(You are provided with a dialogue containing references to teams, people, locations, and literary influences, along with a set of related knowledge triplets. Your task is to anonymize the dialogue and the knowledge by replacing all real-world names with anonymized entity identifiers that include both a type (e.g., Team, Person, Place, LiteraryInfluence) and an ID. Be sure to create a clear mapping table, update all occurrences in the dialogue, and replace entries in the knowledge triplets accordingly.

Instructions:
1. Mapping Table:
   - First, scan the dialogue and the knowledge triplets to identify all unique entities (e.g., team names, person names, places, literary influences).
   - For each entity, define:
     - An anonymized ID. For example:
       - Films: F1, F2, ...
       - Teams: T1, T2, ...
       - People: P1, P2, ...
       - Places: L1, L2, ...
       - Literary Influences or Authors: LI1, LI2, ...
     - Its type (Team, Person, Place, LiteraryInfluence, Film, etc).
   - Create a mapping table that shows each entity's original name, its anonymized ID, and its type.

2. Anonymize the Dialogue:
   - Replace every occurrence of a real-world entity in the dialogue with its corresponding anonymized ID.
   - Ensure that informal or abbreviated references (if any) are also mapped correctly.

3. Anonymize the Knowledge Triplets:
   - For each knowledge triplet, replace each entity with its corresponding anonymized ID based on the mapping table.

4. Output Format:
   - Mapping Table: Present as a clear table with columns for ID, Original Entity, and Type.
   - Anonymized Dialogue: Provide the full dialogue with entity mentions replaced by their anonymized IDs.
   - Anonymized Knowledge Triplets: List the anonymized triplets exactly as in the original input, but with IDs in place of the original entity names.

Example In-Context (from a previous task):

Mapping Table Example:
| **ID** | **Original Entity**                   | **Type**  |
|--------|---------------------------------------|-----------|
| F1     | Iron Man                              | Film      |
| P1     | Robert Downey Jr.                     | Person    |
| F2     | Zodiac (Crime Fiction Film)           | Film      |
| P2     | Jake Gyllenhaal                       | Person    |
| F3     | End of Watch                          | Film      |
| P3     | David Ayer                            | Person    |
| G1     | Thriller                              | Genre     |
| G2     | Crime Fiction                         | Genre     |

Anonymized Dialogue Example:
- S1: Do you like [F1]?
- S2: Sure do! [P1] is a favorite.
- S1: Yes, I like him too. Did you know he also was in [F2], a [G2] film?
- S2: I like [G2]! Didn't know [P1] was in there. [P2] starred as well.
- S1: So he did? He also starred in [F3]. Have you ever seen that movie?
- S2: Yes, I have! I like films directed by [P3]. How about you?
- S1: I have not. What genre is [F3]?
- S2: It's a [G1] and [G2] film as well.
- S1: I will make sure to check it out. I like [G1] films. Thank you!
- S2: Welcome!

Anonymized Knowledge Triplets Example:
1. ["[F1]", "starred_actors", "[P1]"]
2. ["[F2]", "starred_actors", "[P1]"]
3. ["[F2]", "starred_actors", "[P2]"]
4. ["[F3]", "~starred_actors", "[P2]"]
5. ["[F3]", "written_by", "[P3]"]
6. ["[F3]", "has_genre", "[G1]"]

Now, please perform the anonymization for the following query:

------------------------------
Dialogue:
{history}

Knowledge:
{external_kg}
------------------------------

Ensure that your final output includes:
- A Mapping Table with all identified entities, their anonymized IDs, and their types.
- The complete dialogue with anonymized entities.
- The knowledge triplets with all entities replaced by their anonymized IDs.

<think>)PROMPT";

inline constexpr std::string_view kJudge =
    R"PROMPT(You are a high-precision quality assessment agent. Your task is to evaluate two candidate responses (Option A and Option B) and determine which one is the superior choice--or whether both are equally valid--based on the conversation history and structured external knowledge provided as triplets.

Follow these steps carefully:
    1. Understand the Context: Read the full conversation history to understand the dialogue intent, user queries, and tone.
    2. Analyze the Knowledge: Examine the knowledge triplets, each in the format (subject, predicate, object). Use them to fact-check and assess alignment with each option.
    3. Evaluate Each Option:
        - Check for factual correctness based on the triplets.
        - Make sure of the point that the response does not utilize any additional information/assumptions that is not provided in the context.
    4. Make a Decision:
        - Choose A if Option A is better in using knowledge triplets.
        - Choose B if Option B is better in using knowledge triplets.
        - Choose Both if both are equally valid in using knowledge triplets.

Only output one of the following as your final decision: A, B, or Both. Just provide the final decision.

Conversation History:
{history}

Knowledge Triplets:
{knowledge_triplets}

Candidate Responses:
A: {A}

B: {B}
<think>)PROMPT";

struct UnresolvedSlotError : Error {
  explicit UnresolvedSlotError(const std::string& slot)
      : Error("unresolved template slot {" + slot + "}") {}
};

// Replaces every {name} placeholder with its value. A placeholder without a
// value throws; braces in the filled values are never re-scanned.
inline std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    char c = tmpl[pos];
    if (c != '{') {
      out += c;
      ++pos;
      continue;
    }
    std::size_t end = pos + 1;
    while (end < tmpl.size() &&
           (std::isalnum(static_cast<unsigned char>(tmpl[end])) || tmpl[end] == '_')) {
      ++end;
    }
    if (end < tmpl.size() && tmpl[end] == '}' && end > pos + 1) {
      std::string name(tmpl.substr(pos + 1, end - pos - 1));
      auto it = slots.find(name);
      if (it == slots.end()) throw UnresolvedSlotError(name);
      out += it->second;
      pos = end + 1;
    } else {
      out += c;
      ++pos;
    }
  }
  return out;
}

// Drops the trailing reasoning-open marker (and the blank line before it) for
// models prompted without a reasoning trace.
inline std::string without_reasoning_suffix(std::string prompt) {
  while (!prompt.empty() && strings::is_space(prompt.back())) prompt.pop_back();
  if (prompt.ends_with(kReasoningOpen)) {
    prompt.erase(prompt.size() - kReasoningOpen.size());
    while (!prompt.empty() && strings::is_space(prompt.back())) prompt.pop_back();
  }
  return prompt;
}

inline std::string render(std::string_view tmpl, const std::map<std::string, std::string>& slots,
                          bool reasoning_suffix) {
  std::string prompt = fill(tmpl, slots);
  if (!reasoning_suffix) prompt = without_reasoning_suffix(std::move(prompt));
  return prompt;
}

}  // namespace kgattach::prompts
