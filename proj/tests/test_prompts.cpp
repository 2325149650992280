#include <catch2/catch_amalgamated.hpp>

#include "kgattach/prompts.hpp"

using namespace kgattach;

TEST_CASE("fill replaces every known slot", "[prompts]") {
  CHECK(prompts::fill("a {x} b {y}", {{"x", "1"}, {"y", "2"}}) == "a 1 b 2");
  CHECK_THROWS_AS(prompts::fill("a {x} {z}", {{"x", "1"}}), prompts::UnresolvedSlotError);
}

TEST_CASE("fill never re-scans substituted values", "[prompts]") {
  CHECK(prompts::fill("{x}", {{"x", "{y}"}}) == "{y}");
}

TEST_CASE("non-slot braces pass through", "[prompts]") {
  CHECK(prompts::fill("f() { return {x}; }", {{"x", "1"}}) == "f() { return 1; }");
}

TEST_CASE("reasoning suffix is dropped for non-reasoning models", "[prompts]") {
  std::string with = prompts::render("body\n\n<think>", {}, true);
  std::string without = prompts::render("body\n\n<think>", {}, false);
  CHECK(with == "body\n\n<think>");
  CHECK(without == "body");
}

TEST_CASE("generation templates carry their instruction blocks", "[prompts]") {
  CHECK(prompts::kGenerationDefault.find("You are an expert dialogue agent") == 0);
  CHECK(prompts::kGenerationDefault.find("{history}") != std::string_view::npos);
  CHECK(prompts::kGenerationDefault.find("{external_kg}") != std::string_view::npos);
  CHECK(prompts::kGenerationDefault.ends_with("<think>"));

  CHECK(prompts::kGenerationDetailed.find("You are a concise dialogue agent") == 0);
  CHECK(prompts::kGenerationDetailed.find(
            "Do not invent or speculate beyond the given knowledge.") !=
        std::string_view::npos);
}

TEST_CASE("extraction template instruction count is a slot", "[prompts]") {
  std::string full =
      prompts::fill(std::string(prompts::kKatExtraction), {{"n", "20"}, {"samples", "S"}});
  CHECK(full.find("There are 20 instances that you should response to. ") != std::string::npos);
  CHECK(full.find("You should output 20 lines.") != std::string::npos);
  CHECK(full.find("ID|||context|||triplet|||answer_1@@answer_2@@answer_3") != std::string::npos);

  std::string partial =
      prompts::fill(std::string(prompts::kKatExtraction), {{"n", "7"}, {"samples", "S"}});
  CHECK(partial.find("There are 7 instances") != std::string::npos);
  CHECK(partial.find("You should output 7 lines.") != std::string::npos);
}

TEST_CASE("judge template lists the three allowed decisions", "[prompts]") {
  CHECK(prompts::kJudge.find("You are a high-precision quality assessment agent") == 0);
  CHECK(prompts::kJudge.find(
            "Only output one of the following as your final decision: A, B, or Both.") !=
        std::string_view::npos);
  CHECK(prompts::kJudge.find("{knowledge_triplets}") != std::string_view::npos);
}

TEST_CASE("anonymization template ships the worked example", "[prompts]") {
  CHECK(prompts::kAnonymization.find("Mapping Table Example:") != std::string_view::npos);
  CHECK(prompts::kAnonymization.find("| F1     | Iron Man") != std::string_view::npos);
  CHECK(prompts::kAnonymization.find("- S1: Do you like [F1]?") != std::string_view::npos);
  CHECK(prompts::kAnonymization.find(R"(1. ["[F1]", "starred_actors", "[P1]"])") !=
        std::string_view::npos);
}
