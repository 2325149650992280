#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "kgattach/kat_eval.hpp"
#include "test_support.hpp"

using namespace kgattach;
using Catch::Matchers::WithinAbs;

namespace {

kat::KatItem answerable_item(long id, const std::string& context, const std::string& gold,
                             const std::string& session = "s1", int turn = 1) {
  kat::KatItem item;
  item.item_id = id;
  item.context = context;
  item.masked_triplet = {"GOT", "written_by", std::string(kat::kMaskToken)};
  item.gold = {gold};
  item.session_id = session;
  item.turn_index = turn;
  return item;
}

kat::KatPrediction prediction(long id, std::vector<std::string> candidates) {
  kat::KatPrediction p;
  p.item_id = id;
  p.candidates = std::move(candidates);
  return p;
}

}  // namespace

TEST_CASE("normalize_answer matches the SQuAD normalization", "[kat]") {
  CHECK(kat::normalize_answer("The Godfather!") == "godfather");
  CHECK(kat::normalize_answer("George R.R. Martin") == "george rr martin");
  CHECK(kat::normalize_answer("").empty());
  CHECK(kat::normalize_answer("A  An THE the") == "");
  CHECK(kat::normalize_answer("It's an (old) movie - really.") == "its old movie really");
  CHECK(kat::normalize_answer("  spaced   out  ") == "spaced out");
  CHECK(kat::normalize_answer("Theatre of War") == "theatre of war");  // no substring removal
}

TEST_CASE("token_f1 on the worked examples", "[kat]") {
  CHECK_THAT(kat::token_f1("George Martin", "George R.R. Martin"), WithinAbs(0.8, 1e-12));
  CHECK(kat::token_f1("same thing", "same thing") == 1.0);
  CHECK(kat::token_f1("apples", "oranges") == 0.0);
  CHECK(kat::token_f1("", "") == 1.0);
  CHECK(kat::token_f1("something", "") == 0.0);
  CHECK(kat::token_f1("", "something") == 0.0);
  // Punctuation-only strings normalize to empty.
  CHECK(kat::token_f1("!!!", "...") == 1.0);
}

TEST_CASE("token_f1 is symmetric, bounded, and 1 iff multisets match", "[kat]") {
  std::mt19937 rng(7);
  const std::vector<std::string> words = {"alpha", "beta", "Gamma!", "the", "delta-9", "An"};
  for (int trial = 0; trial < 200; ++trial) {
    auto sample = [&]() {
      std::string s;
      int n = static_cast<int>(rng() % 5);
      for (int i = 0; i < n; ++i) {
        if (!s.empty()) s += ' ';
        s += words[rng() % words.size()];
      }
      return s;
    };
    std::string a = sample(), b = sample();
    double ab = kat::token_f1(a, b);
    double ba = kat::token_f1(b, a);
    CHECK(ab == ba);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    auto sorted_tokens = [](const std::string& s) {
      auto t = kat::normalized_tokens(s);
      std::sort(t.begin(), t.end());
      return t;
    };
    CHECK((ab == 1.0) == (sorted_tokens(a) == sorted_tokens(b)));
  }
}

TEST_CASE("build_items masks the tail and keeps the gold", "[kat]") {
  auto session = testsupport::got_session();
  auto units = corpus::segment({session});
  gen::GeneratedResponse response;
  response.session_id = "s1";
  response.turn_index = 1;
  response.text = "It was George R.R. Martin.";
  auto items = kat::build_items({response}, units);
  REQUIRE(items.size() == 1);
  CHECK(items[0].masked_triplet == corpus::Triplet{"GOT", "written_by", "X"});
  CHECK(items[0].gold == std::vector<std::string>{"George R.R. Martin"});
  CHECK(items[0].context == "It was George R.R. Martin.");
  CHECK(items[0].item_id == 1);
}

TEST_CASE("a turn with two triplets yields two items sharing turn_index", "[kat]") {
  using corpus::Speaker;
  auto session = testsupport::make_session(
      "s1", {testsupport::make_turn("s1", 0, Speaker::User, "q"),
             testsupport::make_turn("s1", 1, Speaker::Assistant, "a",
                                    {{"a", "r1", "b"}, {"c", "r2", "d"}})});
  gen::GeneratedResponse response;
  response.session_id = "s1";
  response.turn_index = 1;
  response.text = "text";
  auto items = kat::build_items({response}, corpus::segment({session}));
  REQUIRE(items.size() == 2);
  CHECK(items[0].turn_index == items[1].turn_index);
  CHECK(items[0].item_id == 1);
  CHECK(items[1].item_id == 2);
}

TEST_CASE("mask side head and both", "[kat]") {
  auto session = testsupport::got_session();
  auto units = corpus::segment({session});
  gen::GeneratedResponse response;
  response.session_id = "s1";
  response.turn_index = 1;
  response.text = "t";

  auto head_items = kat::build_items({response}, units, kat::MaskSide::Head);
  REQUIRE(head_items.size() == 1);
  CHECK(head_items[0].masked_triplet == corpus::Triplet{"X", "written_by", "George R.R. Martin"});
  CHECK(head_items[0].gold == std::vector<std::string>{"GOT"});

  auto both_items = kat::build_items({response}, units, kat::MaskSide::Both);
  CHECK(both_items.size() == 2);
}

TEST_CASE("failed generations keep empty-context items", "[kat]") {
  auto session = testsupport::got_session();
  auto units = corpus::segment({session});
  gen::GeneratedResponse response;
  response.session_id = "s1";
  response.turn_index = 1;
  response.failed = true;
  auto items = kat::build_items({response}, units);
  REQUIRE(items.size() == 1);
  CHECK(items[0].context.empty());
  CHECK(items[0].generation_failed);
}

TEST_CASE("build_items rejects responses without a unit", "[kat]") {
  gen::GeneratedResponse response;
  response.session_id = "ghost";
  response.turn_index = 9;
  CHECK_THROWS(kat::build_items({response}, {}));
}

TEST_CASE("render_kat_batch emits one sample line per item", "[kat]") {
  std::vector<kat::KatItem> items;
  for (long i = 1; i <= 20; ++i) {
    items.push_back(answerable_item(i, "ctx " + std::to_string(i), "g"));
  }
  std::string prompt = kat::render_kat_batch(items);
  CHECK(prompt.find("There are 20 instances that you should response to. ") != std::string::npos);
  CHECK(prompt.find("You should output 20 lines.") != std::string::npos);
  std::size_t samples = 0;
  bool in_input = false;
  for (const std::string& line : strings::split_lines(prompt)) {
    if (line == "Input:") {
      in_input = true;
      continue;
    }
    if (in_input && line.find("|||") != std::string::npos) ++samples;
  }
  CHECK(samples == 20);

  std::vector<kat::KatItem> seven(items.begin(), items.begin() + 7);
  std::string partial = kat::render_kat_batch(seven);
  CHECK(partial.find("There are 7 instances") != std::string::npos);
  CHECK(partial.find("You should output 7 lines.") != std::string::npos);

  CHECK_THROWS(kat::render_kat_batch(std::vector<kat::KatItem>{}));
  std::vector<kat::KatItem> too_many(21, items[0]);
  CHECK_THROWS(kat::render_kat_batch(too_many));
}

TEST_CASE("sample lines are single-line and ||| is defused", "[kat]") {
  auto item = answerable_item(1, "line one\nline two ||| tricked", "g");
  std::string line = kat::render_kat_sample_line(item);
  CHECK(line.find('\n') == std::string::npos);
  CHECK(line == "1|||line one line two | | | tricked|||(GOT, written_by, X)");
}

TEST_CASE("parse_kat_batch reads the delimited grammar", "[kat]") {
  auto preds = kat::parse_kat_batch("3|||ctx|||(A, r, X)|||Alice@@Bob", {3});
  REQUIRE(preds.size() == 1);
  CHECK(preds[0].candidates == std::vector<std::string>{"Alice", "Bob"});
  CHECK(preds[0].parse_ok);
  CHECK_FALSE(preds[0].impossible);
}

TEST_CASE("IS_IMPOSSIBLE is case-insensitive and trimmed", "[kat]") {
  auto preds = kat::parse_kat_batch("5|||ctx|||(A, r, X)|||  is_impossible  ", {5});
  REQUIRE(preds.size() == 1);
  CHECK(preds[0].impossible);
  CHECK(preds[0].candidates.empty());
  CHECK(preds[0].parse_ok);
}

TEST_CASE("missing ids become parse failures, count preserved", "[kat]") {
  std::vector<long> expected;
  std::string output;
  for (long i = 1; i <= 20; ++i) {
    expected.push_back(i);
    if (i == 13) continue;  // model skipped one line
    output += std::to_string(i) + "|||c|||(A, r, X)|||ans\n";
  }
  std::vector<std::string> warnings;
  auto preds = kat::parse_kat_batch(output, expected, &warnings);
  REQUIRE(preds.size() == 20);
  CHECK_FALSE(preds[12].parse_ok);
  CHECK(preds[12].candidates.empty());
  CHECK_FALSE(warnings.empty());
}

TEST_CASE("duplicate ids keep the first occurrence; strays are ignored", "[kat]") {
  std::string output =
      "1|||c|||(A, r, X)|||first\n"
      "1|||c|||(A, r, X)|||second\n"
      "99|||c|||(A, r, X)|||stray\n";
  std::vector<std::string> warnings;
  auto preds = kat::parse_kat_batch(output, {1}, &warnings);
  REQUIRE(preds.size() == 1);
  CHECK(preds[0].candidates == std::vector<std::string>{"first"});
  CHECK(warnings.size() == 2);
}

TEST_CASE("chatter lines and malformed rows degrade gracefully", "[kat]") {
  std::string output =
      "Sure! Here are the answers:\n"
      "not-a-number|||c|||(A, r, X)|||x\n"
      "2|||c|||(A, r, X)|||\n"
      "1|||c|||(A, r, X)|||ok\n";
  auto preds = kat::parse_kat_batch(output, {1, 2});
  REQUIRE(preds.size() == 2);
  CHECK(preds[0].parse_ok);
  CHECK(preds[0].candidates == std::vector<std::string>{"ok"});
  CHECK_FALSE(preds[1].parse_ok);  // empty answer field is unusable
}

TEST_CASE("parse_kat_batch never loses an expected id (property)", "[kat]") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<long> expected;
    std::string output;
    for (long i = 1; i <= 20; ++i) {
      expected.push_back(i);
      switch (rng() % 4) {
        case 0: break;  // omitted line
        case 1: output += std::to_string(i) + "|||c|||(A, r, X)|||ans\n"; break;
        case 2: output += std::to_string(i) + "|||c|||(A, r, X)|||IS_IMPOSSIBLE\n"; break;
        default: output += "garbage line " + std::to_string(i) + "\n"; break;
      }
    }
    auto preds = kat::parse_kat_batch(output, expected);
    REQUIRE(preds.size() == expected.size());
    for (std::size_t k = 0; k < preds.size(); ++k) CHECK(preds[k].item_id == expected[k]);
  }
}

TEST_CASE("score_item takes the max over candidates and golds", "[kat]") {
  auto item = answerable_item(1, "ctx", "George R.R. Martin");
  CHECK(kat::score_item(item, prediction(1, {"X", "George R.R. Martin"})).f1 == 1.0);
  CHECK_THAT(kat::score_item(item, prediction(1, {"George Martin"})).f1, WithinAbs(0.8, 1e-12));
}

TEST_CASE("impossible on an answerable item scores zero and is counted", "[kat]") {
  auto item = answerable_item(1, "ctx", "gold");
  kat::KatPrediction pred;
  pred.item_id = 1;
  pred.impossible = true;
  auto score = kat::score_item(item, pred);
  CHECK(score.f1 == 0.0);
  CHECK(score.counted_impossible);
}

TEST_CASE("adding a candidate never lowers the score (property)", "[kat]") {
  auto item = answerable_item(1, "ctx", "alpha beta");
  std::vector<std::string> candidates;
  double last = 0.0;
  for (const char* c : {"zzz", "alpha", "alpha beta", "nothing"}) {
    candidates.push_back(c);
    double f1 = kat::score_item(item, prediction(1, candidates)).f1;
    CHECK(f1 >= last);
    last = std::max(last, f1);
  }
}

TEST_CASE("score_item rejects mismatched ids", "[kat]") {
  CHECK_THROWS(kat::score_item(answerable_item(1, "c", "g"), prediction(2, {"x"})));
}

TEST_CASE("aggregate computes micro and macro means", "[kat]") {
  // Sessions A: turn scores {1.0, 0.0}; B: {1.0}.
  std::vector<kat::KatItem> items = {answerable_item(1, "c", "g", "A", 1),
                                     answerable_item(2, "c", "g", "A", 3),
                                     answerable_item(3, "c", "g", "B", 1)};
  std::vector<kat::KatScore> scores(3);
  for (int i = 0; i < 3; ++i) scores[i].item_id = i + 1;
  scores[0].f1 = 1.0;
  scores[1].f1 = 0.0;
  scores[2].f1 = 1.0;
  auto report = kat::aggregate(items, scores);
  CHECK_THAT(report.f1_per_turn, WithinAbs(100.0 * 2.0 / 3.0, 1e-9));
  CHECK_THAT(report.f1_per_session, WithinAbs(75.0, 1e-9));
  CHECK(report.n_turns == 3);
  CHECK(report.n_sessions == 2);

  // Brute-force oracle for the same numbers.
  double micro = (1.0 + 0.0 + 1.0) / 3.0 * 100.0;
  double macro = ((1.0 + 0.0) / 2.0 + 1.0) / 2.0 * 100.0;
  CHECK_THAT(report.f1_per_turn, WithinAbs(micro, 1e-12));
  CHECK_THAT(report.f1_per_session, WithinAbs(macro, 1e-12));
}

TEST_CASE("perfect scores aggregate to exactly 100", "[kat]") {
  std::vector<kat::KatItem> items;
  std::vector<kat::KatScore> scores;
  for (long i = 0; i < 10; ++i) {
    items.push_back(answerable_item(i + 1, "c", "g", "s" + std::to_string(i % 3),
                                    static_cast<int>(i)));
    kat::KatScore s;
    s.item_id = i + 1;
    s.f1 = 1.0;
    scores.push_back(s);
  }
  auto report = kat::aggregate(items, scores);
  CHECK(report.f1_per_turn == 100.0);
  CHECK(report.f1_per_session == 100.0);
  CHECK(report.impossible_rate == 0.0);
}

TEST_CASE("single turn makes micro equal macro", "[kat]") {
  std::vector<kat::KatItem> items = {answerable_item(1, "c", "g")};
  kat::KatScore s;
  s.item_id = 1;
  s.f1 = 0.5;
  auto report = kat::aggregate(items, {s});
  CHECK(report.f1_per_turn == report.f1_per_session);
}

TEST_CASE("micro equals macro when sessions have equal turn counts (property)", "[kat]") {
  std::mt19937 rng(3);
  std::vector<kat::KatItem> items;
  std::vector<kat::KatScore> scores;
  long id = 1;
  for (int s = 0; s < 4; ++s) {
    for (int t = 0; t < 3; ++t) {  // equal turns per session
      items.push_back(answerable_item(id, "c", "g", "s" + std::to_string(s), t));
      kat::KatScore score;
      score.item_id = id++;
      score.f1 = static_cast<double>(rng() % 1000) / 1000.0;
      scores.push_back(score);
    }
  }
  auto report = kat::aggregate(items, scores);
  CHECK_THAT(report.f1_per_turn, WithinAbs(report.f1_per_session, 1e-9));
}

TEST_CASE("a multi-triplet turn scores the mean of its items", "[kat]") {
  std::vector<kat::KatItem> items = {answerable_item(1, "c", "g", "A", 1),
                                     answerable_item(2, "c", "g", "A", 1)};
  std::vector<kat::KatScore> scores(2);
  scores[0].item_id = 1;
  scores[0].f1 = 1.0;
  scores[1].item_id = 2;
  scores[1].f1 = 0.0;
  auto report = kat::aggregate(items, scores);
  CHECK(report.n_turns == 1);
  CHECK_THAT(report.f1_per_turn, WithinAbs(50.0, 1e-12));
}

TEST_CASE("aggregate flags unmapped items and honors exclude_impossible", "[kat]") {
  std::vector<kat::KatItem> items = {answerable_item(1, "c", "g", "A", 1),
                                     answerable_item(2, "c", "g", "A", 2)};
  kat::KatScore unmapped;
  unmapped.item_id = 99;
  CHECK_THROWS(kat::aggregate(items, {unmapped}));

  std::vector<kat::KatScore> scores(2);
  scores[0].item_id = 1;
  scores[0].f1 = 1.0;
  scores[1].item_id = 2;
  scores[1].f1 = 0.0;
  scores[1].counted_impossible = true;
  auto keep = kat::aggregate(items, scores, false);
  CHECK_THAT(keep.f1_per_turn, WithinAbs(50.0, 1e-12));
  auto drop = kat::aggregate(items, scores, true);
  CHECK_THAT(drop.f1_per_turn, WithinAbs(100.0, 1e-12));
  CHECK_THAT(drop.impossible_rate, WithinAbs(0.5, 1e-12));
}

TEST_CASE("build_synthetic makes unanswerable items from triplets", "[kat]") {
  auto items = kat::build_synthetic({{"GOT", "written_by", "George R.R. Martin"}});
  REQUIRE(items.size() == 1);
  CHECK(items[0].context == "George R.R. Martin is not found in the database");
  CHECK(items[0].masked_triplet == corpus::Triplet{"GOT", "written_by", "X"});
  CHECK(items[0].designed_unanswerable());

  std::vector<corpus::Triplet> many;
  for (int i = 0; i < 500; ++i) {
    many.push_back({"h" + std::to_string(i), "r", "t" + std::to_string(i)});
  }
  CHECK(kat::build_synthetic(many).size() == 500);
  CHECK_THROWS(kat::build_synthetic({{"h", "r", " "}}));
}

TEST_CASE("robustness_report partitions into IMP, FP, parse failures", "[kat]") {
  auto items = kat::build_synthetic({{"a", "r", "w"}, {"b", "r", "x"}, {"c", "r", "y"},
                                     {"d", "r", "z"}});
  std::vector<kat::KatPrediction> preds(4);
  for (int i = 0; i < 4; ++i) preds[i].item_id = items[i].item_id;
  preds[0].impossible = true;
  preds[1].impossible = true;
  preds[2].impossible = true;
  preds[3].candidates = {"span"};
  auto report = kat::robustness_report(items, preds);
  CHECK_THAT(report.imp_rate, WithinAbs(75.0, 1e-12));
  CHECK_THAT(report.fp_rate, WithinAbs(25.0, 1e-12));
  CHECK_THAT(report.imp_rate + report.fp_rate + report.parse_failure_rate,
             WithinAbs(100.0, 1e-9));

  for (auto& p : preds) {
    p.impossible = true;
    p.candidates.clear();
  }
  auto all_imp = kat::robustness_report(items, preds);
  CHECK(all_imp.imp_rate == 100.0);
  CHECK(all_imp.fp_rate == 0.0);

  auto answerable = answerable_item(99, "c", "g");
  CHECK_THROWS(kat::robustness_report({answerable}, {prediction(99, {"x"})}));
}

TEST_CASE("oracle extractor end to end scores exactly 100", "[kat]") {
  std::vector<corpus::Session> sessions;
  for (int i = 0; i < 5; ++i) sessions.push_back(testsupport::got_session("s" + std::to_string(i)));
  auto units = corpus::segment(sessions);
  std::vector<gen::GeneratedResponse> responses;
  for (const auto& unit : units) {
    gen::GeneratedResponse r;
    r.session_id = unit.session_id;
    r.turn_index = unit.turn_index;
    r.text = "gold lives here";
    responses.push_back(r);
  }
  auto items = kat::build_items(responses, units);
  std::vector<kat::KatPrediction> preds;
  for (const auto& item : items) preds.push_back(prediction(item.item_id, {item.gold[0]}));
  auto report = kat::aggregate(items, kat::score_all(items, preds));
  CHECK(report.f1_per_turn == 100.0);
  CHECK(report.f1_per_session == 100.0);
  CHECK(report.impossible_rate == 0.0);
}

TEST_CASE("kat items round-trip through JSONL", "[kat]") {
  testsupport::TempDir tmp;
  auto items = kat::build_synthetic({{"GOT", "written_by", "George R.R. Martin"}});
  kat::save_items(tmp.file("items.jsonl"), items);
  auto loaded = kat::load_items(tmp.file("items.jsonl"));
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].context == items[0].context);
  CHECK(loaded[0].designed_unanswerable());
  CHECK(loaded[0].masked_triplet == items[0].masked_triplet);
}
