#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>

#include "kgattach/commands.hpp"
#include "test_support.hpp"

using namespace kgattach;
using testsupport::TempDir;

namespace {

// Sessions whose entities are unique per session, so anonymization and
// extraction have real work to do.
std::vector<corpus::Session> pipeline_corpus(int n_sessions) {
  using corpus::Speaker;
  std::vector<corpus::Session> sessions;
  for (int i = 0; i < n_sessions; ++i) {
    std::string sid = "sess" + std::to_string(i);
    std::string head = "Work " + std::to_string(i);
    std::string tail = "Author " + std::to_string(i);
    corpus::Triplet fact{head, "written_by", tail};
    sessions.push_back(testsupport::make_session(
        sid, {testsupport::make_turn(sid, 0, Speaker::User, "Tell me about " + head + "."),
              testsupport::make_turn(sid, 1, Speaker::Assistant,
                                     head + " was written by " + tail + ".", {fact})}));
  }
  return sessions;
}

config::RunConfig mock_config(const TempDir& tmp, int n_sessions = 10) {
  config::RunConfig cfg;
  cfg.mock = true;
  cfg.corpus_path = tmp.file("corpus.jsonl").string();
  cfg.out_dir = tmp.file("run").string();
  cfg.generation.batch_concurrency = 4;
  cfg.extraction.batch_concurrency = 4;
  cfg.anonymization.batch_concurrency = 4;
  cfg.judging.batch_concurrency = 4;
  corpus::save_corpus(cfg.corpus_path, pipeline_corpus(n_sessions));
  return cfg;
}

}  // namespace

TEST_CASE("ingest validates and summarizes the corpus", "[pipeline]") {
  TempDir tmp;
  auto cfg = mock_config(tmp);
  REQUIRE(commands::cmd_ingest(cfg) == 0);
  commands::RunPaths paths = commands::run_paths(cfg);
  CHECK(std::filesystem::exists(paths.corpus_validated()));
  json summary = json::parse(io::read_file(paths.units_summary()));
  CHECK(summary["n_sessions"] == 10);
  CHECK(summary["n_units"] == 10);
}

TEST_CASE("full mock pipeline produces a populated report", "[pipeline]") {
  TempDir tmp;
  auto cfg = mock_config(tmp);
  REQUIRE(commands::cmd_generate(cfg) == 0);
  REQUIRE(commands::cmd_kat(cfg) == 0);
  commands::RunPaths paths = commands::run_paths(cfg);
  REQUIRE(std::filesystem::exists(paths.report_json()));
  json report = json::parse(io::read_file(paths.report_json()));
  CHECK(report["n_items"] == 10);
  CHECK(report["f1_per_turn"] == 100.0);  // scripted extractor recovers the grounded span
  CHECK(report["f1_per_session"] == 100.0);
  CHECK(report["impossible_rate"] == 0.0);
  CHECK(std::filesystem::exists(paths.scores()));
  CHECK(std::filesystem::exists(paths.run_record()));
  CHECK(std::filesystem::exists(paths.tables() / "report.md"));
}

TEST_CASE("kat before generate names the missing responses file", "[pipeline]") {
  TempDir tmp;
  auto cfg = mock_config(tmp);
  try {
    commands::cmd_kat(cfg);
    FAIL("expected MissingArtifactError");
  } catch (const commands::MissingArtifactError& ex) {
    std::string message = ex.what();
    CHECK(message.find("responses") != std::string::npos);
    CHECK(message.find("generate") != std::string::npos);
  }
}

TEST_CASE("anonymize then mix builds both corpus variants", "[pipeline]") {
  TempDir tmp;
  auto cfg = mock_config(tmp);
  REQUIRE(commands::cmd_anonymize(cfg) == 0);
  commands::RunPaths paths = commands::run_paths(cfg);
  auto anonymized = corpus::load_corpus(paths.anonymized_corpus());
  REQUIRE(anonymized.size() == 10);
  // Entities replaced by bracketed ids in both text and triplets.
  CHECK(anonymized[0].turns[1].triplets[0].head.starts_with("["));
  CHECK(anonymized[0].turns[1].text.find("[E") != std::string::npos);
  auto mappings = anon::load_mappings(paths.mappings());
  CHECK(mappings.size() == 10);

  REQUIRE(commands::cmd_mix(cfg) == 0);
  auto rows = io::read_jsonl(paths.half_corpus());
  REQUIRE(rows.size() == 10);
  std::size_t n_normal = 0;
  for (const json& row : rows) {
    REQUIRE(row.contains("provenance"));
    n_normal += row["provenance"] == "normal" ? 1 : 0;
  }
  CHECK(n_normal == 5);
  // The half corpus is itself a loadable Session corpus.
  CHECK(corpus::load_corpus(paths.half_corpus()).size() == 10);
}

TEST_CASE("the half variant flows through generate and kat", "[pipeline]") {
  TempDir tmp;
  auto cfg = mock_config(tmp);
  REQUIRE(commands::cmd_anonymize(cfg) == 0);
  REQUIRE(commands::cmd_mix(cfg) == 0);
  cfg.variant = "half";
  REQUIRE(commands::cmd_generate(cfg) == 0);
  REQUIRE(commands::cmd_kat(cfg) == 0);
  json report = json::parse(io::read_file(commands::run_paths(cfg).report_json()));
  CHECK(report["n_items"] == 10);
  CHECK(report["f1_per_turn"] == 100.0);
}

TEST_CASE("mock rule specs override the scripted role backends", "[pipeline]") {
  TempDir tmp;
  auto cfg = mock_config(tmp, 2);
  cfg.mock_rules["generator"] = "fixed:a canned reply";
  REQUIRE(commands::cmd_generate(cfg) == 0);
  auto responses = gen::load_responses(
      commands::run_paths(cfg).responses(cfg.models.generator, cfg.style, cfg.variant));
  REQUIRE(responses.size() == 2);
  CHECK(responses[0].text == "a canned reply");

  auto tagged = mock_config(tmp, 2);
  tagged.out_dir = tmp.file("tagged").string();
  tagged.mock_responses["sess0#1"] = "pinned for this turn";
  REQUIRE(commands::cmd_generate(tagged) == 0);
  auto tagged_responses = gen::load_responses(
      commands::run_paths(tagged).responses(tagged.models.generator, tagged.style,
                                            tagged.variant));
  CHECK(tagged_responses[0].text == "pinned for this turn");
  CHECK(tagged_responses[1].text != "pinned for this turn");

  auto bad = mock_config(tmp, 2);
  bad.mock_rules["generator"] = "no-such-rule";
  CHECK_THROWS_AS(commands::cmd_generate(bad), ConfigError);
}

TEST_CASE("session knowledge scope widens prompt conditioning only", "[pipeline]") {
  using corpus::Speaker;
  TempDir tmp;
  // One session, two knowledge-bearing assistant turns.
  std::string sid = "s0";
  corpus::Triplet first{"Alpha Work", "written_by", "Alpha Author"};
  corpus::Triplet second{"Beta Work", "written_by", "Beta Author"};
  auto session = testsupport::make_session(
      sid, {testsupport::make_turn(sid, 0, Speaker::Assistant, "a1", {first}),
            testsupport::make_turn(sid, 1, Speaker::Assistant, "a2", {second})});
  config::RunConfig cfg;
  cfg.mock = true;
  cfg.corpus_path = tmp.file("corpus.jsonl").string();
  cfg.out_dir = tmp.file("run").string();
  cfg.knowledge_scope = "session";
  corpus::save_corpus(cfg.corpus_path, {session});

  REQUIRE(commands::cmd_generate(cfg) == 0);
  auto responses = gen::load_responses(
      commands::run_paths(cfg).responses(cfg.models.generator, cfg.style, cfg.variant));
  REQUIRE(responses.size() == 2);
  // The scripted generator grounds every triplet it was shown; with session
  // scope both facts appear in both responses.
  CHECK(responses[0].text.find("Alpha Author") != std::string::npos);
  CHECK(responses[0].text.find("Beta Author") != std::string::npos);

  // Scoring still questions only the turn's own triplets.
  REQUIRE(commands::cmd_kat(cfg) == 0);
  auto rows = io::read_jsonl(commands::run_paths(cfg).scores());
  CHECK(rows.size() == 2);
}

TEST_CASE("kat runs on the anonymized variant in anonymized space", "[pipeline]") {
  TempDir tmp;
  auto cfg = mock_config(tmp);
  REQUIRE(commands::cmd_anonymize(cfg) == 0);
  cfg.variant = "anonymized";
  REQUIRE(commands::cmd_generate(cfg) == 0);
  REQUIRE(commands::cmd_kat(cfg) == 0);
  json report = json::parse(io::read_file(commands::run_paths(cfg).report_json()));
  CHECK(report["f1_per_turn"] == 100.0);  // gold is the anonymized tail form
}

TEST_CASE("synthetic set scores IMP 100 under the scripted extractor", "[pipeline]") {
  TempDir tmp;
  auto cfg = mock_config(tmp);
  REQUIRE(commands::cmd_synth(cfg, 7) == 0);
  commands::RunPaths paths = commands::run_paths(cfg);
  auto items = kat::load_items(paths.synthetic());
  CHECK(items.size() == 7);
  REQUIRE(commands::cmd_kat(cfg, /*synthetic=*/true) == 0);
  json robustness = json::parse(io::read_file(paths.robustness()));
  CHECK(robustness["imp_rate"] == 100.0);
  CHECK(robustness["fp_rate"] == 0.0);
}

TEST_CASE("judge command tallies verdicts over paired responses", "[pipeline]") {
  TempDir tmp;
  auto cfg = mock_config(tmp);
  REQUIRE(commands::cmd_anonymize(cfg) == 0);
  REQUIRE(commands::cmd_generate(cfg) == 0);
  cfg.variant = "anonymized";
  REQUIRE(commands::cmd_generate(cfg) == 0);
  cfg.variant = "normal";
  REQUIRE(commands::cmd_judge(cfg) == 0);
  commands::RunPaths paths = commands::run_paths(cfg);
  auto verdicts = judge::load_verdicts(paths.verdicts());
  CHECK(verdicts.size() == 10);
  CHECK(std::filesystem::exists(paths.tables() / "judge_summary.md"));
  CHECK(std::filesystem::exists(paths.tables() / "judge_summary.csv"));
}

TEST_CASE("identical mock runs are byte-identical", "[pipeline]") {
  TempDir tmp;
  auto run_once = [&](const std::string& out_name) {
    auto cfg = mock_config(tmp);
    cfg.out_dir = tmp.file(out_name).string();
    REQUIRE(commands::cmd_generate(cfg) == 0);
    REQUIRE(commands::cmd_kat(cfg) == 0);
    commands::RunPaths paths = commands::run_paths(cfg);
    return std::pair{io::read_file(paths.scores()), io::read_file(paths.report_json())};
  };
  auto first = run_once("run_a");
  auto second = run_once("run_b");
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
  CHECK_FALSE(first.first.empty());
}

TEST_CASE("report command assembles delta tables across runs", "[pipeline]") {
  TempDir tmp;
  auto cfg = mock_config(tmp);
  cfg.out_dir = tmp.file("run_normal").string();
  REQUIRE(commands::cmd_generate(cfg) == 0);
  REQUIRE(commands::cmd_kat(cfg) == 0);

  // Variant artifacts live inside their run directory.
  auto cfg_anon = cfg;
  cfg_anon.out_dir = tmp.file("run_anonymized").string();
  cfg_anon.variant = "anonymized";
  REQUIRE(commands::cmd_anonymize(cfg_anon) == 0);
  REQUIRE(commands::cmd_generate(cfg_anon) == 0);
  REQUIRE(commands::cmd_kat(cfg_anon) == 0);

  auto cfg_report = cfg;
  cfg_report.out_dir = tmp.file("summary").string();
  REQUIRE(commands::cmd_report(cfg_report, {cfg.out_dir, cfg_anon.out_dir}) == 0);
  commands::RunPaths out = commands::run_paths(cfg_report);
  std::string md = io::read_file(out.tables() / "delta_table.md");
  CHECK(md.find("| normal |") != std::string::npos);
  CHECK(md.find("| anonymized |") != std::string::npos);
  CHECK(md.find("(+0.00)") != std::string::npos);  // both mock runs score 100
  CHECK(std::filesystem::exists(out.tables() / "runs.csv"));
  CHECK(std::filesystem::exists(out.tables() / "runs.json"));
}

TEST_CASE("config round-trips, hashes stably, and honors env overrides", "[pipeline]") {
  config::RunConfig cfg;
  cfg.corpus_path = "x.jsonl";
  cfg.seed = 7;
  std::string h1 = config::config_hash(cfg);
  CHECK(h1 == config::config_hash(cfg));
  auto back = config::from_json(config::to_json(cfg));
  CHECK(config::config_hash(back) == h1);
  cfg.seed = 8;
  CHECK(config::config_hash(cfg) != h1);

  ::setenv("KGATTACH_API_KEY", "sk-test", 1);
  ::setenv("KGATTACH_MODEL", "my-model", 1);
  config::apply_env_overrides(cfg);
  CHECK(cfg.endpoint.api_key == "sk-test");
  CHECK(cfg.models.generator == "my-model");
  CHECK(cfg.models.judge == "my-model");
  ::unsetenv("KGATTACH_API_KEY");
  ::unsetenv("KGATTACH_MODEL");

  // The secret never enters the hash.
  auto hashed = config::to_json(cfg).dump();
  CHECK(hashed.find("sk-test") == std::string::npos);
}

TEST_CASE("the cli binary drives the pipeline end to end", "[pipeline][cli]") {
  TempDir tmp;
  corpus::save_corpus(tmp.file("corpus.jsonl"), pipeline_corpus(3));
  std::string base = std::string(KGATTACH_CLI_PATH) + " --mock --corpus " +
                     tmp.file("corpus.jsonl").string() + " --out " + tmp.file("run").string();
  CHECK(std::system((base + " ingest > /dev/null").c_str()) == 0);
  CHECK(std::system((base + " generate > /dev/null").c_str()) == 0);
  CHECK(std::system((base + " kat > /dev/null").c_str()) == 0);
  CHECK(std::filesystem::exists(tmp.file("run") / "report.json"));

  // Missing prerequisite -> nonzero exit.
  std::string fresh = std::string(KGATTACH_CLI_PATH) + " --mock --corpus " +
                      tmp.file("corpus.jsonl").string() + " --out " +
                      tmp.file("fresh").string() + " kat 2> /dev/null";
  CHECK(std::system(fresh.c_str()) != 0);
}
