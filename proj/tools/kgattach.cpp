// Pipeline driver: ingest a KG-dialogue corpus, generate grounded responses,
// anonymize, build the half mix, score attachment, and report.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kgattach/commands.hpp"
#include "kgattach/config.hpp"

namespace {

struct GlobalOptions {
  std::string config_path;
  std::string corpus;
  std::string out_dir;
  std::string variant;
  std::string style;
  std::string mask;
  std::string knowledge_scope;
  bool exclude_impossible = false;
  bool mock = false;
  bool seed_generation = false;
  bool bare_anon_ids = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

kgattach::config::RunConfig resolve_config(const GlobalOptions& opts) {
  kgattach::config::RunConfig cfg;
  if (!opts.config_path.empty()) cfg = kgattach::config::load_config(opts.config_path);
  kgattach::config::apply_env_overrides(cfg);
  if (!opts.corpus.empty()) cfg.corpus_path = opts.corpus;
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (!opts.variant.empty()) cfg.variant = opts.variant;
  if (!opts.style.empty()) cfg.style = opts.style;
  if (!opts.mask.empty()) cfg.mask = opts.mask;
  if (!opts.knowledge_scope.empty()) cfg.knowledge_scope = opts.knowledge_scope;
  if (opts.bare_anon_ids) cfg.anon_bracketed_ids = false;
  if (opts.exclude_impossible) cfg.exclude_impossible = true;
  if (opts.mock) cfg.mock = true;
  if (opts.seed_set) cfg.seed = opts.seed;
  if (opts.seed_generation) {
    cfg.seed_generation = true;
    cfg.generation.seed = static_cast<std::int64_t>(cfg.seed);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kgattach: knowledge-attachment evaluation harness for KG-grounded dialogue"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions opts;
  app.add_option("--config", opts.config_path, "JSON config file");
  app.add_option("--corpus", opts.corpus, "session JSONL corpus path");
  app.add_option("--out", opts.out_dir, "run directory for artifacts");
  app.add_option("--variant", opts.variant, "corpus variant: normal|anonymized|half");
  app.add_option("--style", opts.style, "prompt style: default|detailed");
  app.add_option("--mask", opts.mask, "masked triplet side: tail|head|both");
  app.add_option("--knowledge-scope", opts.knowledge_scope,
                 "condition generation on turn|session knowledge");
  app.add_flag("--bare-anon-ids", opts.bare_anon_ids,
               "substitute bare ids (Person1) instead of bracketed ([P1])");
  app.add_flag("--exclude-impossible", opts.exclude_impossible,
               "drop extractor-impossible items from F1 means");
  app.add_flag("--mock", opts.mock, "use the deterministic scripted backend for every LLM role");
  app.add_option("--seed", opts.seed, "run seed (mix sampling, judge assignment)")
      ->each([&](const std::string&) { opts.seed_set = true; });
  app.add_flag("--seed-generation", opts.seed_generation,
               "also seed the generation task (extraction is always seeded)");

  auto* ingest = app.add_subcommand("ingest", "validate and segment a corpus");
  auto* generate = app.add_subcommand("generate", "generate grounded responses per eval unit");
  auto* anonymize = app.add_subcommand("anonymize", "build the anonymized corpus variant");
  auto* mix = app.add_subcommand("mix", "build the seeded half-anonymized mix");
  auto* kat_cmd = app.add_subcommand("kat", "score knowledge attachment of responses");
  bool kat_synthetic = false;
  kat_cmd->add_flag("--synthetic", kat_synthetic,
                    "score the designed-unanswerable synthetic set instead of responses");
  auto* synth = app.add_subcommand("synth", "build the synthetic unanswerable item set");
  std::size_t synth_count = 20000;
  synth->add_option("--count", synth_count, "number of synthetic items (default 20000)");
  auto* judge_cmd = app.add_subcommand("judge", "pairwise normal-vs-anonymized judging");
  bool raw_anonymized = false;
  judge_cmd->add_flag("--raw-anonymized", raw_anonymized,
                      "judge the anonymized response without de-anonymizing it");
  auto* report_cmd = app.add_subcommand("report", "assemble delta tables from run records");
  std::vector<std::string> report_runs;
  std::string baseline = "normal";
  std::vector<std::string> formats = {"markdown", "csv", "json"};
  report_cmd->add_option("--runs", report_runs, "run directories holding run_record.json")
      ->expected(-1);
  report_cmd->add_option("--baseline", baseline, "baseline variant (default: normal)");
  report_cmd->add_option("--format", formats, "export formats: markdown csv json");

  CLI11_PARSE(app, argc, argv);

  try {
    kgattach::config::RunConfig cfg = resolve_config(opts);
    if (ingest->parsed()) return kgattach::commands::cmd_ingest(cfg);
    if (generate->parsed()) return kgattach::commands::cmd_generate(cfg);
    if (anonymize->parsed()) return kgattach::commands::cmd_anonymize(cfg);
    if (mix->parsed()) return kgattach::commands::cmd_mix(cfg);
    if (kat_cmd->parsed()) return kgattach::commands::cmd_kat(cfg, kat_synthetic);
    if (synth->parsed()) return kgattach::commands::cmd_synth(cfg, synth_count);
    if (judge_cmd->parsed()) return kgattach::commands::cmd_judge(cfg, raw_anonymized);
    if (report_cmd->parsed()) {
      return kgattach::commands::cmd_report(cfg, report_runs, baseline, formats);
    }
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 0;
}
