#pragma once

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kgattach/anonymizer.hpp"
#include "kgattach/config.hpp"
#include "kgattach/corpus.hpp"
#include "kgattach/generation.hpp"
#include "kgattach/judge.hpp"
#include "kgattach/kat_eval.hpp"
#include "kgattach/llm_gateway.hpp"
#include "kgattach/mock_rules.hpp"
#include "kgattach/report.hpp"

namespace kgattach::commands {

struct MissingArtifactError : Error {
  MissingArtifactError(const std::filesystem::path& path, const std::string& hint)
      : Error("missing prerequisite artifact " + path.string() + " (" + hint + ")") {}
};

struct RunPaths {
  std::filesystem::path dir;

  std::filesystem::path corpus_validated() const { return dir / "corpus_validated.jsonl"; }
  std::filesystem::path units_summary() const { return dir / "units_summary.json"; }
  std::filesystem::path anonymized_corpus() const { return dir / "anonymized.jsonl"; }
  std::filesystem::path mappings() const { return dir / "mappings.jsonl"; }
  std::filesystem::path exclusions() const { return dir / "anonymization_exclusions.json"; }
  std::filesystem::path half_corpus() const { return dir / "half.jsonl"; }
  std::filesystem::path responses(std::string_view model, std::string_view style,
                                  std::string_view variant) const {
    return dir / "responses" / gen::response_file_name(model, style, variant);
  }
  std::filesystem::path scores() const { return dir / "scores.jsonl"; }
  std::filesystem::path report_json() const { return dir / "report.json"; }
  std::filesystem::path run_record() const { return dir / "run_record.json"; }
  std::filesystem::path synthetic() const { return dir / "synthetic.jsonl"; }
  std::filesystem::path robustness() const { return dir / "robustness.json"; }
  std::filesystem::path verdicts() const { return dir / "verdicts.jsonl"; }
  std::filesystem::path tables() const { return dir / "tables"; }
};

inline RunPaths run_paths(const config::RunConfig& cfg) {
  return RunPaths{std::filesystem::path(cfg.out_dir)};
}

inline std::string iso8601_now() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::shared_ptr<gateway::MockBackend> make_mock_backend(const config::RunConfig& cfg,
                                                               std::string_view role) {
  std::string spec = "role";
  if (auto it = cfg.mock_rules.find(std::string(role)); it != cfg.mock_rules.end()) {
    spec = it->second;
  }
  std::shared_ptr<gateway::MockBackend> mock;
  if (spec == "role") {
    mock = std::make_shared<gateway::MockBackend>(mockrules::rule_for_role(role));
  } else if (spec == "echo") {
    mock = gateway::MockBackend::echo();
  } else if (spec.starts_with("fixed:")) {
    mock = gateway::MockBackend::fixed(spec.substr(6));
  } else if (spec.starts_with("fail-n-times:")) {
    mock = gateway::MockBackend::echo();
    mock->fail_times(std::stoi(spec.substr(13)));
  } else {
    throw ConfigError("unknown mock rule spec \"" + spec + "\" for role \"" + std::string(role) +
                      "\"");
  }
  for (const auto& [tag, text] : cfg.mock_responses) mock->set_response(tag, text);
  return mock;
}

inline gateway::Gateway make_gateway(const config::RunConfig& cfg, std::string_view role) {
  gateway::RetryPolicy retry;
  retry.max_attempts = cfg.endpoint.max_attempts;
  retry.base_delay = std::chrono::milliseconds(cfg.endpoint.retry_base_ms);
  if (cfg.mock) {
    return gateway::Gateway(
        make_mock_backend(cfg, role),
        gateway::RetryPolicy{retry.max_attempts, std::chrono::milliseconds(1), retry.jitter});
  }
  return gateway::Gateway(std::make_shared<gateway::HttpBackend>(cfg.endpoint), retry);
}

inline std::filesystem::path corpus_path_for_variant(const config::RunConfig& cfg) {
  RunPaths paths = run_paths(cfg);
  if (cfg.variant == "normal") return cfg.corpus_path;
  if (cfg.variant == "anonymized") return paths.anonymized_corpus();
  if (cfg.variant == "half") return paths.half_corpus();
  throw ConfigError("unknown variant \"" + cfg.variant + "\" (normal|anonymized|half)");
}

inline std::vector<corpus::Session> load_variant_corpus(const config::RunConfig& cfg) {
  std::filesystem::path path = corpus_path_for_variant(cfg);
  if (!std::filesystem::exists(path)) {
    std::string hint = cfg.variant == "normal"       ? "pass --corpus or set \"corpus\" in the config"
                       : cfg.variant == "anonymized" ? "run `kgattach anonymize` first"
                                                     : "run `kgattach mix` first";
    throw MissingArtifactError(path, hint);
  }
  return corpus::load_corpus(path);
}

// ---- ingest -----------------------------------------------------------------

inline int cmd_ingest(const config::RunConfig& cfg) {
  if (cfg.corpus_path.empty() || !std::filesystem::exists(cfg.corpus_path)) {
    throw MissingArtifactError(cfg.corpus_path.empty() ? "<corpus>" : cfg.corpus_path,
                               "pass --corpus or set \"corpus\" in the config");
  }
  RunPaths paths = run_paths(cfg);
  std::vector<corpus::Session> sessions = corpus::load_corpus(cfg.corpus_path);
  std::vector<corpus::EvalUnit> units = corpus::segment(sessions);
  corpus::save_corpus(paths.corpus_validated(), sessions);

  std::size_t n_turns = 0, n_assistant = 0, n_triplets = 0;
  for (const corpus::Session& s : sessions) {
    n_turns += s.turns.size();
    n_triplets += s.subgraph.size();
    for (const corpus::Turn& t : s.turns) {
      if (t.speaker == corpus::Speaker::Assistant) ++n_assistant;
    }
  }
  json summary = {{"n_sessions", sessions.size()},
                  {"n_turns", n_turns},
                  {"n_assistant_turns", n_assistant},
                  {"n_units", units.size()},
                  {"n_unique_triplets", n_triplets}};
  io::write_file(paths.units_summary(), summary.dump(2) + "\n");
  std::printf("ingested %zu sessions, %zu turns -> %zu eval units (%zu unique triplets)\n",
              sessions.size(), n_turns, units.size(), n_triplets);
  return 0;
}

// ---- generate ---------------------------------------------------------------

inline int cmd_generate(const config::RunConfig& cfg) {
  RunPaths paths = run_paths(cfg);
  std::vector<corpus::Session> sessions = load_variant_corpus(cfg);
  std::vector<corpus::EvalUnit> units = corpus::segment(sessions);
  if (units.empty()) throw Error("corpus yields no eval units");
  if (cfg.knowledge_scope == "session") {
    // Condition prompts on the whole session subgraph instead of only the
    // target turn's triplets. Scoring still questions the turn's triplets.
    std::map<std::string, const corpus::Session*> by_id;
    for (const corpus::Session& s : sessions) by_id[s.session_id] = &s;
    for (corpus::EvalUnit& unit : units) unit.triplets = by_id.at(unit.session_id)->subgraph;
  }

  gen::PromptStyle style = gen::style_from_name(cfg.style, cfg.reasoning.generator);
  gateway::Gateway gw = make_gateway(cfg, "generator");
  std::vector<gen::GeneratedResponse> responses =
      gen::generate(units, style, cfg.variant, gw, cfg.generation, cfg.models.generator);
  gen::save_responses(paths.responses(cfg.models.generator, cfg.style, cfg.variant), responses);

  std::size_t failed = 0;
  for (const gen::GeneratedResponse& r : responses) failed += r.failed ? 1 : 0;
  std::printf("generated %zu responses (%zu flagged failed) -> %s\n", responses.size(), failed,
              paths.responses(cfg.models.generator, cfg.style, cfg.variant).string().c_str());
  return 0;
}

// ---- anonymize ----------------------------------------------------------------

struct AnonymizeCorpusResult {
  std::vector<anon::AnonymizedSession> anonymized;  // corpus order, exclusions removed
  std::vector<std::pair<std::string, std::string>> excluded;  // session_id, error
};

// Two passes through the gateway: everything once, then one whole retry for
// sessions whose output failed to parse; still-failing sessions are excluded.
inline AnonymizeCorpusResult anonymize_corpus(const std::vector<corpus::Session>& sessions,
                                              const gateway::Gateway& gw,
                                              const gateway::SamplingParams& params,
                                              const std::string& model_id,
                                              bool reasoning_suffix,
                                              bool bracketed_ids = true) {
  auto make_request = [&](const corpus::Session& s) {
    gateway::LlmRequest req;
    req.prompt = anon::render_anon_prompt(s, reasoning_suffix);
    req.params = params;
    req.model_id = model_id;
    req.tag = "anon:" + s.session_id;
    return req;
  };

  std::vector<std::optional<anon::AnonymizedSession>> slots(sessions.size());
  std::vector<std::string> errors(sessions.size());
  std::vector<std::size_t> pending(sessions.size());
  for (std::size_t i = 0; i < sessions.size(); ++i) pending[i] = i;

  for (int round = 0; round < 2 && !pending.empty(); ++round) {
    std::vector<gateway::LlmRequest> requests;
    requests.reserve(pending.size());
    for (std::size_t idx : pending) requests.push_back(make_request(sessions[idx]));
    std::vector<gateway::Gateway::BatchResult> batch = gw.complete_batch(requests);
    std::vector<std::size_t> still_failing;
    for (std::size_t k = 0; k < pending.size(); ++k) {
      std::size_t idx = pending[k];
      if (!batch[k].ok) {
        errors[idx] = batch[k].error;
        still_failing.push_back(idx);
        continue;
      }
      try {
        slots[idx] = anon::compose_anonymized(sessions[idx], batch[k].response.visible_text,
                                              nullptr, bracketed_ids);
      } catch (const std::exception& ex) {
        errors[idx] = ex.what();
        still_failing.push_back(idx);
      }
    }
    pending = std::move(still_failing);
  }

  AnonymizeCorpusResult result;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    if (slots[i]) {
      result.anonymized.push_back(std::move(*slots[i]));
    } else {
      result.excluded.emplace_back(sessions[i].session_id, errors[i]);
    }
  }
  return result;
}

inline int cmd_anonymize(const config::RunConfig& cfg) {
  RunPaths paths = run_paths(cfg);
  if (cfg.corpus_path.empty() || !std::filesystem::exists(cfg.corpus_path)) {
    throw MissingArtifactError(cfg.corpus_path.empty() ? "<corpus>" : cfg.corpus_path,
                               "pass --corpus or set \"corpus\" in the config");
  }
  std::vector<corpus::Session> sessions = corpus::load_corpus(cfg.corpus_path);
  gateway::Gateway gw = make_gateway(cfg, "anonymizer");
  AnonymizeCorpusResult result =
      anonymize_corpus(sessions, gw, cfg.anonymization, cfg.models.anonymizer,
                       cfg.reasoning.anonymizer, cfg.anon_bracketed_ids);

  std::vector<corpus::Session> anonymized;
  std::vector<anon::EntityMapping> mappings;
  std::size_t residuals = 0;
  for (const anon::AnonymizedSession& a : result.anonymized) {
    anonymized.push_back(a.session);
    mappings.push_back(a.mapping);
    residuals += a.residual_mentions.size();
  }
  corpus::save_corpus(paths.anonymized_corpus(), anonymized);
  anon::save_mappings(paths.mappings(), mappings);

  json exclusions = json::array();
  for (const auto& [session_id, error] : result.excluded) {
    exclusions.push_back({{"session_id", session_id}, {"error", error}});
    std::fprintf(stderr, "excluded session %s: %s\n", session_id.c_str(), error.c_str());
  }
  io::write_file(paths.exclusions(), exclusions.dump(2) + "\n");

  std::printf("anonymized %zu/%zu sessions (%zu excluded, %zu residual mentions) -> %s\n",
              anonymized.size(), sessions.size(), result.excluded.size(), residuals,
              paths.anonymized_corpus().string().c_str());
  return 0;
}

// ---- mix ---------------------------------------------------------------------

inline int cmd_mix(const config::RunConfig& cfg) {
  RunPaths paths = run_paths(cfg);
  if (cfg.corpus_path.empty() || !std::filesystem::exists(cfg.corpus_path)) {
    throw MissingArtifactError(cfg.corpus_path.empty() ? "<corpus>" : cfg.corpus_path,
                               "pass --corpus or set \"corpus\" in the config");
  }
  if (!std::filesystem::exists(paths.anonymized_corpus())) {
    throw MissingArtifactError(paths.anonymized_corpus(), "run `kgattach anonymize` first");
  }
  std::vector<corpus::Session> normal = corpus::load_corpus(cfg.corpus_path);
  std::vector<corpus::Session> anonymized = corpus::load_corpus(paths.anonymized_corpus());
  std::vector<anon::MixEntry> mix = anon::build_half_mix(normal, anonymized, cfg.seed);

  std::vector<json> rows;
  std::size_t n_normal = 0;
  for (const anon::MixEntry& entry : mix) {
    json row = corpus::session_to_json(entry.session);
    row["provenance"] = std::string(anon::provenance_label(entry.provenance));
    rows.push_back(std::move(row));
    if (entry.provenance == anon::Provenance::Normal) ++n_normal;
  }
  io::write_jsonl(paths.half_corpus(), rows);
  std::printf("half mix: %zu normal + %zu anonymized (seed %llu) -> %s\n", n_normal,
              mix.size() - n_normal, static_cast<unsigned long long>(cfg.seed),
              paths.half_corpus().string().c_str());
  return 0;
}

// ---- synth -------------------------------------------------------------------

inline int cmd_synth(const config::RunConfig& cfg, std::size_t count = 20000) {
  RunPaths paths = run_paths(cfg);
  if (cfg.corpus_path.empty() || !std::filesystem::exists(cfg.corpus_path)) {
    throw MissingArtifactError(cfg.corpus_path.empty() ? "<corpus>" : cfg.corpus_path,
                               "pass --corpus or set \"corpus\" in the config");
  }
  std::vector<corpus::Session> sessions = corpus::load_corpus(cfg.corpus_path);
  std::vector<corpus::Triplet> triplets;
  std::set<corpus::Triplet> seen;
  for (const corpus::Session& s : sessions) {
    for (const corpus::Triplet& t : s.subgraph) {
      if (triplets.size() >= count) break;
      if (seen.insert(t).second) triplets.push_back(t);
    }
  }
  std::vector<kat::KatItem> items = kat::build_synthetic(triplets);
  kat::save_items(paths.synthetic(), items);
  std::printf("built %zu designed-unanswerable items -> %s\n", items.size(),
              paths.synthetic().string().c_str());
  return 0;
}

// ---- kat ----------------------------------------------------------------------

struct ExtractionRun {
  std::vector<kat::KatPrediction> predictions;  // item order
  std::size_t retried_batches = 0;
};

// Sends items in 20-item batches; a batch with any unparseable line is retried
// once whole, after which failures stand and surface as parse_failure_rate.
inline ExtractionRun run_extraction(const std::vector<kat::KatItem>& items,
                                    const gateway::Gateway& gw,
                                    const gateway::SamplingParams& params,
                                    const std::string& model_id, bool reasoning_suffix) {
  struct Batch {
    std::size_t first = 0, count = 0;
    std::vector<long> expected;
  };
  std::vector<Batch> batches;
  for (std::size_t i = 0; i < items.size(); i += kat::kBatchSize) {
    Batch b;
    b.first = i;
    b.count = std::min(kat::kBatchSize, items.size() - i);
    for (std::size_t k = i; k < i + b.count; ++k) b.expected.push_back(items[k].item_id);
    batches.push_back(std::move(b));
  }

  auto make_request = [&](const Batch& b) {
    gateway::LlmRequest req;
    req.prompt = kat::render_kat_batch(
        std::span<const kat::KatItem>(items.data() + b.first, b.count), reasoning_suffix);
    req.params = params;
    req.model_id = model_id;
    req.tag = "kat:" + std::to_string(b.expected.front()) + "-" +
              std::to_string(b.expected.back());
    return req;
  };

  auto parse_batch = [&](const Batch& b, const gateway::Gateway::BatchResult& r,
                         bool* any_failure) {
    std::vector<kat::KatPrediction> preds;
    if (r.ok) {
      preds = kat::parse_kat_batch(r.response.visible_text, b.expected);
    } else {
      for (long id : b.expected) {
        kat::KatPrediction p;
        p.item_id = id;
        p.parse_ok = false;
        preds.push_back(p);
      }
    }
    *any_failure = false;
    for (const kat::KatPrediction& p : preds) {
      if (!p.parse_ok) *any_failure = true;
    }
    return preds;
  };

  std::vector<gateway::LlmRequest> requests;
  requests.reserve(batches.size());
  for (const Batch& b : batches) requests.push_back(make_request(b));
  std::vector<gateway::Gateway::BatchResult> round1 = gw.complete_batch(requests);

  ExtractionRun run;
  run.predictions.resize(items.size());
  std::vector<std::size_t> retry_indices;
  std::vector<std::vector<kat::KatPrediction>> parsed(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    bool any_failure = false;
    parsed[i] = parse_batch(batches[i], round1[i], &any_failure);
    if (any_failure) retry_indices.push_back(i);
  }
  if (!retry_indices.empty()) {
    std::vector<gateway::LlmRequest> retry_requests;
    retry_requests.reserve(retry_indices.size());
    for (std::size_t i : retry_indices) retry_requests.push_back(make_request(batches[i]));
    std::vector<gateway::Gateway::BatchResult> round2 = gw.complete_batch(retry_requests);
    for (std::size_t k = 0; k < retry_indices.size(); ++k) {
      bool any_failure = false;
      std::vector<kat::KatPrediction> retried =
          parse_batch(batches[retry_indices[k]], round2[k], &any_failure);
      parsed[retry_indices[k]] = std::move(retried);
      ++run.retried_batches;
    }
  }
  for (std::size_t i = 0; i < batches.size(); ++i) {
    for (std::size_t k = 0; k < batches[i].count; ++k) {
      run.predictions[batches[i].first + k] = parsed[i][k];
    }
  }
  return run;
}

inline int cmd_kat(const config::RunConfig& cfg, bool synthetic = false) {
  RunPaths paths = run_paths(cfg);
  gateway::Gateway gw = make_gateway(cfg, "extractor");
  const std::string started = iso8601_now();

  std::vector<kat::KatItem> items;
  if (synthetic) {
    if (!std::filesystem::exists(paths.synthetic())) {
      throw MissingArtifactError(paths.synthetic(), "run `kgattach synth` first");
    }
    items = kat::load_items(paths.synthetic());
  } else {
    std::filesystem::path responses_file =
        paths.responses(cfg.models.generator, cfg.style, cfg.variant);
    if (!std::filesystem::exists(responses_file)) {
      throw MissingArtifactError(responses_file, "run `kgattach generate` first");
    }
    std::vector<corpus::Session> sessions = load_variant_corpus(cfg);
    std::vector<corpus::EvalUnit> units = corpus::segment(sessions);
    std::vector<gen::GeneratedResponse> responses = gen::load_responses(responses_file);
    items = kat::build_items(responses, units, kat::mask_side_from_name(cfg.mask));
  }
  if (items.empty()) throw Error("no items to score");

  ExtractionRun run = run_extraction(items, gw, cfg.extraction, cfg.models.extractor,
                                     cfg.reasoning.extractor);

  std::vector<json> score_rows;
  score_rows.reserve(items.size());
  std::vector<kat::KatScore> scores = kat::score_all(items, run.predictions);
  for (std::size_t i = 0; i < items.size(); ++i) {
    score_rows.push_back(kat::score_row_to_json(items[i], scores[i]));
  }
  io::write_jsonl(paths.scores(), score_rows);

  if (synthetic) {
    kat::RobustnessReport robustness = kat::robustness_report(items, run.predictions);
    json out = {{"imp_rate", robustness.imp_rate},
                {"fp_rate", robustness.fp_rate},
                {"parse_failure_rate", robustness.parse_failure_rate},
                {"n_items", robustness.n_items}};
    io::write_file(paths.robustness(), out.dump(2) + "\n");
    std::printf("synthetic robustness over %zu items: IMP %.2f / FP %.2f (parse failures %.2f)\n",
                robustness.n_items, robustness.imp_rate, robustness.fp_rate,
                robustness.parse_failure_rate);
    return 0;
  }

  kat::AggregateReport agg = kat::aggregate(items, scores, cfg.exclude_impossible);
  io::write_file(paths.report_json(), kat::report_to_json(agg).dump(2) + "\n");

  report::RunRecord record;
  record.model_id = cfg.models.generator;
  record.dataset_variant = cfg.variant;
  record.prompt_style = cfg.style;
  record.metrics = agg;
  record.started_at = started;
  record.finished_at = iso8601_now();
  record.config_hash = config::config_hash(cfg);
  io::write_file(paths.run_record(), report::record_to_json(record).dump(2) + "\n");
  io::write_file(paths.tables() / "report.md", report::export_markdown({record}));
  io::write_file(paths.tables() / "report.csv", report::export_csv({record}));

  std::printf("scored %zu items over %zu turns / %zu sessions: F1/turn %.2f, F1/session %.2f"
              " (impossible %.2f%%, parse failures %.2f%%, %zu batches retried)\n",
              agg.n_items, agg.n_turns, agg.n_sessions, agg.f1_per_turn, agg.f1_per_session,
              100.0 * agg.impossible_rate, 100.0 * agg.parse_failure_rate, run.retried_batches);
  return 0;
}

// ---- judge -------------------------------------------------------------------

inline int cmd_judge(const config::RunConfig& cfg, bool raw_anonymized = false) {
  RunPaths paths = run_paths(cfg);
  if (cfg.corpus_path.empty() || !std::filesystem::exists(cfg.corpus_path)) {
    throw MissingArtifactError(cfg.corpus_path.empty() ? "<corpus>" : cfg.corpus_path,
                               "pass --corpus or set \"corpus\" in the config");
  }
  std::filesystem::path normal_file =
      paths.responses(cfg.models.generator, cfg.style, "normal");
  std::filesystem::path anon_file =
      paths.responses(cfg.models.generator, cfg.style, "anonymized");
  if (!std::filesystem::exists(normal_file)) {
    throw MissingArtifactError(normal_file, "run `kgattach generate --variant normal` first");
  }
  if (!std::filesystem::exists(anon_file)) {
    throw MissingArtifactError(anon_file, "run `kgattach generate --variant anonymized` first");
  }

  std::vector<corpus::Session> sessions = corpus::load_corpus(cfg.corpus_path);
  std::vector<corpus::EvalUnit> units = corpus::segment(sessions);
  std::map<std::pair<std::string, int>, const corpus::EvalUnit*> unit_by_key;
  for (const corpus::EvalUnit& u : units) unit_by_key[{u.session_id, u.turn_index}] = &u;

  std::map<std::string, anon::EntityMapping> mapping_by_session;
  if (!raw_anonymized && std::filesystem::exists(paths.mappings())) {
    for (anon::EntityMapping& m : anon::load_mappings(paths.mappings())) {
      mapping_by_session[m.session_id] = std::move(m);
    }
  }

  auto index_responses = [](const std::vector<gen::GeneratedResponse>& responses) {
    std::map<std::pair<std::string, int>, const gen::GeneratedResponse*> out;
    for (const gen::GeneratedResponse& r : responses) {
      if (!r.failed && !r.text.empty()) out[{r.session_id, r.turn_index}] = &r;
    }
    return out;
  };
  std::vector<gen::GeneratedResponse> normal_responses = gen::load_responses(normal_file);
  std::vector<gen::GeneratedResponse> anon_responses = gen::load_responses(anon_file);
  auto normal_by_key = index_responses(normal_responses);
  auto anon_by_key = index_responses(anon_responses);

  std::vector<judge::PairedResponses> pairs;
  std::size_t skipped = 0;
  for (const auto& [key, unit] : unit_by_key) {
    auto n = normal_by_key.find(key);
    auto a = anon_by_key.find(key);
    if (n == normal_by_key.end() || a == anon_by_key.end()) {
      ++skipped;
      continue;
    }
    judge::PairedResponses pair;
    pair.session_id = key.first;
    pair.turn_index = key.second;
    pair.history = corpus::render_history(unit->history);
    pair.triplets = unit->triplets;
    pair.normal_text = n->second->text;
    pair.anonymized_text = a->second->text;
    if (auto it = mapping_by_session.find(key.first); it != mapping_by_session.end()) {
      pair.anonymized_text = anon::reverse_text(pair.anonymized_text, it->second);
    }
    pairs.push_back(std::move(pair));
  }
  if (pairs.empty()) throw Error("no (normal, anonymized) response pairs to judge");

  std::vector<judge::JudgeItem> items = judge::build_items(pairs, cfg.seed);
  std::vector<gateway::LlmRequest> requests;
  requests.reserve(items.size());
  for (const judge::JudgeItem& item : items) {
    gateway::LlmRequest req;
    req.prompt = judge::render_judge_prompt(item, cfg.reasoning.judge);
    req.params = cfg.judging;
    req.model_id = cfg.models.judge;
    req.tag = "judge:" + gen::request_tag(item.session_id, item.turn_index);
    requests.push_back(std::move(req));
  }
  gateway::Gateway gw = make_gateway(cfg, "judge");
  std::vector<gateway::Gateway::BatchResult> batch = gw.complete_batch(requests);

  std::vector<judge::JudgeVerdict> verdicts;
  verdicts.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    verdicts.push_back(
        judge::make_verdict(items[i], batch[i].ok ? batch[i].response.visible_text : ""));
  }
  judge::save_verdicts(paths.verdicts(), verdicts);
  judge::Tally tally = judge::tally(verdicts);
  io::write_file(paths.tables() / "judge_summary.md",
                 judge::tally_markdown(tally, cfg.models.generator));
  io::write_file(paths.tables() / "judge_summary.csv",
                 judge::tally_csv(tally, cfg.models.generator));
  std::printf("judged %zu pairs (%zu skipped): normal %.2f%% / tie %.2f%% / anonymized %.2f%%"
              " (invalid %.2f%%)\n",
              verdicts.size(), skipped, tally.normal_pct, tally.tie_pct, tally.anonymized_pct,
              tally.invalid_pct);
  return 0;
}

// ---- report ------------------------------------------------------------------

inline int cmd_report(const config::RunConfig& cfg,
                      const std::vector<std::string>& run_dirs,
                      const std::string& baseline_variant = "normal",
                      const std::vector<std::string>& formats = {"markdown", "csv", "json"}) {
  RunPaths out = run_paths(cfg);
  std::vector<report::RunRecord> records;
  for (const std::string& dir : run_dirs) {
    std::filesystem::path record_path = std::filesystem::path(dir) / "run_record.json";
    if (!std::filesystem::exists(record_path)) {
      throw MissingArtifactError(record_path, "run `kgattach kat` in that run directory first");
    }
    records.push_back(report::record_from_json(json::parse(io::read_file(record_path))));
  }
  if (records.empty()) throw Error("no run records given");

  std::string markdown = report::delta_table_markdown(records, baseline_variant);
  io::write_file(out.tables() / "delta_table.md", markdown);
  io::write_file(out.tables() / "delta_table.csv",
                 report::delta_table_csv(records, baseline_variant));
  for (const std::string& format : formats) {
    report::export_records(records, out.tables(), format);
  }
  std::fputs(markdown.c_str(), stdout);
  return 0;
}

}  // namespace kgattach::commands
