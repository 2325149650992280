#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "kgattach/common.hpp"
#include "kgattach/kat_eval.hpp"

namespace kgattach::report {

struct RunRecord {
  std::string model_id;
  std::string dataset_variant;  // normal | half | anonymized
  std::string prompt_style;
  kat::AggregateReport metrics;
  std::string started_at;   // ISO-8601; kept out of deterministic artifacts
  std::string finished_at;
  std::string config_hash;
};

inline double round2(double v) {
  return std::round(v * 100.0) / 100.0;
}

inline std::string format_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// Signed delta against a baseline, computed on the 2-decimal renderings so the
// delta column always agrees with the displayed values. Negative zero is
// normalized away.
inline std::string format_delta(double baseline, double value) {
  double delta = round2(round2(value) - round2(baseline));
  if (delta == 0.0) delta = 0.0;  // -0.00 -> +0.00
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%+.2f", delta);
  return buf;
}

inline json record_to_json(const RunRecord& r) {
  return {{"model_id", r.model_id},
          {"dataset_variant", r.dataset_variant},
          {"prompt_style", r.prompt_style},
          {"metrics", kat::report_to_json(r.metrics)},
          {"started_at", r.started_at},
          {"finished_at", r.finished_at},
          {"config_hash", r.config_hash}};
}

inline RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.model_id = j.value("model_id", "");
  r.dataset_variant = j.value("dataset_variant", "");
  r.prompt_style = j.value("prompt_style", "");
  if (j.contains("metrics")) r.metrics = kat::report_from_json(j["metrics"]);
  r.started_at = j.value("started_at", "");
  r.finished_at = j.value("finished_at", "");
  r.config_hash = j.value("config_hash", "");
  return r;
}

namespace detail {

inline int variant_rank(std::string_view v) {
  if (v == "normal") return 0;
  if (v == "half") return 1;
  if (v == "anonymized") return 2;
  return 3;
}

struct Row {
  const RunRecord* record;
  bool is_baseline;
  const RunRecord* baseline;
};

// Groups records by (model, prompt style), baseline first then the
// normal -> half -> anonymized progression.
inline std::vector<Row> layout_rows(const std::vector<RunRecord>& records,
                                    std::string_view baseline_variant) {
  std::map<std::pair<std::string, std::string>, std::vector<const RunRecord*>> groups;
  for (const RunRecord& r : records) {
    groups[{r.model_id, r.prompt_style}].push_back(&r);
  }
  std::vector<Row> rows;
  for (auto& [key, group] : groups) {
    const RunRecord* baseline = nullptr;
    for (const RunRecord* r : group) {
      if (r->dataset_variant == baseline_variant) baseline = r;
    }
    if (!baseline) {
      throw Error("missing baseline variant \"" + std::string(baseline_variant) +
                  "\" for model \"" + key.first + "\" style \"" + key.second + "\"");
    }
    std::stable_sort(group.begin(), group.end(), [](const RunRecord* a, const RunRecord* b) {
      if (variant_rank(a->dataset_variant) != variant_rank(b->dataset_variant)) {
        return variant_rank(a->dataset_variant) < variant_rank(b->dataset_variant);
      }
      return a->dataset_variant < b->dataset_variant;
    });
    for (const RunRecord* r : group) {
      rows.push_back({r, r == baseline, baseline});
    }
  }
  return rows;
}

inline std::string cell(const Row& row, double baseline_value, double value) {
  std::string out = format_pct(round2(value));
  if (!row.is_baseline) out += " (" + format_delta(baseline_value, value) + ")";
  return out;
}

}  // namespace detail

// F1 per turn/session with signed deltas against the baseline variant, in the
// familiar model x dataset table layout.
inline std::string delta_table_markdown(const std::vector<RunRecord>& records,
                                        std::string_view baseline_variant = "normal") {
  std::vector<detail::Row> rows = detail::layout_rows(records, baseline_variant);
  std::string out;
  out += "| Model | Prompt | Dataset | F1 Per Turn | F1 Per Session |\n";
  out += "|---|---|---|---|---|\n";
  for (const detail::Row& row : rows) {
    const RunRecord& r = *row.record;
    const kat::AggregateReport& base = row.baseline->metrics;
    out += "| " + r.model_id + " | " + r.prompt_style + " | " + r.dataset_variant + " | " +
           detail::cell(row, base.f1_per_turn, r.metrics.f1_per_turn) + " | " +
           detail::cell(row, base.f1_per_session, r.metrics.f1_per_session) + " |\n";
  }
  return out;
}

inline std::string delta_table_csv(const std::vector<RunRecord>& records,
                                   std::string_view baseline_variant = "normal") {
  std::vector<detail::Row> rows = detail::layout_rows(records, baseline_variant);
  std::string out =
      "model,prompt_style,dataset_variant,f1_per_turn,f1_per_turn_delta,"
      "f1_per_session,f1_per_session_delta\n";
  for (const detail::Row& row : rows) {
    const RunRecord& r = *row.record;
    const kat::AggregateReport& base = row.baseline->metrics;
    out += r.model_id + "," + r.prompt_style + "," + r.dataset_variant + ",";
    out += format_pct(round2(r.metrics.f1_per_turn)) + ",";
    out += (row.is_baseline ? std::string("") : format_delta(base.f1_per_turn,
                                                             r.metrics.f1_per_turn)) + ",";
    out += format_pct(round2(r.metrics.f1_per_session)) + ",";
    out += (row.is_baseline ? std::string("") : format_delta(base.f1_per_session,
                                                             r.metrics.f1_per_session));
    out += "\n";
  }
  return out;
}

// Flat per-record exports with a stable column order.

inline std::string export_csv(const std::vector<RunRecord>& records) {
  std::string out =
      "model_id,prompt_style,dataset_variant,f1_per_turn,f1_per_session,"
      "impossible_rate,parse_failure_rate,n_turns,n_sessions,n_items,config_hash\n";
  for (const RunRecord& r : records) {
    out += r.model_id + "," + r.prompt_style + "," + r.dataset_variant + ",";
    out += format_pct(round2(r.metrics.f1_per_turn)) + ",";
    out += format_pct(round2(r.metrics.f1_per_session)) + ",";
    out += format_pct(round2(100.0 * r.metrics.impossible_rate)) + ",";
    out += format_pct(round2(100.0 * r.metrics.parse_failure_rate)) + ",";
    out += std::to_string(r.metrics.n_turns) + "," + std::to_string(r.metrics.n_sessions) + "," +
           std::to_string(r.metrics.n_items) + "," + r.config_hash + "\n";
  }
  return out;
}

inline std::string export_markdown(const std::vector<RunRecord>& records) {
  std::string out;
  out += "| Model | Prompt | Dataset | F1 Per Turn | F1 Per Session | Impossible (%) | Parse"
         " Failures (%) |\n";
  out += "|---|---|---|---|---|---|---|\n";
  for (const RunRecord& r : records) {
    out += "| " + r.model_id + " | " + r.prompt_style + " | " + r.dataset_variant + " | " +
           format_pct(round2(r.metrics.f1_per_turn)) + " | " +
           format_pct(round2(r.metrics.f1_per_session)) + " | " +
           format_pct(round2(100.0 * r.metrics.impossible_rate)) + " | " +
           format_pct(round2(100.0 * r.metrics.parse_failure_rate)) + " |\n";
  }
  return out;
}

inline std::string export_json(const std::vector<RunRecord>& records) {
  json arr = json::array();
  for (const RunRecord& r : records) arr.push_back(record_to_json(r));
  return arr.dump(2) + "\n";
}

inline void export_records(const std::vector<RunRecord>& records,
                           const std::filesystem::path& dir, std::string_view format) {
  if (format == "csv") {
    io::write_file(dir / "runs.csv", export_csv(records));
  } else if (format == "markdown") {
    io::write_file(dir / "runs.md", export_markdown(records));
  } else if (format == "json") {
    io::write_file(dir / "runs.json", export_json(records));
  } else {
    throw ConfigError("unknown export format \"" + std::string(format) + "\"");
  }
}

}  // namespace kgattach::report
