#pragma once

#include <string>
#include <vector>

#include "meftlab/train.hpp"

namespace meftlab {

inline constexpr const char* kCsvHeader =
    "method,trainable_ratio_pct,peak_retained_bytes,est_footprint_bytes,backward_flops,step_ms,accuracy_pct,lr";

/// One CSV line (no newline). In deterministic mode step_ms is written as 0
/// so that repeated runs are byte-identical; the JSON keeps the timing.
std::string csv_row(const TrainReport& r, bool deterministic);
std::string report_json(const TrainReport& r, bool deterministic);

struct CsvRow {
  std::string method;
  double trainable_ratio_pct{0.0};
  double peak_retained_bytes{0.0};
  double est_footprint_bytes{0.0};
  double backward_flops{0.0};
  double step_ms{0.0};
  double accuracy_pct{0.0};
  double lr{0.0};
  std::string status{"ok"};
  std::string source;  // "file:line"
};

/// Parses a report or sweep CSV (optional trailing status column). Throws
/// std::runtime_error naming the source and line number on malformed input.
std::vector<CsvRow> parse_csv(const std::string& text, const std::string& source);

enum class Group { Baseline, Peft, Meft };
Group group_of(const std::string& method);

struct Verdict {
  std::string name;
  std::string outcome;  // PASS, FAIL or SKIP
  std::string detail;
};

/// Memory orderings over rows with status ok:
/// MEFT < PEFT < vanilla by peak retained bytes, LST strictly decreasing in RF,
/// and head tuning below every other method in accuracy.
std::vector<Verdict> ordering_verdicts(const std::vector<CsvRow>& rows);

/// Markdown table (baselines, PEFT block, MEFT block) followed by verdict lines.
std::string render_report(const std::vector<CsvRow>& rows);

}  // namespace meftlab
