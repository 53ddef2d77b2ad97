#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prlm/metrics.hpp"

namespace prlm::report {

using json = nlohmann::json;

struct ReportRow {
  std::string label;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
  double bleu = 0.0;

  bool operator==(const ReportRow&) const = default;
};

inline ReportRow row_from(const std::string& label, const metrics::CorpusReport& r) {
  return ReportRow{label, r.rouge1, r.rouge2, r.rougeL, r.bleu};
}

// Metric order and 2-decimal rendering are fixed; rows use "&" separators so
// the table pastes beside typeset result tables.
inline std::string to_text_table(const std::vector<ReportRow>& rows) {
  std::string out = "method & rouge-1 & rouge-2 & rouge-l & bleu\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s & %.2f & %.2f & %.2f & %.2f\n", r.label.c_str(), r.rouge1,
                  r.rouge2, r.rougeL, r.bleu);
    out += buf;
  }
  return out;
}

inline std::string to_csv(const std::vector<ReportRow>& rows) {
  std::string out = "method,rouge1,rouge2,rougeL,bleu\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.2f,%.2f,%.2f,%.2f\n", r.label.c_str(), r.rouge1,
                  r.rouge2, r.rougeL, r.bleu);
    out += buf;
  }
  return out;
}

// Full-precision variant for downstream tooling.
inline json to_json(const std::vector<ReportRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back(json{{"method", r.label},
                       {"rouge1", r.rouge1},
                       {"rouge2", r.rouge2},
                       {"rougeL", r.rougeL},
                       {"bleu", r.bleu}});
  }
  return arr;
}

}  // namespace prlm::report
