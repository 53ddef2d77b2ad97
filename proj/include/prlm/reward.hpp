#pragma once

#include <string>

#include "prlm/errors.hpp"
#include "prlm/metrics.hpp"
#include "prlm/prm.hpp"
#include "prlm/textproc.hpp"

namespace prlm::reward {

// Binary structure reward: 1 when the output carries a well-formed
// <think>...</think> block followed by a non-empty answer, else 0.
inline double format_reward(const textproc::StructuredOutput& parsed) {
  return parsed.well_formed ? 1.0 : 0.0;
}

inline double format_reward(const std::string& raw) {
  return format_reward(textproc::parse_think(raw));
}

// Sum of ROUGE-1, ROUGE-2 and ROUGE-L f1 between the parsed answer and the
// reference. The reasoning block never reaches the overlap computation.
inline double correctness_reward(const std::string& answer, const std::string& reference) {
  if (reference.empty()) throw EmptyReference();
  return metrics::rouge_n(answer, reference, 1).f1 + metrics::rouge_n(answer, reference, 2).f1 +
         metrics::rouge_l(answer, reference).f1;
}

struct RewardWeights {
  double alpha = 0.1;  // weight on the structure term
  double beta = 0.1;   // weight on the personalization term

  bool operator==(const RewardWeights&) const = default;
};

struct RewardBreakdown {
  double correct = 0.0;
  double think = 0.0;
  double personal = 0.0;
  double total = 0.0;

  bool operator==(const RewardBreakdown&) const = default;
};

// r = r_correct + alpha * r_think + beta * r_personal. The personalization
// term scores the full raw output so the scorer sees the same text the
// policy produced; sigma keeps it in (0, 1) regardless of scorer scale.
inline RewardBreakdown composite_reward(const std::string& raw_output,
                                        const std::string& reference, const std::string& query,
                                        const prm::ScorerParams& scorer,
                                        const RewardWeights& w = {}) {
  const auto parsed = textproc::parse_think(raw_output);
  RewardBreakdown out;
  out.correct = correctness_reward(parsed.answer, reference);
  out.think = format_reward(parsed);
  out.personal = prm::personal_reward(scorer, query, raw_output);
  out.total = out.correct + w.alpha * out.think + w.beta * out.personal;
  return out;
}

// Variant with an externally supplied personalization score (already in raw
// score space; squashed here so both paths share the bounding convention).
inline RewardBreakdown composite_reward_external(const std::string& raw_output,
                                                 const std::string& reference,
                                                 double external_score,
                                                 const RewardWeights& w = {}) {
  const auto parsed = textproc::parse_think(raw_output);
  RewardBreakdown out;
  out.correct = correctness_reward(parsed.answer, reference);
  out.think = format_reward(parsed);
  out.personal = prm::stable_sigmoid(external_score);
  out.total = out.correct + w.alpha * out.think + w.beta * out.personal;
  return out;
}

}  // namespace prlm::reward
