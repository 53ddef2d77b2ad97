#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "prlm/errors.hpp"
#include "prlm/textproc.hpp"

namespace prlm::metrics {

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  bool operator==(const PRF&) const = default;
};

namespace detail {

inline PRF make_prf(double overlap, double cand_total, double ref_total) {
  PRF out;
  out.precision = cand_total > 0.0 ? overlap / cand_total : 0.0;
  out.recall = ref_total > 0.0 ? overlap / ref_total : 0.0;
  const double pr = out.precision + out.recall;
  out.f1 = pr > 0.0 ? 2.0 * out.precision * out.recall / pr : 0.0;
  return out;
}

// Multiset intersection size and the two totals for order-n grams.
struct OverlapCounts {
  long long overlap = 0;
  long long cand_total = 0;
  long long ref_total = 0;
};

inline OverlapCounts ngram_overlap(const textproc::TokenSeq& cand, const textproc::TokenSeq& ref,
                                   int n) {
  OverlapCounts out;
  const auto cand_counts = textproc::ngrams(cand, n);
  const auto ref_counts = textproc::ngrams(ref, n);
  for (const auto& [gram, count] : cand_counts) {
    out.cand_total += count;
    const auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) out.overlap += std::min(count, it->second);
  }
  for (const auto& [gram, count] : ref_counts) out.ref_total += count;
  return out;
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Compensated (Neumaier) summation so aggregate reductions are robust to
// element order.
class KahanSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace detail

// ROUGE-N over multiset n-gram overlap, n in {1,2}.
inline PRF rouge_n(const std::string& candidate, const std::string& reference, int n) {
  if (n < 1 || n > 2) throw InvalidN(n);
  const auto counts =
      detail::ngram_overlap(textproc::tokenize(candidate), textproc::tokenize(reference), n);
  return detail::make_prf(static_cast<double>(counts.overlap),
                          static_cast<double>(counts.cand_total),
                          static_cast<double>(counts.ref_total));
}

// ROUGE-L from the token-level longest common subsequence.
inline PRF rouge_l(const std::string& candidate, const std::string& reference) {
  const auto cand = textproc::tokenize(candidate);
  const auto ref = textproc::tokenize(reference);
  const auto lcs = static_cast<double>(detail::lcs_length(cand.tokens, ref.tokens));
  return detail::make_prf(lcs, static_cast<double>(cand.tokens.size()),
                          static_cast<double>(ref.tokens.size()));
}

struct BleuScore {
  double value = 0.0;                      // [0, 100]
  std::array<double, 4> precisions{};      // smoothed; orders longer than the candidate stay 0
  double brevity_penalty = 1.0;

  bool operator==(const BleuScore&) const = default;
};

// Sentence BLEU, max order 4, clipped precisions, add-one smoothing on any
// order with zero matches. Orders longer than the candidate are skipped from
// the geometric mean. Empty candidate scores 0.
inline BleuScore bleu(const std::string& candidate, const std::string& reference) {
  BleuScore out;
  const auto cand = textproc::tokenize(candidate);
  const auto ref = textproc::tokenize(reference);
  const std::size_t clen = cand.tokens.size();
  const std::size_t rlen = ref.tokens.size();
  if (clen == 0) return out;

  double log_sum = 0.0;
  int orders = 0;
  for (int n = 1; n <= 4; ++n) {
    if (clen < static_cast<std::size_t>(n)) break;
    const auto counts = detail::ngram_overlap(cand, ref, n);
    double p;
    if (counts.overlap == 0) {
      p = 1.0 / (static_cast<double>(counts.cand_total) + 1.0);
    } else {
      p = static_cast<double>(counts.overlap) / static_cast<double>(counts.cand_total);
    }
    out.precisions[static_cast<std::size_t>(n - 1)] = p;
    log_sum += std::log(p);
    ++orders;
  }
  out.brevity_penalty =
      clen < rlen ? std::exp(1.0 - static_cast<double>(rlen) / static_cast<double>(clen)) : 1.0;
  out.value = 100.0 * out.brevity_penalty * std::exp(log_sum / static_cast<double>(orders));
  return out;
}

struct CorpusReport {
  double rouge1 = 0.0;  // mean per-pair f1, x100
  double rouge2 = 0.0;
  double rougeL = 0.0;
  double bleu = 0.0;    // corpus-level (pooled counts), already on the 0-100 scale

  bool operator==(const CorpusReport&) const = default;
};

// ROUGE columns are unweighted means of per-pair f1; BLEU pools clipped n-gram
// counts and lengths across the corpus (no smoothing at corpus level).
inline CorpusReport corpus_report(const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (pairs.empty()) throw EmptyInput("pair list");

  detail::KahanSum r1, r2, rl;
  std::array<long long, 4> matches{};
  std::array<long long, 4> totals{};
  long long cand_len_sum = 0;
  long long ref_len_sum = 0;

  for (const auto& [candidate, reference] : pairs) {
    r1.add(rouge_n(candidate, reference, 1).f1);
    r2.add(rouge_n(candidate, reference, 2).f1);
    rl.add(rouge_l(candidate, reference).f1);

    const auto cand = textproc::tokenize(candidate);
    const auto ref = textproc::tokenize(reference);
    cand_len_sum += static_cast<long long>(cand.tokens.size());
    ref_len_sum += static_cast<long long>(ref.tokens.size());
    for (int n = 1; n <= 4; ++n) {
      const auto counts = detail::ngram_overlap(cand, ref, n);
      matches[static_cast<std::size_t>(n - 1)] += counts.overlap;
      totals[static_cast<std::size_t>(n - 1)] += counts.cand_total;
    }
  }

  CorpusReport out;
  const double count = static_cast<double>(pairs.size());
  out.rouge1 = 100.0 * r1.value() / count;
  out.rouge2 = 100.0 * r2.value() / count;
  out.rougeL = 100.0 * rl.value() / count;

  double log_sum = 0.0;
  int orders = 0;
  bool zero_match = false;
  for (int n = 0; n < 4; ++n) {
    if (totals[static_cast<std::size_t>(n)] == 0) continue;
    if (matches[static_cast<std::size_t>(n)] == 0) {
      zero_match = true;
      break;
    }
    log_sum += std::log(static_cast<double>(matches[static_cast<std::size_t>(n)]) /
                        static_cast<double>(totals[static_cast<std::size_t>(n)]));
    ++orders;
  }
  if (!zero_match && orders > 0 && cand_len_sum > 0) {
    const double bp = cand_len_sum < ref_len_sum
                          ? std::exp(1.0 - static_cast<double>(ref_len_sum) /
                                               static_cast<double>(cand_len_sum))
                          : 1.0;
    out.bleu = 100.0 * bp * std::exp(log_sum / static_cast<double>(orders));
  }
  return out;
}

}  // namespace prlm::metrics
