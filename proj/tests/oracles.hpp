#pragma once

// Brute-force reference implementations used to cross-check the library.
// Everything here favors obviousness over speed: exhaustive matching,
// memoized recursion, direct formula evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace oracles {

using Tokens = std::vector<std::string>;

inline std::vector<Tokens> slice_ngrams(const Tokens& toks, int n) {
  std::vector<Tokens> out;
  if (n < 1 || toks.size() < static_cast<std::size_t>(n)) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    out.emplace_back(toks.begin() + i, toks.begin() + i + n);
  }
  return out;
}

// Clipped n-gram matches by literal list erasure: every candidate n-gram
// consumes at most one matching reference n-gram.
inline int clipped_matches(const Tokens& cand, const Tokens& ref, int n) {
  auto cand_grams = slice_ngrams(cand, n);
  auto ref_grams = slice_ngrams(ref, n);
  int matches = 0;
  for (const auto& g : cand_grams) {
    const auto it = std::find(ref_grams.begin(), ref_grams.end(), g);
    if (it != ref_grams.end()) {
      ref_grams.erase(it);
      ++matches;
    }
  }
  return matches;
}

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline Prf prf(double matches, double cand_total, double ref_total) {
  Prf out;
  out.precision = cand_total > 0.0 ? matches / cand_total : 0.0;
  out.recall = ref_total > 0.0 ? matches / ref_total : 0.0;
  out.f1 = (out.precision + out.recall) > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

inline Prf rouge_n(const Tokens& cand, const Tokens& ref, int n) {
  const auto cand_total = static_cast<double>(slice_ngrams(cand, n).size());
  const auto ref_total = static_cast<double>(slice_ngrams(ref, n).size());
  return prf(clipped_matches(cand, ref, n), cand_total, ref_total);
}

inline int lcs_recursive(const Tokens& a, const Tokens& b, std::size_t i, std::size_t j,
                         std::map<std::pair<std::size_t, std::size_t>, int>& memo) {
  if (i == a.size() || j == b.size()) return 0;
  const auto key = std::make_pair(i, j);
  const auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  int best;
  if (a[i] == b[j]) {
    best = 1 + lcs_recursive(a, b, i + 1, j + 1, memo);
  } else {
    best = std::max(lcs_recursive(a, b, i + 1, j, memo), lcs_recursive(a, b, i, j + 1, memo));
  }
  memo[key] = best;
  return best;
}

inline Prf rouge_l(const Tokens& cand, const Tokens& ref) {
  std::map<std::pair<std::size_t, std::size_t>, int> memo;
  const int lcs = lcs_recursive(cand, ref, 0, 0, memo);
  return prf(lcs, static_cast<double>(cand.size()), static_cast<double>(ref.size()));
}

// Sentence BLEU, max order 4: clipped precisions with add-one smoothing only
// on zero-match orders, orders longer than the candidate excluded from the
// geometric mean, brevity penalty exp(1 - |ref|/|cand|) when the candidate is
// shorter, scaled by 100.
inline double bleu(const Tokens& cand, const Tokens& ref) {
  if (cand.empty()) return 0.0;
  double log_sum = 0.0;
  int included = 0;
  for (int n = 1; n <= 4; ++n) {
    const auto total = static_cast<double>(slice_ngrams(cand, n).size());
    if (total <= 0.0) continue;
    const double m = clipped_matches(cand, ref, n);
    const double p = m > 0.0 ? m / total : 1.0 / (total + 1.0);
    log_sum += std::log(p);
    ++included;
  }
  if (included == 0) return 0.0;
  const double geo = std::exp(log_sum / included);
  const double bp =
      cand.size() < ref.size()
          ? std::exp(1.0 - static_cast<double>(ref.size()) / static_cast<double>(cand.size()))
          : 1.0;
  return 100.0 * bp * geo;
}

// Okapi scores evaluated term by term straight from the formula; query terms
// deduplicated, iteration order irrelevant because each term is independent.
inline std::vector<double> bm25_scores(const std::vector<Tokens>& docs, const Tokens& query,
                                       double k1, double b) {
  const double n_docs = static_cast<double>(docs.size());
  double avg_len = 0.0;
  for (const auto& d : docs) avg_len += static_cast<double>(d.size());
  avg_len /= n_docs;

  Tokens unique_terms = query;
  std::sort(unique_terms.begin(), unique_terms.end());
  unique_terms.erase(std::unique(unique_terms.begin(), unique_terms.end()), unique_terms.end());

  std::vector<double> scores(docs.size(), 0.0);
  for (const auto& term : unique_terms) {
    double df = 0.0;
    for (const auto& d : docs) {
      if (std::find(d.begin(), d.end(), term) != d.end()) df += 1.0;
    }
    const double idf = std::log((n_docs - df + 0.5) / (df + 0.5) + 1.0);
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const double tf =
          static_cast<double>(std::count(docs[i].begin(), docs[i].end(), term));
      if (tf == 0.0) continue;
      const double dl = static_cast<double>(docs[i].size());
      scores[i] += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avg_len));
    }
  }
  return scores;
}

// Central finite difference of a scalar function along coordinate i.
inline double central_difference(const std::function<double(double)>& f_of_shift, double h) {
  return (f_of_shift(h) - f_of_shift(-h)) / (2.0 * h);
}

}  // namespace oracles
