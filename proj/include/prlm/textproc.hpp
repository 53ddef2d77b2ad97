#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prlm/errors.hpp"

namespace prlm::textproc {

struct TokenSeq {
  std::vector<std::string> tokens;
  std::size_t source_len = 0;  // original char count

  bool operator==(const TokenSeq&) const = default;
};

namespace detail {

inline bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_ascii_punct(unsigned char c) {
  return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') || (c >= '[' && c <= '`') ||
         (c >= '{' && c <= '~');
}

// Lowercases ASCII and the Latin-1 supplement letters; other code points pass
// through byte-for-byte. Deterministic by construction.
inline void append_lowered(std::string& out, std::string_view word) {
  for (std::size_t i = 0; i < word.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(word[i]);
    if (c >= 'A' && c <= 'Z') {
      out.push_back(static_cast<char>(c + 32));
    } else if (c == 0xC3 && i + 1 < word.size()) {
      const unsigned char d = static_cast<unsigned char>(word[i + 1]);
      out.push_back(static_cast<char>(c));
      // U+00C0..U+00DE excluding the multiplication sign U+00D7.
      if (d >= 0x80 && d <= 0x9E && d != 0x97) {
        out.push_back(static_cast<char>(d + 0x20));
      } else {
        out.push_back(static_cast<char>(d));
      }
      ++i;
    } else {
      out.push_back(static_cast<char>(c));
    }
  }
}

}  // namespace detail

// Lowercase, split on whitespace, strip leading/trailing ASCII punctuation,
// drop tokens that end up empty. Pure function, fixed project-wide so metric
// values are comparable across runs.
inline TokenSeq tokenize(std::string_view text) {
  TokenSeq out;
  out.source_len = text.size();
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && detail::is_ascii_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !detail::is_ascii_space(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      std::size_t a = i;
      std::size_t b = j;
      while (a < b && detail::is_ascii_punct(static_cast<unsigned char>(text[a]))) ++a;
      while (b > a && detail::is_ascii_punct(static_cast<unsigned char>(text[b - 1]))) --b;
      if (b > a) {
        std::string tok;
        tok.reserve(b - a);
        detail::append_lowered(tok, text.substr(a, b - a));
        out.tokens.push_back(std::move(tok));
      }
    }
    i = j;
  }
  return out;
}

// Contiguous n-grams with multiplicity. Grams are joined with a 0x1f separator
// so they can key a counts map.
inline std::unordered_map<std::string, int> ngrams(const TokenSeq& seq, int n) {
  if (n < 1) throw InvalidN(n);
  std::unordered_map<std::string, int> counts;
  const std::size_t len = seq.tokens.size();
  if (len < static_cast<std::size_t>(n)) return counts;
  for (std::size_t i = 0; i + n <= len; ++i) {
    std::string key = seq.tokens[i];
    for (int j = 1; j < n; ++j) {
      key.push_back('\x1f');
      key += seq.tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

// A generated output o split into the reasoning trace and the final answer.
struct StructuredOutput {
  std::string raw;
  std::optional<std::string> reasoning;
  std::string answer;
  bool well_formed = false;

  bool operator==(const StructuredOutput&) const = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && is_ascii_space(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && is_ascii_space(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t count = 0;
  std::size_t pos = haystack.find(needle);
  while (pos != std::string_view::npos) {
    ++count;
    pos = haystack.find(needle, pos + needle.size());
  }
  return count;
}

}  // namespace detail

// Canonical think-block grammar: after trimming outer whitespace the text must
// start with <think>, contain exactly one <think> and one </think>, and carry
// a non-empty answer after the close tag. Anything else is a valid
// non-well-formed result with the raw text as the answer. Total on arbitrary
// bytes; never throws.
inline StructuredOutput parse_think(std::string_view raw) {
  constexpr std::string_view kOpen = "<think>";
  constexpr std::string_view kClose = "</think>";

  StructuredOutput out;
  out.raw.assign(raw);

  const std::string_view s = detail::trim(raw);
  const bool starts = s.substr(0, kOpen.size()) == kOpen;
  if (starts && detail::count_occurrences(s, kOpen) == 1 &&
      detail::count_occurrences(s, kClose) == 1) {
    const std::size_t close = s.find(kClose);
    const std::string_view answer = detail::trim(s.substr(close + kClose.size()));
    if (!answer.empty()) {
      out.well_formed = true;
      out.reasoning = std::string(s.substr(kOpen.size(), close - kOpen.size()));
      out.answer.assign(answer);
      return out;
    }
  }
  out.answer.assign(raw);
  return out;
}

}  // namespace prlm::textproc
