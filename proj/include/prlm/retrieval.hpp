#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prlm/corpus.hpp"
#include "prlm/errors.hpp"
#include "prlm/rng.hpp"
#include "prlm/textproc.hpp"

namespace prlm::retrieval {

using corpus::ProfileItem;

enum class Strategy { random, recency, bm25, dense };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::recency: return "recency";
    case Strategy::bm25: return "bm25";
    case Strategy::dense: return "dense";
  }
  return "random";
}

struct ScoredItem {
  ProfileItem item;
  double score = 0.0;
};

struct RetrievedContext {
  std::vector<ScoredItem> items;  // score non-increasing, ties by id ascending
  int k_requested = 0;
  Strategy strategy = Strategy::random;
};

namespace detail {

// Shared ranking rule: score descending, item id ascending on ties.
inline void rank_and_truncate(std::vector<ScoredItem>& scored, int k) {
  std::sort(scored.begin(), scored.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item.id < b.item.id;
  });
  if (scored.size() > static_cast<std::size_t>(k)) scored.resize(static_cast<std::size_t>(k));
}

}  // namespace detail

// Uniform sample without replacement; keeps the seeded-shuffle order and
// reports score 0 for every item.
inline RetrievedContext retrieve_random(const std::vector<ProfileItem>& profile, int k,
                                        std::uint64_t seed) {
  if (k < 1) throw ConfigError("k must be >= 1");
  std::vector<std::size_t> order(profile.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  RetrievedContext ctx;
  ctx.k_requested = k;
  ctx.strategy = Strategy::random;
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), profile.size());
  for (std::size_t i = 0; i < take; ++i) ctx.items.push_back({profile[order[i]], 0.0});
  return ctx;
}

// Most recent k items; score carries the timestamp.
inline RetrievedContext retrieve_recency(const std::vector<ProfileItem>& profile, int k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  RetrievedContext ctx;
  ctx.k_requested = k;
  ctx.strategy = Strategy::recency;
  for (const auto& item : profile) {
    ctx.items.push_back({item, static_cast<double>(item.timestamp)});
  }
  detail::rank_and_truncate(ctx.items, k);
  return ctx;
}

struct Bm25Index {
  std::map<std::string, int> doc_freq;
  std::map<std::string, int> doc_len;  // id -> token count
  double avg_len = 0.0;
  std::map<std::string, std::vector<std::pair<std::string, int>>> postings;  // term -> (id, tf)
  double k1 = 1.2;
  double b = 0.75;
  std::vector<ProfileItem> docs;  // index order == profile order
};

// Okapi BM25 over tokenize(item.text) with IDF = ln((N - df + 0.5)/(df + 0.5) + 1),
// the +1-inside-log variant, so scores stay non-negative.
inline Bm25Index build_bm25(const std::vector<ProfileItem>& profile, double k1 = 1.2,
                            double b = 0.75) {
  if (profile.empty()) throw EmptyProfile();
  Bm25Index index;
  index.k1 = k1;
  index.b = b;
  index.docs = profile;

  long long total_len = 0;
  for (const auto& item : profile) {
    const auto counts = textproc::ngrams(textproc::tokenize(item.text), 1);
    int len = 0;
    for (const auto& [term, tf] : counts) len += tf;
    index.doc_len[item.id] = len;
    total_len += len;
    // std::map keys keep postings and doc_freq in deterministic term order.
    for (const auto& [term, tf] : std::map<std::string, int>(counts.begin(), counts.end())) {
      index.postings[term].push_back({item.id, tf});
      ++index.doc_freq[term];
    }
  }
  index.avg_len = static_cast<double>(total_len) / static_cast<double>(profile.size());
  return index;
}

inline double bm25_idf(const Bm25Index& index, const std::string& term) {
  const auto it = index.doc_freq.find(term);
  const double df = it == index.doc_freq.end() ? 0.0 : static_cast<double>(it->second);
  const double n = static_cast<double>(index.docs.size());
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

// Per-document score for a query; terms iterated in sorted unique order so the
// summation order is reproducible.
inline std::map<std::string, double> bm25_scores(const Bm25Index& index, const std::string& query) {
  std::map<std::string, double> scores;
  for (const auto& item : index.docs) scores[item.id] = 0.0;

  std::map<std::string, int> query_terms;
  for (const auto& tok : textproc::tokenize(query).tokens) query_terms[tok] = 1;

  for (const auto& [term, unused] : query_terms) {
    const auto post = index.postings.find(term);
    if (post == index.postings.end()) continue;
    const double idf = bm25_idf(index, term);
    for (const auto& [id, tf] : post->second) {
      const double len = static_cast<double>(index.doc_len.at(id));
      const double denom =
          static_cast<double>(tf) +
          index.k1 * (1.0 - index.b + index.b * len / std::max(index.avg_len, 1e-12));
      scores[id] += idf * static_cast<double>(tf) * (index.k1 + 1.0) / denom;
    }
  }
  return scores;
}

inline RetrievedContext retrieve_bm25(const Bm25Index& index, const std::string& query, int k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  const auto scores = bm25_scores(index, query);
  RetrievedContext ctx;
  ctx.k_requested = k;
  ctx.strategy = Strategy::bm25;
  for (const auto& item : index.docs) ctx.items.push_back({item, scores.at(item.id)});
  detail::rank_and_truncate(ctx.items, k);
  return ctx;
}

struct EmbeddingTable {
  std::map<std::string, std::vector<double>> vectors;
  std::size_t dim = 0;
};

// Seeded feature-hashing embedder: signed hashed unigram counts, L2-normalized.
// Stands in for an external encoder in self-contained runs.
inline std::vector<double> hash_embed(const std::string& text, std::size_t dim,
                                      std::uint64_t seed) {
  std::vector<double> v(dim, 0.0);
  for (const auto& tok : textproc::tokenize(text).tokens) {
    const std::uint64_t h = splitmix64(fnv1a64(tok) ^ seed);
    const std::size_t idx = static_cast<std::size_t>(h % dim);
    v[idx] += (h >> 63) ? 1.0 : -1.0;
  }
  double norm = 0.0;
  for (const double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& x : v) x /= norm;
  }
  return v;
}

inline EmbeddingTable hash_embeddings(const std::vector<ProfileItem>& profile, std::size_t dim,
                                      std::uint64_t seed) {
  EmbeddingTable table;
  table.dim = dim;
  for (const auto& item : profile) table.vectors[item.id] = hash_embed(item.text, dim, seed);
  return table;
}

// JSONL of {"id": string, "vector": [real,...]}.
inline EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open embedding file: " + path.string());
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, e.what());
    }
    if (!obj.contains("id") || !obj.contains("vector") || !obj["vector"].is_array()) {
      throw SchemaError("embedding line " + std::to_string(line_no) +
                        " needs fields 'id' and 'vector'");
    }
    std::vector<double> vec = obj["vector"].get<std::vector<double>>();
    for (const double x : vec) {
      if (!std::isfinite(x)) {
        throw SchemaError("embedding line " + std::to_string(line_no) + " has non-finite value");
      }
    }
    if (table.dim == 0) table.dim = vec.size();
    if (vec.size() != table.dim) throw DimMismatch(vec.size(), table.dim);
    table.vectors[obj["id"].get<std::string>()] = std::move(vec);
  }
  return table;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) return -1.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Top-k by cosine similarity against the stored vectors. Items whose stored
// vector is missing or zero-norm score -1 so they rank last.
inline RetrievedContext retrieve_dense(const std::vector<ProfileItem>& profile,
                                       const EmbeddingTable& table,
                                       const std::vector<double>& query_vec, int k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (query_vec.size() != table.dim) throw DimMismatch(query_vec.size(), table.dim);
  double qnorm = 0.0;
  for (const double x : query_vec) qnorm += x * x;
  if (qnorm <= 0.0) throw ZeroQuery();

  RetrievedContext ctx;
  ctx.k_requested = k;
  ctx.strategy = Strategy::dense;
  for (const auto& item : profile) {
    const auto it = table.vectors.find(item.id);
    const double score = it == table.vectors.end() ? -1.0 : cosine(query_vec, it->second);
    ctx.items.push_back({item, score});
  }
  detail::rank_and_truncate(ctx.items, k);
  return ctx;
}

// One-call strategy dispatch over an example's visible profile. An empty
// profile yields an empty context (zero-shot) rather than an error; the
// random strategy consumes the per-item seed, dense builds hashed embeddings
// of the given width.
inline RetrievedContext retrieve_for_example(const corpus::Dataset& ds, const corpus::Example& e,
                                             Strategy strategy, int k, std::uint64_t seed,
                                             std::size_t dense_dim = 64) {
  const auto profile = corpus::visible_profile(ds, e);
  if (profile.empty()) return RetrievedContext{{}, k, strategy};
  switch (strategy) {
    case Strategy::random:
      return retrieve_random(profile, k, seed);
    case Strategy::recency:
      return retrieve_recency(profile, k);
    case Strategy::bm25:
      return retrieve_bm25(build_bm25(profile), e.query, k);
    case Strategy::dense:
      return retrieve_dense(profile, hash_embeddings(profile, dense_dim, seed),
                            hash_embed(e.query, dense_dim, seed), k);
  }
  throw ConfigError("unknown retrieval strategy");
}

// JSONL dump row: {"example_id", "strategy", "items":[{"id","score"}]}.
inline void write_retrieval_dump(std::ostream& out, const std::string& example_id,
                                 const RetrievedContext& ctx) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& scored : ctx.items) {
    items.push_back({{"id", scored.item.id}, {"score", scored.score}});
  }
  out << nlohmann::json{{"example_id", example_id},
                        {"strategy", strategy_name(ctx.strategy)},
                        {"items", std::move(items)}}
             .dump()
      << "\n";
}

}  // namespace prlm::retrieval
