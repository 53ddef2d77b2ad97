#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prlm/corpus.hpp"
#include "prlm/errors.hpp"
#include "prlm/rng.hpp"
#include "prlm/textproc.hpp"

namespace prlm::prm {

using json = nlohmann::json;

struct PreferenceTriplet {
  std::string query;      // x
  std::string preferred;  // y+ generated with the user's profile
  std::string rejected;   // y- generated zero-shot

  bool operator==(const PreferenceTriplet&) const = default;
};

// Feature substrate standing in for a pretrained encoder: seeded hashed
// n-gram counts per segment plus pair interaction features. The segment
// split mirrors the "[CLS] x [SEP] y [SEP]" convention: query and response
// occupy disjoint blocks, so the map is positional, not bag-of-pair.
struct FeatureConfig {
  std::size_t hash_dim = 4096;
  int max_ngram = 2;          // unigrams + bigrams
  std::size_t max_tokens = 512;  // budget for the concatenated pair; y truncated first
  std::uint64_t hash_seed = 0x70726c6dULL;

  bool operator==(const FeatureConfig&) const = default;

  std::size_t feature_dim() const { return 2 * hash_dim + 3; }
};

struct PairFeatures {
  std::vector<double> vector;  // length feature_dim()
};

namespace detail {

constexpr std::uint64_t kSaltX = 0x9ae16a3b2f90404full;
constexpr std::uint64_t kSaltY = 0xc949d7c7509e6557ull;

struct SparseFeatures {
  std::vector<std::pair<std::size_t, double>> entries;  // index ascending, merged
};

inline void truncate_pair(std::vector<std::string>& x_tokens, std::vector<std::string>& y_tokens,
                          std::size_t budget) {
  if (x_tokens.size() > budget) x_tokens.resize(budget);
  const std::size_t y_budget = budget - x_tokens.size();
  if (y_tokens.size() > y_budget) y_tokens.resize(y_budget);
}

inline void hash_block(const std::vector<std::string>& tokens, int max_ngram, std::size_t dim,
                       std::uint64_t seed, std::uint64_t salt, std::size_t base,
                       std::map<std::size_t, double>& acc) {
  std::map<std::size_t, double> block;
  for (int n = 1; n <= max_ngram; ++n) {
    if (tokens.size() < static_cast<std::size_t>(n)) break;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      std::string gram = tokens[i];
      for (int j = 1; j < n; ++j) {
        gram.push_back('\x1f');
        gram += tokens[i + j];
      }
      const std::uint64_t h = splitmix64(fnv1a64(gram) ^ seed ^ salt);
      block[static_cast<std::size_t>(h % dim)] += (h >> 63) ? 1.0 : -1.0;
    }
  }
  double norm = 0.0;
  for (const auto& [idx, v] : block) norm += v * v;
  norm = std::sqrt(norm);
  for (const auto& [idx, v] : block) {
    if (v != 0.0 && norm > 0.0) acc[base + idx] = v / norm;
  }
}

inline SparseFeatures featurize_sparse(const std::string& x, const std::string& y,
                                       const FeatureConfig& cfg) {
  auto x_tokens = textproc::tokenize(x).tokens;
  auto y_tokens = textproc::tokenize(y).tokens;
  truncate_pair(x_tokens, y_tokens, cfg.max_tokens);

  std::map<std::size_t, double> acc;
  hash_block(x_tokens, cfg.max_ngram, cfg.hash_dim, cfg.hash_seed, kSaltX, 0, acc);
  hash_block(y_tokens, cfg.max_ngram, cfg.hash_dim, cfg.hash_seed, kSaltY, cfg.hash_dim, acc);

  std::map<std::string, int> x_counts, y_counts;
  for (const auto& t : x_tokens) ++x_counts[t];
  for (const auto& t : y_tokens) ++y_counts[t];
  long long overlap = 0;
  for (const auto& [tok, cx] : x_counts) {
    const auto it = y_counts.find(tok);
    if (it != y_counts.end()) overlap += std::min(cx, it->second);
  }
  const double xs = static_cast<double>(x_tokens.size());
  const double ys = static_cast<double>(y_tokens.size());
  const double overlap_ratio = ys > 0.0 ? static_cast<double>(overlap) / ys : 0.0;
  const double p = xs > 0.0 ? static_cast<double>(overlap) / xs : 0.0;
  const double r = ys > 0.0 ? static_cast<double>(overlap) / ys : 0.0;
  const double rouge1_f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  const double len_ratio = (xs + ys) > 0.0 ? ys / (xs + ys) : 0.0;

  const std::size_t ibase = 2 * cfg.hash_dim;
  if (overlap_ratio != 0.0) acc[ibase + 0] = overlap_ratio;
  if (rouge1_f1 != 0.0) acc[ibase + 1] = rouge1_f1;
  if (len_ratio != 0.0) acc[ibase + 2] = len_ratio;

  SparseFeatures out;
  out.entries.assign(acc.begin(), acc.end());
  return out;
}

}  // namespace detail

// Dense view of the pair features; deterministic for a fixed config.
inline PairFeatures featurize(const std::string& x, const std::string& y,
                              const FeatureConfig& cfg) {
  PairFeatures out;
  out.vector.assign(cfg.feature_dim(), 0.0);
  for (const auto& [idx, v] : detail::featurize_sparse(x, y, cfg).entries) out.vector[idx] = v;
  return out;
}

// One-hidden-layer scorer over the hashed pair features:
// s = w2 . tanh(W1^T f + b1) + b2.
struct ScorerParams {
  FeatureConfig features;
  std::size_t hidden = 32;
  std::vector<double> w1;  // feature_dim x hidden, row-major by feature index
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // hidden
  double b2 = 0.0;

  bool operator==(const ScorerParams&) const = default;

  static ScorerParams zeros(const FeatureConfig& cfg, std::size_t hidden) {
    ScorerParams p;
    p.features = cfg;
    p.hidden = hidden;
    p.w1.assign(cfg.feature_dim() * hidden, 0.0);
    p.b1.assign(hidden, 0.0);
    p.w2.assign(hidden, 0.0);
    return p;
  }

  static ScorerParams seeded(const FeatureConfig& cfg, std::size_t hidden, std::uint64_t seed,
                             double scale = 0.2) {
    ScorerParams p = zeros(cfg, hidden);
    Rng rng(derive_seed(seed, "prm.init"));
    for (double& w : p.w1) w = rng.uniform(-scale, scale);
    for (double& w : p.w2) w = rng.uniform(-scale, scale);
    return p;
  }

  std::size_t param_count() const { return w1.size() + b1.size() + w2.size() + 1; }

  double param_get(std::size_t i) const {
    if (i < w1.size()) return w1[i];
    i -= w1.size();
    if (i < b1.size()) return b1[i];
    i -= b1.size();
    if (i < w2.size()) return w2[i];
    return b2;
  }

  void param_add(std::size_t i, double delta) {
    if (i < w1.size()) {
      w1[i] += delta;
      return;
    }
    i -= w1.size();
    if (i < b1.size()) {
      b1[i] += delta;
      return;
    }
    i -= b1.size();
    if (i < w2.size()) {
      w2[i] += delta;
      return;
    }
    b2 += delta;
  }
};

namespace detail {

inline std::vector<double> hidden_pre(const ScorerParams& p, const SparseFeatures& f) {
  std::vector<double> z(p.b1);
  for (const auto& [i, v] : f.entries) {
    const double* row = p.w1.data() + i * p.hidden;
    for (std::size_t h = 0; h < p.hidden; ++h) z[h] += row[h] * v;
  }
  return z;
}

inline double score_sparse(const ScorerParams& p, const SparseFeatures& f) {
  const auto z = hidden_pre(p, f);
  double s = p.b2;
  for (std::size_t h = 0; h < p.hidden; ++h) s += p.w2[h] * std::tanh(z[h]);
  return s;
}

}  // namespace detail

inline double score(const ScorerParams& params, const std::string& x, const std::string& y) {
  return detail::score_sparse(params, detail::featurize_sparse(x, y, params.features));
}

inline double stable_sigmoid(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

// Contrastive preference loss -log sigma(s_p - s_n), evaluated through the
// softplus form for numerical stability.
inline double contrastive_loss(double s_p, double s_n) { return softplus(-(s_p - s_n)); }

// Bounded personalization reward: sigma of the raw score. Order-preserving,
// so the preference semantics of the training objective are untouched.
inline double personal_reward(const ScorerParams& params, const std::string& x,
                              const std::string& y) {
  return stable_sigmoid(score(params, x, y));
}

struct ScorerGrad {
  std::vector<double> w1;
  std::vector<double> b1;
  std::vector<double> w2;
  double b2 = 0.0;

  explicit ScorerGrad(const ScorerParams& p)
      : w1(p.w1.size(), 0.0), b1(p.b1.size(), 0.0), w2(p.w2.size(), 0.0) {}

  void scale(double c) {
    for (double& g : w1) g *= c;
    for (double& g : b1) g *= c;
    for (double& g : w2) g *= c;
    b2 *= c;
  }
};

namespace detail {

// Accumulates coeff * d(score)/d(params) for one featurized side.
inline void accumulate_score_grad(const ScorerParams& p, const SparseFeatures& f, double coeff,
                                  ScorerGrad& grad) {
  const auto z = hidden_pre(p, f);
  std::vector<double> dz(p.hidden);
  for (std::size_t h = 0; h < p.hidden; ++h) {
    const double a = std::tanh(z[h]);
    grad.w2[h] += coeff * a;
    dz[h] = coeff * p.w2[h] * (1.0 - a * a);
    grad.b1[h] += dz[h];
  }
  grad.b2 += coeff;
  for (const auto& [i, v] : f.entries) {
    double* row = grad.w1.data() + i * p.hidden;
    for (std::size_t h = 0; h < p.hidden; ++h) row[h] += dz[h] * v;
  }
}

}  // namespace detail

// Loss and full analytic gradient for one triplet.
inline double triplet_loss_grad(const ScorerParams& p, const PreferenceTriplet& t,
                                ScorerGrad* grad) {
  const auto f_p = detail::featurize_sparse(t.query, t.preferred, p.features);
  const auto f_n = detail::featurize_sparse(t.query, t.rejected, p.features);
  const double s_p = detail::score_sparse(p, f_p);
  const double s_n = detail::score_sparse(p, f_n);
  if (grad) {
    const double g = stable_sigmoid(s_p - s_n) - 1.0;  // dL/ds_p; dL/ds_n is -g
    detail::accumulate_score_grad(p, f_p, g, *grad);
    detail::accumulate_score_grad(p, f_n, -g, *grad);
  }
  return contrastive_loss(s_p, s_n);
}

inline double triplet_loss(const ScorerParams& p, const PreferenceTriplet& t) {
  return triplet_loss_grad(p, t, nullptr);
}

struct PrmEpochStats {
  int epoch = 0;       // 0 is the pre-training evaluation
  double loss = 0.0;   // mean contrastive loss over all triplets
  double accuracy = 0.0;  // fraction with s_p > s_n
};

struct PrmTrainConfig {
  int epochs = 3;
  double lr = 0.5;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool zero_init = false;
  std::size_t hash_dim = 4096;
  std::size_t hidden = 32;
  std::size_t max_tokens = 512;
};

struct PrmTrainResult {
  ScorerParams params;
  std::vector<PrmEpochStats> log;
};

inline PrmEpochStats evaluate_prm(const ScorerParams& p, const std::vector<PreferenceTriplet>& ts,
                                  int epoch) {
  PrmEpochStats stats;
  stats.epoch = epoch;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (const auto& t : ts) {
    const double s_p = score(p, t.query, t.preferred);
    const double s_n = score(p, t.query, t.rejected);
    loss_sum += contrastive_loss(s_p, s_n);
    if (s_p > s_n) ++correct;
  }
  stats.loss = loss_sum / static_cast<double>(ts.size());
  stats.accuracy = static_cast<double>(correct) / static_cast<double>(ts.size());
  return stats;
}

// Mini-batch gradient descent on the mean contrastive loss with analytic
// gradients. Deterministic for a fixed seed: shuffle order, batch order and
// accumulation order are all pinned.
inline PrmTrainResult train_prm(const std::vector<PreferenceTriplet>& triplets,
                                const PrmTrainConfig& cfg) {
  if (triplets.empty()) throw EmptyInput("triplet list");
  if (cfg.lr <= 0.0) throw ConfigError("learning rate must be positive");

  FeatureConfig fc;
  fc.hash_dim = cfg.hash_dim;
  fc.max_tokens = cfg.max_tokens;

  PrmTrainResult out;
  out.params = cfg.zero_init ? ScorerParams::zeros(fc, cfg.hidden)
                             : ScorerParams::seeded(fc, cfg.hidden, cfg.seed);
  out.log.push_back(evaluate_prm(out.params, triplets, 0));

  std::vector<std::size_t> order(triplets.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, "prm.shuffle"));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      ScorerGrad grad(out.params);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        batch_loss += triplet_loss_grad(out.params, triplets[order[i]], &grad);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      batch_loss *= inv;
      if (!std::isfinite(batch_loss)) {
        throw NonFiniteLoss("epoch " + std::to_string(epoch) + ", batch at offset " +
                            std::to_string(start));
      }
      grad.scale(inv * cfg.lr);
      for (std::size_t i = 0; i < out.params.w1.size(); ++i) out.params.w1[i] -= grad.w1[i];
      for (std::size_t i = 0; i < out.params.b1.size(); ++i) out.params.b1[i] -= grad.b1[i];
      for (std::size_t i = 0; i < out.params.w2.size(); ++i) out.params.w2[i] -= grad.w2[i];
      out.params.b2 -= grad.b2;
    }
    out.log.push_back(evaluate_prm(out.params, triplets, epoch));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Triplet construction

using GenFn = std::function<std::string(const corpus::Example&)>;

struct TripletBuildResult {
  std::vector<PreferenceTriplet> triplets;
  std::size_t degenerate = 0;  // y+ == y- pairs dropped
  std::vector<std::string> failures;
};

// Walks the train split, pairing a profile-conditioned generation with a
// zero-shot one. Degenerate pairs are dropped and counted; per-example
// generation failures are recorded and skipped. Aborts only when every
// attempted example failed.
inline TripletBuildResult build_triplets(const corpus::Dataset& ds, const GenFn& gen_with_profile,
                                         const GenFn& gen_zero_shot, std::size_t limit) {
  if (limit < 1) throw ConfigError("triplet limit must be >= 1");
  TripletBuildResult out;
  std::size_t attempts = 0;
  for (const auto& e : ds.examples) {
    if (e.split != corpus::Split::train) continue;
    if (out.triplets.size() >= limit) break;
    ++attempts;
    std::string preferred, rejected;
    try {
      preferred = gen_with_profile(e);
      rejected = gen_zero_shot(e);
    } catch (const std::exception& ex) {
      out.failures.push_back(e.example_id + ": " + ex.what());
      continue;
    }
    if (preferred.empty() || rejected.empty()) {
      out.failures.push_back(e.example_id + ": empty generation");
      continue;
    }
    if (preferred == rejected) {
      ++out.degenerate;
      continue;
    }
    out.triplets.push_back({e.query, std::move(preferred), std::move(rejected)});
  }
  if (out.triplets.empty() && !out.failures.empty() &&
      out.failures.size() == attempts) {
    throw GenerationFailure("all", "every generation attempt failed (" +
                                       std::to_string(out.failures.size()) + " failures)");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline void write_triplets(const std::vector<PreferenceTriplet>& ts,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write triplet file: " + path.string());
  for (const auto& t : ts) {
    out << json{{"query", t.query}, {"preferred", t.preferred}, {"rejected", t.rejected}}.dump()
        << "\n";
  }
}

inline std::vector<PreferenceTriplet> load_triplets(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open triplet file: " + path.string());
  std::vector<PreferenceTriplet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, e.what());
    }
    for (const char* field : {"query", "preferred", "rejected"}) {
      if (!obj.contains(field) || !obj[field].is_string()) {
        throw SchemaError("triplet line " + std::to_string(line_no) + " needs string field '" +
                          std::string(field) + "'");
      }
    }
    out.push_back({obj["query"].get<std::string>(), obj["preferred"].get<std::string>(),
                   obj["rejected"].get<std::string>()});
  }
  return out;
}

inline json scorer_to_json(const ScorerParams& p) {
  return json{{"format", "prlm.scorer"},
              {"version", 1},
              {"feature", json{{"hash_dim", p.features.hash_dim},
                               {"max_ngram", p.features.max_ngram},
                               {"max_tokens", p.features.max_tokens},
                               {"hash_seed", p.features.hash_seed}}},
              {"hidden", p.hidden},
              {"w1", p.w1},
              {"b1", p.b1},
              {"w2", p.w2},
              {"b2", p.b2}};
}

inline ScorerParams scorer_from_json(const json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "prlm.scorer") {
    throw SchemaError("not a scorer model file");
  }
  if (doc.value("version", 0) != 1) {
    throw SchemaError("unsupported scorer version " + std::to_string(doc.value("version", 0)));
  }
  ScorerParams p;
  const auto& fc = doc.at("feature");
  p.features.hash_dim = fc.at("hash_dim").get<std::size_t>();
  p.features.max_ngram = fc.at("max_ngram").get<int>();
  p.features.max_tokens = fc.at("max_tokens").get<std::size_t>();
  p.features.hash_seed = fc.at("hash_seed").get<std::uint64_t>();
  p.hidden = doc.at("hidden").get<std::size_t>();
  p.w1 = doc.at("w1").get<std::vector<double>>();
  p.b1 = doc.at("b1").get<std::vector<double>>();
  p.w2 = doc.at("w2").get<std::vector<double>>();
  p.b2 = doc.at("b2").get<double>();
  if (p.w1.size() != p.features.feature_dim() * p.hidden || p.b1.size() != p.hidden ||
      p.w2.size() != p.hidden) {
    throw SchemaError("scorer parameter shapes are inconsistent");
  }
  return p;
}

inline void save_scorer(const ScorerParams& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write model file: " + path.string());
  out << scorer_to_json(p).dump() << "\n";
}

inline ScorerParams load_scorer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open model file: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw ParseError(1, e.what());
  }
  return scorer_from_json(doc);
}

// ---------------------------------------------------------------------------
// External score injection: JSONL of {"x_hash","y_hash","score"} keyed by the
// fnv1a64 hex of the raw strings. Lets scores from an out-of-process encoder
// replace the built-in scorer for parity studies.

inline std::string text_hash_hex(std::string_view s) {
  static const char* digits = "0123456789abcdef";
  const std::uint64_t h = fnv1a64(s);
  std::string out(16, '0');
  for (int i = 0; i < 16; ++i) out[15 - i] = digits[(h >> (4 * i)) & 0xf];
  return out;
}

struct ExternalScores {
  std::map<std::pair<std::string, std::string>, double> table;

  static ExternalScores load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open score file: " + path.string());
    ExternalScores out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      json obj;
      try {
        obj = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(line_no, e.what());
      }
      if (!obj.contains("x_hash") || !obj.contains("y_hash") || !obj.contains("score")) {
        throw SchemaError("score line " + std::to_string(line_no) +
                          " needs fields x_hash, y_hash, score");
      }
      out.table[{obj["x_hash"].get<std::string>(), obj["y_hash"].get<std::string>()}] =
          obj["score"].get<double>();
    }
    return out;
  }

  std::optional<double> lookup(const std::string& x, const std::string& y) const {
    const auto it = table.find({text_hash_hex(x), text_hash_hex(y)});
    if (it == table.end()) return std::nullopt;
    return it->second;
  }
};

}  // namespace prlm::prm
