#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prlm/corpus.hpp"
#include "prlm/errors.hpp"
#include "prlm/retrieval.hpp"
#include "prlm/rng.hpp"
#include "prlm/textproc.hpp"

namespace prlm::policy {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Prompt construction

struct PromptTemplate {
  // Used when retrieved context is non-empty; needs {query} and {profiles}.
  std::string with_profiles =
      "you are writing for one specific user. think inside <think> </think> first, "
      "then give the final answer after the closing tag.\n"
      "the user previously wrote:\n{profiles}\n"
      "task: {query}\n"
      "response:";
  // Used when the context is empty; needs {query} only.
  std::string zero_shot =
      "think inside <think> </think> first, then give the final answer after the "
      "closing tag.\n"
      "task: {query}\n"
      "response:";

  bool operator==(const PromptTemplate&) const = default;
};

namespace detail {

inline bool replace_all(std::string& text, std::string_view placeholder,
                        const std::string& value) {
  bool found = false;
  std::size_t pos = 0;
  while ((pos = text.find(placeholder, pos)) != std::string::npos) {
    found = true;
    text.replace(pos, placeholder.size(), value);
    pos += value.size();
  }
  return found;
}

}  // namespace detail

// Deterministic rendering; profile items appear in retrieval order, numbered
// from 1. An empty context selects the zero-shot variant with no profiles
// section at all.
inline std::string build_prompt(const std::string& query, const retrieval::RetrievedContext& ctx,
                                const PromptTemplate& tmpl = {}) {
  if (ctx.items.empty()) {
    std::string out = tmpl.zero_shot;
    if (!detail::replace_all(out, "{query}", query)) throw TemplateError("{query}");
    return out;
  }
  std::string profiles;
  for (std::size_t i = 0; i < ctx.items.size(); ++i) {
    profiles += std::to_string(i + 1);
    profiles += ". ";
    profiles += ctx.items[i].item.text;
    if (i + 1 < ctx.items.size()) profiles.push_back('\n');
  }
  std::string out = tmpl.with_profiles;
  const bool has_query = detail::replace_all(out, "{query}", query);
  const bool has_profiles = detail::replace_all(out, "{profiles}", profiles);
  if (!has_query) throw TemplateError("{query}");
  if (!has_profiles) throw TemplateError("{profiles}");
  return out;
}

inline PromptTemplate load_template(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open template file: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw ParseError(1, e.what());
  }
  PromptTemplate t;
  if (doc.contains("with_profiles")) t.with_profiles = doc["with_profiles"].get<std::string>();
  if (doc.contains("zero_shot")) t.zero_shot = doc["zero_shot"].get<std::string>();
  return t;
}

inline void save_template(const PromptTemplate& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write template file: " + path.string());
  out << json{{"with_profiles", t.with_profiles}, {"zero_shot", t.zero_shot}}.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Desk policy: a small trainable autoregressive model. Attention-free by
// construction: the context at step t is the mean embedding of the prompt
// tokens concatenated with the embeddings of the last `window` generated
// tokens (zero-filled before the first token). Token embeddings are frozen
// seeded unit vectors keyed by the token string; only the output map
// logits = W . feat + b is learned, so gradients stay analytic.

inline constexpr const char* kThinkOpen = "<think>";
inline constexpr const char* kThinkClose = "</think>";
inline constexpr const char* kEos = "<eos>";
inline constexpr const char* kUnk = "<unk>";

struct DeskParams {
  std::vector<std::string> vocab;  // <= 256 entries, includes the four literals above
  std::size_t embed_dim = 16;
  std::size_t window = 4;
  std::uint64_t embed_seed = 1;
  std::vector<double> w;  // vocab x feature_dim, row-major by vocab index
  std::vector<double> b;  // vocab
  // Copy gate: token v's logit gains c[v] times the number of times v occurs
  // in the prompt. The attention-free stand-in for context copying -- it lets
  // the policy favor tokens it can see in the retrieved profile (names, style
  // words) without conditioning through the mean-pooled prompt embedding,
  // whose per-prompt differences are diluted by shared template text. Scaling
  // with the occurrence count makes the gate read the profile's majority
  // vote: a token repeated across retrieved items outweighs one that leaked
  // in through a single off-style item.
  std::vector<double> c;  // vocab
  std::uint64_t version = 0;

  bool operator==(const DeskParams&) const = default;

  std::size_t feature_dim() const { return embed_dim * (window + 1); }
};

struct GenSample {
  std::vector<int> tokens;       // vocab ids, includes the end-of-sequence token if emitted
  std::vector<double> logprobs;  // one per token
  std::string text;              // tokens joined by spaces, end-of-sequence omitted

  double total_logprob() const {
    double s = 0.0;
    for (double lp : logprobs) s += lp;
    return s;
  }
};

struct SampleOptions {
  int max_tokens = 768;
  double temperature = 1.0;
  bool greedy = false;
};

// Parameter-shaped gradient accumulator for the output map.
struct GradBuffer {
  std::vector<double> w;
  std::vector<double> b;
  std::vector<double> c;

  GradBuffer(std::size_t vocab, std::size_t feature_dim)
      : w(vocab * feature_dim, 0.0), b(vocab, 0.0), c(vocab, 0.0) {}

  void scale(double k) {
    for (double& g : w) g *= k;
    for (double& g : b) g *= k;
    for (double& g : c) g *= k;
  }

  double squared_norm() const {
    double s = 0.0;
    for (double g : w) s += g * g;
    for (double g : b) s += g * g;
    for (double g : c) s += g * g;
    return s;
  }
};

class DeskPolicy {
 public:
  explicit DeskPolicy(DeskParams params) : p_(std::move(params)) {
    if (p_.vocab.empty() || p_.vocab.size() > 256) {
      throw ConfigError("vocab size must be in [1, 256]");
    }
    for (const char* required : {kThinkOpen, kThinkClose, kEos, kUnk}) {
      if (std::find(p_.vocab.begin(), p_.vocab.end(), required) == p_.vocab.end()) {
        throw ConfigError(std::string("vocab missing required token ") + required);
      }
    }
    for (std::size_t v = 0; v < p_.vocab.size(); ++v) {
      if (!token_ids_.emplace(p_.vocab[v], static_cast<int>(v)).second) {
        throw ConfigError("duplicate vocab token: " + p_.vocab[v]);
      }
    }
    if (p_.w.empty()) p_.w.assign(p_.vocab.size() * p_.feature_dim(), 0.0);
    if (p_.b.empty()) p_.b.assign(p_.vocab.size(), 0.0);
    if (p_.c.empty()) p_.c.assign(p_.vocab.size(), 0.0);
    if (p_.w.size() != p_.vocab.size() * p_.feature_dim() || p_.b.size() != p_.vocab.size() ||
        p_.c.size() != p_.vocab.size()) {
      throw ShapeMismatch("desk parameter shapes do not match vocab and feature dims");
    }
    for (double x : p_.w) {
      if (!std::isfinite(x)) throw ConfigError("non-finite desk parameter");
    }
    for (double x : p_.c) {
      if (!std::isfinite(x)) throw ConfigError("non-finite desk parameter");
    }
    embeddings_.reserve(p_.vocab.size());
    for (const auto& tok : p_.vocab) embeddings_.push_back(embed_token(tok));
    eos_id_ = token_ids_.at(kEos);
    unk_id_ = token_ids_.at(kUnk);
  }

  static DeskPolicy zeros(std::vector<std::string> vocab, std::size_t embed_dim = 16,
                          std::size_t window = 4, std::uint64_t embed_seed = 1) {
    DeskParams p;
    p.vocab = std::move(vocab);
    p.embed_dim = embed_dim;
    p.window = window;
    p.embed_seed = embed_seed;
    return DeskPolicy(std::move(p));
  }

  const DeskParams& params() const { return p_; }
  std::size_t vocab_size() const { return p_.vocab.size(); }
  int eos_id() const { return eos_id_; }

  int token_id(const std::string& tok) const {
    const auto it = token_ids_.find(tok);
    return it == token_ids_.end() ? unk_id_ : it->second;
  }

  // Inverse of render(): whitespace-split the text and map each piece to its
  // vocab id (<unk> for out-of-vocab pieces). No lowercasing, so the reasoning
  // markers round-trip. The end-of-sequence token is not appended.
  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      const std::size_t start = i;
      while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      if (i > start) ids.push_back(token_id(text.substr(start, i - start)));
    }
    return ids;
  }

  // Frozen embedding: a seeded unit vector keyed by the token string, so it
  // does not depend on vocab order and covers open-vocabulary prompt tokens.
  std::vector<double> embed_token(const std::string& tok) const {
    Rng rng(derive_seed(p_.embed_seed, "policy.embed:" + tok));
    std::vector<double> v(p_.embed_dim);
    double norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& x : v) x /= norm;
    }
    return v;
  }

  // Mean embedding of the whitespace-split prompt; zero vector for an empty
  // prompt. Raw split, no lowercasing: the prompt side is open-vocabulary.
  std::vector<double> prompt_embedding(const std::string& prompt) const {
    std::vector<double> mean(p_.embed_dim, 0.0);
    std::size_t count = 0;
    std::size_t i = 0;
    while (i < prompt.size()) {
      while (i < prompt.size() && std::isspace(static_cast<unsigned char>(prompt[i]))) ++i;
      std::size_t start = i;
      while (i < prompt.size() && !std::isspace(static_cast<unsigned char>(prompt[i]))) ++i;
      if (i > start) {
        const auto e = embed_token(prompt.substr(start, i - start));
        for (std::size_t d = 0; d < p_.embed_dim; ++d) mean[d] += e[d];
        ++count;
      }
    }
    if (count > 0) {
      for (double& x : mean) x /= static_cast<double>(count);
    }
    return mean;
  }

  // Prompt-occurrence counts per vocab id: how many of the whitespace-split
  // prompt words equal the exact vocab token. Out-of-vocab prompt words count
  // toward nothing; the gate rewards copying a *known* token, not
  // unknown-ness.
  std::vector<double> prompt_gate(const std::string& prompt) const {
    std::vector<double> gate(p_.vocab.size(), 0.0);
    std::size_t i = 0;
    while (i < prompt.size()) {
      while (i < prompt.size() && std::isspace(static_cast<unsigned char>(prompt[i]))) ++i;
      const std::size_t start = i;
      while (i < prompt.size() && !std::isspace(static_cast<unsigned char>(prompt[i]))) ++i;
      if (i > start) {
        const auto it = token_ids_.find(prompt.substr(start, i - start));
        if (it != token_ids_.end()) gate[static_cast<std::size_t>(it->second)] += 1.0;
      }
    }
    return gate;
  }

  // Context feature at one step: [prompt mean | window of trailing generated
  // token embeddings], oldest slot first, zero-filled before the start.
  std::vector<double> step_feature(const std::vector<double>& prompt_mean,
                                   const std::vector<int>& generated, std::size_t t) const {
    std::vector<double> feat(p_.feature_dim(), 0.0);
    std::copy(prompt_mean.begin(), prompt_mean.end(), feat.begin());
    for (std::size_t slot = 0; slot < p_.window; ++slot) {
      const long long pos = static_cast<long long>(t) - static_cast<long long>(p_.window) +
                            static_cast<long long>(slot);
      if (pos < 0) continue;
      const auto& e = embeddings_[static_cast<std::size_t>(generated[pos])];
      std::copy(e.begin(), e.end(), feat.begin() + (slot + 1) * p_.embed_dim);
    }
    return feat;
  }

  std::vector<double> logits(const std::vector<double>& feat,
                             const std::vector<double>& gate) const {
    const std::size_t F = p_.feature_dim();
    std::vector<double> z(p_.vocab.size());
    for (std::size_t v = 0; v < p_.vocab.size(); ++v) {
      const double* row = p_.w.data() + v * F;
      double s = p_.b[v] + gate[v] * p_.c[v];
      for (std::size_t f = 0; f < F; ++f) s += row[f] * feat[f];
      z[v] = s;
    }
    return z;
  }

  static std::vector<double> log_softmax(std::vector<double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double x : z) sum += std::exp(x - m);
    const double lse = m + std::log(sum);
    for (double& x : z) x -= lse;
    return z;
  }

  GenSample sample_one(const std::string& prompt, std::uint64_t seed,
                       const SampleOptions& opt = SampleOptions()) const {
    if (opt.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    if (!opt.greedy && opt.temperature <= 0.0) {
      throw ConfigError("sampling temperature must be positive");
    }
    Rng rng(seed);
    const auto prompt_mean = prompt_embedding(prompt);
    const auto gate = prompt_gate(prompt);
    GenSample out;
    for (int t = 0; t < opt.max_tokens; ++t) {
      auto z = logits(step_feature(prompt_mean, out.tokens, static_cast<std::size_t>(t)), gate);
      const auto lp = log_softmax(z);
      int chosen;
      if (opt.greedy) {
        chosen = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
      } else {
        std::vector<double> scaled(z);
        if (opt.temperature != 1.0) {
          for (double& x : scaled) x /= opt.temperature;
        }
        const auto slp = log_softmax(std::move(scaled));
        const double u = rng.uniform01();
        double acc = 0.0;
        chosen = static_cast<int>(p_.vocab.size()) - 1;
        for (std::size_t v = 0; v < slp.size(); ++v) {
          acc += std::exp(slp[v]);
          if (u < acc) {
            chosen = static_cast<int>(v);
            break;
          }
        }
      }
      out.tokens.push_back(chosen);
      out.logprobs.push_back(lp[static_cast<std::size_t>(chosen)]);
      if (chosen == eos_id_) break;
    }
    out.text = render(out.tokens);
    return out;
  }

  // G independent draws; draw j is seeded by (seed, j) so the set is
  // reproducible regardless of evaluation order.
  std::vector<GenSample> sample(const std::string& prompt, int n, std::uint64_t seed,
                                const SampleOptions& opt = SampleOptions()) const {
    if (n < 1) throw ConfigError("sample count must be >= 1");
    std::vector<GenSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      out.push_back(sample_one(prompt, derive_seed(seed, "policy.sample", j), opt));
    }
    return out;
  }

  // Teacher-forced per-token log-probabilities; shares the forward path with
  // sampling, so a sampled sequence reproduces its sampling-time logprobs.
  std::vector<double> logprob(const std::string& prompt, const std::vector<int>& tokens) const {
    const auto prompt_mean = prompt_embedding(prompt);
    const auto gate = prompt_gate(prompt);
    std::vector<double> out;
    out.reserve(tokens.size());
    std::vector<int> prefix;
    prefix.reserve(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (tokens[t] < 0 || tokens[t] >= static_cast<int>(p_.vocab.size())) {
        throw ShapeMismatch("token id out of vocab range");
      }
      const auto lp = log_softmax(logits(step_feature(prompt_mean, prefix, t), gate));
      out.push_back(lp[static_cast<std::size_t>(tokens[t])]);
      prefix.push_back(tokens[t]);
    }
    return out;
  }

  // Adds sum_t coeff[t] * d log pi(tokens[t] | prefix) / d params to grad.
  // For the linear output map that is (1[v==k] - p_v) * feat per step.
  void accumulate_weighted_logprob_grad(const std::string& prompt, const std::vector<int>& tokens,
                                        const std::vector<double>& coeffs,
                                        GradBuffer& grad) const {
    if (coeffs.size() != tokens.size()) {
      throw ShapeMismatch("coefficient list must align with token list");
    }
    const std::size_t F = p_.feature_dim();
    if (grad.w.size() != p_.w.size() || grad.b.size() != p_.b.size() ||
        grad.c.size() != p_.c.size()) {
      throw ShapeMismatch("gradient buffer shape does not match parameters");
    }
    const auto prompt_mean = prompt_embedding(prompt);
    const auto gate = prompt_gate(prompt);
    std::vector<int> prefix;
    prefix.reserve(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const double coeff = coeffs[t];
      const auto feat = step_feature(prompt_mean, prefix, t);
      if (coeff != 0.0) {
        const auto lp = log_softmax(logits(feat, gate));
        const int k = tokens[t];
        for (std::size_t v = 0; v < p_.vocab.size(); ++v) {
          const double coeff_v =
              coeff * ((static_cast<int>(v) == k ? 1.0 : 0.0) - std::exp(lp[v]));
          grad.b[v] += coeff_v;
          if (gate[v]) grad.c[v] += coeff_v;
          double* row = grad.w.data() + v * F;
          for (std::size_t f = 0; f < F; ++f) row[f] += coeff_v * feat[f];
        }
      }
      prefix.push_back(tokens[t]);
    }
  }

  void apply_gradient(const GradBuffer& grad, double lr) {
    if (grad.w.size() != p_.w.size() || grad.b.size() != p_.b.size() ||
        grad.c.size() != p_.c.size()) {
      throw ShapeMismatch("gradient buffer shape does not match parameters");
    }
    for (double g : grad.w) {
      if (!std::isfinite(g)) throw NonFiniteGradient("output matrix");
    }
    for (double g : grad.b) {
      if (!std::isfinite(g)) throw NonFiniteGradient("output bias");
    }
    for (double g : grad.c) {
      if (!std::isfinite(g)) throw NonFiniteGradient("copy gate");
    }
    for (std::size_t i = 0; i < p_.w.size(); ++i) p_.w[i] -= lr * grad.w[i];
    for (std::size_t i = 0; i < p_.b.size(); ++i) p_.b[i] -= lr * grad.b[i];
    for (std::size_t i = 0; i < p_.c.size(); ++i) p_.c[i] -= lr * grad.c[i];
    ++p_.version;
  }

  std::string render(const std::vector<int>& tokens) const {
    std::string text;
    for (int id : tokens) {
      if (id == eos_id_) continue;
      if (!text.empty()) text.push_back(' ');
      text += p_.vocab[static_cast<std::size_t>(id)];
    }
    return text;
  }

 private:
  DeskParams p_;
  std::unordered_map<std::string, int> token_ids_;
  std::vector<std::vector<double>> embeddings_;
  int eos_id_ = 0;
  int unk_id_ = 0;
};

// Collects a closed vocabulary from a dataset: the four structural literals
// plus the sorted unique tokens of every query and reference.
inline std::vector<std::string> vocab_from_dataset(const corpus::Dataset& ds,
                                                   std::size_t max_size = 256) {
  std::set<std::string> words;
  for (const auto& e : ds.examples) {
    for (const auto& t : textproc::tokenize(e.query).tokens) words.insert(t);
    for (const auto& t : textproc::tokenize(e.reference).tokens) words.insert(t);
  }
  std::vector<std::string> vocab = {kThinkOpen, kThinkClose, kEos, kUnk};
  for (const auto& w : words) {
    if (vocab.size() >= max_size) break;
    vocab.push_back(w);
  }
  return vocab;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline json desk_to_json(const DeskParams& p) {
  return json{{"format", "prlm.policy"}, {"version", 1},         {"vocab", p.vocab},
              {"embed_dim", p.embed_dim}, {"window", p.window},  {"embed_seed", p.embed_seed},
              {"w", p.w},                 {"b", p.b},            {"c", p.c},
              {"param_version", p.version}};
}

inline DeskParams desk_from_json(const json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "prlm.policy") {
    throw SchemaError("not a desk policy checkpoint");
  }
  if (doc.value("version", 0) != 1) {
    throw SchemaError("unsupported policy checkpoint version " +
                      std::to_string(doc.value("version", 0)));
  }
  DeskParams p;
  p.vocab = doc.at("vocab").get<std::vector<std::string>>();
  p.embed_dim = doc.at("embed_dim").get<std::size_t>();
  p.window = doc.at("window").get<std::size_t>();
  p.embed_seed = doc.at("embed_seed").get<std::uint64_t>();
  p.w = doc.at("w").get<std::vector<double>>();
  p.b = doc.at("b").get<std::vector<double>>();
  // Checkpoints written before the copy gate existed lack "c"; they load as a
  // zero gate, which reproduces the old model exactly.
  if (doc.contains("c")) p.c = doc.at("c").get<std::vector<double>>();
  p.version = doc.at("param_version").get<std::uint64_t>();
  return p;
}

inline void save_desk(const DeskParams& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint: " + path.string());
  out << desk_to_json(p).dump() << "\n";
}

inline DeskParams load_desk(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw ParseError(1, e.what());
  }
  return desk_from_json(doc);
}

// ---------------------------------------------------------------------------
// Backend handle

// Generation-only interface; the remote adapter implements it without
// exposing transport details here.
class TextGenerator {
 public:
  virtual ~TextGenerator() = default;
  virtual std::vector<std::string> generate(const std::string& prompt, int n, int max_tokens,
                                            std::uint64_t seed) = 0;
};

enum class BackendKind { desk, remote };

struct PolicyHandle {
  BackendKind kind = BackendKind::desk;
  std::shared_ptr<DeskPolicy> desk;
  std::shared_ptr<TextGenerator> remote;

  static PolicyHandle make_desk(std::shared_ptr<DeskPolicy> p) {
    PolicyHandle h;
    h.kind = BackendKind::desk;
    h.desk = std::move(p);
    if (!h.desk) throw ConfigError("desk backend requires a policy");
    return h;
  }

  static PolicyHandle make_remote(std::shared_ptr<TextGenerator> g) {
    PolicyHandle h;
    h.kind = BackendKind::remote;
    h.remote = std::move(g);
    if (!h.remote) throw ConfigError("remote backend requires a generator");
    return h;
  }

  DeskPolicy& require_desk() const {
    if (kind != BackendKind::desk || !desk) {
      throw Unsupported("operation requires the trainable desk backend");
    }
    return *desk;
  }
};

// Backend-independent text sampling. Desk draws seeded ancestral samples;
// remote issues n requests and returns their contents in request order.
inline std::vector<std::string> sample_text(const PolicyHandle& h, const std::string& prompt,
                                            int n, int max_tokens, std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample count must be >= 1");
  if (h.kind == BackendKind::desk) {
    SampleOptions opt;
    opt.max_tokens = max_tokens;
    std::vector<std::string> out;
    for (auto& s : h.desk->sample(prompt, n, seed, opt)) out.push_back(std::move(s.text));
    return out;
  }
  return h.remote->generate(prompt, n, max_tokens, seed);
}

}  // namespace prlm::policy
