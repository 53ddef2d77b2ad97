#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "prlm/corpus.hpp"
#include "prlm/errors.hpp"
#include "prlm/policy.hpp"
#include "prlm/prm.hpp"
#include "prlm/retrieval.hpp"
#include "prlm/reward.hpp"
#include "prlm/rng.hpp"
#include "prlm/textproc.hpp"

namespace prlm::grpo {

enum class Mode { on_policy_single_step, clipped_multi_epoch };

struct GrpoConfig {
  int group_size = 4;
  int max_completion = 768;
  double clip_eps = 0.2;
  double kl_coef = 0.0;
  double lr = 1e-2;  // desk-scale default; 1e-6 suits billion-parameter setups
  double std_floor = 1e-8;
  double temperature = 1.0;
  Mode mode = Mode::on_policy_single_step;
};

inline void validate(const GrpoConfig& cfg) {
  if (cfg.group_size < 2) throw GroupTooSmall(cfg.group_size);
  if (cfg.max_completion < 1) throw ConfigError("max_completion must be >= 1");
  if (cfg.clip_eps <= 0.0 || cfg.clip_eps >= 1.0) throw ConfigError("clip_eps must be in (0, 1)");
  if (cfg.kl_coef < 0.0) throw ConfigError("kl_coef must be >= 0");
  if (cfg.std_floor <= 0.0) throw ConfigError("std_floor must be positive");
}

// A_j = (r_j - mean) / (population_std + std_floor); a group whose spread is
// below the floor carries no signal and maps to all-zero advantages.
inline std::vector<double> group_advantages(const std::vector<double>& rewards,
                                            double std_floor) {
  if (rewards.size() < 2) throw GroupTooSmall(static_cast<int>(rewards.size()));
  for (double r : rewards) {
    if (!std::isfinite(r)) throw NonFiniteLoss("reward entering advantage computation");
  }
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  const double std = std::sqrt(var);
  std::vector<double> adv(rewards.size(), 0.0);
  if (std < std_floor) return adv;
  for (std::size_t j = 0; j < rewards.size(); ++j) {
    adv[j] = (rewards[j] - mean) / (std + std_floor);
  }
  return adv;
}

struct GroupSample {
  std::string input_key;
  std::string prompt;
  std::vector<textproc::StructuredOutput> outputs;
  std::vector<std::vector<int>> token_ids;           // desk vocab ids per output
  std::vector<std::vector<double>> token_logprobs;   // behavior-policy logprobs
  std::vector<std::vector<double>> ref_logprobs;     // empty unless KL is used
  std::vector<reward::RewardBreakdown> rewards;
  std::vector<double> advantages;
};

struct UpdateStats {
  double loss = 0.0;
  double grad_norm = 0.0;
  double mean_reward = 0.0;
};

namespace detail {

inline void check_group(const GroupSample& g) {
  const std::size_t G = g.outputs.size();
  if (G < 2) throw GroupTooSmall(static_cast<int>(G));
  if (g.token_ids.size() != G || g.token_logprobs.size() != G || g.rewards.size() != G ||
      g.advantages.size() != G) {
    throw ShapeMismatch("group lists must all have length G");
  }
  for (std::size_t j = 0; j < G; ++j) {
    if (g.token_ids[j].empty() || g.token_ids[j].size() != g.token_logprobs[j].size()) {
      throw ShapeMismatch("token ids and logprobs must align and be non-empty");
    }
  }
}

}  // namespace detail

// One gradient step on the desk policy.
//
// on_policy_single_step: loss = -(1/G) sum_j A_j * (1/|o_j|) sum_t log pi(t),
// evaluated at the sampling-time logprobs (the policy has not moved since).
//
// clipped_multi_epoch: per-token ratio rho = exp(logpi_now - logpi_behavior),
// objective -min(rho*A, clip(rho, 1-eps, 1+eps)*A), plus kl_coef times the
// estimator ref/pi - log(ref/pi) - 1 against the stored reference logprobs.
//
// A group whose advantages are all zero is a no-op: parameters are left
// bit-identical and the reported loss is 0.
inline UpdateStats policy_gradient_step(const GroupSample& group, policy::PolicyHandle& handle,
                                        const GrpoConfig& cfg) {
  validate(cfg);
  detail::check_group(group);
  auto& desk = handle.require_desk();

  const std::size_t G = group.outputs.size();
  UpdateStats stats;
  for (const auto& r : group.rewards) stats.mean_reward += r.total;
  stats.mean_reward /= static_cast<double>(G);

  // A zero-advantage group carries no preference signal and the update is a
  // bit-identical no-op -- unless a KL penalty is active, which applies every
  // step independent of the advantages.
  const bool all_zero = std::all_of(group.advantages.begin(), group.advantages.end(),
                                    [](double a) { return a == 0.0; });
  const bool kl_active = cfg.mode == Mode::clipped_multi_epoch && cfg.kl_coef > 0.0;
  if (all_zero && !kl_active) return stats;

  policy::GradBuffer grad(desk.vocab_size(), desk.params().feature_dim());
  const double inv_g = 1.0 / static_cast<double>(G);

  if (cfg.mode == Mode::on_policy_single_step) {
    for (std::size_t j = 0; j < G; ++j) {
      const double adv = group.advantages[j];
      const std::size_t len = group.token_ids[j].size();
      double seq_lp = 0.0;
      for (double lp : group.token_logprobs[j]) seq_lp += lp;
      stats.loss -= inv_g * adv * seq_lp / static_cast<double>(len);
      if (adv == 0.0) continue;
      const std::vector<double> coeffs(len, adv / static_cast<double>(len));
      desk.accumulate_weighted_logprob_grad(group.prompt, group.token_ids[j], coeffs, grad);
    }
    grad.scale(-inv_g);
  } else {
    if (cfg.kl_coef > 0.0 && group.ref_logprobs.size() != G) {
      throw ConfigError("kl_coef > 0 requires reference logprobs for every output");
    }
    for (std::size_t j = 0; j < G; ++j) {
      const double adv = group.advantages[j];
      const std::size_t len = group.token_ids[j].size();
      const auto now = desk.logprob(group.prompt, group.token_ids[j]);
      std::vector<double> coeffs(len, 0.0);
      const double inv_len = 1.0 / static_cast<double>(len);
      for (std::size_t t = 0; t < len; ++t) {
        const double rho = std::exp(now[t] - group.token_logprobs[j][t]);
        const double clipped = std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        stats.loss -= inv_g * inv_len * std::min(rho * adv, clipped * adv);
        const bool active = adv > 0.0 ? rho <= 1.0 + cfg.clip_eps : rho >= 1.0 - cfg.clip_eps;
        if (active) coeffs[t] += -inv_g * inv_len * adv * rho;
        if (cfg.kl_coef > 0.0) {
          const double r = std::exp(group.ref_logprobs[j][t] - now[t]);
          stats.loss += inv_g * inv_len * cfg.kl_coef * (r - std::log(r) - 1.0);
          coeffs[t] += inv_g * inv_len * cfg.kl_coef * (1.0 - r);
        }
      }
      desk.accumulate_weighted_logprob_grad(group.prompt, group.token_ids[j], coeffs, grad);
    }
  }

  stats.grad_norm = std::sqrt(grad.squared_norm());
  try {
    desk.apply_gradient(grad, cfg.lr);
  } catch (const NonFiniteGradient&) {
    throw NonFiniteGradient("group " + group.input_key);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainStepLog {
  int step = 0;
  double mean_reward = 0.0;
  double r_think_rate = 0.0;
  double mean_r_personal = 0.0;
  double personalization_acc = 0.0;  // -1 when the user's style is unknown
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainingLog {
  std::vector<TrainStepLog> rows;

  void write_csv(std::ostream& out) const {
    out << "step,mean_reward,r_think_rate,mean_r_personal,personalization_acc,loss,grad_norm\n";
    char buf[256];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.step,
                    r.mean_reward, r.r_think_rate, r.mean_r_personal, r.personalization_acc,
                    r.loss, r.grad_norm);
      out << buf;
    }
  }
};

struct TrainLoopConfig {
  GrpoConfig grpo;
  reward::RewardWeights weights;
  retrieval::Strategy strategy = retrieval::Strategy::bm25;
  int k = 5;
  int steps = 2000;
  std::uint64_t seed = 0;
  std::size_t sample_limit = 500;
  bool use_personal_reward = true;  // false reproduces the no-personal-reward ablation arm
  // Anchor the policy to its state at loop entry with the KL penalty: the
  // frozen start (typically a warmed-up checkpoint) serves as the reference
  // policy. Requires the clipped mode and kl_coef > 0. Positions under strong
  // reward pressure escape the anchor while signal-flat positions keep their
  // starting entropy, which preserves exploration over long runs.
  bool kl_to_start = false;
  // With kl_to_start, re-snapshot the reference to the current policy every
  // ref_refresh steps (0 anchors to the loop entry for the whole run). A
  // refreshed anchor bounds how far each phase drifts without capping total
  // movement: the policy can keep sharpening where the reward insists, yet
  // never moves far from its recent self in any one phase.
  int ref_refresh = 0;
  policy::PromptTemplate tmpl;
  std::filesystem::path abort_checkpoint;  // written before rethrowing a step failure
  std::size_t dense_dim = 64;              // hashed embeddings for the dense strategy
};

namespace detail {

inline bool answer_has_style(const std::string& answer, const std::string& style) {
  const auto toks = textproc::tokenize(answer).tokens;
  return std::find(toks.begin(), toks.end(), style) != toks.end();
}

}  // namespace detail

// Seeded GRPO over a fixed subset of the train split. Per step: retrieve the
// example's visible profile, build the prompt, draw G completions, score them
// with the composite reward, standardize within the group and apply one
// policy-gradient step. Fully deterministic for a fixed config and seed.
inline TrainingLog train_loop(const corpus::Dataset& ds, policy::PolicyHandle& handle,
                              const prm::ScorerParams* scorer, const TrainLoopConfig& cfg) {
  validate(cfg.grpo);
  if (cfg.steps < 1) throw ConfigError("steps must be >= 1");
  if (cfg.k < 1) throw ConfigError("k must be >= 1");
  if (cfg.sample_limit < 1) throw ConfigError("sample_limit must be >= 1");
  if (cfg.kl_to_start &&
      (cfg.grpo.mode != Mode::clipped_multi_epoch || cfg.grpo.kl_coef <= 0.0)) {
    throw ConfigError("kl_to_start requires the clipped mode and kl_coef > 0");
  }
  if (cfg.ref_refresh < 0) throw ConfigError("ref_refresh must be >= 0");
  if (cfg.ref_refresh > 0 && !cfg.kl_to_start) {
    throw ConfigError("ref_refresh needs kl_to_start");
  }
  auto& desk = handle.require_desk();
  std::optional<policy::DeskPolicy> ref;
  if (cfg.kl_to_start) ref.emplace(desk.params());

  const auto train = ds.split_examples(corpus::Split::train);
  if (train.empty()) throw EmptyInput("train split");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng subset_rng(derive_seed(cfg.seed, "grpo.subset"));
  subset_rng.shuffle(order);
  order.resize(std::min(cfg.sample_limit, order.size()));

  std::map<std::string, retrieval::RetrievedContext> ctx_cache;
  TrainingLog log;
  log.rows.reserve(static_cast<std::size_t>(cfg.steps));

  try {
    for (int step = 1; step <= cfg.steps; ++step) {
      if (ref && cfg.ref_refresh > 0 && step > 1 && (step - 1) % cfg.ref_refresh == 0) {
        ref.emplace(desk.params());
      }
      const std::size_t pick = order[static_cast<std::size_t>(step - 1) % order.size()];
      const corpus::Example& e = *train[pick];

      auto ctx_it = ctx_cache.find(e.example_id);
      if (ctx_it == ctx_cache.end()) {
        ctx_it = ctx_cache
                     .emplace(e.example_id,
                              retrieval::retrieve_for_example(
                                  ds, e, cfg.strategy, cfg.k,
                                  derive_seed(cfg.seed, "grpo.retrieve", pick), cfg.dense_dim))
                     .first;
      }
      const std::string prompt = policy::build_prompt(e.query, ctx_it->second, cfg.tmpl);

      policy::SampleOptions opt;
      opt.max_tokens = cfg.grpo.max_completion;
      opt.temperature = cfg.grpo.temperature;
      const auto samples =
          desk.sample(prompt, cfg.grpo.group_size, derive_seed(cfg.seed, "grpo.step", step), opt);

      GroupSample group;
      group.input_key = e.example_id;
      group.prompt = prompt;
      std::vector<double> totals;
      const auto style = corpus::user_style(ds.users.at(e.user_id));
      double style_hits = 0.0;
      TrainStepLog row;
      row.step = step;
      for (const auto& s : samples) {
        auto parsed = textproc::parse_think(s.text);
        reward::RewardBreakdown r;
        r.correct = reward::correctness_reward(parsed.answer, e.reference);
        r.think = reward::format_reward(parsed);
        r.personal = (cfg.use_personal_reward && scorer)
                         ? prm::personal_reward(*scorer, e.query, s.text)
                         : 0.0;
        r.total = r.correct + cfg.weights.alpha * r.think + cfg.weights.beta * r.personal;
        row.r_think_rate += r.think;
        row.mean_r_personal += r.personal;
        if (style && detail::answer_has_style(parsed.answer, *style)) style_hits += 1.0;
        totals.push_back(r.total);
        group.outputs.push_back(std::move(parsed));
        if (ref) group.ref_logprobs.push_back(ref->logprob(prompt, s.tokens));
        group.token_ids.push_back(s.tokens);
        group.token_logprobs.push_back(s.logprobs);
        group.rewards.push_back(r);
      }
      const double inv_g = 1.0 / static_cast<double>(samples.size());
      row.r_think_rate *= inv_g;
      row.mean_r_personal *= inv_g;
      row.personalization_acc = style ? style_hits * inv_g : -1.0;

      group.advantages = group_advantages(totals, cfg.grpo.std_floor);
      const auto stats = policy_gradient_step(group, handle, cfg.grpo);
      row.mean_reward = stats.mean_reward;
      row.loss = stats.loss;
      row.grad_norm = stats.grad_norm;
      log.rows.push_back(row);
    }
  } catch (...) {
    if (!cfg.abort_checkpoint.empty()) policy::save_desk(desk.params(), cfg.abort_checkpoint);
    throw;
  }
  return log;
}

// ---------------------------------------------------------------------------
// Demonstration warmup

struct WarmupConfig {
  int steps = 0;  // 0 disables the stage
  double lr = 0.5;
  std::uint64_t seed = 0;
  std::size_t sample_limit = 500;
  int k = 5;
  retrieval::Strategy strategy = retrieval::Strategy::bm25;
  policy::PromptTemplate tmpl;
  std::size_t dense_dim = 64;
};

// Supervised stage run before policy-gradient training: behavior cloning of a
// demonstration writer onto the desk policy. Full-scale pipelines start from
// an instruction-tuned checkpoint that already emits the reasoning-block
// format on request; a freshly initialized desk policy has no such prior, and
// without one the binary format reward is sampled too rarely to take hold.
// Cloning a handful of formatted demonstrations plays the role of that
// checkpoint. Per step one train example is drawn round-robin from a seeded
// subset and the step ascends the mean token log-likelihood of the
// demonstration, teacher-forced behind the example's retrieval prompt.
// Returns one row per step whose `loss` field carries the demonstration's
// mean negative log-likelihood before the update. Deterministic for a fixed
// dataset, config and seed.
inline TrainingLog warmup_clone(const corpus::Dataset& ds, policy::PolicyHandle& handle,
                                const prm::GenFn& demo, const WarmupConfig& cfg) {
  if (cfg.steps < 0) throw ConfigError("warmup steps must be >= 0");
  if (cfg.lr <= 0.0) throw ConfigError("warmup lr must be positive");
  if (cfg.k < 1) throw ConfigError("k must be >= 1");
  if (cfg.sample_limit < 1) throw ConfigError("sample_limit must be >= 1");
  auto& desk = handle.require_desk();

  TrainingLog log;
  if (cfg.steps == 0) return log;

  const auto train = ds.split_examples(corpus::Split::train);
  if (train.empty()) throw EmptyInput("train split");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng subset_rng(derive_seed(cfg.seed, "warmup.subset"));
  subset_rng.shuffle(order);
  order.resize(std::min(cfg.sample_limit, order.size()));

  std::map<std::string, retrieval::RetrievedContext> ctx_cache;
  log.rows.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 1; step <= cfg.steps; ++step) {
    const std::size_t pick = order[static_cast<std::size_t>(step - 1) % order.size()];
    const corpus::Example& e = *train[pick];

    auto ctx_it = ctx_cache.find(e.example_id);
    if (ctx_it == ctx_cache.end()) {
      ctx_it = ctx_cache
                   .emplace(e.example_id,
                            retrieval::retrieve_for_example(
                                ds, e, cfg.strategy, cfg.k,
                                derive_seed(cfg.seed, "warmup.retrieve", pick), cfg.dense_dim))
                   .first;
    }
    const std::string prompt = policy::build_prompt(e.query, ctx_it->second, cfg.tmpl);

    auto target = desk.encode(demo(e));
    target.push_back(desk.eos_id());
    const double inv_len = 1.0 / static_cast<double>(target.size());

    TrainStepLog row;
    row.step = step;
    for (double lp : desk.logprob(prompt, target)) row.loss -= lp * inv_len;

    policy::GradBuffer grad(desk.vocab_size(), desk.params().feature_dim());
    const std::vector<double> coeffs(target.size(), -inv_len);
    desk.accumulate_weighted_logprob_grad(prompt, target, coeffs, grad);
    row.grad_norm = std::sqrt(grad.squared_norm());
    try {
      desk.apply_gradient(grad, cfg.lr);
    } catch (const NonFiniteGradient&) {
      throw NonFiniteGradient("warmup step on " + e.example_id);
    }
    log.rows.push_back(row);
  }
  return log;
}

}  // namespace prlm::grpo
