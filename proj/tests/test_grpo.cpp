#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "prlm/corpus.hpp"
#include "prlm/grpo.hpp"
#include "prlm/policy.hpp"
#include "prlm/prm.hpp"
#include "prlm/rng.hpp"

using namespace prlm;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> test_vocab() {
  return {policy::kThinkOpen, policy::kThinkClose, policy::kEos, policy::kUnk,
          "alpha", "beta", "gamma", "delta"};
}

policy::DeskParams random_params(std::uint64_t seed) {
  policy::DeskParams p;
  p.vocab = test_vocab();
  p.embed_dim = 4;
  p.window = 2;
  p.embed_seed = 11;
  Rng rng(seed);
  p.w.resize(p.vocab.size() * p.feature_dim());
  p.b.resize(p.vocab.size());
  for (double& x : p.w) x = rng.uniform(-0.5, 0.5);
  for (double& x : p.b) x = rng.uniform(-0.2, 0.2);
  return p;
}

grpo::GroupSample make_group(const policy::DeskPolicy& pol, const std::string& prompt,
                             const std::vector<std::vector<int>>& token_ids,
                             const std::vector<double>& totals, double std_floor = 1e-8) {
  grpo::GroupSample g;
  g.input_key = "fixture";
  g.prompt = prompt;
  for (std::size_t j = 0; j < token_ids.size(); ++j) {
    g.token_ids.push_back(token_ids[j]);
    g.token_logprobs.push_back(pol.logprob(prompt, token_ids[j]));
    g.outputs.push_back(textproc::parse_think(pol.render(token_ids[j])));
    reward::RewardBreakdown r;
    r.total = totals[j];
    g.rewards.push_back(r);
  }
  g.advantages = grpo::group_advantages(totals, std_floor);
  return g;
}

grpo::GrpoConfig base_cfg() {
  grpo::GrpoConfig cfg;
  cfg.group_size = 2;
  cfg.lr = 0.05;
  return cfg;
}

}  // namespace

TEST_CASE("group advantages standardize by the population statistics") {
  const double floor = 1e-8;
  const auto adv = grpo::group_advantages({1.0, 2.0, 3.0, 4.0}, floor);
  const double mean = 2.5;
  const double pop_std = std::sqrt(1.25);  // population variance, not sample
  REQUIRE(adv.size() == 4);
  for (std::size_t j = 0; j < 4; ++j) {
    const double r = 1.0 + static_cast<double>(j);
    CHECK(adv[j] == Approx((r - mean) / (pop_std + floor)).margin(1e-15));
  }
  CHECK(adv[0] == Approx(-1.3416407).margin(1e-6));
  CHECK(adv[0] == Approx(-adv[3]).margin(1e-15));
}

TEST_CASE("identical rewards carry no signal") {
  const auto adv = grpo::group_advantages({0.7, 0.7, 0.7, 0.7}, 1e-8);
  for (const double a : adv) CHECK(a == 0.0);
  // Spread below the floor is treated as zero too.
  const auto tiny = grpo::group_advantages({0.0, 1e-9}, 1e-8);
  for (const double a : tiny) CHECK(a == 0.0);
  // Spread just above the floor is kept.
  const auto kept = grpo::group_advantages({0.0, 1.0}, 1e-8);
  CHECK(kept[1] > 0.0);
}

TEST_CASE("advantages are mean-zero, unit-spread, and shift invariant") {
  Rng rng(1234);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    std::vector<double> rewards;
    for (std::size_t i = 0; i < n; ++i) rewards.push_back(rng.uniform(-3.0, 3.0));
    const auto adv = grpo::group_advantages(rewards, 1e-8);

    double mean = 0.0;
    for (const double a : adv) mean += a;
    mean /= static_cast<double>(n);
    CHECK(mean == Approx(0.0).margin(1e-12));

    double var = 0.0;
    for (const double a : adv) var += (a - mean) * (a - mean);
    var /= static_cast<double>(n);
    if (std::sqrt(var) > 1e-3) {  // non-degenerate draw
      CHECK(std::sqrt(var) == Approx(1.0).margin(1e-6));
    }

    std::vector<double> shifted = rewards;
    for (double& r : shifted) r += 5.25;
    const auto adv_shifted = grpo::group_advantages(shifted, 1e-8);
    std::vector<double> scaled = rewards;
    for (double& r : scaled) r *= 3.0;
    const auto adv_scaled = grpo::group_advantages(scaled, 1e-8);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(adv_shifted[i] == Approx(adv[i]).margin(1e-9));
      CHECK(adv_scaled[i] == Approx(adv[i]).margin(1e-6));
    }
  }
}

TEST_CASE("advantage computation rejects bad groups") {
  CHECK_THROWS_AS(grpo::group_advantages({}, 1e-8), GroupTooSmall);
  CHECK_THROWS_AS(grpo::group_advantages({1.0}, 1e-8), GroupTooSmall);
  CHECK_THROWS_AS(grpo::group_advantages({1.0, std::nan("")}, 1e-8), NonFiniteLoss);
}

TEST_CASE("config validation") {
  auto cfg = base_cfg();
  CHECK_NOTHROW(grpo::validate(cfg));
  cfg.group_size = 1;
  CHECK_THROWS_AS(grpo::validate(cfg), GroupTooSmall);
  cfg = base_cfg();
  cfg.clip_eps = 0.0;
  CHECK_THROWS_AS(grpo::validate(cfg), ConfigError);
  cfg = base_cfg();
  cfg.clip_eps = 1.0;
  CHECK_THROWS_AS(grpo::validate(cfg), ConfigError);
  cfg = base_cfg();
  cfg.kl_coef = -0.1;
  CHECK_THROWS_AS(grpo::validate(cfg), ConfigError);
  cfg = base_cfg();
  cfg.std_floor = 0.0;
  CHECK_THROWS_AS(grpo::validate(cfg), ConfigError);
  cfg = base_cfg();
  cfg.max_completion = 0;
  CHECK_THROWS_AS(grpo::validate(cfg), ConfigError);
}

TEST_CASE("a policy step raises the likelihood of positively rewarded outputs") {
  auto handle = policy::PolicyHandle::make_desk(
      std::make_shared<policy::DeskPolicy>(policy::DeskPolicy::zeros(test_vocab())));
  const auto& pol = *handle.desk;
  const std::string prompt = "the fixture prompt";
  const auto group = make_group(pol, prompt, {{4, 5}, {6}}, {1.0, 0.0});

  const double lp_good_before = pol.logprob(prompt, {4, 5})[0];
  const double lp_bad_before = pol.logprob(prompt, {6})[0];

  const auto stats = grpo::policy_gradient_step(group, handle, base_cfg());
  CHECK(stats.mean_reward == Approx(0.5));
  CHECK(stats.grad_norm > 0.0);

  CHECK(pol.logprob(prompt, {4, 5})[0] > lp_good_before);
  CHECK(pol.logprob(prompt, {6})[0] < lp_bad_before);

  // The reported loss is the advantage-weighted mean sequence logprob.
  double expected = 0.0;
  for (std::size_t j = 0; j < 2; ++j) {
    double seq = 0.0;
    for (const double lp : group.token_logprobs[j]) seq += lp;
    expected -= 0.5 * group.advantages[j] * seq / static_cast<double>(group.token_ids[j].size());
  }
  CHECK(stats.loss == Approx(expected).margin(1e-12));
}

TEST_CASE("a zero-signal group leaves the parameters bit-identical") {
  auto handle = policy::PolicyHandle::make_desk(
      std::make_shared<policy::DeskPolicy>(policy::DeskPolicy(random_params(9))));
  const auto before = handle.desk->params();
  const auto group = make_group(*handle.desk, "p", {{4}, {5}, {6}}, {0.25, 0.25, 0.25});

  const auto stats = grpo::policy_gradient_step(group, handle, base_cfg());
  CHECK(handle.desk->params() == before);  // includes the version counter
  CHECK(stats.loss == 0.0);
  CHECK(stats.grad_norm == 0.0);
  CHECK(stats.mean_reward == Approx(0.25));
}

TEST_CASE("group shape violations are rejected") {
  auto handle = policy::PolicyHandle::make_desk(
      std::make_shared<policy::DeskPolicy>(policy::DeskPolicy::zeros(test_vocab())));
  const auto good = make_group(*handle.desk, "p", {{4}, {5}}, {1.0, 0.0});

  auto too_small = good;
  too_small.outputs.resize(1);
  too_small.token_ids.resize(1);
  too_small.token_logprobs.resize(1);
  too_small.rewards.resize(1);
  too_small.advantages.resize(1);
  CHECK_THROWS_AS(grpo::policy_gradient_step(too_small, handle, base_cfg()), GroupTooSmall);

  auto misaligned = good;
  misaligned.token_logprobs[0].push_back(-1.0);
  CHECK_THROWS_AS(grpo::policy_gradient_step(misaligned, handle, base_cfg()), ShapeMismatch);

  auto empty_seq = good;
  empty_seq.token_ids[0].clear();
  empty_seq.token_logprobs[0].clear();
  CHECK_THROWS_AS(grpo::policy_gradient_step(empty_seq, handle, base_cfg()), ShapeMismatch);

  auto missing_adv = good;
  missing_adv.advantages.clear();
  CHECK_THROWS_AS(grpo::policy_gradient_step(missing_adv, handle, base_cfg()), ShapeMismatch);

  struct FakeGen : policy::TextGenerator {
    std::vector<std::string> generate(const std::string&, int n, int, std::uint64_t) override {
      return std::vector<std::string>(static_cast<std::size_t>(n), "x");
    }
  };
  auto remote = policy::PolicyHandle::make_remote(std::make_shared<FakeGen>());
  CHECK_THROWS_AS(grpo::policy_gradient_step(good, remote, base_cfg()), Unsupported);
}

TEST_CASE("at ratio one the clipped update equals the on-policy update") {
  const auto params = random_params(15);
  const std::string prompt = "shared prompt";

  auto on_handle = policy::PolicyHandle::make_desk(
      std::make_shared<policy::DeskPolicy>(policy::DeskPolicy(params)));
  auto clip_handle = policy::PolicyHandle::make_desk(
      std::make_shared<policy::DeskPolicy>(policy::DeskPolicy(params)));

  // Behavior logprobs computed at the current parameters: rho == 1 everywhere.
  const auto group = make_group(*on_handle.desk, prompt, {{4, 5, 6}, {7, 0}}, {2.0, -1.0});

  auto on_cfg = base_cfg();
  on_cfg.mode = grpo::Mode::on_policy_single_step;
  const auto on_stats = grpo::policy_gradient_step(group, on_handle, on_cfg);

  auto clip_cfg = base_cfg();
  clip_cfg.mode = grpo::Mode::clipped_multi_epoch;
  const auto clip_stats = grpo::policy_gradient_step(group, clip_handle, clip_cfg);

  // Same gradient, hence the same parameters; the loss definitions differ.
  const auto& pw = on_handle.desk->params().w;
  const auto& qw = clip_handle.desk->params().w;
  REQUIRE(pw.size() == qw.size());
  for (std::size_t i = 0; i < pw.size(); ++i) {
    CHECK(pw[i] == Approx(qw[i]).margin(1e-12));
  }
  for (std::size_t i = 0; i < on_handle.desk->params().b.size(); ++i) {
    CHECK(on_handle.desk->params().b[i] == Approx(clip_handle.desk->params().b[i]).margin(1e-12));
  }
  CHECK(on_stats.grad_norm == Approx(clip_stats.grad_norm).margin(1e-9));
  // At rho = 1 the surrogate reduces to -mean(A), which is zero by centering.
  CHECK(clip_stats.loss == Approx(0.0).margin(1e-12));
}

TEST_CASE("the clip deactivates the unclipped branch exactly where it should") {
  const auto params = random_params(25);
  const std::string prompt = "clip prompt";
  auto handle = policy::PolicyHandle::make_desk(
      std::make_shared<policy::DeskPolicy>(policy::DeskPolicy(params)));

  auto group = make_group(*handle.desk, prompt, {{4}, {5}}, {1.0, 0.0});
  // Shift the behavior logprobs down by ln 3: rho = 3 for both samples.
  for (auto& lps : group.token_logprobs) {
    for (double& lp : lps) lp -= std::log(3.0);
  }

  auto cfg = base_cfg();
  cfg.mode = grpo::Mode::clipped_multi_epoch;  // clip_eps = 0.2

  // Expected coefficients per the documented rule: the positive-advantage
  // sample sits past 1 + eps, so only the negative-advantage sample moves,
  // with its unclipped rho as a multiplier.
  const policy::DeskPolicy probe(params);
  policy::GradBuffer expected(params.vocab.size(), params.feature_dim());
  {
    const auto now = probe.logprob(prompt, group.token_ids[1]);
    const double rho = std::exp(now[0] - group.token_logprobs[1][0]);
    const double coeff = -0.5 * 1.0 * group.advantages[1] * rho;
    probe.accumulate_weighted_logprob_grad(prompt, group.token_ids[1], {coeff}, expected);
  }
  auto manual = policy::DeskPolicy(params);
  manual.apply_gradient(expected, cfg.lr);

  grpo::policy_gradient_step(group, handle, cfg);
  const auto& got = handle.desk->params();
  for (std::size_t i = 0; i < got.w.size(); ++i) {
    CHECK(got.w[i] == Approx(manual.params().w[i]).margin(1e-13));
  }
  for (std::size_t i = 0; i < got.b.size(); ++i) {
    CHECK(got.b[i] == Approx(manual.params().b[i]).margin(1e-13));
  }
}

TEST_CASE("the kl penalty is inert at the reference and charged away from it") {
  const auto params = random_params(33);
  const std::string prompt = "kl prompt";

  SECTION("reference equal to current policy adds nothing") {
    auto with_kl = policy::PolicyHandle::make_desk(
        std::make_shared<policy::DeskPolicy>(policy::DeskPolicy(params)));
    auto without_kl = policy::PolicyHandle::make_desk(
        std::make_shared<policy::DeskPolicy>(policy::DeskPolicy(params)));

    auto group = make_group(*with_kl.desk, prompt, {{4, 5}, {6}}, {1.0, 0.0});
    group.ref_logprobs = group.token_logprobs;  // ref == behavior == now

    auto cfg = base_cfg();
    cfg.mode = grpo::Mode::clipped_multi_epoch;
    cfg.kl_coef = 0.7;
    const auto stats_kl = grpo::policy_gradient_step(group, with_kl, cfg);

    cfg.kl_coef = 0.0;
    const auto stats_plain = grpo::policy_gradient_step(group, without_kl, cfg);

    CHECK(with_kl.desk->params().w == without_kl.desk->params().w);
    CHECK(with_kl.desk->params().b == without_kl.desk->params().b);
    CHECK(stats_kl.loss == Approx(stats_plain.loss).margin(1e-15));
  }

  SECTION("a displaced reference adds the estimator value to the loss") {
    auto a = policy::PolicyHandle::make_desk(
        std::make_shared<policy::DeskPolicy>(policy::DeskPolicy(params)));
    auto b = policy::PolicyHandle::make_desk(
        std::make_shared<policy::DeskPolicy>(policy::DeskPolicy(params)));

    auto group = make_group(*a.desk, prompt, {{4}, {5}}, {1.0, 0.0});
    group.ref_logprobs = group.token_logprobs;
    for (auto& lps : group.ref_logprobs) {
      for (double& lp : lps) lp -= 1.0;  // r = e^-1 per token
    }

    auto cfg = base_cfg();
    cfg.mode = grpo::Mode::clipped_multi_epoch;
    cfg.kl_coef = 0.0;
    const auto plain = grpo::policy_gradient_step(group, a, cfg);
    cfg.kl_coef = 0.5;
    const auto charged = grpo::policy_gradient_step(group, b, cfg);

    // Estimator r - log r - 1 at r = e^-1 is e^-1; both samples have length 1.
    const double per_token = std::exp(-1.0);
    CHECK(charged.loss - plain.loss == Approx(0.5 * per_token).margin(1e-9));
  }

  SECTION("kl demands reference logprobs") {
    auto handle = policy::PolicyHandle::make_desk(
        std::make_shared<policy::DeskPolicy>(policy::DeskPolicy(params)));
    auto group = make_group(*handle.desk, prompt, {{4}, {5}}, {1.0, 0.0});
    auto cfg = base_cfg();
    cfg.mode = grpo::Mode::clipped_multi_epoch;
    cfg.kl_coef = 0.5;
    CHECK_THROWS_AS(grpo::policy_gradient_step(group, handle, cfg), ConfigError);
  }
}

TEST_CASE("the training loop is deterministic end to end") {
  const auto ds = corpus::synth_dataset(7, 4, {"azure", "crimson"}, 0.25);
  const auto vocab = policy::vocab_from_dataset(ds);

  prm::FeatureConfig fc;
  fc.hash_dim = 64;
  const auto scorer = prm::ScorerParams::seeded(fc, 8, 2);

  grpo::TrainLoopConfig cfg;
  cfg.grpo.group_size = 4;
  cfg.grpo.max_completion = 16;
  cfg.grpo.lr = 0.05;
  cfg.k = 3;
  cfg.steps = 20;
  cfg.seed = 5;
  cfg.sample_limit = 8;

  const auto run = [&]() {
    auto handle = policy::PolicyHandle::make_desk(
        std::make_shared<policy::DeskPolicy>(policy::DeskPolicy::zeros(vocab, 8, 4, 1)));
    auto log = grpo::train_loop(ds, handle, &scorer, cfg);
    std::ostringstream csv;
    log.write_csv(csv);
    return std::make_pair(csv.str(), handle.desk->params());
  };

  const auto first = run();
  const auto second = run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);

  // Structure of the log: one row per step, all columns finite.
  std::istringstream in(first.first);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,mean_reward,r_think_rate,mean_r_personal,personalization_acc,loss,grad_norm");
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == cfg.steps);
}

TEST_CASE("training loop rows track the auxiliary signals") {
  const auto ds = corpus::synth_dataset(9, 2, {"azure", "crimson"}, 0.0);
  const auto vocab = policy::vocab_from_dataset(ds);

  prm::FeatureConfig fc;
  fc.hash_dim = 64;
  const auto scorer = prm::ScorerParams::seeded(fc, 8, 3);

  grpo::TrainLoopConfig cfg;
  cfg.grpo.group_size = 2;
  cfg.grpo.max_completion = 12;
  cfg.steps = 6;
  cfg.seed = 11;
  cfg.sample_limit = 4;

  SECTION("personalization accuracy is defined on style-labeled data") {
    auto handle = policy::PolicyHandle::make_desk(
        std::make_shared<policy::DeskPolicy>(policy::DeskPolicy::zeros(vocab, 8, 4, 1)));
    const auto log = grpo::train_loop(ds, handle, &scorer, cfg);
    REQUIRE(log.rows.size() == 6);
    for (const auto& row : log.rows) {
      CHECK(row.personalization_acc >= 0.0);
      CHECK(row.personalization_acc <= 1.0);
      CHECK(row.r_think_rate >= 0.0);
      CHECK(row.r_think_rate <= 1.0);
      CHECK(row.mean_r_personal > 0.0);  // sigma of a finite score
      CHECK(std::isfinite(row.loss));
      CHECK(std::isfinite(row.grad_norm));
    }
    CHECK(log.rows.front().step == 1);
    CHECK(log.rows.back().step == 6);
  }

  SECTION("disabling the personalization term zeroes its column") {
    auto handle = policy::PolicyHandle::make_desk(
        std::make_shared<policy::DeskPolicy>(policy::DeskPolicy::zeros(vocab, 8, 4, 1)));
    auto ablated = cfg;
    ablated.use_personal_reward = false;
    const auto log = grpo::train_loop(ds, handle, &scorer, ablated);
    for (const auto& row : log.rows) CHECK(row.mean_r_personal == 0.0);
  }

  SECTION("unlabeled data reports the accuracy as undefined") {
    corpus::Dataset plain;
    corpus::UserRecord user;
    user.user_id = "u1";
    user.profile = {{"p1", "a note about rivers", 10, {}}, {"p2", "a note about comets", 20, {}}};
    plain.users.emplace("u1", user);
    for (int j = 0; j < 2; ++j) {
      corpus::Example e;
      e.example_id = "e" + std::to_string(j);
      e.user_id = "u1";
      e.query = "write a line about rivers";
      e.reference = "a line about rivers";
      e.timestamp = 100 + j;
      e.split = corpus::Split::train;
      plain.examples.push_back(e);
    }
    plain.split_counts[corpus::Split::train] = 2;

    auto handle = policy::PolicyHandle::make_desk(std::make_shared<policy::DeskPolicy>(
        policy::DeskPolicy::zeros(policy::vocab_from_dataset(plain), 8, 4, 1)));
    auto small = cfg;
    small.steps = 2;
    const auto log = grpo::train_loop(plain, handle, &scorer, small);
    for (const auto& row : log.rows) CHECK(row.personalization_acc == -1.0);
  }
}

TEST_CASE("training loop guards its inputs") {
  const auto ds = corpus::synth_dataset(3, 2, {"azure"}, 0.0);
  const auto vocab = policy::vocab_from_dataset(ds);
  const auto make_handle = [&]() {
    return policy::PolicyHandle::make_desk(
        std::make_shared<policy::DeskPolicy>(policy::DeskPolicy::zeros(vocab, 8, 4, 1)));
  };

  grpo::TrainLoopConfig cfg;
  cfg.grpo.group_size = 2;
  cfg.grpo.max_completion = 8;
  cfg.steps = 2;
  cfg.sample_limit = 4;

  auto bad_steps = cfg;
  bad_steps.steps = 0;
  auto handle = make_handle();
  CHECK_THROWS_AS(grpo::train_loop(ds, handle, nullptr, bad_steps), ConfigError);

  auto bad_k = cfg;
  bad_k.k = 0;
  CHECK_THROWS_AS(grpo::train_loop(ds, handle, nullptr, bad_k), ConfigError);

  auto bad_limit = cfg;
  bad_limit.sample_limit = 0;
  CHECK_THROWS_AS(grpo::train_loop(ds, handle, nullptr, bad_limit), ConfigError);

  // A dataset whose train split is empty cannot be trained on.
  const auto all_test = corpus::temporal_split(ds, -100, -50);
  CHECK_THROWS_AS(grpo::train_loop(all_test, handle, nullptr, cfg), EmptyInput);
}

TEST_CASE("a failing step leaves an abort checkpoint behind") {
  const auto ds = corpus::synth_dataset(3, 2, {"azure"}, 0.0);
  const auto vocab = policy::vocab_from_dataset(ds);
  auto handle = policy::PolicyHandle::make_desk(
      std::make_shared<policy::DeskPolicy>(policy::DeskPolicy::zeros(vocab, 8, 4, 1)));

  // A scorer that emits NaN poisons the reward and trips the loop.
  prm::FeatureConfig fc;
  fc.hash_dim = 16;
  auto poisoned = prm::ScorerParams::zeros(fc, 4);
  poisoned.b2 = std::numeric_limits<double>::quiet_NaN();

  const auto dir = fs::temp_directory_path() / "prlm_grpo_abort";
  fs::remove_all(dir);
  fs::create_directories(dir);

  grpo::TrainLoopConfig cfg;
  cfg.grpo.group_size = 2;
  cfg.grpo.max_completion = 8;
  cfg.steps = 5;
  cfg.abort_checkpoint = dir / "checkpoint.abort.json";

  CHECK_THROWS_AS(grpo::train_loop(ds, handle, &poisoned, cfg), NonFiniteLoss);
  CHECK(fs::exists(dir / "checkpoint.abort.json"));
  // The checkpoint is loadable and matches the policy state at failure.
  CHECK(policy::load_desk(dir / "checkpoint.abort.json") == handle.desk->params());
}
