// prlm: experiment runner for the personalized-RAG training pipeline.
// Subcommands: ingest, build-pairs, train-prm, train-policy, evaluate.
// Exit codes: 0 success, 1 user/config error, 2 runtime failure.

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "prlm/prlm.hpp"
#include "prlm/remote.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prlm;

namespace {

corpus::Format parse_format(const std::string& s) {
  if (s == "lamp_json") return corpus::Format::lamp_json;
  if (s == "jsonl") return corpus::Format::jsonl;
  throw ConfigError("unknown dataset format: " + s);
}

retrieval::Strategy parse_strategy(const std::string& s) {
  if (s == "random") return retrieval::Strategy::random;
  if (s == "recency") return retrieval::Strategy::recency;
  if (s == "bm25") return retrieval::Strategy::bm25;
  if (s == "dense") return retrieval::Strategy::dense;
  throw ConfigError("unknown retriever: " + s);
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path.string());
  out << content;
}

// Resolved option values (defaults included) are persisted beside every
// output so a run can be reproduced from its artifacts alone.
void persist_config(const CLI::App& app, const fs::path& path) {
  write_text_file(path, app.config_to_str(true, true));
}

// ---------------------------------------------------------------------------
// Generation backends shared by build-pairs and evaluate.

struct RemoteOpts {
  std::string base_url;
  std::string model;
  double temperature = 0.0;
  int timeout_sec = 30;
  int max_retries = 3;
  int max_in_flight = 1;
};

remote::RemoteCfg to_remote_cfg(const RemoteOpts& o) {
  remote::RemoteCfg cfg;
  cfg.base_url = o.base_url;
  cfg.model_name = o.model;
  cfg.temperature = o.temperature;
  cfg.timeout_sec = o.timeout_sec;
  cfg.max_retries = o.max_retries;
  cfg.max_in_flight = o.max_in_flight;
  return cfg;
}

std::string query_topic(const std::string& query) {
  const auto toks = textproc::tokenize(query).tokens;
  return toks.empty() ? std::string("things") : toks.back();
}

// Style-aware echo generator: reads the majority style tag off the retrieved
// items and answers in that style. Stands in for a profile-conditioned LLM
// when collecting preference pairs at desk scale.
std::string oracle_generate(const corpus::Example& e, const retrieval::RetrievedContext& ctx) {
  std::map<std::string, int> votes;
  for (const auto& scored : ctx.items) {
    const auto it = scored.item.meta.find("user_style");
    if (it != scored.item.meta.end()) ++votes[it->second];
  }
  std::string style;
  int best = 0;
  for (const auto& [s, c] : votes) {
    if (c > best) {
      best = c;
      style = s;
    }
  }
  const std::string topic = query_topic(e.query);
  if (style.empty()) return "<think> no style signal </think> a take on " + topic;
  return "<think> user prefers " + style + " </think> the " + style + " take on " + topic;
}

// (example, retrieved context) -> generated text
using Generator = std::function<std::string(const corpus::Example&, const retrieval::RetrievedContext&)>;

Generator make_generator(const std::string& backend, const fs::path& checkpoint,
                         const RemoteOpts& remote_opts, const policy::PromptTemplate& tmpl,
                         int max_tokens, std::uint64_t seed) {
  if (backend == "oracle") {
    return [](const corpus::Example& e, const retrieval::RetrievedContext& ctx) {
      return oracle_generate(e, ctx);
    };
  }
  if (backend == "reference") {
    return [](const corpus::Example& e, const retrieval::RetrievedContext&) {
      return e.reference;
    };
  }
  if (backend == "desk") {
    if (checkpoint.empty()) throw ConfigError("desk backend needs --checkpoint");
    auto desk = std::make_shared<policy::DeskPolicy>(policy::load_desk(checkpoint));
    return [desk, tmpl, max_tokens, seed](const corpus::Example& e,
                                          const retrieval::RetrievedContext& ctx) {
      policy::SampleOptions opt;
      opt.max_tokens = max_tokens;
      opt.greedy = true;
      return desk->sample_one(policy::build_prompt(e.query, ctx, tmpl),
                              derive_seed(seed, "gen:" + e.example_id), opt)
          .text;
    };
  }
  if (backend == "remote") {
    auto client = std::make_shared<remote::RemoteClient>(to_remote_cfg(remote_opts));
    return [client, tmpl, max_tokens, seed](const corpus::Example& e,
                                            const retrieval::RetrievedContext& ctx) {
      return client->generate(policy::build_prompt(e.query, ctx, tmpl), 1, max_tokens, seed)[0];
    };
  }
  throw ConfigError("unknown backend: " + backend);
}

// Candidate/reference pairs for one method row, parallelized across examples
// with a bounded worker count; slot-indexed writes keep aggregation order
// independent of scheduling.
std::vector<std::pair<std::string, std::string>> generate_pairs(
    const corpus::Dataset& ds, const std::vector<const corpus::Example*>& examples,
    retrieval::Strategy strategy, int k, bool zero_shot, std::uint64_t seed,
    const Generator& gen, int jobs) {
  std::vector<std::pair<std::string, std::string>> pairs(examples.size());
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(std::max(jobs, 1)));
  std::atomic<std::size_t> next{0};
  auto work = [&](std::size_t worker) {
    try {
      for (std::size_t i = next.fetch_add(1); i < examples.size(); i = next.fetch_add(1)) {
        const corpus::Example& e = *examples[i];
        retrieval::RetrievedContext ctx{{}, k, strategy};
        if (!zero_shot) {
          ctx = retrieval::retrieve_for_example(ds, e, strategy, k,
                                                derive_seed(seed, "eval.retrieve", i));
        }
        pairs[i] = {textproc::parse_think(gen(e, ctx)).answer, e.reference};
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (jobs <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(work, static_cast<std::size_t>(t));
    for (auto& th : pool) th.join();
  }
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Subcommand options

struct IngestOpts {
  std::string input;
  std::string format = "lamp_json";
  std::string output;
  std::vector<std::int64_t> split_at;
  bool synthetic = false;
  std::uint64_t seed = 0;
  int users = 24;
  std::vector<std::string> styles = {"azure", "crimson", "emerald", "golden"};
  double noise = 0.0;
};

struct BuildPairsOpts {
  std::string dataset;
  std::string format = "jsonl";
  std::string output;
  std::string backend = "oracle";
  std::size_t limit = 5000;
  std::string retriever = "bm25";
  int k = 5;
  std::uint64_t seed = 0;
  int max_tokens = 64;
  std::string checkpoint;
  RemoteOpts remote;
};

struct TrainPrmOpts {
  std::string triplets;
  std::string output;
  std::string log;
  int epochs = 3;
  double lr = 0.5;
  int batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t hash_dim = 4096;
  std::size_t hidden = 32;
  std::size_t max_tokens = 512;
  bool zero_init = false;
};

struct TrainPolicyOpts {
  std::string dataset;
  std::string format = "jsonl";
  std::string out_dir;
  std::string backend = "desk";
  std::string prm_path;
  bool no_personal_reward = false;
  int steps = 2000;
  int group_size = 4;
  int k = 5;
  std::string retriever = "bm25";
  double alpha = 0.1;
  double beta = 0.1;
  double lr = 0.05;
  double clip_eps = 0.2;
  double kl_coef = 0.0;
  double std_floor = 1e-8;
  double temperature = 1.0;
  int max_completion = 768;
  std::string mode = "on_policy";
  std::uint64_t seed = 0;
  std::size_t sample_limit = 500;
  std::size_t embed_dim = 16;
  std::size_t window = 4;
  std::uint64_t embed_seed = 1;
  std::string checkpoint_in;
};

struct EvaluateOpts {
  std::string dataset;
  std::string format = "jsonl";
  std::string split = "test";
  std::string out_dir;
  std::string fixture;
  std::vector<std::string> generations;  // label=path
  std::string backend = "reference";
  std::string label;
  std::string checkpoint;
  std::string retriever = "bm25";
  int k = 5;
  std::string sweep_k;
  std::string retrievers;
  int max_tokens = 768;
  int jobs = 1;
  std::uint64_t seed = 0;
  RemoteOpts remote;
};

// ---------------------------------------------------------------------------
// Subcommand bodies

void run_ingest(const IngestOpts& o, const CLI::App& app) {
  corpus::Dataset ds;
  if (o.synthetic) {
    ds = corpus::synth_dataset(o.seed, o.users, o.styles, o.noise);
  } else {
    if (o.input.empty()) throw ConfigError("ingest needs --input or --synthetic");
    ds = corpus::load_dataset(o.input, parse_format(o.format));
  }
  std::vector<std::string> warnings;
  if (!o.split_at.empty()) {
    if (o.split_at.size() != 2) throw ConfigError("--split-at needs two boundaries");
    ds = corpus::temporal_split(ds, o.split_at[0], o.split_at[1], &warnings);
  }
  corpus::write_dataset(ds, o.output, corpus::Format::jsonl);
  persist_config(app, o.output + ".config.txt");
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "users " << ds.users.size() << "\n";
  for (const auto s : {corpus::Split::train, corpus::Split::dev, corpus::Split::test}) {
    const auto it = ds.split_counts.find(s);
    std::cout << corpus::split_name(s) << " "
              << (it == ds.split_counts.end() ? 0 : it->second) << "\n";
  }
}

void run_build_pairs(const BuildPairsOpts& o, const CLI::App& app) {
  const auto ds = corpus::load_dataset(o.dataset, parse_format(o.format));
  const auto strategy = parse_strategy(o.retriever);
  const policy::PromptTemplate tmpl;
  const auto gen = make_generator(o.backend, o.checkpoint, o.remote, tmpl, o.max_tokens, o.seed);

  std::size_t counter = 0;
  prm::GenFn with_profile = [&](const corpus::Example& e) {
    const auto ctx = retrieval::retrieve_for_example(ds, e, strategy, o.k,
                                                     derive_seed(o.seed, "pairs", counter++));
    return gen(e, ctx);
  };
  prm::GenFn zero_shot = [&](const corpus::Example& e) {
    return gen(e, retrieval::RetrievedContext{{}, o.k, strategy});
  };

  const auto result = prm::build_triplets(ds, with_profile, zero_shot, o.limit);
  for (const auto& f : result.failures) std::cerr << "warning: generation failed: " << f << "\n";
  if (result.triplets.empty()) {
    throw RuntimeFailure("no usable triplets: " + std::to_string(result.degenerate) +
                         " degenerate, " + std::to_string(result.failures.size()) + " failed");
  }
  prm::write_triplets(result.triplets, o.output);
  persist_config(app, o.output + ".config.txt");
  std::cout << "triplets " << result.triplets.size() << "\n"
            << "degenerate " << result.degenerate << "\n"
            << "failures " << result.failures.size() << "\n";
}

void run_train_prm(const TrainPrmOpts& o, const CLI::App& app) {
  const auto triplets = prm::load_triplets(o.triplets);
  prm::PrmTrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.lr = o.lr;
  cfg.batch_size = o.batch_size;
  cfg.seed = o.seed;
  cfg.zero_init = o.zero_init;
  cfg.hash_dim = o.hash_dim;
  cfg.hidden = o.hidden;
  cfg.max_tokens = o.max_tokens;
  const auto result = prm::train_prm(triplets, cfg);
  prm::save_scorer(result.params, o.output);
  persist_config(app, o.output + ".config.txt");
  if (!o.log.empty()) {
    std::string csv = "epoch,loss,accuracy\n";
    char buf[128];
    for (const auto& row : result.log) {
      std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f\n", row.epoch, row.loss, row.accuracy);
      csv += buf;
    }
    write_text_file(o.log, csv);
  }
  char acc[64];
  std::snprintf(acc, sizeof(acc), "%.6f", result.log.back().accuracy);
  std::cout << "final pairwise accuracy " << acc << "\n";
}

void run_train_policy(const TrainPolicyOpts& o, const CLI::App& app) {
  if (o.backend != "desk") {
    throw ConfigError("training requires the desk backend; '" + o.backend +
                      "' is generation-only");
  }
  const auto ds = corpus::load_dataset(o.dataset, parse_format(o.format));
  fs::create_directories(o.out_dir);

  auto desk = std::make_shared<policy::DeskPolicy>(
      o.checkpoint_in.empty()
          ? policy::DeskPolicy::zeros(policy::vocab_from_dataset(ds), o.embed_dim, o.window,
                                      o.embed_seed)
          : policy::DeskPolicy(policy::load_desk(o.checkpoint_in)));
  auto handle = policy::PolicyHandle::make_desk(desk);

  std::optional<prm::ScorerParams> scorer;
  if (!o.prm_path.empty()) scorer = prm::load_scorer(o.prm_path);

  grpo::TrainLoopConfig cfg;
  cfg.grpo.group_size = o.group_size;
  cfg.grpo.max_completion = o.max_completion;
  cfg.grpo.clip_eps = o.clip_eps;
  cfg.grpo.kl_coef = o.kl_coef;
  cfg.grpo.lr = o.lr;
  cfg.grpo.std_floor = o.std_floor;
  cfg.grpo.temperature = o.temperature;
  if (o.mode == "on_policy") {
    cfg.grpo.mode = grpo::Mode::on_policy_single_step;
  } else if (o.mode == "clipped") {
    cfg.grpo.mode = grpo::Mode::clipped_multi_epoch;
  } else {
    throw ConfigError("unknown mode: " + o.mode);
  }
  cfg.weights.alpha = o.alpha;
  cfg.weights.beta = o.beta;
  cfg.strategy = parse_strategy(o.retriever);
  cfg.k = o.k;
  cfg.steps = o.steps;
  cfg.seed = o.seed;
  cfg.sample_limit = o.sample_limit;
  cfg.use_personal_reward = !o.no_personal_reward;
  cfg.abort_checkpoint = fs::path(o.out_dir) / "checkpoint.abort.json";

  const auto log = grpo::train_loop(ds, handle, scorer ? &*scorer : nullptr, cfg);

  policy::save_desk(desk->params(), fs::path(o.out_dir) / "checkpoint.json");
  std::ofstream csv(fs::path(o.out_dir) / "train_log.csv", std::ios::binary);
  log.write_csv(csv);
  csv.close();
  persist_config(app, fs::path(o.out_dir) / "resolved_config.txt");

  const auto& last = log.rows.back();
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "final r_think_rate %.6f\nfinal personalization_acc %.6f\nfinal mean_reward %.6f",
                last.r_think_rate, last.personalization_acc, last.mean_reward);
  std::cout << buf << "\n";
}

std::pair<int, int> parse_sweep(const std::string& spec) {
  const auto pos = spec.find("..");
  if (pos == std::string::npos) throw ConfigError("--sweep-k expects a..b");
  int a = 0, b = 0;
  try {
    a = std::stoi(spec.substr(0, pos));
    b = std::stoi(spec.substr(pos + 2));
  } catch (const std::exception&) {
    throw ConfigError("--sweep-k expects integer bounds");
  }
  if (a < 1 || b < a) throw ConfigError("--sweep-k needs 1 <= a <= b");
  return {a, b};
}

std::vector<report::ReportRow> load_fixture_rows(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open fixture file: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw ParseError(1, e.what());
  }
  if (!doc.is_array()) throw SchemaError("fixture must be a JSON array of rows");
  std::vector<report::ReportRow> rows;
  for (const auto& r : doc) {
    rows.push_back(report::ReportRow{r.at("method").get<std::string>(),
                                     r.at("rouge1").get<double>(), r.at("rouge2").get<double>(),
                                     r.at("rougeL").get<double>(), r.at("bleu").get<double>()});
  }
  return rows;
}

std::map<std::string, std::string> load_generation_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open generations file: " + path.string());
  std::map<std::string, std::string> out;
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
    out[obj.at("example_id").get<std::string>()] = obj.at("text").get<std::string>();
  }
  return out;
}

void run_evaluate(const EvaluateOpts& o, const CLI::App& app) {
  fs::create_directories(o.out_dir);
  std::vector<report::ReportRow> rows;

  if (!o.fixture.empty()) {
    rows = load_fixture_rows(o.fixture);
  } else {
    if (o.dataset.empty()) throw ConfigError("evaluate needs --dataset or --fixture");
    const auto ds = corpus::load_dataset(o.dataset, parse_format(o.format));
    const auto split = corpus::split_from_name(o.split);
    if (!split) throw ConfigError("unknown split: " + o.split);
    const auto examples = ds.split_examples(*split);
    if (examples.empty()) throw ConfigError("split '" + o.split + "' is empty");
    const auto strategy = parse_strategy(o.retriever);

    if (!o.generations.empty()) {
      for (const auto& entry : o.generations) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos) throw ConfigError("--generations expects label=path");
        const std::string label = entry.substr(0, eq);
        const fs::path path = entry.substr(eq + 1);
        if (!fs::exists(path)) {
          std::cerr << "warning: skipping row '" << label << "': missing file " << path << "\n";
          continue;
        }
        const auto table = load_generation_file(path);
        std::vector<std::pair<std::string, std::string>> pairs;
        for (const auto* e : examples) {
          const auto it = table.find(e->example_id);
          if (it == table.end()) {
            std::cerr << "warning: no generation for " << e->example_id << " in '" << label
                      << "'\n";
            continue;
          }
          pairs.emplace_back(textproc::parse_think(it->second).answer, e->reference);
        }
        if (pairs.empty()) {
          std::cerr << "warning: skipping row '" << label << "': no usable generations\n";
          continue;
        }
        rows.push_back(report::row_from(label, metrics::corpus_report(pairs)));
      }
      if (rows.empty()) throw RuntimeFailure("no report rows could be produced");
    } else {
      const policy::PromptTemplate tmpl;
      const auto gen =
          make_generator(o.backend, o.checkpoint, o.remote, tmpl, o.max_tokens, o.seed);
      if (!o.sweep_k.empty()) {
        const auto [a, b] = parse_sweep(o.sweep_k);
        for (int k = a; k <= b; ++k) {
          const auto pairs =
              generate_pairs(ds, examples, strategy, k, false, o.seed, gen, o.jobs);
          rows.push_back(
              report::row_from("k=" + std::to_string(k), metrics::corpus_report(pairs)));
        }
      } else if (!o.retrievers.empty()) {
        if (o.retrievers != "all") throw ConfigError("--retrievers only supports 'all'");
        rows.push_back(report::row_from(
            "zero_shot", metrics::corpus_report(generate_pairs(ds, examples, strategy, o.k, true,
                                                               o.seed, gen, o.jobs))));
        for (const auto s : {retrieval::Strategy::random, retrieval::Strategy::recency,
                             retrieval::Strategy::bm25, retrieval::Strategy::dense}) {
          const auto pairs = generate_pairs(ds, examples, s, o.k, false, o.seed, gen, o.jobs);
          rows.push_back(
              report::row_from(retrieval::strategy_name(s), metrics::corpus_report(pairs)));
        }
      } else {
        const auto pairs =
            generate_pairs(ds, examples, strategy, o.k, false, o.seed, gen, o.jobs);
        rows.push_back(report::row_from(o.label.empty() ? o.backend : o.label,
                                        metrics::corpus_report(pairs)));
      }
    }
  }

  const std::string table = report::to_text_table(rows);
  write_text_file(fs::path(o.out_dir) / "report.txt", table);
  write_text_file(fs::path(o.out_dir) / "report.csv", report::to_csv(rows));
  write_text_file(fs::path(o.out_dir) / "report.json", report::to_json(rows).dump(2) + "\n");
  persist_config(app, fs::path(o.out_dir) / "resolved_config.txt");
  std::cout << table;
}

void add_remote_options(CLI::App* sub, RemoteOpts& o) {
  sub->add_option("--base-url", o.base_url, "remote endpoint, e.g. http://host:port/v1");
  sub->add_option("--model", o.model, "remote model name");
  sub->add_option("--remote-temperature", o.temperature, "remote sampling temperature");
  sub->add_option("--timeout", o.timeout_sec, "remote timeout seconds");
  sub->add_option("--retries", o.max_retries, "remote retry count");
  sub->add_option("--in-flight", o.max_in_flight, "max concurrent remote requests");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"personalized-RAG training and evaluation pipeline"};
  app.set_config("--config", "", "key=value config file; command-line flags override it");
  app.require_subcommand(1);

  IngestOpts ingest;
  auto* cmd_ingest = app.add_subcommand("ingest", "normalize or synthesize a dataset");
  cmd_ingest->add_option("--input", ingest.input, "source dataset file");
  cmd_ingest->add_option("--format", ingest.format, "input format: lamp_json|jsonl");
  cmd_ingest->add_option("--output", ingest.output, "normalized jsonl output")->required();
  cmd_ingest->add_option("--split-at", ingest.split_at,
                         "two timestamp boundaries for a temporal re-split")
      ->expected(2);
  cmd_ingest->add_flag("--synthetic", ingest.synthetic, "generate the synthetic style corpus");
  cmd_ingest->add_option("--seed", ingest.seed, "generation seed");
  cmd_ingest->add_option("--users", ingest.users, "synthetic user count");
  cmd_ingest->add_option("--styles", ingest.styles, "synthetic style vocabulary")
      ->delimiter(',');
  cmd_ingest->add_option("--noise", ingest.noise, "synthetic distractor probability");

  BuildPairsOpts pairs;
  auto* cmd_pairs = app.add_subcommand("build-pairs", "collect preference triplets");
  cmd_pairs->add_option("--dataset", pairs.dataset, "dataset file")->required();
  cmd_pairs->add_option("--format", pairs.format, "dataset format");
  cmd_pairs->add_option("--output", pairs.output, "triplet jsonl output")->required();
  cmd_pairs->add_option("--backend", pairs.backend, "generator: oracle|desk|remote");
  cmd_pairs->add_option("--limit", pairs.limit, "max triplets to collect");
  cmd_pairs->add_option("--retriever", pairs.retriever, "random|recency|bm25|dense");
  cmd_pairs->add_option("--k", pairs.k, "retrieved items per example");
  cmd_pairs->add_option("--seed", pairs.seed, "seed");
  cmd_pairs->add_option("--max-tokens", pairs.max_tokens, "generation token cap");
  cmd_pairs->add_option("--checkpoint", pairs.checkpoint, "desk policy checkpoint");
  add_remote_options(cmd_pairs, pairs.remote);

  TrainPrmOpts tprm;
  auto* cmd_tprm = app.add_subcommand("train-prm", "train the personalization scorer");
  cmd_tprm->add_option("--triplets", tprm.triplets, "triplet jsonl")->required();
  cmd_tprm->add_option("--output", tprm.output, "model output path")->required();
  cmd_tprm->add_option("--log", tprm.log, "epoch log csv path");
  cmd_tprm->add_option("--epochs", tprm.epochs, "training epochs");
  cmd_tprm->add_option("--lr", tprm.lr, "learning rate");
  cmd_tprm->add_option("--batch-size", tprm.batch_size, "minibatch size");
  cmd_tprm->add_option("--seed", tprm.seed, "seed");
  cmd_tprm->add_option("--hash-dim", tprm.hash_dim, "hashed feature block width");
  cmd_tprm->add_option("--hidden", tprm.hidden, "hidden layer width");
  cmd_tprm->add_option("--max-tokens", tprm.max_tokens, "pair token budget");
  cmd_tprm->add_flag("--zero-init", tprm.zero_init, "start from all-zero parameters");

  TrainPolicyOpts tpol;
  auto* cmd_tpol = app.add_subcommand("train-policy", "optimize the policy with grouped rollouts");
  cmd_tpol->add_option("--dataset", tpol.dataset, "dataset file")->required();
  cmd_tpol->add_option("--format", tpol.format, "dataset format");
  cmd_tpol->add_option("--out-dir", tpol.out_dir, "output directory")->required();
  cmd_tpol->add_option("--backend", tpol.backend, "policy backend (desk only for training)");
  cmd_tpol->add_option("--prm", tpol.prm_path, "personalization scorer model");
  cmd_tpol->add_flag("--no-personal-reward", tpol.no_personal_reward,
                     "ablation: drop the personalization reward term");
  cmd_tpol->add_option("--steps", tpol.steps, "training steps");
  cmd_tpol->add_option("--group-size", tpol.group_size, "samples per input");
  cmd_tpol->add_option("--k", tpol.k, "retrieved items per example");
  cmd_tpol->add_option("--retriever", tpol.retriever, "random|recency|bm25|dense");
  cmd_tpol->add_option("--alpha", tpol.alpha, "structure reward weight");
  cmd_tpol->add_option("--beta", tpol.beta, "personalization reward weight");
  cmd_tpol->add_option("--lr", tpol.lr, "learning rate");
  cmd_tpol->add_option("--clip-eps", tpol.clip_eps, "ratio clip width");
  cmd_tpol->add_option("--kl-coef", tpol.kl_coef, "reference KL weight");
  cmd_tpol->add_option("--std-floor", tpol.std_floor, "advantage std floor");
  cmd_tpol->add_option("--temperature", tpol.temperature, "sampling temperature");
  cmd_tpol->add_option("--max-completion", tpol.max_completion, "completion token cap");
  cmd_tpol->add_option("--mode", tpol.mode, "on_policy|clipped");
  cmd_tpol->add_option("--seed", tpol.seed, "seed");
  cmd_tpol->add_option("--sample-limit", tpol.sample_limit, "train subset size");
  cmd_tpol->add_option("--embed-dim", tpol.embed_dim, "desk embedding width");
  cmd_tpol->add_option("--window", tpol.window, "desk trailing-token window");
  cmd_tpol->add_option("--embed-seed", tpol.embed_seed, "frozen embedding seed");
  cmd_tpol->add_option("--checkpoint-in", tpol.checkpoint_in, "resume from checkpoint");

  EvaluateOpts ev;
  auto* cmd_eval = app.add_subcommand("evaluate", "score generations and emit report tables");
  cmd_eval->add_option("--dataset", ev.dataset, "dataset file");
  cmd_eval->add_option("--format", ev.format, "dataset format");
  cmd_eval->add_option("--split", ev.split, "dataset split to evaluate");
  cmd_eval->add_option("--out-dir", ev.out_dir, "output directory")->required();
  cmd_eval->add_option("--fixture", ev.fixture, "render a JSON fixture of rows instead");
  cmd_eval->add_option("--generations", ev.generations,
                       "label=path jsonl files of prewritten generations");
  cmd_eval->add_option("--backend", ev.backend, "reference|oracle|desk|remote");
  cmd_eval->add_option("--label", ev.label, "row label for single-row mode");
  cmd_eval->add_option("--checkpoint", ev.checkpoint, "desk policy checkpoint");
  cmd_eval->add_option("--retriever", ev.retriever, "random|recency|bm25|dense");
  cmd_eval->add_option("--k", ev.k, "retrieved items per example");
  cmd_eval->add_option("--sweep-k", ev.sweep_k, "profile-count sweep, e.g. 1..10");
  cmd_eval->add_option("--retrievers", ev.retrievers, "'all' emits the retriever grid");
  cmd_eval->add_option("--max-tokens", ev.max_tokens, "generation token cap");
  cmd_eval->add_option("--jobs", ev.jobs, "worker threads across examples");
  cmd_eval->add_option("--seed", ev.seed, "seed");
  add_remote_options(cmd_eval, ev.remote);

  cmd_ingest->callback([&]() { run_ingest(ingest, app); });
  cmd_pairs->callback([&]() { run_build_pairs(pairs, app); });
  cmd_tprm->callback([&]() { run_train_prm(tprm, app); });
  cmd_tpol->callback([&]() { run_train_policy(tpol, app); });
  cmd_eval->callback([&]() { run_evaluate(ev, app); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const RuntimeFailure& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
