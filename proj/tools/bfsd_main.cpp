// Copyright 2026 The bfsd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// bfsd: curate corpora of raw function bytes, train the byte-embedding
// model with triplet mining, embed, and evaluate similarity retrieval.
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bfsd/config.hpp"
#include "bfsd/corpus.hpp"
#include "bfsd/curation.hpp"
#include "bfsd/digest.hpp"
#include "bfsd/errors.hpp"
#include "bfsd/model.hpp"
#include "bfsd/parallel.hpp"
#include "bfsd/retrieval.hpp"
#include "bfsd/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::atomic<bool> g_interrupted{false};

void handle_sigint(int) { g_interrupted.store(true); }

// Seed salt separating the downsampling stream from the split stream.
constexpr uint64_t kDownsampleSalt = 0x6c8e944d1f3a5b71ULL;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out = "out";
  int64_t seed = -1;
  bool seed_given = false;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "config file (key=value)");
  cmd->add_option("--set", args.sets, "override a config key (key=value)");
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_option("--seed", args.seed, "seed for stochastic stages")
      ->each([&args](const std::string&) { args.seed_given = true; });
  cmd->add_option("--threads", args.threads, "worker thread cap");
}

bfsd::RunConfig merge_config(const CommonArgs& args) {
  bfsd::RunConfig cfg;
  if (!args.config_path.empty())
    cfg = bfsd::RunConfig::from_file(args.config_path);
  for (const auto& kv : args.sets) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw bfsd::ConfigError("--set expects key=value, got \"" + kv + "\"");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed_given) cfg.set("seed", std::to_string(args.seed));
  cfg.validate_keys();
  if (args.threads > 0)
    bfsd::set_max_threads(static_cast<unsigned>(args.threads));
  return cfg;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty())
    throw bfsd::ConfigError("missing required path: " + what);
  if (!fs::exists(path))
    throw bfsd::ConfigError(what + " not found: " + path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw bfsd::IoError("cannot write " + path);
  out << text;
  if (!out) throw bfsd::IoError("write failed: " + path);
}

// ---------------------------------------------------------------- curate

int cmd_curate(const CommonArgs& common, const std::string& corpus_path) {
  bfsd::RunConfig cfg = merge_config(common);
  require_file(corpus_path, "corpus file (--corpus)");
  const uint64_t seed = cfg.require_seed();
  const double ratio = cfg.get_double("curate.ratio", 0.8);
  const double threshold = cfg.get_double("curate.common_threshold", 0.5);
  const double max_frac = cfg.get_double("curate.singleton_max_frac", 0.05);
  const bfsd::LabelScheme scheme =
      bfsd::scheme_from_string(cfg.get_str("curate.scheme", "None"));

  std::string stage = "load";
  json summary;
  try {
    const bfsd::Corpus corpus = bfsd::load_corpus(corpus_path);
    summary["input_records"] = corpus.size();

    stage = "split_by_source";
    bfsd::SplitAssignment split = bfsd::split_by_source(corpus, ratio, seed);
    summary["after_split"] = {
        {"train", bfsd::side_records(corpus, split, bfsd::Side::Train).size()},
        {"test", bfsd::side_records(corpus, split, bfsd::Side::Test).size()}};

    stage = "restrict_common_functions";
    split = bfsd::restrict_common_functions(corpus, split, threshold);
    bfsd::RecordSubset train =
        bfsd::side_records(corpus, split, bfsd::Side::Train);
    bfsd::RecordSubset test =
        bfsd::side_records(corpus, split, bfsd::Side::Test);
    summary["after_restrict"] = {{"train", train.size()},
                                 {"test", test.size()}};

    stage = "dedup";
    train = bfsd::dedup(corpus, train);
    test = bfsd::dedup(corpus, test);
    summary["after_dedup"] = {{"train", train.size()}, {"test", test.size()}};

    stage = "assign_labels";
    bfsd::LabelTable train_labels =
        bfsd::assign_labels(corpus, train, bfsd::compute_label_stats(corpus, train));
    bfsd::LabelTable test_labels =
        bfsd::assign_labels(corpus, test, bfsd::compute_label_stats(corpus, test));
    summary["labels"] = {{"train", train_labels.n_labels()},
                         {"test", test_labels.n_labels()}};

    stage = "downsample_singletons";
    const size_t before = train.size();
    train = bfsd::downsample_singletons(corpus, train, train_labels, max_frac,
                                        seed ^ kDownsampleSalt);
    summary["downsample"] = {{"train_before", before},
                             {"train_after", train.size()}};

    stage = "normalize_labels";
    train_labels = bfsd::normalize_labels(train_labels, scheme);
    test_labels = bfsd::normalize_labels(test_labels, scheme);

    stage = "write";
    bfsd::SplitAssignment final_split;
    final_split.ratio = ratio;
    for (size_t pos : train)
      final_split.side[corpus.at(pos).id] = bfsd::Side::Train;
    for (size_t pos : test)
      final_split.side[corpus.at(pos).id] = bfsd::Side::Test;
    summary["final"] = {{"train", train.size()}, {"test", test.size()}};
    summary["seed"] = seed;
    summary["corpus_digest"] = bfsd::sha256_file(corpus_path).hex();
    summary["config"] = json::parse(cfg.to_json());

    fs::create_directories(common.out);
    const std::string split_path = common.out + "/split.jsonl";
    const std::string train_path = common.out + "/labels_train.jsonl";
    const std::string test_path = common.out + "/labels_test.jsonl";
    const std::string summary_path = common.out + "/curation_summary.json";
    try {
      bfsd::save_split(corpus, final_split, split_path);
      bfsd::save_labels(corpus, train, train_labels, train_path);
      bfsd::save_labels(corpus, test, test_labels, test_path);
      write_text(summary_path, summary.dump(2) + "\n");
    } catch (...) {
      for (const auto& p : {split_path, train_path, test_path, summary_path})
        fs::remove(p);
      throw;
    }
    std::cout << "curate: train=" << train.size() << " test=" << test.size()
              << " train_labels=" << train_labels.n_labels()
              << " -> " << common.out << "\n";
    return 0;
  } catch (const bfsd::ConfigError&) {
    throw;
  } catch (const bfsd::Error& e) {
    throw bfsd::Error("curate stage \"" + stage + "\": " + e.what());
  }
}

// ----------------------------------------------------------------- train

int cmd_train(const CommonArgs& common, const std::string& corpus_path,
              const std::string& split_path, const std::string& labels_path,
              bool resume) {
  bfsd::RunConfig cfg = merge_config(common);
  require_file(corpus_path, "corpus file (--corpus)");
  require_file(labels_path, "label sidecar (--labels)");
  if (!split_path.empty()) require_file(split_path, "split sidecar (--split)");

  const bfsd::ModelConfig model_cfg = cfg.model_config();
  const bfsd::TrainConfig train_cfg = cfg.train_config();

  const bfsd::Corpus corpus = bfsd::load_corpus(corpus_path);
  const bfsd::LabelTable table = bfsd::load_labels(labels_path);
  std::optional<bfsd::SplitAssignment> split;
  if (!split_path.empty()) split = bfsd::load_split(split_path);

  bfsd::RecordSubset subset;
  for (size_t pos = 0; pos < corpus.size(); ++pos) {
    const auto& id = corpus.at(pos).id;
    if (!table.label_of.count(id)) continue;
    if (split) {
      auto it = split->side.find(id);
      if (it == split->side.end() || it->second != bfsd::Side::Train) continue;
    }
    subset.push_back(pos);
  }
  const bfsd::LabeledSet set = bfsd::build_labeled_set(corpus, subset, table);

  fs::create_directories(common.out);
  const std::string ckpt_dir = common.out + "/checkpoint";
  const std::string log_path = common.out + "/train_log.jsonl";
  const std::string epoch_path = common.out + "/train_epochs.jsonl";

  std::optional<bfsd::TrainState> resume_state;
  if (resume) {
    require_file(ckpt_dir + "/train_state.json", "resume state");
    resume_state = bfsd::load_train_state(ckpt_dir);
  }

  std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
  std::ofstream epoch_log(epoch_path,
                          resume ? std::ios::app : std::ios::trunc);
  if (!log || !epoch_log)
    throw bfsd::IoError("cannot open training logs under " + common.out);

  json extra;
  extra["effective_config"] = json::parse(cfg.to_json());
  extra["corpus_digest"] = bfsd::sha256_file(corpus_path).hex();
  extra["labels_digest"] = bfsd::sha256_file(labels_path).hex();
  if (!split_path.empty())
    extra["split_digest"] = bfsd::sha256_file(split_path).hex();
  const std::string extra_str = extra.dump();

  bfsd::TrainHooks hooks;
  hooks.interrupt = &g_interrupted;
  hooks.on_step = [&log](const bfsd::TrainStepLog& s) {
    json obj;
    obj["step"] = s.step;
    obj["epoch"] = s.epoch;
    obj["loss"] = s.loss;
    obj["n_semi_hard"] = s.n_semi_hard;
    obj["n_hard"] = s.n_hard;
    obj["n_skipped"] = s.n_skipped;
    obj["wall_ms"] = s.wall_ms;
    log << obj.dump() << '\n';
    log.flush();
  };
  hooks.on_epoch = [&epoch_log](const bfsd::EpochSummary& s) {
    json obj;
    obj["epoch"] = s.epoch;
    obj["mean_loss"] = s.mean_loss;
    obj["n_semi_hard"] = s.n_semi_hard;
    obj["n_hard"] = s.n_hard;
    obj["n_skipped"] = s.n_skipped;
    epoch_log << obj.dump() << '\n';
    epoch_log.flush();
  };
  hooks.on_checkpoint = [&](const bfsd::TrainState& s) {
    bfsd::save_checkpoint(s.params, ckpt_dir, train_cfg.seed, extra_str);
    bfsd::save_train_state(s, ckpt_dir);
  };

  std::signal(SIGINT, handle_sigint);
  const bfsd::TrainState final_state =
      bfsd::train(set, model_cfg, train_cfg, hooks, std::move(resume_state));
  std::signal(SIGINT, SIG_DFL);

  bfsd::save_checkpoint(final_state.params, ckpt_dir, train_cfg.seed,
                        extra_str);
  bfsd::save_train_state(final_state, ckpt_dir);

  if (g_interrupted.load()) {
    std::cerr << "train: interrupted after " << final_state.steps_done
              << " steps; checkpoint saved to " << ckpt_dir << "\n";
    return 1;
  }
  std::cout << "train: " << final_state.epochs_done << " epochs, "
            << final_state.steps_done << " steps -> " << ckpt_dir << "\n";
  return 0;
}

// ----------------------------------------------------------------- embed

int cmd_embed(const CommonArgs& common, const std::string& corpus_path,
              const std::string& checkpoint_dir, const std::string& split_path,
              const std::string& side_name) {
  bfsd::RunConfig cfg = merge_config(common);
  require_file(corpus_path, "corpus file (--corpus)");
  require_file(checkpoint_dir + "/header.json", "checkpoint (--checkpoint)");
  if (!split_path.empty()) require_file(split_path, "split sidecar (--split)");

  const bfsd::ModelParameters params = bfsd::load_checkpoint(checkpoint_dir);
  // Explicit model keys must agree with the checkpoint lineage.
  const char* kModelKeys[] = {"model.embed_dim", "model.window",
                              "model.stride", "model.channels",
                              "model.output_dim", "model.max_len"};
  for (const char* key : kModelKeys) {
    if (!cfg.has(key)) continue;
    const bfsd::ModelConfig requested = cfg.model_config();
    if (!(requested == params.config))
      throw bfsd::ProvenanceError(
          "requested model config conflicts with checkpoint " +
          checkpoint_dir);
    break;
  }

  const bfsd::Corpus corpus = bfsd::load_corpus(corpus_path);
  bfsd::RecordSubset subset;
  if (!split_path.empty()) {
    const bfsd::SplitAssignment split = bfsd::load_split(split_path);
    subset = bfsd::side_records(corpus, split,
                                bfsd::side_from_string(side_name));
  } else {
    subset.resize(corpus.size());
    for (size_t i = 0; i < subset.size(); ++i) subset[i] = i;
  }

  const bfsd::EmbeddingSet set = bfsd::embed_corpus(
      params, corpus, subset, bfsd::checkpoint_digest(checkpoint_dir));
  const std::string dir = common.out + "/embeddings";
  bfsd::save_embeddings(set, dir);
  std::cout << "embed: " << set.size() << " vectors of dim " << set.dim
            << " -> " << dir << "\n";
  return 0;
}

// ------------------------------------------------------------------ eval

int cmd_eval(const CommonArgs& common, const std::string& embeddings_dir,
             const std::string& labels_path) {
  bfsd::RunConfig cfg = merge_config(common);
  require_file(embeddings_dir + "/header.json", "embeddings (--embeddings)");
  require_file(labels_path, "label sidecar (--labels)");

  const bfsd::EmbeddingSet set = bfsd::load_embeddings(embeddings_dir);
  const bfsd::LabelTable base = bfsd::load_labels(labels_path);
  const bfsd::IndexConfig index_cfg = cfg.index_config(set.size());

  std::vector<std::string> schemes;
  {
    std::string list = cfg.get_str("eval.schemes", "None");
    size_t start = 0;
    while (start <= list.size()) {
      const size_t comma = list.find(',', start);
      const std::string item =
          list.substr(start, comma == std::string::npos ? std::string::npos
                                                        : comma - start);
      if (!item.empty()) schemes.push_back(item);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  std::vector<int64_t> pool_sizes;
  {
    const std::string list = cfg.get_str("eval.pool_sizes", "");
    size_t start = 0;
    while (start < list.size()) {
      const size_t comma = list.find(',', start);
      const std::string item =
          list.substr(start, comma == std::string::npos ? std::string::npos
                                                        : comma - start);
      if (!item.empty()) pool_sizes.push_back(std::stoll(item));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }

  fs::create_directories(common.out);
  for (const std::string& scheme_name : schemes) {
    const bfsd::LabelScheme scheme = bfsd::scheme_from_string(scheme_name);
    const bfsd::LabelTable table = bfsd::normalize_labels(base, scheme);
    bfsd::EvalReport report = bfsd::evaluate(set, table, index_cfg);
    const std::string path =
        common.out + "/eval_" + scheme_name + ".json";
    write_text(path, report.to_json() + "\n");
    std::cout << "eval scheme=" << scheme_name
              << " n=" << report.n_queries
              << " mrr_lower=" << report.mrr_lower
              << " mrr_upper=" << report.mrr_upper;
    if (report.mrr_exact) std::cout << " mrr_exact=" << *report.mrr_exact;
    std::cout << " recall@1=" << report.recall.at(1) << " -> " << path
              << "\n";

    for (int64_t pool : pool_sizes) {
      const uint64_t seed = cfg.require_seed();
      const int64_t n_queries = cfg.get_int("eval.pool_queries", 0);
      bfsd::EvalReport pr =
          bfsd::pool_evaluate(set, table, pool, n_queries, seed);
      pr.index = index_cfg;
      const std::string ppath = common.out + "/eval_" + scheme_name +
                                "_pool" + std::to_string(pool) + ".json";
      write_text(ppath, pr.to_json() + "\n");
      std::cout << "eval scheme=" << scheme_name << " pool=" << pool
                << " mrr=" << *pr.mrr_exact << " -> " << ppath << "\n";
    }
  }
  return 0;
}

// ------------------------------------------------------------- normalize

int cmd_normalize(const CommonArgs& common, const std::string& labels_path,
                  const std::string& scheme_name) {
  merge_config(common);
  require_file(labels_path, "label sidecar (--labels)");
  const bfsd::LabelScheme scheme = bfsd::scheme_from_string(scheme_name);

  std::ifstream in(labels_path, std::ios::binary);
  if (!in) throw bfsd::IoError("cannot open " + labels_path);
  fs::create_directories(common.out);
  const std::string out_path =
      common.out + "/labels_" + scheme_name + ".jsonl";
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw bfsd::IoError("cannot write " + out_path);

  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw bfsd::ParseError("line " + std::to_string(line_no) + ": " +
                             e.what());
    }
    std::string label = obj.at("label").get<std::string>();
    switch (scheme) {
      case bfsd::LabelScheme::None: break;
      case bfsd::LabelScheme::MaskType: label = bfsd::mask_type(label); break;
      case bfsd::LabelScheme::MaskSource:
        label = bfsd::mask_source(label);
        break;
      case bfsd::LabelScheme::MaskBoth:
        label = bfsd::mask_type(bfsd::mask_source(label));
        break;
    }
    json row;
    row["id"] = obj.at("id").get<std::string>();
    row["label"] = label;
    row["scheme"] = bfsd::to_string(scheme);
    out << row.dump() << '\n';
  }
  std::cout << "normalize: scheme=" << scheme_name << " -> " << out_path
            << "\n";
  return 0;
}

// ----------------------------------------------------------------- stats

int cmd_stats(const CommonArgs& common, const std::string& corpus_path) {
  merge_config(common);
  require_file(corpus_path, "corpus file (--corpus)");
  const bfsd::Corpus corpus = bfsd::load_corpus(corpus_path);
  const bfsd::CorpusStats stats = bfsd::corpus_stats(corpus);

  json obj;
  obj["n_records"] = stats.n_records;
  obj["n_binaries"] = stats.n_binaries;
  obj["n_names"] = stats.per_name.size();
  obj["corpus_digest"] = bfsd::sha256_file(corpus_path).hex();
  json names;
  for (const auto& [name, ns] : stats.per_name) {
    names[name] = {{"instances", ns.instances},
                   {"distinct_binaries", ns.distinct_binaries},
                   {"sizes_debug", ns.sizes_debug},
                   {"sizes_release", ns.sizes_release}};
  }
  obj["per_name"] = names;

  fs::create_directories(common.out);
  const std::string path = common.out + "/stats.json";
  write_text(path, obj.dump(2) + "\n");
  std::cout << "stats: records=" << stats.n_records
            << " binaries=" << stats.n_binaries
            << " names=" << stats.per_name.size() << " -> " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"binary function similarity toolkit"};
  app.require_subcommand(1);

  CommonArgs curate_args, train_args, embed_args, eval_args, norm_args,
      stats_args;
  std::string corpus_path, split_path, labels_path, checkpoint_dir,
      embeddings_dir, side_name = "Train", scheme_name = "None";
  bool resume = false;

  CLI::App* curate = app.add_subcommand("curate", "split, dedup and label");
  add_common(curate, curate_args);
  curate->add_option("--corpus", corpus_path, "corpus JSONL");

  CLI::App* train = app.add_subcommand("train", "train the embedding model");
  add_common(train, train_args);
  train->add_option("--corpus", corpus_path, "corpus JSONL");
  train->add_option("--split", split_path, "split sidecar");
  train->add_option("--labels", labels_path, "train label sidecar");
  train->add_flag("--resume", resume, "resume from the saved checkpoint");

  CLI::App* embed = app.add_subcommand("embed", "embed a corpus");
  add_common(embed, embed_args);
  embed->add_option("--corpus", corpus_path, "corpus JSONL");
  embed->add_option("--checkpoint", checkpoint_dir, "checkpoint directory");
  embed->add_option("--split", split_path, "split sidecar (optional)");
  embed->add_option("--side", side_name, "side to embed (Train|Test)");

  CLI::App* eval = app.add_subcommand("eval", "retrieval evaluation");
  add_common(eval, eval_args);
  eval->add_option("--embeddings", embeddings_dir, "embeddings directory");
  eval->add_option("--labels", labels_path, "label sidecar");

  CLI::App* normalize =
      app.add_subcommand("normalize", "apply a label scheme to a sidecar");
  add_common(normalize, norm_args);
  normalize->add_option("--labels", labels_path, "label sidecar");
  normalize->add_option("--scheme", scheme_name,
                        "None|MaskType|MaskSource|MaskBoth");

  CLI::App* stats = app.add_subcommand("stats", "corpus summary");
  add_common(stats, stats_args);
  stats->add_option("--corpus", corpus_path, "corpus JSONL");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (curate->parsed()) return cmd_curate(curate_args, corpus_path);
    if (train->parsed())
      return cmd_train(train_args, corpus_path, split_path, labels_path,
                       resume);
    if (embed->parsed())
      return cmd_embed(embed_args, corpus_path, checkpoint_dir, split_path,
                       side_name);
    if (eval->parsed()) return cmd_eval(eval_args, embeddings_dir, labels_path);
    if (normalize->parsed())
      return cmd_normalize(norm_args, labels_path, scheme_name);
    if (stats->parsed()) return cmd_stats(stats_args, corpus_path);
  } catch (const bfsd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const bfsd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
