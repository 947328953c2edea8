// Copyright 2026 The droplm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "droplm/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "droplm/analysis.hpp"
#include "droplm/config.hpp"
#include "droplm/corpus.hpp"
#include "droplm/errors.hpp"
#include "droplm/trainer.hpp"

namespace droplm {

namespace {

namespace fs = std::filesystem;

bool use_f64() {
  const char* env = std::getenv("DROPLM_PRECISION");
  if (!env || !*env) return false;
  std::string p = env;
  if (p == "f64") return true;
  if (p == "f32") return false;
  throw ConfigError("DROPLM_PRECISION must be f32 or f64, got '" + p + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<std::string> corpus_stream(const fs::path& path) {
  return flatten_with_eos(read_token_lines(path));
}

// Tokens from a corpus file, encoded with the vocabulary saved next to the
// checkpoint by `train`.
struct CkptCorpus {
  Vocabulary vocab;
  std::vector<std::int32_t> ids;
};

Vocabulary vocab_next_to(const fs::path& ckpt) {
  fs::path vpath = ckpt.parent_path() / "vocab.txt";
  if (!fs::exists(vpath))
    throw IoError("no vocab.txt next to checkpoint " + ckpt.string() +
                  " (expected " + vpath.string() + ")");
  return Vocabulary::load(vpath);
}

std::vector<std::int32_t> encode_stream(const std::vector<std::string>& tokens,
                                        const Vocabulary& vocab) {
  std::vector<std::int32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id_or_unk(t));
  return ids;
}

template <typename T>
int cmd_train_t(const RunConfig& rc) {
  if (rc.corpus_train.empty()) throw ConfigError("config key corpus.train is required");
  if (rc.corpus_valid.empty()) throw ConfigError("config key corpus.valid is required");
  auto train_tokens = corpus_stream(rc.corpus_train);
  auto valid_tokens = corpus_stream(rc.corpus_valid);
  auto vocab = Vocabulary::build(train_tokens, rc.min_count);

  std::vector<std::int32_t> train_ids = encode_stream(train_tokens, vocab);
  std::vector<std::int32_t> valid_ids = encode_stream(valid_tokens, vocab);

  fs::create_directories(rc.out_dir);
  write_text(fs::path(rc.out_dir) / "resolved.cfg", rc.resolved_text());
  vocab.save(fs::path(rc.out_dir) / "vocab.txt");

  Rng rng(rc.seed_model);
  auto model = ModelParams<T>::init(rc.arch, vocab.size(), rc.e_s, rc.h, rng);
  Trainer<T> tr(rc.trainer, std::move(model), rng, train_ids, valid_ids);
  tr.run();

  write_text(fs::path(rc.out_dir) / "log.csv", tr.log().csv());
  save_checkpoint(tr.best(), fs::path(rc.out_dir) / "best.dlm");
  save_checkpoint(tr.model(), fs::path(rc.out_dir) / "final.dlm");
  std::printf("trained %d epochs, best val ppl %.4f, outputs in %s\n", rc.trainer.epochs,
              tr.best_val(), rc.out_dir.c_str());
  return 0;
}

template <typename T>
int cmd_eval_t(const std::string& ckpt, const std::string& corpus) {
  auto m = load_checkpoint<T>(ckpt);
  auto vocab = vocab_next_to(ckpt);
  if (vocab.size() != m.vocab)
    throw ConfigError("vocab size " + std::to_string(vocab.size()) +
                      " does not match checkpoint vocab " + std::to_string(m.vocab));
  auto ids = encode_stream(corpus_stream(corpus), vocab);
  double ppl = evaluate(m, ids, 10, 30);
  std::printf("%.2f\n", ppl);
  nlohmann::json j;
  j["perplexity"] = ppl;
  j["tokens"] = ids.size();
  j["checkpoint"] = ckpt;
  std::printf("%s\n", j.dump().c_str());
  return 0;
}

template <typename T>
int cmd_analyze_t(const std::string& ckpt, const std::string& corpus, std::size_t t_len,
                  const std::string& out) {
  auto m = load_checkpoint<T>(ckpt);
  auto vocab = vocab_next_to(ckpt);
  if (vocab.size() != m.vocab)
    throw ConfigError("vocab size " + std::to_string(vocab.size()) +
                      " does not match checkpoint vocab " + std::to_string(m.vocab));
  auto ids = encode_stream(corpus_stream(corpus), vocab);
  auto stats = per_step_stats(m, ids, t_len);
  if (out.empty()) {
    std::printf("%s", stats.csv().c_str());
  } else {
    write_text(out, stats.csv());
    write_text(out + ".json", stats.json());
    std::printf("wrote %s and %s.json\n", out.c_str(), out.c_str());
  }
  return 0;
}

template <typename T>
int cmd_generate_t(const std::string& ckpt, std::size_t len, const std::string& seed_text,
                   std::uint64_t rng_seed) {
  auto m = load_checkpoint<T>(ckpt);
  auto vocab = vocab_next_to(ckpt);
  std::istringstream in(seed_text);
  std::vector<std::int32_t> seed_ids;
  std::string word;
  while (in >> word) seed_ids.push_back(vocab.id_or_unk(word));
  if (seed_ids.empty()) seed_ids.push_back(Vocabulary::sos);
  Rng rng(rng_seed);
  auto out = generate(m, seed_ids, len, rng);
  auto words = decode(out, vocab);
  for (std::size_t i = 0; i < words.size(); ++i)
    std::printf("%s%s", i ? " " : "", words[i].c_str());
  if (!words.empty()) std::printf("\n");
  return 0;
}

int cmd_schedule_preview(const std::string& kind_name, int epochs, double p_max) {
  ScheduleKind kind;
  if (kind_name == "linear") kind = ScheduleKind::Linear;
  else if (kind_name == "exp") kind = ScheduleKind::Exp;
  else if (kind_name == "sigmoid") kind = ScheduleKind::Sigmoid;
  else throw ConfigError("schedule kind must be linear, exp, or sigmoid, got '" + kind_name + "'");
  if (epochs < 1) throw ConfigError("schedule preview needs epochs >= 1");
  for (int i = 0; i <= epochs; ++i)
    std::printf("%d %s\n", i, detail::fmt_g17(schedule_value(kind, i, epochs, p_max)).c_str());
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"word-level recurrent language models with dropout variants"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "run config file")->required();

  std::string ckpt, corpus;
  auto* eval = app.add_subcommand("eval", "perplexity of a checkpoint on a corpus");
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval->add_option("--corpus", corpus, "token text file")->required();

  std::size_t t_len = 10;
  std::string out_path;
  auto* analyze = app.add_subcommand("analyze", "per-timestep perplexity stats");
  analyze->add_option("--ckpt", ckpt, "checkpoint file")->required();
  analyze->add_option("--corpus", corpus, "token text file")->required();
  analyze->add_option("--t", t_len, "window length")->capture_default_str();
  analyze->add_option("--out", out_path, "stats csv destination");

  std::size_t gen_len = 0;
  std::string seed_text;
  std::uint64_t rng_seed = 0;
  auto* gen = app.add_subcommand("generate", "sample tokens from a checkpoint");
  gen->add_option("--ckpt", ckpt, "checkpoint file")->required();
  gen->add_option("--len", gen_len, "number of tokens to sample")->required();
  gen->add_option("--seed-text", seed_text, "seed tokens (default <sos>)");
  gen->add_option("--rng", rng_seed, "sampling seed")->capture_default_str();

  std::string kind = "linear";
  int epochs = 40;
  double p_max = 0.3;
  auto* sched = app.add_subcommand("schedule-preview", "print a curriculum schedule table");
  sched->add_option("--kind", kind, "linear | exp | sigmoid")->capture_default_str();
  sched->add_option("--epochs", epochs, "final epoch index N")->capture_default_str();
  sched->add_option("--pmax", p_max, "schedule ceiling")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? 1 : 0;
  }

  try {
    bool f64 = use_f64();
    if (train->parsed()) {
      RunConfig rc = RunConfig::load(config_path);
      return f64 ? cmd_train_t<double>(rc) : cmd_train_t<float>(rc);
    }
    if (eval->parsed()) return f64 ? cmd_eval_t<double>(ckpt, corpus) : cmd_eval_t<float>(ckpt, corpus);
    if (analyze->parsed())
      return f64 ? cmd_analyze_t<double>(ckpt, corpus, t_len, out_path)
                 : cmd_analyze_t<float>(ckpt, corpus, t_len, out_path);
    if (gen->parsed())
      return f64 ? cmd_generate_t<double>(ckpt, gen_len, seed_text, rng_seed)
                 : cmd_generate_t<float>(ckpt, gen_len, seed_text, rng_seed);
    if (sched->parsed()) return cmd_schedule_preview(kind, epochs, p_max);
    return 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  }
}

}  // namespace droplm
