#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "droplm/config.hpp"
#include "droplm/corpus.hpp"
#include "droplm/model.hpp"
#include "droplm/trainer.hpp"
#include "testutil.hpp"

using namespace droplm;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code;
  std::string out;
};

// Runs the installed binary through the shell, merging stderr into stdout.
CmdResult cli(const std::string& args, const std::string& env = "") {
  std::string cmd = env + std::string(DROPLM_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  int st = pclose(p);
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, out};
}

std::vector<double> parse_schedule(const std::string& out) {
  std::istringstream in(out);
  std::vector<double> vals;
  int i;
  double v;
  while (in >> i >> v) vals.push_back(v);
  return vals;
}

// Ten-word cyclic corpus the models can memorize.
std::string cycle_corpus(int lines) {
  std::string text;
  for (int i = 0; i < lines; ++i) text += "alpha bravo charlie delta echo fox golf hotel india juliet\n";
  return text;
}

std::string base_config(const fs::path& dir, const std::string& extra) {
  std::string cfg;
  cfg += "corpus.train = " + (dir / "train.txt").string() + "\n";
  cfg += "corpus.valid = " + (dir / "valid.txt").string() + "\n";
  cfg += "out_dir = " + (dir / "run").string() + "\n";
  cfg += "arch = lstm\n";
  cfg += "dims.embedding = 12\n";
  cfg += "dims.hidden = 12\n";
  cfg += "trainer.epochs = 2\n";
  cfg += "trainer.batch_size = 4\n";
  cfg += "trainer.bptt = 6\n";
  cfg += extra;
  return cfg;
}

}  // namespace

TEST_CASE("schedule preview prints the inclusive table") {
  auto r = cli("schedule-preview --kind linear --epochs 4 --pmax 0.3");
  CHECK(r.code == 0);
  auto vals = parse_schedule(r.out);
  REQUIRE(vals.size() == 5);
  const double want[5] = {0.0, 0.075, 0.15, 0.225, 0.3};
  for (int i = 0; i < 5; ++i) CHECK(vals[i] == doctest::Approx(want[i]).epsilon(1e-12));
  CHECK(vals[0] == 0.0);
  CHECK(vals[4] == 0.3);

  auto e = cli("schedule-preview --kind exp --epochs 40 --pmax 0.3");
  auto evals = parse_schedule(e.out);
  REQUIRE(evals.size() == 41);
  CHECK(evals[20] == doctest::Approx(0.3 * (std::sqrt(2.0) - 1.0)).epsilon(1e-12));
  CHECK(evals[20] == doctest::Approx(0.12426).epsilon(1e-4));

  auto s = cli("schedule-preview --kind sigmoid --epochs 10 --pmax 0.25");
  auto svals = parse_schedule(s.out);
  CHECK(svals[0] == 0.0);
  CHECK(svals[10] == 0.25);

  CHECK(cli("schedule-preview --kind cubic --epochs 4 --pmax 0.3").code == 1);
}

TEST_CASE("train writes the run directory and is rerunnable") {
  auto dir = testutil::make_temp_dir("cli_train");
  testutil::write_file(dir / "train.txt", cycle_corpus(8));
  testutil::write_file(dir / "valid.txt", cycle_corpus(2));
  testutil::write_file(dir / "run.cfg", base_config(dir, ""));

  auto r = cli("train --config " + (dir / "run.cfg").string());
  CHECK(r.code == 0);
  for (const char* f : {"resolved.cfg", "vocab.txt", "log.csv", "best.dlm", "final.dlm"})
    CHECK(fs::exists(dir / "run" / f));

  // The resolved config reloads to an identical resolution.
  auto rc = RunConfig::load(dir / "run" / "resolved.cfg");
  CHECK(rc.resolved_text() == testutil::read_file(dir / "run" / "resolved.cfg"));
  CHECK(rc.trainer.epochs == 2);

  auto log1 = TrainLog::from_csv(testutil::read_file(dir / "run" / "log.csv"));
  REQUIRE(log1.epochs.size() == 2);

  // Re-run into a second directory: same log modulo seconds, same weights.
  testutil::write_file(dir / "run2.cfg",
                       base_config(dir, "") + "out_dir = " + (dir / "run2").string() + "\n");
  CHECK(cli("train --config " + (dir / "run2.cfg").string()).code == 0);
  auto log2 = TrainLog::from_csv(testutil::read_file(dir / "run2" / "log.csv"));
  CHECK(log1.csv(false) == log2.csv(false));
  CHECK(testutil::read_file(dir / "run" / "final.dlm") ==
        testutil::read_file(dir / "run2" / "final.dlm"));
  fs::remove_all(dir);
}

TEST_CASE("invalid configs exit 1 and name the key") {
  auto dir = testutil::make_temp_dir("cli_badcfg");
  testutil::write_file(dir / "train.txt", cycle_corpus(4));
  testutil::write_file(dir / "valid.txt", cycle_corpus(2));

  testutil::write_file(dir / "bad_pd.cfg",
                       base_config(dir, "dropout.variant = standard\ndropout.p_d = 1.5\n"));
  auto r = cli("train --config " + (dir / "bad_pd.cfg").string());
  CHECK(r.code == 1);
  CHECK(r.out.find("p_d") != std::string::npos);

  testutil::write_file(dir / "unknown.cfg", base_config(dir, "dropout.rate = 0.5\n"));
  auto u = cli("train --config " + (dir / "unknown.cfg").string());
  CHECK(u.code == 1);
  CHECK(u.out.find("dropout.rate") != std::string::npos);

  CHECK(cli("train --config " + (dir / "missing.cfg").string()).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("json configs are accepted interchangeably") {
  auto dir = testutil::make_temp_dir("cli_json");
  testutil::write_file(dir / "train.txt", cycle_corpus(6));
  testutil::write_file(dir / "valid.txt", cycle_corpus(2));
  nlohmann::json j;
  j["corpus"]["train"] = (dir / "train.txt").string();
  j["corpus"]["valid"] = (dir / "valid.txt").string();
  j["out_dir"] = (dir / "runj").string();
  j["arch"] = "gru";
  j["dims"]["embedding"] = 10;
  j["dims"]["hidden"] = 10;
  j["trainer"]["epochs"] = 1;
  j["trainer"]["batch_size"] = 4;
  j["trainer"]["bptt"] = 5;
  j["dropout"]["variant"] = "variational";
  j["dropout"]["p_d"] = 0.1;
  testutil::write_file(dir / "run.json", j.dump(2));
  auto r = cli("train --config " + (dir / "run.json").string());
  CHECK(r.code == 0);
  auto rc = RunConfig::load(dir / "runj" / "resolved.cfg");
  CHECK(rc.arch == Arch::GRU);
  CHECK(rc.trainer.dropout.variant == DropoutVariant::Variational);
  CHECK(rc.trainer.dropout.p_d == 0.1);
  fs::remove_all(dir);
}

TEST_CASE("eval prints the perplexity twice over and is stable") {
  auto dir = testutil::make_temp_dir("cli_eval");
  // Vocabulary of exactly 100: 97 corpus words + 3 specials, zero decoder.
  std::vector<std::string> words;
  for (int i = 0; i < 97; ++i) words.push_back("w" + std::to_string(i));
  std::string corpus;
  for (int rep = 0; rep < 3; ++rep) {
    for (const auto& w : words) corpus += w + " ";
    corpus += "\n";
  }
  testutil::write_file(dir / "corpus.txt", corpus);
  auto vocab = Vocabulary::build(flatten_with_eos(read_token_lines(dir / "corpus.txt")));
  REQUIRE(vocab.size() == 100);
  vocab.save(dir / "vocab.txt");
  Rng rng(3);
  auto m = ModelParams<float>::init(Arch::LSTM, 100, 8, 8, rng);
  std::fill(m.decoder_w.values().begin(), m.decoder_w.values().end(), 0.0f);
  std::fill(m.decoder_b.values().begin(), m.decoder_b.values().end(), 0.0f);
  save_checkpoint(m, dir / "zero.dlm");

  auto r = cli("eval --ckpt " + (dir / "zero.dlm").string() + " --corpus " +
               (dir / "corpus.txt").string());
  CHECK(r.code == 0);
  CHECK(r.out.substr(0, 7) == "100.00\n");
  auto nl = r.out.find('\n');
  auto j = nlohmann::json::parse(r.out.substr(nl + 1));
  CHECK(j.at("perplexity").get<double>() == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(j.at("tokens").get<std::size_t>() == 294);

  auto again = cli("eval --ckpt " + (dir / "zero.dlm").string() + " --corpus " +
                   (dir / "corpus.txt").string());
  CHECK(again.out == r.out);

  CHECK(cli("eval --ckpt " + (dir / "nope.dlm").string() + " --corpus " +
            (dir / "corpus.txt").string())
            .code == 2);

  // f64 dispatch reaches the same number at this scale.
  auto wide = cli("eval --ckpt " + (dir / "zero.dlm").string() + " --corpus " +
                      (dir / "corpus.txt").string(),
                  "DROPLM_PRECISION=f64 ");
  CHECK(wide.code == 0);
  CHECK(wide.out.substr(0, 7) == "100.00\n");
  CHECK(cli("eval --ckpt " + (dir / "zero.dlm").string() + " --corpus " +
                (dir / "corpus.txt").string(),
            "DROPLM_PRECISION=f16 ")
            .code == 1);
  fs::remove_all(dir);
}

TEST_CASE("analyze emits the pinned header and respects the window bound") {
  auto dir = testutil::make_temp_dir("cli_analyze");
  testutil::write_file(dir / "train.txt", cycle_corpus(10));
  testutil::write_file(dir / "valid.txt", cycle_corpus(3));
  std::string extra;
  extra += "trainer.epochs = 400\n";
  extra += "trainer.batch_size = 1\n";
  extra += "trainer.bptt = 11\n";
  extra += "trainer.lr0 = 2\n";
  extra += "trainer.lr_decay = 0.99\n";
  extra += "trainer.clip_norm = 5\n";
  testutil::write_file(dir / "run.cfg", base_config(dir, extra));
  REQUIRE(cli("train --config " + (dir / "run.cfg").string()).code == 0);

  auto run = dir / "run";
  auto r = cli("analyze --ckpt " + (run / "final.dlm").string() + " --corpus " +
               (dir / "valid.txt").string() + " --out " + (dir / "stats.csv").string());
  CHECK(r.code == 0);
  auto text = testutil::read_file(dir / "stats.csv");
  CHECK(text.substr(0, 37) == "t,mean_ppl,mad_lower,mad_upper,std,n\n");
  CHECK(fs::exists(dir / "stats.csv.json"));

  // The memorizing model is near perplexity 1 at every offset.
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    std::getline(cells, cell, ',');
    CHECK(std::stod(cell) < 1.3);
    ++rows;
  }
  CHECK(rows == 10);

  // Default window is 10; an impossible window is a config error.
  auto big = cli("analyze --ckpt " + (run / "final.dlm").string() + " --corpus " +
                 (dir / "valid.txt").string() + " --t 100000");
  CHECK(big.code == 1);
  fs::remove_all(dir);
}

TEST_CASE("generate samples the requested count deterministically") {
  auto dir = testutil::make_temp_dir("cli_gen");
  std::string corpus;
  for (int i = 0; i < 12; ++i) corpus += "tok" + std::to_string(i) + " ";
  corpus += "\n";
  testutil::write_file(dir / "corpus.txt", corpus);
  auto vocab = Vocabulary::build(flatten_with_eos(read_token_lines(dir / "corpus.txt")));
  vocab.save(dir / "vocab.txt");
  Rng rng(5);
  auto m = ModelParams<float>::init(Arch::GRU, vocab.size(), 6, 6, rng);
  // Constant one-hot softmax at id 7 regardless of context.
  for (auto& v : m.decoder_w.values()) v = 0.0f;
  for (auto& v : m.decoder_b.values()) v = 0.0f;
  m.decoder_b.data()[7] = 40.0f;
  save_checkpoint(m, dir / "onehot.dlm");

  auto r = cli("generate --ckpt " + (dir / "onehot.dlm").string() + " --len 5 --rng 3");
  CHECK(r.code == 0);
  std::string want = vocab.token(7);
  std::istringstream in(r.out);
  std::string w;
  int count = 0;
  while (in >> w) {
    CHECK(w == want);
    ++count;
  }
  CHECK(count == 5);

  auto again = cli("generate --ckpt " + (dir / "onehot.dlm").string() + " --len 5 --rng 3");
  CHECK(again.out == r.out);

  auto empty = cli("generate --ckpt " + (dir / "onehot.dlm").string() + " --len 0 --rng 3");
  CHECK(empty.code == 0);
  CHECK(empty.out.empty());

  auto seeded = cli("generate --ckpt " + (dir / "onehot.dlm").string() +
                    " --len 2 --seed-text \"tok3 tok4\" --rng 9");
  CHECK(seeded.code == 0);
  fs::remove_all(dir);
}
