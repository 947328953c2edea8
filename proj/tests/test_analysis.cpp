#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "droplm/analysis.hpp"
#include "testutil.hpp"

using namespace droplm;

namespace {

// Stateless bigram oracle: row x of the table is the logits row emitted
// after consuming token x.
struct LookupModel {
  Tensor<double> table;  // [V, V]
  void reset() {}
  Tensor<double> step(std::int32_t x) {
    Tensor<double> out(1, table.cols());
    for (std::size_t j = 0; j < table.cols(); ++j) out.data()[j] = table(std::size_t(x), j);
    return out;
  }
};

constexpr double kNeg = -1e9;

LookupModel ring_oracle(std::size_t v, double hot = 40.0) {
  LookupModel m;
  m.table = Tensor<double>(v, v);
  for (std::size_t i = 0; i < v; ++i)
    for (std::size_t j = 0; j < v; ++j) m.table(i, j) = (j == (i + 1) % v) ? hot : 0.0;
  return m;
}

std::vector<std::int32_t> uniform_ids(std::size_t n, std::int32_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::int32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::int32_t(rng.uniform() * vocab) % vocab;
  return out;
}

// Corpus of W ten-token windows that are deterministic except offset 5,
// which is uniform over ids {10,11,12,13}; plus the exact bigram table.
struct Offset5 {
  std::vector<std::int32_t> tokens;
  LookupModel oracle;
};

Offset5 offset5_fixture(std::size_t windows, std::uint64_t seed) {
  Offset5 f;
  Rng rng(seed);
  for (std::size_t w = 0; w < windows; ++w)
    for (int p = 0; p < 10; ++p) {
      if (p == 5)
        f.tokens.push_back(10 + std::int32_t(rng.uniform() * 4) % 4);
      else
        f.tokens.push_back(p);
    }
  const std::size_t v = 14;
  f.oracle.table = Tensor<double>(v, v);
  for (std::size_t i = 0; i < v; ++i)
    for (std::size_t j = 0; j < v; ++j) f.oracle.table(i, j) = kNeg;
  auto one = [&](std::size_t from, std::size_t to) { f.oracle.table(from, to) = 0.0; };
  one(0, 1);
  one(1, 2);
  one(2, 3);
  one(3, 4);
  for (std::size_t r = 10; r < 14; ++r) {
    f.oracle.table(4, r) = std::log(0.25);
    one(r, 6);
  }
  one(6, 7);
  one(7, 8);
  one(8, 9);
  one(9, 0);
  return f;
}

}  // namespace

TEST_CASE("memorizing oracle gives unit perplexity and zero bands") {
  auto oracle = ring_oracle(10);
  std::vector<std::int32_t> ids(40);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = std::int32_t(i % 10);
  auto s = per_step_stats(oracle, ids, 10);
  REQUIRE(s.T == 10);
  for (std::size_t t = 0; t < 10; ++t) {
    CHECK(s.mean_ppl[t] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.mad_lower[t] == 0.0);
    CHECK(s.mad_upper[t] == 0.0);
    CHECK(s.std_dev[t] == 0.0);
  }
  CHECK(s.n[0] == 3);  // position 0 is never a target in the first window
  for (std::size_t t = 1; t < 10; ++t) CHECK(s.n[t] == 4);
}

TEST_CASE("zero-decoder model gives vocabulary-size perplexity with zero spread") {
  Rng rng(3);
  auto m = ModelParams<double>::init(Arch::GRU, 21, 6, 6, rng);
  std::fill(m.decoder_w.values().begin(), m.decoder_w.values().end(), 0.0);
  std::fill(m.decoder_b.values().begin(), m.decoder_b.values().end(), 0.0);
  auto ids = uniform_ids(150, 21, 5);
  auto s = per_step_stats(m, ids, 10);
  for (std::size_t t = 0; t < 10; ++t) {
    CHECK(s.mean_ppl[t] == doctest::Approx(21.0).epsilon(1e-12));
    CHECK(s.std_dev[t] < 1e-12);
    CHECK(s.mad_lower[t] < 1e-12);
    CHECK(s.mad_upper[t] < 1e-12);
  }
}

TEST_CASE("entropy isolated at one offset shows up only there") {
  auto f = offset5_fixture(40, 7);
  auto s = per_step_stats(f.oracle, f.tokens, 10);
  CHECK(s.mean_ppl[5] == doctest::Approx(4.0).epsilon(0.0025));
  for (std::size_t t = 0; t < 10; ++t) {
    if (t == 5) continue;
    CHECK(s.mean_ppl[t] == doctest::Approx(1.0).epsilon(1e-6));
  }
  // Every window's offset-5 loss is exactly ln 4, so the bands collapse.
  CHECK(s.mad_lower[5] == 0.0);
  CHECK(s.mad_upper[5] == 0.0);
  CHECK(s.band_lower(5) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(s.band_upper(5) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(s.n[5] == 40);
}

TEST_CASE("count-weighted per-step mean matches evaluate") {
  Rng rng(11);
  auto m = ModelParams<double>::init(Arch::LSTM, 19, 6, 8, rng);
  auto ids = uniform_ids(317, 19, 13);
  for (std::size_t T : {std::size_t(10), std::size_t(7)}) {
    auto s = per_step_stats(m, ids, T);
    double wsum = 0.0;
    std::size_t total = 0;
    for (std::size_t t = 0; t < T; ++t) {
      wsum += double(s.n[t]) * std::log(s.mean_ppl[t]);
      total += s.n[t];
    }
    CHECK(total == ids.size() - 1);
    double ppl = std::exp(wsum / double(total));
    double ref = evaluate(m, ids, 1, 30);
    CHECK(ppl == doctest::Approx(ref).epsilon(1e-9));
  }
}

TEST_CASE("trailing partial window contributes to early offsets") {
  auto oracle = ring_oracle(10);
  std::vector<std::int32_t> ids(34);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = std::int32_t(i % 10);
  auto s = per_step_stats(oracle, ids, 10);
  std::vector<std::size_t> want{3, 4, 4, 4, 3, 3, 3, 3, 3, 3};
  std::size_t total = 0;
  for (std::size_t t = 0; t < 10; ++t) {
    CHECK(s.n[t] == want[t]);
    total += s.n[t];
  }
  CHECK(total == 33);
}

TEST_CASE("stats reject windows the corpus cannot fill") {
  auto oracle = ring_oracle(10);
  std::vector<std::int32_t> five{0, 1, 2, 3, 4};
  CHECK_THROWS_WITH_AS(per_step_stats(oracle, five, 10), doctest::Contains("shorter"),
                       ConfigError);
  CHECK_THROWS_AS(per_step_stats(oracle, five, 0), ConfigError);
}

TEST_CASE("csv and json round trip the exact values") {
  auto f = offset5_fixture(12, 17);
  auto s = per_step_stats(f.oracle, f.tokens, 10);

  auto text = s.csv();
  CHECK(text.substr(0, 39) == "t,mean_ppl,mad_lower,mad_upper,std,n\n0,");
  auto back = PerStepStats::from_csv(text);
  REQUIRE(back.T == s.T);
  for (std::size_t t = 0; t < s.T; ++t) {
    CHECK(back.mean_ppl[t] == s.mean_ppl[t]);
    CHECK(back.mad_lower[t] == s.mad_lower[t]);
    CHECK(back.mad_upper[t] == s.mad_upper[t]);
    CHECK(back.std_dev[t] == s.std_dev[t]);
    CHECK(back.n[t] == s.n[t]);
  }

  auto jtext = s.json();
  auto jback = PerStepStats::from_json(jtext);
  REQUIRE(jback.T == s.T);
  for (std::size_t t = 0; t < s.T; ++t) {
    CHECK(jback.mean_ppl[t] == doctest::Approx(s.mean_ppl[t]).epsilon(1e-12));
    CHECK(jback.n[t] == s.n[t]);
  }
  CHECK_THROWS_AS(PerStepStats::from_csv("nope\n"), IoError);
  CHECK_THROWS_AS(PerStepStats::from_json("{"), IoError);
  CHECK_THROWS_AS(PerStepStats::from_json("{\"T\": 2}"), IoError);
}

TEST_CASE("one-hot sampling is degenerate") {
  auto oracle = ring_oracle(9);
  // Make every row point at id 7 instead of the ring successor.
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 9; ++j) oracle.table(i, j) = (j == 7) ? 40.0 : 0.0;
  Rng rng(19);
  auto out = generate(oracle, {0}, 5, rng);
  CHECK(out == std::vector<std::int32_t>{7, 7, 7, 7, 7});
}

TEST_CASE("seed tokens steer the chain before sampling starts") {
  auto oracle = ring_oracle(10);
  Rng rng(23);
  auto out = generate(oracle, {0, 1, 2}, 3, rng);
  CHECK(out == std::vector<std::int32_t>{3, 4, 5});

  CHECK(generate(oracle, {0}, 0, rng).empty());
  CHECK_THROWS_AS(generate(oracle, {}, 3, rng), ConfigError);
}

TEST_CASE("generation is deterministic under a fixed rng seed") {
  Rng rng(29);
  auto m = ModelParams<double>::init(Arch::LSTM, 17, 6, 6, rng);
  Rng g1(31), g2(31), g3(37);
  auto a = generate(m, {1, 2}, 25, g1);
  auto b = generate(m, {1, 2}, 25, g2);
  auto c = generate(m, {1, 2}, 25, g3);
  CHECK(a == b);
  CHECK(a.size() == 25);
  CHECK(a != c);
  for (auto id : a) {
    CHECK(id >= 0);
    CHECK(id < 17);
  }
}

TEST_CASE("multinomial frequencies track the softmax") {
  LookupModel fixed;
  fixed.table = Tensor<double>(3, 3);
  const double p[3] = {0.5, 0.3, 0.2};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) fixed.table(i, j) = std::log(p[j]);
  Rng rng(41);
  auto out = generate(fixed, {0}, 30000, rng);
  double freq[3] = {0, 0, 0};
  for (auto id : out) freq[id] += 1.0 / 30000.0;
  for (int j = 0; j < 3; ++j) CHECK(std::abs(freq[j] - p[j]) < 0.01);
}
