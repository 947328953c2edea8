// Shared helpers for the test suites: finite-difference gradient checking
// against the tape, deterministic synthetic corpora, and filesystem scratch.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "droplm/rng.hpp"
#include "droplm/tensor.hpp"

namespace testutil {

// Central-difference check of d(loss)/d(input) for every element of every
// input. build(tape) must construct a fresh graph from the current input
// values and return the scalar loss. Relative error uses max(|fd|,|an|,1) as
// the denominator so near-zero gradients are held to the same absolute bar.
template <typename Build>
double max_fd_rel_err(const std::vector<droplm::Tensor<double>>& inputs, Build&& build,
                      double h = 1e-5) {
  using droplm::Tape;
  using droplm::Tensor;
  for (const auto& t : inputs) t.drop_grad();
  {
    Tape<double> tape;
    Tensor<double> loss = build(&tape);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs)
    analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.size(), 0.0));

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& t = inputs[k];
    for (std::size_t i = 0; i < t.size(); ++i) {
      double orig = t.data()[i];
      t.data()[i] = orig + h;
      double lp = build(static_cast<Tape<double>*>(nullptr)).value();
      t.data()[i] = orig - h;
      double lm = build(static_cast<Tape<double>*>(nullptr)).value();
      t.data()[i] = orig;
      double fd = (lp - lm) / (2.0 * h);
      double an = analytic[k][i];
      double denom = std::max({std::abs(fd), std::abs(an), 1.0});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

template <typename T>
droplm::Tensor<T> randt(std::size_t r, std::size_t c, droplm::Rng& rng, double lo = -1.0,
                        double hi = 1.0) {
  droplm::Tensor<T> t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = T(rng.uniform(lo, hi));
  return t;
}

// Token stream from a sparse-successor Markov chain with a skewed stationary
// profile. Each word has `support` possible successors with 1/rank weights,
// so the process has low entropy relative to the vocabulary and an
// overparameterized model can overfit a short sample of it.
inline std::vector<std::string> markov_tokens(std::size_t n, int vocab_words, int support,
                                              std::uint64_t seed) {
  droplm::Rng rng(seed);
  std::vector<std::vector<int>> succ(vocab_words);
  std::vector<std::vector<double>> cum(vocab_words);
  for (int w = 0; w < vocab_words; ++w) {
    succ[w].resize(support);
    for (int s = 0; s < support; ++s) {
      // Quadratic skew toward low ids keeps the unigram profile long-tailed.
      double u = rng.uniform();
      succ[w][s] = int(u * u * vocab_words) % vocab_words;
    }
    double total = 0.0;
    cum[w].resize(support);
    for (int s = 0; s < support; ++s) {
      total += 1.0 / double(s + 1);
      cum[w][s] = total;
    }
    for (int s = 0; s < support; ++s) cum[w][s] /= total;
  }
  std::vector<std::string> out;
  out.reserve(n);
  int cur = 0;
  char buf[16];
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform();
    int s = int(std::lower_bound(cum[cur].begin(), cum[cur].end(), u) - cum[cur].begin());
    if (s >= support) s = support - 1;
    cur = succ[cur][s];
    std::snprintf(buf, sizeof(buf), "w%03d", cur);
    out.emplace_back(buf);
  }
  return out;
}

inline std::vector<std::string> uniform_tokens(std::size_t n, int vocab_words,
                                               std::uint64_t seed) {
  droplm::Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(n);
  char buf[16];
  for (std::size_t i = 0; i < n; ++i) {
    int w = int(rng.uniform() * vocab_words) % vocab_words;
    std::snprintf(buf, sizeof(buf), "u%03d", w);
    out.emplace_back(buf);
  }
  return out;
}

inline std::filesystem::path make_temp_dir(const std::string& tag) {
  auto base = std::filesystem::temp_directory_path() / ("droplm_" + tag + "_XXXXXX");
  std::string templ = base.string();
  if (!mkdtemp(templ.data())) throw std::runtime_error("mkdtemp failed");
  return std::filesystem::path(templ);
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream os(p);
  os << content;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline std::string join_lines(const std::vector<std::string>& tokens, std::size_t per_line = 20) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    s += tokens[i];
    s += ((i + 1) % per_line == 0) ? '\n' : ' ';
  }
  if (!s.empty() && s.back() != '\n') s += '\n';
  return s;
}

}  // namespace testutil
