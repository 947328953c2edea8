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

#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "droplm/errors.hpp"
#include "droplm/model.hpp"
#include "droplm/trainer.hpp"

namespace droplm {

// Single-token stepper over the language model, batch 1, state carried until
// reset(). Losses computed from its logits are bit-identical to evaluate()
// on the same token order because both go through xent_per_token.
template <typename T>
struct NlmStepModel {
  const ModelParams<T>* m;
  HiddenState<T> state;

  explicit NlmStepModel(const ModelParams<T>& model)
      : m(&model), state(HiddenState<T>::zeros(model.arch, 1, model.h)) {}

  void reset() { state = HiddenState<T>::zeros(m->arch, 1, m->h); }

  // Consumes x and returns the [1, V] logits for the next token.
  Tensor<T> step(std::int32_t x) {
    return forward_chunk<T>(nullptr, *m, {{x}}, state)[0];
  }
};

// Per-offset loss statistics over consecutive windows of length T. The MADs
// and std are on the loss (log) scale; band_lower/band_upper map them onto
// the perplexity scale for display.
struct PerStepStats {
  std::size_t T = 10;
  std::vector<double> mean_ppl;
  std::vector<double> mad_lower;
  std::vector<double> mad_upper;
  std::vector<double> std_dev;
  std::vector<std::size_t> n;

  double band_lower(std::size_t t) const { return mean_ppl[t] * std::exp(-mad_lower[t]); }
  double band_upper(std::size_t t) const { return mean_ppl[t] * std::exp(mad_upper[t]); }

  static constexpr const char* kHeader = "t,mean_ppl,mad_lower,mad_upper,std,n";

  std::string csv() const {
    std::ostringstream out;
    out << kHeader << "\n";
    for (std::size_t t = 0; t < T; ++t)
      out << t << ',' << detail::fmt_g17(mean_ppl[t]) << ',' << detail::fmt_g17(mad_lower[t])
          << ',' << detail::fmt_g17(mad_upper[t]) << ',' << detail::fmt_g17(std_dev[t]) << ','
          << n[t] << "\n";
    return out.str();
  }

  static PerStepStats from_csv(const std::string& text) {
    PerStepStats s;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kHeader)
      throw IoError("per-step stats header mismatch: " + line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(row, cell, ',')) cells.push_back(cell);
      if (cells.size() != 6) throw IoError("per-step stats row has wrong arity: " + line);
      s.mean_ppl.push_back(detail::parse_double(cells[1], "mean_ppl"));
      s.mad_lower.push_back(detail::parse_double(cells[2], "mad_lower"));
      s.mad_upper.push_back(detail::parse_double(cells[3], "mad_upper"));
      s.std_dev.push_back(detail::parse_double(cells[4], "std"));
      s.n.push_back(std::size_t(detail::parse_double(cells[5], "n")));
    }
    s.T = s.mean_ppl.size();
    return s;
  }

  std::string json() const {
    nlohmann::json j;
    j["T"] = T;
    j["t"] = nlohmann::json::array();
    for (std::size_t t = 0; t < T; ++t) j["t"].push_back(t);
    j["mean_ppl"] = mean_ppl;
    j["mad_lower"] = mad_lower;
    j["mad_upper"] = mad_upper;
    j["std"] = std_dev;
    j["n"] = n;
    return j.dump(2);
  }

  static PerStepStats from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw IoError("per-step stats: invalid json");
    PerStepStats s;
    try {
      s.T = j.at("T").get<std::size_t>();
      s.mean_ppl = j.at("mean_ppl").get<std::vector<double>>();
      s.mad_lower = j.at("mad_lower").get<std::vector<double>>();
      s.mad_upper = j.at("mad_upper").get<std::vector<double>>();
      s.std_dev = j.at("std").get<std::vector<double>>();
      s.n = j.at("n").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("per-step stats: ") + e.what());
    }
    return s;
  }
};

// Walks the whole token stream once (batch 1), bucketing each target's loss
// by its position modulo T. A trailing partial window still contributes, so
// the count-weighted mean over buckets equals the evaluate() mean exactly.
template <typename Model>
  requires requires(Model& sm, std::int32_t x) {
    sm.reset();
    sm.step(x);
  }
PerStepStats per_step_stats(Model& sm, const std::vector<std::int32_t>& tokens, std::size_t T) {
  if (T < 1) throw ConfigError("analysis window length must be positive");
  if (tokens.size() < T + 1)
    throw ConfigError("corpus has " + std::to_string(tokens.size()) +
                      " tokens, shorter than one window of length " + std::to_string(T));
  std::vector<std::vector<double>> buckets(T);
  sm.reset();
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    auto logits = sm.step(tokens[i]);
    double loss = xent_per_token(logits, {tokens[i + 1]})[0];
    buckets[(i + 1) % T].push_back(loss);
  }

  PerStepStats s;
  s.T = T;
  for (std::size_t t = 0; t < T; ++t) {
    const auto& b = buckets[t];
    if (b.empty())
      throw ConfigError("no targets at window offset " + std::to_string(t));
    bool constant = true;
    for (double l : b) constant = constant && (l == b[0]);
    double mean = 0.0;
    for (double l : b) mean += l;
    mean /= double(b.size());
    // A constant bucket must report exactly zero spread; summation rounding
    // would otherwise leave the mean a few ulp off the common value.
    if (constant) mean = b[0];
    double lo = 0.0, hi = 0.0, var = 0.0;
    std::size_t nlo = 0, nhi = 0;
    for (double l : b) {
      double d = l - mean;
      var += d * d;
      if (l < mean) {
        lo += mean - l;
        ++nlo;
      } else if (l > mean) {
        hi += l - mean;
        ++nhi;
      }
    }
    s.mean_ppl.push_back(std::exp(mean));
    s.mad_lower.push_back(nlo ? lo / double(nlo) : 0.0);
    s.mad_upper.push_back(nhi ? hi / double(nhi) : 0.0);
    s.std_dev.push_back(std::sqrt(var / double(b.size())));
    s.n.push_back(b.size());
  }
  return s;
}

template <typename T>
PerStepStats per_step_stats(const ModelParams<T>& m, const std::vector<std::int32_t>& tokens,
                            std::size_t T_len) {
  NlmStepModel<T> sm(m);
  return per_step_stats(sm, tokens, T_len);
}

// Free-running sampling: feed the seed, then repeatedly draw the next id
// from the softmax (in double) and feed it back.
template <typename Model>
  requires requires(Model& sm, std::int32_t x) {
    sm.reset();
    sm.step(x);
  }
std::vector<std::int32_t> generate(Model& sm, const std::vector<std::int32_t>& seed_ids,
                                   std::size_t length, Rng& rng) {
  if (seed_ids.empty()) throw ConfigError("generate requires a nonempty seed");
  sm.reset();
  auto logits = sm.step(seed_ids[0]);
  for (std::size_t i = 1; i < seed_ids.size(); ++i) logits = sm.step(seed_ids[i]);
  std::vector<std::int32_t> out;
  out.reserve(length);
  for (std::size_t k = 0; k < length; ++k) {
    auto lsm = log_softmax_row(logits, 0);
    double u = rng.uniform(), cum = 0.0;
    std::int32_t pick = std::int32_t(lsm.size()) - 1;
    for (std::size_t j = 0; j < lsm.size(); ++j) {
      cum += std::exp(lsm[j]);
      if (u < cum) {
        pick = std::int32_t(j);
        break;
      }
    }
    out.push_back(pick);
    logits = sm.step(pick);
  }
  return out;
}

template <typename T>
std::vector<std::int32_t> generate(const ModelParams<T>& m,
                                   const std::vector<std::int32_t>& seed_ids, std::size_t length,
                                   Rng& rng) {
  NlmStepModel<T> sm(m);
  return generate(sm, seed_ids, length, rng);
}

}  // namespace droplm
