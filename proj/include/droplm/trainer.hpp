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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "droplm/corpus.hpp"
#include "droplm/dropout.hpp"
#include "droplm/errors.hpp"
#include "droplm/model.hpp"

namespace droplm {

struct TrainConfig {
  int epochs = 40;
  int batch_size = 64;
  int bptt_len = 30;
  double lr0 = 10.0;
  double lr_decay = 0.3;
  bool exp_decay = false;  // decay by exp(-1) instead of lr_decay
  double clip_norm = 0.3;
  DropoutSpec dropout;

  double decay_factor() const { return exp_decay ? std::exp(-1.0) : lr_decay; }

  void validate() const {
    if (epochs < 1) throw ConfigError("trainer.epochs must be positive");
    if (batch_size < 1) throw ConfigError("trainer.batch_size must be positive");
    if (bptt_len < 1) throw ConfigError("trainer.bptt must be positive");
    if (!(lr0 > 0)) throw ConfigError("trainer.lr0 must be positive");
    if (!(lr_decay > 0.0 && lr_decay < 1.0))
      throw ConfigError("trainer.lr_decay must lie in (0,1)");
    if (!(clip_norm > 0)) throw ConfigError("trainer.clip_norm must be positive");
    dropout.validate();
  }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_ppl = 0;
  double lr = 0;
  double p_d = 0;
  double seconds = 0;
};

namespace detail {

// %.17g round-trips doubles exactly, which the determinism contract and the
// resume path both lean on.
inline std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double parse_double(const std::string& s, const char* what) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw IoError(std::string("cannot parse ") + what + ": " + s);
  return v;
}

}  // namespace detail

struct TrainLog {
  std::vector<EpochLog> epochs;

  static constexpr const char* kHeader = "epoch,train_loss,val_ppl,lr,p_d,seconds";

  // seconds is the only wall-clock-dependent column; determinism comparisons
  // drop it.
  std::string csv(bool with_seconds = true) const {
    std::ostringstream out;
    out << (with_seconds ? kHeader : "epoch,train_loss,val_ppl,lr,p_d") << "\n";
    for (const auto& e : epochs) {
      out << e.epoch << ',' << detail::fmt_g17(e.train_loss) << ','
          << detail::fmt_g17(e.val_ppl) << ',' << detail::fmt_g17(e.lr) << ','
          << detail::fmt_g17(e.p_d);
      if (with_seconds) out << ',' << detail::fmt_g17(e.seconds);
      out << "\n";
    }
    return out.str();
  }

  static TrainLog from_csv(const std::string& text) {
    TrainLog log;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kHeader)
      throw IoError("train log header mismatch: " + line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(row, cell, ',')) cells.push_back(cell);
      if (cells.size() != 6) throw IoError("train log row has wrong arity: " + line);
      EpochLog e;
      e.epoch = int(detail::parse_double(cells[0], "epoch"));
      e.train_loss = detail::parse_double(cells[1], "train_loss");
      e.val_ppl = detail::parse_double(cells[2], "val_ppl");
      e.lr = detail::parse_double(cells[3], "lr");
      e.p_d = detail::parse_double(cells[4], "p_d");
      e.seconds = detail::parse_double(cells[5], "seconds");
      log.epochs.push_back(e);
    }
    return log;
  }
};

// Multiplicative decay triggered whenever the newest validation perplexity is
// worse than the one before it.
inline double anneal_lr(const TrainLog& log, double lr, double decay) {
  const auto& e = log.epochs;
  if (e.size() >= 2 && e[e.size() - 1].val_ppl > e[e.size() - 2].val_ppl) return lr * decay;
  return lr;
}

// Perplexity over every target token in the stream, hidden state carried
// across chunks. Losses accumulate in double via xent_per_token so analysis
// sees bit-identical values on the same token order.
template <typename T>
double evaluate(const ModelParams<T>& m, BatchStream& stream) {
  stream.reset();
  auto state = HiddenState<T>::zeros(m.arch, stream.batch_size(), m.h);
  double sum = 0.0;
  std::size_t n = 0;
  while (auto chunk = stream.next()) {
    std::vector<std::vector<std::int32_t>> xs(chunk->width);
    for (std::size_t t = 0; t < chunk->width; ++t) xs[t] = chunk->x_col(t);
    auto logits = forward_chunk<T>(nullptr, m, xs, state);
    for (std::size_t t = 0; t < chunk->width; ++t) {
      auto losses = xent_per_token(logits[t], chunk->y_col(t));
      for (double l : losses) sum += l;
      n += losses.size();
    }
  }
  if (n == 0) throw ConfigError("evaluation stream has no target tokens");
  return std::exp(sum / double(n));
}

template <typename T>
double evaluate(const ModelParams<T>& m, const std::vector<std::int32_t>& tokens,
                std::size_t batch_size = 10, std::size_t bptt_len = 30) {
  // Clamp so short corpora still form a stream with at least two steps.
  std::size_t max_batch = tokens.size() / 2;
  if (max_batch == 0) throw ConfigError("corpus too short to evaluate");
  BatchStream stream(tokens, std::min(batch_size, max_batch), std::max<std::size_t>(bptt_len, 1));
  return evaluate(m, stream);
}

template <typename T>
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, ModelParams<T> model, Rng rng,
          std::vector<std::int32_t> train_tokens, std::vector<std::int32_t> valid_tokens)
      : cfg_(cfg),
        model_(std::move(model)),
        best_(model_.clone()),
        rng_(rng),
        train_(std::move(train_tokens)),
        valid_(std::move(valid_tokens)),
        rates_(ConcreteRates<T>::make(cfg.dropout)),
        lr_(cfg.lr0) {
    cfg_.validate();
  }

  // Curriculum rate for this epoch; other variants hold p_d fixed.
  double epoch_rate(int epoch) const {
    if (!cfg_.dropout.is_curriculum()) return cfg_.dropout.p_d;
    return schedule_value(cfg_.dropout.schedule_kind(), epoch, std::max(1, cfg_.epochs - 1),
                          cfg_.dropout.p_max);
  }

  double logged_p_d(int epoch) const {
    const auto& d = cfg_.dropout;
    if (!d.active()) return 0.0;
    if (d.is_curriculum()) return epoch_rate(epoch);
    if (d.learned()) return rates_.mean_rate();
    return d.p_d;
  }

  // Count of masked activations per sequence at the spec's sites, used to
  // scale the concrete regularizer.
  std::size_t site_units(DropoutSite site) const {
    switch (site) {
      case DropoutSite::Input: return std::size_t(model_.e_s);
      case DropoutSite::Hidden: return 2 * std::size_t(model_.h);
      case DropoutSite::Output: return std::size_t(model_.h);
      case DropoutSite::All: return 0;  // handled per site by caller
    }
    return 0;
  }

  double train_epoch(int epoch) {
    BatchStream stream(train_, std::size_t(cfg_.batch_size), std::size_t(cfg_.bptt_len));
    auto state = HiddenState<T>::zeros(model_.arch, stream.batch_size(), model_.h);
    DropoutState<T> dst;
    dst.epoch_p = epoch_rate(epoch);
    DropoutDriver<T> drop;
    if (cfg_.dropout.active()) drop = {&cfg_.dropout, &dst, &rng_, &rates_};

    auto params = model_.parameters();
    for (const auto& l : rates_.trainables()) params.push_back(l);

    double loss_sum = 0.0;
    std::size_t chunks = 0;
    while (auto chunk = stream.next()) {
      Tape<T> tape;
      std::vector<std::vector<std::int32_t>> xs(chunk->width);
      for (std::size_t t = 0; t < chunk->width; ++t) xs[t] = chunk->x_col(t);
      auto logits = forward_chunk(&tape, model_, xs, state, drop);

      Tensor<T> total = Tensor<T>::scalar(0);
      for (std::size_t t = 0; t < chunk->width; ++t)
        total = add(&tape, total, softmax_xent(&tape, logits[t], chunk->y_col(t)).loss);
      total = scale_shift(&tape, total, 1.0 / double(chunk->width), 0.0);
      if (cfg_.dropout.learned()) {
        const auto& d = cfg_.dropout;
        if (d.masks_input())
          total = add(&tape, total, concrete_regularizer(&tape, rates_.input, d.lambda,
                                                         site_units(DropoutSite::Input)));
        if (d.masks_hidden())
          total = add(&tape, total, concrete_regularizer(&tape, rates_.hidden, d.lambda,
                                                         site_units(DropoutSite::Hidden)));
        if (d.masks_output())
          total = add(&tape, total, concrete_regularizer(&tape, rates_.output, d.lambda,
                                                         site_units(DropoutSite::Output)));
      }

      double loss = double(total.value());
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << " chunk " << chunks << " lr "
            << lr_ << " p_d " << logged_p_d(epoch);
        throw NumericalError(msg.str());
      }

      tape.backward(total);
      clip_global_norm(params, T(cfg_.clip_norm));
      post_clip_norms_.push_back(double(global_grad_norm(params)));
      sgd_step(params, T(lr_));
      for (const auto& p : params) p.drop_grad();
      state = detach_state(state);

      loss_sum += loss;
      ++chunks;
    }
    if (chunks == 0) throw ConfigError("training stream yielded no chunks");
    return loss_sum / double(chunks);
  }

  // One epoch of train + validate + log + best tracking + anneal.
  void step_epoch() {
    int epoch = next_epoch_;
    auto t0 = std::chrono::steady_clock::now();
    double train_loss = train_epoch(epoch);
    double val_ppl = evaluate(model_, valid_);
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_.epochs.push_back({epoch, train_loss, val_ppl, lr_, logged_p_d(epoch), seconds});
    if (val_ppl < best_val_) {
      best_val_ = val_ppl;
      best_ = model_.clone();
    }
    lr_ = anneal_lr(log_, lr_, cfg_.decay_factor());
    ++next_epoch_;
  }

  void run() {
    while (next_epoch_ < cfg_.epochs) step_epoch();
  }

  const TrainLog& log() const { return log_; }
  ModelParams<T>& model() { return model_; }
  const ModelParams<T>& best() const { return best_; }
  double best_val() const { return best_val_; }
  double lr() const { return lr_; }
  int next_epoch() const { return next_epoch_; }
  const ConcreteRates<T>& rates() const { return rates_; }
  const std::vector<double>& post_clip_norms() const { return post_clip_norms_; }

  // Full optimizer state as text. Together with the config this reproduces
  // the uninterrupted run bit-exactly.
  std::string resume_text() const {
    std::ostringstream out;
    out << "DLMR 1\n";
    out << "next_epoch " << next_epoch_ << "\n";
    out << "lr " << detail::fmt_hex(lr_) << "\n";
    out << "best_val " << detail::fmt_hex(best_val_) << "\n";
    out << "rng " << rng_.state_string() << "\n";
    auto dump = [&out](const char* tag, const std::vector<Tensor<T>>& ts) {
      out << tag;
      for (const auto& t : ts)
        for (std::size_t i = 0; i < t.size(); ++i)
          out << ' ' << detail::fmt_hex(double(t.data()[i]));
      out << "\n";
    };
    dump("params", model_.parameters());
    dump("best", best_.parameters());
    dump("rates", rates_.trainables());
    out << "log_rows " << log_.epochs.size() << "\n";
    for (const auto& e : log_.epochs)
      out << e.epoch << ' ' << detail::fmt_hex(e.train_loss) << ' ' << detail::fmt_hex(e.val_ppl)
          << ' ' << detail::fmt_hex(e.lr) << ' ' << detail::fmt_hex(e.p_d) << ' '
          << detail::fmt_hex(e.seconds) << "\n";
    return out.str();
  }

  void restore(const std::string& text) {
    std::istringstream in(text);
    std::string word;
    auto expect = [&](const char* tag) {
      if (!(in >> word) || word != tag) throw IoError(std::string("resume state: expected ") + tag);
    };
    expect("DLMR");
    int version = 0;
    in >> version;
    if (version != 1) throw IoError("resume state: unsupported version");
    expect("next_epoch");
    in >> next_epoch_;
    expect("lr");
    in >> word;
    lr_ = detail::parse_double(word, "lr");
    expect("best_val");
    in >> word;
    best_val_ = detail::parse_double(word, "best_val");
    expect("rng");
    std::string rng_state;
    std::getline(in, rng_state);
    rng_.restore_state(rng_state);
    auto fill = [&](const char* tag, const std::vector<Tensor<T>>& ts) {
      expect(tag);
      for (const auto& t : ts)
        for (std::size_t i = 0; i < t.size(); ++i) {
          if (!(in >> word)) throw IoError(std::string("resume state: short ") + tag);
          t.data()[i] = T(detail::parse_double(word, tag));
        }
    };
    fill("params", model_.parameters());
    fill("best", best_.parameters());
    fill("rates", rates_.trainables());
    expect("log_rows");
    std::size_t rows = 0;
    in >> rows;
    log_.epochs.clear();
    for (std::size_t r = 0; r < rows; ++r) {
      EpochLog e;
      in >> e.epoch;
      for (double* f : {&e.train_loss, &e.val_ppl, &e.lr, &e.p_d, &e.seconds}) {
        if (!(in >> word)) throw IoError("resume state: short log row");
        *f = detail::parse_double(word, "log");
      }
      log_.epochs.push_back(e);
    }
  }

 private:
  TrainConfig cfg_;
  ModelParams<T> model_;
  ModelParams<T> best_;
  Rng rng_;
  std::vector<std::int32_t> train_;
  std::vector<std::int32_t> valid_;
  ConcreteRates<T> rates_;
  double lr_;
  double best_val_ = std::numeric_limits<double>::infinity();
  int next_epoch_ = 0;
  TrainLog log_;
  std::vector<double> post_clip_norms_;
};

}  // namespace droplm
