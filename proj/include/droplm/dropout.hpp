/*
 * Copyright 2026 The droplm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "droplm/errors.hpp"
#include "droplm/rng.hpp"
#include "droplm/tensor.hpp"

namespace droplm {

enum class DropoutVariant {
  None,
  Standard,
  Gaussian,
  Variational,
  Concrete,
  CurriculumLinear,
  CurriculumExp,
  CurriculumSigmoid,
};

enum class DropoutSite { Input, Hidden, Output, All };

enum class ScheduleKind { Linear, Exp, Sigmoid };

struct DropoutSpec {
  DropoutVariant variant = DropoutVariant::None;
  DropoutSite site = DropoutSite::All;
  double p_d = 0.2;      // fixed drop rate (standard/gaussian/variational)
  double p_max = 0.3;    // curriculum ceiling
  double tau = 0.1;      // concrete temperature
  double eps = 1e-6;     // concrete clamp
  double lambda = 0.1;   // concrete regularizer weight
  double init_p = 0.95;  // concrete initial drop rate

  bool active() const { return variant != DropoutVariant::None; }

  bool is_curriculum() const {
    return variant == DropoutVariant::CurriculumLinear ||
           variant == DropoutVariant::CurriculumExp ||
           variant == DropoutVariant::CurriculumSigmoid;
  }

  bool learned() const { return variant == DropoutVariant::Concrete; }

  // Standard and Gaussian resample every timestep; everything else holds its
  // masks fixed across the timesteps of a chunk.
  bool time_fixed() const {
    return variant != DropoutVariant::Standard && variant != DropoutVariant::Gaussian;
  }

  ScheduleKind schedule_kind() const {
    switch (variant) {
      case DropoutVariant::CurriculumLinear: return ScheduleKind::Linear;
      case DropoutVariant::CurriculumExp: return ScheduleKind::Exp;
      case DropoutVariant::CurriculumSigmoid: return ScheduleKind::Sigmoid;
      default: throw ConfigError("dropout.variant is not a curriculum variant");
    }
  }

  bool masks_input() const {
    return active() && (site == DropoutSite::Input || site == DropoutSite::All);
  }
  bool masks_hidden() const {
    return active() && (site == DropoutSite::Hidden || site == DropoutSite::All);
  }
  bool masks_output() const {
    return active() && (site == DropoutSite::Output || site == DropoutSite::All);
  }

  void validate() const {
    if (!(p_d >= 0.0 && p_d < 1.0)) throw ConfigError("dropout.p_d must be in [0,1)");
    if (!(p_max >= 0.0 && p_max < 1.0)) throw ConfigError("dropout.p_max must be in [0,1)");
    if (!(tau > 0.0)) throw ConfigError("dropout.tau must be > 0");
    if (!(eps > 0.0 && eps < 0.5)) throw ConfigError("dropout.eps must be in (0,0.5)");
    if (!(lambda >= 0.0)) throw ConfigError("dropout.lambda must be >= 0");
    if (!(init_p > 0.0 && init_p < 1.0)) throw ConfigError("dropout.init_p must be in (0,1)");
  }
};

// p(i) over i in [0,n], exact 0 at i=0 and exact p_max at i=n. i outside the
// range clamps. The sigmoid ramp uses steepness 10 normalized so its
// endpoints land exactly on 0 and p_max.
inline double schedule_value(ScheduleKind kind, int i, int n, double p_max) {
  if (n < 1) throw ConfigError("schedule length must be >= 1");
  double x = double(i) / double(n);
  if (x < 0.0) x = 0.0;
  if (x > 1.0) x = 1.0;
  switch (kind) {
    case ScheduleKind::Linear: return p_max * x;
    case ScheduleKind::Exp: return p_max * (std::exp2(x) - 1.0);
    case ScheduleKind::Sigmoid: {
      constexpr double k = 10.0;
      auto s = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };
      const double lo = s(-k / 2.0), hi = s(k / 2.0);
      return p_max * ((s(k * (x - 0.5)) - lo) / (hi - lo));
    }
  }
  throw ConfigError("unknown schedule kind");
}

// Inverted-scale Bernoulli: element is 0 with probability p_d, else
// 1/(1-p_d), so the masked activation is unbiased. Exactly one uniform is
// consumed per element regardless of p_d.
template <typename T>
Tensor<T> bernoulli_mask(std::size_t rows, std::size_t cols, double p_d, Rng& rng) {
  if (!(p_d >= 0.0 && p_d < 1.0)) throw ConfigError("dropout.p_d must be in [0,1)");
  Tensor<T> m(rows, cols);
  const T keep = T(1.0 / (1.0 - p_d));
  for (std::size_t i = 0; i < m.size(); ++i)
    m.data()[i] = rng.uniform() < p_d ? T(0) : keep;
  return m;
}

// Multiplicative Gaussian noise 1 + sqrt(alpha) * eps with
// alpha = p_d/(1-p_d), matching the Bernoulli mask's mean and variance.
template <typename T>
Tensor<T> gaussian_mask(std::size_t rows, std::size_t cols, double p_d, Rng& rng) {
  if (!(p_d >= 0.0 && p_d < 1.0)) throw ConfigError("dropout.p_d must be in [0,1)");
  Tensor<T> m(rows, cols);
  const double sd = std::sqrt(p_d / (1.0 - p_d));
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = T(1.0 + sd * rng.normal());
  return m;
}

// Uniform noise mapped to the logistic scale, log((u+eps)/(1-u+eps)).
// Constants with respect to the tape; the gradient path runs through the
// rate logit alone.
template <typename T>
Tensor<T> concrete_noise(std::size_t rows, std::size_t cols, double eps, Rng& rng) {
  Tensor<T> n(rows, cols);
  for (std::size_t i = 0; i < n.size(); ++i) {
    double u = rng.uniform();
    n.data()[i] = T(std::log(u + eps) - std::log(1.0 - u + eps));
  }
  return n;
}

// Concrete relaxation of a Bernoulli drop decision:
//   z = sigmoid((log((p+eps)/(1-p+eps)) + log((u+eps)/(1-u+eps))) / tau)
//   mask = (1 - z) / (1 - p)
// p = sigmoid(rate_logit) stays on the tape, so d(mask)/d(rate_logit) flows.
template <typename T>
Tensor<T> concrete_mask(Tape<T>* tape, const Tensor<T>& rate_logit, const Tensor<T>& noise,
                        double tau, double eps) {
  Tensor<T> p = sigmoid(tape, rate_logit);
  Tensor<T> a = sub(tape, log(tape, scale_shift(tape, p, 1.0, eps)),
                    log(tape, scale_shift(tape, p, -1.0, 1.0 + eps)));
  Tensor<T> z = sigmoid(tape, scale_shift(tape, add_scalar(tape, noise, a), 1.0 / tau, 0.0));
  Tensor<T> keep = scale_shift(tape, z, -1.0, 1.0);
  Tensor<T> inv_q = reciprocal(tape, scale_shift(tape, p, -1.0, 1.0));
  return mul_scalar(tape, keep, inv_q);
}

// Sign of the rate regularizer term added to the objective. +1 adds
// lambda * unit_count * (p ln p + (1-p) ln(1-p)), the negative entropy of
// the rate. Its gradient pulls a rate started near 1 back toward 0.5 while
// the data term pushes it lower still; the -1 variant instead rewards
// saturating the rate at a pole, which drives p to 1 and ruins the model.
inline constexpr double kConcreteRegSign = +1.0;

template <typename T>
Tensor<T> concrete_regularizer(Tape<T>* tape, const Tensor<T>& rate_logit, double lambda,
                               std::size_t unit_count) {
  Tensor<T> p = sigmoid(tape, rate_logit);
  Tensor<T> q = scale_shift(tape, p, -1.0, 1.0);
  Tensor<T> neg_ent = add(tape, mul(tape, p, log(tape, p)), mul(tape, q, log(tape, q)));
  return scale_shift(tape, neg_ent, kConcreteRegSign * lambda * double(unit_count), 0.0);
}

// Identity when the mask is empty; row-broadcast when the mask is [1,n].
template <typename T>
Tensor<T> apply_mask(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& mask) {
  if (mask.size() == 0) return x;
  if (mask.rows() == 1 && x.rows() != 1) return mul_rowvec(tape, x, mask);
  return mul(tape, x, mask);
}

// One trainable drop-rate logit per masked site. Hidden shares a single rate
// across both layers.
template <typename T>
struct ConcreteRates {
  Tensor<T> input, hidden, output;  // [1,1] logits; empty when site inactive

  static ConcreteRates make(const DropoutSpec& spec) {
    ConcreteRates r;
    if (!spec.learned()) return r;
    const T l0 = T(std::log(spec.init_p / (1.0 - spec.init_p)));
    if (spec.masks_input()) r.input = Tensor<T>::scalar(l0);
    if (spec.masks_hidden()) r.hidden = Tensor<T>::scalar(l0);
    if (spec.masks_output()) r.output = Tensor<T>::scalar(l0);
    return r;
  }

  std::vector<Tensor<T>> trainables() const {
    std::vector<Tensor<T>> out;
    for (const Tensor<T>* t : {&input, &hidden, &output})
      if (t->size() == 1) out.push_back(*t);
    return out;
  }

  double mean_rate() const {
    double acc = 0.0;
    int n = 0;
    for (const Tensor<T>* t : {&input, &hidden, &output})
      if (t->size() == 1) {
        acc += 1.0 / (1.0 + std::exp(-double(t->value())));
        ++n;
      }
    return n ? acc / n : 0.0;
  }
};

// Masks for the current chunk; empty tensors mean identity. hidden[l] is
// applied to h_{t-1} entering layer l's recurrent products.
template <typename T>
struct MaskSet {
  Tensor<T> input;
  std::array<Tensor<T>, 2> hidden;
  Tensor<T> output;

  bool any() const {
    return input.size() || hidden[0].size() || hidden[1].size() || output.size();
  }
  void clear() { *this = MaskSet{}; }
};

struct MaskShapes {
  std::size_t batch = 0;
  std::size_t e_s = 0;
  std::size_t h = 0;
};

template <typename T>
struct DropoutState {
  MaskSet<T> masks;
  double epoch_p = 0.0;  // schedule value for curriculum variants
};

// Mask lifecycle. Masks are (re)sampled at every sequence boundary; variants
// that are not time-fixed also resample at every timestep boundary. Sampling
// order is fixed (input, hidden 0, hidden 1, output) so a given seed yields
// the same mask stream. Concrete masks are built on the tape through the
// site's rate logit.
template <typename T>
void refresh_masks(const DropoutSpec& spec, DropoutState<T>& st, const MaskShapes& sh,
                   bool timestep_boundary, bool sequence_boundary, Rng& rng,
                   Tape<T>* tape = nullptr, const ConcreteRates<T>* rates = nullptr) {
  if (!spec.active()) {
    st.masks.clear();
    return;
  }
  const bool resample = sequence_boundary || (timestep_boundary && !spec.time_fixed());
  if (!resample) return;

  double p = spec.p_d;
  if (spec.is_curriculum()) p = st.epoch_p;

  auto sample = [&](std::size_t r, std::size_t c, const Tensor<T>* logit) -> Tensor<T> {
    switch (spec.variant) {
      case DropoutVariant::Gaussian:
        return gaussian_mask<T>(r, c, p, rng);
      case DropoutVariant::Concrete:
        if (!logit || logit->size() != 1)
          throw ConfigError("dropout.variant concrete requires per-site rate state");
        return concrete_mask(tape, *logit, concrete_noise<T>(r, c, spec.eps, rng), spec.tau,
                             spec.eps);
      default:
        return bernoulli_mask<T>(r, c, p, rng);
    }
  };

  st.masks.clear();
  if (spec.masks_input())
    st.masks.input = sample(sh.batch, sh.e_s, rates ? &rates->input : nullptr);
  if (spec.masks_hidden()) {
    st.masks.hidden[0] = sample(sh.batch, sh.h, rates ? &rates->hidden : nullptr);
    st.masks.hidden[1] = sample(sh.batch, sh.h, rates ? &rates->hidden : nullptr);
  }
  if (spec.masks_output())
    st.masks.output = sample(sh.batch, sh.h, rates ? &rates->output : nullptr);
}

}  // namespace droplm
