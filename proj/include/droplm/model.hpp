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
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "droplm/dropout.hpp"
#include "droplm/errors.hpp"
#include "droplm/rng.hpp"
#include "droplm/tensor.hpp"

namespace droplm {

enum class Arch : std::uint8_t { LSTM = 0, GRU = 1, Highway = 2 };

inline const char* arch_name(Arch a) {
  switch (a) {
    case Arch::LSTM: return "lstm";
    case Arch::GRU: return "gru";
    case Arch::Highway: return "highway";
  }
  return "?";
}

inline Arch arch_from_name(const std::string& s) {
  if (s == "lstm") return Arch::LSTM;
  if (s == "gru") return Arch::GRU;
  if (s == "highway") return Arch::Highway;
  throw ConfigError("arch must be lstm, gru, or highway (got \"" + s + "\")");
}

template <typename T>
struct GateParams {
  Tensor<T> w;  // [in, h]
  Tensor<T> u;  // [h, h]
  Tensor<T> b;  // [1, h]
};

// Gate order is the checkpoint order: LSTM i,f,g,o; GRU z,r,n; Highway h,t
// (candidate then transform gate).
template <typename T>
struct LayerParams {
  std::vector<GateParams<T>> gates;
};

template <typename T>
struct ModelParams {
  Arch arch = Arch::LSTM;
  int vocab = 0;
  int e_s = 300;
  int h = 300;
  Tensor<T> embedding;  // [V, e_s]
  std::array<LayerParams<T>, 2> layers;
  Tensor<T> decoder_w;  // [h, V], untied from the embedding
  Tensor<T> decoder_b;  // [1, V]

  static int gate_count(Arch a) {
    switch (a) {
      case Arch::LSTM: return 4;
      case Arch::GRU: return 3;
      case Arch::Highway: return 2;
    }
    return 0;
  }

  static ModelParams init(Arch arch, int vocab, int e_s, int h, Rng& rng) {
    if (vocab < 1) throw ConfigError("model vocabulary must not be empty");
    if (e_s < 1 || h < 1) throw ConfigError("dims.embedding and dims.hidden must be >= 1");
    ModelParams m;
    m.arch = arch;
    m.vocab = vocab;
    m.e_s = e_s;
    m.h = h;
    m.embedding = Tensor<T>(vocab, e_s);
    for (int l = 0; l < 2; ++l) {
      const int in = l == 0 ? e_s : h;
      m.layers[l].gates.resize(gate_count(arch));
      for (auto& g : m.layers[l].gates) {
        g.w = Tensor<T>(in, h);
        g.u = Tensor<T>(h, h);
        g.b = Tensor<T>(1, h);
      }
    }
    m.decoder_w = Tensor<T>(h, vocab);
    m.decoder_b = Tensor<T>(1, vocab);
    for (const auto& p : m.parameters())
      for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] = T(rng.uniform(-0.1, 0.1));
    return m;
  }

  // Fixed traversal order; this is also the checkpoint layout.
  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    out.push_back(embedding);
    for (const auto& layer : layers)
      for (const auto& g : layer.gates) {
        out.push_back(g.w);
        out.push_back(g.u);
        out.push_back(g.b);
      }
    out.push_back(decoder_w);
    out.push_back(decoder_b);
    return out;
  }

  ModelParams clone() const {
    ModelParams m = *this;
    m.embedding = embedding.clone();
    for (int l = 0; l < 2; ++l)
      for (std::size_t g = 0; g < layers[l].gates.size(); ++g) {
        m.layers[l].gates[g].w = layers[l].gates[g].w.clone();
        m.layers[l].gates[g].u = layers[l].gates[g].u.clone();
        m.layers[l].gates[g].b = layers[l].gates[g].b.clone();
      }
    m.decoder_w = decoder_w.clone();
    m.decoder_b = decoder_b.clone();
    return m;
  }

  void copy_values_from(const ModelParams& other) {
    auto dst = parameters();
    auto src = other.parameters();
    if (dst.size() != src.size()) throw ShapeError("model shape mismatch in copy");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i].values() = src[i].values();
  }
};

template <typename T>
struct HiddenState {
  std::array<Tensor<T>, 2> h;
  std::array<Tensor<T>, 2> c;  // LSTM only; empty otherwise

  static HiddenState zeros(Arch arch, std::size_t batch, int hdim) {
    HiddenState s;
    for (int l = 0; l < 2; ++l) {
      s.h[l] = Tensor<T>(batch, hdim);
      if (arch == Arch::LSTM) s.c[l] = Tensor<T>(batch, hdim);
    }
    return s;
  }

  // Values preserved, gradient lineage severed: fresh payloads that no prior
  // tape closure references.
  HiddenState detached() const {
    HiddenState s;
    for (int l = 0; l < 2; ++l) {
      s.h[l] = h[l].clone();
      if (c[l].size()) s.c[l] = c[l].clone();
    }
    return s;
  }
};

template <typename T>
inline HiddenState<T> detach_state(const HiddenState<T>& s) {
  return s.detached();
}

// One recurrent step of layer `lp`. h (and c for LSTM) are updated in place
// with new tensors; hidden_mask multiplies h_{t-1} entering the U products
// only. The GRU carry z⊙h uses the unmasked h; the Highway carry (1-t)⊙h
// uses the masked h.
template <typename T>
void cell_step(Tape<T>* tape, Arch arch, const LayerParams<T>& lp, const Tensor<T>& x,
               Tensor<T>& h, Tensor<T>& c, const Tensor<T>& hidden_mask) {
  const Tensor<T> hm = apply_mask(tape, h, hidden_mask);
  auto pre = [&](int g) {
    return add(tape, affine(tape, x, lp.gates[g].w, lp.gates[g].b),
               matmul(tape, hm, lp.gates[g].u));
  };
  switch (arch) {
    case Arch::LSTM: {
      Tensor<T> i = sigmoid(tape, pre(0));
      Tensor<T> f = sigmoid(tape, pre(1));
      Tensor<T> g = tanh(tape, pre(2));
      Tensor<T> o = sigmoid(tape, pre(3));
      c = add(tape, mul(tape, f, c), mul(tape, i, g));
      h = mul(tape, o, tanh(tape, c));
      return;
    }
    case Arch::GRU: {
      Tensor<T> z = sigmoid(tape, pre(0));
      Tensor<T> r = sigmoid(tape, pre(1));
      Tensor<T> n = tanh(tape, add(tape, affine(tape, x, lp.gates[2].w, lp.gates[2].b),
                                   mul(tape, r, matmul(tape, hm, lp.gates[2].u))));
      h = add(tape, mul(tape, scale_shift(tape, z, -1.0, 1.0), n), mul(tape, z, h));
      return;
    }
    case Arch::Highway: {
      Tensor<T> cand = tanh(tape, pre(0));
      Tensor<T> t = sigmoid(tape, pre(1));
      h = add(tape, mul(tape, t, cand), mul(tape, scale_shift(tape, t, -1.0, 1.0), hm));
      return;
    }
  }
  throw ConfigError("unknown arch");
}

// Bundles everything the forward pass needs to maintain masks across
// timesteps. Inactive (all pointers null) in evaluation.
template <typename T>
struct DropoutDriver {
  const DropoutSpec* spec = nullptr;
  DropoutState<T>* state = nullptr;
  Rng* rng = nullptr;
  const ConcreteRates<T>* rates = nullptr;

  bool active() const { return spec && spec->active() && state && rng; }
};

// Runs the chunk. x_cols[t] holds the batch's ids at timestep t. Masks are
// refreshed at the chunk (sequence) boundary and, for variants that are not
// time-fixed, before every later timestep. Returns per-step logits.
template <typename T>
std::vector<Tensor<T>> forward_chunk(Tape<T>* tape, const ModelParams<T>& m,
                                     const std::vector<std::vector<std::int32_t>>& x_cols,
                                     HiddenState<T>& state,
                                     const DropoutDriver<T>& drop = {}) {
  std::vector<Tensor<T>> logits;
  logits.reserve(x_cols.size());
  const MaskShapes shapes{x_cols.empty() ? 0 : x_cols[0].size(), std::size_t(m.e_s),
                          std::size_t(m.h)};
  for (std::size_t t = 0; t < x_cols.size(); ++t) {
    if (drop.active())
      refresh_masks(*drop.spec, *drop.state, shapes, t > 0, t == 0, *drop.rng, tape, drop.rates);
    const MaskSet<T>* masks = drop.active() ? &drop.state->masks : nullptr;
    static const Tensor<T> kIdentity;

    Tensor<T> e = embedding_rows(tape, m.embedding, x_cols[t]);
    if (masks) e = apply_mask(tape, e, masks->input);
    Tensor<T> x = e;
    for (int l = 0; l < 2; ++l) {
      cell_step(tape, m.arch, m.layers[l], x, state.h[l], state.c[l],
                masks ? masks->hidden[l] : kIdentity);
      x = state.h[l];
    }
    Tensor<T> top = masks ? apply_mask(tape, x, masks->output) : x;
    logits.push_back(affine(tape, top, m.decoder_w, m.decoder_b));
  }
  return logits;
}

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }

inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

}  // namespace detail

// Checkpoint layout ("DLM1"): magic, u8 arch, u32 LE vocab/e_s/h, then every
// parameter as raw little-endian f32 in parameters() order (embedding, layer
// gates W,U,b in gate order, decoder W, decoder b), row-major. Byte-exact
// round trip; f64 models are narrowed to f32 on save.
template <typename T>
void save_checkpoint(const ModelParams<T>& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path.string());
  os.write("DLM1", 4);
  os.put(char(std::uint8_t(m.arch)));
  detail::put_u32(os, std::uint32_t(m.vocab));
  detail::put_u32(os, std::uint32_t(m.e_s));
  detail::put_u32(os, std::uint32_t(m.h));
  for (const auto& p : m.parameters())
    for (std::size_t i = 0; i < p.size(); ++i) detail::put_f32(os, float(p.data()[i]));
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "DLM1")
    throw IoError("not a model checkpoint (bad magic): " + path.string());
  int archb = is.get();
  if (archb < 0 || archb > 2) throw IoError("corrupt checkpoint (arch tag): " + path.string());
  std::uint32_t vocab = detail::get_u32(is);
  std::uint32_t e_s = detail::get_u32(is);
  std::uint32_t h = detail::get_u32(is);
  if (!is || vocab == 0 || e_s == 0 || h == 0 || vocab > (1u << 26) || e_s > (1u << 20) ||
      h > (1u << 20))
    throw IoError("corrupt checkpoint (dims): " + path.string());
  Rng dummy(0);
  ModelParams<T> m =
      ModelParams<T>::init(Arch(std::uint8_t(archb)), int(vocab), int(e_s), int(h), dummy);
  for (const auto& p : m.parameters())
    for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] = T(detail::get_f32(is));
  if (!is) throw IoError("truncated checkpoint: " + path.string());
  return m;
}

}  // namespace droplm
