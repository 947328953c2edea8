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

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "droplm/errors.hpp"

namespace droplm {

// Dense 2-D tensor of T, row-major, with a lazily allocated gradient buffer.
// Copies are handles to the same payload; tape closures capture them by value.
// Payload buffers never resize after construction, so Eigen maps taken in a
// forward pass stay valid inside backward closures.
template <typename T>
class Tensor {
  struct Payload {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> v;
    std::vector<T> g;  // empty until a gradient is first accumulated
  };

 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;

  Tensor() : p_(std::make_shared<Payload>()) {}

  Tensor(std::size_t rows, std::size_t cols) : p_(std::make_shared<Payload>()) {
    p_->rows = rows;
    p_->cols = cols;
    p_->v.assign(rows * cols, T(0));
  }

  static Tensor full(std::size_t rows, std::size_t cols, T x) {
    Tensor t(rows, cols);
    for (auto& e : t.p_->v) e = x;
    return t;
  }

  static Tensor scalar(T x) { return full(1, 1, x); }

  static Tensor row(const std::vector<T>& xs) {
    Tensor t(1, xs.size());
    t.p_->v = xs;
    return t;
  }

  static Tensor from(std::initializer_list<std::initializer_list<T>> rows) {
    Tensor t(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t i = 0;
    for (const auto& r : rows) {
      if (r.size() != t.cols()) throw ShapeError("from: ragged initializer");
      std::size_t j = 0;
      for (T x : r) t(i, j++) = x;
      ++i;
    }
    return t;
  }

  std::size_t rows() const { return p_->rows; }
  std::size_t cols() const { return p_->cols; }
  std::size_t size() const { return p_->v.size(); }

  // Handle semantics: accessors are const, payload is shared and mutable.
  T* data() const { return p_->v.data(); }
  std::vector<T>& values() const { return p_->v; }

  T& operator()(std::size_t i, std::size_t j) const { return p_->v[i * p_->cols + j]; }

  // Scalar accessors for [1,1] tensors.
  T value() const {
    if (size() != 1) throw ShapeError("value: tensor is " + shape_str() + ", want [1x1]");
    return p_->v[0];
  }

  bool has_grad() const { return !p_->g.empty(); }

  std::vector<T>& grad() const {
    if (p_->g.empty()) p_->g.assign(p_->v.size(), T(0));
    return p_->g;
  }

  T grad_at(std::size_t i, std::size_t j) const { return grad()[i * p_->cols + j]; }

  void zero_grad() const {
    for (auto& e : p_->g) e = T(0);
  }

  void drop_grad() const { p_->g.clear(); }

  // Deep copy of values only.
  Tensor clone() const {
    Tensor t(rows(), cols());
    t.p_->v = p_->v;
    return t;
  }

  bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }

  std::string shape_str() const {
    return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
  }

  bool same_payload(const Tensor& o) const { return p_ == o.p_; }

  Map vmap() const { return Map(p_->v.data(), rows(), cols()); }
  CMap cmap() const { return CMap(p_->v.data(), rows(), cols()); }
  Map gmap() const {
    grad();
    return Map(p_->g.data(), rows(), cols());
  }
  CMap cgmap() const { return CMap(p_->g.data(), rows(), cols()); }

 private:
  std::shared_ptr<Payload> p_;
};

// Reverse-mode tape. Forward ops push backward closures; backward() seeds the
// scalar root with 1 and replays in reverse. Closures guard on the output
// having received a gradient, so branches that never reach the root cost
// nothing and allocate nothing.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  void backward(const Tensor<T>& root) {
    if (root.size() != 1)
      throw ShapeError("backward: root is " + root.shape_str() + ", want [1x1]");
    root.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace detail {

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

inline std::string shapes2(const auto& a, const auto& b) {
  return a.shape_str() + " vs " + b.shape_str();
}

}  // namespace detail

// out = x * w
template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w) {
  if (x.cols() != w.rows())
    throw ShapeError("matmul shape mismatch: " + detail::shapes2(x, w));
  Tensor<T> out(x.rows(), w.cols());
  out.vmap().noalias() = x.cmap() * w.cmap();
  if (tape)
    tape->record([x, w, out] {
      if (!out.has_grad()) return;
      x.gmap().noalias() += out.cgmap() * w.cmap().transpose();
      w.gmap().noalias() += x.cmap().transpose() * out.cgmap();
    });
  return out;
}

// out = x * w + b, b broadcast over rows. b is [1, w.cols].
template <typename T>
Tensor<T> affine(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.cols() != w.rows())
    throw ShapeError("affine shape mismatch: " + detail::shapes2(x, w));
  if (b.rows() != 1 || b.cols() != w.cols())
    throw ShapeError("affine bias shape mismatch: " + detail::shapes2(w, b));
  Tensor<T> out(x.rows(), w.cols());
  out.vmap().noalias() = x.cmap() * w.cmap();
  out.vmap().rowwise() += b.cmap().row(0);
  if (tape)
    tape->record([x, w, b, out] {
      if (!out.has_grad()) return;
      x.gmap().noalias() += out.cgmap() * w.cmap().transpose();
      w.gmap().noalias() += x.cmap().transpose() * out.cgmap();
      // Fixed-order accumulation; Eigen redux order varies with the heap
      // addresses it maps, which would break run-to-run determinism.
      auto& bg = b.grad();
      const auto& og = out.grad();
      const std::size_t r = out.rows(), c = out.cols();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) bg[j] += og[i * c + j];
    });
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data()[i] = detail::sigmoid_scalar(x.data()[i]);
  if (tape)
    tape->record([x, out] {
      if (!out.has_grad()) return;
      auto& xg = x.grad();
      const auto& og = out.grad();
      for (std::size_t i = 0; i < out.size(); ++i) {
        T s = out.data()[i];
        xg[i] += og[i] * s * (T(1) - s);
      }
    });
  return out;
}

template <typename T>
Tensor<T> tanh(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = std::tanh(x.data()[i]);
  if (tape)
    tape->record([x, out] {
      if (!out.has_grad()) return;
      auto& xg = x.grad();
      const auto& og = out.grad();
      for (std::size_t i = 0; i < out.size(); ++i) {
        T th = out.data()[i];
        xg[i] += og[i] * (T(1) - th * th);
      }
    });
  return out;
}

// Elementwise natural log; domain x > 0.
template <typename T>
Tensor<T> log(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = std::log(x.data()[i]);
  if (tape)
    tape->record([x, out] {
      if (!out.has_grad()) return;
      auto& xg = x.grad();
      const auto& og = out.grad();
      for (std::size_t i = 0; i < out.size(); ++i) xg[i] += og[i] / x.data()[i];
    });
  return out;
}

template <typename T>
Tensor<T> reciprocal(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = T(1) / x.data()[i];
  if (tape)
    tape->record([x, out] {
      if (!out.has_grad()) return;
      auto& xg = x.grad();
      const auto& og = out.grad();
      for (std::size_t i = 0; i < out.size(); ++i) {
        T r = out.data()[i];
        xg[i] -= og[i] * r * r;
      }
    });
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& y) {
  if (!x.same_shape(y)) throw ShapeError("add shape mismatch: " + detail::shapes2(x, y));
  Tensor<T> out(x.rows(), x.cols());
  out.vmap() = x.cmap() + y.cmap();
  if (tape)
    tape->record([x, y, out] {
      if (!out.has_grad()) return;
      x.gmap() += out.cgmap();
      y.gmap() += out.cgmap();
    });
  return out;
}

template <typename T>
Tensor<T> sub(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& y) {
  if (!x.same_shape(y)) throw ShapeError("sub shape mismatch: " + detail::shapes2(x, y));
  Tensor<T> out(x.rows(), x.cols());
  out.vmap() = x.cmap() - y.cmap();
  if (tape)
    tape->record([x, y, out] {
      if (!out.has_grad()) return;
      x.gmap() += out.cgmap();
      y.gmap() -= out.cgmap();
    });
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& y) {
  if (!x.same_shape(y)) throw ShapeError("mul shape mismatch: " + detail::shapes2(x, y));
  Tensor<T> out(x.rows(), x.cols());
  out.vmap() = x.cmap().cwiseProduct(y.cmap());
  if (tape)
    tape->record([x, y, out] {
      if (!out.has_grad()) return;
      x.gmap() += out.cgmap().cwiseProduct(y.cmap());
      y.gmap() += out.cgmap().cwiseProduct(x.cmap());
    });
  return out;
}

// out = a * x + b with scalar constants (no gradient into a, b).
template <typename T>
Tensor<T> scale_shift(Tape<T>* tape, const Tensor<T>& x, double a, double b) {
  Tensor<T> out(x.rows(), x.cols());
  const T ta = T(a), tb = T(b);
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = ta * x.data()[i] + tb;
  if (tape)
    tape->record([x, out, ta] {
      if (!out.has_grad()) return;
      auto& xg = x.grad();
      const auto& og = out.grad();
      for (std::size_t i = 0; i < out.size(); ++i) xg[i] += ta * og[i];
    });
  return out;
}

// out[i,j] = x[i,j] * m[0,j]; m is [1, x.cols].
template <typename T>
Tensor<T> mul_rowvec(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& m) {
  if (m.rows() != 1 || m.cols() != x.cols())
    throw ShapeError("mul_rowvec shape mismatch: " + detail::shapes2(x, m));
  Tensor<T> out(x.rows(), x.cols());
  out.vmap() = x.cmap().array().rowwise() * m.cmap().array().row(0);
  if (tape)
    tape->record([x, m, out] {
      if (!out.has_grad()) return;
      x.gmap().array() += out.cgmap().array().rowwise() * m.cmap().array().row(0);
      // Fixed-order accumulation, as in affine's bias gradient.
      auto& mg = m.grad();
      const auto& og = out.grad();
      const T* xv = x.data();
      const std::size_t r = out.rows(), c = out.cols();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) mg[j] += og[i * c + j] * xv[i * c + j];
    });
  return out;
}

// out = x + s with s a [1,1] tensor broadcast over all elements.
template <typename T>
Tensor<T> add_scalar(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& s) {
  if (s.size() != 1) throw ShapeError("add_scalar: s is " + s.shape_str() + ", want [1x1]");
  Tensor<T> out(x.rows(), x.cols());
  const T sv = s.value();
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] + sv;
  if (tape)
    tape->record([x, s, out] {
      if (!out.has_grad()) return;
      auto& xg = x.grad();
      const auto& og = out.grad();
      T acc = T(0);
      for (std::size_t i = 0; i < out.size(); ++i) {
        xg[i] += og[i];
        acc += og[i];
      }
      s.grad()[0] += acc;
    });
  return out;
}

// out = x * s with s a [1,1] tensor broadcast over all elements.
template <typename T>
Tensor<T> mul_scalar(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& s) {
  if (s.size() != 1) throw ShapeError("mul_scalar: s is " + s.shape_str() + ", want [1x1]");
  Tensor<T> out(x.rows(), x.cols());
  const T sv = s.value();
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * sv;
  if (tape)
    tape->record([x, s, out, sv] {
      if (!out.has_grad()) return;
      auto& xg = x.grad();
      const auto& og = out.grad();
      T acc = T(0);
      for (std::size_t i = 0; i < out.size(); ++i) {
        xg[i] += og[i] * sv;
        acc += og[i] * x.data()[i];
      }
      s.grad()[0] += acc;
    });
  return out;
}

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(1, 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += double(x.data()[i]);
  out.data()[0] = T(acc);
  if (tape)
    tape->record([x, out] {
      if (!out.has_grad()) return;
      T g = out.grad()[0];
      auto& xg = x.grad();
      for (std::size_t i = 0; i < x.size(); ++i) xg[i] += g;
    });
  return out;
}

// Row gather: out[i,:] = table[ids[i],:]. Backward scatter-adds, so repeated
// ids accumulate.
template <typename T>
Tensor<T> embedding_rows(Tape<T>* tape, const Tensor<T>& table, std::vector<std::int32_t> ids) {
  Tensor<T> out(ids.size(), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::int32_t id = ids[i];
    if (id < 0 || std::size_t(id) >= table.rows())
      throw ShapeError("embedding_rows: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(table.rows()) + ")");
    out.vmap().row(i) = table.cmap().row(id);
  }
  if (tape)
    tape->record([table, out, ids = std::move(ids)] {
      if (!out.has_grad()) return;
      table.grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        table.gmap().row(ids[i]) += out.cgmap().row(i);
    });
  return out;
}

// Mean cross-entropy over the batch with max-subtracted softmax. Returns the
// [1,1] loss node and the already-materialized d(loss)/d(logits); backward
// scales that by the upstream gradient. Stable for logits anywhere in
// [-1e4, 1e4] in both precisions.
template <typename T>
struct SoftmaxXent {
  Tensor<T> loss;
  Tensor<T> dlogits;
};

template <typename T>
SoftmaxXent<T> softmax_xent(Tape<T>* tape, const Tensor<T>& logits,
                            const std::vector<std::int32_t>& targets) {
  const std::size_t b = logits.rows(), v = logits.cols();
  if (targets.size() != b)
    throw ShapeError("softmax_xent: " + std::to_string(targets.size()) + " targets for " +
                     logits.shape_str() + " logits");
  Tensor<T> dlogits(b, v);
  double loss_acc = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    std::int32_t t = targets[i];
    if (t < 0 || std::size_t(t) >= v)
      throw ShapeError("softmax_xent: target " + std::to_string(t) + " out of range [0," +
                       std::to_string(v) + ")");
    const T* row = logits.data() + i * v;
    T mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(double(row[j] - mx));
    double inv_z = 1.0 / z;
    T* drow = dlogits.data() + i * v;
    for (std::size_t j = 0; j < v; ++j)
      drow[j] = T(std::exp(double(row[j] - mx)) * inv_z / double(b));
    drow[t] -= T(1.0 / double(b));
    loss_acc += std::log(z) - double(row[t] - mx);
  }
  Tensor<T> loss = Tensor<T>::scalar(T(loss_acc / double(b)));
  if (tape)
    tape->record([logits, loss, dlogits] {
      if (!loss.has_grad()) return;
      T g = loss.grad()[0];
      auto& lg = logits.grad();
      for (std::size_t i = 0; i < dlogits.size(); ++i) lg[i] += g * dlogits.data()[i];
    });
  return {loss, dlogits};
}

// Per-row cross-entropy computed in double from the T logits. evaluate() and
// the per-step analysis both call this, so their losses agree bit for bit.
template <typename T>
std::vector<double> xent_per_token(const Tensor<T>& logits,
                                   const std::vector<std::int32_t>& targets) {
  const std::size_t b = logits.rows(), v = logits.cols();
  if (targets.size() != b)
    throw ShapeError("xent_per_token: " + std::to_string(targets.size()) + " targets for " +
                     logits.shape_str() + " logits");
  std::vector<double> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::int32_t t = targets[i];
    if (t < 0 || std::size_t(t) >= v)
      throw ShapeError("xent_per_token: target " + std::to_string(t) + " out of range [0," +
                       std::to_string(v) + ")");
    const T* row = logits.data() + i * v;
    T mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(double(row[j] - mx));
    out[i] = std::log(z) - double(row[t] - mx);
  }
  return out;
}

// Log-softmax of one logits row, in double. Shared by analysis and sampling.
template <typename T>
std::vector<double> log_softmax_row(const Tensor<T>& logits, std::size_t i) {
  const std::size_t v = logits.cols();
  const T* row = logits.data() + i * v;
  T mx = row[0];
  for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < v; ++j) z += std::exp(double(row[j] - mx));
  double lz = std::log(z);
  std::vector<double> out(v);
  for (std::size_t j = 0; j < v; ++j) out[j] = double(row[j] - mx) - lz;
  return out;
}

template <typename T>
double global_grad_norm(const std::vector<Tensor<T>>& params) {
  double acc = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) acc += double(g) * double(g);
  }
  return std::sqrt(acc);
}

// Scales all gradients so the global L2 norm is at most max_norm. Returns the
// applied scale (1.0 when already within bounds).
template <typename T>
double clip_global_norm(const std::vector<Tensor<T>>& params, double max_norm) {
  double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  double scale = max_norm / norm;
  const T ts = T(scale);
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T& g : p.grad()) g *= ts;
  }
  return scale;
}

template <typename T>
void sgd_step(const std::vector<Tensor<T>>& params, double lr) {
  const T tlr = T(lr);
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    T* v = p.data();
    const auto& g = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) v[i] -= tlr * g[i];
  }
}

template <typename T>
void zero_grads(const std::vector<Tensor<T>>& params) {
  for (const auto& p : params) p.zero_grad();
}

}  // namespace droplm
