// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "muse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "muse/detail/eigen.hpp"

namespace muse {

using detail::view;

namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + ": expected a matrix, got shape " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
Tensor<T> tracked(Tensor<T> out) {
  out.set_requires_grad(true);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  return linear<T>(tape, a, b, nullptr);
}

template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows()) {
    throw ShapeError("matmul: cannot multiply " + shape_str(x.shape()) + " by " +
                     shape_str(w.shape()));
  }
  const auto m = static_cast<Eigen::Index>(x.rows());
  const auto k = static_cast<Eigen::Index>(x.cols());
  const auto n = static_cast<Eigen::Index>(w.cols());
  if (bias && (bias->rank() != 1 || bias->size() != w.cols())) {
    throw ShapeError("linear: bias shape " + shape_str(bias->shape()) + " does not match " +
                     shape_str(w.shape()));
  }
  Tensor<T> out(Shape{x.rows(), w.cols()});
  auto y = view(out.ptr(), m, n);
  y.noalias() = view(x.ptr(), m, k) * view(w.ptr(), k, n);
  if (bias) {
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias->ptr(), n);
  }
  if (tracks(tape, {&x, &w, bias})) {
    Tensor<T> b = bias ? *bias : Tensor<T>();
    const bool has_bias = bias != nullptr;
    tape->record(out, [out, x, w, b, has_bias, m, k, n](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto dy = view(go.data(), m, n);
      if (auto dx = g.sink(x); !dx.empty()) {
        view(dx.data(), m, k).noalias() += dy * view(w.ptr(), k, n).transpose();
      }
      if (auto dw = g.sink(w); !dw.empty()) {
        view(dw.data(), k, n).noalias() += view(x.ptr(), m, k).transpose() * dy;
      }
      if (has_bias) {
        if (auto db = g.sink(b); !db.empty()) {
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db.data(), n) += dy.colwise().sum();
        }
      }
    });
    return tracked(out);
  }
  return out;
}

template <typename T>
Tensor<T> matmul_nt(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: cannot multiply " + shape_str(a.shape()) + " by transpose of " +
                     shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.rows());
  const auto k = static_cast<Eigen::Index>(a.cols());
  const auto n = static_cast<Eigen::Index>(b.rows());
  Tensor<T> out(Shape{a.rows(), b.rows()});
  view(out.ptr(), m, n).noalias() = view(a.ptr(), m, k) * view(b.ptr(), n, k).transpose();
  if (tracks(tape, {&a, &b})) {
    tape->record(out, [out, a, b, m, k, n](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto dy = view(go.data(), m, n);
      if (auto da = g.sink(a); !da.empty()) {
        view(da.data(), m, k).noalias() += dy * view(b.ptr(), n, k);
      }
      if (auto db = g.sink(b); !db.empty()) {
        view(db.data(), n, k).noalias() += dy.transpose() * view(a.ptr(), m, k);
      }
    });
    return tracked(out);
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  return add_all<T>(tape, {a, b});
}

template <typename T>
Tensor<T> add_all(Tape<T>* tape, const std::vector<Tensor<T>>& terms) {
  if (terms.empty()) throw UsageError("add_all: no terms");
  for (const auto& t : terms) require_same_shape(terms.front(), t, "add");
  Tensor<T> out = terms.front().clone();
  auto o = out.data();
  for (std::size_t t = 1; t < terms.size(); ++t) {
    auto s = terms[t].data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += s[i];
  }
  bool any = false;
  for (const auto& t : terms) any = any || t.requires_grad();
  if (tape && any) {
    tape->record(out, [out, terms](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      for (const auto& t : terms) {
        auto d = g.sink(t);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i];
      }
    });
    return tracked(out);
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T factor) {
  Tensor<T> out = x.clone();
  for (T& v : out.data()) v *= factor;
  if (tracks(tape, {&x})) {
    tape->record(out, [out, x, factor](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto d = g.sink(x);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * go[i];
    });
    return tracked(out);
  }
  return out;
}

template <typename T>
Tensor<T> scale_by(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weights,
                   std::size_t index) {
  if (index >= weights.size()) {
    throw ShapeError("scale_by: index " + std::to_string(index) + " outside weights of shape " +
                     shape_str(weights.shape()));
  }
  const T w = weights[index];
  Tensor<T> out = x.clone();
  for (T& v : out.data()) v *= w;
  if (tracks(tape, {&x, &weights})) {
    tape->record(out, [out, x, weights, index, w](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      if (auto d = g.sink(x); !d.empty()) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += w * go[i];
      }
      if (auto dw = g.sink(weights); !dw.empty()) {
        auto xs = x.data();
        T acc = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) acc += xs[i] * go[i];
        dw[index] += acc;
      }
    });
    return tracked(out);
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out = x.clone();
  for (T& v : out.data()) v = v > T(0) ? v : T(0);
  if (tracks(tape, {&x})) {
    tape->record(out, [out, x](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto d = g.sink(x);
      auto xs = x.data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (xs[i] > T(0)) d[i] += go[i];
      }
    });
    return tracked(out);
  }
  return out;
}

namespace {

// Visits every 1-D slice along `axis` as (base offset, stride, length).
template <typename F>
void for_each_slice(const Shape& shape, std::size_t axis, F&& f) {
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  const std::size_t len = shape[axis];
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) f(o * len * inner + in, inner, len);
  }
}

}  // namespace

template <typename T>
Tensor<T> softmax(Tape<T>* tape, const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for_each_slice(x.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xs[base + j * stride]);
    T total = 0;
    for (std::size_t j = 0; j < len; ++j) {
      const T e = std::exp(xs[base + j * stride] - mx);
      ys[base + j * stride] = e;
      total += e;
    }
    for (std::size_t j = 0; j < len; ++j) ys[base + j * stride] /= total;
  });
  if (tracks(tape, {&x})) {
    tape->record(out, [out, x, axis](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto d = g.sink(x);
      auto y = out.data();
      for_each_slice(x.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
        T dot = 0;
        for (std::size_t j = 0; j < len; ++j) dot += go[base + j * stride] * y[base + j * stride];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t p = base + j * stride;
          d[p] += y[p] * (go[p] - dot);
        }
      });
    });
    return tracked(out);
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  require_matrix(x, "layer_norm");
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " vs gain " +
                     shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()));
  }
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");

  Tensor<T> out(x.shape());
  AlignedVector<T> xhat(n * d);
  AlignedVector<T> rstd(n);
  const T* xs = x.ptr();
  T* ys = out.ptr();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = xs + r * d;
    T mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= T(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (row[c] - mean) * rs;
      xhat[r * d + c] = h;
      ys[r * d + c] = gain[c] * h + bias[c];
    }
  }
  if (tracks(tape, {&x, &gain, &bias})) {
    tape->record(out, [out, x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd), n,
                       d](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto dg = g.sink(gain);
      auto db = g.sink(bias);
      auto dx = g.sink(x);
      AlignedVector<T> dh(d);
      for (std::size_t r = 0; r < n; ++r) {
        const T* gy = go.data() + r * d;
        const T* h = xhat.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) {
          if (!dg.empty()) dg[c] += gy[c] * h[c];
          if (!db.empty()) db[c] += gy[c];
        }
        if (dx.empty()) continue;
        T mean_dh = 0, mean_dh_h = 0;
        for (std::size_t c = 0; c < d; ++c) {
          dh[c] = gy[c] * gain[c];
          mean_dh += dh[c];
          mean_dh_h += dh[c] * h[c];
        }
        mean_dh /= T(d);
        mean_dh_h /= T(d);
        for (std::size_t c = 0; c < d; ++c) {
          dx[r * d + c] += rstd[r] * (dh[c] - mean_dh - h[c] * mean_dh_h);
        }
      }
    });
    return tracked(out);
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (tracks(tape, {&x})) {
    tape->record(out, [out, x](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto d = g.sink(x);
      for (T& v : d) v += go[0];
    });
    return tracked(out);
  }
  return out;
}

template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& x, T rate, std::mt19937_64& rng) {
  if (rate <= T(0)) return x;
  if (rate >= T(1)) throw ConfigError("dropout rate must be below 1");
  const T keep_scale = T(1) / (T(1) - rate);
  AlignedVector<T> mask(x.size());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (T& m : mask) m = unif(rng) < static_cast<double>(rate) ? T(0) : keep_scale;
  Tensor<T> out = x.clone();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= mask[i];
  if (tracks(tape, {&x})) {
    tape->record(out, [out, x, mask = std::move(mask)](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto d = g.sink(x);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += mask[i] * go[i];
    });
    return tracked(out);
  }
  return out;
}

template <typename T>
Tensor<T> embedding(Tape<T>* tape, const Tensor<T>& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const std::size_t v = table.rows();
  const std::size_t d = table.cols();
  Tensor<T> out(Shape{ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= v) {
      throw DataError("token id " + std::to_string(ids[r]) + " outside vocabulary of size " +
                      std::to_string(v));
    }
    std::copy_n(table.ptr() + static_cast<std::size_t>(ids[r]) * d, d, out.ptr() + r * d);
  }
  if (tracks(tape, {&table})) {
    std::vector<int> idv(ids.begin(), ids.end());
    tape->record(out, [out, table, idv = std::move(idv), d](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto dt = g.sink(table);
      for (std::size_t r = 0; r < idv.size(); ++r) {
        T* dst = dt.data() + static_cast<std::size_t>(idv[r]) * d;
        const T* src = go.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    });
    return tracked(out);
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(Tape<T>* tape, const Tensor<T>& x, std::size_t offset, std::size_t width) {
  require_matrix(x, "slice_cols");
  if (offset + width > x.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(offset) + "," +
                     std::to_string(offset + width) + ") outside " + shape_str(x.shape()));
  }
  const std::size_t n = x.rows();
  const std::size_t c = x.cols();
  Tensor<T> out(Shape{n, width});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(x.ptr() + r * c + offset, width, out.ptr() + r * width);
  }
  if (tracks(tape, {&x})) {
    tape->record(out, [out, x, offset, width, n, c](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto d = g.sink(x);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < width; ++j) d[r * c + offset + j] += go[r * width + j];
      }
    });
    return tracked(out);
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(Tape<T>* tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no parts");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += p.cols();
  }
  Tensor<T> out(Shape{n, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < n; ++r) std::copy_n(p.ptr() + r * w, w, out.ptr() + r * total + off);
    off += w;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape && any) {
    tape->record(out, [out, parts, n, total](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      std::size_t off = 0;
      for (const auto& p : parts) {
        const std::size_t w = p.cols();
        if (auto d = g.sink(p); !d.empty()) {
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t j = 0; j < w; ++j) d[r * w + j] += go[r * total + off + j];
          }
        }
        off += w;
      }
    });
    return tracked(out);
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(Tape<T>* tape, const Tensor<T>& logits, std::span<const int> targets,
                        int ignore_index, T smoothing) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.rows();
  const std::size_t v = logits.cols();
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  std::size_t count = 0;
  for (int t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw DataError("target id " + std::to_string(t) + " outside vocabulary of size " +
                      std::to_string(v));
    }
    ++count;
  }
  if (count == 0) throw UsageError("cross_entropy: every target is ignored");

  // Softmax probabilities are kept for the backward rule.
  AlignedVector<T> probs(n * v);
  T total = 0;
  const T uniform = smoothing / T(v);
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] == ignore_index) continue;
    const T* z = logits.ptr() + r * v;
    T mx = *std::max_element(z, z + v);
    T s = 0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(z[j] - mx);
    const T lse = mx + std::log(s);
    T row_loss = 0;
    for (std::size_t j = 0; j < v; ++j) {
      const T logp = z[j] - lse;
      probs[r * v + j] = std::exp(logp);
      const T q = uniform + (static_cast<int>(j) == targets[r] ? T(1) - smoothing : T(0));
      if (q != T(0)) row_loss -= q * logp;
    }
    total += row_loss;
  }
  Tensor<T> out = Tensor<T>::scalar(total / T(count));
  if (tracks(tape, {&logits})) {
    std::vector<int> tv(targets.begin(), targets.end());
    tape->record(out, [out, logits, probs = std::move(probs), tv = std::move(tv), ignore_index,
                       uniform, smoothing, count, v](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto d = g.sink(logits);
      const T scale = go[0] / T(count);
      for (std::size_t r = 0; r < tv.size(); ++r) {
        if (tv[r] == ignore_index) continue;
        for (std::size_t j = 0; j < v; ++j) {
          const T q = uniform + (static_cast<int>(j) == tv[r] ? T(1) - smoothing : T(0));
          d[r * v + j] += scale * (probs[r * v + j] - q);
        }
      }
    });
    return tracked(out);
  }
  return out;
}

#define MUSE_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> matmul(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> linear(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);   \
  template Tensor<T> matmul_nt(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> add(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> add_all(Tape<T>*, const std::vector<Tensor<T>>&);                         \
  template Tensor<T> scale(Tape<T>*, const Tensor<T>&, T);                                     \
  template Tensor<T> scale_by(Tape<T>*, const Tensor<T>&, const Tensor<T>&, std::size_t);      \
  template Tensor<T> relu(Tape<T>*, const Tensor<T>&);                                         \
  template Tensor<T> softmax(Tape<T>*, const Tensor<T>&, std::size_t);                         \
  template Tensor<T> layer_norm(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                T);                                                            \
  template Tensor<T> sum(Tape<T>*, const Tensor<T>&);                                          \
  template Tensor<T> dropout(Tape<T>*, const Tensor<T>&, T, std::mt19937_64&);                 \
  template Tensor<T> embedding(Tape<T>*, const Tensor<T>&, std::span<const int>);              \
  template Tensor<T> slice_cols(Tape<T>*, const Tensor<T>&, std::size_t, std::size_t);         \
  template Tensor<T> concat_cols(Tape<T>*, const std::vector<Tensor<T>>&);                     \
  template Tensor<T> cross_entropy(Tape<T>*, const Tensor<T>&, std::span<const int>, int, T);

MUSE_INSTANTIATE_OPS(float)
MUSE_INSTANTIATE_OPS(double)

}  // namespace muse
