// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include "muse/block.hpp"
#include "muse/detail/eigen.hpp"
#include "muse/ops.hpp"

namespace muse {

using detail::view;

namespace {

template <typename T>
void check_conv_input(const Tensor<T>& v2, const Tensor<T>& weights, const SeqLayout& layout,
                      const char* what) {
  if (v2.rank() != 2 || v2.rows() != layout.rows()) {
    throw ShapeError(std::string(what) + ": input " + shape_str(v2.shape()) + " does not match " +
                     std::to_string(layout.batch) + " sequences of length " +
                     std::to_string(layout.len));
  }
  if (!layout.lengths.empty() && layout.lengths.size() != layout.batch) {
    throw ShapeError(std::string(what) + ": lengths has wrong batch size");
  }
  if (weights.rank() != 2 || weights.cols() != v2.cols()) {
    throw ShapeError(std::string(what) + ": kernel " + shape_str(weights.shape()) +
                     " does not match width " + std::to_string(v2.cols()));
  }
  const std::size_t k = weights.rows();
  if (k == 0 || k % 2 == 0) {
    throw ConfigError(std::string(what) + ": kernel size must be odd and positive, got " +
                      std::to_string(k));
  }
}

// Flat row index read by tap j at row (b, i), or -1 when it falls outside the
// unpadded sequence.
inline long tap_row(const SeqLayout& layout, std::size_t b, std::size_t i, std::size_t j,
                    std::size_t k, bool causal) {
  const long p = tap_source(i, j, k, causal);
  if (p < 0 || p >= static_cast<long>(layout.valid(b))) return -1;
  return static_cast<long>(b * layout.len) + p;
}

}  // namespace

template <typename T>
Tensor<T> dynamic_depthwise(Tape<T>* tape, const Tensor<T>& v2, const Tensor<T>& generator,
                            bool causal, const SeqLayout& layout) {
  check_conv_input(v2, generator, layout, "dynamic_depthwise");
  const std::size_t rows = v2.rows();
  const std::size_t d = v2.cols();
  const std::size_t k = generator.rows();
  const auto R = static_cast<Eigen::Index>(rows);
  const auto D = static_cast<Eigen::Index>(d);
  const auto K = static_cast<Eigen::Index>(k);

  // Tap weights: softmax over the k logits of each position.
  AlignedVector<T> w(rows * k);
  auto wm = view(w.data(), R, K);
  wm.noalias() = view(v2.ptr(), R, D) * view(generator.ptr(), K, D).transpose();
  for (std::size_t r = 0; r < rows; ++r) {
    T* l = w.data() + r * k;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, l[j]);
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      l[j] = std::exp(l[j] - mx);
      total += l[j];
    }
    for (std::size_t j = 0; j < k; ++j) l[j] /= total;
  }

  Tensor<T> out(Shape{rows, d});
  const T* src = v2.ptr();
  T* dst = out.ptr();
  for (std::size_t b = 0; b < layout.batch; ++b) {
    for (std::size_t i = 0; i < layout.len; ++i) {
      const std::size_t r = b * layout.len + i;
      T* o = dst + r * d;
      for (std::size_t j = 0; j < k; ++j) {
        const long pr = tap_row(layout, b, i, j, k, causal);
        if (pr < 0) continue;
        const T wj = w[r * k + j];
        const T* x = src + static_cast<std::size_t>(pr) * d;
        for (std::size_t c = 0; c < d; ++c) o[c] += wj * x[c];
      }
    }
  }

  if (tracks(tape, {&v2, &generator})) {
    tape->record(out, [out, v2, generator, w = std::move(w), layout, causal, rows, d,
                       k](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto dv = g.sink(v2);
      auto dg = g.sink(generator);
      const auto R = static_cast<Eigen::Index>(rows);
      const auto D = static_cast<Eigen::Index>(d);
      const auto K = static_cast<Eigen::Index>(k);
      const T* src = v2.ptr();
      // dl: gradient of the tap logits.
      AlignedVector<T> dl(rows * k, T(0));
      for (std::size_t b = 0; b < layout.batch; ++b) {
        for (std::size_t i = 0; i < layout.len; ++i) {
          const std::size_t r = b * layout.len + i;
          const T* gr = go.data() + r * d;
          const T* wr = w.data() + r * k;
          T* dlr = dl.data() + r * k;
          T dot = 0;
          for (std::size_t j = 0; j < k; ++j) {
            const long pr = tap_row(layout, b, i, j, k, causal);
            if (pr < 0) continue;
            const T* x = src + static_cast<std::size_t>(pr) * d;
            T dw = 0;
            for (std::size_t c = 0; c < d; ++c) dw += gr[c] * x[c];
            dlr[j] = dw;
            dot += dw * wr[j];
            if (!dv.empty()) {
              T* dx = dv.data() + static_cast<std::size_t>(pr) * d;
              for (std::size_t c = 0; c < d; ++c) dx[c] += wr[j] * gr[c];
            }
          }
          for (std::size_t j = 0; j < k; ++j) dlr[j] = wr[j] * (dlr[j] - dot);
        }
      }
      auto dlm = view(dl.data(), R, K);
      if (!dg.empty()) view(dg.data(), K, D).noalias() += dlm.transpose() * view(v2.ptr(), R, D);
      if (!dv.empty()) view(dv.data(), R, D).noalias() += dlm * view(generator.ptr(), K, D);
    });
    out.set_requires_grad(true);
  }
  return out;
}

template <typename T>
Tensor<T> plain_depthwise(Tape<T>* tape, const Tensor<T>& v2, const Tensor<T>& taps, bool causal,
                          const SeqLayout& layout) {
  check_conv_input(v2, taps, layout, "plain_depthwise");
  const std::size_t rows = v2.rows();
  const std::size_t d = v2.cols();
  const std::size_t k = taps.rows();
  Tensor<T> out(Shape{rows, d});
  const T* src = v2.ptr();
  for (std::size_t b = 0; b < layout.batch; ++b) {
    for (std::size_t i = 0; i < layout.len; ++i) {
      T* o = out.ptr() + (b * layout.len + i) * d;
      for (std::size_t j = 0; j < k; ++j) {
        const long pr = tap_row(layout, b, i, j, k, causal);
        if (pr < 0) continue;
        const T* x = src + static_cast<std::size_t>(pr) * d;
        const T* wj = taps.ptr() + j * d;
        for (std::size_t c = 0; c < d; ++c) o[c] += wj[c] * x[c];
      }
    }
  }
  if (tracks(tape, {&v2, &taps})) {
    tape->record(out, [out, v2, taps, layout, causal, d, k](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto dv = g.sink(v2);
      auto dt = g.sink(taps);
      for (std::size_t b = 0; b < layout.batch; ++b) {
        for (std::size_t i = 0; i < layout.len; ++i) {
          const T* gr = go.data() + (b * layout.len + i) * d;
          for (std::size_t j = 0; j < k; ++j) {
            const long pr = tap_row(layout, b, i, j, k, causal);
            if (pr < 0) continue;
            const std::size_t off = static_cast<std::size_t>(pr) * d;
            if (!dt.empty()) {
              const T* x = v2.ptr() + off;
              for (std::size_t c = 0; c < d; ++c) dt[j * d + c] += gr[c] * x[c];
            }
            if (!dv.empty()) {
              const T* wj = taps.ptr() + j * d;
              for (std::size_t c = 0; c < d; ++c) dv[off + c] += wj[c] * gr[c];
            }
          }
        }
      }
    });
    out.set_requires_grad(true);
  }
  return out;
}

template <typename T>
Tensor<T> conv_cell(Tape<T>* tape, const Tensor<T>& v2, const ConvCellParams<T>& cell,
                    ConvKind kind, bool causal, const SeqLayout& layout) {
  if (cell.weights.rank() != 2 || cell.weights.rows() != cell.kernel) {
    throw ConfigError("conv cell: weights " + shape_str(cell.weights.shape()) +
                      " do not match kernel size " + std::to_string(cell.kernel));
  }
  Tensor<T> o = kind == ConvKind::dynamic_depthwise
                    ? dynamic_depthwise(tape, v2, cell.weights, causal, layout)
                    : plain_depthwise(tape, v2, cell.weights, causal, layout);
  return matmul(tape, o, cell.wout);
}

template <typename T>
Tensor<T> dynamic_conv_cell(Tape<T>* tape, const Tensor<T>& v2, const ConvCellParams<T>& cell,
                            bool causal) {
  return conv_cell(tape, v2, cell, ConvKind::dynamic_depthwise, causal,
                   SeqLayout::single(v2.rank() == 2 ? v2.rows() : 0));
}

template <typename T>
Tensor<T> gated_conv_branch(Tape<T>* tape, const Tensor<T>& v2,
                            const std::vector<ConvCellParams<T>>& cells, const GateParams<T>& g,
                            ConvKind kind, bool causal, const SeqLayout& layout) {
  if (cells.empty() || g.alpha.size() != cells.size()) {
    throw ConfigError("gated conv: " + std::to_string(cells.size()) + " cells but " +
                      std::to_string(g.alpha.size()) + " gate scalars");
  }
  Tensor<T> gate = softmax(tape, g.alpha, 0);
  std::vector<Tensor<T>> terms;
  terms.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    terms.push_back(scale_by(tape, conv_cell(tape, v2, cells[i], kind, causal, layout), gate, i));
  }
  return terms.size() == 1 ? terms.front() : add_all(tape, terms);
}

#define MUSE_INSTANTIATE_CONV(T)                                                                 \
  template Tensor<T> dynamic_depthwise(Tape<T>*, const Tensor<T>&, const Tensor<T>&, bool,      \
                                       const SeqLayout&);                                      \
  template Tensor<T> plain_depthwise(Tape<T>*, const Tensor<T>&, const Tensor<T>&, bool,        \
                                     const SeqLayout&);                                        \
  template Tensor<T> conv_cell(Tape<T>*, const Tensor<T>&, const ConvCellParams<T>&, ConvKind,  \
                               bool, const SeqLayout&);                                        \
  template Tensor<T> dynamic_conv_cell(Tape<T>*, const Tensor<T>&, const ConvCellParams<T>&,    \
                                       bool);                                                  \
  template Tensor<T> gated_conv_branch(Tape<T>*, const Tensor<T>&,                              \
                                       const std::vector<ConvCellParams<T>>&,                  \
                                       const GateParams<T>&, ConvKind, bool, const SeqLayout&);

MUSE_INSTANTIATE_CONV(float)
MUSE_INSTANTIATE_CONV(double)

}  // namespace muse
