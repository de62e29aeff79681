// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "muse/tensor.hpp"

namespace muse {

// Differentiable primitives. Every op takes the tape first; pass nullptr for
// pure evaluation. Matrices are rank-2 and row-major.

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

// x[m,k] * w[k,n] (+ bias[n] broadcast over rows when bias is non-null).
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias);

// a[m,k] * b[n,k]^T.
template <typename T>
Tensor<T> matmul_nt(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

// Left-to-right sum of same-shaped tensors.
template <typename T>
Tensor<T> add_all(Tape<T>* tape, const std::vector<Tensor<T>>& terms);

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T factor);

// x * weights[index], differentiable in both x and the selected weight.
template <typename T>
Tensor<T> scale_by(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weights,
                   std::size_t index);

// Elementwise max(0, x); the subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x);

// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(Tape<T>* tape, const Tensor<T>& x, std::size_t axis);

// Row-wise normalisation of x[n,d] with learned gain[d] and bias[d].
template <typename T>
Tensor<T> layer_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps);

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x);

// Inverted dropout; identity when rate == 0.
template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& x, T rate, std::mt19937_64& rng);

// Gathers rows of table[v,d] for each id.
template <typename T>
Tensor<T> embedding(Tape<T>* tape, const Tensor<T>& table, std::span<const int> ids);

template <typename T>
Tensor<T> slice_cols(Tape<T>* tape, const Tensor<T>& x, std::size_t offset, std::size_t width);

template <typename T>
Tensor<T> concat_cols(Tape<T>* tape, const std::vector<Tensor<T>>& parts);

// Label-smoothed cross entropy of logits[n,v] against targets, averaged over
// positions whose target differs from ignore_index. The smoothed target puts
// (1 - smoothing) on the gold id and smoothing / v on every id.
template <typename T>
Tensor<T> cross_entropy(Tape<T>* tape, const Tensor<T>& logits, std::span<const int> targets,
                        int ignore_index, T smoothing);

}  // namespace muse
