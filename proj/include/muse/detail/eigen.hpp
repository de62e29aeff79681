// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

namespace muse::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row-major view over a (possibly column-sliced) block of a larger matrix.
template <typename T>
using MatView = Eigen::Map<RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using ConstMatView = Eigen::Map<const RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

template <typename T>
MatView<T> view(T* p, Eigen::Index rows, Eigen::Index cols, Eigen::Index stride) {
  return MatView<T>(p, rows, cols, Eigen::OuterStride<>(stride));
}

template <typename T>
ConstMatView<T> view(const T* p, Eigen::Index rows, Eigen::Index cols, Eigen::Index stride) {
  return ConstMatView<T>(p, rows, cols, Eigen::OuterStride<>(stride));
}

template <typename T>
MatView<T> view(T* p, Eigen::Index rows, Eigen::Index cols) {
  return view(p, rows, cols, cols);
}

template <typename T>
ConstMatView<T> view(const T* p, Eigen::Index rows, Eigen::Index cols) {
  return view(p, rows, cols, cols);
}

}  // namespace muse::detail
