// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "muse/tensor.hpp"

namespace muse {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;  // index into the params list
  std::size_t worst_index = 0;  // flat coordinate inside that parameter
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

// Compares tape gradients with central differences over every coordinate of
// `params`. loss_fn must be deterministic and build its graph on the tape it
// is given (or evaluate without recording when handed nullptr). The error per
// coordinate is |analytic - fd| / max(|analytic|, |fd|, 1e-8).
template <typename T>
GradCheckResult finite_diff_check(const std::function<Tensor<T>(Tape<T>*)>& loss_fn,
                                  const std::vector<Tensor<T>>& params, T eps);

}  // namespace muse
