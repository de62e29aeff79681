// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "muse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace muse {

namespace {

template <typename T>
T finite_loss(const std::function<Tensor<T>(Tape<T>*)>& loss_fn) {
  const T v = loss_fn(nullptr).item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: loss is not finite");
  return v;
}

}  // namespace

template <typename T>
GradCheckResult finite_diff_check(const std::function<Tensor<T>(Tape<T>*)>& loss_fn,
                                  const std::vector<Tensor<T>>& params, T eps) {
  if (!(eps > T(0))) throw ConfigError("finite_diff_check: eps must be positive");
  std::vector<Tensor<T>> ps = params;
  std::vector<bool> had_grad;
  for (auto& p : ps) {
    had_grad.push_back(p.requires_grad());
    p.set_requires_grad(true);
  }

  GradMap<T> grads;
  {
    Tape<T> tape;
    Tensor<T> loss = loss_fn(&tape);
    if (!std::isfinite(static_cast<double>(loss.item()))) {
      throw NumericError("finite_diff_check: loss is not finite");
    }
    if (loss.requires_grad()) grads = tape.backward(loss);
  }

  GradCheckResult res;
  for (std::size_t pi = 0; pi < ps.size(); ++pi) {
    Tensor<T> analytic = grads(ps[pi]);
    auto data = ps[pi].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T saved = data[i];
      data[i] = saved + eps;
      const T up = finite_loss(loss_fn);
      data[i] = saved - eps;
      const T down = finite_loss(loss_fn);
      data[i] = saved;
      const double fd = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * eps);
      const double an = static_cast<double>(analytic[i]);
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-8});
      const double err = std::abs(an - fd) / denom;
      ++res.coordinates;
      if (err > res.max_rel_error) {
        res = GradCheckResult{err, pi, i, an, fd, res.coordinates};
      }
    }
  }
  for (std::size_t pi = 0; pi < ps.size(); ++pi) ps[pi].set_requires_grad(had_grad[pi]);
  return res;
}

template GradCheckResult finite_diff_check(const std::function<Tensor<float>(Tape<float>*)>&,
                                           const std::vector<Tensor<float>>&, float);
template GradCheckResult finite_diff_check(const std::function<Tensor<double>(Tape<double>*)>&,
                                           const std::vector<Tensor<double>>&, double);

}  // namespace muse
