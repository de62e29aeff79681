// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include "muse/train.hpp"

namespace muse {

template <typename T>
void adam_step(const NamedTensors<T>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, double lr, const AdamConfig& cfg) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  if (!(lr >= 0.0)) throw UsageError("adam_step: learning rate must be non-negative");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].second.size()) {
      throw ShapeError("adam_step: gradient for '" + params[i].first + "' has " +
                       std::to_string(grads[i].size()) + " values, expected " +
                       std::to_string(params[i].second.size()));
    }
    for (T g : grads[i].data()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient for parameter '" + params[i].first + "'");
      }
    }
  }
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(p.size(), T(0));
      state.v.emplace_back(p.size(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state size mismatch");

  ++state.t;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i].second;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = (mj / c1) / (std::sqrt(vj / c2) + cfg.eps) +
                            cfg.weight_decay * static_cast<double>(p[j]);
      p[j] = static_cast<T>(static_cast<double>(p[j]) - lr * update);
    }
  }
}

template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (T x : g.data()) sq += static_cast<double>(x) * static_cast<double>(x);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& g : grads) {
      for (T& x : g.data()) x *= factor;
    }
  }
  return norm;
}

void ScheduleConfig::validate() const {
  if (warmup < 1) throw ConfigError("warmup must be at least 1");
  if (!(max_lr > min_lr) || min_lr < 0.0) throw ConfigError("need max_lr > min_lr >= 0");
  if (kind == ScheduleKind::cosine && total <= warmup) {
    throw ConfigError("cosine schedule needs total steps greater than warmup");
  }
}

double lr_inverse_sqrt(std::size_t step, const ScheduleConfig& cfg) {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(cfg.warmup);
  return cfg.max_lr * std::min(s / w, std::sqrt(w / s));
}

double lr_cosine(std::size_t step, const ScheduleConfig& cfg) {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(cfg.warmup);
  if (s <= w) return cfg.max_lr * s / w;
  if (step >= cfg.total) return cfg.min_lr;
  const double progress = (s - w) / (static_cast<double>(cfg.total) - w);
  return cfg.min_lr + (cfg.max_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

double learning_rate(std::size_t step, const ScheduleConfig& cfg) {
  return cfg.kind == ScheduleKind::cosine ? lr_cosine(step, cfg) : lr_inverse_sqrt(step, cfg);
}

template <typename T>
GradientAccumulator<T>::GradientAccumulator(std::size_t every_u) : every_u_(every_u) {
  if (every_u_ < 1) throw ConfigError("update_every must be at least 1");
}

template <typename T>
void GradientAccumulator<T>::add(const std::vector<Tensor<T>>& grads) {
  if (ready()) throw UsageError("gradient accumulator is full; take the mean first");
  if (count_ == 0) {
    sum_.clear();
    for (const auto& g : grads) sum_.push_back(g.clone());
  } else {
    if (grads.size() != sum_.size()) throw ShapeError("gradient accumulator: list size changed");
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (grads[i].size() != sum_[i].size()) throw ShapeError("gradient accumulator: shape changed");
      auto dst = sum_[i].data();
      auto src = grads[i].data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
  ++count_;
}

template <typename T>
std::vector<Tensor<T>> GradientAccumulator<T>::take_mean() {
  if (count_ == 0) throw UsageError("gradient accumulator is empty");
  const T inv = T(1) / static_cast<T>(count_);
  for (auto& g : sum_) {
    for (T& x : g.data()) x *= inv;
  }
  count_ = 0;
  return std::move(sum_);
}

template <typename T>
bool accumulate_and_step(GradientAccumulator<T>& acc, const std::vector<Tensor<T>>& grads,
                         const NamedTensors<T>& params, AdamState<T>& state, double lr,
                         const AdamConfig& cfg, double clip_norm) {
  acc.add(grads);
  if (!acc.ready()) return false;
  std::vector<Tensor<T>> mean = acc.take_mean();
  clip_grad_norm(mean, clip_norm);
  adam_step(params, mean, state, lr, cfg);
  return true;
}

#define MUSE_INSTANTIATE_OPTIM(T)                                                            \
  template void adam_step(const NamedTensors<T>&, const std::vector<Tensor<T>>&,             \
                          AdamState<T>&, double, const AdamConfig&);                         \
  template double clip_grad_norm(std::vector<Tensor<T>>&, double);                           \
  template class GradientAccumulator<T>;                                                     \
  template bool accumulate_and_step(GradientAccumulator<T>&, const std::vector<Tensor<T>>&,  \
                                    const NamedTensors<T>&, AdamState<T>&, double,           \
                                    const AdamConfig&, double);

MUSE_INSTANTIATE_OPTIM(float)
MUSE_INSTANTIATE_OPTIM(double)

}  // namespace muse
