// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include "muse/block.hpp"
#include "muse/detail/eigen.hpp"
#include "muse/ops.hpp"

namespace muse {

using detail::view;

bool AttentionMask::permits(std::size_t b, std::size_t i, std::size_t j, std::size_t n_k) const {
  if (!key_lengths.empty() && j >= key_lengths[b]) return false;
  if (causal && j > query_offset + i) return false;
  if (allowed && !(*allowed)[i * n_k + j]) return false;
  return true;
}

template <typename T>
Tensor<T> scaled_dot_attention(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v, std::size_t heads, std::size_t batch,
                               const AttentionMask& mask, DropoutCtx drop) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() ||
      k.shape() != v.shape()) {
    throw ShapeError("attention: incompatible Q " + shape_str(q.shape()) + ", K " +
                     shape_str(k.shape()) + ", V " + shape_str(v.shape()));
  }
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (batch == 0 || q.rows() % batch != 0 || k.rows() % batch != 0) {
    throw ShapeError("attention: rows do not split into " + std::to_string(batch) + " sequences");
  }
  const std::size_t nq = q.rows() / batch;
  const std::size_t nk = k.rows() / batch;
  if (!mask.key_lengths.empty() && mask.key_lengths.size() != batch) {
    throw ShapeError("attention: key_lengths has wrong batch size");
  }
  if (mask.allowed && mask.allowed->size() != nq * nk) {
    throw ShapeError("attention: explicit mask must be [" + std::to_string(nq) + "," +
                     std::to_string(nk) + "]");
  }
  const std::size_t dk = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  const auto D = static_cast<Eigen::Index>(d);
  const auto NQ = static_cast<Eigen::Index>(nq);
  const auto NK = static_cast<Eigen::Index>(nk);
  const auto DK = static_cast<Eigen::Index>(dk);

  // Masks are shared by all heads of a sequence.
  std::vector<std::uint8_t> permitted(batch * nq * nk);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < nq; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < nk; ++j) {
        const bool ok = mask.permits(b, i, j, nk);
        permitted[(b * nq + i) * nk + j] = ok;
        any = any || ok;
      }
      if (!any) {
        throw UsageError("attention: query " + std::to_string(i) + " of sequence " +
                         std::to_string(b) + " has every key masked");
      }
    }
  }

  const bool dropping = drop.active();
  const T keep_scale = dropping ? T(1) / (T(1) - static_cast<T>(drop.rate)) : T(1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Tensor<T> out(Shape{q.rows(), d});
  // probs holds softmax weights; dropped holds them after dropout.
  AlignedVector<T> probs(batch * heads * nq * nk);
  AlignedVector<T> dropped;
  if (dropping) dropped.resize(probs.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t slot = (b * heads + h) * nq * nk;
      auto qb = view(q.ptr() + b * nq * d + h * dk, NQ, DK, D);
      auto kb = view(k.ptr() + b * nk * d + h * dk, NK, DK, D);
      auto vb = view(v.ptr() + b * nk * d + h * dk, NK, DK, D);
      auto p = view(probs.data() + slot, NQ, NK);
      p.noalias() = (qb * kb.transpose()) * scale;
      for (std::size_t i = 0; i < nq; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        const std::uint8_t* ok = permitted.data() + (b * nq + i) * nk;
        for (std::size_t j = 0; j < nk; ++j) {
          if (ok[j]) mx = std::max(mx, p(i, j));
        }
        T total = 0;
        for (std::size_t j = 0; j < nk; ++j) {
          const T e = ok[j] ? std::exp(p(i, j) - mx) : T(0);
          p(i, j) = e;
          total += e;
        }
        for (std::size_t j = 0; j < nk; ++j) p(i, j) /= total;
      }
      auto ob = view(out.ptr() + b * nq * d + h * dk, NQ, DK, D);
      if (dropping) {
        auto pd = view(dropped.data() + slot, NQ, NK);
        for (Eigen::Index i = 0; i < NQ; ++i) {
          for (Eigen::Index j = 0; j < NK; ++j) {
            pd(i, j) = unif(*drop.rng) < drop.rate ? T(0) : p(i, j) * keep_scale;
          }
        }
        ob.noalias() = pd * vb;
      } else {
        ob.noalias() = p * vb;
      }
    }
  }
  if (tracks(tape, {&q, &k, &v})) {
    tape->record(out, [out, q, k, v, probs = std::move(probs), dropped = std::move(dropped),
                       batch, heads, nq, nk, d, dk, scale, keep_scale, dropping](GradMap<T>& g) {
      auto go = g.find(out);
      if (go.empty()) return;
      auto dq = g.sink(q);
      auto dkk = g.sink(k);
      auto dv = g.sink(v);
      const auto D = static_cast<Eigen::Index>(d);
      const auto NQ = static_cast<Eigen::Index>(nq);
      const auto NK = static_cast<Eigen::Index>(nk);
      const auto DK = static_cast<Eigen::Index>(dk);
      detail::RowMat<T> dp(NQ, NK);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t slot = (b * heads + h) * nq * nk;
          const std::size_t qoff = b * nq * d + h * dk;
          const std::size_t koff = b * nk * d + h * dk;
          auto qb = view(q.ptr() + qoff, NQ, DK, D);
          auto kb = view(k.ptr() + koff, NK, DK, D);
          auto vb = view(v.ptr() + koff, NK, DK, D);
          auto gob = view(go.data() + qoff, NQ, DK, D);
          auto p = view(probs.data() + slot, NQ, NK);
          if (!dv.empty()) {
            auto dvb = view(dv.data() + koff, NK, DK, D);
            if (dropping) {
              dvb.noalias() += view(dropped.data() + slot, NQ, NK).transpose() * gob;
            } else {
              dvb.noalias() += p.transpose() * gob;
            }
          }
          if (dq.empty() && dkk.empty()) continue;
          dp.noalias() = gob * vb.transpose();
          if (dropping) {
            auto pd = view(dropped.data() + slot, NQ, NK);
            for (Eigen::Index i = 0; i < NQ; ++i) {
              for (Eigen::Index j = 0; j < NK; ++j) {
                if (pd(i, j) == T(0)) dp(i, j) = T(0);
                else dp(i, j) *= keep_scale;
              }
            }
          }
          // dS = P * (dP - rowsum(dP * P)), folded with the 1/sqrt(d_k) scale.
          for (Eigen::Index i = 0; i < NQ; ++i) {
            T dot = 0;
            for (Eigen::Index j = 0; j < NK; ++j) dot += dp(i, j) * p(i, j);
            for (Eigen::Index j = 0; j < NK; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
          }
          if (!dq.empty()) view(dq.data() + qoff, NQ, DK, D).noalias() += dp * kb;
          if (!dkk.empty()) view(dkk.data() + koff, NK, DK, D).noalias() += dp.transpose() * qb;
        }
      }
    });
    out.set_requires_grad(true);
  }
  return out;
}

template <typename T>
Tensor<T> scaled_dot_attention(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v,
                               const std::optional<std::vector<std::uint8_t>>& mask,
                               std::size_t heads) {
  AttentionMask m;
  m.allowed = mask;
  return scaled_dot_attention(tape, q, k, v, heads, 1, m);
}

template <typename T>
Tensor<T> attention_branch(Tape<T>* tape, const Tensor<T>& x, const AttentionParams<T>& p,
                           const SharedProjection<T>& sp, const SeqLayout& layout,
                           const AttentionMask& mask, DropoutCtx drop) {
  Tensor<T> q = matmul(tape, x, p.wq);
  Tensor<T> k = matmul(tape, x, p.wk);
  Tensor<T> v = matmul(tape, x, sp.wv);
  Tensor<T> a = scaled_dot_attention(tape, q, k, v, p.heads, layout.batch, mask, drop);
  return matmul(tape, a, p.wo);
}

#define MUSE_INSTANTIATE_ATTN(T)                                                               \
  template Tensor<T> scaled_dot_attention(Tape<T>*, const Tensor<T>&, const Tensor<T>&,      \
                                          const Tensor<T>&, std::size_t, std::size_t,        \
                                          const AttentionMask&, DropoutCtx);                 \
  template Tensor<T> scaled_dot_attention(Tape<T>*, const Tensor<T>&, const Tensor<T>&,      \
                                          const Tensor<T>&,                                  \
                                          const std::optional<std::vector<std::uint8_t>>&,   \
                                          std::size_t);                                      \
  template Tensor<T> attention_branch(Tape<T>*, const Tensor<T>&, const AttentionParams<T>&, \
                                      const SharedProjection<T>&, const SeqLayout&,          \
                                      const AttentionMask&, DropoutCtx);

MUSE_INSTANTIATE_ATTN(float)
MUSE_INSTANTIATE_ATTN(double)

}  // namespace muse
