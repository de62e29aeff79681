// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "muse/block.hpp"
#include "muse/ops.hpp"

namespace muse {

std::string to_string(BlockMode m) { return m == BlockMode::muse ? "muse" : "muse_simple"; }
std::string to_string(Projection p) { return p == Projection::shared ? "shared" : "separate"; }
std::string to_string(ConvKind k) {
  return k == ConvKind::dynamic_depthwise ? "dynamic_depthwise" : "plain";
}

void BlockConfig::validate() const {
  if (d == 0 || d_ff == 0) throw ConfigError("d and d_ff must be positive");
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("heads (" + std::to_string(heads) + ") must divide d (" + std::to_string(d) +
                      ")");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
  if (mode == BlockMode::muse) {
    if (kernel_sizes.empty()) throw ConfigError("kernel_sizes must be non-empty for mode=muse");
    for (std::size_t k : kernel_sizes) {
      if (k == 0 || k % 2 == 0) {
        throw ConfigError("kernel size " + std::to_string(k) + " must be odd and positive");
      }
    }
  }
}

template <typename T>
Tensor<T> xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<T> t(Shape{fan_in, fan_out});
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
BlockParams<T> init_block_params(const BlockConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.d;
  BlockParams<T> p;
  p.ln_gain = Tensor<T>::full(Shape{d}, T(1));
  p.ln_bias = Tensor<T>(Shape{d});
  p.attn.heads = cfg.heads;
  p.attn.wq = xavier<T>(d, d, rng);
  p.attn.wk = xavier<T>(d, d, rng);
  p.proj.wv = xavier<T>(d, d, rng);
  p.attn.wo = xavier<T>(d, d, rng);
  if (cfg.has_conv()) {
    if (cfg.projection == Projection::separate) p.proj.wv2 = xavier<T>(d, d, rng);
    for (std::size_t k : cfg.kernel_sizes) {
      ConvCellParams<T> c;
      c.kernel = k;
      c.weights = xavier<T>(k, d, rng);
      c.wout = xavier<T>(d, d, rng);
      p.cells.push_back(std::move(c));
    }
    p.gate.alpha = Tensor<T>(Shape{cfg.kernel_sizes.size()});
  } else {
    p.gate.alpha = Tensor<T>(Shape{0});
  }
  p.ffn.w1 = xavier<T>(d, cfg.d_ff, rng);
  p.ffn.b1 = Tensor<T>(Shape{cfg.d_ff});
  p.ffn.w2 = xavier<T>(cfg.d_ff, d, rng);
  p.ffn.b2 = Tensor<T>(Shape{d});
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> BlockParams<T>::named(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor<T>>> out{
      {prefix + "ln.gain", ln_gain}, {prefix + "ln.bias", ln_bias},
      {prefix + "attn.wq", attn.wq}, {prefix + "attn.wk", attn.wk},
      {prefix + "attn.wo", attn.wo}, {prefix + "proj.wv", proj.wv},
  };
  if (proj.wv2) out.emplace_back(prefix + "proj.wv2", *proj.wv2);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string cp = prefix + "conv." + std::to_string(i) + ".";
    out.emplace_back(cp + "weights", cells[i].weights);
    out.emplace_back(cp + "wout", cells[i].wout);
  }
  if (!cells.empty()) out.emplace_back(prefix + "gate.alpha", gate.alpha);
  out.emplace_back(prefix + "ffn.w1", ffn.w1);
  out.emplace_back(prefix + "ffn.b1", ffn.b1);
  out.emplace_back(prefix + "ffn.w2", ffn.w2);
  out.emplace_back(prefix + "ffn.b2", ffn.b2);
  return out;
}

template <typename T>
std::size_t BlockParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named("")) n += t.size();
  return n;
}

template <typename T>
Tensor<T> pointwise_branch(Tape<T>* tape, const Tensor<T>& x, const FfnParams<T>& p) {
  Tensor<T> h = relu(tape, linear(tape, x, p.w1, &p.b1));
  return linear(tape, h, p.w2, &p.b2);
}

template <typename T>
Tensor<T> muse_block_forward(Tape<T>* tape, const Tensor<T>& x, const BlockParams<T>& params,
                             const BlockConfig& cfg, const SeqLayout& layout,
                             const AttentionMask& mask, DropoutCtx drop) {
  if (x.rank() != 2 || x.cols() != cfg.d || x.rows() != layout.rows()) {
    throw ShapeError("muse block: input " + shape_str(x.shape()) + " does not match d=" +
                     std::to_string(cfg.d) + " and " + std::to_string(layout.rows()) + " rows");
  }
  const T rate = drop.active() ? static_cast<T>(drop.rate) : T(0);
  std::mt19937_64 unused;
  std::mt19937_64& rng = drop.rng ? *drop.rng : unused;

  Tensor<T> xh = layer_norm(tape, x, params.ln_gain, params.ln_bias, static_cast<T>(cfg.ln_eps));
  Tensor<T> q = matmul(tape, xh, params.attn.wq);
  Tensor<T> k = matmul(tape, xh, params.attn.wk);
  Tensor<T> v = matmul(tape, xh, params.proj.wv);
  Tensor<T> att = matmul(
      tape, scaled_dot_attention(tape, q, k, v, params.attn.heads, layout.batch, mask, drop),
      params.attn.wo);

  std::vector<Tensor<T>> terms{x, dropout(tape, att, rate, rng)};
  if (cfg.has_conv()) {
    Tensor<T> v2 = cfg.projection == Projection::shared ? v : matmul(tape, xh, *params.proj.wv2);
    Tensor<T> conv = gated_conv_branch(tape, v2, params.cells, params.gate, cfg.conv_kind,
                                       cfg.causal, layout);
    terms.push_back(dropout(tape, conv, rate, rng));
  }
  terms.push_back(dropout(tape, pointwise_branch(tape, xh, params.ffn), rate, rng));
  return add_all(tape, terms);
}

#define MUSE_INSTANTIATE_BLOCK(T)                                                                 \
  template Tensor<T> xavier<T>(std::size_t, std::size_t, std::mt19937_64&);                      \
  template BlockParams<T> init_block_params<T>(const BlockConfig&, std::mt19937_64&);            \
  template struct BlockParams<T>;                                                                \
  template Tensor<T> pointwise_branch(Tape<T>*, const Tensor<T>&, const FfnParams<T>&);          \
  template Tensor<T> muse_block_forward(Tape<T>*, const Tensor<T>&, const BlockParams<T>&,       \
                                        const BlockConfig&, const SeqLayout&,                    \
                                        const AttentionMask&, DropoutCtx);

MUSE_INSTANTIATE_BLOCK(float)
MUSE_INSTANTIATE_BLOCK(double)

}  // namespace muse
