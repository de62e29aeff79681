// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "muse/tensor.hpp"

namespace muse {

enum class BlockMode { muse, muse_simple };
enum class Projection { shared, separate };
enum class ConvKind { dynamic_depthwise, plain };

std::string to_string(BlockMode m);
std::string to_string(Projection p);
std::string to_string(ConvKind k);

struct BlockConfig {
  BlockMode mode = BlockMode::muse;
  Projection projection = Projection::shared;
  ConvKind conv_kind = ConvKind::dynamic_depthwise;
  std::vector<std::size_t> kernel_sizes{3, 15};
  bool causal = false;
  std::size_t d = 64;
  std::size_t d_ff = 256;
  std::size_t heads = 4;
  double dropout = 0.0;
  double ln_eps = 1e-5;

  bool has_conv() const { return mode == BlockMode::muse; }
  // Throws ConfigError describing the first violated constraint.
  void validate() const;
};

// Rows of a batched activation are laid out sequence-major: row b * len + i is
// position i of sequence b. `lengths` holds the unpadded length of each
// sequence; positions at or beyond it are padding.
struct SeqLayout {
  std::size_t batch = 1;
  std::size_t len = 0;
  std::vector<std::size_t> lengths;

  static SeqLayout single(std::size_t n) { return SeqLayout{1, n, {n}}; }
  std::size_t rows() const { return batch * len; }
  std::size_t valid(std::size_t b) const { return lengths.empty() ? len : lengths[b]; }
};

// Which keys a query may attend to. Keys at or beyond key_lengths[b] are
// padding. With `causal`, query i (absolute position query_offset + i) only
// sees keys j <= query_offset + i. `allowed`, when present, is an explicit
// row-major [n_q, n_k] boolean matrix applied to every sequence in the batch.
struct AttentionMask {
  bool causal = false;
  std::size_t query_offset = 0;
  std::vector<std::size_t> key_lengths;
  std::optional<std::vector<std::uint8_t>> allowed;

  bool permits(std::size_t b, std::size_t i, std::size_t j, std::size_t n_k) const;
};

// Optional dropout source; inactive when rng is null or rate is zero.
struct DropoutCtx {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
  bool active() const { return rng != nullptr && rate > 0.0; }
};

template <typename T>
struct AttentionParams {
  Tensor<T> wq, wk, wo;  // d x d
  std::size_t heads = 1;
};

template <typename T>
struct SharedProjection {
  Tensor<T> wv;                  // d x d, feeds attention values (and conv when shared)
  std::optional<Tensor<T>> wv2;  // present only for the separate-projection ablation
};

template <typename T>
struct ConvCellParams {
  std::size_t kernel = 1;
  // [kernel, d]. Dynamic cells: row j projects a position to the logit of tap
  // j. Plain cells: raw per-channel tap weights.
  Tensor<T> weights;
  Tensor<T> wout;  // d x d
};

template <typename T>
struct GateParams {
  Tensor<T> alpha;  // one scalar per conv cell
};

template <typename T>
struct FfnParams {
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct BlockParams {
  Tensor<T> ln_gain, ln_bias;
  AttentionParams<T> attn;
  SharedProjection<T> proj;
  std::vector<ConvCellParams<T>> cells;
  GateParams<T> gate;
  FfnParams<T> ffn;

  std::vector<std::pair<std::string, Tensor<T>>> named(const std::string& prefix) const;
  std::size_t parameter_count() const;
};

template <typename T>
BlockParams<T> init_block_params(const BlockConfig& cfg, std::mt19937_64& rng);

// Xavier-uniform fill of a [fan_in, fan_out] matrix.
template <typename T>
Tensor<T> xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

// Multi-head softmax(Q K^T / sqrt(d_k)) V over batched rows. Q has
// batch * n_q rows, K and V have batch * n_k rows.
template <typename T>
Tensor<T> scaled_dot_attention(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v, std::size_t heads, std::size_t batch,
                               const AttentionMask& mask, DropoutCtx drop = {});

// Single-sequence form with an optional explicit [n_q, n_k] mask.
template <typename T>
Tensor<T> scaled_dot_attention(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v,
                               const std::optional<std::vector<std::uint8_t>>& mask,
                               std::size_t heads);

// Self-attention of x over itself using the (shared or first) value projection.
template <typename T>
Tensor<T> attention_branch(Tape<T>* tape, const Tensor<T>& x, const AttentionParams<T>& p,
                           const SharedProjection<T>& sp, const SeqLayout& layout,
                           const AttentionMask& mask, DropoutCtx drop = {});

// Depth-wise dynamic convolution over v2 before the output projection: per
// position, a softmax over taps of the logits kernel * v2[i], applied as one
// scalar per tap shared by every channel. Out-of-range taps read zeros.
template <typename T>
Tensor<T> dynamic_depthwise(Tape<T>* tape, const Tensor<T>& v2, const Tensor<T>& generator,
                            bool causal, const SeqLayout& layout);

// Depth-wise convolution with fixed learned per-channel taps.
template <typename T>
Tensor<T> plain_depthwise(Tape<T>* tape, const Tensor<T>& v2, const Tensor<T>& taps, bool causal,
                          const SeqLayout& layout);

// One convolution cell including its output projection.
template <typename T>
Tensor<T> conv_cell(Tape<T>* tape, const Tensor<T>& v2, const ConvCellParams<T>& cell,
                    ConvKind kind, bool causal, const SeqLayout& layout);

template <typename T>
Tensor<T> dynamic_conv_cell(Tape<T>* tape, const Tensor<T>& v2, const ConvCellParams<T>& cell,
                            bool causal);

// softmax(alpha)-weighted sum of the cells' outputs.
template <typename T>
Tensor<T> gated_conv_branch(Tape<T>* tape, const Tensor<T>& v2,
                            const std::vector<ConvCellParams<T>>& cells, const GateParams<T>& g,
                            ConvKind kind, bool causal, const SeqLayout& layout);

template <typename T>
Tensor<T> pointwise_branch(Tape<T>* tape, const Tensor<T>& x, const FfnParams<T>& p);

// Pre-norm parallel block: x + attention(x^) [+ conv(x^)] + pointwise(x^)
// with x^ = layer_norm(x).
template <typename T>
Tensor<T> muse_block_forward(Tape<T>* tape, const Tensor<T>& x, const BlockParams<T>& params,
                             const BlockConfig& cfg, const SeqLayout& layout,
                             const AttentionMask& mask, DropoutCtx drop = {});

// Source position read by tap j (0-based) at position i, before range checks.
inline long tap_source(std::size_t i, std::size_t j, std::size_t kernel, bool causal) {
  const long shift = causal ? static_cast<long>(kernel) - 1 : (static_cast<long>(kernel) - 1) / 2;
  return static_cast<long>(i) + static_cast<long>(j) - shift;
}

}  // namespace muse
