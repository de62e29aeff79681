// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "muse/block.hpp"
#include "muse/model.hpp"

namespace muse {

// Per-block concatenated projections. Input side: w_enc = [W_Q | W_K | W_V |
// W_1] with bias [0 | 0 | 0 | b_1], so one product yields every branch input.
// Output side: w_dec stacks W_O, W_2 and each conv cell's W_out by rows, so
// [attn | relu(h) | g_1 o_1 | ...] * w_dec sums all branch outputs at once.
template <typename T>
struct FusedBlock {
  Tensor<T> w_enc, b_enc;
  std::size_t q_off = 0, k_off = 0, v_off = 0, h_off = 0;
  std::size_t d = 0, d_ff = 0;

  Tensor<T> w_dec, b_dec;
  std::size_t attn_row = 0, ffn_row = 0;
  std::vector<std::size_t> conv_rows;

  // Checks that offsets and shapes agree; throws IntegrityError otherwise.
  void verify() const;
  // Copies of the original matrices recovered from the recorded offsets.
  Tensor<T> enc_block(std::size_t offset, std::size_t width) const;
  Tensor<T> dec_block(std::size_t row, std::size_t height) const;
};

template <typename T>
struct FusedModel {
  std::vector<FusedBlock<T>> encoder;
  std::vector<FusedBlock<T>> decoder;
};

// Requires shared projection; ConfigError otherwise.
template <typename T>
FusedBlock<T> fuse_block(const BlockParams<T>& params, const BlockConfig& cfg);

template <typename T>
FusedModel<T> fuse_parameters(const Seq2Seq<T>& model);

// Inference-only block evaluation through the fused matrices. The layer norm,
// conv kernels and gate still come from `rest`.
template <typename T>
Tensor<T> fused_block_forward(const Tensor<T>& x, const FusedBlock<T>& fused,
                              const BlockParams<T>& rest, const BlockConfig& cfg,
                              const SeqLayout& layout, const AttentionMask& mask);

template <typename T>
EncoderState<T> encode_fused(const Seq2Seq<T>& model, const FusedModel<T>& fused,
                             const std::vector<int>& src_ids);

}  // namespace muse
