// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "muse/fused.hpp"

#include <algorithm>

#include "muse/ops.hpp"

namespace muse {

namespace {

template <typename T>
void copy_block(const Tensor<T>& src, Tensor<T>& dst, std::size_t row0, std::size_t col0) {
  const std::size_t dst_cols = dst.cols();
  for (std::size_t r = 0; r < src.rows(); ++r) {
    std::copy_n(src.ptr() + r * src.cols(), src.cols(), dst.ptr() + (row0 + r) * dst_cols + col0);
  }
}

}  // namespace

template <typename T>
void FusedBlock<T>::verify() const {
  const std::size_t width = 3 * d + d_ff;
  if (w_enc.rank() != 2 || w_enc.rows() != d || w_enc.cols() != width) {
    throw IntegrityError("fused input matrix has shape " + shape_str(w_enc.shape()));
  }
  if (b_enc.size() != width) throw IntegrityError("fused input bias has the wrong size");
  if (q_off + d > width || k_off + d > width || v_off + d > width || h_off + d_ff > width) {
    throw IntegrityError("fused input offsets out of range");
  }
  const std::size_t height = d + d_ff + conv_rows.size() * d;
  if (w_dec.rank() != 2 || w_dec.rows() != height || w_dec.cols() != d) {
    throw IntegrityError("fused output matrix has shape " + shape_str(w_dec.shape()));
  }
  if (b_dec.size() != d) throw IntegrityError("fused output bias has the wrong size");
  if (attn_row + d > height || ffn_row + d_ff > height) {
    throw IntegrityError("fused output offsets out of range");
  }
  for (std::size_t r : conv_rows) {
    if (r + d > height) throw IntegrityError("fused conv offset out of range");
  }
}

template <typename T>
Tensor<T> FusedBlock<T>::enc_block(std::size_t offset, std::size_t width) const {
  return slice_cols<T>(nullptr, w_enc, offset, width);
}

template <typename T>
Tensor<T> FusedBlock<T>::dec_block(std::size_t row, std::size_t height) const {
  if (row + height > w_dec.rows()) throw IntegrityError("fused output rows out of range");
  return Tensor<T>(Shape{height, w_dec.cols()},
                   std::vector<T>(w_dec.ptr() + row * w_dec.cols(),
                                  w_dec.ptr() + (row + height) * w_dec.cols()));
}

template <typename T>
FusedBlock<T> fuse_block(const BlockParams<T>& params, const BlockConfig& cfg) {
  if (cfg.has_conv() && cfg.projection != Projection::shared) {
    throw ConfigError("parameter fusion requires the shared projection");
  }
  FusedBlock<T> f;
  const std::size_t d = cfg.d;
  f.d = d;
  f.d_ff = cfg.d_ff;
  f.q_off = 0;
  f.k_off = d;
  f.v_off = 2 * d;
  f.h_off = 3 * d;
  f.w_enc = Tensor<T>(Shape{d, 3 * d + cfg.d_ff});
  copy_block(params.attn.wq, f.w_enc, 0, f.q_off);
  copy_block(params.attn.wk, f.w_enc, 0, f.k_off);
  copy_block(params.proj.wv, f.w_enc, 0, f.v_off);
  copy_block(params.ffn.w1, f.w_enc, 0, f.h_off);
  f.b_enc = Tensor<T>(Shape{3 * d + cfg.d_ff});
  std::copy_n(params.ffn.b1.ptr(), cfg.d_ff, f.b_enc.ptr() + f.h_off);

  const std::size_t height = d + cfg.d_ff + params.cells.size() * d;
  f.w_dec = Tensor<T>(Shape{height, d});
  f.attn_row = 0;
  f.ffn_row = d;
  copy_block(params.attn.wo, f.w_dec, f.attn_row, 0);
  copy_block(params.ffn.w2, f.w_dec, f.ffn_row, 0);
  std::size_t row = d + cfg.d_ff;
  for (const auto& cell : params.cells) {
    f.conv_rows.push_back(row);
    copy_block(cell.wout, f.w_dec, row, 0);
    row += d;
  }
  f.b_dec = params.ffn.b2.clone();
  f.verify();
  return f;
}

template <typename T>
FusedModel<T> fuse_parameters(const Seq2Seq<T>& model) {
  const ModelConfig& cfg = model.config();
  FusedModel<T> fm;
  for (const auto& b : model.params().encoder) fm.encoder.push_back(fuse_block(b, cfg.block(false)));
  for (const auto& l : model.params().decoder) fm.decoder.push_back(fuse_block(l.block, cfg.block(true)));
  return fm;
}

template <typename T>
Tensor<T> fused_block_forward(const Tensor<T>& x, const FusedBlock<T>& fused,
                              const BlockParams<T>& rest, const BlockConfig& cfg,
                              const SeqLayout& layout, const AttentionMask& mask) {
  const std::size_t d = fused.d;
  Tensor<T> xh = layer_norm<T>(nullptr, x, rest.ln_gain, rest.ln_bias, static_cast<T>(cfg.ln_eps));
  Tensor<T> proj = linear<T>(nullptr, xh, fused.w_enc, &fused.b_enc);
  Tensor<T> q = slice_cols<T>(nullptr, proj, fused.q_off, d);
  Tensor<T> k = slice_cols<T>(nullptr, proj, fused.k_off, d);
  Tensor<T> v = slice_cols<T>(nullptr, proj, fused.v_off, d);
  std::vector<Tensor<T>> parts{
      scaled_dot_attention<T>(nullptr, q, k, v, rest.attn.heads, layout.batch, mask),
      relu<T>(nullptr, slice_cols<T>(nullptr, proj, fused.h_off, fused.d_ff))};
  if (cfg.has_conv()) {
    Tensor<T> gate = softmax<T>(nullptr, rest.gate.alpha, 0);
    for (std::size_t i = 0; i < rest.cells.size(); ++i) {
      Tensor<T> o = cfg.conv_kind == ConvKind::dynamic_depthwise
                        ? dynamic_depthwise<T>(nullptr, v, rest.cells[i].weights, cfg.causal, layout)
                        : plain_depthwise<T>(nullptr, v, rest.cells[i].weights, cfg.causal, layout);
      parts.push_back(scale_by<T>(nullptr, o, gate, i));
    }
  }
  return add<T>(nullptr, x, linear<T>(nullptr, concat_cols<T>(nullptr, parts), fused.w_dec, &fused.b_dec));
}

template <typename T>
EncoderState<T> encode_fused(const Seq2Seq<T>& model, const FusedModel<T>& fused,
                             const std::vector<int>& src_ids) {
  const ModelConfig& cfg = model.config();
  const auto& p = model.params();
  if (src_ids.empty()) throw UsageError("encode: empty source sequence");
  if (fused.encoder.size() != p.encoder.size()) {
    throw IntegrityError("fused parameters do not match the model");
  }
  for (int id : src_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.src_vocab) {
      throw DataError("source id " + std::to_string(id) + " outside vocabulary");
    }
  }
  const SeqLayout layout = SeqLayout::single(src_ids.size());
  Tensor<T> x = embed_tokens<T>(nullptr, model, p.src_embed, {src_ids}, src_ids.size());
  AttentionMask mask;
  const BlockConfig bc = cfg.block(false);
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    x = fused_block_forward(x, fused.encoder[l], p.encoder[l], bc, layout, mask);
  }
  EncoderState<T> state;
  state.z = layer_norm<T>(nullptr, x, p.enc_ln_gain, p.enc_ln_bias, static_cast<T>(cfg.ln_eps));
  state.src_padding.assign(src_ids.size(), false);
  return state;
}

#define MUSE_INSTANTIATE_FUSED(T)                                                              \
  template struct FusedBlock<T>;                                                               \
  template FusedBlock<T> fuse_block(const BlockParams<T>&, const BlockConfig&);                \
  template FusedModel<T> fuse_parameters(const Seq2Seq<T>&);                                   \
  template Tensor<T> fused_block_forward(const Tensor<T>&, const FusedBlock<T>&,               \
                                         const BlockParams<T>&, const BlockConfig&,            \
                                         const SeqLayout&, const AttentionMask&);              \
  template EncoderState<T> encode_fused(const Seq2Seq<T>&, const FusedModel<T>&,               \
                                        const std::vector<int>&);

MUSE_INSTANTIATE_FUSED(float)
MUSE_INSTANTIATE_FUSED(double)

}  // namespace muse
