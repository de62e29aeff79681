// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "muse/block.hpp"
#include "muse/tensor.hpp"

namespace muse {

// Reserved token ids shared by every vocabulary.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d = 64;
  std::size_t d_ff = 256;
  std::size_t heads = 4;
  std::vector<std::size_t> kernel_sizes{3, 15};
  BlockMode mode = BlockMode::muse;
  Projection projection = Projection::shared;
  ConvKind conv_kind = ConvKind::dynamic_depthwise;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t max_len = 64;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  double ln_eps = 1e-5;
  // Output projection reuses the target embedding; source and target share one
  // table as well when the vocabulary sizes agree.
  bool tie_embeddings = true;
  bool positional_encoding = true;

  BlockConfig block(bool causal) const;
  bool shared_embedding() const { return tie_embeddings && src_vocab == tgt_vocab; }
  void validate() const;
  // Stable digest of every architecture-defining field.
  std::string fingerprint() const;
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
struct DecoderLayerParams {
  BlockParams<T> block;
  Tensor<T> ctx_ln_gain, ctx_ln_bias;
  Tensor<T> ctx_wq, ctx_wk, ctx_wv, ctx_wo;
};

template <typename T>
struct ModelParams {
  Tensor<T> src_embed;
  Tensor<T> tgt_embed;                // same storage as src_embed when shared
  std::optional<Tensor<T>> out_proj;  // [d, tgt_vocab]; absent when tied
  std::vector<BlockParams<T>> encoder;
  std::vector<DecoderLayerParams<T>> decoder;
  Tensor<T> enc_ln_gain, enc_ln_bias;
  Tensor<T> dec_ln_gain, dec_ln_bias;
};

template <typename T>
class Seq2Seq {
 public:
  Seq2Seq(ModelConfig cfg, std::uint64_t seed);
  Seq2Seq(ModelConfig cfg, ModelParams<T> params);

  const ModelConfig& config() const { return cfg_; }
  const ModelParams<T>& params() const { return params_; }
  ModelParams<T>& params() { return params_; }

  // Every distinct learned tensor, in a fixed order, each listed once.
  NamedTensors<T> named_parameters() const;
  std::size_t parameter_count() const;
  // Copies values by name; throws IntegrityError on a missing name or shape.
  void load(const NamedTensors<T>& values);

 private:
  ModelConfig cfg_;
  ModelParams<T> params_;
};

// Fixed sinusoidal table: channel 2i holds sin(p / 10000^(2i/d)) and channel
// 2i+1 the matching cosine.
template <typename T>
Tensor<T> positional_encoding(std::size_t n, std::size_t d);

// Scaled embedding rows plus positions for right-padded sequences; position
// numbering starts at first_position.
template <typename T>
Tensor<T> embed_tokens(Tape<T>* tape, const Seq2Seq<T>& model, const Tensor<T>& table,
                       const std::vector<std::vector<int>>& seqs, std::size_t len,
                       std::size_t first_position = 0);

struct Masks {
  std::size_t src_len = 0;  // padded source length
  std::size_t tgt_len = 0;  // padded target length
  // Per sequence, true exactly at padding positions.
  std::vector<std::vector<bool>> src_padding, tgt_padding;
  // [tgt_len, tgt_len], true where key index <= query index.
  std::vector<std::vector<bool>> causal;
  // Per target sequence, causal AND key-not-padding.
  std::vector<std::vector<std::vector<bool>>> combined;
};

Masks build_masks(const std::vector<std::size_t>& src_lens, const std::vector<std::size_t>& tgt_lens);

template <typename T>
struct EncoderState {
  Tensor<T> z;                    // [n, d]
  std::vector<bool> src_padding;  // true at pad positions
};

// Encoder output for a padded batch of sources.
template <typename T>
struct EncodedBatch {
  Tensor<T> z;
  SeqLayout layout;
};

struct Batch {
  std::vector<std::vector<int>> src;
  std::vector<std::vector<int>> tgt;  // each BOS ... EOS
};

template <typename T>
EncodedBatch<T> encode_batch(Tape<T>* tape, const Seq2Seq<T>& model,
                             const std::vector<std::vector<int>>& src, DropoutCtx drop = {});

// Single source, optionally right-padded with PAD up to pad_to positions.
template <typename T>
EncoderState<T> encode(const Seq2Seq<T>& model, const std::vector<int>& src_ids,
                       std::size_t pad_to = 0);

// Teacher-forced decoder logits [batch * m, tgt_vocab] for decoder inputs.
template <typename T>
Tensor<T> decoder_logits(Tape<T>* tape, const Seq2Seq<T>& model, const EncodedBatch<T>& enc,
                         const std::vector<std::vector<int>>& tgt_in, DropoutCtx drop = {});

// Mean label-smoothed cross entropy over non-pad target tokens.
template <typename T>
Tensor<T> forward_train(Tape<T>* tape, const Seq2Seq<T>& model, const Batch& batch,
                        DropoutCtx drop = {});

// Logits [prefix.size(), tgt_vocab] for every prefix position, recomputed from
// scratch. Reference for incremental decoding.
template <typename T>
Tensor<T> full_logits(const Seq2Seq<T>& model, const EncoderState<T>& state,
                      const std::vector<int>& prefix);

template <typename T>
struct FusedModel;

template <typename T>
struct DecoderCache {
  struct Layer {
    std::vector<T> keys, values;  // self-attention history, t rows of d
    std::vector<T> conv_inputs;   // most recent conv inputs, at most max kernel rows
    Tensor<T> ctx_k, ctx_v;       // projected encoder memory
  };
  std::vector<Layer> layers;
  std::size_t t = 0;  // tokens consumed so far
  const void* state_id = nullptr;
};

template <typename T>
DecoderCache<T> start_decoding(const Seq2Seq<T>& model, const EncoderState<T>& state);

// Consumes next_id as decoder input position cache.t and returns the logits
// for the following token. When `fused` is given, the block projections run
// through its concatenated matrices.
template <typename T>
std::vector<T> decode_step(const Seq2Seq<T>& model, const EncoderState<T>& state, int next_id,
                           DecoderCache<T>& cache, const FusedModel<T>* fused = nullptr);

}  // namespace muse
