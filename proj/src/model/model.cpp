// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "muse/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "muse/fused.hpp"
#include "muse/ops.hpp"

namespace muse {

BlockConfig ModelConfig::block(bool causal) const {
  BlockConfig b;
  b.mode = mode;
  b.projection = projection;
  b.conv_kind = conv_kind;
  b.kernel_sizes = kernel_sizes;
  b.causal = causal;
  b.d = d;
  b.d_ff = d_ff;
  b.heads = heads;
  b.dropout = dropout;
  b.ln_eps = ln_eps;
  return b;
}

void ModelConfig::validate() const {
  block(false).validate();
  if (src_vocab <= static_cast<std::size_t>(kUnk) || tgt_vocab <= static_cast<std::size_t>(kUnk)) {
    throw ConfigError("src_vocab and tgt_vocab must exceed the 4 reserved ids");
  }
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (positional_encoding && d % 2 != 0) {
    throw ConfigError("positional encoding needs an even d, got " + std::to_string(d));
  }
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw ConfigError("label_smoothing must lie in [0, 1)");
  }
}

std::string ModelConfig::fingerprint() const {
  std::ostringstream os;
  os << "layers=" << n_layers << ";d=" << d << ";d_ff=" << d_ff << ";heads=" << heads
     << ";kernels=";
  for (std::size_t k : kernel_sizes) os << k << ',';
  os << ";mode=" << to_string(mode) << ";projection=" << to_string(projection)
     << ";conv=" << to_string(conv_kind) << ";src_vocab=" << src_vocab
     << ";tgt_vocab=" << tgt_vocab << ";tie=" << tie_embeddings
     << ";pos=" << positional_encoding;
  // FNV-1a, 64 bit.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

template <typename T>
Tensor<T> normal_table(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(Shape{rows, cols});
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
void mark_trainable(const NamedTensors<T>& named) {
  for (auto [name, t] : named) t.set_requires_grad(true);
}

}  // namespace

template <typename T>
Seq2Seq<T>::Seq2Seq(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg_.d;
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  params_.src_embed = normal_table<T>(cfg_.src_vocab, d, emb_std, rng);
  params_.tgt_embed = cfg_.shared_embedding() ? params_.src_embed
                                              : normal_table<T>(cfg_.tgt_vocab, d, emb_std, rng);
  if (!cfg_.tie_embeddings) params_.out_proj = xavier<T>(d, cfg_.tgt_vocab, rng);

  const BlockConfig enc_cfg = cfg_.block(false);
  const BlockConfig dec_cfg = cfg_.block(true);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    params_.encoder.push_back(init_block_params<T>(enc_cfg, rng));
  }
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    DecoderLayerParams<T> layer;
    layer.block = init_block_params<T>(dec_cfg, rng);
    layer.ctx_ln_gain = Tensor<T>::full(Shape{d}, T(1));
    layer.ctx_ln_bias = Tensor<T>(Shape{d});
    layer.ctx_wq = xavier<T>(d, d, rng);
    layer.ctx_wk = xavier<T>(d, d, rng);
    layer.ctx_wv = xavier<T>(d, d, rng);
    layer.ctx_wo = xavier<T>(d, d, rng);
    params_.decoder.push_back(std::move(layer));
  }
  params_.enc_ln_gain = Tensor<T>::full(Shape{d}, T(1));
  params_.enc_ln_bias = Tensor<T>(Shape{d});
  params_.dec_ln_gain = Tensor<T>::full(Shape{d}, T(1));
  params_.dec_ln_bias = Tensor<T>(Shape{d});
  mark_trainable(named_parameters());
}

template <typename T>
Seq2Seq<T>::Seq2Seq(ModelConfig cfg, ModelParams<T> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  if (params_.encoder.size() != cfg_.n_layers || params_.decoder.size() != cfg_.n_layers) {
    throw IntegrityError("parameter layer count does not match the configuration");
  }
  mark_trainable(named_parameters());
}

template <typename T>
NamedTensors<T> Seq2Seq<T>::named_parameters() const {
  NamedTensors<T> out;
  if (cfg_.shared_embedding()) {
    out.emplace_back("embed", params_.src_embed);
  } else {
    out.emplace_back("src_embed", params_.src_embed);
    out.emplace_back("tgt_embed", params_.tgt_embed);
  }
  if (params_.out_proj) out.emplace_back("out_proj", *params_.out_proj);
  for (std::size_t l = 0; l < params_.encoder.size(); ++l) {
    auto named = params_.encoder[l].named("encoder." + std::to_string(l) + ".");
    out.insert(out.end(), named.begin(), named.end());
  }
  out.emplace_back("encoder.ln.gain", params_.enc_ln_gain);
  out.emplace_back("encoder.ln.bias", params_.enc_ln_bias);
  for (std::size_t l = 0; l < params_.decoder.size(); ++l) {
    const auto& layer = params_.decoder[l];
    const std::string p = "decoder." + std::to_string(l) + ".";
    auto named = layer.block.named(p);
    out.insert(out.end(), named.begin(), named.end());
    out.emplace_back(p + "ctx.ln.gain", layer.ctx_ln_gain);
    out.emplace_back(p + "ctx.ln.bias", layer.ctx_ln_bias);
    out.emplace_back(p + "ctx.wq", layer.ctx_wq);
    out.emplace_back(p + "ctx.wk", layer.ctx_wk);
    out.emplace_back(p + "ctx.wv", layer.ctx_wv);
    out.emplace_back(p + "ctx.wo", layer.ctx_wo);
  }
  out.emplace_back("decoder.ln.gain", params_.dec_ln_gain);
  out.emplace_back("decoder.ln.bias", params_.dec_ln_bias);
  return out;
}

template <typename T>
std::size_t Seq2Seq<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.size();
  return n;
}

template <typename T>
void Seq2Seq<T>::load(const NamedTensors<T>& values) {
  for (auto [name, dst] : named_parameters()) {
    auto it = std::find_if(values.begin(), values.end(),
                           [&](const auto& nv) { return nv.first == name; });
    if (it == values.end()) throw IntegrityError("missing parameter '" + name + "'");
    if (it->second.shape() != dst.shape()) {
      throw IntegrityError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                           ", expected " + shape_str(dst.shape()));
    }
    std::copy(it->second.data().begin(), it->second.data().end(), dst.data().begin());
  }
}

Masks build_masks(const std::vector<std::size_t>& src_lens,
                  const std::vector<std::size_t>& tgt_lens) {
  Masks m;
  m.src_len = src_lens.empty() ? 0 : *std::max_element(src_lens.begin(), src_lens.end());
  m.tgt_len = tgt_lens.empty() ? 0 : *std::max_element(tgt_lens.begin(), tgt_lens.end());
  for (std::size_t len : src_lens) {
    std::vector<bool> pad(m.src_len, false);
    for (std::size_t i = len; i < m.src_len; ++i) pad[i] = true;
    m.src_padding.push_back(std::move(pad));
  }
  m.causal.assign(m.tgt_len, std::vector<bool>(m.tgt_len, false));
  for (std::size_t i = 0; i < m.tgt_len; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m.causal[i][j] = true;
  }
  for (std::size_t len : tgt_lens) {
    std::vector<bool> pad(m.tgt_len, false);
    for (std::size_t i = len; i < m.tgt_len; ++i) pad[i] = true;
    std::vector<std::vector<bool>> comb(m.tgt_len, std::vector<bool>(m.tgt_len));
    for (std::size_t i = 0; i < m.tgt_len; ++i) {
      for (std::size_t j = 0; j < m.tgt_len; ++j) comb[i][j] = m.causal[i][j] && !pad[j];
    }
    m.tgt_padding.push_back(std::move(pad));
    m.combined.push_back(std::move(comb));
  }
  return m;
}

namespace {

template <typename T>
Tensor<T> positional_rows(std::size_t first, std::size_t n, std::size_t d) {
  if (d % 2 != 0) throw ConfigError("positional encoding needs an even width, got " + std::to_string(d));
  Tensor<T> pe(Shape{n, d});
  for (std::size_t r = 0; r < n; ++r) {
    const double p = static_cast<double>(first + r);
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle = p / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe(r, 2 * i) = static_cast<T>(std::sin(angle));
      pe(r, 2 * i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

}  // namespace

template <typename T>
Tensor<T> positional_encoding(std::size_t n, std::size_t d) {
  return positional_rows<T>(0, n, d);
}

template <typename T>
Tensor<T> embed_tokens(Tape<T>* tape, const Seq2Seq<T>& model, const Tensor<T>& table,
                       const std::vector<std::vector<int>>& seqs, std::size_t len,
                       std::size_t first_position) {
  const ModelConfig& cfg = model.config();
  std::vector<int> ids;
  ids.reserve(seqs.size() * len);
  for (const auto& s : seqs) {
    if (s.size() > len) throw UsageError("sequence longer than the padded length");
    ids.insert(ids.end(), s.begin(), s.end());
    ids.insert(ids.end(), len - s.size(), kPad);
  }
  if (first_position + len > cfg.max_len) {
    throw UsageError("sequence of length " + std::to_string(first_position + len) +
                     " exceeds max_len " + std::to_string(cfg.max_len));
  }
  Tensor<T> x = scale(tape, embedding(tape, table, std::span<const int>(ids)),
                      static_cast<T>(std::sqrt(static_cast<double>(cfg.d))));
  if (!cfg.positional_encoding) return x;
  Tensor<T> pe = positional_rows<T>(first_position, len, cfg.d);
  Tensor<T> tiled(Shape{seqs.size() * len, cfg.d});
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    std::copy_n(pe.ptr(), len * cfg.d, tiled.ptr() + b * len * cfg.d);
  }
  return add(tape, x, tiled);
}

namespace {

template <typename T>
EncodedBatch<T> encode_padded(Tape<T>* tape, const Seq2Seq<T>& model,
                              const std::vector<std::vector<int>>& src,
                              const std::vector<std::size_t>& lengths, std::size_t len,
                              DropoutCtx drop) {
  const ModelConfig& cfg = model.config();
  const auto& p = model.params();
  for (const auto& s : src) {
    for (int id : s) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg.src_vocab) {
        throw DataError("source id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(cfg.src_vocab));
      }
    }
  }
  EncodedBatch<T> enc;
  enc.layout = SeqLayout{src.size(), len, lengths};
  Tensor<T> x = embed_tokens(tape, model, p.src_embed, src, len);
  AttentionMask mask;
  mask.key_lengths = lengths;
  const BlockConfig bc = cfg.block(false);
  for (const auto& block : p.encoder) {
    x = muse_block_forward(tape, x, block, bc, enc.layout, mask, drop);
  }
  enc.z = layer_norm(tape, x, p.enc_ln_gain, p.enc_ln_bias, static_cast<T>(cfg.ln_eps));
  return enc;
}

template <typename T>
Tensor<T> context_sublayer(Tape<T>* tape, const Tensor<T>& y, const DecoderLayerParams<T>& layer,
                           const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                           std::size_t batch, const AttentionMask& mask, T eps, DropoutCtx drop) {
  Tensor<T> c = layer_norm(tape, y, layer.ctx_ln_gain, layer.ctx_ln_bias, eps);
  Tensor<T> q = matmul(tape, c, layer.ctx_wq);
  Tensor<T> a = matmul(tape, scaled_dot_attention(tape, q, k, v, heads, batch, mask, drop),
                       layer.ctx_wo);
  std::mt19937_64 unused;
  const T rate = drop.active() ? static_cast<T>(drop.rate) : T(0);
  return add(tape, y, dropout(tape, a, rate, drop.rng ? *drop.rng : unused));
}

template <typename T>
Tensor<T> project_vocab(Tape<T>* tape, const Seq2Seq<T>& model, const Tensor<T>& h) {
  const auto& p = model.params();
  return p.out_proj ? matmul(tape, h, *p.out_proj) : matmul_nt(tape, h, p.tgt_embed);
}

}  // namespace

template <typename T>
EncodedBatch<T> encode_batch(Tape<T>* tape, const Seq2Seq<T>& model,
                             const std::vector<std::vector<int>>& src, DropoutCtx drop) {
  if (src.empty()) throw UsageError("encode: empty batch");
  std::vector<std::size_t> lengths;
  std::size_t len = 0;
  for (const auto& s : src) {
    if (s.empty()) throw UsageError("encode: empty source sequence");
    lengths.push_back(s.size());
    len = std::max(len, s.size());
  }
  return encode_padded(tape, model, src, lengths, len, drop);
}

template <typename T>
EncoderState<T> encode(const Seq2Seq<T>& model, const std::vector<int>& src_ids,
                       std::size_t pad_to) {
  if (src_ids.empty()) throw UsageError("encode: empty source sequence");
  const std::size_t len = std::max(pad_to, src_ids.size());
  EncodedBatch<T> enc = encode_padded<T>(nullptr, model, {src_ids}, {src_ids.size()}, len, {});
  EncoderState<T> state;
  state.z = enc.z;
  state.src_padding.assign(len, false);
  for (std::size_t i = src_ids.size(); i < len; ++i) state.src_padding[i] = true;
  return state;
}

template <typename T>
Tensor<T> decoder_logits(Tape<T>* tape, const Seq2Seq<T>& model, const EncodedBatch<T>& enc,
                         const std::vector<std::vector<int>>& tgt_in, DropoutCtx drop) {
  const ModelConfig& cfg = model.config();
  const auto& p = model.params();
  if (tgt_in.size() != enc.layout.batch) {
    throw ShapeError("decoder: " + std::to_string(tgt_in.size()) + " targets for " +
                     std::to_string(enc.layout.batch) + " sources");
  }
  std::size_t m = 0;
  std::vector<std::size_t> lengths;
  for (const auto& t : tgt_in) {
    if (t.empty()) throw UsageError("decoder: empty target prefix");
    for (int id : t) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg.tgt_vocab) {
        throw DataError("target id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(cfg.tgt_vocab));
      }
    }
    lengths.push_back(t.size());
    m = std::max(m, t.size());
  }
  const SeqLayout layout{tgt_in.size(), m, lengths};
  Tensor<T> y = embed_tokens(tape, model, p.tgt_embed, tgt_in, m);
  AttentionMask self_mask;
  self_mask.causal = true;
  AttentionMask ctx_mask;
  ctx_mask.key_lengths = enc.layout.lengths;
  const BlockConfig bc = cfg.block(true);
  const T eps = static_cast<T>(cfg.ln_eps);
  for (const auto& layer : p.decoder) {
    y = muse_block_forward(tape, y, layer.block, bc, layout, self_mask, drop);
    Tensor<T> k = matmul(tape, enc.z, layer.ctx_wk);
    Tensor<T> v = matmul(tape, enc.z, layer.ctx_wv);
    y = context_sublayer(tape, y, layer, k, v, cfg.heads, layout.batch, ctx_mask, eps, drop);
  }
  Tensor<T> h = layer_norm(tape, y, p.dec_ln_gain, p.dec_ln_bias, eps);
  return project_vocab(tape, model, h);
}

template <typename T>
Tensor<T> forward_train(Tape<T>* tape, const Seq2Seq<T>& model, const Batch& batch,
                        DropoutCtx drop) {
  if (batch.src.empty() || batch.src.size() != batch.tgt.size()) {
    throw UsageError("forward_train: empty or mismatched batch");
  }
  std::vector<std::vector<int>> tgt_in;
  std::size_t m = 0;
  for (const auto& t : batch.tgt) {
    if (t.size() < 2 || t.front() != kBos || t.back() != kEos) {
      throw UsageError("forward_train: target must start with BOS and end with EOS");
    }
    tgt_in.emplace_back(t.begin(), t.end() - 1);
    m = std::max(m, t.size() - 1);
  }
  std::vector<int> targets;
  targets.reserve(batch.tgt.size() * m);
  for (const auto& t : batch.tgt) {
    targets.insert(targets.end(), t.begin() + 1, t.end());
    targets.insert(targets.end(), m - (t.size() - 1), kPad);
  }
  EncodedBatch<T> enc = encode_batch(tape, model, batch.src, drop);
  Tensor<T> logits = decoder_logits(tape, model, enc, tgt_in, drop);
  return cross_entropy(tape, logits, std::span<const int>(targets), kPad,
                       static_cast<T>(model.config().label_smoothing));
}

namespace {

template <typename T>
EncodedBatch<T> as_batch(const EncoderState<T>& state) {
  std::size_t valid = 0;
  while (valid < state.src_padding.size() && !state.src_padding[valid]) ++valid;
  return EncodedBatch<T>{state.z, SeqLayout{1, state.z.rows(), {valid}}};
}

}  // namespace

template <typename T>
Tensor<T> full_logits(const Seq2Seq<T>& model, const EncoderState<T>& state,
                      const std::vector<int>& prefix) {
  return decoder_logits<T>(nullptr, model, as_batch(state), {prefix});
}

template <typename T>
DecoderCache<T> start_decoding(const Seq2Seq<T>& model, const EncoderState<T>& state) {
  DecoderCache<T> cache;
  cache.state_id = state.z.id();
  for (const auto& layer : model.params().decoder) {
    typename DecoderCache<T>::Layer l;
    l.ctx_k = matmul<T>(nullptr, state.z, layer.ctx_wk);
    l.ctx_v = matmul<T>(nullptr, state.z, layer.ctx_wv);
    cache.layers.push_back(std::move(l));
  }
  return cache;
}

namespace {

template <typename T>
Tensor<T> history(const std::vector<T>& rows, std::size_t d) {
  return Tensor<T>(Shape{rows.size() / d, d}, rows);
}

template <typename T>
Tensor<T> last_row(const Tensor<T>& x) {
  const std::size_t d = x.cols();
  return Tensor<T>(Shape{1, d}, std::vector<T>(x.ptr() + (x.rows() - 1) * d, x.ptr() + x.rows() * d));
}

// Causal depth-wise conv outputs (before W_out) at the newest position of the
// window, one per cell.
template <typename T>
std::vector<Tensor<T>> newest_conv_outputs(const Tensor<T>& window, const BlockParams<T>& p,
                                           ConvKind kind) {
  const SeqLayout layout = SeqLayout::single(window.rows());
  std::vector<Tensor<T>> outs;
  for (const auto& cell : p.cells) {
    Tensor<T> o = kind == ConvKind::dynamic_depthwise
                      ? dynamic_depthwise<T>(nullptr, window, cell.weights, true, layout)
                      : plain_depthwise<T>(nullptr, window, cell.weights, true, layout);
    outs.push_back(last_row(o));
  }
  return outs;
}

}  // namespace

template <typename T>
std::vector<T> decode_step(const Seq2Seq<T>& model, const EncoderState<T>& state, int next_id,
                           DecoderCache<T>& cache, const FusedModel<T>* fused) {
  const ModelConfig& cfg = model.config();
  const auto& p = model.params();
  if (cache.state_id != state.z.id() || cache.layers.size() != p.decoder.size()) {
    throw UsageError("decode_step: cache was not started for this encoder state");
  }
  if (cache.t >= cfg.max_len) {
    throw UsageError("decode_step: prefix would exceed max_len " + std::to_string(cfg.max_len));
  }
  if (fused && fused->decoder.size() != p.decoder.size()) {
    throw IntegrityError("decode_step: fused parameters do not match the model");
  }
  const std::size_t d = cfg.d;
  const T eps = static_cast<T>(cfg.ln_eps);
  const BlockConfig bc = cfg.block(true);
  std::size_t max_kernel = 1;
  for (std::size_t k : cfg.kernel_sizes) max_kernel = std::max(max_kernel, k);

  Tensor<T> x = embed_tokens<T>(nullptr, model, p.tgt_embed, {{next_id}}, 1, cache.t);
  AttentionMask none;
  AttentionMask ctx_mask;
  ctx_mask.key_lengths = as_batch(state).layout.lengths;

  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const auto& layer = p.decoder[l];
    const auto& bp = layer.block;
    auto& lc = cache.layers[l];
    Tensor<T> xh = layer_norm<T>(nullptr, x, bp.ln_gain, bp.ln_bias, eps);

    Tensor<T> q, k, v, hidden;
    const FusedBlock<T>* fb = fused ? &fused->decoder[l] : nullptr;
    if (fb) {
      Tensor<T> proj = linear<T>(nullptr, xh, fb->w_enc, &fb->b_enc);
      q = slice_cols<T>(nullptr, proj, fb->q_off, d);
      k = slice_cols<T>(nullptr, proj, fb->k_off, d);
      v = slice_cols<T>(nullptr, proj, fb->v_off, d);
      hidden = relu<T>(nullptr, slice_cols<T>(nullptr, proj, fb->h_off, fb->d_ff));
    } else {
      q = matmul<T>(nullptr, xh, bp.attn.wq);
      k = matmul<T>(nullptr, xh, bp.attn.wk);
      v = matmul<T>(nullptr, xh, bp.proj.wv);
    }
    lc.keys.insert(lc.keys.end(), k.data().begin(), k.data().end());
    lc.values.insert(lc.values.end(), v.data().begin(), v.data().end());
    Tensor<T> att = scaled_dot_attention<T>(nullptr, q, history(lc.keys, d), history(lc.values, d),
                                            bp.attn.heads, 1, none);

    std::vector<Tensor<T>> conv_outs;
    Tensor<T> gate;
    if (bc.has_conv()) {
      Tensor<T> v2 = cfg.projection == Projection::shared ? v
                                                          : matmul<T>(nullptr, xh, *bp.proj.wv2);
      lc.conv_inputs.insert(lc.conv_inputs.end(), v2.data().begin(), v2.data().end());
      if (lc.conv_inputs.size() > max_kernel * d) {
        lc.conv_inputs.erase(lc.conv_inputs.begin(),
                             lc.conv_inputs.end() - static_cast<long>(max_kernel * d));
      }
      conv_outs = newest_conv_outputs(history(lc.conv_inputs, d), bp, cfg.conv_kind);
      gate = softmax<T>(nullptr, bp.gate.alpha, 0);
    }

    if (fb) {
      std::vector<Tensor<T>> parts{att, hidden};
      for (std::size_t i = 0; i < conv_outs.size(); ++i) {
        parts.push_back(scale_by<T>(nullptr, conv_outs[i], gate, i));
      }
      x = add<T>(nullptr, x, linear<T>(nullptr, concat_cols<T>(nullptr, parts), fb->w_dec, &fb->b_dec));
    } else {
      std::vector<Tensor<T>> terms{x, matmul<T>(nullptr, att, bp.attn.wo)};
      if (bc.has_conv()) {
        std::vector<Tensor<T>> cells;
        for (std::size_t i = 0; i < conv_outs.size(); ++i) {
          cells.push_back(
              scale_by<T>(nullptr, matmul<T>(nullptr, conv_outs[i], bp.cells[i].wout), gate, i));
        }
        terms.push_back(cells.size() == 1 ? cells.front() : add_all<T>(nullptr, cells));
      }
      terms.push_back(pointwise_branch<T>(nullptr, xh, bp.ffn));
      x = add_all<T>(nullptr, terms);
    }
    x = context_sublayer<T>(nullptr, x, layer, lc.ctx_k, lc.ctx_v, cfg.heads, 1, ctx_mask, eps, {});
  }
  ++cache.t;
  Tensor<T> h = layer_norm<T>(nullptr, x, p.dec_ln_gain, p.dec_ln_bias, eps);
  Tensor<T> logits = project_vocab<T>(nullptr, model, h);
  return std::vector<T>(logits.data().begin(), logits.data().end());
}

#define MUSE_INSTANTIATE_MODEL(T)                                                                \
  template class Seq2Seq<T>;                                                                     \
  template Tensor<T> positional_encoding<T>(std::size_t, std::size_t);                           \
  template Tensor<T> embed_tokens(Tape<T>*, const Seq2Seq<T>&, const Tensor<T>&,                 \
                                  const std::vector<std::vector<int>>&, std::size_t, std::size_t); \
  template EncodedBatch<T> encode_batch(Tape<T>*, const Seq2Seq<T>&,                             \
                                        const std::vector<std::vector<int>>&, DropoutCtx);       \
  template EncoderState<T> encode(const Seq2Seq<T>&, const std::vector<int>&, std::size_t);     \
  template Tensor<T> decoder_logits(Tape<T>*, const Seq2Seq<T>&, const EncodedBatch<T>&,        \
                                    const std::vector<std::vector<int>>&, DropoutCtx);           \
  template Tensor<T> forward_train(Tape<T>*, const Seq2Seq<T>&, const Batch&, DropoutCtx);      \
  template Tensor<T> full_logits(const Seq2Seq<T>&, const EncoderState<T>&,                     \
                                 const std::vector<int>&);                                      \
  template DecoderCache<T> start_decoding(const Seq2Seq<T>&, const EncoderState<T>&);           \
  template std::vector<T> decode_step(const Seq2Seq<T>&, const EncoderState<T>&, int,           \
                                      DecoderCache<T>&, const FusedModel<T>*);

MUSE_INSTANTIATE_MODEL(float)
MUSE_INSTANTIATE_MODEL(double)

}  // namespace muse
