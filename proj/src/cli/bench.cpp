// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "muse/cli.hpp"

namespace muse {

namespace {

ModelConfig bench_model_config(const BenchConfig& b) {
  ModelConfig m;
  m.n_layers = b.layers;
  m.d = b.d;
  m.d_ff = b.d_ff;
  m.heads = b.heads;
  m.mode = b.mode;
  m.src_vocab = b.vocab;
  m.tgt_vocab = b.vocab;
  m.max_len = std::max(b.src_len + 1, b.gen_tokens + 1);
  m.dropout = 0.0;
  return m;
}

// Fixed-length greedy decoding; EOS does not stop generation so every run
// costs the same number of steps. Returns the logits of every step.
template <typename T>
std::vector<std::vector<T>> decode_fixed(const Seq2Seq<T>& model, const FusedModel<T>* fused,
                                             const std::vector<int>& src, std::size_t steps) {
  const EncoderState<T> enc = fused ? encode_fused(model, *fused, src) : encode(model, src);
  DecoderCache<T> cache = start_decoding(model, enc);
  std::vector<std::vector<T>> all;
  int tok = kBos;
  for (std::size_t t = 0; t < steps; ++t) {
    all.push_back(decode_step(model, enc, tok, cache, fused));
    const auto& lg = all.back();
    tok = static_cast<int>(std::max_element(lg.begin(), lg.end()) - lg.begin());
  }
  return all;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::vector<int>> bench_inputs(const BenchConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed + 1);
  std::uniform_int_distribution<int> tok(kUnk + 1, static_cast<int>(cfg.vocab) - 1);
  std::vector<std::vector<int>> inputs(cfg.inputs);
  for (auto& src : inputs) {
    src.resize(cfg.src_len);
    for (int& id : src) id = tok(rng);
    src.push_back(kEos);
  }
  return inputs;
}

template <typename T>
std::vector<int> argmax_tokens(const std::vector<std::vector<T>>& steps) {
  std::vector<int> out;
  for (const auto& lg : steps) {
    out.push_back(static_cast<int>(std::max_element(lg.begin(), lg.end()) - lg.begin()));
  }
  return out;
}

// Fused and unfused logits compared at 64-bit, where rounding noise is far
// below the tolerance, on a model initialised from the same seed.
double equivalence_gap(const BenchConfig& cfg, std::uint64_t seed,
                       const std::vector<std::vector<int>>& inputs) {
  const Seq2Seq<double> model(bench_model_config(cfg), seed);
  const FusedModel<double> fused = fuse_parameters(model);
  double gap = 0.0;
  for (const auto& src : inputs) {
    const auto a = decode_fixed<double>(model, nullptr, src, cfg.gen_tokens);
    const auto b = decode_fixed<double>(model, &fused, src, cfg.gen_tokens);
    for (std::size_t t = 0; t < a.size(); ++t) {
      for (std::size_t i = 0; i < a[t].size(); ++i) gap = std::max(gap, std::abs(a[t][i] - b[t][i]));
    }
  }
  return gap;
}

template <typename T>
BenchResult bench_as(const BenchConfig& cfg, std::uint64_t seed) {
  const auto inputs = bench_inputs(cfg, seed);
  BenchResult r;
  // Never report a speed for outputs that disagree.
  r.max_abs_diff = equivalence_gap(cfg, seed, inputs);
  if (!(r.max_abs_diff < 1e-6)) {
    throw IntegrityError("fused and unfused decoding disagree (max abs diff " +
                         std::to_string(r.max_abs_diff) + ")");
  }
  const Seq2Seq<T> model(bench_model_config(cfg), seed);
  const FusedModel<T> fused = fuse_parameters(model);
  for (const auto& src : inputs) {
    const auto a = decode_fixed<T>(model, nullptr, src, cfg.gen_tokens);
    const auto b = decode_fixed<T>(model, &fused, src, cfg.gen_tokens);
    if (argmax_tokens(a) != argmax_tokens(b)) {
      throw IntegrityError("fused and unfused greedy decoding produced different tokens");
    }
    for (std::size_t t = 0; t < a.size(); ++t) {
      for (std::size_t i = 0; i < a[t].size(); ++i) {
        r.timed_precision_diff = std::max(
            r.timed_precision_diff, std::abs(static_cast<double>(a[t][i]) - static_cast<double>(b[t][i])));
      }
    }
  }

  // Timed runs alternate between the two paths so drift affects both alike.
  const std::vector<int>& src = inputs.front();
  for (std::size_t rep = 0; rep < cfg.warmup + cfg.reps; ++rep) {
    for (int path = 0; path < 2; ++path) {
      const auto t0 = std::chrono::steady_clock::now();
      decode_fixed<T>(model, path ? &fused : nullptr, src, cfg.gen_tokens);
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (rep >= cfg.warmup) (path ? r.fused_seconds : r.unfused_seconds).push_back(s);
    }
  }
  const double n = static_cast<double>(cfg.gen_tokens);
  r.unfused_tokens_per_sec = n / median(r.unfused_seconds);
  r.fused_tokens_per_sec = n / median(r.fused_seconds);
  r.speedup = r.fused_tokens_per_sec / r.unfused_tokens_per_sec;
  return r;
}

}  // namespace

BenchResult run_bench(const BenchConfig& cfg, std::uint64_t seed) {
  return cfg.precision == Precision::float32 ? bench_as<float>(cfg, seed)
                                             : bench_as<double>(cfg, seed);
}

}  // namespace muse
