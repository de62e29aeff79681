// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <vector>

#include "muse/fused.hpp"
#include "muse/model.hpp"

namespace muse {

// Opaque per-hypothesis decoder state.
class ScorerState {
 public:
  virtual ~ScorerState() = default;
  virtual std::unique_ptr<ScorerState> clone() const = 0;
};

// Next-token distribution source for the search routines.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::unique_ptr<ScorerState> start() const = 0;
  // Feeds `token` (BOS first) and returns log-probabilities of the next token.
  virtual std::vector<double> step(ScorerState& state, int token) const = 0;
};

// Adapts an encoder-decoder model for one encoded source.
template <typename T>
class ModelScorer final : public StepScorer {
 public:
  ModelScorer(const Seq2Seq<T>& model, EncoderState<T> state, const FusedModel<T>* fused = nullptr);
  std::size_t vocab_size() const override { return model_.config().tgt_vocab; }
  std::unique_ptr<ScorerState> start() const override;
  std::vector<double> step(ScorerState& state, int token) const override;

 private:
  const Seq2Seq<T>& model_;
  EncoderState<T> enc_;
  const FusedModel<T>* fused_;
};

struct Hypothesis {
  std::vector<int> tokens;  // starts with BOS
  double log_prob = 0.0;
  double score = 0.0;  // log_prob / length_penalty
  bool finished = false;

  // Tokens after BOS, EOS included when present.
  std::size_t length() const { return tokens.empty() ? 0 : tokens.size() - 1; }
};

struct BeamConfig {
  std::size_t beam_size = 5;
  double alpha = 1.0;
  std::size_t max_len = 64;  // generated tokens, EOS included

  void validate() const;
};

// ((5 + len) / 6)^alpha.
double length_penalty(std::size_t len, double alpha);

// Numerically stable log-softmax.
std::vector<double> log_softmax(const std::vector<double>& logits);

// Argmax decoding; ties go to the smallest token id. Scored with alpha = 0.
Hypothesis greedy_decode(const StepScorer& scorer, std::size_t max_len);

Hypothesis beam_search(const StepScorer& scorer, const BeamConfig& cfg);

// Encodes src (already EOS-terminated) and decodes; beam_size 1 uses greedy.
// Returns the generated ids with BOS and EOS stripped.
template <typename T>
std::vector<int> translate(const Seq2Seq<T>& model, const std::vector<int>& src,
                           const BeamConfig& cfg, const FusedModel<T>* fused = nullptr);

}  // namespace muse
