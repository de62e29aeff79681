// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "muse/decode.hpp"

namespace muse {

namespace {

template <typename T>
class CacheState final : public ScorerState {
 public:
  explicit CacheState(DecoderCache<T> cache) : cache(std::move(cache)) {}
  std::unique_ptr<ScorerState> clone() const override {
    return std::make_unique<CacheState>(cache);
  }
  DecoderCache<T> cache;
};

}  // namespace

template <typename T>
ModelScorer<T>::ModelScorer(const Seq2Seq<T>& model, EncoderState<T> state,
                            const FusedModel<T>* fused)
    : model_(model), enc_(std::move(state)), fused_(fused) {}

template <typename T>
std::unique_ptr<ScorerState> ModelScorer<T>::start() const {
  return std::make_unique<CacheState<T>>(start_decoding(model_, enc_));
}

template <typename T>
std::vector<double> ModelScorer<T>::step(ScorerState& state, int token) const {
  auto* cs = dynamic_cast<CacheState<T>*>(&state);
  if (cs == nullptr) throw UsageError("scorer state does not belong to this model");
  const std::vector<T> logits = decode_step(model_, enc_, token, cs->cache, fused_);
  return log_softmax(std::vector<double>(logits.begin(), logits.end()));
}

template <typename T>
std::vector<int> translate(const Seq2Seq<T>& model, const std::vector<int>& src,
                           const BeamConfig& cfg, const FusedModel<T>* fused) {
  BeamConfig bc = cfg;
  bc.max_len = std::min(bc.max_len, model.config().max_len);
  const ModelScorer<T> scorer(model, fused ? encode_fused(model, *fused, src) : encode(model, src),
                              fused);
  const Hypothesis h = bc.beam_size == 1 ? greedy_decode(scorer, bc.max_len) : beam_search(scorer, bc);
  std::vector<int> out(h.tokens.begin() + 1, h.tokens.end());
  if (!out.empty() && out.back() == kEos) out.pop_back();
  return out;
}

template class ModelScorer<float>;
template class ModelScorer<double>;
template std::vector<int> translate(const Seq2Seq<float>&, const std::vector<int>&,
                                    const BeamConfig&, const FusedModel<float>*);
template std::vector<int> translate(const Seq2Seq<double>&, const std::vector<int>&,
                                    const BeamConfig&, const FusedModel<double>*);

}  // namespace muse
