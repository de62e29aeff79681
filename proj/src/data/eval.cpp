// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "muse/data.hpp"
#include "muse/ops.hpp"

namespace muse {

namespace {

using NGram = std::vector<std::string>;

std::map<NGram, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<NGram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++counts[NGram(toks.begin() + static_cast<long>(i), toks.begin() + static_cast<long>(i + n))];
  }
  return counts;
}

}  // namespace

double corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                   const std::vector<std::vector<std::string>>& references, std::size_t max_n,
                   bool smooth) {
  if (candidates.empty()) throw UsageError("corpus_bleu: no candidates");
  if (candidates.size() != references.size()) {
    throw UsageError("corpus_bleu: " + std::to_string(candidates.size()) + " candidates but " +
                     std::to_string(references.size()) + " references");
  }
  if (max_n < 1) throw ConfigError("corpus_bleu: max_n must be at least 1");
  std::vector<double> correct(max_n + 1, 0.0), total(max_n + 1, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    cand_len += static_cast<double>(candidates[s].size());
    ref_len += static_cast<double>(references[s].size());
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto ref = ngram_counts(references[s], n);
      for (const auto& [g, c] : ngram_counts(candidates[s], n)) {
        total[n] += static_cast<double>(c);
        auto it = ref.find(g);
        if (it != ref.end()) correct[n] += static_cast<double>(std::min(c, it->second));
      }
    }
  }
  if (cand_len == 0.0 || ref_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    double p;
    if (smooth && n > 1) {
      p = (correct[n] + 1.0) / (total[n] + 1.0);
    } else {
      if (correct[n] == 0.0 || total[n] == 0.0) return 0.0;
      p = correct[n] / total[n];
    }
    log_sum += std::log(p);
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return std::clamp(100.0 * bp * std::exp(log_sum / static_cast<double>(max_n)), 0.0, 100.0);
}

std::vector<std::size_t> default_buckets() { return {0, 10, 20, 30, 40}; }

namespace {

std::vector<std::string> as_tokens(const std::vector<int>& ids) {
  std::vector<std::string> out;
  for (int id : ids) out.push_back(std::to_string(id));
  return out;
}

struct Scored {
  std::vector<int> hyp, ref;
};

BucketMetrics score(const std::vector<const Scored*>& items, std::size_t lo, std::size_t hi,
                    bool smooth) {
  BucketMetrics m;
  m.lo = lo;
  m.hi = hi;
  m.count = items.size();
  if (items.empty()) return m;
  std::size_t matches = 0, ref_tokens = 0, exact = 0;
  std::vector<std::vector<std::string>> cands, refs;
  for (const Scored* s : items) {
    for (std::size_t i = 0; i < s->ref.size(); ++i) {
      if (i < s->hyp.size() && s->hyp[i] == s->ref[i]) ++matches;
    }
    ref_tokens += s->ref.size();
    if (s->hyp == s->ref) ++exact;
    cands.push_back(as_tokens(s->hyp));
    refs.push_back(as_tokens(s->ref));
  }
  m.token_acc = ref_tokens == 0 ? 1.0 : static_cast<double>(matches) / static_cast<double>(ref_tokens);
  m.exact_match = static_cast<double>(exact) / static_cast<double>(items.size());
  m.bleu = corpus_bleu(cands, refs, 4, smooth);
  return m;
}

std::vector<int> strip(const std::vector<int>& ids) {
  std::vector<int> out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id != kBos && id != kPad) out.push_back(id);
  }
  return out;
}

}  // namespace

EvalReport bucketed_eval(const Translator& translate, const std::vector<Example>& data,
                         const std::vector<std::size_t>& boundaries, bool smooth_bleu) {
  if (data.empty()) throw UsageError("evaluate: empty corpus");
  if (boundaries.empty()) throw ConfigError("bucket boundaries must be non-empty");
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] <= boundaries[i - 1]) {
      throw ConfigError("bucket boundaries must be strictly increasing");
    }
  }
  std::vector<Scored> scored;
  scored.reserve(data.size());
  std::vector<std::vector<const Scored*>> members(boundaries.size());
  std::vector<const Scored*> all;
  for (const auto& ex : data) {
    std::size_t len = ex.src.size();
    if (len > 0 && ex.src.back() == kEos) --len;
    if (len < boundaries.front()) {
      throw DataError("source length " + std::to_string(len) + " is below the first bucket " +
                      std::to_string(boundaries.front()));
    }
    scored.push_back({strip(translate(ex.src)), strip(ex.tgt)});
    const std::size_t b = static_cast<std::size_t>(
        std::upper_bound(boundaries.begin(), boundaries.end(), len) - boundaries.begin() - 1);
    members[b].push_back(&scored.back());
  }
  for (const auto& s : scored) all.push_back(&s);
  // `scored` never reallocates after reserve(), so the member pointers stay valid.
  EvalReport report;
  for (std::size_t b = 0; b < boundaries.size(); ++b) {
    const std::size_t hi = b + 1 < boundaries.size() ? boundaries[b + 1] : kOpenBucket;
    report.buckets.push_back(score(members[b], boundaries[b], hi, smooth_bleu));
  }
  report.overall = score(all, boundaries.front(), kOpenBucket, smooth_bleu);
  return report;
}

template <typename T>
EvalReport bucketed_eval(const Seq2Seq<T>& model, const std::vector<Example>& data,
                         const std::vector<std::size_t>& boundaries, const BeamConfig& beam,
                         bool smooth_bleu) {
  return bucketed_eval(
      [&](const std::vector<int>& src) { return translate(model, src, beam); }, data, boundaries,
      smooth_bleu);
}

void write_eval_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FileError("cannot write " + path.string());
  f << "bucket_lo,bucket_hi,count,token_acc,exact_match,bleu\n";
  char line[160];
  for (const auto& b : report.buckets) {
    const std::string hi = b.hi == kOpenBucket ? "inf" : std::to_string(b.hi);
    std::snprintf(line, sizeof line, "%zu,%s,%zu,%.6f,%.6f,%.4f\n", b.lo, hi.c_str(), b.count,
                  b.token_acc, b.exact_match, b.bleu);
    f << line;
  }
}

template <typename T>
std::vector<LayerGates> gate_weight_report(const Seq2Seq<T>& model) {
  const ModelConfig& cfg = model.config();
  if (cfg.mode != BlockMode::muse || cfg.kernel_sizes.size() < 2) {
    throw ConfigError("gate report needs a convolution branch with at least two kernel sizes");
  }
  const auto small = std::min_element(cfg.kernel_sizes.begin(), cfg.kernel_sizes.end()) -
                     cfg.kernel_sizes.begin();
  const auto large = std::max_element(cfg.kernel_sizes.begin(), cfg.kernel_sizes.end()) -
                     cfg.kernel_sizes.begin();
  std::vector<LayerGates> out;
  auto add = [&](const std::string& name, const BlockParams<T>& p) {
    LayerGates g;
    g.layer = name;
    g.kernels = cfg.kernel_sizes;
    const Tensor<T> w = softmax<T>(nullptr, p.gate.alpha, 0);
    for (T x : w.data()) g.weights.push_back(static_cast<double>(x));
    g.small_to_large = g.weights[static_cast<std::size_t>(small)] / g.weights[static_cast<std::size_t>(large)];
    out.push_back(std::move(g));
  };
  const auto& p = model.params();
  for (std::size_t l = 0; l < p.encoder.size(); ++l) add("encoder." + std::to_string(l), p.encoder[l]);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    add("decoder." + std::to_string(l), p.decoder[l].block);
  }
  return out;
}

void write_gate_csv(const std::filesystem::path& path, const std::vector<LayerGates>& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FileError("cannot write " + path.string());
  f << "layer,kernel,weight\n";
  char line[128];
  for (const auto& g : report) {
    for (std::size_t i = 0; i < g.kernels.size(); ++i) {
      std::snprintf(line, sizeof line, "%s,%zu,%.6f\n", g.layer.c_str(), g.kernels[i], g.weights[i]);
      f << line;
    }
  }
}

template EvalReport bucketed_eval(const Seq2Seq<float>&, const std::vector<Example>&,
                                  const std::vector<std::size_t>&, const BeamConfig&, bool);
template EvalReport bucketed_eval(const Seq2Seq<double>&, const std::vector<Example>&,
                                  const std::vector<std::size_t>&, const BeamConfig&, bool);
template std::vector<LayerGates> gate_weight_report(const Seq2Seq<float>&);
template std::vector<LayerGates> gate_weight_report(const Seq2Seq<double>&);

}  // namespace muse
