// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "muse/decode.hpp"
#include "muse/model.hpp"
#include "muse/train.hpp"

namespace muse {

class Vocab {
 public:
  // Just the four reserved entries.
  Vocab();
  explicit Vocab(const std::vector<std::string>& tokens_in_id_order);

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;  // UNK when absent
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

std::vector<std::string> split_tokens(const std::string& line);

// Tokens with frequency >= min_freq, by (frequency desc, token asc), after the
// reserved ids.
Vocab build_vocab(const std::vector<std::string>& lines, std::size_t min_freq = 1);
void save_vocab(const std::filesystem::path& path, const Vocab& vocab);
Vocab load_vocab(const std::filesystem::path& path);

std::vector<int> encode_line(const std::string& text, const Vocab& vocab);
// PAD and BOS are skipped and decoding stops at EOS.
std::string decode_ids(const std::vector<int>& ids, const Vocab& vocab);

enum class TaskKind { copy, reverse, sort };
TaskKind parse_task_kind(const std::string& name);
std::string to_string(TaskKind k);

struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  std::size_t alphabet = 20;  // tokens "1" .. alphabet
  std::size_t min_len = 5;
  std::size_t max_len = 20;  // inclusive
  std::size_t samples = 1000;
  std::uint64_t seed = 1;

  void validate() const;
};

struct ParallelCorpus {
  std::vector<std::string> src, tgt;
  std::size_t size() const { return src.size(); }
};

ParallelCorpus generate_task(const TaskSpec& spec);
// Equal line counts enforced (DataError otherwise).
ParallelCorpus read_parallel(const std::filesystem::path& src, const std::filesystem::path& tgt);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Source ids get a trailing EOS; targets are wrapped in BOS ... EOS.
std::vector<Example> to_examples(const ParallelCorpus& corpus, const Vocab& src_vocab,
                                 const Vocab& tgt_vocab);

// Corpus-level BLEU in [0, 100] over tokenized sentences. Without smoothing a
// zero n-gram precision yields 0; with smoothing, orders n >= 2 use
// (matches + 1) / (total + 1).
double corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                   const std::vector<std::vector<std::string>>& references, std::size_t max_n = 4,
                   bool smooth = false);

inline constexpr std::size_t kOpenBucket = std::numeric_limits<std::size_t>::max();

struct BucketMetrics {
  std::size_t lo = 0, hi = kOpenBucket;  // source lengths in [lo, hi)
  std::size_t count = 0;
  double token_acc = 0.0;    // positional matches / reference tokens
  double exact_match = 0.0;  // fraction of sentences reproduced exactly
  double bleu = 0.0;
};

struct EvalReport {
  std::vector<BucketMetrics> buckets;
  BucketMetrics overall;
};

std::vector<std::size_t> default_buckets();

using Translator = std::function<std::vector<int>(const std::vector<int>& src)>;

// Decodes every example, assigns it by source length (EOS excluded) to the
// buckets [b_i, b_{i+1}) with the last one open-ended, and scores each.
EvalReport bucketed_eval(const Translator& translate, const std::vector<Example>& data,
                         const std::vector<std::size_t>& boundaries, bool smooth_bleu = false);

template <typename T>
EvalReport bucketed_eval(const Seq2Seq<T>& model, const std::vector<Example>& data,
                         const std::vector<std::size_t>& boundaries, const BeamConfig& beam,
                         bool smooth_bleu = false);

void write_eval_csv(const std::filesystem::path& path, const EvalReport& report);

struct LayerGates {
  std::string layer;  // e.g. "encoder.0"
  std::vector<std::size_t> kernels;
  std::vector<double> weights;  // softmax(alpha)
  double small_to_large = 1.0;  // weight of smallest kernel / weight of largest
};

// ConfigError for models with fewer than two kernel sizes.
template <typename T>
std::vector<LayerGates> gate_weight_report(const Seq2Seq<T>& model);

void write_gate_csv(const std::filesystem::path& path, const std::vector<LayerGates>& report);

}  // namespace muse
