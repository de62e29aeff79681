// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "muse/model.hpp"
#include "muse/tensor.hpp"

namespace muse {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 0.0;  // decoupled, scaled by lr
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;  // mirror the parameter list
  std::size_t t = 0;
};

// One bias-corrected Adam update of params[i] with grads[i]. Throws
// NumericError naming the parameter when a gradient is not finite; nothing is
// modified in that case.
template <typename T>
void adam_step(const NamedTensors<T>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, double lr, const AdamConfig& cfg = {});

// Scales grads in place so their global L2 norm is at most max_norm. Returns
// the norm before scaling. max_norm <= 0 disables clipping.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& grads, double max_norm);

enum class ScheduleKind { inverse_sqrt, cosine };

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::inverse_sqrt;
  std::size_t warmup = 4000;
  double max_lr = 1e-3;
  double min_lr = 1e-7;
  std::size_t total = 0;  // cosine only

  void validate() const;
};

double lr_inverse_sqrt(std::size_t step, const ScheduleConfig& cfg);
double lr_cosine(std::size_t step, const ScheduleConfig& cfg);
double learning_rate(std::size_t step, const ScheduleConfig& cfg);

struct BatchPlan {
  std::vector<std::vector<std::size_t>> batches;
  // oversize[b]: batch b is a single sentence whose cost alone exceeds the budget.
  std::vector<bool> oversize;
};

// Greedy token-budget batching. A batch costs size * longest member; a batch
// is closed when adding the next sentence would push it over max_tokens.
BatchPlan plan_token_batches(const std::vector<std::size_t>& lengths, std::size_t max_tokens,
                             bool sort_by_length);

// Sums gradients over every_u micro-batches and releases their mean.
template <typename T>
class GradientAccumulator {
 public:
  explicit GradientAccumulator(std::size_t every_u);

  void add(const std::vector<Tensor<T>>& grads);
  bool ready() const { return count_ == every_u_; }
  std::size_t pending() const { return count_; }
  // Mean gradient; resets the accumulator. UsageError when nothing was added.
  std::vector<Tensor<T>> take_mean();

 private:
  std::size_t every_u_;
  std::size_t count_ = 0;
  std::vector<Tensor<T>> sum_;
};

// Adds one micro-batch; once every_u have arrived, applies adam_step to the
// mean gradient and returns true.
template <typename T>
bool accumulate_and_step(GradientAccumulator<T>& acc, const std::vector<Tensor<T>>& grads,
                         const NamedTensors<T>& params, AdamState<T>& state, double lr,
                         const AdamConfig& cfg = {}, double clip_norm = 0.0);

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::string fingerprint;
  std::vector<NamedArray> params;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// FileError when unreadable, IntegrityError when malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Coordinate-wise mean. The result does not depend on the order of `ckpts`.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& ckpts);

template <typename T>
Checkpoint make_checkpoint(const Seq2Seq<T>& model, std::uint64_t step);
// IntegrityError when the fingerprint or any name/shape disagrees.
template <typename T>
void apply_checkpoint(Seq2Seq<T>& model, const Checkpoint& ckpt);

struct Example {
  std::vector<int> src;  // ends with EOS
  std::vector<int> tgt;  // BOS ... EOS
};

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // optimizer steps; 0 = unlimited
  std::size_t max_tokens = 4096;
  std::size_t update_every = 4;
  bool sort_by_length = true;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  AdamConfig adam;
  ScheduleConfig schedule;
  std::filesystem::path out_dir;  // empty: no files written
  std::size_t log_every = 0;      // progress lines on stderr; 0 = quiet
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double tokens_per_sec = 0.0;
};

struct TrainResult {
  std::size_t steps = 0;
  std::size_t epochs_run = 0;
  std::vector<StepRecord> log;
  std::vector<std::filesystem::path> checkpoints;
};

// Called after each optimizer step; returning false stops training after the
// current step (a final checkpoint is still written).
using StepCallback = std::function<bool(const StepRecord&)>;

template <typename T>
TrainResult train_loop(Seq2Seq<T>& model, const std::vector<Example>& data, const TrainConfig& cfg,
                       const StepCallback& on_step = {});

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepRecord>& log);

}  // namespace muse
