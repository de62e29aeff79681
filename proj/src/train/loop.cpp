// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "muse/ops.hpp"
#include "muse/train.hpp"

namespace muse {

BatchPlan plan_token_batches(const std::vector<std::size_t>& lengths, std::size_t max_tokens,
                             bool sort_by_length) {
  if (max_tokens < 1) throw ConfigError("max_tokens must be at least 1");
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  if (sort_by_length) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  }
  BatchPlan plan;
  std::vector<std::size_t> current;
  std::size_t longest = 0;
  auto close = [&] {
    if (current.empty()) return;
    plan.oversize.push_back(current.size() == 1 && longest > max_tokens);
    plan.batches.push_back(std::move(current));
    current.clear();
    longest = 0;
  };
  for (std::size_t idx : order) {
    const std::size_t grown = std::max(longest, lengths[idx]);
    if (!current.empty() && (current.size() + 1) * grown > max_tokens) close();
    current.push_back(idx);
    longest = std::max(longest, lengths[idx]);
  }
  close();
  return plan;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepRecord>& log) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FileError("cannot write metrics " + path.string());
  f << "step,loss,lr,tokens_per_sec\n";
  char line[128];
  for (const auto& r : log) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.6g\n", r.step, r.loss, r.lr,
                  r.tokens_per_sec);
    f << line;
  }
}

template <typename T>
TrainResult train_loop(Seq2Seq<T>& model, const std::vector<Example>& data, const TrainConfig& cfg,
                       const StepCallback& on_step) {
  if (data.empty()) throw UsageError("train: empty training corpus");
  if (cfg.epochs < 1) throw ConfigError("epochs must be at least 1");
  cfg.schedule.validate();
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  std::vector<std::size_t> lengths;
  for (const auto& ex : data) {
    if (ex.src.empty() || ex.tgt.size() < 2) throw DataError("train: empty example");
    lengths.push_back(std::max(ex.src.size(), ex.tgt.size()));
  }
  const BatchPlan plan = plan_token_batches(lengths, cfg.max_tokens, cfg.sort_by_length);

  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const DropoutCtx drop{model.config().dropout, &dropout_rng};
  const NamedTensors<T> params = model.named_parameters();
  AdamState<T> adam;
  GradientAccumulator<T> acc(cfg.update_every);

  TrainResult result;
  double loss_sum = 0.0;
  std::size_t tokens = 0;
  auto window_start = std::chrono::steady_clock::now();
  bool stop = false;

  auto save = [&](std::size_t epoch) {
    if (cfg.out_dir.empty()) return;
    char name[64];
    std::snprintf(name, sizeof name, "checkpoint_epoch%04zu.bin", epoch);
    const auto path = cfg.out_dir / name;
    save_checkpoint(path, make_checkpoint(model, result.steps));
    result.checkpoints.push_back(path);
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    std::vector<std::size_t> order(plan.batches.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t bi : order) {
      Batch batch;
      for (std::size_t idx : plan.batches[bi]) {
        batch.src.push_back(data[idx].src);
        batch.tgt.push_back(data[idx].tgt);
        tokens += data[idx].tgt.size() - 1;
      }
      Tape<T> tape;
      Tensor<T> loss = forward_train(&tape, model, batch, drop);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at optimizer step " + std::to_string(result.steps + 1) +
                           ", epoch " + std::to_string(epoch));
      }
      GradMap<T> grads = tape.backward(loss);
      std::vector<Tensor<T>> g;
      g.reserve(params.size());
      for (const auto& [name, p] : params) g.push_back(grads(p));
      loss_sum += value;

      const double lr = learning_rate(result.steps + 1, cfg.schedule);
      if (!accumulate_and_step(acc, g, params, adam, lr, cfg.adam, cfg.clip_norm)) continue;

      ++result.steps;
      const auto now = std::chrono::steady_clock::now();
      const double secs = std::chrono::duration<double>(now - window_start).count();
      StepRecord rec{result.steps, loss_sum / static_cast<double>(cfg.update_every), lr,
                     secs > 0.0 ? static_cast<double>(tokens) / secs : 0.0};
      result.log.push_back(rec);
      loss_sum = 0.0;
      tokens = 0;
      window_start = now;
      if (cfg.log_every > 0 && result.steps % cfg.log_every == 0) {
        std::fprintf(stderr, "step %zu loss %.4f lr %.3g tok/s %.0f\n", rec.step, rec.loss, rec.lr,
                     rec.tokens_per_sec);
      }
      if ((on_step && !on_step(rec)) || (cfg.max_steps > 0 && result.steps >= cfg.max_steps)) {
        stop = true;
        break;
      }
    }
    result.epochs_run = epoch;
    save(epoch);
  }
  if (!cfg.out_dir.empty()) write_metrics_csv(cfg.out_dir / "metrics.csv", result.log);
  return result;
}

template TrainResult train_loop(Seq2Seq<float>&, const std::vector<Example>&, const TrainConfig&,
                                const StepCallback&);
template TrainResult train_loop(Seq2Seq<double>&, const std::vector<Example>&, const TrainConfig&,
                                const StepCallback&);

}  // namespace muse
