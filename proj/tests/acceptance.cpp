// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Runs the nine acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is nonzero when any criterion fails.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "muse/cli.hpp"
#include "muse/data.hpp"
#include "muse/decode.hpp"
#include "muse/fused.hpp"
#include "muse/gradcheck.hpp"
#include "muse/model.hpp"
#include "muse/train.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace muse {
namespace {

using testing::random_tensor;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Outcome dynamic_conv_oracle_check() {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> size(1, 8), kernel(0, 2), coin(0, 1);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = size(rng), d = size(rng), k = 2 * kernel(rng) + 1;
    const bool causal = coin(rng) == 1;
    ConvCellParams<double> cell;
    cell.kernel = k;
    cell.weights = random_tensor({k, d}, rng);
    cell.wout = random_tensor({d, d}, rng, 0.5);
    const Tensor<double> v2 = random_tensor({n, d}, rng);
    worst = std::max(worst, testing::max_abs_diff(dynamic_conv_cell<double>(nullptr, v2, cell, causal),
                                                  testing::dynamic_conv_oracle(v2, cell.weights,
                                                                               cell.wout, causal)));
  }
  return {worst < 1e-10, fmt("max abs diff %.2e over 100 instances", worst)};
}

Outcome gradient_check() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d = 16;
  cfg.d_ff = 32;
  cfg.heads = 2;
  cfg.kernel_sizes = {3, 15};
  cfg.src_vocab = cfg.tgt_vocab = 12;
  cfg.max_len = 16;
  cfg.dropout = 0.0;
  cfg.label_smoothing = 0.1;
  Seq2Seq<double> model(cfg, 2);
  // Eight target tokens.
  const Batch batch{{{4, 5, 6, 7, kEos}, {8, 9, kEos}},
                    {{kBos, 7, 6, 5, kEos}, {kBos, 9, 8, 11, kEos}}};
  std::vector<Tensor<double>> params;
  for (const auto& [name, t] : model.named_parameters()) params.push_back(t);
  const GradCheckResult r = finite_diff_check<double>(
      [&](Tape<double>* t) { return forward_train(t, model, batch); }, params, 1e-5);
  return {r.max_rel_error < 1e-4,
          fmt("max relative error %.2e over %.0f coordinates", r.max_rel_error,
              static_cast<double>(r.coordinates))};
}

Outcome fused_speedup() {
  const BenchConfig cfg;  // 6 blocks, hidden 512, batch 1, 20 gate inputs
  const BenchResult r = run_bench(cfg, 1);
  return {r.max_abs_diff < 1e-6 && r.speedup > 1.0,
          fmt("max abs diff %.2e; %.1f vs %.1f tokens/s, speedup %.3f", r.max_abs_diff,
              r.fused_tokens_per_sec, r.unfused_tokens_per_sec, r.speedup)};
}

Outcome causality() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d = 16;
  cfg.d_ff = 32;
  cfg.heads = 2;
  cfg.kernel_sizes = {3, 15};
  cfg.src_vocab = cfg.tgt_vocab = 12;
  cfg.max_len = 16;
  Seq2Seq<double> model(cfg, 4);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (auto& [name, t] : model.named_parameters()) {
    for (double& v : t.data()) v += noise(rng);
  }
  std::uniform_int_distribution<int> token(4, 11);
  std::uniform_int_distribution<std::size_t> src_len(1, 10), prefix_len(2, cfg.max_len);
  double future = 0, incremental = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> src(src_len(rng));
    for (int& t : src) t = token(rng);
    src.push_back(kEos);
    std::vector<int> prefix{kBos};
    const std::size_t len = prefix_len(rng);
    while (prefix.size() < len) prefix.push_back(token(rng));
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, len - 2)(rng);

    const EncoderState<double> st = encode(model, src);
    const Tensor<double> base = full_logits(model, st, prefix);
    std::vector<int> changed = prefix;
    for (std::size_t i = t + 1; i < len; ++i) changed[i] = token(rng);
    const Tensor<double> other = full_logits(model, st, changed);
    for (std::size_t i = 0; i <= t; ++i) {
      for (std::size_t v = 0; v < cfg.tgt_vocab; ++v) {
        future = std::max(future, std::abs(other(i, v) - base(i, v)));
      }
    }

    DecoderCache<double> cache = start_decoding(model, st);
    for (std::size_t i = 0; i < len; ++i) {
      const std::vector<double> step = decode_step(model, st, prefix[i], cache);
      for (std::size_t v = 0; v < cfg.tgt_vocab; ++v) {
        incremental = std::max(incremental, std::abs(step[v] - base(i, v)));
      }
    }
  }
  return {future < 1e-12 && incremental < 1e-6,
          fmt("future-token effect %.2e, incremental vs full %.2e over 50 prefixes", future,
              incremental)};
}

struct Variant {
  std::string name;
  BlockMode mode = BlockMode::muse;
  Projection projection = Projection::shared;
  ConvKind kind = ConvKind::dynamic_depthwise;
  std::vector<std::size_t> kernels;
};

// Closed-form scalar count for tied embeddings.
std::size_t predicted_parameters(const ModelConfig& c) {
  const std::size_t d = c.d;
  std::size_t block = 2 * d + 4 * d * d + 2 * d * c.d_ff + c.d_ff + d;
  if (c.mode == BlockMode::muse) {
    for (std::size_t k : c.kernel_sizes) block += k * d + d * d;
    block += c.kernel_sizes.size();
    if (c.projection == Projection::separate) block += d * d;
  }
  const std::size_t context = 2 * d + 4 * d * d;
  return c.src_vocab * d + c.n_layers * (2 * block + context) + 4 * d;
}

Outcome ablations() {
  TaskSpec task;
  task.alphabet = 10;
  task.min_len = 3;
  task.max_len = 12;
  task.samples = 2000;
  const ParallelCorpus corpus = generate_task(task);
  std::vector<std::string> lines = corpus.src;
  lines.insert(lines.end(), corpus.tgt.begin(), corpus.tgt.end());
  const Vocab vocab = build_vocab(lines);
  const std::vector<Example> data = to_examples(corpus, vocab, vocab);

  const std::vector<Variant> variants{
      {"muse", BlockMode::muse, Projection::shared, ConvKind::dynamic_depthwise, {3, 7, 15}},
      {"muse_simple", BlockMode::muse_simple, Projection::shared, ConvKind::dynamic_depthwise, {3}},
      {"separate", BlockMode::muse, Projection::separate, ConvKind::dynamic_depthwise, {3, 15}},
      {"plain{3,7}", BlockMode::muse, Projection::shared, ConvKind::plain, {3, 7}},
      {"single{3}", BlockMode::muse, Projection::shared, ConvKind::dynamic_depthwise, {3}},
      {"single{7}", BlockMode::muse, Projection::shared, ConvKind::dynamic_depthwise, {7}},
      {"single{15}", BlockMode::muse, Projection::shared, ConvKind::dynamic_depthwise, {15}},
      {"dynamic{3,15}", BlockMode::muse, Projection::shared, ConvKind::dynamic_depthwise, {3, 15}},
  };
  bool ok = true;
  std::ostringstream detail;
  std::size_t shared_count = 0, separate_count = 0;
  ModelConfig base;
  for (const Variant& v : variants) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d = 32;
    cfg.d_ff = 64;
    cfg.heads = 2;
    cfg.mode = v.mode;
    cfg.projection = v.projection;
    cfg.conv_kind = v.kind;
    cfg.kernel_sizes = v.kernels;
    cfg.src_vocab = cfg.tgt_vocab = vocab.size();
    cfg.max_len = 16;
    cfg.dropout = 0.1;
    base = cfg;
    Seq2Seq<float> model(cfg, 5);
    const std::size_t count = model.parameter_count();
    const bool count_ok = count == predicted_parameters(cfg);
    if (v.name == "separate") separate_count = count;
    if (v.name == "dynamic{3,15}") shared_count = count;

    TrainConfig tc;
    tc.epochs = 100;
    tc.max_steps = 50;
    tc.max_tokens = 300;
    tc.update_every = 1;
    tc.schedule.warmup = 20;
    tc.schedule.max_lr = 1e-3;
    bool finite = true;
    std::size_t steps = 0;
    try {
      const TrainResult r = train_loop(model, data, tc);
      steps = r.steps;
      for (const auto& rec : r.log) finite = finite && std::isfinite(rec.loss);
    } catch (const NumericError&) {
      finite = false;
    }
    const bool variant_ok = count_ok && finite && steps == 50;
    ok = ok && variant_ok;
    if (!variant_ok) detail << v.name << " failed (count " << count << ", steps " << steps << ") ";
  }
  const std::size_t blocks = 2 * base.n_layers;
  const bool gap_ok = separate_count - shared_count == blocks * base.d * base.d;
  ok = ok && gap_ok;
  detail << variants.size() << " configs trained 50 steps; separate - shared = "
         << separate_count - shared_count << " = " << blocks << " blocks x d^2";
  return {ok, detail.str()};
}

struct ToyTask {
  Vocab vocab;
  std::vector<Example> train, eval;
};

ToyTask reverse_task(std::uint64_t train_seed, std::size_t eval_min, std::size_t eval_max,
                     std::size_t eval_samples) {
  TaskSpec spec;
  spec.kind = TaskKind::reverse;
  spec.alphabet = 20;
  spec.min_len = 5;
  spec.max_len = 20;
  spec.samples = 10000;
  spec.seed = train_seed;
  const ParallelCorpus train = generate_task(spec);
  spec.min_len = eval_min;
  spec.max_len = eval_max;
  spec.samples = eval_samples;
  spec.seed = train_seed + 1000;
  const ParallelCorpus eval = generate_task(spec);
  std::vector<std::string> lines = train.src;
  lines.insert(lines.end(), train.tgt.begin(), train.tgt.end());
  ToyTask t;
  t.vocab = build_vocab(lines);
  t.train = to_examples(train, t.vocab, t.vocab);
  t.eval = to_examples(eval, t.vocab, t.vocab);
  return t;
}

ModelConfig tiny_model(BlockMode mode, std::size_t vocab) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d = 64;
  cfg.d_ff = 256;
  cfg.heads = 4;
  cfg.kernel_sizes = {3, 15};
  cfg.mode = mode;
  cfg.src_vocab = cfg.tgt_vocab = vocab;
  cfg.max_len = 48;
  cfg.dropout = 0.0;
  cfg.label_smoothing = 0.0;
  return cfg;
}

TrainConfig tiny_training(std::size_t max_steps, std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = 1000;
  tc.max_steps = max_steps;
  tc.max_tokens = 2000;
  tc.update_every = 1;
  tc.seed = seed;
  tc.schedule.warmup = 300;
  tc.schedule.max_lr = 2e-3;
  return tc;
}

double token_accuracy(const Seq2Seq<float>& model, const std::vector<Example>& data) {
  return bucketed_eval(model, data, {0}, BeamConfig{1, 0.0, model.config().max_len})
      .overall.token_acc;
}

Outcome reverse_learning() {
  const ToyTask task = reverse_task(1, 5, 20, 1000);
  Seq2Seq<float> model(tiny_model(BlockMode::muse, task.vocab.size()), 1);
  double acc = 0;
  std::size_t reached = 0;
  const TrainResult r = train_loop(model, task.train, tiny_training(3000, 1),
                                   [&](const StepRecord& rec) {
                                     if (rec.step % 250 != 0) return true;
                                     acc = token_accuracy(model, task.eval);
                                     std::cout << "  step " << rec.step << " held-out token accuracy "
                                               << acc << std::endl;
                                     if (acc >= 0.99) reached = rec.step;
                                     return reached == 0;
                                   });
  if (reached == 0) acc = token_accuracy(model, task.eval);
  return {acc >= 0.99 && r.steps <= 3000,
          fmt("held-out token accuracy %.4f after %.0f optimizer steps", acc,
              static_cast<double>(r.steps))};
}

Outcome length_robustness() {
  constexpr std::size_t kSteps = 1500;
  std::array<double, 2> exact{0, 0}, tokens{0, 0};
  std::ostringstream per_seed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const ToyTask task = reverse_task(seed, 21, 40, 400);
    for (int arm = 0; arm < 2; ++arm) {
      const BlockMode mode = arm == 0 ? BlockMode::muse : BlockMode::muse_simple;
      Seq2Seq<float> model(tiny_model(mode, task.vocab.size()), seed);
      train_loop(model, task.train, tiny_training(kSteps, seed));
      const EvalReport report = bucketed_eval(model, task.eval, default_buckets(),
                                              BeamConfig{1, 0.0, model.config().max_len});
      const BucketMetrics& b = report.buckets[3];  // [30, 40)
      exact[arm] += b.exact_match / 3;
      tokens[arm] += b.token_acc / 3;
      per_seed << (arm == 0 ? " seed " + std::to_string(seed) + ": muse " : " / control ")
               << fmt("%.3f", b.exact_match);
    }
    std::cout << "  " << per_seed.str() << std::endl;
    per_seed.str("");
  }
  return {exact[0] >= exact[1],
          fmt("[30,40) exact match muse %.4f vs control %.4f (token accuracy %.4f vs %.4f), "
              "3-seed means",
              exact[0], exact[1], tokens[0], tokens[1])};
}

Outcome invariant_suites() {
  std::vector<std::string> binaries;
  std::istringstream list(MUSE_INVARIANT_BINARIES);  // '|'-separated paths
  for (std::string path; std::getline(list, path, '|');) binaries.push_back(path);
  std::size_t tests = 0;
  bool ok = true;
  std::ostringstream failed;
  for (const std::string& bin : binaries) {
    FILE* pipe = popen((bin + " --gtest_filter='*Invariants*' 2>&1").c_str(), "r");
    if (!pipe) return {false, "cannot run " + bin};
    std::array<char, 512> buf;
    std::size_t passed = 0;
    while (std::fgets(buf.data(), buf.size(), pipe)) {
      if (std::string(buf.data()).rfind("[       OK ]", 0) == 0) ++passed;
    }
    const int status = pclose(pipe);
    const bool bin_ok = WIFEXITED(status) && WEXITSTATUS(status) == 0 && passed > 0;
    if (!bin_ok) failed << ' ' << bin;
    ok = ok && bin_ok;
    tests += passed;
  }
  std::string detail = std::to_string(tests) + " property tests passed in " +
                       std::to_string(binaries.size()) + " suites";
  if (!ok) detail += "; failing:" + failed.str();
  return {ok, detail};
}

Outcome decoding_oracle() {
  std::size_t agree = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const testing::ToyScorer s = testing::ToyScorer::random(3, seed);
    const Hypothesis want = testing::exhaustive_best(s, 4, 0.0);
    const Hypothesis got = beam_search(s, BeamConfig{81, 0.0, 4});
    if (got.tokens == want.tokens && std::abs(got.score - want.score) < 1e-12) ++agree;
  }
  return {agree == 20, std::to_string(agree) + "/20 toy models decoded to the MAP sequence"};
}

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace muse

int main() {
  using namespace muse;
  const std::vector<Criterion> criteria{
      {1, "dynamic convolution matches brute force", 10, dynamic_conv_oracle_check},
      {2, "full-model gradient check", 120, gradient_check},
      {3, "fused execution equivalence and speedup", 300, fused_speedup},
      {4, "decoder causality and incremental decoding", 600, causality},
      {5, "ablation variants train and count parameters", 600, ablations},
      {6, "reverse task learned to 99% token accuracy", 1800, reverse_learning},
      {7, "length robustness against attention-only control", 3600, length_robustness},
      {8, "invariant property suites", 600, invariant_suites},
      {9, "beam search finds the MAP sequence", 60, decoding_oracle},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    std::cout << "running " << c.id << ": " << c.name << std::endl;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = seconds_since(start);
    if (secs > c.budget_seconds) {
      o.pass = false;
      o.detail += "; over the " + std::to_string(static_cast<int>(c.budget_seconds)) + " s budget";
    }
    if (!o.pass) ++failures;
    std::printf("[%s] %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
