// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "muse/data.hpp"
#include "muse/decode.hpp"
#include "muse/model.hpp"
#include "muse/train.hpp"

namespace muse {

enum class Precision { float32, float64 };

struct BenchConfig {
  // Precision of the timed runs. The equivalence gate always runs at 64-bit:
  // at this depth and width, 32-bit summation-order noise alone reaches 1e-6.
  Precision precision = Precision::float32;
  BlockMode mode = BlockMode::muse_simple;
  std::size_t layers = 6;
  std::size_t d = 512;
  std::size_t d_ff = 2048;
  std::size_t heads = 8;
  std::size_t vocab = 1000;
  std::size_t src_len = 20;
  std::size_t gen_tokens = 32;  // decoded per input, batch size 1
  std::size_t inputs = 20;      // equivalence-gate inputs
  std::size_t warmup = 2;
  std::size_t reps = 5;
};

// Everything a command needs, resolved from defaults, the config file and
// command-line overrides (in that order of precedence, lowest first).
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  BeamConfig beam;
  BenchConfig bench;

  std::optional<TaskSpec> task;  // synthetic training data
  TaskSpec eval_task;            // used when task is set and no eval files are
  std::filesystem::path train_src, train_tgt, eval_src, eval_tgt;
  std::filesystem::path input;       // generate: source file, empty = stdin
  std::filesystem::path checkpoint;  // explicit checkpoint, else latest in out
  std::filesystem::path out;
  std::size_t min_freq = 1;
  std::vector<std::size_t> buckets = default_buckets();
  bool smooth_bleu = false;
  std::size_t average = 1;
  std::uint64_t seed = 1;
  Precision precision = Precision::float32;

  // Every key with its final textual value.
  std::map<std::string, std::string> values;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Names of every accepted configuration key, sorted.
std::vector<std::string> config_keys();
std::string config_key_help(const std::string& key);
std::string config_key_default(const std::string& key);

// Flat "key = value" lines; '#' starts a comment. ConfigError on malformed
// lines or unknown keys.
KeyValues read_config_file(const std::filesystem::path& path);

// Applies defaults, then `file_values`, then `overrides`. Throws ConfigError
// naming the key for unknown keys (with the closest known key suggested) and
// for values of the wrong type.
RunConfig resolve_config(const KeyValues& file_values, const KeyValues& overrides);

// Convenience: reads `file` when non-empty.
RunConfig parse_config(const std::filesystem::path& file, const KeyValues& overrides);

// Writes the resolved values back in config-file form.
void write_config(const std::filesystem::path& path, const RunConfig& cfg);

std::size_t edit_distance(const std::string& a, const std::string& b);

// Commands. Each returns the process exit status and throws muse::Error on
// failure; `log` receives human-readable progress.
int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_evaluate(const RunConfig& cfg, std::ostream& log);
int cmd_generate(const RunConfig& cfg, std::istream& in, std::ostream& out);
int cmd_inspect_gates(const RunConfig& cfg, std::ostream& log);
int cmd_bench(const RunConfig& cfg, std::ostream& out);

struct BenchResult {
  double unfused_tokens_per_sec = 0.0;
  double fused_tokens_per_sec = 0.0;
  double speedup = 0.0;
  double max_abs_diff = 0.0;          // 64-bit logits, over the gate inputs
  double timed_precision_diff = 0.0;  // same comparison at the timed precision
  std::vector<double> unfused_seconds, fused_seconds;
};

// Throws IntegrityError when fused and unfused 64-bit logits differ by 1e-6 or
// more, or when greedy tokens differ at the timed precision.
BenchResult run_bench(const BenchConfig& cfg, std::uint64_t seed);

}  // namespace muse
