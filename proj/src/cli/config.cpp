// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>

#include "muse/cli.hpp"

namespace muse {

namespace {

struct KeySpec {
  const char* name;
  const char* fallback;
  const char* help;
};

// clang-format off
const std::vector<KeySpec> kKeys{
    {"n_layers", "2", "blocks per side"},
    {"d", "64", "hidden size"},
    {"d_ff", "256", "pointwise inner size"},
    {"heads", "4", "attention heads"},
    {"kernel_sizes", "3,15", "comma-separated odd kernel sizes"},
    {"mode", "muse", "muse | muse_simple (no convolution branch)"},
    {"projection", "shared", "shared | separate value projection for the convolution"},
    {"conv_kind", "dynamic_depthwise", "dynamic_depthwise | plain"},
    {"max_len", "64", "longest sequence the model accepts"},
    {"dropout", "0.1", "dropout rate"},
    {"label_smoothing", "0.1", "label smoothing"},
    {"ln_eps", "1e-5", "layer norm epsilon"},
    {"tie_embeddings", "true", "tie output projection (and shared vocab embeddings)"},
    {"positional_encoding", "true", "add sinusoidal positions"},
    {"epochs", "10", "training epochs"},
    {"max_steps", "0", "stop after this many optimizer steps (0 = no limit)"},
    {"max_tokens", "4096", "token budget per micro-batch"},
    {"update_every", "4", "micro-batches per optimizer step"},
    {"sort_by_length", "true", "length-sort before batching"},
    {"clip_norm", "1.0", "global gradient norm clip (0 = off)"},
    {"lr", "0.001", "peak learning rate"},
    {"min_lr", "1e-7", "floor of the cosine schedule"},
    {"warmup", "4000", "warmup steps"},
    {"schedule", "inverse_sqrt", "inverse_sqrt | cosine"},
    {"total_steps", "0", "cosine schedule length"},
    {"beta1", "0.9", "Adam beta1"},
    {"beta2", "0.98", "Adam beta2"},
    {"adam_eps", "1e-9", "Adam epsilon"},
    {"weight_decay", "0", "decoupled weight decay"},
    {"log_every", "0", "progress line every N steps (0 = quiet)"},
    {"beam", "5", "beam size (1 = greedy)"},
    {"length_penalty", "1.0", "length penalty alpha"},
    {"task", "", "copy | reverse | sort synthetic training data"},
    {"alphabet", "20", "synthetic alphabet size"},
    {"task_min_len", "5", "shortest synthetic training sequence"},
    {"task_max_len", "20", "longest synthetic training sequence"},
    {"samples", "10000", "synthetic training pairs"},
    {"data_seed", "1", "synthetic training data seed"},
    {"eval_samples", "1000", "synthetic evaluation pairs"},
    {"eval_min_len", "", "shortest synthetic evaluation sequence (default: task_min_len)"},
    {"eval_max_len", "", "longest synthetic evaluation sequence (default: task_max_len)"},
    {"eval_seed", "2", "synthetic evaluation data seed"},
    {"train_src", "", "training source file"},
    {"train_tgt", "", "training target file"},
    {"eval_src", "", "evaluation source file"},
    {"eval_tgt", "", "evaluation target file"},
    {"input", "", "generate: source file (default stdin)"},
    {"checkpoint", "", "checkpoint file (default: latest in out)"},
    {"out", "", "output directory"},
    {"min_freq", "1", "vocabulary frequency threshold"},
    {"buckets", "0,10,20,30,40", "source-length bucket boundaries"},
    {"smooth_bleu", "false", "smoothed BLEU for short sentences"},
    {"average", "1", "average the last N checkpoints"},
    {"seed", "1", "model and training seed"},
    {"precision", "float32", "float32 | float64"},
    {"bench_profile", "simple", "simple | muse"},
    {"bench_precision", "float32", "precision of the timed runs: float32 | float64"},
    {"bench_layers", "6", "benchmark blocks per side"},
    {"bench_d", "512", "benchmark hidden size"},
    {"bench_d_ff", "2048", "benchmark pointwise size"},
    {"bench_heads", "8", "benchmark heads"},
    {"bench_vocab", "1000", "benchmark vocabulary size"},
    {"bench_src_len", "20", "benchmark source length"},
    {"bench_tokens", "32", "tokens generated per benchmark input"},
    {"bench_inputs", "20", "inputs for the fused/unfused equivalence check"},
    {"bench_warmup", "2", "untimed warmup runs (at least 2)"},
    {"bench_reps", "5", "timed repetitions (at least 5)"},
};
// clang-format on

const KeySpec* find_key(const std::string& name) {
  for (const auto& k : kKeys) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ConfigError("key '" + key + "': expected " + expected + ", got '" + value + "'");
}

class Values {
 public:
  explicit Values(const std::map<std::string, std::string>& v) : v_(v) {}

  const std::string& str(const std::string& key) const { return v_.at(key); }

  std::size_t size(const std::string& key) const {
    const std::string& s = str(key);
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
      bad_value(key, s, "a non-negative integer");
    }
    return out;
  }

  double real(const std::string& key) const {
    const std::string& s = str(key);
    try {
      std::size_t used = 0;
      const double out = std::stod(s, &used);
      if (used != s.size()) bad_value(key, s, "a number");
      return out;
    } catch (const std::logic_error&) {
      bad_value(key, s, "a number");
    }
  }

  bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    bad_value(key, s, "true or false");
  }

  std::vector<std::size_t> sizes(const std::string& key) const {
    std::vector<std::size_t> out;
    const std::string& s = str(key);
    std::size_t start = 0;
    while (start <= s.size()) {
      const std::size_t comma = std::min(s.find(',', start), s.size());
      const std::string item = trim(s.substr(start, comma - start));
      std::size_t v = 0;
      auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (item.empty() || ec != std::errc() || p != item.data() + item.size()) {
        bad_value(key, s, "a comma-separated list of non-negative integers");
      }
      out.push_back(v);
      start = comma + 1;
    }
    return out;
  }

  template <typename E>
  E choice(const std::string& key, const std::vector<std::pair<std::string, E>>& options) const {
    const std::string& s = str(key);
    std::string names;
    for (const auto& [name, e] : options) {
      if (s == name) return e;
      names += names.empty() ? name : " | " + name;
    }
    bad_value(key, s, names);
  }

 private:
  const std::map<std::string, std::string>& v_;
};

void check_key(const std::string& key) {
  if (find_key(key) != nullptr) return;
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& k : kKeys) {
    const std::size_t dist = edit_distance(key, k.name);
    if (dist < best_d) {
      best_d = dist;
      best = k.name;
    }
  }
  std::string msg = "unknown configuration key '" + key + "'";
  if (best_d <= std::max<std::size_t>(3, key.size() / 2)) msg += "; did you mean '" + best + "'?";
  throw ConfigError(msg);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : kKeys) out.emplace_back(k.name);
  std::sort(out.begin(), out.end());
  return out;
}

std::string config_key_help(const std::string& key) {
  check_key(key);
  return find_key(key)->help;
}

std::string config_key_default(const std::string& key) {
  check_key(key);
  return find_key(key)->fallback;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FileError("cannot read config file " + path.string());
  KeyValues out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(f, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    check_key(key);
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

RunConfig resolve_config(const KeyValues& file_values, const KeyValues& overrides) {
  RunConfig cfg;
  for (const auto& k : kKeys) cfg.values[k.name] = k.fallback;
  for (const auto* source : {&file_values, &overrides}) {
    for (const auto& [key, value] : *source) {
      check_key(key);
      cfg.values[key] = value;
    }
  }
  const Values v(cfg.values);

  ModelConfig& m = cfg.model;
  m.n_layers = v.size("n_layers");
  m.d = v.size("d");
  m.d_ff = v.size("d_ff");
  m.heads = v.size("heads");
  m.kernel_sizes = v.sizes("kernel_sizes");
  m.mode = v.choice<BlockMode>("mode", {{"muse", BlockMode::muse}, {"muse_simple", BlockMode::muse_simple}});
  m.projection = v.choice<Projection>(
      "projection", {{"shared", Projection::shared}, {"separate", Projection::separate}});
  m.conv_kind = v.choice<ConvKind>(
      "conv_kind", {{"dynamic_depthwise", ConvKind::dynamic_depthwise}, {"plain", ConvKind::plain}});
  m.max_len = v.size("max_len");
  m.dropout = v.real("dropout");
  m.label_smoothing = v.real("label_smoothing");
  m.ln_eps = v.real("ln_eps");
  m.tie_embeddings = v.flag("tie_embeddings");
  m.positional_encoding = v.flag("positional_encoding");
  m.block(false).validate();
  if (m.max_len == 0) throw ConfigError("key 'max_len': must be positive");
  if (m.label_smoothing < 0.0 || m.label_smoothing >= 1.0) {
    throw ConfigError("key 'label_smoothing': must lie in [0, 1)");
  }

  TrainConfig& t = cfg.train;
  t.epochs = v.size("epochs");
  t.max_steps = v.size("max_steps");
  t.max_tokens = v.size("max_tokens");
  t.update_every = v.size("update_every");
  t.sort_by_length = v.flag("sort_by_length");
  t.clip_norm = v.real("clip_norm");
  t.adam = {v.real("beta1"), v.real("beta2"), v.real("adam_eps"), v.real("weight_decay")};
  t.schedule.kind = v.choice<ScheduleKind>(
      "schedule", {{"inverse_sqrt", ScheduleKind::inverse_sqrt}, {"cosine", ScheduleKind::cosine}});
  t.schedule.warmup = v.size("warmup");
  t.schedule.max_lr = v.real("lr");
  t.schedule.min_lr = v.real("min_lr");
  t.schedule.total = v.size("total_steps");
  t.log_every = v.size("log_every");
  if (t.epochs < 1) throw ConfigError("key 'epochs': must be at least 1");
  if (t.update_every < 1) throw ConfigError("key 'update_every': must be at least 1");
  if (t.max_tokens < 1) throw ConfigError("key 'max_tokens': must be at least 1");
  t.schedule.validate();

  cfg.beam.beam_size = v.size("beam");
  cfg.beam.alpha = v.real("length_penalty");
  cfg.beam.max_len = m.max_len;
  cfg.beam.validate();

  if (!v.str("task").empty()) {
    TaskSpec ts;
    ts.kind = parse_task_kind(v.str("task"));
    ts.alphabet = v.size("alphabet");
    ts.min_len = v.size("task_min_len");
    ts.max_len = v.size("task_max_len");
    ts.samples = v.size("samples");
    ts.seed = v.size("data_seed");
    ts.validate();
    cfg.task = ts;
    cfg.eval_task = ts;
    cfg.eval_task.samples = v.size("eval_samples");
    cfg.eval_task.seed = v.size("eval_seed");
    if (!v.str("eval_min_len").empty()) cfg.eval_task.min_len = v.size("eval_min_len");
    if (!v.str("eval_max_len").empty()) cfg.eval_task.max_len = v.size("eval_max_len");
    cfg.eval_task.validate();
  }
  cfg.train_src = v.str("train_src");
  cfg.train_tgt = v.str("train_tgt");
  cfg.eval_src = v.str("eval_src");
  cfg.eval_tgt = v.str("eval_tgt");
  cfg.input = v.str("input");
  cfg.checkpoint = v.str("checkpoint");
  cfg.out = v.str("out");
  cfg.min_freq = v.size("min_freq");
  cfg.buckets = v.sizes("buckets");
  for (std::size_t i = 1; i < cfg.buckets.size(); ++i) {
    if (cfg.buckets[i] <= cfg.buckets[i - 1]) {
      throw ConfigError("key 'buckets': boundaries must be strictly increasing");
    }
  }
  cfg.smooth_bleu = v.flag("smooth_bleu");
  cfg.average = v.size("average");
  if (cfg.average < 1) throw ConfigError("key 'average': must be at least 1");
  cfg.seed = v.size("seed");
  cfg.train.seed = cfg.seed;
  cfg.precision = v.choice<Precision>(
      "precision", {{"float32", Precision::float32}, {"float64", Precision::float64}});

  BenchConfig& b = cfg.bench;
  b.mode = v.choice<BlockMode>("bench_profile",
                               {{"simple", BlockMode::muse_simple}, {"muse", BlockMode::muse}});
  b.precision = v.choice<Precision>(
      "bench_precision", {{"float32", Precision::float32}, {"float64", Precision::float64}});
  b.layers = v.size("bench_layers");
  b.d = v.size("bench_d");
  b.d_ff = v.size("bench_d_ff");
  b.heads = v.size("bench_heads");
  b.vocab = v.size("bench_vocab");
  b.src_len = v.size("bench_src_len");
  b.gen_tokens = v.size("bench_tokens");
  b.inputs = v.size("bench_inputs");
  b.warmup = v.size("bench_warmup");
  b.reps = v.size("bench_reps");
  if (b.warmup < 2) throw ConfigError("key 'bench_warmup': at least 2 warmup runs are required");
  if (b.reps < 5) throw ConfigError("key 'bench_reps': at least 5 timed repetitions are required");
  if (b.gen_tokens < 1 || b.src_len < 1 || b.inputs < 1) {
    throw ConfigError("bench_tokens, bench_src_len and bench_inputs must be positive");
  }
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& file, const KeyValues& overrides) {
  return resolve_config(file.empty() ? KeyValues{} : read_config_file(file), overrides);
}

void write_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FileError("cannot write " + path.string());
  for (const auto& [key, value] : cfg.values) f << key << " = " << value << '\n';
}

}  // namespace muse
