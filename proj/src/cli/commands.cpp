// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdio>
#include <iostream>

#include "muse/cli.hpp"

namespace muse {

namespace {

const std::filesystem::path& require_out(const RunConfig& cfg) {
  if (cfg.out.empty()) throw ConfigError("key 'out' is required (output directory)");
  return cfg.out;
}

std::filesystem::path vocab_path(const RunConfig& cfg) { return require_out(cfg) / "vocab.txt"; }

ParallelCorpus training_corpus(const RunConfig& cfg) {
  if (cfg.task) return generate_task(*cfg.task);
  if (cfg.train_src.empty() || cfg.train_tgt.empty()) {
    throw ConfigError("key 'task' or both 'train_src' and 'train_tgt' are required for training");
  }
  return read_parallel(cfg.train_src, cfg.train_tgt);
}

ParallelCorpus evaluation_corpus(const RunConfig& cfg) {
  if (!cfg.eval_src.empty() || !cfg.eval_tgt.empty()) {
    if (cfg.eval_src.empty() || cfg.eval_tgt.empty()) {
      throw ConfigError("keys 'eval_src' and 'eval_tgt' must be given together");
    }
    return read_parallel(cfg.eval_src, cfg.eval_tgt);
  }
  if (cfg.task) return generate_task(cfg.eval_task);
  throw ConfigError("key 'eval_src'/'eval_tgt' or 'task' is required for evaluation");
}

ModelConfig model_config(const RunConfig& cfg, const Vocab& vocab) {
  ModelConfig m = cfg.model;
  m.src_vocab = vocab.size();
  m.tgt_vocab = vocab.size();
  m.validate();
  return m;
}

void check_lengths(const std::vector<Example>& data, std::size_t max_len) {
  for (const auto& ex : data) {
    if (ex.src.size() > max_len || ex.tgt.size() - 1 > max_len) {
      throw ConfigError("key 'max_len' (" + std::to_string(max_len) +
                        ") is shorter than a sequence of length " +
                        std::to_string(std::max(ex.src.size(), ex.tgt.size() - 1)));
    }
  }
}

std::vector<std::filesystem::path> epoch_checkpoints(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (std::filesystem::is_directory(dir)) {
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("checkpoint_epoch", 0) == 0 && e.path().extension() == ".bin") {
        out.push_back(e.path());
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Checkpoint inference_checkpoint(const RunConfig& cfg, std::ostream& log) {
  if (!cfg.checkpoint.empty()) {
    if (cfg.average > 1) throw ConfigError("keys 'checkpoint' and 'average' cannot be combined");
    return load_checkpoint(cfg.checkpoint);
  }
  const auto all = epoch_checkpoints(require_out(cfg));
  if (all.empty()) throw FileError("no checkpoints found in " + cfg.out.string());
  const std::size_t k = std::min(cfg.average, all.size());
  if (k < cfg.average) {
    log << "only " << all.size() << " checkpoints available; averaging " << k << '\n';
  }
  std::vector<Checkpoint> picked;
  for (std::size_t i = all.size() - k; i < all.size(); ++i) picked.push_back(load_checkpoint(all[i]));
  return k == 1 ? picked.front() : average_checkpoints(picked);
}

template <typename T>
Seq2Seq<T> load_model(const RunConfig& cfg, const Vocab& vocab, std::ostream& log) {
  Seq2Seq<T> model(model_config(cfg, vocab), cfg.seed);
  apply_checkpoint(model, inference_checkpoint(cfg, log));
  return model;
}

template <typename T>
int train_as(const RunConfig& cfg, std::ostream& log) {
  const auto& out = require_out(cfg);
  const ParallelCorpus corpus = training_corpus(cfg);
  if (corpus.size() == 0) throw UsageError("training corpus is empty");
  std::vector<std::string> lines = corpus.src;
  lines.insert(lines.end(), corpus.tgt.begin(), corpus.tgt.end());
  const Vocab vocab = build_vocab(lines, cfg.min_freq);
  const std::vector<Example> data = to_examples(corpus, vocab, vocab);
  check_lengths(data, cfg.model.max_len);

  std::filesystem::create_directories(out);
  save_vocab(vocab_path(cfg), vocab);
  write_config(out / "config.txt", cfg);

  Seq2Seq<T> model(model_config(cfg, vocab), cfg.seed);
  TrainConfig tc = cfg.train;
  tc.out_dir = out;
  log << "training " << model.parameter_count() << " parameters on " << data.size()
      << " pairs, vocabulary " << vocab.size() << '\n';
  const TrainResult r = train_loop(model, data, tc);
  log << "finished " << r.steps << " optimizer steps over " << r.epochs_run << " epochs";
  if (!r.log.empty()) log << ", final loss " << r.log.back().loss;
  log << '\n';
  return 0;
}

template <typename T>
int evaluate_as(const RunConfig& cfg, std::ostream& log) {
  const Vocab vocab = load_vocab(vocab_path(cfg));
  const Seq2Seq<T> model = load_model<T>(cfg, vocab, log);
  const ParallelCorpus corpus = evaluation_corpus(cfg);
  if (corpus.size() == 0) throw UsageError("evaluation corpus is empty");
  const std::vector<Example> data = to_examples(corpus, vocab, vocab);
  const EvalReport report = bucketed_eval(model, data, cfg.buckets, cfg.beam, cfg.smooth_bleu);
  write_eval_csv(cfg.out / "eval.csv", report);
  char line[160];
  std::snprintf(line, sizeof line, "pairs %zu token_acc %.4f exact_match %.4f bleu %.2f\n",
                report.overall.count, report.overall.token_acc, report.overall.exact_match,
                report.overall.bleu);
  log << line;
  return 0;
}

template <typename T>
int generate_as(const RunConfig& cfg, std::istream& in, std::ostream& out) {
  const Vocab vocab = load_vocab(vocab_path(cfg));
  const Seq2Seq<T> model = load_model<T>(cfg, vocab, std::cerr);
  auto emit = [&](const std::string& line) {
    std::vector<int> src = encode_line(line, vocab);
    src.push_back(kEos);
    out << decode_ids(translate(model, src, cfg.beam), vocab) << '\n';
  };
  if (cfg.input.empty()) {
    for (std::string line; std::getline(in, line);) emit(line);
  } else {
    for (const auto& line : read_lines(cfg.input)) emit(line);
  }
  return 0;
}

template <typename T>
int inspect_gates_as(const RunConfig& cfg, std::ostream& log) {
  const Vocab vocab = load_vocab(vocab_path(cfg));
  const Seq2Seq<T> model = load_model<T>(cfg, vocab, log);
  const auto report = gate_weight_report(model);
  write_gate_csv(cfg.out / "gates.csv", report);
  for (const auto& g : report) {
    log << g.layer << " small/large " << g.small_to_large << '\n';
  }
  return 0;
}

}  // namespace

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  return cfg.precision == Precision::float64 ? train_as<double>(cfg, log) : train_as<float>(cfg, log);
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
  return cfg.precision == Precision::float64 ? evaluate_as<double>(cfg, log)
                                             : evaluate_as<float>(cfg, log);
}

int cmd_generate(const RunConfig& cfg, std::istream& in, std::ostream& out) {
  return cfg.precision == Precision::float64 ? generate_as<double>(cfg, in, out)
                                             : generate_as<float>(cfg, in, out);
}

int cmd_inspect_gates(const RunConfig& cfg, std::ostream& log) {
  return cfg.precision == Precision::float64 ? inspect_gates_as<double>(cfg, log)
                                             : inspect_gates_as<float>(cfg, log);
}

int cmd_bench(const RunConfig& cfg, std::ostream& out) {
  const BenchResult r = run_bench(cfg.bench, cfg.seed);
  char buf[256];
  std::snprintf(buf, sizeof buf, "mode,tokens_per_sec,speedup\nunfused,%.2f,1.000\nfused,%.2f,%.3f\n",
                r.unfused_tokens_per_sec, r.fused_tokens_per_sec, r.speedup);
  out << buf;
  if (!cfg.out.empty()) {
    std::filesystem::create_directories(cfg.out);
    write_lines(cfg.out / "bench.csv", {"mode,tokens_per_sec,speedup",
                                        "unfused," + std::to_string(r.unfused_tokens_per_sec) + ",1",
                                        "fused," + std::to_string(r.fused_tokens_per_sec) + "," +
                                            std::to_string(r.speedup)});
  }
  return 0;
}

}  // namespace muse
