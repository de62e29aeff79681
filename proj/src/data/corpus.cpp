// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "muse/data.hpp"

namespace muse {

namespace {

const std::vector<std::string> kReserved{"<pad>", "<s>", "</s>", "<unk>"};

}  // namespace

Vocab::Vocab() : Vocab(kReserved) {}

Vocab::Vocab(const std::vector<std::string>& tokens_in_id_order) : tokens_(tokens_in_id_order) {
  if (tokens_.size() < kReserved.size() ||
      !std::equal(kReserved.begin(), kReserved.end(), tokens_.begin())) {
    throw DataError("vocabulary must start with <pad> <s> </s> <unk>");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary entry '" + tokens_[i] + "'");
    }
  }
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                    std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_tokens(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

Vocab build_vocab(const std::vector<std::string>& lines, std::size_t min_freq) {
  if (lines.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& line : lines) {
    for (const auto& tok : split_tokens(line)) ++freq[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (const auto& [tok, n] : freq) {
    const bool reserved = std::find(kReserved.begin(), kReserved.end(), tok) != kReserved.end();
    if (n >= min_freq && !reserved) entries.emplace_back(tok, n);
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = kReserved;
  for (const auto& e : entries) tokens.push_back(e.first);
  return Vocab(tokens);
}

void save_vocab(const std::filesystem::path& path, const Vocab& vocab) {
  write_lines(path, vocab.tokens());
}

Vocab load_vocab(const std::filesystem::path& path) { return Vocab(read_lines(path)); }

std::vector<int> encode_line(const std::string& text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& tok : split_tokens(text)) ids.push_back(vocab.id(tok));
  return ids;
}

std::string decode_ids(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "reverse") return TaskKind::reverse;
  if (name == "sort") return TaskKind::sort;
  throw ConfigError("unknown task '" + name + "' (expected copy, reverse or sort)");
}

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::sort: return "sort";
  }
  return "?";
}

void TaskSpec::validate() const {
  if (alphabet < 1) throw ConfigError("alphabet must be at least 1");
  if (min_len < 1) throw ConfigError("min_len must be at least 1");
  if (max_len < min_len) throw ConfigError("max_len must be >= min_len");
}

ParallelCorpus generate_task(const TaskSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> len_dist(spec.min_len, spec.max_len);
  std::uniform_int_distribution<std::size_t> sym_dist(1, spec.alphabet);
  ParallelCorpus c;
  for (std::size_t s = 0; s < spec.samples; ++s) {
    std::vector<std::size_t> sym(len_dist(rng));
    for (auto& x : sym) x = sym_dist(rng);
    std::vector<std::size_t> out = sym;
    if (spec.kind == TaskKind::reverse) std::reverse(out.begin(), out.end());
    if (spec.kind == TaskKind::sort) std::sort(out.begin(), out.end());
    auto join = [](const std::vector<std::size_t>& v) {
      std::string line;
      for (std::size_t x : v) {
        if (!line.empty()) line += ' ';
        line += std::to_string(x);
      }
      return line;
    };
    c.src.push_back(join(sym));
    c.tgt.push_back(join(out));
  }
  return c;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FileError("cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(f, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FileError("cannot write " + path.string());
  for (const auto& l : lines) f << l << '\n';
}

ParallelCorpus read_parallel(const std::filesystem::path& src, const std::filesystem::path& tgt) {
  ParallelCorpus c{read_lines(src), read_lines(tgt)};
  if (c.src.size() != c.tgt.size()) {
    throw DataError(src.string() + " has " + std::to_string(c.src.size()) + " lines but " +
                    tgt.string() + " has " + std::to_string(c.tgt.size()));
  }
  return c;
}

std::vector<Example> to_examples(const ParallelCorpus& corpus, const Vocab& src_vocab,
                                 const Vocab& tgt_vocab) {
  std::vector<Example> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Example ex;
    ex.src = encode_line(corpus.src[i], src_vocab);
    ex.src.push_back(kEos);
    ex.tgt.push_back(kBos);
    for (int id : encode_line(corpus.tgt[i], tgt_vocab)) ex.tgt.push_back(id);
    ex.tgt.push_back(kEos);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace muse
