// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>

#include "muse/decode.hpp"

namespace muse {

void BeamConfig::validate() const {
  if (beam_size < 1) throw ConfigError("beam_size must be at least 1");
  if (!(alpha >= 0.0)) throw ConfigError("length penalty alpha must be non-negative");
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
}

double length_penalty(std::size_t len, double alpha) {
  return std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
}

std::vector<double> log_softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

Hypothesis greedy_decode(const StepScorer& scorer, std::size_t max_len) {
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  Hypothesis h;
  h.tokens = {kBos};
  auto state = scorer.start();
  std::vector<double> lp = scorer.step(*state, kBos);
  while (true) {
    // max_element returns the first maximum, i.e. the smallest id on ties.
    const auto best = std::max_element(lp.begin(), lp.end());
    const int tok = static_cast<int>(best - lp.begin());
    h.tokens.push_back(tok);
    h.log_prob += *best;
    if (tok == kEos || h.length() >= max_len) break;
    lp = scorer.step(*state, tok);
  }
  h.finished = true;
  h.score = h.log_prob;
  return h;
}

namespace {

struct Live {
  Hypothesis hyp;
  std::unique_ptr<ScorerState> state;
  std::vector<double> next;  // log-probs for the following token
};

struct Candidate {
  std::size_t parent;
  int token;
  double log_prob;
};

// Higher score first; then shorter; then lexicographically smaller ids.
bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

}  // namespace

Hypothesis beam_search(const StepScorer& scorer, const BeamConfig& cfg) {
  cfg.validate();
  const std::size_t vocab = scorer.vocab_size();
  std::vector<Live> live;
  {
    Live root;
    root.hyp.tokens = {kBos};
    root.state = scorer.start();
    root.next = scorer.step(*root.state, kBos);
    live.push_back(std::move(root));
  }
  std::vector<Hypothesis> finished;
  auto best_finished = [&]() -> const Hypothesis* {
    const Hypothesis* best = nullptr;
    for (const auto& h : finished) {
      if (best == nullptr || better(h, *best)) best = &h;
    }
    return best;
  };

  for (std::size_t len = 1; len <= cfg.max_len && !live.empty(); ++len) {
    std::vector<Candidate> cands;
    cands.reserve(live.size() * vocab);
    for (std::size_t p = 0; p < live.size(); ++p) {
      for (std::size_t v = 0; v < vocab; ++v) {
        cands.push_back({p, static_cast<int>(v), live[p].hyp.log_prob + live[p].next[v]});
      }
    }
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      const auto& ta = live[a.parent].hyp.tokens;
      const auto& tb = live[b.parent].hyp.tokens;
      if (ta != tb) return ta < tb;
      return a.token < b.token;
    });

    const double penalty = length_penalty(len, cfg.alpha);
    const bool last = len == cfg.max_len;
    std::vector<Live> next_live;
    std::size_t kept = 0;
    for (std::size_t r = 0; r < cands.size() && kept < cfg.beam_size; ++r) {
      const Candidate& c = cands[r];
      Hypothesis h = live[c.parent].hyp;
      h.tokens.push_back(c.token);
      h.log_prob = c.log_prob;
      h.score = h.log_prob / penalty;
      if (last) {
        // max_len reached: the top beam_size candidates all finish here.
        h.finished = true;
        finished.push_back(std::move(h));
        ++kept;
        continue;
      }
      if (c.token == kEos) {
        // Set aside only when ranked inside the beam; the beam refills from
        // the unfinished candidates below it.
        if (r < cfg.beam_size) {
          h.finished = true;
          finished.push_back(std::move(h));
        }
        continue;
      }
      Live nl;
      nl.hyp = std::move(h);
      nl.state = live[c.parent].state->clone();
      nl.next = scorer.step(*nl.state, c.token);
      next_live.push_back(std::move(nl));
      ++kept;
    }
    if (last) break;
    live = std::move(next_live);

    // Stop once no live hypothesis can overtake the best finished one: log
    // probabilities only fall and the penalty is largest at max_len.
    if (const Hypothesis* best = best_finished(); best != nullptr && !live.empty()) {
      const double cap = length_penalty(cfg.max_len, cfg.alpha);
      double bound = -std::numeric_limits<double>::infinity();
      for (const auto& l : live) {
        const double lp = l.hyp.log_prob;
        bound = std::max(bound, lp < 0.0 ? lp / cap : lp);
      }
      if (best->score > bound) break;
    }
  }
  const Hypothesis* best = best_finished();
  if (best == nullptr) throw UsageError("beam search produced no hypothesis");
  return *best;
}

}  // namespace muse
