// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "muse/cli.hpp"

namespace {

struct Subcommand {
  CLI::App* app = nullptr;
  std::string config;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

void add_config_flags(Subcommand& sc) {
  sc.app->add_option("--config", sc.config, "key = value configuration file");
  for (const auto& key : muse::config_keys()) {
    std::string help = muse::config_key_help(key);
    const std::string fallback = muse::config_key_default(key);
    if (!fallback.empty()) help += " [default: " + fallback + "]";
    sc.options[key] = sc.app->add_option("--" + key, sc.values[key], help);
  }
}

muse::RunConfig resolve(const Subcommand& sc) {
  muse::KeyValues overrides;
  for (const auto& [key, opt] : sc.options) {
    if (opt->count() > 0) overrides.emplace_back(key, sc.values.at(key));
  }
  return muse::parse_config(sc.config, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MUSE sequence-to-sequence toolkit"};
  app.require_subcommand(1);

  Subcommand train, evaluate, generate, bench, gates;
  train.app = app.add_subcommand("train", "train a model; writes checkpoints and metrics.csv");
  evaluate.app = app.add_subcommand("evaluate", "length-bucketed evaluation; writes eval.csv");
  generate.app = app.add_subcommand("generate", "translate lines from --input or stdin");
  bench.app = app.add_subcommand("bench", "fused vs unfused greedy decoding throughput");
  gates.app = app.add_subcommand("inspect-gates", "per-layer kernel gate weights; writes gates.csv");
  for (Subcommand* sc : {&train, &evaluate, &generate, &bench, &gates}) add_config_flags(*sc);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train.app->parsed()) return muse::cmd_train(resolve(train), std::cerr);
    if (evaluate.app->parsed()) return muse::cmd_evaluate(resolve(evaluate), std::cout);
    if (generate.app->parsed()) return muse::cmd_generate(resolve(generate), std::cin, std::cout);
    if (bench.app->parsed()) return muse::cmd_bench(resolve(bench), std::cout);
    if (gates.app->parsed()) return muse::cmd_inspect_gates(resolve(gates), std::cout);
  } catch (const muse::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const muse::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
