/* headsel - learned attention-head sharing for multi-task sequence models.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 */

#include <cstdio>
#include <deque>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "headsel/experiment.h"

using namespace headsel;

namespace {

// Shared flag plumbing: config file first, then CLI flags override.
struct CommonFlags {
  std::string config_path;
  // deque: CLI11 stores pointers into the elements, so no reallocation
  std::deque<std::pair<std::string, std::string>> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key=value config file");
    add_override(app, "--seed", "seed", "master seed");
    add_override(app, "--seeds", "seeds", "comma-separated seed list for multi-seed runs");
    add_override(app, "--strategy", "strategy", "shared|subset|group|adapter");
    add_override(app, "--hprime", "hprime", "head candidates H'");
    add_override(app, "--out", "out", "output directory");
    add_override(app, "--suite", "suite", "interference|zero_shot");
    add_override(app, "--beta", "beta", "KL weight");
    add_override(app, "--tau-schedule", "tau_schedule", "fixed:T or linear:T0:T1:FRAC");
    add_override(app, "--steps", "max_steps", "optimizer steps");
    add_override(app, "--batch", "batch_size", "batch size in sentences");
    add_override(app, "--lr", "lr", "learning rate");
    add_override(app, "--backbone", "backbone", "backbone checkpoint for adapter training");
    add_override(app, "--adapter-dim", "adapter_dim", "adapter intermediate dimension");
    add_override(app, "--hprime-list", "hprime_list", "sweep H' values");
    add_override(app, "--jobs", "jobs", "parallel cells for sweeps");
    add_override(app, "--checkpoint", "checkpoint", "checkpoint to evaluate");
    add_override(app, "--patience", "patience", "early-stopping patience in epochs");
    add_override(app, "--avg-last-k", "avg_last_k", "checkpoints to average");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig::defaults()
                                               : ExperimentConfig::from_file(config_path);
    for (const auto& [key, value] : overrides)
      if (!value.empty()) cfg.set(key, value);
    return cfg;
  }

 private:
  void add_override(CLI::App* app, const std::string& flag, const std::string& key,
                    const std::string& help) {
    overrides.emplace_back(key, "");
    auto* slot = &overrides.back().second;
    app->add_option(flag, *slot, help);
  }
};

void print_metrics(const RunResult& result) {
  for (const auto& m : result.test)
    std::printf("%-16s test       seq_acc=%.4f token_acc=%.4f edit_err=%.4f (n=%d)\n",
                m.task.c_str(), m.seq_acc, m.token_acc, m.edit_err, m.n);
  for (const auto& m : result.zero_shot)
    std::printf("%-16s zero_shot  seq_acc=%.4f token_acc=%.4f edit_err=%.4f (n=%d)\n",
                m.task.c_str(), m.seq_acc, m.token_acc, m.edit_err, m.n);
  if (result.adapter_na_zero_shot)
    std::printf("zero-shot pairs: n/a for the adapter baseline (no adapter for unseen pairs)\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"task-conditioned attention-head selection experiments"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, sweep_flags, ablation_flags, dump_flags;
  std::vector<std::string> analyze_dirs;
  std::string analyze_out;

  auto* train_cmd = app.add_subcommand("train", "train one model and write a results directory");
  train_flags.attach(train_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved checkpoint");
  eval_flags.attach(eval_cmd);
  auto* sweep_cmd = app.add_subcommand("sweep-hprime", "train over an H' grid and aggregate");
  sweep_flags.attach(sweep_cmd);
  auto* ablation_cmd =
      app.add_subcommand("ablation-encdec", "encoder/decoder selection ablation");
  ablation_flags.attach(ablation_cmd);
  auto* analyze_cmd = app.add_subcommand("analyze", "sharing/load analyses from mask CSVs");
  analyze_cmd->add_option("dirs", analyze_dirs, "results directories")->required();
  analyze_cmd->add_option("--out", analyze_out, "directory for combined outputs");
  auto* dump_cmd = app.add_subcommand("dump-data", "write the synthetic datasets as TSV");
  dump_flags.attach(dump_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      RunResult result = cmd_train(train_flags.resolve());
      print_metrics(result);
      std::printf("results written to %s\n", result.out_dir.c_str());
    } else if (eval_cmd->parsed()) {
      cmd_eval(eval_flags.resolve());
    } else if (sweep_cmd->parsed()) {
      auto rows = cmd_sweep_hprime(sweep_flags.resolve());
      for (const auto& r : rows)
        if (r.seed == "mean")
          std::printf("%s H'=%-3d mean seq_acc=%.4f edit_err=%.4f\n", r.strategy.c_str(),
                      r.hprime, r.seq_acc, r.edit_err);
    } else if (ablation_cmd->parsed()) {
      auto rows = cmd_ablation_encdec(ablation_flags.resolve());
      for (const auto& r : rows)
        if (r.seed == "mean")
          std::printf("%-16s mean seq_acc=%.4f edit_err=%.4f\n", r.variant.c_str(), r.seq_acc,
                      r.edit_err);
    } else if (analyze_cmd->parsed()) {
      int failures = cmd_analyze(analyze_dirs, analyze_out);
      if (failures == static_cast<int>(analyze_dirs.size())) return 1;
    } else if (dump_cmd->parsed()) {
      cmd_dump_data(dump_flags.resolve());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
