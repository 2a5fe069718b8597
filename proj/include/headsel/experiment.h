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

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "headsel/eval.h"
#include "headsel/model.h"
#include "headsel/tasks.h"
#include "headsel/training.h"

namespace headsel {

// Flat key=value experiment configuration. File values are overridden by
// CLI flags; the fully resolved set is echoed into every results directory.
class ExperimentConfig {
 public:
  static ExperimentConfig defaults();
  static ExperimentConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  std::string get(const std::string& key) const;
  int get_int(const std::string& key) const;
  long get_long(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<std::uint64_t> seed_list() const;  // "seeds" if set, else {seed}

  std::string echo() const;  // sorted key=value lines

 private:
  std::map<std::string, std::string> values_;
};

struct SuiteData {
  std::vector<TaskSpec> train_specs;
  std::vector<TaskSpec> test_only_specs;  // zero-shot pairs
  TokenCodec codec;
  TaskConditioner cond;
  int max_len = 0;  // greedy decode cap
};

SuiteData load_suite(const std::string& name, std::uint64_t seed);

struct RunResult {
  std::string out_dir;
  std::vector<TaskMetrics> test;       // per train task, test split
  std::vector<TaskMetrics> zero_shot;  // test-only pairs; empty when n/a
  bool adapter_na_zero_shot = false;
  std::vector<EpochLog> log;
};

// Trains one model and writes the full results-directory contract: config
// echo, training log, rolling + averaged checkpoints, metrics file, and
// per-key mask CSVs.
RunResult cmd_train(const ExperimentConfig& cfg);

// Evaluates a saved checkpoint on the suite's test split.
RunResult cmd_eval(const ExperimentConfig& cfg);

struct SweepRow {
  std::string strategy;
  int hprime = 0;
  std::string seed;  // seed value or "mean"
  double seq_acc = 0.0;
  double edit_err = 0.0;
  std::string status;  // "ok" or "skipped"
};

// Trains one model per (H', seed) cell and aggregates per-cell means.
// Group-strategy cells with H' not divisible by H are recorded as skipped.
std::vector<SweepRow> cmd_sweep_hprime(const ExperimentConfig& cfg);

struct AblationRow {
  std::string variant;  // encoder_only / decoder_only / encoder_decoder
  std::string seed;
  double seq_acc = 0.0;
  double edit_err = 0.0;
};

std::vector<AblationRow> cmd_ablation_encdec(const ExperimentConfig& cfg);

// Computes sharing matrices, head loads and balance scores from the mask
// CSVs of each results directory; outputs land next to the inputs. With
// several directories a combined balance table with a run column is written
// under out_dir. Directories without masks are reported and skipped.
int cmd_analyze(const std::vector<std::string>& run_dirs, const std::string& out_dir);

void cmd_dump_data(const ExperimentConfig& cfg);

// Runs cells[i]() for all i on `jobs` worker threads. Each cell must be
// independent; per-cell determinism makes parallel and serial runs emit
// identical outputs.
void run_cells(int jobs, std::vector<std::function<void()>> cells);

}  // namespace headsel
