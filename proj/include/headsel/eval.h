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

#include <string>
#include <vector>

#include "headsel/model.h"
#include "headsel/selection.h"
#include "headsel/tasks.h"

namespace headsel {

struct EncodedSample;

// Levenshtein(hyp, ref) / |ref|; the token-level analog of word error rate.
// May exceed 1. Throws on an empty reference.
double edit_error_rate(const std::vector<int>& hyp, const std::vector<int>& ref);

long levenshtein(const std::vector<int>& a, const std::vector<int>& b);

// Pairwise co-selection counts: counts[i][j] = sum over layers of
// popcount(mask_i AND mask_j). Symmetric; diagonal = H * layers.
struct SharingMatrix {
  std::vector<std::string> task_names;
  std::vector<std::vector<int>> counts;
};
SharingMatrix sharing_matrix(const std::vector<HeadMask>& masks,
                             const std::vector<std::string>& names);

// load[l][h] = number of tasks whose mask selects head h in layer l.
struct HeadLoad {
  std::vector<std::vector<int>> load;
};
HeadLoad head_load(const std::vector<HeadMask>& masks);

// Per-layer coefficient of variation (population stddev / mean) of the head
// load; lower means more balanced.
std::vector<double> load_balance_score(const HeadLoad& load);

// ---- model-level metrics ---------------------------------------------------

// Noise-free selection decisions for the given key sets (hard gates; the
// mask is temperature-independent since TopH/argmax commute with sigmoid).
SelectionPlan inference_plan(const TransformerModel& model, const std::set<int>& enc_keys,
                             const std::set<int>& dec_keys);

// Fraction of target positions whose argmax logit matches, teacher-forced.
double teacher_forced_token_accuracy(const TransformerModel& model,
                                     const std::vector<EncodedSample>& samples);

struct TaskMetrics {
  std::string task;
  int n = 0;
  double seq_acc = 0.0;    // exact-match rate of greedy decodes
  double token_acc = 0.0;  // teacher-forced
  double edit_err = 0.0;   // mean edit error rate of greedy decodes
};

// Greedy-decodes every sample and scores exact match plus edit error rate.
TaskMetrics evaluate_task(const TransformerModel& model, const TokenCodec& codec,
                          const TaskConditioner& cond, const std::string& task_name,
                          const std::vector<Sample>& samples, int max_len);

// ---- CSV export -------------------------------------------------------------

void write_sharing_csv(const std::string& path, const SharingMatrix& m);
void write_head_load_csv(const std::string& path, const HeadLoad& load);
// rows: layer index, cv value
void write_balance_csv(const std::string& path, const std::vector<double>& cv);
void write_metrics_csv(const std::string& path, const std::vector<TaskMetrics>& rows,
                       const std::vector<std::string>& split_kind);

}  // namespace headsel
