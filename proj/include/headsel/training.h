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
#include <deque>
#include <string>
#include <vector>

#include "headsel/model.h"
#include "headsel/rng.h"
#include "headsel/tensor.h"

namespace headsel {

struct TauSchedule {
  enum class Kind { Fixed, Linear };
  Kind kind = Kind::Fixed;
  double tau0 = 1.0;
  double tau1 = 1.0;
  double frac = 0.5;  // fraction of max_steps over which the linear ramp runs

  static TauSchedule fixed(double tau);
  static TauSchedule linear(double tau0, double tau1, double frac);
  // "fixed:1.0" or "linear:2.0:0.5:0.5"
  static TauSchedule parse(const std::string& text);
  std::string str() const;
};

double tau_at(const TauSchedule& schedule, long step, long max_steps);

struct TrainConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  int batch_size = 32;
  long max_steps = 2000;
  double kl_weight = 0.01;  // beta in the objective
  TauSchedule tau_schedule;
  int patience = 10;
  int avg_last_k = 5;
  std::uint64_t seed = 1;
};

// All stochasticity in a run flows from these streams, each derived from the
// master seed, so e.g. Gumbel draws never perturb batch order.
struct TrainState {
  long step = 0;
  int epoch = 0;
  double best_valid = -1e300;
  int epochs_since_improve = 0;
  Rng gumbel_rng;
  Rng dropout_rng;
  Rng data_rng;

  explicit TrainState(std::uint64_t seed)
      : gumbel_rng(derive_seed(seed, "gumbel")),
        dropout_rng(derive_seed(seed, "dropout")),
        data_rng(derive_seed(seed, "data-order")) {}
};

// Adam with global gradient-norm clipping over the owned parameters.
// step() consumes and zeroes the gradients.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, const TrainConfig& cfg);
  void step();
  long steps_taken() const { return t_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_, clip_;
  long t_ = 0;
};

// A sample in model-token space, ready for teacher forcing.
struct EncodedSample {
  std::vector<int> enc_in, dec_in, targets;
  int enc_key = 0, dec_key = 0, adapter_task = -1;
};

EncodedSample encode_sample(const Sample& s, const TokenCodec& codec,
                            const TaskConditioner& cond);
std::vector<EncodedSample> encode_samples(const std::vector<Sample>& samples,
                                          const TokenCodec& codec,
                                          const TaskConditioner& cond);

// The minimization objective: mean token cross-entropy under the sampled
// head selection plus beta * kl / token_count. An undefined kl counts as 0.
Tensor elbo_loss(const Tensor& logits, const std::vector<int>& targets, const Tensor& kl,
                 double beta, long token_count);

// One optimizer step over a batch: noisy selection (one draw per task key),
// backward, clipped Adam update. Deterministic given the state's rngs.
// Throws on a non-finite loss, naming the first non-finite parameter.
double train_step(TransformerModel& model, const std::vector<const EncodedSample*>& batch,
                  TrainState& state, const TrainConfig& cfg, Adam& adam);

// Registers this epoch's validation metric (higher is better, strictly) and
// reports whether patience is exhausted.
bool early_stop(TrainState& state, double valid_metric, int patience);

// Element-wise mean of the named parameter arrays of k checkpoint files;
// the result is written into `model`. All checkpoints must share an
// identical config echo.
void checkpoint_average(const std::vector<std::string>& paths, TransformerModel& model);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double kl = 0.0;
  double valid_metric = 0.0;
  double tau = 0.0;
};

struct FitOptions {
  std::string checkpoint_dir;  // empty: average in memory only
};

struct FitResult {
  std::vector<EpochLog> log;
  long steps_run = 0;
  std::vector<std::string> checkpoints_kept;
};

// Full training loop: epoch shuffling, per-epoch validation (teacher-forced
// token accuracy), early stopping, and averaging of the last k epoch
// checkpoints into the final model.
FitResult fit(TransformerModel& model, const std::vector<EncodedSample>& train,
              const std::vector<EncodedSample>& valid, const TrainConfig& cfg,
              const FitOptions& options = {});

}  // namespace headsel
