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

#include "headsel/rng.h"
#include "headsel/tensor.h"

namespace headsel {

enum class Strategy { Shared, Subset, Group };

Strategy strategy_from_string(const std::string& s);
std::string to_string(Strategy s);

// Gate construction mode. Hard: forward uses the binary mask value, gradient
// flows through the relaxed posterior (straight-through). Relaxed: forward
// uses bit * q, which keeps the gated objective differentiable end to end
// (the mode the gradient oracle runs in).
enum class GateMode { Hard, Relaxed };

// Bernoulli prior over head selection, p(z=1) = H / H'.
struct SelectionPrior {
  double p_select;
  SelectionPrior(int active_heads, int candidate_heads);
};

// Contiguous partition of H' candidates into `groups` groups of r = H'/H.
struct GroupPartition {
  int candidate_heads;
  int groups;
  int r;
  GroupPartition(int candidate_heads, int groups);
  int group_of(int head) const { return head / r; }
};

// Relaxed head-selection posterior for one task: q[layer] is an [H'] tensor
// with entries strictly inside (0, 1).
struct RelaxedPosterior {
  std::vector<Tensor> q;
  bool noisy = false;
  int layers() const { return static_cast<int>(q.size()); }
  int heads() const { return q.empty() ? 0 : q[0].size(); }
};

// Binary selection decisions, bits[layer][head].
struct HeadMask {
  std::vector<std::vector<std::uint8_t>> bits;
  int layers() const { return static_cast<int>(bits.size()); }
  int heads() const { return bits.empty() ? 0 : static_cast<int>(bits[0].size()); }
  int popcount(int layer) const;
  bool operator==(const HeadMask&) const = default;
};

// Per-(task, layer) logit vectors phi over H' candidates. The deselect-class
// logit is fixed at 0, so one scalar per (task, layer, head) and the
// noise-free posterior is sigmoid(phi / tau).
class SelectionLogits {
 public:
  SelectionLogits() = default;
  SelectionLogits(int tasks, int layers, int heads);  // zero-initialized

  int tasks() const { return tasks_; }
  int layers() const { return layers_; }
  int heads() const { return heads_; }

  Tensor& at(int task, int layer);
  const Tensor& at(int task, int layer) const;

  // actual number of stored logit scalars; equals tasks*layers*heads
  long long stored_params() const;

  // per-layer logits for one task
  std::vector<Tensor> task_logits(int task) const;
  // elementwise mean over tasks, the fallback for unseen task keys
  std::vector<Tensor> mean_logits() const;

 private:
  int tasks_ = 0, layers_ = 0, heads_ = 0;
  std::vector<Tensor> values_;  // tasks x layers tensors of [heads]
};

// Gumbel-Softmax relaxed posterior, Bernoulli case with the deselect logit
// pinned to 0: q = sigmoid((phi + g1 - g0) / tau) with g0, g1 ~ Gumbel(0,1)
// when noisy, and q = sigmoid(phi / tau) otherwise. Differentiable w.r.t.
// phi. `recorded_noise`, when given, receives the per-layer g1 - g0 draws.
RelaxedPosterior gumbel_posterior(const std::vector<Tensor>& layer_logits, double tau,
                                  Rng& rng, bool noisy,
                                  std::vector<std::vector<double>>* recorded_noise = nullptr);

// Same posterior with externally fixed noise deltas (g1 - g0 per head); used
// to replay a recorded draw, e.g. under a finite-difference oracle.
RelaxedPosterior gumbel_posterior_fixed_noise(const std::vector<Tensor>& layer_logits,
                                              double tau,
                                              const std::vector<std::vector<double>>& noise);

// Top-H heads per layer by posterior value; ties resolve to the lower index.
HeadMask subset_mask(const RelaxedPosterior& posterior, int active_heads);

// Argmax within each group; ties resolve to the lower index.
HeadMask group_mask(const RelaxedPosterior& posterior, const GroupPartition& partition);

// Gate values for every (layer, head): forward equals the mask bit, gradient
// w.r.t. phi equals the gradient of the relaxed q.
std::vector<std::vector<Tensor>> straight_through_gate(const HeadMask& mask,
                                                       const RelaxedPosterior& posterior);

// Sum over (layer, head) of KL(Bernoulli(q) || Bernoulli(p)). Requires the
// noise-free posterior; the KL of the objective is between distributions,
// not samples.
Tensor kl_bernoulli(const RelaxedPosterior& posterior, const SelectionPrior& prior);

long long selection_param_count(long long tasks, long long candidate_heads, long long layers);

// subset: C(H', H); group: (H'/H)^H
unsigned long long search_space_size(Strategy strategy, int active_heads, int candidate_heads);

// Selection decisions for one task key: mask, per-(layer, head) gates for
// the selected heads, and the KL regularizer when a prior applies.
struct SelectionOutcome {
  HeadMask mask;
  std::vector<std::vector<Tensor>> gates;  // undefined tensors where unselected
  Tensor kl;                               // undefined when no prior applies
};

struct SelectionOptions {
  Strategy strategy = Strategy::Subset;
  int active_heads = 0;
  double tau = 1.0;
  bool noisy = false;
  GateMode mode = GateMode::Hard;
  bool with_kl = false;
  Rng* rng = nullptr;  // required when noisy
};

SelectionOutcome select_heads(const std::vector<Tensor>& layer_logits,
                              const SelectionOptions& opts);

// CSV export: rows = layers, columns = head indices, values in {0,1}.
void write_mask_csv(const std::string& path, const HeadMask& mask);
HeadMask read_mask_csv(const std::string& path);

}  // namespace headsel
