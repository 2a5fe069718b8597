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

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "headsel/attention.h"
#include "headsel/selection.h"
#include "headsel/tasks.h"
#include "headsel/tensor.h"

namespace headsel {

struct ModelConfig {
  int d = 32;
  int ffn = 64;
  int layers_enc = 2;
  int layers_dec = 2;
  int heads = 4;             // H
  int candidate_heads = 4;   // H'
  Strategy strategy = Strategy::Shared;
  int vocab_src = 0;         // model-space sizes, specials included
  int vocab_tgt = 0;
  double dropout = 0.1;
  bool select_in_encoder = true;
  bool select_in_decoder = true;
  int adapter_dim = 0;   // per-task adapters when > 0
  int adapter_tasks = 0;
  int enc_task_count = 1;  // task keys on each side (T for the logit tables)
  int dec_task_count = 1;

  void validate() const;
  bool encoder_selective() const { return strategy != Strategy::Shared && select_in_encoder; }
  bool decoder_selective() const { return strategy != Strategy::Shared && select_in_decoder; }
  std::string echo() const;                      // key=value lines
  static ModelConfig from_echo(const std::string& text);
};

// Maps sample metadata to the integer task keys driving head selection:
// source attribute on the encoder side, target attribute on the decoder
// side. Adapters are keyed by the (src, tgt) pair and have no key for
// unseen pairs.
struct TaskConditioner {
  std::function<int(const Sample&)> encoder_key;
  std::function<int(const Sample&)> decoder_key;
  std::map<std::pair<int, int>, int> pair_task;  // (src_tag, tgt_tag) -> adapter task

  int adapter_task(const Sample& s) const {
    auto it = pair_task.find({s.src_tag, s.tgt_tag});
    return it == pair_task.end() ? -1 : it->second;
  }
};

TaskConditioner make_conditioner(const std::vector<TaskSpec>& train_specs);

// Head-selection decisions for every task key touched by a forward pass,
// sampled once per (task key, layer) per step. `kl` sums the regularizer
// over all keyed posteriors (defined only when built with KL).
struct SelectionPlan {
  std::map<int, SelectionOutcome> enc, dec;
  Tensor kl;
};

struct PlanOptions {
  double tau = 1.0;
  bool noisy = false;
  GateMode mode = GateMode::Hard;
  bool with_kl = false;
  Rng* rng = nullptr;
};

struct ForwardCtx {
  bool training = false;
  Rng* dropout_rng = nullptr;
  const SelectionPlan* plan = nullptr;
};

// Ordered, named parameter registry.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  const Tensor* find(const std::string& name) const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct EncoderLayer {
  AttentionPool attn;
  Tensor ln1_g, ln1_b;
  Tensor w1, b1, w2, b2;
  Tensor ln2_g, ln2_b;
};

struct DecoderLayer {
  AttentionPool self_attn;
  AttentionPool cross;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
  Tensor w1, b1, w2, b2;
};

struct AdapterLayer {
  Tensor ln_g, ln_b;
  Tensor down, b_down;  // d x a
  Tensor up, b_up;      // a x d, zero-initialized so step 0 is the identity
};

class TransformerModel {
 public:
  TransformerModel(ModelConfig cfg, Rng& init_rng);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // parameters receiving gradient updates; honors the frozen-backbone and
  // frozen-selection flags
  std::vector<std::pair<std::string, Tensor>> trainable() const;
  void zero_grad();

  SelectionLogits* encoder_logits() { return enc_logits_ ? enc_logits_.get() : nullptr; }
  SelectionLogits* decoder_logits() { return dec_logits_ ? dec_logits_.get() : nullptr; }
  void set_selection_frozen(bool on) { selection_frozen_ = on; }

  // Appends per-task residual adapters to every encoder and decoder layer
  // and freezes the backbone. The caller is expected to have loaded trained
  // backbone weights; calling this on a fresh model is legal but pointless.
  void enable_adapters(int adapter_dim, int task_count);
  bool backbone_frozen() const { return backbone_frozen_; }

  // Per-layer logits for one task key on each side; an out-of-range key
  // falls back to the element-wise mean of the trained task logits.
  std::vector<Tensor> encoder_task_logits(int key) const;
  std::vector<Tensor> decoder_task_logits(int key) const;

  SelectionPlan make_plan(const std::set<int>& enc_keys, const std::set<int>& dec_keys,
                          const PlanOptions& opts) const;

  Tensor encode(const std::vector<int>& tokens, int enc_key, const ForwardCtx& ctx,
                int adapter_task = -1) const;
  Tensor decode(const std::vector<int>& prefix, const Tensor& enc_out, int dec_key,
                const ForwardCtx& ctx, int adapter_task = -1) const;
  std::vector<int> greedy_generate(const std::vector<int>& src_tokens, int enc_key,
                                   int dec_key, int start_token, int max_len,
                                   const ForwardCtx& ctx, int adapter_task = -1) const;

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);
  // config echo stored in a checkpoint file, without loading parameters
  static std::string checkpoint_config(const std::string& path);

 private:
  Tensor embed_with_positions(const Tensor& table, const std::vector<int>& ids,
                              const ForwardCtx& ctx) const;
  Tensor apply_adapter(const Tensor& x, const AdapterLayer& a) const;
  Tensor maybe_dropout(const Tensor& x, const ForwardCtx& ctx) const;
  const SelectionOutcome* plan_outcome(const ForwardCtx& ctx, bool encoder, int key) const;

  ModelConfig cfg_;
  ParamStore params_;
  Tensor enc_embed_, dec_embed_;
  std::vector<EncoderLayer> enc_layers_;
  std::vector<DecoderLayer> dec_layers_;
  Tensor out_w_, out_b_;
  std::unique_ptr<SelectionLogits> enc_logits_, dec_logits_;
  // adapters_[task][layer]: encoder layers first, then decoder layers
  std::vector<std::vector<AdapterLayer>> adapters_;
  bool backbone_frozen_ = false;
  bool selection_frozen_ = false;
};

}  // namespace headsel
