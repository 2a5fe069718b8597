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

#include <vector>

#include "headsel/selection.h"
#include "headsel/tensor.h"

namespace headsel {

// One attention head candidate: query/key/value transforms into the head
// width, plus this head's slice of the output projection.
struct HeadParams {
  Tensor wq, wk, wv;        // d x (d/H)
  Tensor bq, bk, bv;        // d/H
  Tensor wo_slice;          // (d/H) x d
};

// Pool of H' head candidates from which each task uses H. Shared strategy
// implies H' == H.
struct AttentionPool {
  int model_dim = 0;
  int head_width = 0;       // d / H, the active head width
  int active_heads = 0;     // H
  Strategy strategy = Strategy::Shared;
  std::vector<HeadParams> heads;  // H' entries
  Tensor out_bias;          // d

  int candidate_heads() const { return static_cast<int>(heads.size()); }
};

// Number of attention_head forward evaluations on this thread since the last
// reset. The pruning law: exactly H per selective layer per pass.
long head_forward_count();
void reset_head_forward_count();

// softmax(Q K^T / sqrt(d/H)) V with optional causal masking. Queries come
// from q_in, keys/values from kv_in (equal for self-attention).
Tensor attention_head(const Tensor& q_in, const Tensor& kv_in, const HeadParams& head,
                      bool causal);

// Gated head outputs concatenated in ascending head-index order (Eq. 1
// assembly): an [n x d] block tensor whose k-th block is the k-th smallest
// selected head. `mask_row`/`gates_row` may be null for a plain pool where
// all heads run ungated.
Tensor selective_concat(const Tensor& q_in, const Tensor& kv_in, const AttentionPool& pool,
                        const std::vector<std::uint8_t>* mask_row,
                        const std::vector<Tensor>* gates_row, bool causal);

// Full selective multi-head attention: gated head outputs, each passed
// through its own output-projection slice, summed, plus the output bias.
// Heads with a zero gate are never evaluated.
Tensor selective_mha(const Tensor& q_in, const Tensor& kv_in, const AttentionPool& pool,
                     const std::vector<std::uint8_t>* mask_row,
                     const std::vector<Tensor>* gates_row, bool causal);

// Standard H-head cross-attention (no head selection): queries from the
// decoder stream, keys/values from the encoder output.
Tensor cross_attention(const Tensor& dec_x, const Tensor& enc_out, const AttentionPool& pool);

}  // namespace headsel
