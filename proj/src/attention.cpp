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

#include "headsel/attention.h"

#include <cmath>
#include <stdexcept>

namespace headsel {

namespace {

thread_local long g_head_forwards = 0;

constexpr double kCausalNegInf = -1e9;

Tensor causal_bias(int m, int n) {
  std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < n; ++j) v[static_cast<std::size_t>(i) * n + j] = kCausalNegInf;
  return Tensor({m, n}, std::move(v));
}

// Validates the mask-cardinality law for the pool's strategy.
void check_mask(const AttentionPool& pool, const std::vector<std::uint8_t>& row) {
  if (static_cast<int>(row.size()) != pool.candidate_heads())
    throw std::invalid_argument("selective_mha: mask over " + std::to_string(row.size()) +
                                " heads, pool has " + std::to_string(pool.candidate_heads()));
  int ones = 0;
  for (auto b : row) ones += b;
  if (ones != pool.active_heads)
    throw std::invalid_argument("selective_mha: mask selects " + std::to_string(ones) +
                                " heads, strategy requires exactly " +
                                std::to_string(pool.active_heads));
  if (pool.strategy == Strategy::Group) {
    GroupPartition part(pool.candidate_heads(), pool.active_heads);
    std::vector<int> per_group(static_cast<std::size_t>(part.groups), 0);
    for (int h = 0; h < part.candidate_heads; ++h)
      per_group[static_cast<std::size_t>(part.group_of(h))] += row[static_cast<std::size_t>(h)];
    for (int g = 0; g < part.groups; ++g)
      if (per_group[static_cast<std::size_t>(g)] != 1)
        throw std::invalid_argument("selective_mha: group " + std::to_string(g) +
                                    " selects " + std::to_string(per_group[g]) + " heads");
  }
}

struct GatedParts {
  std::vector<Tensor> parts;     // ascending head index
  std::vector<int> head_index;
};

GatedParts gated_head_outputs(const Tensor& q_in, const Tensor& kv_in,
                              const AttentionPool& pool,
                              const std::vector<std::uint8_t>* mask_row,
                              const std::vector<Tensor>* gates_row, bool causal) {
  if (mask_row) check_mask(pool, *mask_row);
  GatedParts out;
  for (int h = 0; h < pool.candidate_heads(); ++h) {
    if (mask_row && !(*mask_row)[static_cast<std::size_t>(h)]) continue;  // pruned
    Tensor part = attention_head(q_in, kv_in, pool.heads[static_cast<std::size_t>(h)], causal);
    if (gates_row && (*gates_row)[static_cast<std::size_t>(h)].defined())
      part = mul(part, (*gates_row)[static_cast<std::size_t>(h)]);
    out.parts.push_back(std::move(part));
    out.head_index.push_back(h);
  }
  return out;
}

}  // namespace

long head_forward_count() { return g_head_forwards; }
void reset_head_forward_count() { g_head_forwards = 0; }

Tensor attention_head(const Tensor& q_in, const Tensor& kv_in, const HeadParams& head,
                      bool causal) {
  ++g_head_forwards;
  Tensor q = add(matmul(q_in, head.wq), head.bq);
  Tensor k = add(matmul(kv_in, head.wk), head.bk);
  Tensor v = add(matmul(kv_in, head.wv), head.bv);
  double scale = 1.0 / std::sqrt(static_cast<double>(head.wq.dim(1)));
  Tensor scores = affine(matmul(q, transpose(k)), scale, 0.0);
  if (causal) scores = add(scores, causal_bias(scores.dim(0), scores.dim(1)));
  return matmul(softmax(scores, -1), v);
}

Tensor selective_concat(const Tensor& q_in, const Tensor& kv_in, const AttentionPool& pool,
                        const std::vector<std::uint8_t>* mask_row,
                        const std::vector<Tensor>* gates_row, bool causal) {
  GatedParts gp = gated_head_outputs(q_in, kv_in, pool, mask_row, gates_row, causal);
  return concat(gp.parts);
}

Tensor selective_mha(const Tensor& q_in, const Tensor& kv_in, const AttentionPool& pool,
                     const std::vector<std::uint8_t>* mask_row,
                     const std::vector<Tensor>* gates_row, bool causal) {
  GatedParts gp = gated_head_outputs(q_in, kv_in, pool, mask_row, gates_row, causal);
  Tensor out;
  for (std::size_t k = 0; k < gp.parts.size(); ++k) {
    Tensor proj = matmul(gp.parts[k],
                         pool.heads[static_cast<std::size_t>(gp.head_index[k])].wo_slice);
    out = out.defined() ? add(out, proj) : proj;
  }
  return add(out, pool.out_bias);
}

Tensor cross_attention(const Tensor& dec_x, const Tensor& enc_out, const AttentionPool& pool) {
  return selective_mha(dec_x, enc_out, pool, nullptr, nullptr, /*causal=*/false);
}

}  // namespace headsel
