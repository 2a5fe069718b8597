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
#include <iosfwd>
#include <string>
#include <vector>

namespace headsel {

// Deterministic sequence transformations. Token ids live in [0, vocab);
// shift wraps modulo vocab.
enum class TransformKind { Copy, Reverse, ShiftK, SortAsc, SwapAdjacent, Interleave };

struct Transform {
  TransformKind kind = TransformKind::Copy;
  int k = 0;  // shift amount for ShiftK
};

std::vector<int> apply_transform(const Transform& t, const std::vector<int>& src, int vocab);

// One synthetic task: a transformation family plus resource sizes and the
// tag pair used as encoder/decoder selection keys.
struct TaskSpec {
  std::string name;
  Transform transform;
  int src_tag = 0;
  int tgt_tag = 0;
  int n_train = 0;
  int n_valid = 0;
  int n_test = 0;
  int len_min = 4;
  int len_max = 10;
  int vocab = 32;
};

enum class Split { Train, Valid, Test };
std::string to_string(Split s);

struct Sample {
  std::vector<int> src, tgt;  // tgt == transform(src) exactly
  int src_tag = 0;
  int tgt_tag = 0;
};

// Pure function of (spec, split, seed). Sources are uniform over the task
// vocabulary; splits are made disjoint by rejecting any source sequence
// already present in an earlier split of the same task.
std::vector<Sample> generate(const TaskSpec& spec, Split split, std::uint64_t seed);

// Canonical 4-task suite with conflicting transforms and a 10:1 resource
// imbalance: copy/reverse high-resource, sort/swap low-resource.
std::vector<TaskSpec> interference_suite(std::uint64_t seed);

// Composition tasks over (src attribute, tgt attribute) pairs; three pairs
// appear only at test time while both of their attributes are trained.
struct ZeroShotSuite {
  std::vector<TaskSpec> train;
  std::vector<TaskSpec> test_only;
};
ZeroShotSuite zero_shot_suite(std::uint64_t seed);

// One sample per line: src_tag, tgt_tag, space-joined src ids, space-joined
// tgt ids, tab-separated.
void dump_samples(std::ostream& out, const std::vector<Sample>& samples);

// Mapping between task-space token ids and model-space ids. Model ids 0/1
// are EOS/PAD, tag tokens follow, then the data alphabet.
struct TokenCodec {
  int n_tags = 0;
  int alphabet = 0;

  static constexpr int kEos = 0;
  static constexpr int kPad = 1;

  int tag_token(int tag) const { return 2 + tag; }
  int data_token(int t) const { return 2 + n_tags + t; }
  int vocab_size() const { return 2 + n_tags + alphabet; }

  // [src tag] + src data + [EOS]
  std::vector<int> encoder_input(const Sample& s) const;
  // [tgt tag] + tgt data  (teacher-forcing prefix)
  std::vector<int> decoder_input(const Sample& s) const;
  // tgt data + [EOS]
  std::vector<int> decoder_targets(const Sample& s) const;
  // strips the model-id offset; ids below the data range are dropped
  std::vector<int> to_data_ids(const std::vector<int>& model_ids) const;
};

TokenCodec build_codec(const std::vector<TaskSpec>& specs);

}  // namespace headsel
