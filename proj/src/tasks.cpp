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

#include "headsel/tasks.h"

#include <algorithm>
#include <ostream>
#include <set>
#include <stdexcept>

#include "headsel/rng.h"

namespace headsel {

std::vector<int> apply_transform(const Transform& t, const std::vector<int>& src, int vocab) {
  std::vector<int> out = src;
  switch (t.kind) {
    case TransformKind::Copy:
      break;
    case TransformKind::Reverse:
      std::reverse(out.begin(), out.end());
      break;
    case TransformKind::ShiftK:
      for (auto& x : out) x = (x + t.k) % vocab;
      break;
    case TransformKind::SortAsc:
      std::sort(out.begin(), out.end());
      break;
    case TransformKind::SwapAdjacent:
      for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
      break;
    case TransformKind::Interleave: {
      std::vector<int> evens, odds;
      for (std::size_t i = 0; i < out.size(); ++i)
        (i % 2 == 0 ? evens : odds).push_back(out[i]);
      out = std::move(evens);
      out.insert(out.end(), odds.begin(), odds.end());
      break;
    }
  }
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

namespace {

void validate_spec(const TaskSpec& spec) {
  if (spec.vocab <= 0) throw std::invalid_argument("task '" + spec.name + "': vocab must be positive");
  if (spec.transform.kind == TransformKind::ShiftK &&
      (spec.transform.k < 0 || spec.transform.k >= spec.vocab))
    throw std::invalid_argument("task '" + spec.name + "': shift must be in [0, vocab)");
  if (spec.len_min < 1 || spec.len_min > spec.len_max)
    throw std::invalid_argument("task '" + spec.name + "': bad length range");
  if (spec.n_train < 0 || spec.n_valid < 0 || spec.n_test < 0)
    throw std::invalid_argument("task '" + spec.name + "': negative sample count");
}

int split_count(const TaskSpec& spec, Split split) {
  switch (split) {
    case Split::Train: return spec.n_train;
    case Split::Valid: return spec.n_valid;
    case Split::Test: return spec.n_test;
  }
  return 0;
}

// Draws `count` sources for one split, rejecting any source already in
// `taken` (earlier splits), and inserts the drawn sources into `taken`.
std::vector<std::vector<int>> draw_sources(const TaskSpec& spec, Split split,
                                           std::uint64_t seed,
                                           std::set<std::vector<int>>& taken) {
  Rng rng(derive_seed(seed, "data:" + spec.name + ":" + to_string(split)));
  int count = split_count(spec, split);
  std::vector<std::vector<int>> sources;
  sources.reserve(static_cast<std::size_t>(count));
  long attempts = 0;
  const long max_attempts = 1000L * std::max(count, 1) + 1000;
  while (static_cast<int>(sources.size()) < count) {
    if (++attempts > max_attempts)
      throw std::invalid_argument("task '" + spec.name +
                                  "': sequence space too small for disjoint splits");
    int len = rng.uniform_int(spec.len_min, spec.len_max);
    std::vector<int> src(static_cast<std::size_t>(len));
    for (auto& x : src) x = rng.uniform_int(0, spec.vocab - 1);
    if (taken.count(src)) continue;
    sources.push_back(src);
    // later splits of this task must not reuse this source
    if (split != Split::Test) taken.insert(std::move(src));
  }
  return sources;
}

}  // namespace

std::vector<Sample> generate(const TaskSpec& spec, Split split, std::uint64_t seed) {
  validate_spec(spec);
  std::set<std::vector<int>> taken;
  // rebuild earlier splits' source sets so any single split is reproducible
  // on its own while splits stay pairwise disjoint
  if (split == Split::Valid || split == Split::Test) draw_sources(spec, Split::Train, seed, taken);
  if (split == Split::Test) draw_sources(spec, Split::Valid, seed, taken);
  std::vector<std::vector<int>> sources = draw_sources(spec, split, seed, taken);

  std::vector<Sample> out;
  out.reserve(sources.size());
  for (auto& src : sources) {
    Sample s;
    s.tgt = apply_transform(spec.transform, src, spec.vocab);
    s.src = std::move(src);
    s.src_tag = spec.src_tag;
    s.tgt_tag = spec.tgt_tag;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TaskSpec> interference_suite(std::uint64_t /*seed*/) {
  // copy and reverse want opposite positional attention; sort and swap add
  // further conflicting structure at a tenth of the data
  std::vector<TaskSpec> suite;
  auto make = [](const std::string& name, Transform tr, int tag, int n_train) {
    TaskSpec s;
    s.name = name;
    s.transform = tr;
    s.src_tag = tag;
    s.tgt_tag = tag;
    s.n_train = n_train;
    s.n_valid = 64;
    s.n_test = 200;
    s.len_min = 4;
    s.len_max = 10;
    s.vocab = 32;
    return s;
  };
  suite.push_back(make("copy", {TransformKind::Copy, 0}, 0, 2000));
  suite.push_back(make("reverse", {TransformKind::Reverse, 0}, 1, 2000));
  suite.push_back(make("sort_asc", {TransformKind::SortAsc, 0}, 2, 200));
  suite.push_back(make("swap_adjacent", {TransformKind::SwapAdjacent, 0}, 3, 200));
  return suite;
}

ZeroShotSuite zero_shot_suite(std::uint64_t /*seed*/) {
  // src attribute i encodes inputs with shift a_i, tgt attribute j decodes
  // with shift b_j; the pair (i, j) realizes shift (b_j - a_i) mod vocab, so
  // held-out pairs are solvable from their attributes alone
  const int vocab = 32;
  const int a[3] = {0, 1, 2};
  const int b[3] = {0, 2, 4};
  auto make = [&](int i, int j, bool train_pair) {
    TaskSpec s;
    s.name = "zs_s" + std::to_string(i) + "_t" + std::to_string(j);
    int shift = ((b[j] - a[i]) % vocab + vocab) % vocab;
    s.transform = {TransformKind::ShiftK, shift};
    s.src_tag = i;
    s.tgt_tag = j;
    s.n_train = train_pair ? 600 : 0;
    s.n_valid = train_pair ? 50 : 0;
    s.n_test = 150;
    s.len_min = 4;
    s.len_max = 10;
    s.vocab = vocab;
    return s;
  };
  ZeroShotSuite suite;
  const std::set<std::pair<int, int>> held_out = {{1, 2}, {2, 1}, {2, 2}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      bool zero_shot = held_out.count({i, j}) > 0;
      (zero_shot ? suite.test_only : suite.train).push_back(make(i, j, !zero_shot));
    }
  return suite;
}

void dump_samples(std::ostream& out, const std::vector<Sample>& samples) {
  for (const auto& s : samples) {
    out << s.src_tag << '\t' << s.tgt_tag << '\t';
    for (std::size_t i = 0; i < s.src.size(); ++i) out << (i ? " " : "") << s.src[i];
    out << '\t';
    for (std::size_t i = 0; i < s.tgt.size(); ++i) out << (i ? " " : "") << s.tgt[i];
    out << '\n';
  }
}

std::vector<int> TokenCodec::encoder_input(const Sample& s) const {
  std::vector<int> out;
  out.reserve(s.src.size() + 2);
  out.push_back(tag_token(s.src_tag));
  for (int t : s.src) out.push_back(data_token(t));
  out.push_back(kEos);
  return out;
}

std::vector<int> TokenCodec::decoder_input(const Sample& s) const {
  std::vector<int> out;
  out.reserve(s.tgt.size() + 1);
  out.push_back(tag_token(s.tgt_tag));
  for (int t : s.tgt) out.push_back(data_token(t));
  return out;
}

std::vector<int> TokenCodec::decoder_targets(const Sample& s) const {
  std::vector<int> out;
  out.reserve(s.tgt.size() + 1);
  for (int t : s.tgt) out.push_back(data_token(t));
  out.push_back(kEos);
  return out;
}

std::vector<int> TokenCodec::to_data_ids(const std::vector<int>& model_ids) const {
  std::vector<int> out;
  for (int id : model_ids)
    if (id >= 2 + n_tags) out.push_back(id - 2 - n_tags);
  return out;
}

TokenCodec build_codec(const std::vector<TaskSpec>& specs) {
  TokenCodec codec;
  for (const auto& s : specs) {
    codec.n_tags = std::max({codec.n_tags, s.src_tag + 1, s.tgt_tag + 1});
    codec.alphabet = std::max(codec.alphabet, s.vocab);
  }
  return codec;
}

}  // namespace headsel
