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

#include "headsel/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include "headsel/training.h"

namespace headsel {

long levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<long> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<long>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<long>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      long sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double edit_error_rate(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (ref.empty()) throw std::invalid_argument("edit_error_rate: empty reference");
  return static_cast<double>(levenshtein(hyp, ref)) / static_cast<double>(ref.size());
}

SharingMatrix sharing_matrix(const std::vector<HeadMask>& masks,
                             const std::vector<std::string>& names) {
  if (masks.empty()) throw std::invalid_argument("sharing_matrix: no masks");
  if (names.size() != masks.size())
    throw std::invalid_argument("sharing_matrix: name/mask count mismatch");
  int layers = masks[0].layers(), heads = masks[0].heads();
  for (const auto& m : masks)
    if (m.layers() != layers || m.heads() != heads)
      throw std::invalid_argument("sharing_matrix: masks come from different models");
  SharingMatrix out;
  out.task_names = names;
  std::size_t t = masks.size();
  out.counts.assign(t, std::vector<int>(t, 0));
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) {
      int c = 0;
      for (int l = 0; l < layers; ++l)
        for (int h = 0; h < heads; ++h)
          c += masks[i].bits[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)] &
               masks[j].bits[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
      out.counts[i][j] = c;
    }
  return out;
}

HeadLoad head_load(const std::vector<HeadMask>& masks) {
  if (masks.empty()) throw std::invalid_argument("head_load: no masks");
  int layers = masks[0].layers(), heads = masks[0].heads();
  HeadLoad out;
  out.load.assign(static_cast<std::size_t>(layers), std::vector<int>(heads, 0));
  for (const auto& m : masks) {
    if (m.layers() != layers || m.heads() != heads)
      throw std::invalid_argument("head_load: masks come from different models");
    for (int l = 0; l < layers; ++l)
      for (int h = 0; h < heads; ++h)
        out.load[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)] +=
            m.bits[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
  }
  return out;
}

std::vector<double> load_balance_score(const HeadLoad& load) {
  std::vector<double> out;
  for (const auto& row : load.load) {
    double mean = 0.0;
    for (int x : row) mean += x;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (int x : row) var += (x - mean) * (x - mean);
    var /= static_cast<double>(row.size());
    out.push_back(mean > 0.0 ? std::sqrt(var) / mean : 0.0);
  }
  return out;
}

SelectionPlan inference_plan(const TransformerModel& model, const std::set<int>& enc_keys,
                             const std::set<int>& dec_keys) {
  PlanOptions opts;
  opts.tau = 1.0;
  opts.noisy = false;
  opts.mode = GateMode::Hard;
  opts.with_kl = false;
  return model.make_plan(enc_keys, dec_keys, opts);
}

double teacher_forced_token_accuracy(const TransformerModel& model,
                                     const std::vector<EncodedSample>& samples) {
  if (samples.empty()) return 0.0;
  std::set<int> enc_keys, dec_keys;
  for (const auto& s : samples) {
    enc_keys.insert(s.enc_key);
    dec_keys.insert(s.dec_key);
  }
  SelectionPlan plan = inference_plan(model, enc_keys, dec_keys);
  ForwardCtx ctx;
  ctx.plan = &plan;

  long correct = 0, total = 0;
  for (const auto& s : samples) {
    Tensor enc_out = model.encode(s.enc_in, s.enc_key, ctx, s.adapter_task);
    Tensor logits = model.decode(s.dec_in, enc_out, s.dec_key, ctx, s.adapter_task);
    int v = logits.dim(1);
    for (std::size_t i = 0; i < s.targets.size(); ++i) {
      const double* row = logits.value().data() + i * static_cast<std::size_t>(v);
      int best = 0;
      for (int j = 1; j < v; ++j)
        if (row[j] > row[best]) best = j;
      correct += best == s.targets[i];
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

TaskMetrics evaluate_task(const TransformerModel& model, const TokenCodec& codec,
                          const TaskConditioner& cond, const std::string& task_name,
                          const std::vector<Sample>& samples, int max_len) {
  TaskMetrics out;
  out.task = task_name;
  out.n = static_cast<int>(samples.size());
  if (samples.empty()) return out;

  std::set<int> enc_keys, dec_keys;
  for (const auto& s : samples) {
    enc_keys.insert(cond.encoder_key(s));
    dec_keys.insert(cond.decoder_key(s));
  }
  SelectionPlan plan = inference_plan(model, enc_keys, dec_keys);
  ForwardCtx ctx;
  ctx.plan = &plan;

  long exact = 0;
  double err_sum = 0.0;
  long tok_correct = 0, tok_total = 0;
  for (const auto& s : samples) {
    int enc_key = cond.encoder_key(s), dec_key = cond.decoder_key(s);
    int adapter = cond.adapter_task(s);
    std::vector<int> hyp_model = model.greedy_generate(
        codec.encoder_input(s), enc_key, dec_key, codec.tag_token(s.tgt_tag), max_len, ctx,
        adapter);
    std::vector<int> hyp = codec.to_data_ids(hyp_model);
    exact += hyp == s.tgt;
    err_sum += edit_error_rate(hyp, s.tgt);

    Tensor enc_out = model.encode(codec.encoder_input(s), enc_key, ctx, adapter);
    Tensor logits = model.decode(codec.decoder_input(s), enc_out, dec_key, ctx, adapter);
    std::vector<int> targets = codec.decoder_targets(s);
    int v = logits.dim(1);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const double* row = logits.value().data() + i * static_cast<std::size_t>(v);
      int best = 0;
      for (int j = 1; j < v; ++j)
        if (row[j] > row[best]) best = j;
      tok_correct += best == targets[i];
      ++tok_total;
    }
  }
  out.seq_acc = static_cast<double>(exact) / static_cast<double>(samples.size());
  out.edit_err = err_sum / static_cast<double>(samples.size());
  out.token_acc = tok_total ? static_cast<double>(tok_correct) / tok_total : 0.0;
  return out;
}

// ---- CSV export -------------------------------------------------------------

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

void write_double(std::ofstream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  out << buf;
}

}  // namespace

void write_sharing_csv(const std::string& path, const SharingMatrix& m) {
  auto out = open_out(path);
  out << "task";
  for (const auto& n : m.task_names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < m.task_names.size(); ++i) {
    out << m.task_names[i];
    for (std::size_t j = 0; j < m.task_names.size(); ++j) out << ',' << m.counts[i][j];
    out << '\n';
  }
}

void write_head_load_csv(const std::string& path, const HeadLoad& load) {
  auto out = open_out(path);
  for (const auto& row : load.load) {
    for (std::size_t h = 0; h < row.size(); ++h) {
      if (h) out << ',';
      out << row[h];
    }
    out << '\n';
  }
}

void write_balance_csv(const std::string& path, const std::vector<double>& cv) {
  auto out = open_out(path);
  out << "layer,cv\n";
  for (std::size_t l = 0; l < cv.size(); ++l) {
    out << l << ',';
    write_double(out, cv[l]);
    out << '\n';
  }
}

void write_metrics_csv(const std::string& path, const std::vector<TaskMetrics>& rows,
                       const std::vector<std::string>& split_kind) {
  if (split_kind.size() != rows.size())
    throw std::invalid_argument("write_metrics_csv: split column size mismatch");
  auto out = open_out(path);
  out << "task,split,n,seq_acc,token_acc,edit_err\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << rows[i].task << ',' << split_kind[i] << ',' << rows[i].n << ',';
    write_double(out, rows[i].seq_acc);
    out << ',';
    write_double(out, rows[i].token_acc);
    out << ',';
    write_double(out, rows[i].edit_err);
    out << '\n';
  }
}

}  // namespace headsel
