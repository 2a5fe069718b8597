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

#include "headsel/selection.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace headsel {

namespace {
// keeps posterior entries strictly inside (0, 1) even when sigmoid saturates
constexpr double kPosteriorClamp = 1e-12;
}  // namespace

Strategy strategy_from_string(const std::string& s) {
  if (s == "shared") return Strategy::Shared;
  if (s == "subset") return Strategy::Subset;
  if (s == "group") return Strategy::Group;
  throw std::invalid_argument("unknown strategy '" + s + "'");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Shared: return "shared";
    case Strategy::Subset: return "subset";
    case Strategy::Group: return "group";
  }
  return "?";
}

SelectionPrior::SelectionPrior(int active_heads, int candidate_heads) {
  if (active_heads <= 0 || candidate_heads <= 0 || active_heads >= candidate_heads)
    throw std::invalid_argument("selection prior needs 0 < H < H', got H=" +
                                std::to_string(active_heads) + " H'=" +
                                std::to_string(candidate_heads));
  p_select = static_cast<double>(active_heads) / candidate_heads;
}

GroupPartition::GroupPartition(int candidate_heads, int groups)
    : candidate_heads(candidate_heads), groups(groups) {
  if (groups <= 0 || candidate_heads <= 0 || candidate_heads % groups != 0)
    throw std::invalid_argument("group partition needs H' divisible by H, got H'=" +
                                std::to_string(candidate_heads) + " H=" +
                                std::to_string(groups));
  r = candidate_heads / groups;
}

int HeadMask::popcount(int layer) const {
  int n = 0;
  for (auto b : bits[static_cast<std::size_t>(layer)]) n += b;
  return n;
}

SelectionLogits::SelectionLogits(int tasks, int layers, int heads)
    : tasks_(tasks), layers_(layers), heads_(heads) {
  if (tasks <= 0 || layers <= 0 || heads <= 0)
    throw std::invalid_argument("selection logits need positive dimensions");
  values_.reserve(static_cast<std::size_t>(tasks) * layers);
  for (int t = 0; t < tasks; ++t)
    for (int l = 0; l < layers; ++l)
      values_.emplace_back(std::vector<int>{heads}, 0.0, /*requires_grad=*/true);
}

Tensor& SelectionLogits::at(int task, int layer) {
  return values_[static_cast<std::size_t>(task) * layers_ + layer];
}

const Tensor& SelectionLogits::at(int task, int layer) const {
  return values_[static_cast<std::size_t>(task) * layers_ + layer];
}

long long SelectionLogits::stored_params() const {
  long long n = 0;
  for (const auto& t : values_) n += t.size();
  return n;
}

std::vector<Tensor> SelectionLogits::task_logits(int task) const {
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(layers_));
  for (int l = 0; l < layers_; ++l) out.push_back(at(task, l));
  return out;
}

std::vector<Tensor> SelectionLogits::mean_logits() const {
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(layers_));
  for (int l = 0; l < layers_; ++l) {
    std::vector<double> mean(static_cast<std::size_t>(heads_), 0.0);
    for (int t = 0; t < tasks_; ++t) {
      const auto& v = at(t, l).value();
      for (int h = 0; h < heads_; ++h) mean[static_cast<std::size_t>(h)] += v[h];
    }
    for (auto& m : mean) m /= tasks_;
    out.emplace_back(std::vector<int>{heads_}, std::move(mean));
  }
  return out;
}

RelaxedPosterior gumbel_posterior(const std::vector<Tensor>& layer_logits, double tau,
                                  Rng& rng, bool noisy,
                                  std::vector<std::vector<double>>* recorded_noise) {
  if (tau <= 0.0) throw std::invalid_argument("gumbel_posterior: tau must be positive");
  RelaxedPosterior post;
  post.noisy = noisy;
  if (recorded_noise) recorded_noise->clear();
  for (const auto& phi : layer_logits) {
    std::vector<double> delta(static_cast<std::size_t>(phi.size()), 0.0);
    if (noisy) {
      for (auto& d : delta) {
        double g1 = rng.gumbel();
        double g0 = rng.gumbel();
        d = g1 - g0;
      }
    }
    if (recorded_noise) recorded_noise->push_back(delta);
    Tensor noise(phi.shape(), std::move(delta));
    post.q.push_back(clamp01(sigmoid(affine(add(phi, noise), 1.0 / tau, 0.0)),
                             kPosteriorClamp));
  }
  return post;
}

RelaxedPosterior gumbel_posterior_fixed_noise(const std::vector<Tensor>& layer_logits,
                                              double tau,
                                              const std::vector<std::vector<double>>& noise) {
  if (tau <= 0.0) throw std::invalid_argument("gumbel_posterior: tau must be positive");
  if (noise.size() != layer_logits.size())
    throw std::invalid_argument("gumbel_posterior: noise layer count mismatch");
  RelaxedPosterior post;
  post.noisy = true;
  for (std::size_t l = 0; l < layer_logits.size(); ++l) {
    const auto& phi = layer_logits[l];
    Tensor noise_t(phi.shape(), noise[l]);
    post.q.push_back(clamp01(sigmoid(affine(add(phi, noise_t), 1.0 / tau, 0.0)),
                             kPosteriorClamp));
  }
  return post;
}

HeadMask subset_mask(const RelaxedPosterior& posterior, int active_heads) {
  int h_prime = posterior.heads();
  if (active_heads > h_prime)
    throw std::invalid_argument("subset_mask: H=" + std::to_string(active_heads) +
                                " exceeds H'=" + std::to_string(h_prime));
  HeadMask mask;
  for (const auto& q : posterior.q) {
    std::vector<int> order(static_cast<std::size_t>(h_prime));
    std::iota(order.begin(), order.end(), 0);
    // stable sort by descending q keeps the lower index first on ties
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return q.value()[static_cast<std::size_t>(a)] > q.value()[static_cast<std::size_t>(b)];
    });
    std::vector<std::uint8_t> row(static_cast<std::size_t>(h_prime), 0);
    for (int k = 0; k < active_heads; ++k) row[static_cast<std::size_t>(order[k])] = 1;
    mask.bits.push_back(std::move(row));
  }
  return mask;
}

HeadMask group_mask(const RelaxedPosterior& posterior, const GroupPartition& partition) {
  if (partition.candidate_heads != posterior.heads())
    throw std::invalid_argument("group_mask: partition over " +
                                std::to_string(partition.candidate_heads) +
                                " heads, posterior has " + std::to_string(posterior.heads()));
  HeadMask mask;
  for (const auto& q : posterior.q) {
    std::vector<std::uint8_t> row(static_cast<std::size_t>(partition.candidate_heads), 0);
    for (int g = 0; g < partition.groups; ++g) {
      int best = g * partition.r;
      for (int h = best + 1; h < (g + 1) * partition.r; ++h)
        if (q.value()[static_cast<std::size_t>(h)] > q.value()[static_cast<std::size_t>(best)])
          best = h;
      row[static_cast<std::size_t>(best)] = 1;
    }
    mask.bits.push_back(std::move(row));
  }
  return mask;
}

std::vector<std::vector<Tensor>> straight_through_gate(const HeadMask& mask,
                                                       const RelaxedPosterior& posterior) {
  if (mask.layers() != posterior.layers() || mask.heads() != posterior.heads())
    throw std::invalid_argument("straight_through_gate: mask/posterior indexing mismatch");
  std::vector<std::vector<Tensor>> gates(static_cast<std::size_t>(mask.layers()));
  for (int l = 0; l < mask.layers(); ++l) {
    gates[static_cast<std::size_t>(l)].resize(static_cast<std::size_t>(mask.heads()));
    for (int h = 0; h < mask.heads(); ++h) {
      double bit = mask.bits[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
      gates[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)] = straight_through(
          Tensor::scalar(bit), index(posterior.q[static_cast<std::size_t>(l)], h));
    }
  }
  return gates;
}

Tensor kl_bernoulli(const RelaxedPosterior& posterior, const SelectionPrior& prior) {
  if (posterior.noisy)
    throw std::invalid_argument("kl_bernoulli expects the noise-free posterior");
  double p = prior.p_select;
  double log_p = std::log(p), log_1p = std::log(1.0 - p);
  Tensor kl;
  for (const auto& q : posterior.q) {
    Tensor one_minus_q = affine(q, -1.0, 1.0);
    Tensor term = add(mul(q, affine(log_elem(q), 1.0, -log_p)),
                      mul(one_minus_q, affine(log_elem(one_minus_q), 1.0, -log_1p)));
    Tensor s = sum(term);
    kl = kl.defined() ? add(kl, s) : s;
  }
  return kl.defined() ? kl : Tensor::scalar(0.0);
}

long long selection_param_count(long long tasks, long long candidate_heads, long long layers) {
  if (tasks <= 0 || candidate_heads <= 0 || layers <= 0)
    throw std::invalid_argument("selection_param_count: arguments must be positive");
  return tasks * candidate_heads * layers;
}

unsigned long long search_space_size(Strategy strategy, int active_heads, int candidate_heads) {
  if (active_heads <= 0 || candidate_heads <= 0)
    throw std::invalid_argument("search_space_size: arguments must be positive");
  switch (strategy) {
    case Strategy::Shared:
      return 1;
    case Strategy::Subset: {
      if (active_heads > candidate_heads)
        throw std::invalid_argument("search_space_size: H exceeds H'");
      unsigned long long c = 1;
      // C(n, k) with k = min(k, n-k), multiplicative form
      int n = candidate_heads, k = std::min(active_heads, candidate_heads - active_heads);
      for (int i = 1; i <= k; ++i)
        c = c * static_cast<unsigned long long>(n - k + i) / static_cast<unsigned long long>(i);
      return c;
    }
    case Strategy::Group: {
      GroupPartition part(candidate_heads, active_heads);  // validates divisibility
      unsigned long long s = 1;
      for (int i = 0; i < active_heads; ++i) s *= static_cast<unsigned long long>(part.r);
      return s;
    }
  }
  throw std::invalid_argument("search_space_size: bad strategy");
}

SelectionOutcome select_heads(const std::vector<Tensor>& layer_logits,
                              const SelectionOptions& opts) {
  if (layer_logits.empty())
    throw std::invalid_argument("select_heads: no selection-enabled layers");
  int h_prime = layer_logits[0].size();
  if (opts.noisy && !opts.rng)
    throw std::invalid_argument("select_heads: noisy sampling needs an rng");

  SelectionOutcome out;
  Rng dummy(0);
  RelaxedPosterior sampled = gumbel_posterior(layer_logits, opts.tau,
                                              opts.rng ? *opts.rng : dummy, opts.noisy);
  switch (opts.strategy) {
    case Strategy::Subset:
      out.mask = subset_mask(sampled, opts.active_heads);
      break;
    case Strategy::Group:
      out.mask = group_mask(sampled, GroupPartition(h_prime, opts.active_heads));
      break;
    case Strategy::Shared:
      throw std::invalid_argument("select_heads: shared strategy has no selection");
  }

  out.gates.resize(sampled.q.size());
  for (std::size_t l = 0; l < sampled.q.size(); ++l) {
    out.gates[l].resize(static_cast<std::size_t>(h_prime));
    for (int h = 0; h < h_prime; ++h) {
      if (!out.mask.bits[l][static_cast<std::size_t>(h)]) continue;  // pruned, never computed
      Tensor q_h = index(sampled.q[l], h);
      out.gates[l][static_cast<std::size_t>(h)] =
          opts.mode == GateMode::Hard ? straight_through(Tensor::scalar(1.0), q_h) : q_h;
    }
  }

  if (opts.with_kl && opts.active_heads < h_prime) {
    RelaxedPosterior flat = gumbel_posterior(layer_logits, opts.tau, dummy, false);
    out.kl = kl_bernoulli(flat, SelectionPrior(opts.active_heads, h_prime));
  }
  return out;
}

void write_mask_csv(const std::string& path, const HeadMask& mask) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& row : mask.bits) {
    for (std::size_t h = 0; h < row.size(); ++h) {
      if (h) out << ',';
      out << static_cast<int>(row[h]);
    }
    out << '\n';
  }
}

HeadMask read_mask_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  HeadMask mask;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::uint8_t> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell == "1" ? 1 : 0);
    mask.bits.push_back(std::move(row));
  }
  return mask;
}

}  // namespace headsel
