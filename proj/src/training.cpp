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

#include "headsel/training.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>
#include <stdexcept>

#include "headsel/eval.h"

namespace headsel {

TauSchedule TauSchedule::fixed(double tau) {
  if (tau <= 0.0) throw std::invalid_argument("tau schedule: tau must be positive");
  TauSchedule s;
  s.kind = Kind::Fixed;
  s.tau0 = s.tau1 = tau;
  return s;
}

TauSchedule TauSchedule::linear(double tau0, double tau1, double frac) {
  if (tau0 <= 0.0 || tau1 <= 0.0 || frac <= 0.0 || frac > 1.0)
    throw std::invalid_argument("tau schedule: need positive taus and frac in (0,1]");
  TauSchedule s;
  s.kind = Kind::Linear;
  s.tau0 = tau0;
  s.tau1 = tau1;
  s.frac = frac;
  return s;
}

TauSchedule TauSchedule::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t colon = text.find(':', start);
    if (colon == std::string::npos) {
      parts.push_back(text.substr(start));
      break;
    }
    parts.push_back(text.substr(start, colon - start));
    start = colon + 1;
  }
  if (parts.size() == 2 && parts[0] == "fixed") return fixed(std::stod(parts[1]));
  if (parts.size() == 4 && parts[0] == "linear")
    return linear(std::stod(parts[1]), std::stod(parts[2]), std::stod(parts[3]));
  throw std::invalid_argument("tau schedule: expected 'fixed:T' or 'linear:T0:T1:FRAC', got '" +
                              text + "'");
}

std::string TauSchedule::str() const {
  char buf[64];
  if (kind == Kind::Fixed) {
    std::snprintf(buf, sizeof buf, "fixed:%g", tau0);
  } else {
    std::snprintf(buf, sizeof buf, "linear:%g:%g:%g", tau0, tau1, frac);
  }
  return buf;
}

double tau_at(const TauSchedule& schedule, long step, long max_steps) {
  if (schedule.kind == TauSchedule::Kind::Fixed) return schedule.tau0;
  double ramp = schedule.frac * static_cast<double>(max_steps);
  double t = ramp > 0.0 ? std::min(1.0, static_cast<double>(step) / ramp) : 1.0;
  return schedule.tau0 + (schedule.tau1 - schedule.tau0) * t;
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      lr_(cfg.lr),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      clip_(cfg.clip_norm) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.value().size(), 0.0);
    v_.emplace_back(t.value().size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  double norm_sq = 0.0;
  for (auto& [name, t] : params_)
    for (double g : t.grad()) norm_sq += g * g;
  double scale = 1.0;
  if (clip_ > 0.0) {
    double norm = std::sqrt(norm_sq);
    if (norm > clip_) scale = clip_ / norm;
  }
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto& t = params_[p].second;
    auto& value = const_cast<std::vector<double>&>(t.value());
    auto& grad = const_cast<std::vector<double>&>(t.grad());
    for (std::size_t i = 0; i < value.size(); ++i) {
      double g = grad[i] * scale;
      m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * g;
      v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * g * g;
      double mhat = m_[p][i] / bc1;
      double vhat = v_[p][i] / bc2;
      value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      grad[i] = 0.0;
    }
  }
}

EncodedSample encode_sample(const Sample& s, const TokenCodec& codec,
                            const TaskConditioner& cond) {
  EncodedSample e;
  e.enc_in = codec.encoder_input(s);
  e.dec_in = codec.decoder_input(s);
  e.targets = codec.decoder_targets(s);
  e.enc_key = cond.encoder_key(s);
  e.dec_key = cond.decoder_key(s);
  e.adapter_task = cond.adapter_task(s);
  return e;
}

std::vector<EncodedSample> encode_samples(const std::vector<Sample>& samples,
                                          const TokenCodec& codec,
                                          const TaskConditioner& cond) {
  std::vector<EncodedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(encode_sample(s, codec, cond));
  return out;
}

Tensor elbo_loss(const Tensor& logits, const std::vector<int>& targets, const Tensor& kl,
                 double beta, long token_count) {
  if (token_count <= 0) throw std::invalid_argument("elbo_loss: token_count must be positive");
  Tensor loss = affine(cross_entropy_sum(logits, targets),
                       1.0 / static_cast<double>(token_count), 0.0);
  if (kl.defined() && beta != 0.0)
    loss = add(loss, affine(kl, beta / static_cast<double>(token_count), 0.0));
  return loss;
}

namespace {

[[noreturn]] void abort_on_nan(const TransformerModel& model, long step, double loss) {
  std::string culprit = "<none found>";
  for (const auto& [name, t] : model.params().items()) {
    bool bad = false;
    for (double x : t.value())
      if (!std::isfinite(x)) { bad = true; break; }
    if (!bad && t.requires_grad())
      for (double g : t.grad())
        if (!std::isfinite(g)) { bad = true; break; }
    if (bad) {
      culprit = name;
      break;
    }
  }
  throw std::runtime_error("non-finite loss " + std::to_string(loss) + " at step " +
                           std::to_string(step) + "; first non-finite parameter: " + culprit);
}

}  // namespace

double train_step(TransformerModel& model, const std::vector<const EncodedSample*>& batch,
                  TrainState& state, const TrainConfig& cfg, Adam& adam) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  model.zero_grad();

  Graph graph;
  Recording rec(graph);

  double tau = tau_at(cfg.tau_schedule, state.step, cfg.max_steps);
  std::set<int> enc_keys, dec_keys;
  for (const auto* s : batch) {
    enc_keys.insert(s->enc_key);
    dec_keys.insert(s->dec_key);
  }
  PlanOptions popts;
  popts.tau = tau;
  popts.noisy = true;
  popts.mode = GateMode::Hard;
  popts.with_kl = true;
  popts.rng = &state.gumbel_rng;
  SelectionPlan plan = model.make_plan(enc_keys, dec_keys, popts);

  ForwardCtx ctx;
  ctx.training = true;
  ctx.dropout_rng = &state.dropout_rng;
  ctx.plan = &plan;

  Tensor ce_total;
  long tokens = 0;
  for (const auto* s : batch) {
    Tensor enc_out = model.encode(s->enc_in, s->enc_key, ctx, s->adapter_task);
    Tensor logits = model.decode(s->dec_in, enc_out, s->dec_key, ctx, s->adapter_task);
    Tensor ce = cross_entropy_sum(logits, s->targets);
    ce_total = ce_total.defined() ? add(ce_total, ce) : ce;
    tokens += static_cast<long>(s->targets.size());
  }
  Tensor loss = affine(ce_total, 1.0 / static_cast<double>(tokens), 0.0);
  if (plan.kl.defined() && cfg.kl_weight != 0.0)
    loss = add(loss, affine(plan.kl, cfg.kl_weight / static_cast<double>(tokens), 0.0));

  graph.backward(loss);
  double loss_value = loss.item();
  if (!std::isfinite(loss_value)) abort_on_nan(model, state.step, loss_value);

  adam.step();
  ++state.step;
  return loss_value;
}

bool early_stop(TrainState& state, double valid_metric, int patience) {
  if (patience < 1) throw std::invalid_argument("early_stop: patience must be >= 1");
  if (valid_metric > state.best_valid) {
    state.best_valid = valid_metric;
    state.epochs_since_improve = 0;
  } else {
    ++state.epochs_since_improve;
  }
  return state.epochs_since_improve >= patience;
}

void checkpoint_average(const std::vector<std::string>& paths, TransformerModel& model) {
  if (paths.empty()) throw std::invalid_argument("checkpoint_average: no checkpoints");
  std::string echo = TransformerModel::checkpoint_config(paths[0]);
  for (const auto& p : paths)
    if (TransformerModel::checkpoint_config(p) != echo)
      throw std::runtime_error("checkpoint_average: config mismatch in " + p);

  model.load_checkpoint(paths[0]);
  std::vector<std::vector<double>> base;
  for (const auto& [name, t] : model.params().items()) base.push_back(t.value());
  std::vector<std::vector<double>> delta(base.size());
  for (std::size_t p = 0; p < base.size(); ++p) delta[p].assign(base[p].size(), 0.0);

  for (std::size_t c = 1; c < paths.size(); ++c) {
    model.load_checkpoint(paths[c]);
    std::size_t p = 0;
    for (const auto& [name, t] : model.params().items()) {
      for (std::size_t i = 0; i < base[p].size(); ++i)
        delta[p][i] += t.value()[i] - base[p][i];
      ++p;
    }
  }
  // mean as base + mean-of-deltas: exact for identical checkpoints
  double k = static_cast<double>(paths.size());
  std::size_t p = 0;
  for (const auto& [name, t] : model.params().items()) {
    auto& value = const_cast<std::vector<double>&>(t.value());
    for (std::size_t i = 0; i < value.size(); ++i)
      value[i] = base[p][i] + delta[p][i] / k;
    ++p;
  }
}

FitResult fit(TransformerModel& model, const std::vector<EncodedSample>& train,
              const std::vector<EncodedSample>& valid, const TrainConfig& cfg,
              const FitOptions& options) {
  if (train.empty()) throw std::invalid_argument("fit: no training data");
  TrainState state(cfg.seed);
  Adam adam(model.trainable(), cfg);

  long steps_per_epoch = (static_cast<long>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  // in-memory snapshots of the last k epochs for checkpoint averaging
  std::deque<std::vector<std::vector<double>>> snapshots;
  std::deque<std::string> kept_files;
  bool use_disk = !options.checkpoint_dir.empty();
  if (use_disk) std::filesystem::create_directories(options.checkpoint_dir);

  FitResult result;
  while (state.step < cfg.max_steps) {
    ++state.epoch;
    state.data_rng.shuffle(order);
    double loss_sum = 0.0;
    long steps_this_epoch = 0;
    for (long b = 0; b < steps_per_epoch && state.step < cfg.max_steps; ++b) {
      std::vector<const EncodedSample*> batch;
      for (long i = b * cfg.batch_size;
           i < std::min<long>((b + 1) * cfg.batch_size, static_cast<long>(train.size())); ++i)
        batch.push_back(&train[order[static_cast<std::size_t>(i)]]);
      loss_sum += train_step(model, batch, state, cfg, adam);
      ++steps_this_epoch;
    }

    double tau = tau_at(cfg.tau_schedule, state.step, cfg.max_steps);
    double valid_metric = valid.empty() ? 0.0 : teacher_forced_token_accuracy(model, valid);
    double kl_value = 0.0;
    {
      // noise-free KL at the current temperature, for the log
      std::set<int> enc_keys, dec_keys;
      for (const auto& s : train) {
        enc_keys.insert(s.enc_key);
        dec_keys.insert(s.dec_key);
      }
      PlanOptions popts;
      popts.tau = tau;
      popts.with_kl = true;
      SelectionPlan plan = model.make_plan(enc_keys, dec_keys, popts);
      if (plan.kl.defined()) kl_value = plan.kl.item();
    }
    result.log.push_back({state.epoch,
                          steps_this_epoch ? loss_sum / steps_this_epoch : 0.0, kl_value,
                          valid_metric, tau});

    // snapshot for averaging
    std::vector<std::vector<double>> snap;
    for (const auto& [name, t] : model.params().items()) snap.push_back(t.value());
    snapshots.push_back(std::move(snap));
    if (static_cast<int>(snapshots.size()) > std::max(cfg.avg_last_k, 1)) snapshots.pop_front();
    if (use_disk) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", state.epoch);
      std::string path = options.checkpoint_dir + "/" + name;
      model.save_checkpoint(path);
      kept_files.push_back(path);
      if (static_cast<int>(kept_files.size()) > std::max(cfg.avg_last_k, 1)) {
        std::filesystem::remove(kept_files.front());
        kept_files.pop_front();
      }
    }

    if (!valid.empty() && early_stop(state, valid_metric, cfg.patience)) break;
  }

  // average the last k epoch snapshots into the final model
  if (!snapshots.empty()) {
    const auto& base = snapshots.front();
    double k = static_cast<double>(snapshots.size());
    std::size_t p = 0;
    for (const auto& [name, t] : model.params().items()) {
      auto& value = const_cast<std::vector<double>&>(t.value());
      for (std::size_t i = 0; i < value.size(); ++i) {
        double delta = 0.0;
        for (const auto& snap : snapshots) delta += snap[p][i] - base[p][i];
        value[i] = base[p][i] + delta / k;
      }
      ++p;
    }
  }
  result.steps_run = state.step;
  result.checkpoints_kept.assign(kept_files.begin(), kept_files.end());
  return result;
}

}  // namespace headsel
