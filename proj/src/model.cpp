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

#include "headsel/model.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "headsel/rng.h"

namespace headsel {

void ModelConfig::validate() const {
  if (d <= 0 || ffn <= 0 || layers_enc <= 0 || layers_dec <= 0)
    throw std::invalid_argument("model config: dimensions must be positive");
  if (heads <= 0 || d % heads != 0)
    throw std::invalid_argument("model config: d=" + std::to_string(d) +
                                " not divisible by H=" + std::to_string(heads));
  if (candidate_heads < heads)
    throw std::invalid_argument("model config: H'=" + std::to_string(candidate_heads) +
                                " < H=" + std::to_string(heads));
  if (strategy == Strategy::Shared && candidate_heads != heads)
    throw std::invalid_argument("model config: shared strategy requires H' == H");
  if (strategy == Strategy::Group && candidate_heads % heads != 0)
    throw std::invalid_argument("model config: group strategy requires H' divisible by H");
  if (vocab_src <= 0 || vocab_tgt <= 0)
    throw std::invalid_argument("model config: vocab sizes must be positive");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("model config: dropout must be in [0, 1)");
  if (enc_task_count <= 0 || dec_task_count <= 0)
    throw std::invalid_argument("model config: task counts must be positive");
}

std::string ModelConfig::echo() const {
  std::ostringstream out;
  out << "adapter_dim=" << adapter_dim << '\n'
      << "adapter_tasks=" << adapter_tasks << '\n'
      << "candidate_heads=" << candidate_heads << '\n'
      << "d=" << d << '\n'
      << "dec_task_count=" << dec_task_count << '\n'
      << "dropout=" << dropout << '\n'
      << "enc_task_count=" << enc_task_count << '\n'
      << "ffn=" << ffn << '\n'
      << "heads=" << heads << '\n'
      << "layers_dec=" << layers_dec << '\n'
      << "layers_enc=" << layers_enc << '\n'
      << "select_in_decoder=" << (select_in_decoder ? 1 : 0) << '\n'
      << "select_in_encoder=" << (select_in_encoder ? 1 : 0) << '\n'
      << "strategy=" << to_string(strategy) << '\n'
      << "vocab_src=" << vocab_src << '\n'
      << "vocab_tgt=" << vocab_tgt << '\n';
  return out.str();
}

ModelConfig ModelConfig::from_echo(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "adapter_dim") cfg.adapter_dim = std::stoi(val);
    else if (key == "adapter_tasks") cfg.adapter_tasks = std::stoi(val);
    else if (key == "candidate_heads") cfg.candidate_heads = std::stoi(val);
    else if (key == "d") cfg.d = std::stoi(val);
    else if (key == "dec_task_count") cfg.dec_task_count = std::stoi(val);
    else if (key == "dropout") cfg.dropout = std::stod(val);
    else if (key == "enc_task_count") cfg.enc_task_count = std::stoi(val);
    else if (key == "ffn") cfg.ffn = std::stoi(val);
    else if (key == "heads") cfg.heads = std::stoi(val);
    else if (key == "layers_dec") cfg.layers_dec = std::stoi(val);
    else if (key == "layers_enc") cfg.layers_enc = std::stoi(val);
    else if (key == "select_in_decoder") cfg.select_in_decoder = val == "1";
    else if (key == "select_in_encoder") cfg.select_in_encoder = val == "1";
    else if (key == "strategy") cfg.strategy = strategy_from_string(val);
    else if (key == "vocab_src") cfg.vocab_src = std::stoi(val);
    else if (key == "vocab_tgt") cfg.vocab_tgt = std::stoi(val);
  }
  return cfg;
}

TaskConditioner make_conditioner(const std::vector<TaskSpec>& train_specs) {
  TaskConditioner cond;
  cond.encoder_key = [](const Sample& s) { return s.src_tag; };
  cond.decoder_key = [](const Sample& s) { return s.tgt_tag; };
  for (std::size_t i = 0; i < train_specs.size(); ++i)
    cond.pair_task[{train_specs[i].src_tag, train_specs[i].tgt_tag}] = static_cast<int>(i);
  return cond;
}

Tensor ParamStore::add(const std::string& name, Tensor t) {
  for (const auto& [n, _] : items_)
    if (n == name) throw std::logic_error("duplicate parameter name " + name);
  items_.emplace_back(name, t);
  return t;
}

const Tensor* ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

namespace {

Tensor xavier(ParamStore& store, const std::string& name, int rows, int cols, Rng& rng) {
  double limit = std::sqrt(6.0 / (rows + cols));
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return store.add(name, Tensor({rows, cols}, std::move(v), /*requires_grad=*/true));
}

Tensor constant_param(ParamStore& store, const std::string& name, std::vector<int> shape,
                      double fill) {
  return store.add(name, Tensor(std::move(shape), fill, /*requires_grad=*/true));
}

AttentionPool build_pool(ParamStore& store, const std::string& prefix, int d, int active_heads,
                         int pool_heads, Strategy strategy, Rng& rng) {
  AttentionPool pool;
  pool.model_dim = d;
  pool.active_heads = active_heads;
  pool.head_width = d / active_heads;
  pool.strategy = strategy;
  for (int h = 0; h < pool_heads; ++h) {
    std::string hp = prefix + ".h" + std::to_string(h);
    HeadParams head;
    head.wq = xavier(store, hp + ".wq", d, pool.head_width, rng);
    head.wk = xavier(store, hp + ".wk", d, pool.head_width, rng);
    head.wv = xavier(store, hp + ".wv", d, pool.head_width, rng);
    head.bq = constant_param(store, hp + ".bq", {pool.head_width}, 0.0);
    head.bk = constant_param(store, hp + ".bk", {pool.head_width}, 0.0);
    head.bv = constant_param(store, hp + ".bv", {pool.head_width}, 0.0);
    head.wo_slice = xavier(store, hp + ".wo", pool.head_width, d, rng);
    pool.heads.push_back(std::move(head));
  }
  pool.out_bias = constant_param(store, prefix + ".bo", {d}, 0.0);
  return pool;
}

Tensor sinusoidal_positions(int n, int d) {
  std::vector<double> v(static_cast<std::size_t>(n) * d);
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < d; i += 2) {
      double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      v[static_cast<std::size_t>(pos) * d + i] = std::sin(angle);
      if (i + 1 < d) v[static_cast<std::size_t>(pos) * d + i + 1] = std::cos(angle);
    }
  }
  return Tensor({n, d}, std::move(v));
}

int argmax_row(const Tensor& t, int row) {
  int cols = t.dim(1);
  const double* p = t.value().data() + static_cast<std::size_t>(row) * cols;
  int best = 0;
  for (int j = 1; j < cols; ++j)
    if (p[j] > p[best]) best = j;
  return best;
}

}  // namespace

TransformerModel::TransformerModel(ModelConfig cfg, Rng& init_rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  int d = cfg_.d;

  {
    std::vector<double> v(static_cast<std::size_t>(cfg_.vocab_src) * d);
    for (auto& x : v) x = init_rng.uniform(-0.1, 0.1);
    enc_embed_ = params_.add("enc.embed", Tensor({cfg_.vocab_src, d}, std::move(v), true));
  }
  {
    std::vector<double> v(static_cast<std::size_t>(cfg_.vocab_tgt) * d);
    for (auto& x : v) x = init_rng.uniform(-0.1, 0.1);
    dec_embed_ = params_.add("dec.embed", Tensor({cfg_.vocab_tgt, d}, std::move(v), true));
  }

  int enc_pool = cfg_.encoder_selective() ? cfg_.candidate_heads : cfg_.heads;
  for (int l = 0; l < cfg_.layers_enc; ++l) {
    std::string p = "enc.l" + std::to_string(l);
    EncoderLayer layer;
    layer.attn = build_pool(params_, p + ".attn", d, cfg_.heads, enc_pool,
                            cfg_.encoder_selective() ? cfg_.strategy : Strategy::Shared,
                            init_rng);
    layer.ln1_g = constant_param(params_, p + ".ln1.g", {d}, 1.0);
    layer.ln1_b = constant_param(params_, p + ".ln1.b", {d}, 0.0);
    layer.w1 = xavier(params_, p + ".ffn.w1", d, cfg_.ffn, init_rng);
    layer.b1 = constant_param(params_, p + ".ffn.b1", {cfg_.ffn}, 0.0);
    layer.w2 = xavier(params_, p + ".ffn.w2", cfg_.ffn, d, init_rng);
    layer.b2 = constant_param(params_, p + ".ffn.b2", {d}, 0.0);
    layer.ln2_g = constant_param(params_, p + ".ln2.g", {d}, 1.0);
    layer.ln2_b = constant_param(params_, p + ".ln2.b", {d}, 0.0);
    enc_layers_.push_back(std::move(layer));
  }

  int dec_pool = cfg_.decoder_selective() ? cfg_.candidate_heads : cfg_.heads;
  for (int l = 0; l < cfg_.layers_dec; ++l) {
    std::string p = "dec.l" + std::to_string(l);
    DecoderLayer layer;
    layer.self_attn = build_pool(params_, p + ".self", d, cfg_.heads, dec_pool,
                                 cfg_.decoder_selective() ? cfg_.strategy : Strategy::Shared,
                                 init_rng);
    layer.ln1_g = constant_param(params_, p + ".ln1.g", {d}, 1.0);
    layer.ln1_b = constant_param(params_, p + ".ln1.b", {d}, 0.0);
    // selection never applies to encoder-decoder attention
    layer.cross = build_pool(params_, p + ".cross", d, cfg_.heads, cfg_.heads,
                             Strategy::Shared, init_rng);
    layer.ln2_g = constant_param(params_, p + ".ln2.g", {d}, 1.0);
    layer.ln2_b = constant_param(params_, p + ".ln2.b", {d}, 0.0);
    layer.w1 = xavier(params_, p + ".ffn.w1", d, cfg_.ffn, init_rng);
    layer.b1 = constant_param(params_, p + ".ffn.b1", {cfg_.ffn}, 0.0);
    layer.w2 = xavier(params_, p + ".ffn.w2", cfg_.ffn, d, init_rng);
    layer.b2 = constant_param(params_, p + ".ffn.b2", {d}, 0.0);
    layer.ln3_g = constant_param(params_, p + ".ln3.g", {d}, 1.0);
    layer.ln3_b = constant_param(params_, p + ".ln3.b", {d}, 0.0);
    dec_layers_.push_back(std::move(layer));
  }

  out_w_ = xavier(params_, "out.w", d, cfg_.vocab_tgt, init_rng);
  out_b_ = constant_param(params_, "out.b", {cfg_.vocab_tgt}, 0.0);

  // selection logits start at 0: the noise-free posterior matches the prior
  // at tau = 1 when H/H' = 1/2, so the KL term starts at exactly 0
  if (cfg_.encoder_selective()) {
    enc_logits_ = std::make_unique<SelectionLogits>(cfg_.enc_task_count, cfg_.layers_enc,
                                                    cfg_.candidate_heads);
    for (int t = 0; t < cfg_.enc_task_count; ++t)
      for (int l = 0; l < cfg_.layers_enc; ++l)
        params_.add("sel.enc.t" + std::to_string(t) + ".l" + std::to_string(l),
                    enc_logits_->at(t, l));
  }
  if (cfg_.decoder_selective()) {
    dec_logits_ = std::make_unique<SelectionLogits>(cfg_.dec_task_count, cfg_.layers_dec,
                                                    cfg_.candidate_heads);
    for (int t = 0; t < cfg_.dec_task_count; ++t)
      for (int l = 0; l < cfg_.layers_dec; ++l)
        params_.add("sel.dec.t" + std::to_string(t) + ".l" + std::to_string(l),
                    dec_logits_->at(t, l));
  }

  if (cfg_.adapter_dim > 0 && cfg_.adapter_tasks > 0) {
    int dim = cfg_.adapter_dim, tasks = cfg_.adapter_tasks;
    cfg_.adapter_dim = 0;
    cfg_.adapter_tasks = 0;
    enable_adapters(dim, tasks);
    backbone_frozen_ = false;  // construction-time adapters do not freeze
  }
}

void TransformerModel::enable_adapters(int adapter_dim, int task_count) {
  if (adapter_dim <= 0 || task_count <= 0)
    throw std::invalid_argument("adapters need positive dim and task count");
  if (!adapters_.empty()) throw std::logic_error("adapters already enabled");
  Rng rng(derive_seed(0x61646170, "adapter-init"));
  int d = cfg_.d;
  for (int t = 0; t < task_count; ++t) {
    std::vector<AdapterLayer> stack;
    int total_layers = cfg_.layers_enc + cfg_.layers_dec;
    for (int l = 0; l < total_layers; ++l) {
      bool enc = l < cfg_.layers_enc;
      std::string p = "adapter.t" + std::to_string(t) + "." +
                      (enc ? "enc.l" + std::to_string(l)
                           : "dec.l" + std::to_string(l - cfg_.layers_enc));
      AdapterLayer a;
      a.ln_g = constant_param(params_, p + ".ln.g", {d}, 1.0);
      a.ln_b = constant_param(params_, p + ".ln.b", {d}, 0.0);
      a.down = xavier(params_, p + ".down", d, adapter_dim, rng);
      a.b_down = constant_param(params_, p + ".bdown", {adapter_dim}, 0.0);
      // zero-init up keeps the adapter an identity at step 0
      a.up = constant_param(params_, p + ".up", {adapter_dim, d}, 0.0);
      a.b_up = constant_param(params_, p + ".bup", {d}, 0.0);
      stack.push_back(std::move(a));
    }
    adapters_.push_back(std::move(stack));
  }
  cfg_.adapter_dim = adapter_dim;
  cfg_.adapter_tasks = task_count;
  backbone_frozen_ = true;
}

std::vector<std::pair<std::string, Tensor>> TransformerModel::trainable() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, t] : params_.items()) {
    bool is_adapter = name.rfind("adapter.", 0) == 0;
    bool is_selection = name.rfind("sel.", 0) == 0;
    if (backbone_frozen_ && !is_adapter) continue;
    if (selection_frozen_ && is_selection) continue;
    out.emplace_back(name, t);
  }
  return out;
}

void TransformerModel::zero_grad() {
  for (auto& [name, t] : params_.items()) const_cast<Tensor&>(t).zero_grad();
}

std::vector<Tensor> TransformerModel::encoder_task_logits(int key) const {
  if (!enc_logits_) throw std::logic_error("encoder is not selective");
  if (key >= 0 && key < enc_logits_->tasks()) return enc_logits_->task_logits(key);
  return enc_logits_->mean_logits();  // unseen key: least-commitment fallback
}

std::vector<Tensor> TransformerModel::decoder_task_logits(int key) const {
  if (!dec_logits_) throw std::logic_error("decoder is not selective");
  if (key >= 0 && key < dec_logits_->tasks()) return dec_logits_->task_logits(key);
  return dec_logits_->mean_logits();
}

SelectionPlan TransformerModel::make_plan(const std::set<int>& enc_keys,
                                          const std::set<int>& dec_keys,
                                          const PlanOptions& opts) const {
  SelectionPlan plan;
  SelectionOptions sel;
  sel.strategy = cfg_.strategy;
  sel.active_heads = cfg_.heads;
  sel.tau = opts.tau;
  sel.noisy = opts.noisy;
  sel.mode = opts.mode;
  sel.with_kl = opts.with_kl;
  sel.rng = opts.rng;

  auto accumulate_kl = [&plan](const Tensor& kl) {
    if (!kl.defined()) return;
    plan.kl = plan.kl.defined() ? add(plan.kl, kl) : kl;
  };
  if (cfg_.encoder_selective())
    for (int key : enc_keys) {
      plan.enc.emplace(key, select_heads(encoder_task_logits(key), sel));
      accumulate_kl(plan.enc.at(key).kl);
    }
  if (cfg_.decoder_selective())
    for (int key : dec_keys) {
      plan.dec.emplace(key, select_heads(decoder_task_logits(key), sel));
      accumulate_kl(plan.dec.at(key).kl);
    }
  return plan;
}

Tensor TransformerModel::maybe_dropout(const Tensor& x, const ForwardCtx& ctx) const {
  if (!ctx.training || cfg_.dropout == 0.0) return x;
  if (!ctx.dropout_rng) throw std::invalid_argument("training forward needs a dropout rng");
  return dropout(x, cfg_.dropout, *ctx.dropout_rng);
}

Tensor TransformerModel::embed_with_positions(const Tensor& table, const std::vector<int>& ids,
                                              const ForwardCtx& ctx) const {
  Tensor x = add(rows(table, ids), sinusoidal_positions(static_cast<int>(ids.size()), cfg_.d));
  return maybe_dropout(x, ctx);
}

Tensor TransformerModel::apply_adapter(const Tensor& x, const AdapterLayer& a) const {
  Tensor h = relu(add(matmul(layer_norm(x, a.ln_g, a.ln_b), a.down), a.b_down));
  return add(x, add(matmul(h, a.up), a.b_up));
}

const SelectionOutcome* TransformerModel::plan_outcome(const ForwardCtx& ctx, bool encoder,
                                                       int key) const {
  const auto& side = encoder ? ctx.plan->enc : ctx.plan->dec;
  auto it = side.find(key);
  if (it == side.end())
    throw std::logic_error(std::string("selection plan is missing ") +
                           (encoder ? "encoder" : "decoder") + " key " + std::to_string(key));
  return &it->second;
}

Tensor TransformerModel::encode(const std::vector<int>& tokens, int enc_key,
                                const ForwardCtx& ctx, int adapter_task) const {
  for (int id : tokens)
    if (id < 0 || id >= cfg_.vocab_src)
      throw std::invalid_argument("encode: token id " + std::to_string(id) +
                                  " outside source vocabulary of " +
                                  std::to_string(cfg_.vocab_src));
  bool selective = cfg_.encoder_selective();
  if (selective && !ctx.plan)
    throw std::invalid_argument("encode: selective encoder needs a selection plan");
  const SelectionOutcome* sel = selective ? plan_outcome(ctx, true, enc_key) : nullptr;

  Tensor x = embed_with_positions(enc_embed_, tokens, ctx);
  for (std::size_t l = 0; l < enc_layers_.size(); ++l) {
    const EncoderLayer& layer = enc_layers_[l];
    const std::vector<std::uint8_t>* mask = sel ? &sel->mask.bits[l] : nullptr;
    const std::vector<Tensor>* gates = sel ? &sel->gates[l] : nullptr;
    Tensor attn = selective_mha(x, x, layer.attn, mask, gates, /*causal=*/false);
    x = layer_norm(add(x, maybe_dropout(attn, ctx)), layer.ln1_g, layer.ln1_b);
    Tensor ff = add(matmul(relu(add(matmul(x, layer.w1), layer.b1)), layer.w2), layer.b2);
    x = layer_norm(add(x, maybe_dropout(ff, ctx)), layer.ln2_g, layer.ln2_b);
    if (adapter_task >= 0 && !adapters_.empty())
      x = apply_adapter(x, adapters_[static_cast<std::size_t>(adapter_task)][l]);
  }
  return x;
}

Tensor TransformerModel::decode(const std::vector<int>& prefix, const Tensor& enc_out,
                                int dec_key, const ForwardCtx& ctx, int adapter_task) const {
  for (int id : prefix)
    if (id < 0 || id >= cfg_.vocab_tgt)
      throw std::invalid_argument("decode: token id " + std::to_string(id) +
                                  " outside target vocabulary of " +
                                  std::to_string(cfg_.vocab_tgt));
  bool selective = cfg_.decoder_selective();
  if (selective && !ctx.plan)
    throw std::invalid_argument("decode: selective decoder needs a selection plan");
  const SelectionOutcome* sel = selective ? plan_outcome(ctx, false, dec_key) : nullptr;

  Tensor x = embed_with_positions(dec_embed_, prefix, ctx);
  for (std::size_t l = 0; l < dec_layers_.size(); ++l) {
    const DecoderLayer& layer = dec_layers_[l];
    const std::vector<std::uint8_t>* mask = sel ? &sel->mask.bits[l] : nullptr;
    const std::vector<Tensor>* gates = sel ? &sel->gates[l] : nullptr;
    Tensor attn = selective_mha(x, x, layer.self_attn, mask, gates, /*causal=*/true);
    x = layer_norm(add(x, maybe_dropout(attn, ctx)), layer.ln1_g, layer.ln1_b);
    Tensor cross = cross_attention(x, enc_out, layer.cross);
    x = layer_norm(add(x, maybe_dropout(cross, ctx)), layer.ln2_g, layer.ln2_b);
    Tensor ff = add(matmul(relu(add(matmul(x, layer.w1), layer.b1)), layer.w2), layer.b2);
    x = layer_norm(add(x, maybe_dropout(ff, ctx)), layer.ln3_g, layer.ln3_b);
    if (adapter_task >= 0 && !adapters_.empty())
      x = apply_adapter(
          x, adapters_[static_cast<std::size_t>(adapter_task)][enc_layers_.size() + l]);
  }
  return add(matmul(x, out_w_), out_b_);
}

std::vector<int> TransformerModel::greedy_generate(const std::vector<int>& src_tokens,
                                                   int enc_key, int dec_key, int start_token,
                                                   int max_len, const ForwardCtx& ctx,
                                                   int adapter_task) const {
  if (max_len < 1) throw std::invalid_argument("greedy_generate: max_len must be >= 1");
  Tensor enc_out = encode(src_tokens, enc_key, ctx, adapter_task);
  std::vector<int> prefix = {start_token};
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    Tensor logits = decode(prefix, enc_out, dec_key, ctx, adapter_task);
    int next = argmax_row(logits, logits.dim(0) - 1);
    if (next == TokenCodec::kEos) break;
    out.push_back(next);
    prefix.push_back(next);
  }
  return out;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kMagic[] = "HSCKPT1\n";

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

void TransformerModel::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic) - 1);
  std::string echo = cfg_.echo();
  write_u64(out, echo.size());
  out.write(echo.data(), static_cast<std::streamsize>(echo.size()));
  write_u64(out, params_.items().size());
  for (const auto& [name, t] : params_.items()) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, t.shape().size());
    for (int d : t.shape()) write_u64(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.value().data()),
              static_cast<std::streamsize>(t.value().size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("short write on checkpoint " + path);
}

std::string TransformerModel::checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  char magic[sizeof(kMagic) - 1];
  in.read(magic, sizeof magic);
  if (!in || std::string(magic, sizeof magic) != kMagic)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::string echo(read_u64(in), '\0');
  in.read(echo.data(), static_cast<std::streamsize>(echo.size()));
  if (!in) throw std::runtime_error("truncated checkpoint " + path);
  return echo;
}

void TransformerModel::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  char magic[sizeof(kMagic) - 1];
  in.read(magic, sizeof magic);
  if (!in || std::string(magic, sizeof magic) != kMagic)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::string echo(read_u64(in), '\0');
  in.read(echo.data(), static_cast<std::streamsize>(echo.size()));
  std::uint64_t count = read_u64(in);
  std::size_t loaded = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(read_u64(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    std::uint64_t rank = read_u64(in);
    std::vector<int> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<int>(read_u64(in));
      n *= static_cast<std::size_t>(d);
    }
    std::vector<double> data(n);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint " + path);
    const Tensor* dst = params_.find(name);
    if (!dst) continue;  // e.g. a backbone checkpoint loaded into an adapter model
    if (dst->shape() != shape)
      throw std::runtime_error("checkpoint parameter " + name + " has shape " +
                               shape_str(shape) + ", model expects " +
                               shape_str(dst->shape()));
    const_cast<Tensor*>(dst)->value() = std::move(data);
    ++loaded;
  }
  if (loaded == 0) throw std::runtime_error("checkpoint " + path + " matched no parameters");
}

}  // namespace headsel
