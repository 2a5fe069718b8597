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

#include "headsel/experiment.h"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace fs = std::filesystem;

namespace headsel {

// ---- config -----------------------------------------------------------------

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.values_ = {
      {"adapter_dim", "16"},
      {"avg_last_k", "5"},
      {"backbone", ""},
      {"batch_size", "32"},
      {"beta", "0.01"},
      {"beta1", "0.9"},
      {"beta2", "0.98"},
      {"d", "32"},
      {"dropout", "0.1"},
      {"ffn", "64"},
      {"heads", "4"},
      {"hprime", "8"},
      {"hprime_list", "4,8,12,16"},
      {"jobs", "1"},
      {"layers_dec", "2"},
      {"layers_enc", "2"},
      {"lr", "0.0003"},
      {"max_steps", "2000"},
      {"out", "results"},
      {"patience", "10"},
      {"seed", "1"},
      {"seeds", ""},
      {"select_decoder", "1"},
      {"select_encoder", "1"},
      {"strategy", "group"},
      {"suite", "interference"},
      {"tau_schedule", "fixed:1.0"},
  };
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  ExperimentConfig cfg = defaults();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!key.empty()) cfg.set(key, value);
  }
  return cfg;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

bool ExperimentConfig::has(const std::string& key) const {
  auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

std::string ExperimentConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("config key '" + key + "' is not set");
  return it->second;
}

int ExperimentConfig::get_int(const std::string& key) const { return std::stoi(get(key)); }
long ExperimentConfig::get_long(const std::string& key) const { return std::stol(get(key)); }
double ExperimentConfig::get_double(const std::string& key) const { return std::stod(get(key)); }
bool ExperimentConfig::get_bool(const std::string& key) const {
  std::string v = get(key);
  return v == "1" || v == "true" || v == "yes";
}
std::uint64_t ExperimentConfig::get_u64(const std::string& key) const {
  return std::stoull(get(key));
}

std::vector<int> ExperimentConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get(key));
  std::string cell;
  while (std::getline(ss, cell, ','))
    if (!cell.empty()) out.push_back(std::stoi(cell));
  return out;
}

std::vector<std::uint64_t> ExperimentConfig::seed_list() const {
  std::vector<std::uint64_t> out;
  if (has("seeds")) {
    std::stringstream ss(get("seeds"));
    std::string cell;
    while (std::getline(ss, cell, ','))
      if (!cell.empty()) out.push_back(std::stoull(cell));
  }
  if (out.empty()) out.push_back(get_u64("seed"));
  return out;
}

std::string ExperimentConfig::echo() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
  return out.str();
}

// ---- suites -----------------------------------------------------------------

SuiteData load_suite(const std::string& name, std::uint64_t seed) {
  SuiteData suite;
  if (name == "interference") {
    suite.train_specs = interference_suite(seed);
  } else if (name == "zero_shot") {
    ZeroShotSuite zs = zero_shot_suite(seed);
    suite.train_specs = zs.train;
    suite.test_only_specs = zs.test_only;
  } else {
    throw std::invalid_argument("unknown suite '" + name + "'");
  }
  std::vector<TaskSpec> all = suite.train_specs;
  all.insert(all.end(), suite.test_only_specs.begin(), suite.test_only_specs.end());
  suite.codec = build_codec(all);
  suite.cond = make_conditioner(suite.train_specs);
  int len_max = 0;
  for (const auto& s : all) len_max = std::max(len_max, s.len_max);
  suite.max_len = 2 * len_max + 2;
  return suite;
}

// ---- shared helpers -----------------------------------------------------------

namespace {

std::mutex g_print_mutex;

struct BuildOutcome {
  TransformerModel model;
  SuiteData suite;
};

int max_src_tag(const std::vector<TaskSpec>& specs) {
  int m = 0;
  for (const auto& s : specs) m = std::max(m, s.src_tag);
  return m;
}

int max_tgt_tag(const std::vector<TaskSpec>& specs) {
  int m = 0;
  for (const auto& s : specs) m = std::max(m, s.tgt_tag);
  return m;
}

ModelConfig model_config_from(const ExperimentConfig& cfg, const SuiteData& suite,
                              bool adapter_baseline) {
  ModelConfig mc;
  mc.d = cfg.get_int("d");
  mc.ffn = cfg.get_int("ffn");
  mc.layers_enc = cfg.get_int("layers_enc");
  mc.layers_dec = cfg.get_int("layers_dec");
  mc.heads = cfg.get_int("heads");
  std::string strat = cfg.get("strategy");
  if (adapter_baseline || strat == "adapter" || strat == "shared") {
    mc.strategy = Strategy::Shared;
    mc.candidate_heads = mc.heads;
  } else {
    mc.strategy = strategy_from_string(strat);
    mc.candidate_heads = cfg.get_int("hprime");
    if (mc.candidate_heads == mc.heads) {
      // degenerate pool: no selection freedom, still runs the selection path
    }
  }
  mc.vocab_src = suite.codec.vocab_size();
  mc.vocab_tgt = suite.codec.vocab_size();
  mc.dropout = cfg.get_double("dropout");
  mc.select_in_encoder = cfg.get_bool("select_encoder");
  mc.select_in_decoder = cfg.get_bool("select_decoder");
  mc.enc_task_count = max_src_tag(suite.train_specs) + 1;
  mc.dec_task_count = max_tgt_tag(suite.train_specs) + 1;
  return mc;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch\ttrain_loss\tkl\tvalid_metric\ttau\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d\t%.6f\t%.6f\t%.6f\t%.6f\n", e.epoch, e.train_loss,
                  e.kl, e.valid_metric, e.tau);
    out << buf;
  }
}

// write per-key noise-free masks plus the key->task legend
void export_masks(const TransformerModel& model, const SuiteData& suite,
                  const std::string& dir) {
  fs::create_directories(dir);
  const ModelConfig& mc = model.config();
  std::ostringstream keys;
  keys << "side\tkey\ttasks\n";

  auto side_tasks = [&suite](bool encoder, int key) {
    std::string names;
    for (const auto& s : suite.train_specs)
      if ((encoder ? s.src_tag : s.tgt_tag) == key) names += (names.empty() ? "" : "|") + s.name;
    return names.empty() ? std::string("-") : names;
  };

  std::set<int> enc_keys, dec_keys;
  for (int k = 0; k < mc.enc_task_count; ++k) enc_keys.insert(k);
  for (int k = 0; k < mc.dec_task_count; ++k) dec_keys.insert(k);

  if (mc.strategy == Strategy::Shared) {
    // every task uses all H heads in every layer
    HeadMask all_enc, all_dec;
    all_enc.bits.assign(static_cast<std::size_t>(mc.layers_enc),
                        std::vector<std::uint8_t>(static_cast<std::size_t>(mc.heads), 1));
    all_dec.bits.assign(static_cast<std::size_t>(mc.layers_dec),
                        std::vector<std::uint8_t>(static_cast<std::size_t>(mc.heads), 1));
    for (int k : enc_keys) {
      write_mask_csv(dir + "/enc_key" + std::to_string(k) + ".csv", all_enc);
      keys << "enc\t" << k << '\t' << side_tasks(true, k) << '\n';
    }
    for (int k : dec_keys) {
      write_mask_csv(dir + "/dec_key" + std::to_string(k) + ".csv", all_dec);
      keys << "dec\t" << k << '\t' << side_tasks(false, k) << '\n';
    }
  } else {
    SelectionPlan plan = inference_plan(model, mc.encoder_selective() ? enc_keys : std::set<int>{},
                                        mc.decoder_selective() ? dec_keys : std::set<int>{});
    if (mc.encoder_selective())
      for (int k : enc_keys) {
        write_mask_csv(dir + "/enc_key" + std::to_string(k) + ".csv", plan.enc.at(k).mask);
        keys << "enc\t" << k << '\t' << side_tasks(true, k) << '\n';
      }
    if (mc.decoder_selective())
      for (int k : dec_keys) {
        write_mask_csv(dir + "/dec_key" + std::to_string(k) + ".csv", plan.dec.at(k).mask);
        keys << "dec\t" << k << '\t' << side_tasks(false, k) << '\n';
      }
  }
  write_text(dir + "/keys.tsv", keys.str());
}

TrainConfig train_config_from(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.lr = cfg.get_double("lr");
  tc.beta1 = cfg.get_double("beta1");
  tc.beta2 = cfg.get_double("beta2");
  tc.batch_size = cfg.get_int("batch_size");
  tc.max_steps = cfg.get_long("max_steps");
  tc.kl_weight = cfg.get_double("beta");
  tc.tau_schedule = TauSchedule::parse(cfg.get("tau_schedule"));
  tc.patience = cfg.get_int("patience");
  tc.avg_last_k = cfg.get_int("avg_last_k");
  tc.seed = seed;
  return tc;
}

std::vector<Sample> suite_split(const std::vector<TaskSpec>& specs, Split split,
                                std::uint64_t seed) {
  std::vector<Sample> out;
  for (const auto& spec : specs) {
    auto part = generate(spec, split, seed);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

double mean_seq_acc(const std::vector<TaskMetrics>& rows) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.seq_acc;
  return s / static_cast<double>(rows.size());
}

double mean_edit_err(const std::vector<TaskMetrics>& rows) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.edit_err;
  return s / static_cast<double>(rows.size());
}

}  // namespace

// ---- subcommands --------------------------------------------------------------

RunResult cmd_train(const ExperimentConfig& cfg) {
  std::uint64_t seed = cfg.get_u64("seed");
  std::string out_dir = cfg.get("out");
  fs::create_directories(out_dir);

  SuiteData suite = load_suite(cfg.get("suite"), seed);
  bool adapter = cfg.get("strategy") == "adapter";
  ModelConfig mc = model_config_from(cfg, suite, adapter);
  Rng init_rng(derive_seed(seed, "init"));
  TransformerModel model(mc, init_rng);

  if (adapter) {
    if (cfg.has("backbone")) {
      model.load_checkpoint(cfg.get("backbone"));
    } else {
      std::lock_guard<std::mutex> lock(g_print_mutex);
      std::cerr << "warning: adapter training on an untrained backbone (no backbone= given)\n";
    }
    model.enable_adapters(cfg.get_int("adapter_dim"),
                          static_cast<int>(suite.train_specs.size()));
  }

  std::vector<EncodedSample> train =
      encode_samples(suite_split(suite.train_specs, Split::Train, seed), suite.codec, suite.cond);
  std::vector<EncodedSample> valid =
      encode_samples(suite_split(suite.train_specs, Split::Valid, seed), suite.codec, suite.cond);

  TrainConfig tc = train_config_from(cfg, seed);
  FitOptions fo;
  fo.checkpoint_dir = out_dir + "/checkpoints";
  FitResult fr = fit(model, train, valid, tc, fo);

  write_text(out_dir + "/config.txt", cfg.echo());
  write_train_log(out_dir + "/train_log.tsv", fr.log);
  model.save_checkpoint(out_dir + "/model_avg.ckpt");
  export_masks(model, suite, out_dir + "/masks");

  RunResult result;
  result.out_dir = out_dir;
  result.log = fr.log;
  std::vector<TaskMetrics> rows;
  std::vector<std::string> kinds;
  for (const auto& spec : suite.train_specs) {
    TaskMetrics m = evaluate_task(model, suite.codec, suite.cond, spec.name,
                                  generate(spec, Split::Test, seed), suite.max_len);
    result.test.push_back(m);
    rows.push_back(m);
    kinds.push_back("test");
  }
  for (const auto& spec : suite.test_only_specs) {
    if (adapter) {
      // no adapter exists for an unseen pair; recorded, not evaluated
      TaskMetrics na;
      na.task = spec.name;
      na.n = spec.n_test;
      na.seq_acc = na.token_acc = na.edit_err = std::nan("");
      rows.push_back(na);
      kinds.push_back("zero_shot");
      result.adapter_na_zero_shot = true;
      continue;
    }
    TaskMetrics m = evaluate_task(model, suite.codec, suite.cond, spec.name,
                                  generate(spec, Split::Test, seed), suite.max_len);
    result.zero_shot.push_back(m);
    rows.push_back(m);
    kinds.push_back("zero_shot");
  }
  write_metrics_csv(out_dir + "/metrics.csv", rows, kinds);
  return result;
}

RunResult cmd_eval(const ExperimentConfig& cfg) {
  std::string ckpt = cfg.has("checkpoint") ? cfg.get("checkpoint")
                                           : cfg.get("out") + "/model_avg.ckpt";
  std::uint64_t seed = cfg.get_u64("seed");
  SuiteData suite = load_suite(cfg.get("suite"), seed);
  ModelConfig mc = ModelConfig::from_echo(TransformerModel::checkpoint_config(ckpt));
  Rng init_rng(derive_seed(seed, "init"));
  TransformerModel model(mc, init_rng);
  model.load_checkpoint(ckpt);

  RunResult result;
  result.out_dir = cfg.get("out");
  std::vector<TaskMetrics> rows;
  std::vector<std::string> kinds;
  for (const auto& spec : suite.train_specs) {
    TaskMetrics m = evaluate_task(model, suite.codec, suite.cond, spec.name,
                                  generate(spec, Split::Test, seed), suite.max_len);
    result.test.push_back(m);
    rows.push_back(m);
    kinds.push_back("test");
  }
  bool adapter_model = mc.adapter_tasks > 0;
  for (const auto& spec : suite.test_only_specs) {
    if (adapter_model) {
      TaskMetrics na;
      na.task = spec.name;
      na.n = spec.n_test;
      na.seq_acc = na.token_acc = na.edit_err = std::nan("");
      rows.push_back(na);
      kinds.push_back("zero_shot");
      result.adapter_na_zero_shot = true;
      continue;
    }
    TaskMetrics m = evaluate_task(model, suite.codec, suite.cond, spec.name,
                                  generate(spec, Split::Test, seed), suite.max_len);
    result.zero_shot.push_back(m);
    rows.push_back(m);
    kinds.push_back("zero_shot");
  }
  fs::create_directories(result.out_dir);
  write_metrics_csv(result.out_dir + "/metrics_eval.csv", rows, kinds);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::lock_guard<std::mutex> lock(g_print_mutex);
    std::printf("%s [%s]: seq_acc=%.4f token_acc=%.4f edit_err=%.4f\n", rows[i].task.c_str(),
                kinds[i].c_str(), rows[i].seq_acc, rows[i].token_acc, rows[i].edit_err);
  }
  return result;
}

void run_cells(int jobs, std::vector<std::function<void()>> cells) {
  jobs = std::max(1, jobs);
  if (jobs == 1) {
    for (auto& c : cells) c();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        cells[i]();
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::vector<SweepRow> cmd_sweep_hprime(const ExperimentConfig& cfg) {
  std::string strategy = cfg.get("strategy");
  if (strategy != "subset" && strategy != "group")
    throw std::invalid_argument("sweep-hprime: strategy must be subset or group");
  int heads = cfg.get_int("heads");
  std::vector<int> hprimes = cfg.get_int_list("hprime_list");
  std::vector<std::uint64_t> seeds = cfg.seed_list();
  std::string out_root = cfg.get("out");
  fs::create_directories(out_root);

  struct Cell {
    int hprime;
    std::uint64_t seed;
    bool skipped;
    RunResult result;
  };
  std::vector<Cell> cells;
  for (int hp : hprimes)
    for (auto seed : seeds)
      cells.push_back({hp, seed, strategy == "group" && hp % heads != 0, {}});

  std::vector<std::function<void()>> work;
  for (auto& cell : cells) {
    if (cell.skipped) continue;
    work.push_back([&cell, &cfg, &out_root, &strategy] {
      ExperimentConfig run = cfg;
      run.set("hprime", std::to_string(cell.hprime));
      run.set("seed", std::to_string(cell.seed));
      run.set("seeds", "");
      if (cell.hprime == cfg.get_int("heads")) {
        // H' == H leaves no selection freedom; the cell is the shared
        // baseline computed through the selection path
      }
      run.set("out", out_root + "/" + strategy + "_h" + std::to_string(cell.hprime) + "_s" +
                         std::to_string(cell.seed));
      cell.result = cmd_train(run);
    });
  }
  run_cells(cfg.get_int("jobs"), std::move(work));

  std::vector<SweepRow> rows;
  for (int hp : hprimes) {
    double acc_sum = 0.0, err_sum = 0.0;
    int n = 0;
    for (const auto& cell : cells) {
      if (cell.hprime != hp) continue;
      SweepRow row;
      row.strategy = strategy;
      row.hprime = hp;
      row.seed = std::to_string(cell.seed);
      row.status = cell.skipped ? "skipped" : "ok";
      if (!cell.skipped) {
        row.seq_acc = mean_seq_acc(cell.result.test);
        row.edit_err = mean_edit_err(cell.result.test);
        acc_sum += row.seq_acc;
        err_sum += row.edit_err;
        ++n;
      }
      rows.push_back(row);
    }
    if (n > 0) {
      SweepRow mean;
      mean.strategy = strategy;
      mean.hprime = hp;
      mean.seed = "mean";
      mean.seq_acc = acc_sum / n;
      mean.edit_err = err_sum / n;
      mean.status = "ok";
      rows.push_back(mean);
    }
  }

  std::ofstream out(out_root + "/sweep.csv");
  out << "strategy,hprime,seed,seq_acc,edit_err,status\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%s,%.6f,%.6f,%s\n", r.strategy.c_str(), r.hprime,
                  r.seed.c_str(), r.seq_acc, r.edit_err, r.status.c_str());
    out << buf;
  }
  return rows;
}

std::vector<AblationRow> cmd_ablation_encdec(const ExperimentConfig& cfg) {
  std::vector<std::uint64_t> seeds = cfg.seed_list();
  std::string out_root = cfg.get("out");
  fs::create_directories(out_root);
  struct Variant {
    const char* name;
    bool enc, dec;
  };
  const Variant variants[] = {{"encoder_only", true, false},
                              {"decoder_only", false, true},
                              {"encoder_decoder", true, true}};

  struct Cell {
    std::string variant;
    std::uint64_t seed;
    RunResult result;
  };
  std::vector<Cell> cells;
  for (const auto& v : variants)
    for (auto seed : seeds) cells.push_back({v.name, seed, {}});

  std::vector<std::function<void()>> work;
  for (auto& cell : cells) {
    work.push_back([&cell, &cfg, &out_root] {
      ExperimentConfig run = cfg;
      run.set("select_encoder", cell.variant != "decoder_only" ? "1" : "0");
      run.set("select_decoder", cell.variant != "encoder_only" ? "1" : "0");
      run.set("seed", std::to_string(cell.seed));
      run.set("seeds", "");
      run.set("out", out_root + "/" + cell.variant + "_s" + std::to_string(cell.seed));
      cell.result = cmd_train(run);
    });
  }
  run_cells(cfg.get_int("jobs"), std::move(work));

  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    double acc_sum = 0.0, err_sum = 0.0;
    int n = 0;
    for (const auto& cell : cells) {
      if (cell.variant != v.name) continue;
      AblationRow row;
      row.variant = cell.variant;
      row.seed = std::to_string(cell.seed);
      row.seq_acc = mean_seq_acc(cell.result.test);
      row.edit_err = mean_edit_err(cell.result.test);
      rows.push_back(row);
      acc_sum += row.seq_acc;
      err_sum += row.edit_err;
      ++n;
    }
    rows.push_back({v.name, "mean", acc_sum / std::max(n, 1), err_sum / std::max(n, 1)});
  }

  std::ofstream out(out_root + "/ablation.csv");
  out << "variant,seed,seq_acc,edit_err\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f\n", r.variant.c_str(), r.seed.c_str(),
                  r.seq_acc, r.edit_err);
    out << buf;
  }
  return rows;
}

namespace {

struct SideMasks {
  std::vector<HeadMask> masks;
  std::vector<std::string> names;
};

SideMasks collect_side_masks(const std::string& mask_dir, const std::string& side) {
  SideMasks out;
  std::vector<std::pair<int, std::string>> files;
  for (const auto& entry : fs::directory_iterator(mask_dir)) {
    std::string name = entry.path().filename().string();
    std::string prefix = side + "_key";
    if (name.rfind(prefix, 0) == 0 && name.size() > prefix.size() + 4) {
      int key = std::stoi(name.substr(prefix.size(), name.size() - prefix.size() - 4));
      files.emplace_back(key, entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& [key, path] : files) {
    out.masks.push_back(read_mask_csv(path));
    out.names.push_back(side + std::to_string(key));
  }
  return out;
}

}  // namespace

int cmd_analyze(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  int failures = 0;
  std::ostringstream combined;
  combined << "run,side,layer,cv\n";
  char buf[160];
  for (const auto& dir : run_dirs) {
    std::string mask_dir = dir + "/masks";
    if (!fs::is_directory(mask_dir)) {
      std::lock_guard<std::mutex> lock(g_print_mutex);
      std::cerr << "analyze: " << dir << ": missing mask directory, skipped\n";
      ++failures;
      continue;
    }
    std::string analysis = dir + "/analysis";
    fs::create_directories(analysis);
    bool any = false;
    for (const std::string side : {"enc", "dec"}) {
      SideMasks sm = collect_side_masks(mask_dir, side);
      if (sm.masks.empty()) continue;
      any = true;
      write_sharing_csv(analysis + "/sharing_" + side + ".csv",
                        sharing_matrix(sm.masks, sm.names));
      HeadLoad load = head_load(sm.masks);
      write_head_load_csv(analysis + "/head_load_" + side + ".csv", load);
      std::vector<double> cv = load_balance_score(load);
      write_balance_csv(analysis + "/balance_" + side + ".csv", cv);
      std::string run_name = fs::path(dir).filename().string();
      for (std::size_t l = 0; l < cv.size(); ++l) {
        std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.6f\n", run_name.c_str(), side.c_str(), l,
                      cv[l]);
        combined << buf;
      }
    }
    if (!any) {
      std::lock_guard<std::mutex> lock(g_print_mutex);
      std::cerr << "analyze: " << dir << ": no mask CSVs found, skipped\n";
      ++failures;
    }
  }
  if (run_dirs.size() > 1 && !out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(out_dir + "/balance_combined.csv", combined.str());
  }
  return failures;
}

void cmd_dump_data(const ExperimentConfig& cfg) {
  std::uint64_t seed = cfg.get_u64("seed");
  SuiteData suite = load_suite(cfg.get("suite"), seed);
  std::string out_dir = cfg.get("out");
  fs::create_directories(out_dir);
  std::vector<TaskSpec> all = suite.train_specs;
  all.insert(all.end(), suite.test_only_specs.begin(), suite.test_only_specs.end());
  for (const auto& spec : all) {
    for (Split split : {Split::Train, Split::Valid, Split::Test}) {
      auto samples = generate(spec, split, seed);
      if (samples.empty()) continue;
      std::ofstream out(out_dir + "/" + spec.name + "_" + to_string(split) + ".tsv");
      dump_samples(out, samples);
    }
  }
}

}  // namespace headsel
