#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "mtcmtm/ablation.hpp"
#include "mtcmtm/checkpoint.hpp"
#include "mtcmtm/config.hpp"
#include "mtcmtm/data.hpp"
#include "mtcmtm/grad_suite.hpp"
#include "mtcmtm/model.hpp"
#include "mtcmtm/synthetic.hpp"
#include "mtcmtm/train.hpp"

namespace mtcmtm::cli {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

// Flags shared by the config-driven commands.
struct RunFlags {
  std::string config;
  std::string out;
  std::string run_id;
  std::vector<std::uint64_t> seeds;
  std::size_t threads = 0;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool config_required = true) {
  auto* opt = cmd->add_option("--config", f.config, "run configuration (YAML)");
  if (config_required) opt->required();
  opt->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output root (default: run.out, $MTCMTM_OUT, ./runs)");
  cmd->add_option("--run-id", f.run_id, "run directory name (default: <command>-<config hash>)");
  cmd->add_option("--seed", f.seeds, "override run.seeds");
  cmd->add_option("--threads", f.threads, "override run.threads");
}

RunConfig resolve_config(const RunFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (!f.seeds.empty()) cfg.run.seeds = f.seeds;
  if (f.threads > 0) cfg.run.threads = f.threads;
  if (!f.out.empty()) cfg.run.out = f.out;
  if (!f.run_id.empty()) cfg.run.run_id = f.run_id;
  cfg.validate();
  return cfg;
}

fs::path output_root(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("MTCMTM_OUT"); env && *env) return env;
  return "runs";
}

// Creates out/run-id and echoes the resolved config into it.
fs::path make_run_dir(RunConfig& cfg, const std::string& command) {
  if (cfg.run.run_id.empty()) {
    cfg.run.run_id = command + "-" + fnv1a_hex(command + "\n" + to_yaml(cfg)).substr(0, 8);
  }
  const fs::path dir = output_root(cfg.run.out) / cfg.run.run_id;
  fs::create_directories(dir);
  write_text(dir / "config.yaml", to_yaml(cfg));
  return dir;
}

PairedDataset load_dataset(const RunConfig& cfg) {
  if (cfg.data.csv.empty() || cfg.data.schema.empty()) {
    throw ConfigError("data.csv and data.schema must be set");
  }
  return PairedDataset::load(cfg.data.csv, cfg.data.schema, cfg.data.options);
}

std::string metrics_header(TaskKind kind) {
  return kind == TaskKind::regression ? "n,mse,mae" : "n,accuracy,balanced_accuracy,macro_f1";
}

std::string metrics_row(const EvalReport& r) {
  std::string s = std::to_string(r.n) + ",";
  if (r.kind == TaskKind::regression) return s + num(r.regression.mse) + "," + num(r.regression.mae);
  return s + num(r.classification.accuracy) + "," + num(r.classification.balanced_accuracy) + "," +
         num(r.classification.macro_f1);
}

std::string describe(const EvalReport& r) {
  char buf[160];
  if (r.kind == TaskKind::regression) {
    std::snprintf(buf, sizeof(buf), "mse %.5f  mae %.5f  (n=%zu)", r.regression.mse, r.regression.mae,
                  r.n);
  } else {
    std::snprintf(buf, sizeof(buf), "acc %.4f  bal_acc %.4f  macro_f1 %.4f  (n=%zu)",
                  r.classification.accuracy, r.classification.balanced_accuracy,
                  r.classification.macro_f1, r.n);
  }
  return buf;
}

// -- commands

int cmd_synth(std::size_t n, std::uint64_t seed, const std::string& out_dir, std::size_t image_size,
              std::ostream& out) {
  SyntheticConfig sc;
  sc.image_size = image_size;
  generate_synthetic(n, seed, out_dir, sc);
  out << "wrote " << n << " samples to " << out_dir << "\n";
  return kOk;
}

int cmd_pretrain(const RunFlags& flags, std::ostream& out) {
  RunConfig cfg = resolve_config(flags);
  const PairedDataset ds = load_dataset(cfg);
  const fs::path dir = make_run_dir(cfg, "pretrain");
  std::ostringstream log;
  log << "seed,epoch,loss,contrastive,mask,reconstruction,s_c,s_m,lr\n";
  for (const auto seed : cfg.run.seeds) {
    const PretrainResult r = pretrain(cfg, ds, seed);
    for (const auto& e : r.log) {
      log << seed << "," << e.epoch << "," << num(e.loss) << "," << num(e.contrastive) << ","
          << num(e.mask) << "," << num(e.reconstruction) << "," << num(e.s_c) << "," << num(e.s_m)
          << "," << num(e.lr) << "\n";
    }
    const fs::path ckpt = dir / ("pretrain_seed" + std::to_string(seed) + ".ckpt");
    save_checkpoint(ckpt, r.checkpoint);
    out << "seed " << seed << ": final loss " << (r.log.empty() ? 0.0 : r.log.back().loss) << " -> "
        << ckpt.string() << "\n";
  }
  write_text(dir / "pretrain_loss.csv", log.str());
  return kOk;
}

int cmd_finetune(const RunFlags& flags, const std::string& from, std::ostream& out) {
  RunConfig cfg = resolve_config(flags);
  const PairedDataset ds = load_dataset(cfg);
  std::optional<Checkpoint> init;
  if (!from.empty()) init = load_checkpoint(from);
  const fs::path dir = make_run_dir(cfg, "finetune");

  const TaskKind kind = ds.task().kind;
  std::ostringstream metrics, log;
  metrics << "seed,split,best_epoch," << metrics_header(kind) << "\n";
  log << "seed,epoch,train_loss,val_score\n";
  for (const auto seed : cfg.run.seeds) {
    const FinetuneResult r = finetune(cfg, ds, seed, init ? &*init : nullptr);
    for (const auto& e : r.log) {
      log << seed << "," << e.epoch << "," << num(e.train_loss) << "," << num(e.val.score()) << "\n";
    }
    metrics << seed << ",val," << r.best_epoch << "," << metrics_row(r.val) << "\n";
    metrics << seed << "," << (r.has_test_split ? "test" : "val_as_test") << "," << r.best_epoch
            << "," << metrics_row(r.test) << "\n";
    Checkpoint ckpt = finetune_checkpoint(r);
    // Where the run was written is not part of the model.
    RunConfig embedded = cfg;
    embedded.run.out.clear();
    embedded.run.run_id.clear();
    ckpt.meta["config"] = to_yaml(embedded);
    ckpt.meta["seed"] = std::to_string(seed);
    save_checkpoint(dir / ("model_seed" + std::to_string(seed) + ".ckpt"), ckpt);
    out << "seed " << seed << ": best epoch " << r.best_epoch << ", test " << describe(r.test)
        << "\n";
  }
  write_text(dir / "metrics.csv", metrics.str());
  write_text(dir / "finetune_log.csv", log.str());
  return kOk;
}

int cmd_ablate(const RunFlags& flags, const std::vector<double>& fractions,
               const std::vector<std::string>& strategies, const std::string& cache_dir,
               std::ostream& out) {
  RunConfig cfg = resolve_config(flags);
  const PairedDataset ds = load_dataset(cfg);
  const fs::path dir = make_run_dir(cfg, "ablate");
  AblationOptions opts;
  if (!fractions.empty()) opts.train_fractions = fractions;
  if (!strategies.empty()) opts.strategies = strategies;
  for (double f : opts.train_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("--train-fraction values must be in (0, 1]");
  }
  PretrainCache cache(cache_dir.empty() ? dir / "pretrain_cache" : fs::path(cache_dir));
  const AblationReport report = run_ablation(cfg, ds, cache, opts);
  const std::string table = ablation_table(report);
  write_text(dir / "ablation.csv", ablation_csv(report));
  write_text(dir / "ablation.txt", table);
  out << table;
  return kOk;
}

int cmd_eval(const std::string& model_path, const std::string& data, const std::string& schema,
             const std::string& split_name, const RunFlags& flags, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(model_path);
  auto it = ckpt.meta.find("config");
  if (it == ckpt.meta.end()) throw CheckpointError("checkpoint has no embedded run config");
  RunConfig cfg = parse_run_config(it->second);
  if (!data.empty()) cfg.data.csv = data;
  if (!schema.empty()) cfg.data.schema = schema;
  cfg.run.run_id = flags.run_id;
  if (!flags.out.empty()) cfg.run.out = flags.out;
  LoadedModel m = load_finetuned(ckpt);
  const PairedDataset ds = load_dataset(cfg);
  if (ds.task().kind != m.task.kind || ds.task().outputs != m.task.outputs) {
    throw DataError("dataset task does not match the model's task");
  }
  SplitTag tag;
  if (split_name == "train") {
    tag = SplitTag::train;
  } else if (split_name == "val") {
    tag = SplitTag::val;
  } else if (split_name == "test") {
    tag = SplitTag::test;
  } else {
    throw ConfigError("--split must be train, val or test");
  }
  auto ids = ds.ids(tag);
  if (ids.empty()) throw DataError("split '" + split_name + "' is empty");
  const EvalReport r = evaluate(m.params, m.encoder, m.task, ds, ids);
  const fs::path dir = make_run_dir(cfg, "eval");
  write_text(dir / "eval.csv", "split," + metrics_header(r.kind) + "\n" + split_name + "," +
                                   metrics_row(r) + "\n");
  out << split_name << ": " << describe(r) << "\n";
  return kOk;
}

int cmd_stats(const RunFlags& flags, std::size_t input_len, const std::string& task_name,
              std::size_t outputs, std::ostream& out) {
  RunConfig cfg = resolve_config(flags);
  EncoderConfig enc = cfg.model;
  TaskSpec task;
  if (!cfg.data.csv.empty()) {
    const PairedDataset ds = load_dataset(cfg);
    enc = resolve_encoder(cfg.model, ds);
    task = ds.task();
  } else {
    enc.tabular.input_len = input_len;
    task.kind = task_name == "classification" ? TaskKind::classification : TaskKind::regression;
    task.outputs = outputs;
  }
  enc.validate();

  ParamStore down, pre;
  Rng rng(0);
  init_downstream_model(down, enc, task, rng);
  init_pretrain_model(pre, enc, cfg.pretrain.heads, rng);
  const ModelStats tab = tabular_encoder_stats(enc.tabular);
  const ModelStats ds_stats = downstream_stats(enc, task);
  const ModelStats pre_stats = pretrain_stats(enc, cfg.pretrain.heads);

  auto line = [&](const char* name, const ModelStats& s, std::size_t runtime) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-22s params %10zu  runtime %10s  FLOPs/sample %12zu\n", name,
                  s.param_count, runtime ? std::to_string(runtime).c_str() : "-",
                  s.flops_per_forward);
    out << buf;
  };
  out << "encoder: " << enc.canonical() << "\n";
  out << "feature dim D = " << enc.tabular.feature_dim() << "\n";
  line("tabular encoder", tab, 0);
  line("downstream model", ds_stats, down.trainable_scalars());
  line("pretrain model", pre_stats, pre.trainable_scalars());
  const bool ok = ds_stats.param_count == down.trainable_scalars() &&
                  pre_stats.param_count == pre.trainable_scalars();
  if (!ok) out << "param_count does not match the runtime count\n";
  return ok ? kOk : kTestFailure;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t variants, const std::string& filter,
                  std::ostream& out) {
  const auto results = run_grad_suite(seed, variants, filter);
  if (results.empty()) throw ConfigError("no gradient check case matches '" + filter + "'");
  bool ok = true;
  for (const auto& r : results) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-28s max_rel_err %.3e  %s\n", r.name.c_str(), r.max_rel_error,
                  r.passed() ? "ok" : "FAIL");
    out << buf;
    ok = ok && r.passed();
  }
  out << (ok ? "all gradient checks passed\n" : "gradient check FAILED\n");
  return ok ? kOk : kTestFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MT-CMTM: multi-task contrastive masked tabular modeling"};
  app.require_subcommand(1);

  std::size_t synth_n = 2000, image_size = 32;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate the synthetic paired dataset");
  synth->add_option("--n", synth_n, "number of samples")->check(CLI::Range(50, 10000000));
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--image-size", image_size, "image side length")->check(CLI::Range(8, 512));

  RunFlags pre_flags;
  auto* pre = app.add_subcommand("pretrain", "pre-train the tabular encoder");
  add_run_flags(pre, pre_flags);

  RunFlags ft_flags;
  std::string from;
  auto* ft = app.add_subcommand("finetune", "fine-tune on the downstream task");
  add_run_flags(ft, ft_flags);
  ft->add_option("--from", from, "pre-trained checkpoint (default: fresh init)")
      ->check(CLI::ExistingFile);

  RunFlags ab_flags;
  std::vector<double> fractions;
  std::vector<std::string> strategies;
  std::string cache_dir;
  auto* ab = app.add_subcommand("ablate", "compare pre-training strategies");
  add_run_flags(ab, ab_flags);
  ab->add_option("--train-fraction", fractions, "fine-tuning train fractions (default 1.0)")
      ->delimiter(',');
  ab->add_option("--strategies", strategies,
                 "rows: pm, pretext_mask, pretext_feature, mmcl, mt_cmtm")
      ->delimiter(',');
  ab->add_option("--cache-dir", cache_dir, "pre-training cache (default: <run dir>/pretrain_cache)");

  RunFlags ev_flags;
  std::string model_path, data, schema, split_name = "test";
  auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned model");
  ev->add_option("--model", model_path, "fine-tuned checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "CSV file (default: the one the model was trained on)");
  ev->add_option("--schema", schema, "schema file (default: the training schema)");
  ev->add_option("--split", split_name, "train, val or test");
  ev->add_option("--out", ev_flags.out, "output root");
  ev->add_option("--run-id", ev_flags.run_id, "run directory name");

  RunFlags st_flags;
  std::size_t input_len = kSyntheticFeatures, outputs = kSyntheticTargets;
  std::string task_name = "regression";
  auto* st = app.add_subcommand("stats", "parameter and FLOP counts");
  add_run_flags(st, st_flags, false);
  st->add_option("--input-len", input_len, "feature count when the config has no data");
  st->add_option("--task", task_name, "regression or classification (without data)")
      ->check(CLI::IsMember({"regression", "classification"}));
  st->add_option("--outputs", outputs, "head outputs (without data)");

  std::uint64_t gc_seed = 0;
  std::size_t variants = 20;
  std::string filter;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seed", gc_seed, "suite seed");
  gc->add_option("--variants", variants, "random seeds/shapes per case")->check(CLI::Range(1, 1000));
  gc->add_option("--filter", filter, "only cases whose name contains this");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_n, synth_seed, synth_out, image_size, out);
    if (*pre) return cmd_pretrain(pre_flags, out);
    if (*ft) return cmd_finetune(ft_flags, from, out);
    if (*ab) return cmd_ablate(ab_flags, fractions, strategies, cache_dir, out);
    if (*ev) return cmd_eval(model_path, data, schema, split_name, ev_flags, out);
    if (*st) return cmd_stats(st_flags, input_len, task_name, outputs, out);
    if (*gc) return cmd_gradcheck(gc_seed, variants, filter, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "file error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace mtcmtm::cli
