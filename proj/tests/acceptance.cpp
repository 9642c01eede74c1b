// Acceptance run: one PASS/FAIL line per criterion, indented detail lines
// below each. Exit status is 0 only if every criterion passes.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "mtcmtm/ablation.hpp"
#include "mtcmtm/grad_suite.hpp"
#include "mtcmtm/losses.hpp"
#include "mtcmtm/mtm.hpp"
#include "mtcmtm/synthetic.hpp"
#include "mtcmtm/train.hpp"

using namespace mtcmtm;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::vector<std::string> details;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    details.push_back(std::string(ok ? "ok    " : "FAILED ") + what);
  }
  void note(const std::string& what) { details.push_back("      " + what); }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Work {
  fs::path dir;
  RunConfig cfg;  // acceptance settings, regression data
  std::unique_ptr<PairedDataset> reg, cls;
  std::unique_ptr<PretrainCache> cache;
  AblationReport reg_report, cls_report;
  bool ablation_ran = false;
};

// -- 1
Outcome gradient_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto results = run_grad_suite(0, 20);
  double worst = 0.0;
  std::size_t failed = 0;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed()) {
      ++failed;
      o.note(r.name + " max rel err " + fmt("%.3e", r.max_rel_error));
    }
  }
  const double secs = seconds_since(t0);
  o.require(failed == 0, std::to_string(results.size()) + " cases x 20 variants, worst rel err " +
                             fmt("%.3e", worst) + " (< 1e-5)");
  o.require(secs < 120.0, "runtime " + fmt("%.1f", secs) + " s (< 120 s)");
  return o;
}

// -- 2
Outcome loss_oracles() {
  PrecisionScope p(Precision::f64);
  Outcome o;
  Tape t;
  double worst = 0.0;
  for (std::size_t n : {2, 4, 16, 64}) {
    const Tensor z = Tensor::full({n, 8}, 0.25);
    const double got = info_nce(t.constant(z), t.constant(z), 0.1).value()[0];
    worst = std::max(worst, std::abs(got - std::log(static_cast<double>(n))));
  }
  o.require(worst < 1e-10, "info_nce uniform = ln N, max err " + fmt("%.2e", worst));

  Rng rng(1);
  worst = 0.0;
  for (double tau : {0.05, 0.1, 0.7}) {
    Tensor a({6, 4}), b({6, 4});
    for (auto& v : a.mutable_data()) v = rng.normal(0.0, 1.0);
    for (auto& v : b.mutable_data()) v = rng.normal(0.0, 1.0);
    const double ref = info_nce(t.constant(a), t.constant(b), tau).value()[0];
    const double got =
        clip_loss(t.constant(a), t.constant(b), t.constant(Tensor::scalar(std::log(1.0 / tau)))).value()[0];
    worst = std::max(worst, std::abs(got - ref));
  }
  o.require(worst < 1e-10, "clip(frozen scale 1/tau) = info_nce, max err " + fmt("%.2e", worst));

  const Tensor m({2, 3}, {1, 0, 1, 0, 0, 1});
  Tensor flip = m;
  for (auto& v : flip.mutable_data()) v = 1 - v;
  const double l0 = mask_loss(t.constant(m), t.constant(m)).value()[0];
  const double l1 = mask_loss(t.constant(m), t.constant(flip)).value()[0];
  const double lh = mask_loss(t.constant(m), t.constant(Tensor::full({2, 3}, 0.5))).value()[0];
  o.require(l0 == 0.0 && l1 == 1.0 && lh == 0.5, "mask_loss trivial cases {0, 1, 0.5}");

  DownstreamLoss huber;
  huber.kind = DownstreamLossKind::huber;
  const double h = regression_loss(huber, t.constant(Tensor({1, 2}, {0.5, 3.0})), Tensor({1, 2}, {0.0, 0.0})).value()[0];
  const double h_ref = (0.5 * 0.25 + (3.0 - 0.5)) / 2.0;
  DownstreamLoss ce;
  ce.kind = DownstreamLossKind::ce;
  const std::vector<std::size_t> y{2};
  const double c = classification_loss(ce, t.constant(Tensor({1, 3}, {1.0, 0.0, -1.0})), y).value()[0];
  const double c_ref = std::log(std::exp(1.0) + 1.0 + std::exp(-1.0)) + 1.0;
  DownstreamLoss focal;
  focal.kind = DownstreamLossKind::focal;
  const std::vector<std::size_t> y0{0};
  const double f = classification_loss(focal, t.constant(Tensor({1, 2}, {std::log(3.0), 0.0})), y0).value()[0];
  const double f_ref = -(0.25 * 0.25) * std::log(0.75);
  const double err = std::max({std::abs(h - h_ref), std::abs(c - c_ref), std::abs(f - f_ref)});
  o.require(err < 1e-12, "huber/ce/focal hand values, max err " + fmt("%.2e", err));
  return o;
}

// -- 3
Outcome corruption_semantics(const Work& w) {
  Outcome o;
  const auto t0 = Clock::now();
  const auto train = w.reg->ids(SplitTag::train);
  const Tensor train_x = w.reg->features(train);
  const auto marginals = fit_empirical_marginals(train_x);
  const std::size_t rows = 100000, len = train_x.shape()[1];
  Tensor x({rows, len});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t src = r % train.size();
    for (std::size_t j = 0; j < len; ++j) x[r * len + j] = train_x[src * len + j];
  }
  std::vector<std::size_t> ids(rows);
  std::iota(ids.begin(), ids.end(), 0);
  const double p_m = w.cfg.pretrain.p_m;
  const MaskRecord rec = corrupt_batch(x, ids, marginals, p_m, 123, 0);
  std::size_t masked = 0, bad_copy = 0, bad_support = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (rec.mask[k] == 1.0) {
      ++masked;
      bad_support += !marginals.in_support(k % len, rec.corrupted[k]);
    } else {
      bad_copy += std::bit_cast<std::uint64_t>(rec.corrupted[k]) != std::bit_cast<std::uint64_t>(x[k]);
    }
  }
  const double total = static_cast<double>(x.size());
  const double rate = static_cast<double>(masked) / total;
  const double sigma = std::sqrt(p_m * (1 - p_m) / total);
  o.require(bad_copy == 0, "unmasked coordinates bit-equal: " + std::to_string(bad_copy) + " mismatches");
  o.require(bad_support == 0, "masked values in train support: " + std::to_string(bad_support) + " outside");
  o.require(std::abs(rate - p_m) < 3 * sigma,
            "mask rate " + fmt("%.5f", rate) + " vs p_m " + fmt("%.2f", p_m) + " (3 sigma = " + fmt("%.5f", 3 * sigma) + ")");
  const double secs = seconds_since(t0);
  o.require(secs < 30.0, "1e5 samples x " + std::to_string(len) + " features in " + fmt("%.2f", secs) + " s (< 30 s)");
  return o;
}

// -- 4
Outcome multitask_gradients(const Work& w) {
  PrecisionScope p(Precision::f64);
  Outcome o;
  Rng rng(4);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double lc = rng.uniform(0.05, 6.0), lm = rng.uniform(0.05, 1.0);
    const double sc = rng.uniform(-3.0, 3.0), sm = rng.uniform(-3.0, 3.0);
    Tape t;
    const Var s_c = t.parameter("s_c", Tensor::scalar(sc)), s_m = t.parameter("s_m", Tensor::scalar(sm));
    const GradMap g = t.backward(combine_multitask(t.constant(Tensor::scalar(lc)), t.constant(Tensor::scalar(lm)),
                                                   {MultiTaskMode::uncertainty}, &s_c, &s_m));
    worst = std::max(worst, std::abs(g.at("s_c")[0] - (-std::exp(-sc) * lc + 1)));
    worst = std::max(worst, std::abs(g.at("s_m")[0] - (-std::exp(-sm) * lm + 1)));
  }
  o.require(worst < 1e-8, "combine_multitask dL/ds, 50 random draws, max err " + fmt("%.2e", worst));

  // Through the full pre-training objective, with the task losses it reports.
  RunConfig c = w.cfg;
  c.model.tabular.stem_channels = 4;
  c.model.tabular.n_blocks = 2;
  const EncoderConfig enc = resolve_encoder(c.model, *w.reg);
  const auto ids = w.reg->ids(SplitTag::train);
  const std::vector<std::size_t> batch(ids.begin(), ids.begin() + 16);
  const Tensor x = w.reg->features(batch), imgs = w.reg->images(batch);
  const EmpiricalMarginals marg = fit_empirical_marginals(w.reg->features(ids));
  const MaskRecord rec = corrupt_batch(x, batch, marg, 0.3, 1, 0);
  worst = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    ParamStore store;
    Rng init(seed);
    init_pretrain_model(store, enc, c.pretrain.heads, init);
    store.set("mt.s_c", Tensor::scalar(init.uniform(-1.0, 1.0)));
    store.set("mt.s_m", Tensor::scalar(init.uniform(-1.0, 1.0)));
    Tape tape;
    Forward fw(tape, store, Mode::train);
    fw.set_update_running_stats(false);
    PretrainStepLog parts;
    const Var loss = pretrain_objective(fw, enc, c.pretrain.heads, c.pretrain.weights, x, rec.corrupted, rec.mask,
                                        &imgs, &parts);
    const GradMap g = fw.gradients(loss);
    const double sc = store.get("mt.s_c")[0], sm = store.get("mt.s_m")[0];
    worst = std::max(worst, std::abs(g.at("mt.s_c")[0] - (-std::exp(-sc) * parts.contrastive + 1)));
    worst = std::max(worst, std::abs(g.at("mt.s_m")[0] - (-std::exp(-sm) * parts.mask + 1)));
  }
  o.require(worst < 1e-8, "pretrain objective dL/ds_c, dL/ds_m, 3 inits, max err " + fmt("%.2e", worst));
  return o;
}

// -- 5
Outcome directional_reproduction(Work& w) {
  Outcome o;
  const auto t0 = Clock::now();
  AblationOptions opt;
  opt.strategies = {"pm", "pretext_mask", "mmcl", "mt_cmtm"};
  w.reg_report = run_ablation(w.cfg, *w.reg, *w.cache, opt);
  RunConfig ccfg = w.cfg;
  w.cls_report = run_ablation(ccfg, *w.cls, *w.cache, opt);
  w.ablation_ran = true;
  const double secs = seconds_since(t0);

  std::size_t reg_wins = 0, cls_wins = 0;
  for (std::uint64_t s : w.cfg.run.seeds) {
    const double a = test_score(w.reg_report, "mt_cmtm", s), b = test_score(w.reg_report, "pm", s);
    const double ca = test_score(w.cls_report, "mt_cmtm", s), cb = test_score(w.cls_report, "pm", s);
    reg_wins += a < b;
    cls_wins += ca > cb;
    o.note("seed " + std::to_string(s) + ": MSE mt_cmtm " + fmt("%.5f", a) + " pm " + fmt("%.5f", b) +
           " | acc mt_cmtm " + fmt("%.4f", ca) + " pm " + fmt("%.4f", cb));
  }
  auto mean = [](const AblationReport& r, const char* s) { return mean_test_score(r, s); };
  for (const char* s : {"pm", "pretext_mask", "mmcl", "mt_cmtm"}) {
    o.note(std::string("mean ") + s + ": MSE " + fmt("%.5f", mean(w.reg_report, s)) + ", acc " +
           fmt("%.4f", mean(w.cls_report, s)));
  }
  const std::size_t n = w.cfg.run.seeds.size();
  o.require(reg_wins >= 4, "regression: mt_cmtm MSE < pm in " + std::to_string(reg_wins) + "/" + std::to_string(n) + " seeds");
  o.require(cls_wins >= 4, "classification: mt_cmtm acc > pm in " + std::to_string(cls_wins) + "/" + std::to_string(n) + " seeds");
  o.require(mean(w.reg_report, "mt_cmtm") < mean(w.reg_report, "pm") &&
                mean(w.cls_report, "mt_cmtm") > mean(w.cls_report, "pm"),
            "mean mt_cmtm better than pm on both tasks");
  const bool reg_order = mean(w.reg_report, "mt_cmtm") <= mean(w.reg_report, "mmcl") &&
                         mean(w.reg_report, "mt_cmtm") <= mean(w.reg_report, "pretext_mask");
  const bool cls_order = mean(w.cls_report, "mt_cmtm") >= mean(w.cls_report, "mmcl") &&
                         mean(w.cls_report, "mt_cmtm") >= mean(w.cls_report, "pretext_mask");
  o.require(reg_order || cls_order, std::string("mt_cmtm at least as good as mmcl and pretext_mask on >= 1 task (regression ") +
                                        (reg_order ? "yes" : "no") + ", classification " + (cls_order ? "yes" : "no") + ")");
  o.require(secs < 900.0, "runtime " + fmt("%.0f", secs) + " s (< 900 s)");
  return o;
}

// -- 6
Outcome block_count(Work& w) {
  Outcome o;
  const auto t0 = Clock::now();
  RunConfig one = w.cfg;
  one.model.tabular.n_blocks = 1;
  double m1 = 0.0, m4 = 0.0;
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  for (std::uint64_t s : seeds) {
    const double a = finetune(one, *w.reg, s).test.regression.mse;
    // n_blocks = 4 is the acceptance default; its PM runs come from criterion 5.
    const double b = w.ablation_ran ? test_score(w.reg_report, "pm", s) : finetune(w.cfg, *w.reg, s).test.regression.mse;
    o.note("seed " + std::to_string(s) + ": n_blocks=1 " + fmt("%.5f", a) + ", n_blocks=4 " + fmt("%.5f", b));
    m1 += a / 3.0;
    m4 += b / 3.0;
  }
  o.require(m4 <= m1, "mean test MSE n_blocks=4 " + fmt("%.5f", m4) + " <= n_blocks=1 " + fmt("%.5f", m1));
  o.note("runtime " + fmt("%.0f", seconds_since(t0)) + " s");
  return o;
}

// -- 7
Outcome low_data(Work& w) {
  Outcome o;
  const auto t0 = Clock::now();
  RunConfig c = w.cfg;
  c.run.seeds = {0, 1, 2};
  const fs::path cfg_file = w.dir / "c7.yaml";
  std::ofstream(cfg_file) << to_yaml(c);
  std::ostringstream out, err;
  const int code = cli::run({"mtcmtm", "ablate", "--config", cfg_file.string(), "--out", (w.dir / "runs").string(),
                             "--run-id", "low_data", "--train-fraction", "0.1,0.5,1.0", "--strategies", "pm,mt_cmtm",
                             "--cache-dir", (w.dir / "pretrain_cache").string()},
                            out, err);
  o.require(code == 0, "cmd ablate exit code " + std::to_string(code) + (code ? ": " + err.str() : ""));
  if (code != 0) return o;

  // strategy,seed,train_fraction,best_epoch,val_mse,val_mae,test_mse,...
  std::map<std::string, std::map<double, std::vector<double>>> mse;
  std::istringstream csv(read_file(w.dir / "runs" / "low_data" / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    mse[f[0]][std::stod(f[2])].push_back(std::stod(f[6]));
  }
  for (const auto& [strategy, by_fraction] : mse) {
    std::vector<double> means;
    std::string row;
    for (const auto& [fraction, v] : by_fraction) {
      means.push_back(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
      row += fmt(" %.2f:", fraction) + fmt("%.5f", means.back()) + " (" + std::to_string(v.size()) + " seeds)";
    }
    std::size_t inversions = 0;
    bool small = true;
    for (std::size_t i = 1; i < means.size(); ++i) {
      if (means[i] > means[i - 1]) {
        ++inversions;
        small = small && (means[i] - means[i - 1]) <= 0.05 * means[i - 1];
      }
    }
    o.require(means.size() == 3 && (inversions == 0 || (inversions == 1 && small)),
              strategy + " mean test MSE by fraction" + row);
  }
  o.note("runtime " + fmt("%.0f", seconds_since(t0)) + " s");
  return o;
}

// -- 8
Outcome model_stats_check() {
  Outcome o;
  std::size_t configs = 0, mismatches = 0;
  Rng rng(8);
  for (std::size_t blocks : {1, 2, 3, 4, 5}) {
    for (std::size_t c0 : {4, 8}) {
      for (std::size_t s0 : {5, 8}) {
        for (std::size_t k : {3, 5}) {
          for (auto img : {ImageEncoderKind::mlp, ImageEncoderKind::small_cnn}) {
            EncoderConfig e;
            e.tabular = {7, c0, s0, blocks, k, 2, 3};
            e.image.kind = img;
            e.image.height = e.image.width = 8;
            e.image.hidden = 16;
            e.image.cnn_channels1 = 3;
            e.image.cnn_channels2 = 5;
            e.image.feature_dim = 6;
            e.projection_dim = 5;
            for (const TaskSpec& task : {TaskSpec{TaskKind::regression, 4}, TaskSpec{TaskKind::classification, 3}}) {
              ParamStore s;
              init_downstream_model(s, e, task, rng);
              ++configs;
              mismatches += downstream_stats(e, task).param_count != s.trainable_scalars();
            }
            for (auto strat : {PretrainStrategy::mtm_mask, PretrainStrategy::mtm_feature, PretrainStrategy::mmcl,
                               PretrainStrategy::mt_cmtm}) {
              for (auto kind : {ContrastiveKind::info_nce, ContrastiveKind::clip, ContrastiveKind::simsiam,
                                ContrastiveKind::barlow_twins}) {
                const PretrainHeads h{strat, kind, MultiTaskMode::uncertainty};
                ParamStore s;
                init_pretrain_model(s, e, h, rng);
                ++configs;
                mismatches += pretrain_stats(e, h).param_count != s.trainable_scalars();
              }
            }
          }
        }
      }
    }
  }
  o.require(mismatches == 0, "param_count == runtime scalars over " + std::to_string(configs) + " configs (" +
                                 std::to_string(mismatches) + " mismatches)");

  // Hand counts. MAC = 2 FLOPs; bias adds are not counted.
  bool ok = dense_stats(10, 5) == ModelStats{55, 100};
  ok = ok && conv1d_stats(3, 4, 5, 10) == ModelStats{64, 1200};
  ok = ok && conv2d_stats(1, 2, 3, 6, 6) == ModelStats{20, 1296};
  o.require(ok, "single-layer dense/conv1d/conv2d hand counts");
  // One-block encoder: L=5, C=4, S=6, k=3, r=2, sk=3.
  //   stem dense 5->24: 144 params, 240 FLOPs
  //   conv1, conv2 (4->4, k3, len 6): 52 params, 576 FLOPs each; bn1, bn2: 8 params each
  //   cbam mlp 4->2->4: 22 params, 2 * (16 + 16) FLOPs (avg and max descriptors)
  //   cbam spatial conv 2->1, k3, len 6: 7 params, 72 FLOPs
  const TabularEncoderConfig one{5, 4, 6, 1, 3, 2, 3};
  const ModelStats got = tabular_encoder_stats(one);
  o.require(got == ModelStats{293, 1528}, "one-block encoder hand count 293 params / 1528 FLOPs, got " +
                                              std::to_string(got.param_count) + " / " + std::to_string(got.flops_per_forward));
  return o;
}

// -- 9
Outcome determinism(Work& w) {
  Outcome o;
  RunConfig c = w.cfg;
  c.pretrain.epochs = 2;
  c.finetune.epochs = 3;
  c.run.seeds = {7};
  o.require(serialize_checkpoint(pretrain(c, *w.reg, 7).checkpoint) ==
                serialize_checkpoint(pretrain(c, *w.reg, 7).checkpoint),
            "pretrain twice: bit-identical checkpoints");

  PretrainCache none;
  AblationOptions opt;
  opt.strategies = {"pm"};
  const std::string csv1 = ablation_csv(run_ablation(c, *w.cls, none, opt));
  const std::string csv2 = ablation_csv(run_ablation(c, *w.cls, none, opt));
  o.require(csv1 == csv2, "fine-tune twice: identical metric CSV");

  const FinetuneResult r = finetune(c, *w.reg, 7);
  const FinetuneResult r2 = finetune(c, *w.reg, 7);
  o.require(serialize_checkpoint(finetune_checkpoint(r)) == serialize_checkpoint(finetune_checkpoint(r2)),
            "fine-tune twice: bit-identical checkpoints");

  const fs::path file = w.dir / "det_model.ckpt";
  save_checkpoint(file, finetune_checkpoint(r));
  LoadedModel m = load_finetuned(load_checkpoint(file));
  ParamStore before = r.model;
  const Tensor x = w.reg->features(w.reg->ids(SplitTag::test));
  {
    PrecisionScope p(Precision::f32);
    o.require(predict(before, r.encoder, r.task, x) == predict(m.params, m.encoder, m.task, x),
              "save/load: bit-identical forward (f32)");
  }

  const fs::path a = w.dir / "synth_a", b = w.dir / "synth_b";
  fs::remove_all(a);
  fs::remove_all(b);
  generate_synthetic(2000, 0, a);
  generate_synthetic(2000, 0, b);
  std::size_t files = 0, diffs = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    diffs += read_file(e.path()) != read_file(b / fs::relative(e.path(), a));
  }
  o.require(files > 2000 && diffs == 0, "synthetic generator twice: " + std::to_string(files) + " files, " +
                                            std::to_string(diffs) + " differ");
  fs::remove_all(a);
  fs::remove_all(b);
  return o;
}

// -- 10
Outcome leakage(Work& w) {
  Outcome o;
  const fs::path data = w.dir / "data";
  // Allowed ids come from the split definition, not from the dataset object.
  const auto train = ids_with(split(2000, w.cfg.data.options.split, w.cfg.data.options.split_seed), SplitTag::train);

  AccessAudit fit;
  fit.allow(train);
  const PairedDataset ds =
      PairedDataset::load(data / "data.csv", data / "schema_regression.yaml", w.cfg.data.options, &fit);
  o.require(fit.reads() > 0 && fit.forbidden() == 0, "statistics fitting: " + std::to_string(fit.reads()) +
                                                         " reads, " + std::to_string(fit.forbidden()) + " forbidden");

  RunConfig c = w.cfg;
  c.pretrain.epochs = 1;
  for (auto strat : {PretrainStrategy::mtm_mask, PretrainStrategy::mt_cmtm}) {
    c.pretrain.heads.strategy = strat;
    AccessAudit audit;
    audit.allow(train);
    pretrain(c, ds, 0, &audit);
    o.require(audit.reads() > 0 && audit.forbidden() == 0,
              "pre-training " + std::string(to_string(strat)) + ": " + std::to_string(audit.reads()) + " reads, " +
                  std::to_string(audit.forbidden()) + " forbidden");
  }
  // The instrument must be able to fail.
  AccessAudit control;
  control.allow(std::vector<std::size_t>(train.begin(), train.begin() + 10));
  pretrain(c, ds, 0, &control);
  o.require(control.forbidden() > 0, "control run with a 10-id allow list flags " +
                                         std::to_string(control.forbidden()) + " forbidden reads");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const auto start = Clock::now();
  Work w;
  w.dir = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_work";
  fs::remove_all(w.dir);
  fs::create_directories(w.dir);

  try {
    generate_synthetic(2000, 0, w.dir / "data");
    w.cfg = load_run_config(MTCMTM_ACCEPTANCE_CONFIG);
    w.cfg.data.csv = (w.dir / "data" / "data.csv").string();
    w.cfg.data.schema = (w.dir / "data" / "schema_regression.yaml").string();
    w.cfg.validate();
    w.reg = std::make_unique<PairedDataset>(PairedDataset::load(w.cfg.data.csv, w.cfg.data.schema, w.cfg.data.options));
    w.cls = std::make_unique<PairedDataset>(
        PairedDataset::load(w.cfg.data.csv, w.dir / "data" / "schema_classification.yaml", w.cfg.data.options));
    w.cache = std::make_unique<PretrainCache>(w.dir / "pretrain_cache");
  } catch (const std::exception& e) {
    std::cout << "setup failed: " << e.what() << "\n";
    return 1;
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", [] { return gradient_suite(); }},
      {"analytic loss oracles", [] { return loss_oracles(); }},
      {"corruption semantics", [&] { return corruption_semantics(w); }},
      {"multi-task weighting gradients", [&] { return multitask_gradients(w); }},
      {"directional reproduction (5 seeds, both tasks)", [&] { return directional_reproduction(w); }},
      {"block-count ablation direction", [&] { return block_count(w); }},
      {"low-data ablation harness", [&] { return low_data(w); }},
      {"model stats", [] { return model_stats_check(); }},
      {"determinism and round trips", [&] { return determinism(w); }},
      {"leakage guard", [&] { return leakage(w); }},
  };

  std::size_t passed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    passed += o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  C" << (i + 1) << "  " << criteria[i].first << "  ["
              << fmt("%.1f", seconds_since(t0)) << " s]\n";
    for (const auto& d : o.details) std::cout << "        " << d << "\n";
    std::cout.flush();
  }
  std::cout << passed << "/" << criteria.size() << " criteria passed in " << fmt("%.0f", seconds_since(start))
            << " s\n";
  return passed == criteria.size() ? 0 : 1;
}
