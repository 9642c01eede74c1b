#include "mtcmtm/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mtcmtm/losses.hpp"
#include "mtcmtm/mtm.hpp"

namespace mtcmtm {

namespace {

// Stream identifiers for derive_seed(seed, {stream, ...}).
enum Stream : std::uint64_t {
  kInitStream = 1,
  kShuffleStream = 2,
  kMaskStream = 3,
  kCropStream = 4,
  kFractionStream = 5,
};

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kEvalBatch = 256;

/// Installs an audit for the lifetime of the guard. The allowed ids are the
/// caller's business, so the check does not depend on this code's split logic.
class AuditScope {
 public:
  AuditScope(const PairedDataset& ds, AccessAudit* audit) : ds_(ds), saved_(ds.audit()) {
    if (audit) ds.set_audit(audit);
  }
  ~AuditScope() { ds_.set_audit(saved_); }
  AuditScope(const AuditScope&) = delete;
  AuditScope& operator=(const AuditScope&) = delete;

 private:
  const PairedDataset& ds_;
  AccessAudit* saved_;
};

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> ids, std::size_t batch,
                                                   Rng& rng) {
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.uniform_int(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < ids.size(); start += batch) {
    const std::size_t end = std::min(ids.size(), start + batch);
    // Batch norm and in-batch negatives need at least two rows.
    if (end - start < 2) break;
    out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(start),
                     ids.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch) {
  std::size_t full = n / batch;
  return full + (n % batch >= 2 ? 1 : 0);
}

double schedule_lr(const OptimConfig& o, std::size_t step, std::size_t total) {
  if (o.schedule == Schedule::constant) return o.adam.lr;
  return onecycle_lr(step, total, o.adam.lr, o.pct_start);
}

Var simsiam_predictor(Forward& fw, const Var& z) {
  return dense(fw, "ss.pred.fc2", relu(dense(fw, "ss.pred.fc1", z)));
}

Var contrastive_term(Forward& fw, const EncoderConfig& enc, const PretrainHeads& heads,
                     const Var& v_t, const Var& v_i) {
  switch (heads.contrastive) {
    case ContrastiveKind::info_nce:
      return info_nce(project(fw, "proj_i", v_i), project(fw, "proj_t", v_t), enc.temperature);
    case ContrastiveKind::clip:
      return clip_loss(project(fw, "proj_i", v_i), project(fw, "proj_t", v_t),
                       fw.param("clip.log_scale"));
    case ContrastiveKind::simsiam: {
      Var z_i = dense(fw, "ss.proj_i", v_i);
      Var z_t = dense(fw, "ss.proj_t", v_t);
      return simsiam_loss(simsiam_predictor(fw, z_i), simsiam_predictor(fw, z_t), z_i, z_t);
    }
    case ContrastiveKind::barlow_twins:
      return barlow_twins_loss(dense(fw, "bt.proj_i", v_i), dense(fw, "bt.proj_t", v_t));
  }
  throw std::logic_error("unhandled contrastive kind");
}

void put_encoder_meta(std::map<std::string, std::string>& meta, const EncoderConfig& e) {
  const auto& t = e.tabular;
  const auto& i = e.image;
  meta["tab.input_len"] = std::to_string(t.input_len);
  meta["tab.stem_channels"] = std::to_string(t.stem_channels);
  meta["tab.stem_length"] = std::to_string(t.stem_length);
  meta["tab.n_blocks"] = std::to_string(t.n_blocks);
  meta["tab.kernel"] = std::to_string(t.kernel);
  meta["tab.reduction"] = std::to_string(t.reduction);
  meta["tab.spatial_kernel"] = std::to_string(t.spatial_kernel);
  meta["img.kind"] = std::string(to_string(i.kind));
  meta["img.height"] = std::to_string(i.height);
  meta["img.width"] = std::to_string(i.width);
  meta["img.channels"] = std::to_string(i.channels);
  meta["img.hidden"] = std::to_string(i.hidden);
  meta["img.cnn_channels1"] = std::to_string(i.cnn_channels1);
  meta["img.cnn_channels2"] = std::to_string(i.cnn_channels2);
  meta["img.feature_dim"] = std::to_string(i.feature_dim);
  meta["projection_dim"] = std::to_string(e.projection_dim);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", e.temperature);
  meta["temperature"] = buf;
}

EncoderConfig get_encoder_meta(const std::map<std::string, std::string>& meta) {
  auto num = [&](const char* key) -> std::size_t {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError(std::string("checkpoint meta lacks '") + key + "'");
    return static_cast<std::size_t>(std::stoull(it->second));
  };
  EncoderConfig e;
  e.tabular.input_len = num("tab.input_len");
  e.tabular.stem_channels = num("tab.stem_channels");
  e.tabular.stem_length = num("tab.stem_length");
  e.tabular.n_blocks = num("tab.n_blocks");
  e.tabular.kernel = num("tab.kernel");
  e.tabular.reduction = num("tab.reduction");
  e.tabular.spatial_kernel = num("tab.spatial_kernel");
  e.image.kind = parse_image_encoder_kind(meta.at("img.kind"));
  e.image.height = num("img.height");
  e.image.width = num("img.width");
  e.image.channels = num("img.channels");
  e.image.hidden = num("img.hidden");
  e.image.cnn_channels1 = num("img.cnn_channels1");
  e.image.cnn_channels2 = num("img.cnn_channels2");
  e.image.feature_dim = num("img.feature_dim");
  e.projection_dim = num("projection_dim");
  e.temperature = std::stod(meta.at("temperature"));
  return e;
}

}  // namespace

EncoderConfig resolve_encoder(const EncoderConfig& cfg, const PairedDataset& ds) {
  EncoderConfig e = cfg;
  e.tabular.input_len = ds.features();
  if (ds.has_images()) {
    e.image.height = ds.image_height();
    e.image.width = ds.image_width();
    e.image.channels = ds.image_channels();
  }
  e.validate();
  return e;
}

std::string dataset_fingerprint(const PairedDataset& ds) {
  // Only training rows matter to pre-training; hashing through the public
  // accessors would trip an installed audit, so no audit may be active here.
  if (ds.audit() != nullptr) throw std::logic_error("dataset_fingerprint with an active audit");
  std::string bytes;
  const auto train = ds.ids(SplitTag::train);
  const Tensor x = ds.features(train);
  bytes.append(reinterpret_cast<const char*>(x.data().data()), x.size() * sizeof(double));
  bytes.append(reinterpret_cast<const char*>(train.data()), train.size() * sizeof(std::size_t));
  for (const auto& c : ds.schema().columns) {
    if (c.kind == ColumnKind::numeric || c.kind == ColumnKind::categorical || c.kind == ColumnKind::image_path) {
      bytes += c.name + ";";
    }
  }
  bytes += ds.has_images() ? "images" : "no-images";
  return fnv1a_hex(bytes);
}

// ---------------------------------------------------------------------------

Var pretrain_objective(Forward& fw, const EncoderConfig& enc, const PretrainHeads& heads,
                       const MultiTaskWeights& weights, const Tensor& x, const Tensor& corrupted,
                       const Tensor& mask, const Tensor* images, PretrainStepLog* parts) {
  Var v_t = tabular_encode(fw, enc.tabular, fw.input(corrupted));
  Var l_m, l_c, l_r;
  if (heads.uses_mask()) l_m = mask_loss(fw.input(mask), estimate_mask(fw, "mask_head", v_t));
  if (heads.uses_reconstruction()) {
    l_r = reconstruction_loss(fw.input(x), dense(fw, "recon_head", v_t));
  }
  if (heads.uses_contrastive()) {
    if (!images) throw std::invalid_argument("pretrain_objective: strategy needs images");
    Var v_i = image_encode(fw, enc.image, fw.input(*images));
    l_c = contrastive_term(fw, enc, heads, v_t, v_i);
  }

  Var total;
  switch (heads.strategy) {
    case PretrainStrategy::mtm_mask: total = l_m; break;
    case PretrainStrategy::mtm_feature: total = l_r; break;
    case PretrainStrategy::mmcl: total = l_c; break;
    case PretrainStrategy::mt_cmtm:
      if (weights.mode == MultiTaskMode::uncertainty) {
        Var s_c = fw.param("mt.s_c"), s_m = fw.param("mt.s_m");
        total = combine_multitask(l_c, l_m, weights, &s_c, &s_m);
      } else {
        total = combine_multitask(l_c, l_m, weights);
      }
      break;
  }
  if (parts) {
    parts->loss = total.value().item();
    parts->contrastive = l_c.valid() ? l_c.value().item() : kNan;
    parts->mask = l_m.valid() ? l_m.value().item() : kNan;
    parts->reconstruction = l_r.valid() ? l_r.value().item() : kNan;
  }
  return total;
}

PretrainResult pretrain(const RunConfig& cfg, const PairedDataset& ds, std::uint64_t seed,
                        AccessAudit* audit, const PretrainStepHook& hook) {
  PrecisionScope precision(cfg.run.precision);
  const PretrainHeads& heads = cfg.pretrain.heads;
  if (heads.uses_images() && !ds.has_images()) {
    throw DataError("pre-training strategy '" + std::string(to_string(heads.strategy)) +
                    "' needs images, but the dataset has none");
  }
  const EncoderConfig enc = resolve_encoder(cfg.model, ds);
  const auto train = ds.ids(SplitTag::train);
  AuditScope scope(ds, audit);

  const EmpiricalMarginals marginals = fit_empirical_marginals(ds.features(train));

  ParamStore store;
  Rng init_rng(derive_seed(seed, {kInitStream}));
  init_pretrain_model(store, enc, heads, init_rng);
  Adam adam(cfg.optim.adam);

  const std::size_t per_epoch = batches_per_epoch(train.size(), cfg.optim.batch_size);
  if (per_epoch == 0) throw DataError("training split too small for one batch");
  const std::size_t total = per_epoch * cfg.pretrain.epochs;
  const std::uint64_t mask_seed = derive_seed(seed, {kMaskStream});
  MultiTaskWeights weights = cfg.pretrain.weights;
  weights.mode = heads.multitask;

  PretrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.pretrain.epochs; ++epoch) {
    Rng shuffle(derive_seed(seed, {kShuffleStream, epoch}));
    PretrainEpochLog elog;
    elog.epoch = epoch;
    elog.lr = schedule_lr(cfg.optim, step, total);
    const auto batches = make_batches(train, cfg.optim.batch_size, shuffle);
    for (const auto& ids : batches) {
      const Tensor x = ds.features(ids);
      const MaskRecord rec = corrupt_batch(x, ids, marginals, cfg.pretrain.p_m, mask_seed, epoch);

      Tape tape;
      Forward fw(tape, store, Mode::train);
      PretrainStepLog slog{epoch, step, 0.0, kNan, kNan, kNan};
      Tensor imgs;
      if (heads.uses_contrastive()) imgs = ds.images(ids, derive_seed(seed, {kCropStream, epoch}));
      Var total_loss = pretrain_objective(fw, enc, heads, weights, x, rec.corrupted, rec.mask,
                                          heads.uses_contrastive() ? &imgs : nullptr, &slog);

      const GradMap grads = fw.gradients(total_loss);
      adam.step(store, grads, schedule_lr(cfg.optim, step, total));
      if (hook) hook(slog);

      elog.loss += slog.loss;
      elog.contrastive += slog.contrastive;
      elog.mask += slog.mask;
      elog.reconstruction += slog.reconstruction;
      ++step;
    }
    const double nb = static_cast<double>(batches.size());
    elog.loss /= nb;
    elog.contrastive /= nb;
    elog.mask /= nb;
    elog.reconstruction /= nb;
    if (store.contains("mt.s_c")) {
      elog.s_c = store.get("mt.s_c").item();
      elog.s_m = store.get("mt.s_m").item();
    }
    result.log.push_back(elog);
  }

  result.checkpoint.params = std::move(store);
  result.checkpoint.config_hash = architecture_hash(enc);
  result.checkpoint.rng_state = init_rng.state();
  result.checkpoint.epoch = cfg.pretrain.epochs;
  auto& meta = result.checkpoint.meta;
  put_encoder_meta(meta, enc);
  meta["kind"] = "pretrain";
  meta["strategy"] = std::string(to_string(heads.strategy));
  meta["contrastive"] = std::string(to_string(heads.contrastive));
  meta["multitask"] = std::string(to_string(heads.multitask));
  meta["seed"] = std::to_string(seed);
  meta["adam_steps"] = std::to_string(adam.steps());
  return result;
}

// ---------------------------------------------------------------------------

bool EvalReport::better_than(const EvalReport& o) const {
  return kind == TaskKind::regression ? score() < o.score() : score() > o.score();
}

Tensor predict(ParamStore& model, const EncoderConfig& enc, const TaskSpec& task, const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("predict: expected [B, L], got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), len = x.dim(1);
  Tensor out(Shape{n, task.outputs});
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const std::size_t b = std::min(kEvalBatch, n - start);
    Tensor chunk(Shape{b, len});
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(start * len), b * len,
                chunk.mutable_data().begin());
    Tape tape(false);
    Forward fw(tape, model, Mode::eval);
    Var y = predictor_head(fw, "head", tabular_encode(fw, enc.tabular, fw.input(std::move(chunk))), task);
    std::copy(y.value().data().begin(), y.value().data().end(),
              out.mutable_data().begin() + static_cast<std::ptrdiff_t>(start * task.outputs));
  }
  return out;
}

EvalReport evaluate(ParamStore& model, const EncoderConfig& enc, const TaskSpec& task,
                    const PairedDataset& ds, std::span<const std::size_t> ids) {
  if (ids.empty()) throw std::invalid_argument("evaluate: empty split");
  const Tensor pred = predict(model, enc, task, ds.features(ids));
  EvalReport r;
  r.kind = task.kind;
  r.n = ids.size();
  if (task.kind == TaskKind::regression) {
    r.regression = regression_metrics(pred, ds.targets(ids));
  } else {
    r.classification = classification_metrics(argmax_rows(pred), ds.labels(ids), task.outputs);
  }
  return r;
}

FinetuneResult finetune(const RunConfig& cfg, const PairedDataset& ds, std::uint64_t seed,
                        const Checkpoint* init) {
  PrecisionScope precision(cfg.run.precision);
  FinetuneResult result;
  result.encoder = resolve_encoder(cfg.model, ds);
  result.task = ds.task();
  const EncoderConfig& enc = result.encoder;
  const TaskSpec& task = result.task;

  ParamStore store;
  Rng init_rng(derive_seed(seed, {kInitStream}));
  init_downstream_model(store, enc, task, init_rng);
  if (init) {
    if (init->config_hash != architecture_hash(enc)) {
      throw CheckpointError("checkpoint config hash " + init->config_hash +
                            " does not match the model architecture " + architecture_hash(enc));
    }
    restore_params(*init, store, "tab.");
  }

  std::vector<std::size_t> train = ds.ids(SplitTag::train);
  if (cfg.finetune.train_fraction < 1.0) {
    Rng pick(derive_seed(seed, {kFractionStream}));
    for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[pick.uniform_int(i)]);
    const auto keep = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::floor(cfg.finetune.train_fraction * train.size() + 0.5)));
    train.resize(std::min(keep, train.size()));
    std::sort(train.begin(), train.end());
  }
  const auto val = ds.ids(SplitTag::val);
  auto test = ds.ids(SplitTag::test);
  result.has_test_split = !test.empty();
  if (!result.has_test_split) test = val;

  DownstreamLoss loss;
  loss.kind = task.kind == TaskKind::regression ? cfg.finetune.regression_loss
                                                : cfg.finetune.classification_loss;
  if (loss.kind == DownstreamLossKind::balanced_ce) {
    loss.class_weights = balanced_class_weights(ds.labels(train), task.outputs);
  }

  Adam adam(cfg.optim.adam);
  const std::size_t per_epoch = batches_per_epoch(train.size(), cfg.optim.batch_size);
  if (per_epoch == 0) throw DataError("fine-tuning split too small for one batch");
  const std::size_t total = per_epoch * cfg.finetune.epochs;
  std::size_t step = 0;
  bool have_best = false;
  ParamStore best = store;

  for (std::size_t epoch = 0; epoch < cfg.finetune.epochs; ++epoch) {
    Rng shuffle(derive_seed(seed, {kShuffleStream, epoch, 1}));
    double loss_sum = 0.0;
    const auto batches = make_batches(train, cfg.optim.batch_size, shuffle);
    for (const auto& ids : batches) {
      Tape tape;
      Forward fw(tape, store, Mode::train);
      Var pred = predictor_head(fw, "head", tabular_encode(fw, enc.tabular, fw.input(ds.features(ids))), task);
      Var l = task.kind == TaskKind::regression
                  ? regression_loss(loss, pred, ds.targets(ids))
                  : classification_loss(loss, pred, ds.labels(ids));
      loss_sum += l.value().item();
      adam.step(store, fw.gradients(l), schedule_lr(cfg.optim, step, total));
      ++step;
    }
    FinetuneEpochLog elog{epoch, loss_sum / static_cast<double>(batches.size()),
                          evaluate(store, enc, task, ds, val)};
    if (!have_best || elog.val.better_than(result.val)) {
      have_best = true;
      result.val = elog.val;
      result.best_epoch = epoch;
      best = store;
    }
    result.log.push_back(elog);
  }
  if (!have_best) result.val = evaluate(store, enc, task, ds, val);
  result.model = std::move(best);
  result.test = evaluate(result.model, enc, task, ds, test);
  return result;
}

Checkpoint finetune_checkpoint(const FinetuneResult& r) {
  Checkpoint c;
  c.params = r.model;
  c.config_hash = architecture_hash(r.encoder);
  c.epoch = r.best_epoch;
  put_encoder_meta(c.meta, r.encoder);
  c.meta["kind"] = "finetune";
  c.meta["task"] = r.task.kind == TaskKind::regression ? "regression" : "classification";
  c.meta["outputs"] = std::to_string(r.task.outputs);
  return c;
}

LoadedModel load_finetuned(const Checkpoint& ckpt) {
  auto it = ckpt.meta.find("kind");
  if (it == ckpt.meta.end() || it->second != "finetune") {
    throw CheckpointError("checkpoint does not hold a fine-tuned model");
  }
  LoadedModel m;
  m.encoder = get_encoder_meta(ckpt.meta);
  if (architecture_hash(m.encoder) != ckpt.config_hash) {
    throw CheckpointError("checkpoint config hash does not match its recorded architecture");
  }
  m.task.kind = ckpt.meta.at("task") == "regression" ? TaskKind::regression : TaskKind::classification;
  m.task.outputs = static_cast<std::size_t>(std::stoull(ckpt.meta.at("outputs")));
  Rng rng(0);
  init_downstream_model(m.params, m.encoder, m.task, rng);
  restore_params(ckpt, m.params);
  return m;
}

}  // namespace mtcmtm
