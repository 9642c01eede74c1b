#pragma once

// Pre-training and fine-tuning loops plus evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mtcmtm/checkpoint.hpp"
#include "mtcmtm/config.hpp"
#include "mtcmtm/data.hpp"
#include "mtcmtm/metrics.hpp"

namespace mtcmtm {

/// Copies of `cfg` with the input length and image geometry taken from the
/// dataset.
EncoderConfig resolve_encoder(const EncoderConfig& cfg, const PairedDataset& ds);

/// Fingerprint of the preprocessed features, split and image list; keys
/// the pre-training cache together with the config.
std::string dataset_fingerprint(const PairedDataset& ds);

struct PretrainStepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double contrastive = 0.0;  // NaN when the strategy has no such term
  double mask = 0.0;
  double reconstruction = 0.0;
};

struct PretrainEpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double contrastive = 0.0;
  double mask = 0.0;
  double reconstruction = 0.0;
  double s_c = 0.0;
  double s_m = 0.0;
  double lr = 0.0;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<PretrainEpochLog> log;
};

/// Training loss of one pre-training batch: x is the clean batch, corrupted
/// and mask come from corrupt_batch, images ([B,H,W,C]) are required when the
/// strategy is contrastive. Fills the loss components of `parts` when given
/// (NaN for absent terms).
Var pretrain_objective(Forward& fw, const EncoderConfig& enc, const PretrainHeads& heads,
                       const MultiTaskWeights& weights, const Tensor& x, const Tensor& corrupted,
                       const Tensor& mask, const Tensor* images, PretrainStepLog* parts = nullptr);

using PretrainStepHook = std::function<void(const PretrainStepLog&)>;

/// Trains the tabular encoder (and the strategy's heads) on the training
/// split. With `audit`, every per-sample read is reported to it; the caller
/// decides which ids are allowed.
PretrainResult pretrain(const RunConfig& cfg, const PairedDataset& ds, std::uint64_t seed,
                        AccessAudit* audit = nullptr, const PretrainStepHook& hook = {});

struct EvalReport {
  TaskKind kind = TaskKind::regression;
  std::size_t n = 0;
  RegressionMetrics regression;
  ClassificationMetrics classification;

  /// Selection score: MSE for regression (lower is better), accuracy for
  /// classification (higher is better).
  double score() const { return kind == TaskKind::regression ? regression.mse : classification.accuracy; }
  bool better_than(const EvalReport& o) const;
};

/// Eval-mode predictions ([B, outputs]) for feature rows x [B, L].
Tensor predict(ParamStore& model, const EncoderConfig& enc, const TaskSpec& task, const Tensor& x);
EvalReport evaluate(ParamStore& model, const EncoderConfig& enc, const TaskSpec& task,
                    const PairedDataset& ds, std::span<const std::size_t> ids);

struct FinetuneEpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  EvalReport val;
};

struct FinetuneResult {
  ParamStore model;
  EncoderConfig encoder;
  TaskSpec task;
  std::size_t best_epoch = 0;
  EvalReport val;   // best epoch
  EvalReport test;  // on the test split, or validation when there is none
  bool has_test_split = true;
  std::vector<FinetuneEpochLog> log;
};

/// Attaches a predictor head to a fresh or checkpoint-initialized encoder,
/// trains on (a fraction of) the training split and keeps the epoch with the
/// best validation score. Throws CheckpointError when `init` was produced by
/// a different encoder architecture.
FinetuneResult finetune(const RunConfig& cfg, const PairedDataset& ds, std::uint64_t seed,
                        const Checkpoint* init = nullptr);

/// Saved fine-tuned model: parameters plus the task/architecture needed to
/// rebuild it.
Checkpoint finetune_checkpoint(const FinetuneResult& r);
struct LoadedModel {
  ParamStore params;
  EncoderConfig encoder;
  TaskSpec task;
};
LoadedModel load_finetuned(const Checkpoint& ckpt);

}  // namespace mtcmtm
