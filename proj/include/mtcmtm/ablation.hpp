#pragma once

// Strategy comparison: plain fine-tuning versus fine-tuning from each
// pre-training strategy, with shared seeds and splits.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mtcmtm/train.hpp"

namespace mtcmtm {

/// Report rows in order: pm (no pre-training), pretext_mask (mtm_mask),
/// pretext_feature (mtm_feature), mmcl, mt_cmtm.
const std::vector<std::string>& ablation_strategies();
/// Pre-training strategy behind a row, or nullopt for "pm".
std::optional<PretrainStrategy> row_strategy(const std::string& row);

/// Pre-trained checkpoints keyed by config + data fingerprint + seed, so the
/// regression and classification runs (and every train fraction) share one
/// pre-training. With a directory, entries persist as <key>.ckpt files.
class PretrainCache {
 public:
  PretrainCache() = default;
  explicit PretrainCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  /// Returns the cached checkpoint or runs pre-training.
  std::shared_ptr<const Checkpoint> get(const RunConfig& cfg, const PairedDataset& ds,
                                        std::uint64_t seed);
  std::size_t hits() const;
  std::size_t misses() const;

 private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Checkpoint>> entries_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

struct AblationRow {
  std::string strategy;
  std::uint64_t seed = 0;
  double train_fraction = 1.0;
  std::size_t best_epoch = 0;
  EvalReport val;
  EvalReport test;
};

struct AblationReport {
  TaskKind task = TaskKind::regression;
  std::vector<AblationRow> rows;  // strategy-major, then fraction, then seed
  std::vector<std::size_t> test_ids;
  bool has_test_split = true;
};

struct AblationOptions {
  std::vector<std::string> strategies = ablation_strategies();
  std::vector<double> train_fractions{1.0};
};

AblationReport run_ablation(const RunConfig& cfg, const PairedDataset& ds, PretrainCache& cache,
                            const AblationOptions& options = {});

/// One CSV row per (strategy, fraction, seed).
std::string ablation_csv(const AblationReport& report);
/// Mean +- std over seeds per (strategy, fraction).
std::string ablation_table(const AblationReport& report);

/// Mean test score (MSE or accuracy) of `strategy` at `fraction` over seeds.
double mean_test_score(const AblationReport& report, const std::string& strategy,
                       double fraction = 1.0);
/// Test score of one run.
double test_score(const AblationReport& report, const std::string& strategy, std::uint64_t seed,
                  double fraction = 1.0);

}  // namespace mtcmtm
