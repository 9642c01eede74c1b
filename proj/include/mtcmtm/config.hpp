#pragma once

// Run configuration. Every field has a default; the YAML reader rejects
// unknown keys and reports the offending line.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtcmtm/data.hpp"
#include "mtcmtm/losses.hpp"
#include "mtcmtm/model.hpp"
#include "mtcmtm/optim.hpp"

namespace mtcmtm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string csv;     // relative paths resolve against the config file
  std::string schema;
  DatasetOptions options;
};

struct PretrainConfig {
  PretrainHeads heads;
  MultiTaskWeights weights;  // mode mirrors heads.multitask
  std::size_t epochs = 25;
  double p_m = 0.3;
};

struct FinetuneConfig {
  DownstreamLossKind regression_loss = DownstreamLossKind::l1;
  DownstreamLossKind classification_loss = DownstreamLossKind::ce;
  std::size_t epochs = 50;
  /// Fraction of the training split used for fine-tuning (pre-training
  /// always sees the full training split).
  double train_fraction = 1.0;
};

enum class Schedule { onecycle, constant };

struct OptimConfig {
  AdamConfig adam;
  std::size_t batch_size = 64;
  Schedule schedule = Schedule::onecycle;
  double pct_start = 0.3;
};

struct RunSettings {
  std::vector<std::uint64_t> seeds{0};
  std::string out;  // empty: $MTCMTM_OUT or ./runs
  std::string run_id;
  Precision precision = Precision::f32;
  std::size_t threads = 1;
};

struct RunConfig {
  DataConfig data;
  EncoderConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  OptimConfig optim;
  RunSettings run;

  void validate() const;
};

RunConfig parse_run_config(const std::string& yaml_text);
/// Reads a config file and resolves data paths relative to it.
RunConfig load_run_config(const std::filesystem::path& path);
/// Fully resolved config as YAML; parse_run_config(to_yaml(c)) == c.
std::string to_yaml(const RunConfig& cfg);

/// Hash of every setting that shapes a pre-trained encoder, except the data
/// itself (see dataset_fingerprint).
std::string pretrain_config_hash(const RunConfig& cfg, std::uint64_t seed);
/// Hash of the encoder architecture alone; checkpoints must match it to be
/// loaded into a model.
std::string architecture_hash(const EncoderConfig& cfg);

std::string_view to_string(Schedule s);

}  // namespace mtcmtm
