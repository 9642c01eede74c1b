#pragma once

// Encoders and heads: the tabular 1D-ResNet-CBAM encoder, the image encoder,
// projection heads, the mask estimator, downstream predictors, and their
// analytic parameter/FLOP counts.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "mtcmtm/layers.hpp"

namespace mtcmtm {

struct TabularEncoderConfig {
  std::size_t input_len = 12;
  std::size_t stem_channels = 32;
  std::size_t stem_length = 16;
  std::size_t n_blocks = 4;
  std::size_t kernel = 3;
  std::size_t reduction = 4;
  std::size_t spatial_kernel = 7;

  /// Every second block doubles the channels and halves the length.
  std::vector<ResidualBlockConfig> blocks() const;
  std::size_t feature_dim() const;
  void validate() const;
};

enum class ImageEncoderKind { mlp, small_cnn };

struct ImageEncoderConfig {
  ImageEncoderKind kind = ImageEncoderKind::mlp;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t hidden = 512;           // mlp hidden width
  std::size_t cnn_channels1 = 16;     // small_cnn stage widths
  std::size_t cnn_channels2 = 32;
  std::size_t feature_dim = 128;

  void validate() const;
};

struct EncoderConfig {
  TabularEncoderConfig tabular;
  ImageEncoderConfig image;
  std::size_t projection_dim = 128;
  double temperature = 0.1;

  void validate() const;
  /// Canonical text form; hashed into checkpoints.
  std::string canonical() const;
};

std::string_view to_string(ImageEncoderKind k);
ImageEncoderKind parse_image_encoder_kind(std::string_view s);

void init_tabular_encoder(ParamStore& store, const TabularEncoderConfig& cfg, Rng& rng,
                          const std::string& prefix = "tab");
/// x [batch, L] -> v_t [batch, D]
Var tabular_encode(Forward& fw, const TabularEncoderConfig& cfg, const Var& x,
                   const std::string& prefix = "tab");

void init_image_encoder(ParamStore& store, const ImageEncoderConfig& cfg, Rng& rng,
                        const std::string& prefix = "img");
/// x [batch, H, W, C] -> v_i [batch, D_i]
Var image_encode(Forward& fw, const ImageEncoderConfig& cfg, const Var& x,
                 const std::string& prefix = "img");

/// dense(D->D) -> relu -> dense(D->P); project() l2-normalizes the rows.
void init_projection_head(ParamStore& store, const std::string& prefix, std::size_t in_dim,
                          std::size_t proj_dim, Rng& rng);
Var project(Forward& fw, const std::string& prefix, const Var& v);

/// dense(D->L) -> sigmoid: per-feature probability of having been replaced.
void init_mask_estimator(ParamStore& store, const std::string& prefix, std::size_t feature_dim,
                         std::size_t input_len, Rng& rng);
Var estimate_mask(Forward& fw, const std::string& prefix, const Var& v);

enum class TaskKind { regression, classification };

struct TaskSpec {
  TaskKind kind = TaskKind::regression;
  std::size_t outputs = 1;  // regression dim or class count
};

void init_predictor_head(ParamStore& store, const std::string& prefix, std::size_t feature_dim,
                         const TaskSpec& task, Rng& rng);
/// Regression values or classification logits, [batch, outputs].
Var predictor_head(Forward& fw, const std::string& prefix, const Var& v, const TaskSpec& task);

// ---------------------------------------------------------------------------
// Pre-training assemblies

enum class PretrainStrategy { mtm_mask, mtm_feature, mmcl, mt_cmtm };
enum class ContrastiveKind { info_nce, clip, simsiam, barlow_twins };
enum class MultiTaskMode { fixed, uncertainty };

std::string_view to_string(PretrainStrategy s);
PretrainStrategy parse_pretrain_strategy(std::string_view s);
std::string_view to_string(ContrastiveKind k);
ContrastiveKind parse_contrastive_kind(std::string_view s);
std::string_view to_string(MultiTaskMode m);
MultiTaskMode parse_multitask_mode(std::string_view s);

struct PretrainHeads {
  PretrainStrategy strategy = PretrainStrategy::mt_cmtm;
  ContrastiveKind contrastive = ContrastiveKind::info_nce;
  MultiTaskMode multitask = MultiTaskMode::uncertainty;

  bool uses_mask() const;
  bool uses_reconstruction() const;
  bool uses_contrastive() const;
  bool uses_images() const { return uses_contrastive(); }
};

/// Registers the tabular encoder ("tab.") and whatever heads the strategy needs.
void init_pretrain_model(ParamStore& store, const EncoderConfig& cfg, const PretrainHeads& heads,
                         Rng& rng);
/// Tabular encoder plus predictor ("head.").
void init_downstream_model(ParamStore& store, const EncoderConfig& cfg, const TaskSpec& task,
                           Rng& rng);

// ---------------------------------------------------------------------------
// Model statistics: multiply-accumulate counted as two FLOPs; only dense and
// convolution layers contribute FLOPs.

struct ModelStats {
  std::size_t param_count = 0;
  std::size_t flops_per_forward = 0;

  ModelStats& operator+=(const ModelStats& o) {
    param_count += o.param_count;
    flops_per_forward += o.flops_per_forward;
    return *this;
  }
  friend bool operator==(const ModelStats&, const ModelStats&) = default;
};

ModelStats dense_stats(std::size_t in, std::size_t out);
ModelStats conv1d_stats(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t out_len);
ModelStats conv2d_stats(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t out_h,
                        std::size_t out_w);
ModelStats batchnorm_stats(std::size_t channels);

ModelStats tabular_encoder_stats(const TabularEncoderConfig& cfg);
ModelStats image_encoder_stats(const ImageEncoderConfig& cfg);
ModelStats downstream_stats(const EncoderConfig& cfg, const TaskSpec& task);
ModelStats pretrain_stats(const EncoderConfig& cfg, const PretrainHeads& heads);

}  // namespace mtcmtm
