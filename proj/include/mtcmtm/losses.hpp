#pragma once

// Contrastive objectives, downstream task losses and the multi-task
// combination used during joint pre-training.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "mtcmtm/autodiff.hpp"
#include "mtcmtm/model.hpp"

namespace mtcmtm {

/// Symmetric InfoNCE over in-batch pairs. z_i, z_t [N, P], row k of each is
/// the positive pair; S = z_i z_t^T / tau; loss = (CE over rows + CE over
/// columns) / 2 with the diagonal as targets.
Var info_nce(const Var& z_i, const Var& z_t, double tau);

/// InfoNCE with a learnable logit scale: S = exp(log_scale) * z_i z_t^T.
Var clip_loss(const Var& z_i, const Var& z_t, const Var& log_scale);

/// -(cos(p_i, sg(z_t)) + cos(p_t, sg(z_i))) / 2, averaged over the batch.
Var simsiam_loss(const Var& p_i, const Var& p_t, const Var& z_i, const Var& z_t);

inline constexpr double kBarlowLambda = 5e-3;
/// Cross-correlation of the batch-standardized embeddings, pushed toward I.
/// Throws if any embedding dimension has variance below 1e-9.
Var barlow_twins_loss(const Var& a, const Var& b, double lambda_off = kBarlowLambda);

enum class DownstreamLossKind { mse, l1, huber, ce, balanced_ce, focal };

std::string_view to_string(DownstreamLossKind k);
DownstreamLossKind parse_downstream_loss(std::string_view s);
bool is_classification_loss(DownstreamLossKind k);

struct DownstreamLoss {
  DownstreamLossKind kind = DownstreamLossKind::l1;
  double huber_delta = 1.0;
  double focal_gamma = 2.0;
  /// Per-class weights for balanced_ce; see balanced_class_weights().
  std::vector<double> class_weights;
};

/// Inverse training-frequency weights normalized to mean 1. Classes absent
/// from the training labels get weight 0.
std::vector<double> balanced_class_weights(std::span<const std::size_t> train_labels,
                                           std::size_t classes);

/// pred [B, T] vs target [B, T]; kind must be mse, l1 or huber.
Var regression_loss(const DownstreamLoss& loss, const Var& pred, const Tensor& target);
/// logits [B, K] vs labels in [0, K); kind must be ce, balanced_ce or focal.
Var classification_loss(const DownstreamLoss& loss, const Var& logits,
                        std::span<const std::size_t> labels);

struct MultiTaskWeights {
  MultiTaskMode mode = MultiTaskMode::uncertainty;
  double lambda_c = 0.5;
  double lambda_m = 0.5;
};

/// fixed: lambda_c * L_c + lambda_m * L_m.
/// uncertainty: exp(-s_c) L_c + s_c + exp(-s_m) L_m + s_m (s_c, s_m required).
Var combine_multitask(const Var& loss_c, const Var& loss_m, const MultiTaskWeights& w,
                      const Var* s_c = nullptr, const Var* s_m = nullptr);

}  // namespace mtcmtm
