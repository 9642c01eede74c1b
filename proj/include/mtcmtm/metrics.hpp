#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtcmtm/tensor.hpp"

namespace mtcmtm {

struct RegressionMetrics {
  double mae = 0.0;
  double mse = 0.0;
};

struct ClassificationMetrics {
  double accuracy = 0.0;
  /// Unweighted mean recall over the classes present in the truth.
  double balanced_accuracy = 0.0;
  /// Unweighted mean F1 over all classes; a class absent from both
  /// predictions and truth contributes 0.
  double macro_f1 = 0.0;
};

/// Averages over all samples and output dimensions.
RegressionMetrics regression_metrics(const Tensor& pred, const Tensor& target);
ClassificationMetrics classification_metrics(std::span<const std::size_t> pred,
                                             std::span<const std::size_t> truth,
                                             std::size_t classes);
/// Row-wise argmax of [B, K] logits; ties go to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample std (n - 1); 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

}  // namespace mtcmtm
