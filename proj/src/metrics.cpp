#include "mtcmtm/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace mtcmtm {

RegressionMetrics regression_metrics(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("regression_metrics: prediction " + shape_string(pred.shape()) +
                     " vs target " + shape_string(target.shape()));
  }
  RegressionMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    m.mae += std::abs(d);
    m.mse += d * d;
  }
  m.mae /= static_cast<double>(pred.size());
  m.mse /= static_cast<double>(pred.size());
  return m;
}

ClassificationMetrics classification_metrics(std::span<const std::size_t> pred,
                                             std::span<const std::size_t> truth,
                                             std::size_t classes) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw std::invalid_argument("classification_metrics: need equally sized, non-empty inputs");
  }
  std::vector<double> tp(classes, 0.0), pred_count(classes, 0.0), true_count(classes, 0.0);
  double correct = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= classes || truth[i] >= classes) {
      throw std::invalid_argument("classification_metrics: class id out of range");
    }
    pred_count[pred[i]] += 1.0;
    true_count[truth[i]] += 1.0;
    if (pred[i] == truth[i]) {
      tp[pred[i]] += 1.0;
      correct += 1.0;
    }
  }
  ClassificationMetrics m;
  m.accuracy = correct / static_cast<double>(pred.size());
  double recall_sum = 0.0, present = 0.0, f1_sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double recall = true_count[c] > 0.0 ? tp[c] / true_count[c] : 0.0;
    const double precision = pred_count[c] > 0.0 ? tp[c] / pred_count[c] : 0.0;
    if (true_count[c] > 0.0) {
      recall_sum += recall;
      present += 1.0;
    }
    if (precision + recall > 0.0) f1_sum += 2.0 * precision * recall / (precision + recall);
  }
  m.balanced_accuracy = recall_sum / present;
  m.macro_f1 = f1_sum / static_cast<double>(classes);
  return m;
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: expected [B, K], got " + shape_string(logits.shape()));
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  std::vector<std::size_t> out(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 1; c < k; ++c) {
      if (logits[r * k + c] > logits[r * k + out[r]]) out[r] = c;
    }
  }
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace mtcmtm
