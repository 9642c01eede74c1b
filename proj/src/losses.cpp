#include "mtcmtm/losses.hpp"

#include <cmath>

namespace mtcmtm {

namespace {

void check_pair_batch(const Var& a, const Var& b, const char* op) {
  if (a.shape().size() != 2 || a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": expected two [N, P] batches, got " +
                     shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  if (a.shape()[0] < 2) throw std::invalid_argument(std::string(op) + ": need N >= 2 pairs");
}

void check_scalar_finite(const Var& v, const char* what) {
  if (v.value().size() != 1) {
    throw ShapeError(std::string(what) + " must be a scalar, got " + shape_string(v.shape()));
  }
  if (!std::isfinite(v.value().item())) throw NumericError("combine_multitask", std::string(what) + " is not finite");
}

// Mean cross-entropy of rows and of columns of `logits` against the diagonal.
Var symmetric_diagonal_ce(const Var& logits) {
  const std::size_t n = logits.shape()[0];
  Tape& tape = logits.tape();
  Var eye = tape.constant(Tensor::identity(n));
  Var rows = sum(mul(log_softmax(logits, 1), eye));
  Var cols = sum(mul(log_softmax(logits, 0), eye));
  return scale(add(rows, cols), -0.5 / static_cast<double>(n));
}

Var similarity(const Var& z_i, const Var& z_t) { return matmul(z_i, transpose(z_t, {1, 0})); }

Var row_cosine(const Var& a, const Var& b) {
  return sum(mul(l2_normalize(a, 1), l2_normalize(b, 1)), 1);
}

}  // namespace

Var info_nce(const Var& z_i, const Var& z_t, double tau) {
  check_pair_batch(z_i, z_t, "info_nce");
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: temperature must be > 0");
  return symmetric_diagonal_ce(scale(similarity(z_i, z_t), 1.0 / tau));
}

Var clip_loss(const Var& z_i, const Var& z_t, const Var& log_scale) {
  check_pair_batch(z_i, z_t, "clip_loss");
  if (log_scale.value().size() != 1) throw ShapeError("clip_loss: log_scale must be a scalar");
  return symmetric_diagonal_ce(mul(similarity(z_i, z_t), exp(log_scale)));
}

Var simsiam_loss(const Var& p_i, const Var& p_t, const Var& z_i, const Var& z_t) {
  check_pair_batch(p_i, z_t, "simsiam_loss");
  check_pair_batch(p_t, z_i, "simsiam_loss");
  Var a = mean(row_cosine(p_i, detach(z_t)));
  Var b = mean(row_cosine(p_t, detach(z_i)));
  return scale(add(a, b), -0.5);
}

Var barlow_twins_loss(const Var& a, const Var& b, double lambda_off) {
  check_pair_batch(a, b, "barlow_twins_loss");
  const std::size_t n = a.shape()[0], d = a.shape()[1];
  auto standardize = [](const Var& x) {
    Var centered = sub(x, mean(x, 0));
    Var var = mean(mul(centered, centered), 0);
    for (double v : var.value().data()) {
      if (v < 1e-9) {
        throw std::invalid_argument("barlow_twins_loss: embedding dimension with zero variance");
      }
    }
    return mul(centered, power(var, -0.5));
  };
  Var c = scale(matmul(transpose(standardize(a), {1, 0}), standardize(b)),
                1.0 / static_cast<double>(n));
  Tape& tape = a.tape();
  const Tensor eye = Tensor::identity(d);
  Tensor off(Shape{d, d});
  for (std::size_t i = 0; i < off.size(); ++i) off[i] = 1.0 - eye[i];
  Var diff = sub(c, tape.constant(eye));
  Var on_term = sum(mul(mul(diff, diff), tape.constant(eye)));
  Var off_term = sum(mul(mul(c, c), tape.constant(std::move(off))));
  return add(on_term, scale(off_term, lambda_off));
}

// ---------------------------------------------------------------------------

std::string_view to_string(DownstreamLossKind k) {
  switch (k) {
    case DownstreamLossKind::mse: return "mse";
    case DownstreamLossKind::l1: return "l1";
    case DownstreamLossKind::huber: return "huber";
    case DownstreamLossKind::ce: return "ce";
    case DownstreamLossKind::balanced_ce: return "balanced_ce";
    case DownstreamLossKind::focal: return "focal";
  }
  return "?";
}

DownstreamLossKind parse_downstream_loss(std::string_view s) {
  for (auto k : {DownstreamLossKind::mse, DownstreamLossKind::l1, DownstreamLossKind::huber,
                 DownstreamLossKind::ce, DownstreamLossKind::balanced_ce, DownstreamLossKind::focal}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown downstream loss '" + std::string(s) + "'");
}

bool is_classification_loss(DownstreamLossKind k) {
  return k == DownstreamLossKind::ce || k == DownstreamLossKind::balanced_ce ||
         k == DownstreamLossKind::focal;
}

std::vector<double> balanced_class_weights(std::span<const std::size_t> train_labels,
                                           std::size_t classes) {
  std::vector<double> counts(classes, 0.0);
  for (std::size_t y : train_labels) {
    if (y >= classes) throw std::invalid_argument("balanced_class_weights: label out of range");
    counts[y] += 1.0;
  }
  std::vector<double> w(classes, 0.0);
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] > 0.0) w[c] = 1.0 / counts[c];
    total += w[c];
  }
  if (total == 0.0) throw std::invalid_argument("balanced_class_weights: no labels");
  for (double& v : w) v *= static_cast<double>(classes) / total;
  return w;
}

Var regression_loss(const DownstreamLoss& loss, const Var& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("regression_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  Var diff = sub(pred, pred.tape().constant(target));
  switch (loss.kind) {
    case DownstreamLossKind::mse:
      return mean(mul(diff, diff));
    case DownstreamLossKind::l1:
      return mean(abs(diff));
    case DownstreamLossKind::huber: {
      const double delta = loss.huber_delta;
      if (!(delta > 0.0)) throw std::invalid_argument("huber delta must be > 0");
      Var a = abs(diff);
      Var m = clamp(a, 0.0, delta);
      return mean(add(scale(mul(m, m), 0.5), scale(sub(a, m), delta)));
    }
    default:
      throw std::invalid_argument("regression_loss: '" + std::string(to_string(loss.kind)) +
                                  "' is a classification loss");
  }
}

Var classification_loss(const DownstreamLoss& loss, const Var& logits,
                        std::span<const std::size_t> labels) {
  if (logits.shape().size() != 2 || logits.shape()[0] != labels.size()) {
    throw ShapeError("classification_loss: logits " + shape_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = labels.size(), classes = logits.shape()[1];
  Tensor onehot(Shape{batch, classes});
  for (std::size_t r = 0; r < batch; ++r) {
    if (labels[r] >= classes) {
      throw std::invalid_argument("classification_loss: class id " + std::to_string(labels[r]) +
                                  " outside [0, " + std::to_string(classes) + ")");
    }
    onehot[r * classes + labels[r]] = 1.0;
  }
  Tape& tape = logits.tape();
  Var log_p = sum(mul(log_softmax(logits, 1), tape.constant(std::move(onehot))), 1);  // [B]
  switch (loss.kind) {
    case DownstreamLossKind::ce:
      return neg(mean(log_p));
    case DownstreamLossKind::balanced_ce: {
      if (loss.class_weights.size() != classes) {
        throw std::invalid_argument("balanced_ce: expected " + std::to_string(classes) +
                                    " class weights, got " +
                                    std::to_string(loss.class_weights.size()));
      }
      Tensor w(Shape{batch});
      double total = 0.0;
      for (std::size_t r = 0; r < batch; ++r) {
        w[r] = loss.class_weights[labels[r]];
        total += w[r];
      }
      if (!(total > 0.0)) throw std::invalid_argument("balanced_ce: batch has zero total weight");
      return scale(sum(mul(log_p, tape.constant(std::move(w)))), -1.0 / total);
    }
    case DownstreamLossKind::focal: {
      Var one_minus_p = add_scalar(neg(exp(log_p)), 1.0);
      return neg(mean(mul(power(clamp(one_minus_p, 0.0, 1.0), loss.focal_gamma), log_p)));
    }
    default:
      throw std::invalid_argument("classification_loss: '" + std::string(to_string(loss.kind)) +
                                  "' is a regression loss");
  }
}

Var combine_multitask(const Var& loss_c, const Var& loss_m, const MultiTaskWeights& w,
                      const Var* s_c, const Var* s_m) {
  check_scalar_finite(loss_c, "contrastive loss");
  check_scalar_finite(loss_m, "mask loss");
  if (w.mode == MultiTaskMode::fixed) {
    if (!(w.lambda_c > 0.0 && w.lambda_m > 0.0)) {
      throw std::invalid_argument("combine_multitask: fixed weights must be > 0");
    }
    return add(scale(loss_c, w.lambda_c), scale(loss_m, w.lambda_m));
  }
  if (s_c == nullptr || s_m == nullptr) {
    throw std::invalid_argument("combine_multitask: uncertainty mode needs s_c and s_m");
  }
  check_scalar_finite(*s_c, "s_c");
  check_scalar_finite(*s_m, "s_m");
  Var c = add(mul(exp(neg(*s_c)), loss_c), *s_c);
  Var m = add(mul(exp(neg(*s_m)), loss_m), *s_m);
  return add(c, m);
}

}  // namespace mtcmtm
