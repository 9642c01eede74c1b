#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtcmtm/params.hpp"

namespace mtcmtm {

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  /// true: p <- p - lr*wd*p before the Adam update. false: wd*p is added
  /// to the gradient (classic L2).
  bool decoupled = true;
};

/// Adam with bias correction. Non-trainable entries are never touched;
/// multi-task weights ("mt.") and the logit scale ("clip.") are not decayed.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One update of every trainable entry of `store` with learning rate `lr`.
  /// Throws NumericError naming the parameter on a non-finite gradient.
  void step(ParamStore& store, const GradMap& grads, double lr);
  void step(ParamStore& store, const GradMap& grads) { step(store, grads, cfg_.lr); }

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

  static bool decays(const std::string& name);

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  AdamConfig cfg_;
  std::size_t steps_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

/// Cosine warm-up from max_lr/div to max_lr over the first pct_start of the
/// run, then cosine annealing to max_lr/final_div at step == total_steps.
double onecycle_lr(std::size_t step, std::size_t total_steps, double max_lr,
                   double pct_start = 0.3, double div = 25.0, double final_div = 1e4);

}  // namespace mtcmtm
