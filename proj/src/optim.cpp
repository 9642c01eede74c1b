#include "mtcmtm/optim.hpp"

#include <cmath>
#include <numbers>

namespace mtcmtm {

bool Adam::decays(const std::string& name) {
  return name.rfind("mt.", 0) != 0 && name.rfind("clip.", 0) != 0;
}

void Adam::step(ParamStore& store, const GradMap& grads, double lr) {
  // Validate every gradient before mutating anything.
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    auto it = grads.find(e.name);
    if (it == grads.end()) throw std::invalid_argument("adam: no gradient for '" + e.name + "'");
    if (it->second.shape() != e.value.shape()) {
      throw ShapeError("adam: gradient for '" + e.name + "' has shape " +
                       shape_string(it->second.shape()) + ", parameter " +
                       shape_string(e.value.shape()));
    }
    if (!it->second.all_finite()) throw NumericError(e.name, "non-finite gradient");
  }

  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (auto& e : store.mutable_entries()) {
    if (!e.trainable) continue;
    const Tensor& g = grads.at(e.name);
    Moments& mom = moments_[e.name];
    if (mom.m.empty()) {
      mom.m.assign(g.size(), 0.0);
      mom.v.assign(g.size(), 0.0);
    }
    const double wd = decays(e.name) ? cfg_.weight_decay : 0.0;
    auto p = e.value.mutable_data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      double gi = g[i];
      if (!cfg_.decoupled) gi += wd * p[i];
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * gi;
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      if (cfg_.decoupled) p[i] -= lr * wd * p[i];
      p[i] -= lr * (mom.m[i] / c1) / (std::sqrt(mom.v[i] / c2) + cfg_.eps);
    }
    e.value.quantize();
  }
}

double onecycle_lr(std::size_t step, std::size_t total_steps, double max_lr, double pct_start,
                   double div, double final_div) {
  if (total_steps == 0) throw std::invalid_argument("onecycle_lr: total_steps must be > 0");
  if (step > total_steps) {
    throw std::invalid_argument("onecycle_lr: step " + std::to_string(step) + " beyond total " +
                                std::to_string(total_steps));
  }
  if (!(pct_start > 0.0 && pct_start < 1.0)) {
    throw std::invalid_argument("onecycle_lr: pct_start must be in (0, 1)");
  }
  const double initial = max_lr / div;
  const double final_lr = max_lr / final_div;
  const double peak = pct_start * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s <= peak) {
    const double frac = s / peak;
    return initial + (max_lr - initial) * 0.5 * (1.0 - std::cos(std::numbers::pi * frac));
  }
  const double frac = (s - peak) / (static_cast<double>(total_steps) - peak);
  return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace mtcmtm
