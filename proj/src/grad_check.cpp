#include "mtcmtm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtcmtm/rng.hpp"

namespace mtcmtm {

namespace {

void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps must be in [1e-7, 1e-3], got " +
                                std::to_string(eps));
  }
}

double scalar_of(const Var& v, const char* what) {
  if (v.value().size() != 1) {
    throw ShapeError(std::string(what) + ": function must return a scalar, got " +
                     shape_string(v.shape()));
  }
  const double out = v.value().item();
  if (!std::isfinite(out)) throw NumericError(what, "function returned a non-finite value");
  return out;
}

double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  check_eps(eps);
  PrecisionScope scope(Precision::f64);

  Tape tape;
  Var leaf = tape.parameter("x", x);
  Var out = f(tape, leaf);
  scalar_of(out, "grad_check");
  const Tensor analytic = tape.backward(out).at("x");

  auto eval = [&](const Tensor& at) {
    Tape t(false);
    return scalar_of(f(t, t.parameter("x", at)), "grad_check");
  };

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = eval(probe);
    probe[i] = x[i] - eps;
    const double down = eval(probe);
    probe[i] = x[i];
    worst = std::max(worst, rel_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

ParamCheckResult grad_check_params(ParamStore& store, Mode mode, const ModelFn& f, double eps,
                                   std::size_t max_coords_per_param, std::uint64_t seed) {
  check_eps(eps);
  PrecisionScope scope(Precision::f64);

  auto run = [&](bool recording) {
    Tape tape(recording);
    Forward fw(tape, store, mode);
    fw.set_update_running_stats(false);
    Var out = f(fw);
    return std::make_pair(scalar_of(out, "grad_check_params"),
                          recording ? fw.gradients(out) : GradMap{});
  };
  const GradMap analytic = run(true).second;

  ParamCheckResult result;
  Rng rng(seed);
  for (auto& entry : store.mutable_entries()) {
    if (!entry.trainable) continue;
    const Tensor& g = analytic.at(entry.name);
    std::vector<std::size_t> coords(entry.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords_per_param > 0 && coords.size() > max_coords_per_param) {
      // partial Fisher-Yates
      for (std::size_t i = 0; i < max_coords_per_param; ++i) {
        std::swap(coords[i], coords[i + rng.uniform_int(coords.size() - i)]);
      }
      coords.resize(max_coords_per_param);
    }
    for (std::size_t i : coords) {
      const double original = entry.value[i];
      entry.value[i] = original + eps;
      const double up = run(false).first;
      entry.value[i] = original - eps;
      const double down = run(false).first;
      entry.value[i] = original;
      const double err = rel_error(g[i], (up - down) / (2.0 * eps));
      if (err >= result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = entry.name;
      }
      ++result.coords_checked;
    }
  }
  return result;
}

}  // namespace mtcmtm
