#pragma once

// Finite-difference gradient checking. Every check runs in f64 regardless of
// the global precision setting.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "mtcmtm/params.hpp"

namespace mtcmtm {

/// Builds a scalar from the input leaf on the given tape.
using ScalarFn = std::function<Var(Tape&, const Var&)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// eps must lie in [1e-7, 1e-3].
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

/// Builds a scalar from a model bound to a Forward context.
using ModelFn = std::function<Var(Forward&)>;

struct ParamCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t coords_checked = 0;
};

/// Checks d f / d p for every trainable entry of `store`. Running statistics
/// are left untouched. With max_coords_per_param > 0 each tensor is checked
/// on that many coordinates drawn with `seed` instead of exhaustively.
ParamCheckResult grad_check_params(ParamStore& store, Mode mode, const ModelFn& f,
                                   double eps = 1e-5, std::size_t max_coords_per_param = 0,
                                   std::uint64_t seed = 0);

}  // namespace mtcmtm
