#pragma once

// The full finite-difference suite: primitives, layers, encoders, heads,
// every loss, and the composed pre-training objective. Shared by the CLI's
// gradcheck command and the test binaries.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mtcmtm {

inline constexpr double kGradTolerance = 1e-5;

struct GradCaseResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t variants = 0;  // random seeds/shapes checked
  bool passed() const { return max_rel_error < kGradTolerance; }
};

/// Names of all cases, in run order.
std::vector<std::string> grad_suite_cases();

/// Runs every case (or those whose name contains `filter`) over `variants`
/// seeds derived from `seed`; each variant draws its own shapes and values.
std::vector<GradCaseResult> run_grad_suite(std::uint64_t seed, std::size_t variants = 20,
                                           const std::string& filter = "");

}  // namespace mtcmtm
