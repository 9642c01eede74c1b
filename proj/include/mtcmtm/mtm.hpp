#pragma once

// Masked tabular modeling: per-feature empirical marginals, Bernoulli masks,
// corruption by resampling masked features, and the pretext losses.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mtcmtm/autodiff.hpp"
#include "mtcmtm/rng.hpp"

namespace mtcmtm {

/// Observed value distribution of every column of the training matrix.
class EmpiricalMarginals {
 public:
  EmpiricalMarginals() = default;

  bool fitted() const { return rows_ > 0; }
  std::size_t features() const { return values_.size(); }
  std::size_t rows() const { return rows_; }

  /// Sorted distinct values of column j.
  const std::vector<double>& support(std::size_t j) const;
  bool in_support(std::size_t j, double v) const;
  /// Relative frequency of `v` in column j (0 if unobserved).
  double probability(std::size_t j, double v) const;
  /// One draw from column j's empirical distribution.
  double sample(std::size_t j, Rng& rng) const;

 private:
  friend EmpiricalMarginals fit_empirical_marginals(const Tensor& train);

  std::size_t rows_ = 0;
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<std::size_t>> cumulative_;  // running counts per value
};

/// train [n, L] with n >= 1, all finite.
EmpiricalMarginals fit_empirical_marginals(const Tensor& train);

/// L independent Bernoulli(p_m) entries; p_m must lie in (0, 1).
Tensor sample_mask(std::size_t length, double p_m, Rng& rng);

/// x~ = m * xbar + (1 - m) * x with xbar_j drawn from column j's marginal.
/// Unmasked coordinates are copied bit-exactly.
Tensor corrupt(const Tensor& x, const Tensor& mask, const EmpiricalMarginals& marginals, Rng& rng);

struct MaskRecord {
  Tensor mask;       // [batch, L]
  Tensor corrupted;  // [batch, L]
  double p_m = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
};

/// Corrupts every row of x [batch, L]. Row r uses its own stream seeded by
/// (seed, epoch, sample_ids[r]), so the result does not depend on batch
/// composition or order.
MaskRecord corrupt_batch(const Tensor& x, std::span<const std::size_t> sample_ids,
                         const EmpiricalMarginals& marginals, double p_m, std::uint64_t seed,
                         std::uint64_t epoch);

/// Mean over the batch of (1/L) * sum_j |m_j - mhat_j|.
Var mask_loss(const Var& mask, const Var& estimate);

/// Mean squared error over batch and features.
Var reconstruction_loss(const Var& x, const Var& x_hat);

}  // namespace mtcmtm
