#include "mtcmtm/mtm.hpp"

#include <algorithm>
#include <cmath>

namespace mtcmtm {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
}

}  // namespace

const std::vector<double>& EmpiricalMarginals::support(std::size_t j) const {
  if (!fitted()) throw std::logic_error("empirical marginals not fitted");
  return values_.at(j);
}

bool EmpiricalMarginals::in_support(std::size_t j, double v) const {
  const auto& s = support(j);
  return std::binary_search(s.begin(), s.end(), v);
}

double EmpiricalMarginals::probability(std::size_t j, double v) const {
  const auto& s = support(j);
  auto it = std::lower_bound(s.begin(), s.end(), v);
  if (it == s.end() || *it != v) return 0.0;
  const auto k = static_cast<std::size_t>(it - s.begin());
  const std::size_t before = k == 0 ? 0 : cumulative_[j][k - 1];
  return static_cast<double>(cumulative_[j][k] - before) / static_cast<double>(rows_);
}

double EmpiricalMarginals::sample(std::size_t j, Rng& rng) const {
  const auto& s = support(j);
  const auto& cum = cumulative_[j];
  const std::uint64_t r = rng.uniform_int(rows_);
  // first value whose running count exceeds r
  auto it = std::upper_bound(cum.begin(), cum.end(), static_cast<std::size_t>(r));
  return s[static_cast<std::size_t>(it - cum.begin())];
}

EmpiricalMarginals fit_empirical_marginals(const Tensor& train) {
  if (train.rank() != 2 || train.dim(0) == 0) {
    throw std::invalid_argument("fit_empirical_marginals: need a non-empty [n, L] matrix, got " +
                                shape_string(train.shape()));
  }
  if (!train.all_finite()) {
    throw std::invalid_argument("fit_empirical_marginals: matrix has missing or non-finite values");
  }
  const std::size_t n = train.dim(0), cols = train.dim(1);
  EmpiricalMarginals m;
  m.rows_ = n;
  m.values_.resize(cols);
  m.cumulative_.resize(cols);
  std::vector<double> column(n);
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = train[i * cols + j];
    std::sort(column.begin(), column.end());
    std::size_t running = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ++running;
      if (i + 1 == n || column[i + 1] != column[i]) {
        m.values_[j].push_back(column[i]);
        m.cumulative_[j].push_back(running);
      }
    }
  }
  return m;
}

Tensor sample_mask(std::size_t length, double p_m, Rng& rng) {
  if (!(p_m > 0.0 && p_m < 1.0)) {
    throw std::invalid_argument("sample_mask: p_m must be in (0, 1), got " + std::to_string(p_m));
  }
  Tensor m(Shape{length});
  for (std::size_t j = 0; j < length; ++j) m[j] = rng.bernoulli(p_m) ? 1.0 : 0.0;
  return m;
}

Tensor corrupt(const Tensor& x, const Tensor& mask, const EmpiricalMarginals& marginals, Rng& rng) {
  if (!marginals.fitted()) throw std::logic_error("corrupt: empirical marginals not fitted");
  if (x.rank() != 1 || x.shape() != mask.shape() || x.size() != marginals.features()) {
    throw ShapeError("corrupt: x " + shape_string(x.shape()) + ", mask " +
                     shape_string(mask.shape()) + ", marginals over " +
                     std::to_string(marginals.features()) + " features");
  }
  Tensor out = x;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (mask[j] != 0.0) out[j] = marginals.sample(j, rng);
  }
  return out;
}

MaskRecord corrupt_batch(const Tensor& x, std::span<const std::size_t> sample_ids,
                         const EmpiricalMarginals& marginals, double p_m, std::uint64_t seed,
                         std::uint64_t epoch) {
  if (x.rank() != 2 || x.dim(0) != sample_ids.size()) {
    throw ShapeError("corrupt_batch: x " + shape_string(x.shape()) + " vs " +
                     std::to_string(sample_ids.size()) + " sample ids");
  }
  const std::size_t batch = x.dim(0), len = x.dim(1);
  MaskRecord rec{Tensor({batch, len}), Tensor({batch, len}), p_m, seed, epoch};
  Tensor row(Shape{len});
  for (std::size_t r = 0; r < batch; ++r) {
    Rng rng(derive_seed(seed, {epoch, sample_ids[r]}));
    for (std::size_t j = 0; j < len; ++j) row[j] = x[r * len + j];
    const Tensor m = sample_mask(len, p_m, rng);
    const Tensor xt = corrupt(row, m, marginals, rng);
    for (std::size_t j = 0; j < len; ++j) {
      rec.mask[r * len + j] = m[j];
      rec.corrupted[r * len + j] = xt[j];
    }
  }
  return rec;
}

Var mask_loss(const Var& mask, const Var& estimate) {
  check_same_shape(mask, estimate, "mask_loss");
  return mean(abs(sub(mask, estimate)));
}

Var reconstruction_loss(const Var& x, const Var& x_hat) {
  check_same_shape(x, x_hat, "reconstruction_loss");
  Var d = sub(x_hat, x);
  return mean(mul(d, d));
}

}  // namespace mtcmtm
