#include <doctest.h>

#include <chrono>
#include <bit>
#include <cstdint>
#include <cmath>
#include <numeric>

#include "mtcmtm/mtm.hpp"

using namespace mtcmtm;

TEST_CASE("empirical marginals of a small column") {
  const auto m = fit_empirical_marginals(Tensor({3, 2}, {1.0, 5.0, 1.0, 5.0, 2.0, 5.0}));
  CHECK(m.rows() == 3);
  CHECK(m.support(0) == std::vector<double>{1.0, 2.0});
  CHECK(m.probability(0, 1.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(m.probability(0, 2.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(m.probability(0, 3.0) == 0.0);
  CHECK(m.in_support(0, 2.0));
  CHECK_FALSE(m.in_support(0, 1.5));

  // A constant column always resamples to its constant.
  Rng rng(3);
  for (int i = 0; i < 100; ++i) CHECK(m.sample(1, rng) == 5.0);

  // Draw frequency matches the observed frequency within 3 sigma.
  const int n = 30000;
  int ones = 0;
  for (int i = 0; i < n; ++i) ones += m.sample(0, rng) == 1.0;
  const double p = 2.0 / 3.0, sigma = std::sqrt(p * (1 - p) / n);
  CHECK(std::abs(static_cast<double>(ones) / n - p) < 3 * sigma);
}

TEST_CASE("marginals reject empty or non-finite input") {
  CHECK_THROWS_AS(fit_empirical_marginals(Tensor::zeros({0, 3})), std::invalid_argument);
  CHECK_THROWS(fit_empirical_marginals(Tensor({2, 1}, {1.0, std::nan("")})));
}

TEST_CASE("sample_mask validates p_m") {
  Rng rng(1);
  CHECK_THROWS_AS(sample_mask(4, 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_mask(4, 1.0, rng), std::invalid_argument);
  const Tensor m = sample_mask(50, 0.3, rng);
  for (double v : m.data()) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("corruption semantics over 1e5 coordinates") {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(17);
  const std::size_t n_train = 200, len = 5;
  Tensor train({n_train, len});
  for (std::size_t i = 0; i < n_train; ++i) {
    for (std::size_t j = 0; j < len; ++j) {
      // Mix of discrete and continuous columns.
      train[i * len + j] = j % 2 == 0 ? std::floor(rng.uniform(0.0, 4.0)) : rng.normal(0.0, 1.0);
    }
  }
  const auto marginals = fit_empirical_marginals(train);

  const double p_m = 0.3;
  const std::size_t rows = 20000;
  // Held-out rows drawn off-support, so a masked value equal to its original is impossible.
  Tensor x({rows, len});
  for (auto& v : x.mutable_data()) v = rng.uniform(10.0, 20.0);
  std::vector<std::size_t> ids(rows);
  std::iota(ids.begin(), ids.end(), 0);
  const MaskRecord rec = corrupt_batch(x, ids, marginals, p_m, 99, 0);

  std::size_t masked = 0, bad_unmasked = 0, bad_support = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t k = i * len + j;
      if (rec.mask[k] == 1.0) {
        ++masked;
        bad_support += !marginals.in_support(j, rec.corrupted[k]);
      } else {
        bad_unmasked += std::bit_cast<std::uint64_t>(rec.corrupted[k]) != std::bit_cast<std::uint64_t>(x[k]);
      }
    }
  }
  CHECK(bad_unmasked == 0);
  CHECK(bad_support == 0);
  const double total = static_cast<double>(rows * len);
  const double sigma = std::sqrt(p_m * (1 - p_m) / total);
  CHECK(std::abs(static_cast<double>(masked) / total - p_m) < 3 * sigma);

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(secs < 30.0);
}

TEST_CASE("corrupt_batch does not depend on batch order") {
  Rng rng(2);
  Tensor x({4, 3});
  for (auto& v : x.mutable_data()) v = rng.normal(0.0, 1.0);
  const auto marginals = fit_empirical_marginals(x);
  const std::vector<std::size_t> ids{10, 11, 12, 13};
  const MaskRecord a = corrupt_batch(x, ids, marginals, 0.5, 7, 3);

  // Rows reversed, ids reversed with them.
  Tensor xr({4, 3});
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t j = 0; j < 3; ++j) xr[r * 3 + j] = x[(3 - r) * 3 + j];
  }
  const std::vector<std::size_t> idr{13, 12, 11, 10};
  const MaskRecord b = corrupt_batch(xr, idr, marginals, 0.5, 7, 3);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(a.mask[r * 3 + j] == b.mask[(3 - r) * 3 + j]);
      CHECK(a.corrupted[r * 3 + j] == b.corrupted[(3 - r) * 3 + j]);
    }
  }
  // A different epoch draws a different mask.
  const MaskRecord c = corrupt_batch(x, ids, marginals, 0.5, 7, 4);
  CHECK_FALSE(c.mask == a.mask);
}

TEST_CASE("mask_loss trivial cases") {
  Tape t;
  const Tensor m({2, 4}, {1, 0, 0, 1, 0, 1, 1, 0});
  Tensor flipped = m;
  for (auto& v : flipped.mutable_data()) v = 1.0 - v;
  CHECK(mask_loss(t.constant(m), t.constant(m)).value()[0] == 0.0);
  CHECK(mask_loss(t.constant(m), t.constant(flipped)).value()[0] == 1.0);
  CHECK(mask_loss(t.constant(m), t.constant(Tensor::full({2, 4}, 0.5))).value()[0] == 0.5);
}

TEST_CASE("reconstruction_loss examples") {
  Tape t;
  CHECK(reconstruction_loss(t.constant(Tensor({1, 2}, {1, 2})), t.constant(Tensor({1, 2}, {1, 4})))
            .value()[0] == 2.0);
  CHECK(reconstruction_loss(t.constant(Tensor({2, 1}, {3, -1})), t.constant(Tensor({2, 1}, {3, -1})))
            .value()[0] == 0.0);
  CHECK_THROWS_AS(reconstruction_loss(t.constant(Tensor::zeros({2, 2})), t.constant(Tensor::zeros({2, 3}))),
                  ShapeError);
}
