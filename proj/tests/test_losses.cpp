#include <doctest.h>

#include <cmath>
#include <vector>

#include "mtcmtm/losses.hpp"

using namespace mtcmtm;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

double scalar(const Var& v) { return v.value()[0]; }

}  // namespace

TEST_CASE("info_nce under uniform similarities is ln N") {
  PrecisionScope p(Precision::f64);
  for (std::size_t n : {2, 3, 8, 17}) {
    Tape t;
    // Every row identical, so every similarity is the same.
    const Tensor z = Tensor::full({n, 4}, 0.5);
    for (double tau : {0.1, 1.0}) {
      CHECK(std::abs(scalar(info_nce(t.constant(z), t.constant(z), tau)) - std::log(static_cast<double>(n))) <
            1e-10);
    }
  }
}

TEST_CASE("info_nce closed form for N = 2") {
  PrecisionScope p(Precision::f64);
  Tape t;
  // Orthonormal rows, tau = 1: S = I, each CE is ln(1 + e^-1).
  const Tensor e = Tensor::identity(2);
  const double expect = std::log(1.0 + std::exp(-1.0));
  CHECK(scalar(info_nce(t.constant(e), t.constant(e), 1.0)) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(expect == doctest::Approx(0.31326).epsilon(1e-5));
}

TEST_CASE("info_nce is invariant to a joint row permutation") {
  PrecisionScope p(Precision::f64);
  Rng rng(3);
  const Tensor a = random_tensor({5, 3}, rng), b = random_tensor({5, 3}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor ap({5, 3}), bp({5, 3});
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      ap[r * 3 + c] = a[perm[r] * 3 + c];
      bp[r * 3 + c] = b[perm[r] * 3 + c];
    }
  }
  Tape t;
  CHECK(scalar(info_nce(t.constant(a), t.constant(b), 0.1)) ==
        doctest::Approx(scalar(info_nce(t.constant(ap), t.constant(bp), 0.1))).epsilon(1e-13));
}

TEST_CASE("info_nce brute force") {
  PrecisionScope p(Precision::f64);
  Rng rng(8);
  const std::size_t n = 4, d = 3;
  const double tau = 0.2;
  const Tensor a = random_tensor({n, d}, rng), b = random_tensor({n, d}, rng);
  std::vector<double> s(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += a[i * d + k] * b[j * d + k];
      s[i * n + j] = acc / tau;
    }
  }
  double rows = 0.0, cols = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double zr = 0.0, zc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      zr += std::exp(s[i * n + j]);
      zc += std::exp(s[j * n + i]);
    }
    rows += std::log(zr) - s[i * n + i];
    cols += std::log(zc) - s[i * n + i];
  }
  const double expect = (rows + cols) / (2.0 * n);
  Tape t;
  CHECK(scalar(info_nce(t.constant(a), t.constant(b), tau)) == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("clip at a matched frozen temperature equals info_nce") {
  PrecisionScope p(Precision::f64);
  Rng rng(4);
  for (double tau : {0.07, 0.1, 0.5}) {
    const Tensor a = random_tensor({6, 4}, rng), b = random_tensor({6, 4}, rng);
    Tape t;
    const double ref = scalar(info_nce(t.constant(a), t.constant(b), tau));
    const double got =
        scalar(clip_loss(t.constant(a), t.constant(b), t.constant(Tensor::scalar(std::log(1.0 / tau)))));
    CHECK(std::abs(got - ref) < 1e-10);
  }
}

TEST_CASE("contrastive losses reject N < 2") {
  Tape t;
  const Var one = t.constant(Tensor::ones({1, 3}));
  CHECK_THROWS_AS(info_nce(one, one, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(simsiam_loss(one, one, one, one), std::invalid_argument);
  CHECK_THROWS_AS(barlow_twins_loss(one, one), std::invalid_argument);
}

TEST_CASE("barlow twins is zero at C = I") {
  PrecisionScope p(Precision::f64);
  Tape t;
  // Zero-mean, unit-variance, orthogonal columns.
  const Tensor z({4, 2}, {1, 1, 1, -1, -1, 1, -1, -1});
  CHECK(scalar(barlow_twins_loss(t.constant(z), t.constant(z))) == doctest::Approx(0.0).epsilon(1e-15));
  // Scale and shift do not matter after standardization.
  Tensor z2 = z;
  for (auto& v : z2.mutable_data()) v = 3.0 * v + 2.0;
  CHECK(std::abs(scalar(barlow_twins_loss(t.constant(z), t.constant(z2)))) < 1e-14);
  // Perfectly correlated columns: C = [[1,1],[1,1]], off term 2 * lambda.
  const Tensor zc({4, 2}, {1, 1, 1, 1, -1, -1, -1, -1});
  CHECK(scalar(barlow_twins_loss(t.constant(zc), t.constant(zc))) == doctest::Approx(2 * kBarlowLambda).epsilon(1e-12));
  CHECK_THROWS_AS(barlow_twins_loss(t.constant(Tensor::ones({4, 2})), t.constant(z)), std::invalid_argument);
}

TEST_CASE("simsiam with p == z is -1") {
  PrecisionScope p(Precision::f64);
  Rng rng(5);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  Tape t;
  CHECK(scalar(simsiam_loss(t.constant(b), t.constant(a), t.constant(a), t.constant(b))) ==
        doctest::Approx(-1.0).epsilon(1e-14));
  Tensor neg_b = b;
  for (auto& v : neg_b.mutable_data()) v = -v;
  CHECK(scalar(simsiam_loss(t.constant(neg_b), t.constant(a), t.constant(a), t.constant(b))) ==
        doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("regression losses") {
  PrecisionScope p(Precision::f64);
  Tape t;
  const Tensor target({1, 3}, {0.0, 0.0, 0.0});
  const Var pred = t.constant(Tensor({1, 3}, {0.5, -2.0, 1.0}));
  DownstreamLoss l;
  l.kind = DownstreamLossKind::mse;
  CHECK(std::abs(scalar(regression_loss(l, pred, target)) - (0.25 + 4.0 + 1.0) / 3.0) < 1e-12);
  l.kind = DownstreamLossKind::l1;
  CHECK(std::abs(scalar(regression_loss(l, pred, target)) - 3.5 / 3.0) < 1e-12);
  l.kind = DownstreamLossKind::huber;
  // 0.5 in the quadratic zone, 2 and 1 on the linear side / the boundary.
  CHECK(std::abs(scalar(regression_loss(l, pred, target)) - (0.125 + 1.5 + 0.5) / 3.0) < 1e-12);
  CHECK(std::abs(scalar(regression_loss(l, t.constant(Tensor({1, 1}, {0.5})), Tensor({1, 1}, {0.0}))) - 0.125) <
        1e-12);
  CHECK_THROWS_AS(regression_loss(l, pred, Tensor::zeros({1, 2})), ShapeError);
  l.kind = DownstreamLossKind::ce;
  CHECK_THROWS_AS(regression_loss(l, pred, target), std::invalid_argument);
}

TEST_CASE("classification losses") {
  PrecisionScope p(Precision::f64);
  Tape t;
  DownstreamLoss l;
  SUBCASE("ce with zero logits is ln K") {
    l.kind = DownstreamLossKind::ce;
    const std::vector<std::size_t> y{0, 3, 2};
    CHECK(std::abs(scalar(classification_loss(l, t.constant(Tensor::zeros({3, 4})), y)) - std::log(4.0)) < 1e-12);
  }
  SUBCASE("ce hand value") {
    l.kind = DownstreamLossKind::ce;
    const std::vector<std::size_t> y{1};
    // p_1 = e^2 / (1 + e^2 + e^0)
    const double expect = -(2.0 - std::log(1.0 + std::exp(2.0) + 1.0));
    CHECK(std::abs(scalar(classification_loss(l, t.constant(Tensor({1, 3}, {0, 2, 0})), y)) - expect) < 1e-12);
  }
  SUBCASE("focal") {
    l.kind = DownstreamLossKind::focal;
    const std::vector<std::size_t> y{0, 1};
    // Row 0: p = 1/2. Row 1: p_true = 3/4.
    const Tensor logits({2, 2}, {0, 0, 0, std::log(3.0)});
    const double expect = (0.25 * std::log(2.0) + 0.0625 * -std::log(0.75)) / 2.0;
    CHECK(std::abs(scalar(classification_loss(l, t.constant(logits), y)) - expect) < 1e-12);
  }
  SUBCASE("balanced ce") {
    const std::vector<std::size_t> train{0, 0, 0, 1};
    const auto w = balanced_class_weights(train, 2);
    CHECK(std::abs(w[0] - 0.5) < 1e-15);
    CHECK(std::abs(w[1] - 1.5) < 1e-15);
    l.kind = DownstreamLossKind::balanced_ce;
    l.class_weights = w;
    const Tensor logits({4, 2}, {0, 0, 0, 0, 0, 0, 0, std::log(3.0)});
    // (3 * 0.5 * ln 2 + 1.5 * ln(4/3)) / (3 * 0.5 + 1.5)
    const double expect = 0.5 * std::log(8.0 / 3.0);
    CHECK(std::abs(scalar(classification_loss(l, t.constant(logits), train)) - expect) < 1e-12);
    const auto w3 = balanced_class_weights(train, 3);
    CHECK(w3[2] == 0.0);
  }
  SUBCASE("label out of range") {
    l.kind = DownstreamLossKind::ce;
    const std::vector<std::size_t> y{2};
    CHECK_THROWS_AS(classification_loss(l, t.constant(Tensor::zeros({1, 2})), y), std::invalid_argument);
  }
}

TEST_CASE("multi-task combination") {
  PrecisionScope p(Precision::f64);
  SUBCASE("fixed weights") {
    Tape t;
    MultiTaskWeights w{MultiTaskMode::fixed, 0.5, 0.5};
    CHECK(scalar(combine_multitask(t.constant(Tensor::scalar(2.0)), t.constant(Tensor::scalar(4.0)), w)) == 3.0);
  }
  SUBCASE("uncertainty at s = 0 is the plain sum") {
    Tape t;
    MultiTaskWeights w{MultiTaskMode::uncertainty};
    const Var s_c = t.parameter("s_c", Tensor::scalar(0.0)), s_m = t.parameter("s_m", Tensor::scalar(0.0));
    CHECK(scalar(combine_multitask(t.constant(Tensor::scalar(2.0)), t.constant(Tensor::scalar(4.0)), w, &s_c,
                                   &s_m)) == 6.0);
    CHECK_THROWS_AS(combine_multitask(t.constant(Tensor::scalar(2.0)), t.constant(Tensor::scalar(4.0)), w),
                    std::invalid_argument);
  }
  SUBCASE("d/ds matches -exp(-s) L + 1") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      const double lc = rng.uniform(0.1, 5.0), lm = rng.uniform(0.1, 5.0);
      const double sc = rng.uniform(-2.0, 2.0), sm = rng.uniform(-2.0, 2.0);
      Tape t;
      const Var s_c = t.parameter("s_c", Tensor::scalar(sc)), s_m = t.parameter("s_m", Tensor::scalar(sm));
      const Var loss = combine_multitask(t.constant(Tensor::scalar(lc)), t.constant(Tensor::scalar(lm)),
                                         {MultiTaskMode::uncertainty}, &s_c, &s_m);
      CHECK(std::abs(scalar(loss) - (std::exp(-sc) * lc + sc + std::exp(-sm) * lm + sm)) < 1e-12);
      const GradMap g = t.backward(loss);
      CHECK(std::abs(g.at("s_c")[0] - (-std::exp(-sc) * lc + 1.0)) < 1e-8);
      CHECK(std::abs(g.at("s_m")[0] - (-std::exp(-sm) * lm + 1.0)) < 1e-8);
    }
  }
}
