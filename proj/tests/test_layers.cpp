#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mtcmtm/grad_check.hpp"
#include "mtcmtm/layers.hpp"

using namespace mtcmtm;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor run(ParamStore& store, Mode mode, const std::function<Var(Forward&)>& f) {
  Tape tape(false);
  Forward fw(tape, store, mode);
  return f(fw).value();
}

double sigmoid_ref(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("init schemes") {
  Rng rng(0);
  CHECK(init_tensor(InitScheme::zeros, {3, 4}, 3, rng) == Tensor::zeros({3, 4}));
  CHECK(init_tensor(InitScheme::ones, {2}, 1, rng) == Tensor::ones({2}));

  const std::vector<std::pair<std::string, Shape>> shapes{{"a", {5, 7}}, {"b", {3, 2, 4}}};
  CHECK(init_params(InitScheme::kaiming_uniform, shapes, 42).get("b") ==
        init_params(InitScheme::kaiming_uniform, shapes, 42).get("b"));

  const std::size_t fan_in = 24;
  const double bound = std::sqrt(6.0 / fan_in);
  const Tensor w = init_tensor(InitScheme::kaiming_uniform, {10000}, fan_in, rng);
  double lo = 0.0, hi = 0.0;
  for (double v : w.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -bound);
  CHECK(hi <= bound);
  // The draws should actually reach toward both ends.
  CHECK(lo < -0.99 * bound);
  CHECK(hi > 0.99 * bound);
  CHECK(fan_in_of({16, 8, 3}) == 24);
  CHECK(fan_in_of({12, 5}) == 12);
}

TEST_CASE("dense") {
  PrecisionScope p(Precision::f64);
  Rng rng(11);
  ParamStore store;
  init_dense(store, "fc", 3, 3, rng);
  const Tensor x = random_tensor({4, 3}, rng);

  store.set("fc.w", Tensor::identity(3));
  store.set("fc.b", Tensor::zeros({3}));
  CHECK(run(store, Mode::eval, [&](Forward& fw) { return dense(fw, "fc", fw.input(x)); }) == x);

  ParamStore one;
  init_dense(one, "fc", 3, 1, rng);
  one.set("fc.w", Tensor::zeros({3, 1}));
  one.set("fc.b", Tensor::from({3.0}));
  CHECK(run(one, Mode::eval, [&](Forward& fw) { return dense(fw, "fc", fw.input(x)); }) ==
        Tensor::full({4, 1}, 3.0));

  ParamStore rnd;
  Rng wrng(11), xrng(12);
  init_dense(rnd, "fc", 5, 2, wrng);
  rnd.set("fc.b", random_tensor({2}, wrng));
  const Tensor xr = random_tensor({3, 5}, xrng);
  const Tensor y = run(rnd, Mode::eval, [&](Forward& fw) { return dense(fw, "fc", fw.input(xr)); });
  const Tensor& w = rnd.get("fc.w");
  const Tensor& b = rnd.get("fc.b");
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t o = 0; o < 2; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < 5; ++i) acc += xr[r * 5 + i] * w[i * 2 + o];
      CHECK(y[r * 2 + o] == doctest::Approx(acc).epsilon(1e-14));
    }
  }
}

TEST_CASE("batchnorm1d") {
  PrecisionScope p(Precision::f64);
  ParamStore store;
  init_batchnorm(store, "bn", 3);

  SUBCASE("constant channels normalize to zero") {
    Tensor x({4, 3, 5});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>((i / 5) % 3) * 2.5 - 1.0;
    const Tensor y = run(store, Mode::train, [&](Forward& fw) { return batchnorm1d(fw, "bn", fw.input(x)); });
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("eval mode with default running stats is affine") {
    Rng rng(2);
    store.set("bn.gamma", Tensor::from({2.0, -1.0, 0.5}));
    store.set("bn.beta", Tensor::from({0.1, 0.2, 0.3}));
    const Tensor x = random_tensor({2, 3, 4}, rng);
    const Tensor y = run(store, Mode::eval, [&](Forward& fw) { return batchnorm1d(fw, "bn", fw.input(x)); });
    const double gamma[] = {2.0, -1.0, 0.5}, beta[] = {0.1, 0.2, 0.3};
    const double scale = 1.0 / std::sqrt(1.0 + kBatchNormEps);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t c = (i / 4) % 3;
      CHECK(y[i] == doctest::Approx(gamma[c] * x[i] * scale + beta[c]).epsilon(1e-14));
      // Within eps of the pure gamma * x + beta form.
      CHECK(std::abs(y[i] - (gamma[c] * x[i] + beta[c])) < 1e-5 * std::abs(gamma[c] * x[i]) + 1e-15);
    }
  }
  SUBCASE("train mode gives zero mean and unit variance per channel") {
    Rng rng(5);
    const Tensor x = random_tensor({8, 3, 6}, rng, -3.0, 5.0);
    const Tensor y = run(store, Mode::train, [&](Forward& fw) { return batchnorm1d(fw, "bn", fw.input(x)); });
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0.0, ss = 0.0;
      for (std::size_t b = 0; b < 8; ++b) {
        for (std::size_t t = 0; t < 6; ++t) s += y[(b * 3 + c) * 6 + t];
      }
      const double m = s / 48.0;
      for (std::size_t b = 0; b < 8; ++b) {
        for (std::size_t t = 0; t < 6; ++t) ss += (y[(b * 3 + c) * 6 + t] - m) * (y[(b * 3 + c) * 6 + t] - m);
      }
      CHECK(std::abs(m) < 1e-6);
      CHECK(std::abs(ss / 48.0 - 1.0) < 1e-3);
    }
  }
  SUBCASE("running statistics update only when enabled") {
    Rng rng(6);
    const Tensor x = random_tensor({4, 3, 2}, rng, 1.0, 3.0);
    {
      Tape tape;
      Forward fw(tape, store, Mode::train);
      fw.set_update_running_stats(false);
      batchnorm1d(fw, "bn", fw.input(x));
    }
    CHECK(store.get("bn.running_mean") == Tensor::zeros({3}));
    run(store, Mode::train, [&](Forward& fw) { return batchnorm1d(fw, "bn", fw.input(x)); });
    CHECK(store.get("bn.running_mean")[0] > 0.1);
  }
  SUBCASE("train mode needs batch >= 2") {
    const Tensor x = Tensor::ones({1, 3, 4});
    CHECK_THROWS_AS(run(store, Mode::train, [&](Forward& fw) { return batchnorm1d(fw, "bn", fw.input(x)); }),
                    std::invalid_argument);
  }
}

TEST_CASE("cbam1d") {
  PrecisionScope p(Precision::f64);
  CbamConfig cfg{4, 2, 3};
  Rng rng(9);
  ParamStore store;
  init_cbam(store, "cbam", cfg, rng);
  store.set("cbam.mlp1.b", random_tensor({2}, rng));
  store.set("cbam.mlp2.b", random_tensor({4}, rng));
  store.set("cbam.spatial.b", random_tensor({1}, rng));
  const std::size_t batch = 2, c_n = 4, len = 5;
  const Tensor x = random_tensor({batch, c_n, len}, rng);

  SUBCASE("matches a step-by-step recomputation") {
    CbamTrace trace;
    const Tensor y = run(store, Mode::eval, [&](Forward& fw) { return cbam1d(fw, "cbam", cfg, fw.input(x), &trace); });
    const Tensor& w1 = store.get("cbam.mlp1.w");
    const Tensor& b1 = store.get("cbam.mlp1.b");
    const Tensor& w2 = store.get("cbam.mlp2.w");
    const Tensor& b2 = store.get("cbam.mlp2.b");
    const Tensor& ws = store.get("cbam.spatial.w");  // [1, 2, k]
    const double bs = store.get("cbam.spatial.b")[0];
    auto mlp = [&](const std::vector<double>& d) {
      std::vector<double> h(2), o(4);
      for (std::size_t j = 0; j < 2; ++j) {
        double a = b1[j];
        for (std::size_t i = 0; i < 4; ++i) a += d[i] * w1[i * 2 + j];
        h[j] = std::max(0.0, a);
      }
      for (std::size_t j = 0; j < 4; ++j) {
        double a = b2[j];
        for (std::size_t i = 0; i < 2; ++i) a += h[i] * w2[i * 4 + j];
        o[j] = a;
      }
      return o;
    };
    for (std::size_t b = 0; b < batch; ++b) {
      auto at = [&](std::size_t c, std::size_t t) { return x[(b * c_n + c) * len + t]; };
      std::vector<double> avg(4), mx(4);
      for (std::size_t c = 0; c < 4; ++c) {
        double s = 0.0, m = -1e300;
        for (std::size_t t = 0; t < len; ++t) {
          s += at(c, t);
          m = std::max(m, at(c, t));
        }
        avg[c] = s / len;
        mx[c] = m;
      }
      const auto oa = mlp(avg), om = mlp(mx);
      std::vector<double> gate(4);
      for (std::size_t c = 0; c < 4; ++c) {
        gate[c] = sigmoid_ref(oa[c] + om[c]);
        CHECK(trace.channel_attention[b * 4 + c] == doctest::Approx(gate[c]).epsilon(1e-13));
      }
      std::vector<double> ref(4 * len), pa(len), pm(len);
      for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t t = 0; t < len; ++t) ref[c * len + t] = at(c, t) * gate[c];
      }
      for (std::size_t t = 0; t < len; ++t) {
        double s = 0.0, m = -1e300;
        for (std::size_t c = 0; c < 4; ++c) {
          s += ref[c * len + t];
          m = std::max(m, ref[c * len + t]);
        }
        pa[t] = s / 4.0;
        pm[t] = m;
      }
      for (std::size_t t = 0; t < len; ++t) {
        double a = bs;
        for (std::size_t j = 0; j < 3; ++j) {
          const long pos = static_cast<long>(t + j) - 1;
          if (pos < 0 || pos >= static_cast<long>(len)) continue;
          a += pa[pos] * ws[j] + pm[pos] * ws[3 + j];
        }
        const double sg = sigmoid_ref(a);
        CHECK(trace.spatial_attention[b * len + t] == doctest::Approx(sg).epsilon(1e-13));
        for (std::size_t c = 0; c < 4; ++c) {
          CHECK(y[(b * c_n + c) * len + t] == doctest::Approx(ref[c * len + t] * sg).epsilon(1e-13));
        }
      }
    }
  }
  SUBCASE("attention maps lie in (0, 1)") {
    CbamTrace trace;
    const Tensor big = random_tensor({batch, c_n, len}, rng, -4.0, 4.0);
    run(store, Mode::eval, [&](Forward& fw) { return cbam1d(fw, "cbam", cfg, fw.input(big), &trace); });
    for (double v : trace.channel_attention.data()) CHECK((v > 0.0 && v < 1.0));
    for (double v : trace.spatial_attention.data()) CHECK((v > 0.0 && v < 1.0));
  }
  SUBCASE("all-ones attention is the identity") {
    // Zero weights and a large bias saturate both sigmoids to exactly 1.
    store.set("cbam.mlp2.w", Tensor::zeros({2, 4}));
    store.set("cbam.mlp2.b", Tensor::full({4}, 20.0));
    store.set("cbam.spatial.w", Tensor::zeros({1, 2, 3}));
    store.set("cbam.spatial.b", Tensor::from({40.0}));
    const Tensor y = run(store, Mode::eval, [&](Forward& fw) { return cbam1d(fw, "cbam", cfg, fw.input(x)); });
    CHECK(y == x);
  }
}

TEST_CASE("residual block") {
  PrecisionScope p(Precision::f64);
  Rng rng(4);
  SUBCASE("zero residual path leaves relu(x)") {
    ResidualBlockConfig cfg{4, 4, 1, 3, 2, 3};
    ParamStore store;
    init_residual_block(store, "blk", cfg, rng);
    for (auto& e : store.mutable_entries()) {
      if (e.name.find("conv") != std::string::npos) e.value = Tensor::zeros(e.value.shape());
    }
    store.set("blk.bn1.gamma", Tensor::zeros({4}));
    store.set("blk.bn2.gamma", Tensor::zeros({4}));
    const Tensor x = random_tensor({3, 4, 6}, rng);
    const Tensor y = run(store, Mode::train, [&](Forward& fw) { return residual_block(fw, "blk", cfg, fw.input(x)); });
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == std::max(0.0, x[i]));
  }
  SUBCASE("output shape") {
    for (std::size_t stride : {1, 2}) {
      for (std::size_t len : {5, 6, 7}) {
        ResidualBlockConfig cfg{4, 8, stride, 3, 2, 3};
        ParamStore store;
        init_residual_block(store, "blk", cfg, rng);
        const Tensor x = random_tensor({2, 4, len}, rng);
        const Tensor y = run(store, Mode::train, [&](Forward& fw) { return residual_block(fw, "blk", cfg, fw.input(x)); });
        CHECK(y.shape() == Shape{2, 8, (len + stride - 1) / stride});
      }
    }
  }
  SUBCASE("gradient of mean(output) w.r.t. every parameter") {
    for (std::size_t stride : {1, 2}) {
      ResidualBlockConfig cfg{2, stride == 1 ? 2u : 4u, stride, 3, 2, 3};
      ParamStore store;
      init_residual_block(store, "blk", cfg, rng);
      for (auto& e : store.mutable_entries()) {
        // Move off the zero-bias kinks.
        if (e.name.size() > 2 && e.name.substr(e.name.size() - 2) == ".b") e.value = random_tensor(e.value.shape(), rng);
      }
      const Tensor x = random_tensor({3, 2, 5}, rng);
      const auto r = grad_check_params(store, Mode::train, [&](Forward& fw) {
        return mean(residual_block(fw, "blk", cfg, fw.input(x)));
      }, 1e-6);
      CHECK(r.max_rel_error < 1e-5);
      CHECK(r.coords_checked == store.trainable_scalars());
    }
  }
  SUBCASE("forward is deterministic and keeps the batch dimension") {
    ResidualBlockConfig cfg{4, 4, 1, 3, 2, 3};
    ParamStore store;
    init_residual_block(store, "blk", cfg, rng);
    const Tensor x = random_tensor({5, 4, 6}, rng);
    const Tensor a = run(store, Mode::eval, [&](Forward& fw) { return residual_block(fw, "blk", cfg, fw.input(x)); });
    const Tensor b = run(store, Mode::eval, [&](Forward& fw) { return residual_block(fw, "blk", cfg, fw.input(x)); });
    CHECK(a == b);
    CHECK(a.shape()[0] == 5);
  }
}
