#include "mtcmtm/grad_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>

#include "mtcmtm/grad_check.hpp"
#include "mtcmtm/layers.hpp"
#include "mtcmtm/losses.hpp"
#include "mtcmtm/model.hpp"
#include "mtcmtm/mtm.hpp"
#include "mtcmtm/rng.hpp"
#include "mtcmtm/train.hpp"

namespace mtcmtm {

namespace {

// Network cases use a smaller step so ReLU kinks are rarely straddled.
constexpr double kEps = 1e-5;
constexpr double kNetEps = 1e-6;
constexpr std::size_t kCoordsPerParam = 3;

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.uniform_int(hi - lo + 1));
}

// Random linear functional of y; the weights depend only on (seed, shape) so
// every evaluation inside one check sees the same ones.
Var wsum(Tape& t, const Var& y, std::uint64_t seed) {
  Rng r(seed);
  return sum(mul(y, t.constant(rand_tensor(y.shape(), r))));
}

// Zero-initialized biases combined with dead ReLUs place activations exactly
// on a kink (or l2_normalize at its singular point); checks move off them.
void jitter_biases(ParamStore& store, Rng& rng) {
  for (auto& e : store.mutable_entries()) {
    const auto& n = e.name;
    const bool bias = n.size() > 2 && n.compare(n.size() - 2, 2, ".b") == 0;
    const bool beta = n.size() > 5 && n.compare(n.size() - 5, 5, ".beta") == 0;
    if (!(bias || beta)) continue;
    for (auto& v : e.value.mutable_data()) v = rng.uniform(-0.5, 0.5);
  }
}

using LayerFn = std::function<Var(Forward&, const Var&)>;

// Checks d/dx and d/dparams of wsum(f(x)).
double check_layer(ParamStore& store, const Tensor& x, const LayerFn& f, std::uint64_t seed,
                   double eps = kNetEps, std::size_t coords = 0) {
  Rng jitter(seed ^ 0x5bd1e995u);
  jitter_biases(store, jitter);
  const double e_in = grad_check(
      [&](Tape& t, const Var& v) {
        Forward fw(t, store, Mode::train);
        fw.set_update_running_stats(false);
        return wsum(t, f(fw, v), seed);
      },
      x, eps);
  const double e_par = grad_check_params(
                           store, Mode::train,
                           [&](Forward& fw) { return wsum(fw.tape(), f(fw, fw.input(x)), seed); },
                           eps, coords, seed)
                           .max_rel_error;
  return std::max(e_in, e_par);
}

double check_fn(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x,
                double eps = kEps) {
  return grad_check(f, x, eps);
}

EncoderConfig tiny_encoder(Rng& rng, std::size_t input_len, ImageEncoderKind kind) {
  EncoderConfig e;
  e.tabular.input_len = input_len;
  e.tabular.stem_channels = 4;
  e.tabular.stem_length = pick(rng, 3, 5);
  e.tabular.n_blocks = pick(rng, 1, 3);
  e.tabular.kernel = 3;
  e.tabular.reduction = 2;
  e.tabular.spatial_kernel = 3;
  e.image.kind = kind;
  e.image.height = 6;
  e.image.width = 6;
  e.image.channels = 1;
  e.image.hidden = 8;
  e.image.cnn_channels1 = 2;
  e.image.cnn_channels2 = 3;
  e.image.feature_dim = 5;
  e.projection_dim = 4;
  e.temperature = 0.5;
  return e;
}

struct Case {
  std::string name;
  std::function<double(Rng&, std::uint64_t)> run;
};

double regression_case(DownstreamLossKind kind, Rng& rng) {
  const std::size_t b = pick(rng, 2, 6), t = pick(rng, 1, 4);
  const Tensor target = rand_tensor({b, t}, rng, -2.0, 2.0);
  const Tensor x = rand_tensor({b, t}, rng, -2.0, 2.0);
  DownstreamLoss loss;
  loss.kind = kind;
  loss.huber_delta = rng.uniform(0.3, 1.5);
  return check_fn([&](Tape&, const Var& v) { return regression_loss(loss, v, target); }, x);
}

double classification_case(DownstreamLossKind kind, Rng& rng) {
  const std::size_t b = pick(rng, 3, 8), k = pick(rng, 2, 5);
  std::vector<std::size_t> labels(b);
  for (auto& l : labels) l = rng.uniform_int(k);
  DownstreamLoss loss;
  loss.kind = kind;
  loss.focal_gamma = rng.uniform(0.5, 3.0);
  if (kind == DownstreamLossKind::balanced_ce) loss.class_weights = balanced_class_weights(labels, k);
  const Tensor x = rand_tensor({b, k}, rng, -2.0, 2.0);
  return check_fn([&](Tape&, const Var& v) { return classification_loss(loss, v, labels); }, x);
}

double objective_case(PretrainStrategy strategy, Rng& rng, std::uint64_t seed) {
  const std::size_t b = pick(rng, 4, 6), l = pick(rng, 4, 7);
  PretrainHeads heads;
  heads.strategy = strategy;
  // SimSiam's stop-gradient makes the full-network finite difference differ
  // from the analytic gradient by design; it is checked at the loss level.
  constexpr ContrastiveKind kinds[] = {ContrastiveKind::info_nce, ContrastiveKind::clip,
                                       ContrastiveKind::barlow_twins};
  heads.contrastive = kinds[rng.uniform_int(3)];
  heads.multitask = rng.bernoulli(0.5) ? MultiTaskMode::uncertainty : MultiTaskMode::fixed;
  MultiTaskWeights weights;
  weights.mode = heads.multitask;
  weights.lambda_c = rng.uniform(0.2, 0.8);
  weights.lambda_m = 1.0 - weights.lambda_c;
  const auto kind = rng.bernoulli(0.5) ? ImageEncoderKind::mlp : ImageEncoderKind::small_cnn;
  const EncoderConfig enc = tiny_encoder(rng, l, kind);

  ParamStore store;
  init_pretrain_model(store, enc, heads, rng);
  jitter_biases(store, rng);
  if (store.contains("mt.s_c")) {
    store.set("mt.s_c", Tensor::scalar(rng.uniform(-0.5, 0.5)));
    store.set("mt.s_m", Tensor::scalar(rng.uniform(-0.5, 0.5)));
  }
  const Tensor x = rand_tensor({b, l}, rng);
  Tensor mask({b, l});
  Tensor corrupted = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (rng.bernoulli(0.3)) {
      mask[i] = 1.0;
      corrupted[i] = rng.uniform(-1.0, 1.0);
    }
  }
  const Tensor images = rand_tensor({b, 6, 6, 1}, rng, 0.0, 1.0);
  return grad_check_params(
             store, Mode::train,
             [&](Forward& fw) {
               return pretrain_objective(fw, enc, heads, weights, x, corrupted, mask, &images);
             },
             kNetEps, kCoordsPerParam, seed)
      .max_rel_error;
}

std::vector<Case> build_cases() {
  std::vector<Case> cases;
  auto add_case = [&](std::string name, std::function<double(Rng&, std::uint64_t)> f) {
    cases.push_back({std::move(name), std::move(f)});
  };

  // -- primitives
  add_case("elementwise", [](Rng& rng, std::uint64_t seed) {
    const std::size_t b = pick(rng, 1, 4), n = pick(rng, 1, 5);
    const Tensor row = rand_tensor({n}, rng);
    const Tensor c = Tensor::scalar(rng.uniform(-1.0, 1.0));
    return check_fn(
        [&](Tape& t, const Var& v) {
          Var num = mul(add(v, t.constant(row)), sub(v, t.constant(c)));
          Var den = add_scalar(exp(scale(v, 0.5)), 1.0);
          return wsum(t, neg(div(num, den)), seed);
        },
        rand_tensor({b, n}, rng));
  });
  add_case("broadcast_operand", [](Rng& rng, std::uint64_t seed) {
    const std::size_t b = pick(rng, 2, 4), n = pick(rng, 1, 5);
    const Tensor big = rand_tensor({b, n}, rng);
    return check_fn(
        [&](Tape& t, const Var& v) {
          Var row = slice(v, 0, 0, n);
          Var one = slice(v, 0, n, 1);
          Var x = t.constant(big);
          Var y = add(mul(x, row), div(x, add_scalar(exp(row), 1.0)));
          y = add(sub(y, row), mul(x, one));
          return wsum(t, add(y, sub(one, x)), seed);
        },
        rand_tensor({n + 1}, rng));
  });
  add_case("matmul", [](Rng& rng, std::uint64_t seed) {
    const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 5), n = pick(rng, 1, 4);
    const Tensor a = rand_tensor({m, k}, rng), w = rand_tensor({k, n}, rng);
    const double e1 = check_fn(
        [&](Tape& t, const Var& v) { return wsum(t, matmul(v, t.constant(w)), seed); }, a);
    const double e2 = check_fn(
        [&](Tape& t, const Var& v) { return wsum(t, matmul(t.constant(a), v), seed); }, w);
    return std::max(e1, e2);
  });
  add_case("conv1d", [](Rng& rng, std::uint64_t seed) {
    const std::size_t b = pick(rng, 1, 3), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
    const std::size_t k = 2 * pick(rng, 0, 2) + 1, stride = pick(rng, 1, 2), pad = pick(rng, 0, 2);
    const std::size_t s = std::max<std::size_t>(k, pick(rng, 3, 8));
    const Tensor x = rand_tensor({b, cin, s}, rng), w = rand_tensor({cout, cin, k}, rng);
    const Tensor bias = rand_tensor({cout}, rng);
    const double e1 = check_fn(
        [&](Tape& t, const Var& v) {
          Var wv = t.constant(w), bv = t.constant(bias);
          return wsum(t, conv1d(v, wv, &bv, stride, pad), seed);
        },
        x);
    const double e2 = check_fn(
        [&](Tape& t, const Var& v) { return wsum(t, conv1d(t.constant(x), v, nullptr, stride, pad), seed); },
        w);
    const double e3 = check_fn(
        [&](Tape& t, const Var& v) {
          Var wv = t.constant(w);
          return wsum(t, conv1d(t.constant(x), wv, &v, stride, pad), seed);
        },
        bias);
    return std::max({e1, e2, e3});
  });
  add_case("conv2d", [](Rng& rng, std::uint64_t seed) {
    const std::size_t b = pick(rng, 1, 2), cin = pick(rng, 1, 2), cout = pick(rng, 1, 3);
    const std::size_t k = 2 * pick(rng, 0, 1) + 1, stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    const std::size_t h = pick(rng, 3, 5), wd = pick(rng, 3, 5);
    const Tensor x = rand_tensor({b, cin, h, wd}, rng), w = rand_tensor({cout, cin, k, k}, rng);
    const Tensor bias = rand_tensor({cout}, rng);
    const double e1 = check_fn(
        [&](Tape& t, const Var& v) {
          Var wv = t.constant(w), bv = t.constant(bias);
          return wsum(t, conv2d(v, wv, &bv, stride, pad), seed);
        },
        x);
    const double e2 = check_fn(
        [&](Tape& t, const Var& v) {
          Var bv = t.constant(bias);
          return wsum(t, conv2d(t.constant(x), v, &bv, stride, pad), seed);
        },
        w);
    const double e3 = check_fn(
        [&](Tape& t, const Var& v) {
          Var wv = t.constant(w);
          return wsum(t, conv2d(t.constant(x), wv, &v, stride, pad), seed);
        },
        bias);
    return std::max({e1, e2, e3});
  });
  add_case("reductions", [](Rng& rng, std::uint64_t seed) {
    const std::size_t a = pick(rng, 1, 3), b = pick(rng, 1, 4), c = pick(rng, 1, 4);
    return check_fn(
        [&](Tape& t, const Var& v) {
          Var y = add(wsum(t, sum(v, 0), seed), wsum(t, sum(v, 2), seed + 1));
          y = add(y, wsum(t, mean(v, 1), seed + 2));
          y = add(y, add(scale(sum(v), 0.3), scale(mean(v), -0.7)));
          y = add(y, wsum(t, max(v, 1), seed + 3));
          return add(y, wsum(t, max(v, 2), seed + 4));
        },
        rand_tensor({a, b, c}, rng));
  });
  add_case("unary", [](Rng& rng, std::uint64_t seed) {
    const std::size_t n = pick(rng, 2, 10);
    return check_fn(
        [&](Tape& t, const Var& v) {
          Var y = add(wsum(t, relu(v), seed), wsum(t, sigmoid(v), seed + 1));
          y = add(y, wsum(t, tanh(v), seed + 2));
          y = add(y, wsum(t, exp(v), seed + 3));
          y = add(y, wsum(t, log(add_scalar(mul(v, v), 0.5)), seed + 4));
          y = add(y, wsum(t, abs(v), seed + 5));
          y = add(y, wsum(t, sqrt(add_scalar(exp(v), 0.1)), seed + 6));
          y = add(y, wsum(t, power(add_scalar(exp(v), 0.1), 1.7), seed + 7));
          return add(y, wsum(t, clamp(v, -0.5, 0.7), seed + 8));
        },
        rand_tensor({n}, rng, -2.0, 2.0));
  });
  add_case("softmax_family", [](Rng& rng, std::uint64_t seed) {
    const std::size_t b = pick(rng, 1, 4), n = pick(rng, 2, 5);
    return check_fn(
        [&](Tape& t, const Var& v) {
          Var y = add(wsum(t, softmax(v, 1), seed), wsum(t, softmax(v, 0), seed + 1));
          y = add(y, wsum(t, log_softmax(v, 1), seed + 2));
          y = add(y, wsum(t, log_softmax(v, 0), seed + 3));
          y = add(y, wsum(t, log_sum_exp(v, 1), seed + 4));
          return add(y, wsum(t, l2_normalize(v, 1), seed + 5));
        },
        rand_tensor({b, n}, rng, -2.0, 2.0));
  });
  add_case("shape_ops", [](Rng& rng, std::uint64_t seed) {
    const std::size_t a = pick(rng, 1, 3), b = pick(rng, 2, 4), c = pick(rng, 1, 3);
    return check_fn(
        [&](Tape& t, const Var& v) {
          Var tr = transpose(v, {2, 0, 1});
          Var r = reshape(v, {a * b, c});
          Var s = slice(v, 1, 1, b - 1);
          const Var parts[] = {v, s};
          Var cat = concat(parts, 1);
          Var y = add(wsum(t, tr, seed), wsum(t, r, seed + 1));
          return add(y, wsum(t, mul(cat, cat), seed + 2));
        },
        rand_tensor({a, b, c}, rng));
  });

  // -- layers
  add_case("dense", [](Rng& rng, std::uint64_t seed) {
    const std::size_t b = pick(rng, 1, 4), in = pick(rng, 1, 6), out = pick(rng, 1, 5);
    ParamStore store;
    init_dense(store, "fc", in, out, rng);
    return check_layer(store, rand_tensor({b, in}, rng),
                       [](Forward& fw, const Var& x) { return dense(fw, "fc", x); }, seed, kEps);
  });
  add_case("conv1d_layer", [](Rng& rng, std::uint64_t seed) {
    const std::size_t b = pick(rng, 1, 3), cin = pick(rng, 1, 3), cout = pick(rng, 1, 4);
    const std::size_t k = 2 * pick(rng, 0, 2) + 1, stride = pick(rng, 1, 2), pad = k / 2;
    ParamStore store;
    init_conv1d(store, "conv", cin, cout, k, rng);
    return check_layer(
        store, rand_tensor({b, cin, pick(rng, 3, 9)}, rng),
        [&](Forward& fw, const Var& x) { return conv1d_layer(fw, "conv", x, stride, pad); }, seed,
        kEps);
  });
  add_case("conv2d_layer", [](Rng& rng, std::uint64_t seed) {
    const std::size_t b = pick(rng, 1, 2), cin = pick(rng, 1, 2), cout = pick(rng, 1, 3);
    const std::size_t stride = pick(rng, 1, 2);
    ParamStore store;
    init_conv2d(store, "conv", cin, cout, 3, rng);
    return check_layer(
        store, rand_tensor({b, cin, pick(rng, 3, 6), pick(rng, 3, 6)}, rng),
        [&](Forward& fw, const Var& x) { return conv2d_layer(fw, "conv", x, stride, 1); }, seed,
        kEps);
  });
  add_case("batchnorm1d", [](Rng& rng, std::uint64_t seed) {
    const std::size_t b = pick(rng, 2, 5), c = pick(rng, 1, 4), s = pick(rng, 1, 5);
    ParamStore store;
    init_batchnorm(store, "bn", c);
    store.set("bn.gamma", rand_tensor({c}, rng, 0.5, 1.5));
    store.set("bn.beta", rand_tensor({c}, rng));
    return check_layer(store, rand_tensor({b, c, s}, rng, -2.0, 2.0),
                       [](Forward& fw, const Var& x) { return batchnorm1d(fw, "bn", x); }, seed,
                       kEps);
  });
  add_case("cbam1d", [](Rng& rng, std::uint64_t seed) {
    CbamConfig cfg;
    cfg.reduction = pick(rng, 1, 2);
    cfg.channels = cfg.reduction * pick(rng, 1, 3);
    cfg.spatial_kernel = 2 * pick(rng, 0, 3) + 1;
    ParamStore store;
    init_cbam(store, "cbam", cfg, rng);
    return check_layer(
        store, rand_tensor({pick(rng, 1, 3), cfg.channels, pick(rng, 2, 6)}, rng),
        [&](Forward& fw, const Var& x) { return cbam1d(fw, "cbam", cfg, x); }, seed);
  });
  for (const bool projecting : {false, true}) {
    add_case(projecting ? "residual_block_projection" : "residual_block_identity",
             [projecting](Rng& rng, std::uint64_t seed) {
               ResidualBlockConfig cfg;
               cfg.in_channels = 2 * pick(rng, 1, 2);
               cfg.out_channels = projecting ? 2 * cfg.in_channels : cfg.in_channels;
               cfg.stride = projecting ? 2 : 1;
               cfg.kernel = 3;
               cfg.reduction = 2;
               cfg.spatial_kernel = 3;
               ParamStore store;
               init_residual_block(store, "blk", cfg, rng);
               return check_layer(
                   store, rand_tensor({pick(rng, 2, 4), cfg.in_channels, pick(rng, 3, 6)}, rng),
                   [&](Forward& fw, const Var& x) { return residual_block(fw, "blk", cfg, x); },
                   seed, kNetEps, kCoordsPerParam);
             });
  }
  add_case("tabular_encoder", [](Rng& rng, std::uint64_t seed) {
    const std::size_t l = pick(rng, 3, 8);
    const EncoderConfig enc = tiny_encoder(rng, l, ImageEncoderKind::mlp);
    ParamStore store;
    init_tabular_encoder(store, enc.tabular, rng);
    return check_layer(
        store, rand_tensor({pick(rng, 2, 4), l}, rng),
        [&](Forward& fw, const Var& x) { return tabular_encode(fw, enc.tabular, x); }, seed,
        kNetEps, kCoordsPerParam);
  });
  for (const auto kind : {ImageEncoderKind::mlp, ImageEncoderKind::small_cnn}) {
    add_case("image_encoder_" + std::string(to_string(kind)), [kind](Rng& rng, std::uint64_t seed) {
      const EncoderConfig enc = tiny_encoder(rng, 4, kind);
      ParamStore store;
      init_image_encoder(store, enc.image, rng);
      return check_layer(
          store, rand_tensor({pick(rng, 1, 3), 6, 6, 1}, rng, 0.0, 1.0),
          [&](Forward& fw, const Var& x) { return image_encode(fw, enc.image, x); }, seed,
          kNetEps, kCoordsPerParam);
    });
  }
  add_case("projection_head", [](Rng& rng, std::uint64_t seed) {
    const std::size_t d = pick(rng, 2, 6), p = pick(rng, 2, 5);
    ParamStore store;
    init_projection_head(store, "proj", d, p, rng);
    return check_layer(store, rand_tensor({pick(rng, 1, 4), d}, rng),
                       [](Forward& fw, const Var& x) { return project(fw, "proj", x); }, seed);
  });
  add_case("mask_estimator", [](Rng& rng, std::uint64_t seed) {
    const std::size_t d = pick(rng, 2, 6), l = pick(rng, 2, 6);
    ParamStore store;
    init_mask_estimator(store, "mask_head", d, l, rng);
    return check_layer(store, rand_tensor({pick(rng, 1, 4), d}, rng),
                       [](Forward& fw, const Var& x) { return estimate_mask(fw, "mask_head", x); },
                       seed, kEps);
  });
  add_case("predictor_head", [](Rng& rng, std::uint64_t seed) {
    TaskSpec task;
    task.kind = rng.bernoulli(0.5) ? TaskKind::regression : TaskKind::classification;
    task.outputs = pick(rng, task.kind == TaskKind::regression ? 1 : 2, 4);
    const std::size_t d = pick(rng, 2, 6);
    ParamStore store;
    init_predictor_head(store, "head", d, task, rng);
    return check_layer(
        store, rand_tensor({pick(rng, 1, 4), d}, rng),
        [&](Forward& fw, const Var& x) { return predictor_head(fw, "head", x, task); }, seed);
  });

  // -- pretext losses
  add_case("mask_loss", [](Rng& rng, std::uint64_t) {
    const std::size_t b = pick(rng, 1, 4), l = pick(rng, 1, 6);
    Tensor m({b, l});
    for (auto& v : m.mutable_data()) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
    return check_fn(
        [&](Tape& t, const Var& v) { return mask_loss(t.constant(m), sigmoid(v)); },
        rand_tensor({b, l}, rng, -2.0, 2.0));
  });
  add_case("reconstruction_loss", [](Rng& rng, std::uint64_t) {
    const std::size_t b = pick(rng, 1, 4), l = pick(rng, 1, 6);
    const Tensor x = rand_tensor({b, l}, rng);
    return check_fn(
        [&](Tape& t, const Var& v) { return reconstruction_loss(t.constant(x), v); },
        rand_tensor({b, l}, rng));
  });

  // -- contrastive losses; both embeddings come from one input via slices
  add_case("info_nce", [](Rng& rng, std::uint64_t) {
    const std::size_t b = pick(rng, 2, 6), p = pick(rng, 2, 5);
    const double tau = rng.uniform(0.1, 1.0);
    return check_fn(
        [&](Tape&, const Var& v) {
          return info_nce(l2_normalize(slice(v, 0, 0, b), 1), l2_normalize(slice(v, 0, b, b), 1),
                          tau);
        },
        rand_tensor({2 * b, p}, rng));
  });
  add_case("clip_loss", [](Rng& rng, std::uint64_t) {
    const std::size_t b = pick(rng, 2, 6), p = pick(rng, 2, 5);
    const Tensor z = rand_tensor({2 * b, p}, rng);
    const Tensor s = Tensor::from({rng.uniform(0.0, 2.5)});
    const double e1 = check_fn(
        [&](Tape& t, const Var& v) {
          return clip_loss(l2_normalize(slice(v, 0, 0, b), 1), l2_normalize(slice(v, 0, b, b), 1),
                           t.constant(s));
        },
        z);
    const double e2 = check_fn(
        [&](Tape& t, const Var& v) {
          Var zv = t.constant(z);
          return clip_loss(l2_normalize(slice(zv, 0, 0, b), 1),
                           l2_normalize(slice(zv, 0, b, b), 1), v);
        },
        s);
    return std::max(e1, e2);
  });
  add_case("simsiam_loss", [](Rng& rng, std::uint64_t) {
    // Targets z are held fixed: the loss stops their gradient.
    const std::size_t b = pick(rng, 2, 5), p = pick(rng, 2, 5);
    const Tensor z = rand_tensor({2 * b, p}, rng);
    const double e1 = check_fn(
        [&](Tape& t, const Var& v) {
          Var zv = t.constant(z);
          return simsiam_loss(slice(v, 0, 0, b), slice(v, 0, b, b), slice(zv, 0, 0, b),
                              slice(zv, 0, b, b));
        },
        rand_tensor({2 * b, p}, rng));
    // ... and receive exactly zero gradient.
    Tape tape;
    Var pv = tape.constant(rand_tensor({2 * b, p}, rng));
    Var zv = tape.parameter("z", z);
    Var loss = simsiam_loss(slice(pv, 0, 0, b), slice(pv, 0, b, b), slice(zv, 0, 0, b),
                            slice(zv, 0, b, b));
    double leak = 0.0;
    const GradMap grads = tape.backward(loss);
    for (double g : grads.at("z").data()) leak = std::max(leak, std::abs(g));
    return std::max(e1, leak);
  });
  add_case("barlow_twins_loss", [](Rng& rng, std::uint64_t) {
    const std::size_t b = pick(rng, 4, 8), d = pick(rng, 2, 5);
    const double lambda = rng.uniform(1e-3, 1e-1);
    return check_fn(
        [&](Tape&, const Var& v) {
          return barlow_twins_loss(slice(v, 0, 0, b), slice(v, 0, b, b), lambda);
        },
        rand_tensor({2 * b, d}, rng, -2.0, 2.0));
  });

  // -- downstream losses
  add_case("mse", [](Rng& rng, std::uint64_t) { return regression_case(DownstreamLossKind::mse, rng); });
  add_case("l1", [](Rng& rng, std::uint64_t) { return regression_case(DownstreamLossKind::l1, rng); });
  add_case("huber", [](Rng& rng, std::uint64_t) { return regression_case(DownstreamLossKind::huber, rng); });
  add_case("ce", [](Rng& rng, std::uint64_t) { return classification_case(DownstreamLossKind::ce, rng); });
  add_case("balanced_ce", [](Rng& rng, std::uint64_t) {
    return classification_case(DownstreamLossKind::balanced_ce, rng);
  });
  add_case("focal", [](Rng& rng, std::uint64_t) { return classification_case(DownstreamLossKind::focal, rng); });

  // -- multi-task combination and the full pre-training objectives
  add_case("multitask_fixed", [](Rng& rng, std::uint64_t) {
    MultiTaskWeights w;
    w.mode = MultiTaskMode::fixed;
    w.lambda_c = rng.uniform(0.1, 1.0);
    w.lambda_m = rng.uniform(0.1, 1.0);
    return check_fn(
        [&](Tape&, const Var& v) { return combine_multitask(slice(v, 0, 0, 1), slice(v, 0, 1, 1), w); },
        rand_tensor({2}, rng, 0.0, 3.0));
  });
  add_case("multitask_uncertainty", [](Rng& rng, std::uint64_t) {
    MultiTaskWeights w;
    w.mode = MultiTaskMode::uncertainty;
    return check_fn(
        [&](Tape&, const Var& v) {
          Var s_c = slice(v, 0, 2, 1), s_m = slice(v, 0, 3, 1);
          return combine_multitask(exp(slice(v, 0, 0, 1)), exp(slice(v, 0, 1, 1)), w, &s_c, &s_m);
        },
        rand_tensor({4}, rng, -1.5, 1.5));
  });
  add_case("objective_mtm_mask", [](Rng& rng, std::uint64_t seed) {
    return objective_case(PretrainStrategy::mtm_mask, rng, seed);
  });
  add_case("objective_mtm_feature", [](Rng& rng, std::uint64_t seed) {
    return objective_case(PretrainStrategy::mtm_feature, rng, seed);
  });
  add_case("objective_mmcl", [](Rng& rng, std::uint64_t seed) {
    return objective_case(PretrainStrategy::mmcl, rng, seed);
  });
  add_case("objective_mt_cmtm", [](Rng& rng, std::uint64_t seed) {
    return objective_case(PretrainStrategy::mt_cmtm, rng, seed);
  });
  return cases;
}

}  // namespace

std::vector<std::string> grad_suite_cases() {
  std::vector<std::string> names;
  for (const auto& c : build_cases()) names.push_back(c.name);
  return names;
}

std::vector<GradCaseResult> run_grad_suite(std::uint64_t seed, std::size_t variants,
                                           const std::string& filter) {
  if (variants == 0) throw std::invalid_argument("run_grad_suite: variants must be >= 1");
  PrecisionScope precision(Precision::f64);
  const auto cases = build_cases();
  std::vector<GradCaseResult> results;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const Case& c = cases[ci];
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    GradCaseResult r{c.name, 0.0, variants};
    for (std::size_t v = 0; v < variants; ++v) {
      const std::uint64_t s = derive_seed(seed, {ci, v});
      Rng rng(s);
      r.max_rel_error = std::max(r.max_rel_error, c.run(rng, s));
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace mtcmtm
