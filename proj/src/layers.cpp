#include "mtcmtm/layers.hpp"

#include <cmath>

namespace mtcmtm {

std::size_t fan_in_of(const Shape& shape) {
  if (shape.empty()) return 1;
  if (shape.size() <= 2) return shape[0];
  std::size_t n = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
  return n;
}

Tensor init_tensor(InitScheme scheme, Shape shape, std::size_t fan_in, Rng& rng) {
  switch (scheme) {
    case InitScheme::zeros:
      return Tensor::zeros(std::move(shape));
    case InitScheme::ones:
      return Tensor::ones(std::move(shape));
    case InitScheme::kaiming_uniform: {
      if (fan_in == 0) throw std::invalid_argument("kaiming init needs fan_in > 0");
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      Tensor t(std::move(shape));
      for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
      t.quantize();
      return t;
    }
  }
  throw std::logic_error("unhandled init scheme");
}

ParamStore init_params(InitScheme scheme, const std::vector<std::pair<std::string, Shape>>& shapes,
                       std::uint64_t seed) {
  Rng rng(seed);
  ParamStore store;
  for (const auto& [name, shape] : shapes) {
    store.add(name, init_tensor(scheme, shape, fan_in_of(shape), rng));
  }
  return store;
}

void init_dense(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                Rng& rng) {
  store.add(prefix + ".w", init_tensor(InitScheme::kaiming_uniform, {in, out}, in, rng));
  store.add(prefix + ".b", Tensor::zeros({out}));
}

Var dense(Forward& fw, const std::string& prefix, const Var& x) {
  return add(matmul(x, fw.param(prefix + ".w")), fw.param(prefix + ".b"));
}

void init_conv1d(ParamStore& store, const std::string& prefix, std::size_t cin, std::size_t cout,
                 std::size_t kernel, Rng& rng) {
  store.add(prefix + ".w",
            init_tensor(InitScheme::kaiming_uniform, {cout, cin, kernel}, cin * kernel, rng));
  store.add(prefix + ".b", Tensor::zeros({cout}));
}

Var conv1d_layer(Forward& fw, const std::string& prefix, const Var& x, std::size_t stride,
                 std::size_t pad) {
  Var b = fw.param(prefix + ".b");
  return conv1d(x, fw.param(prefix + ".w"), &b, stride, pad);
}

void init_conv2d(ParamStore& store, const std::string& prefix, std::size_t cin, std::size_t cout,
                 std::size_t kernel, Rng& rng) {
  store.add(prefix + ".w", init_tensor(InitScheme::kaiming_uniform, {cout, cin, kernel, kernel},
                                       cin * kernel * kernel, rng));
  store.add(prefix + ".b", Tensor::zeros({cout}));
}

Var conv2d_layer(Forward& fw, const std::string& prefix, const Var& x, std::size_t stride,
                 std::size_t pad) {
  Var b = fw.param(prefix + ".b");
  return conv2d(x, fw.param(prefix + ".w"), &b, stride, pad);
}

void init_batchnorm(ParamStore& store, const std::string& prefix, std::size_t channels) {
  store.add(prefix + ".gamma", Tensor::ones({channels}));
  store.add(prefix + ".beta", Tensor::zeros({channels}));
  store.add(prefix + ".running_mean", Tensor::zeros({channels}), false);
  store.add(prefix + ".running_var", Tensor::ones({channels}), false);
}

Var batchnorm1d(Forward& fw, const std::string& prefix, const Var& x) {
  const Shape& s = x.shape();
  Var gamma = fw.param(prefix + ".gamma");
  Var beta = fw.param(prefix + ".beta");
  if (s.size() != 3 || s[1] != gamma.shape()[0]) {
    throw ShapeError("batchnorm1d '" + prefix + "': input " + shape_string(s) + " vs " +
                     std::to_string(gamma.shape()[0]) + " channels");
  }
  const std::size_t batch = s[0], channels = s[1], length = s[2];
  Var flat = reshape(transpose(x, {0, 2, 1}), {batch * length, channels});

  Var normed;
  if (fw.training()) {
    if (batch < 2) {
      throw std::invalid_argument("batchnorm1d '" + prefix + "': train mode needs batch >= 2");
    }
    Var mu = mean(flat, 0);
    Var centered = sub(flat, mu);
    Var var = mean(mul(centered, centered), 0);
    normed = mul(centered, power(add_scalar(var, kBatchNormEps), -0.5));
    if (fw.update_running_stats()) {
      const double n = static_cast<double>(batch * length);
      const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
      Tensor rm = fw.store().get(prefix + ".running_mean");
      Tensor rv = fw.store().get(prefix + ".running_var");
      for (std::size_t c = 0; c < channels; ++c) {
        rm[c] = (1.0 - kBatchNormMomentum) * rm[c] + kBatchNormMomentum * mu.value()[c];
        rv[c] = (1.0 - kBatchNormMomentum) * rv[c] + kBatchNormMomentum * var.value()[c] * unbias;
      }
      fw.store().set(prefix + ".running_mean", std::move(rm));
      fw.store().set(prefix + ".running_var", std::move(rv));
    }
  } else {
    const Tensor& rm = fw.store().get(prefix + ".running_mean");
    const Tensor& rv = fw.store().get(prefix + ".running_var");
    Tensor inv(Shape{channels});
    for (std::size_t c = 0; c < channels; ++c) inv[c] = 1.0 / std::sqrt(rv[c] + kBatchNormEps);
    normed = mul(sub(flat, fw.input(rm)), fw.input(std::move(inv)));
  }
  Var y = add(mul(normed, gamma), beta);
  return transpose(reshape(y, {batch, length, channels}), {0, 2, 1});
}

void CbamConfig::validate() const {
  if (channels == 0 || reduction == 0) throw std::invalid_argument("cbam: channels and r must be positive");
  if (channels % reduction != 0) {
    throw std::invalid_argument("cbam: channels " + std::to_string(channels) +
                                " not divisible by reduction " + std::to_string(reduction));
  }
  if (spatial_kernel % 2 == 0) {
    throw std::invalid_argument("cbam: spatial kernel must be odd, got " +
                                std::to_string(spatial_kernel));
  }
}

void init_cbam(ParamStore& store, const std::string& prefix, const CbamConfig& cfg, Rng& rng) {
  cfg.validate();
  init_dense(store, prefix + ".mlp1", cfg.channels, cfg.hidden(), rng);
  init_dense(store, prefix + ".mlp2", cfg.hidden(), cfg.channels, rng);
  init_conv1d(store, prefix + ".spatial", 2, 1, cfg.spatial_kernel, rng);
}

Var cbam1d(Forward& fw, const std::string& prefix, const CbamConfig& cfg, const Var& x,
           CbamTrace* trace) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] != cfg.channels) {
    throw ShapeError("cbam1d '" + prefix + "': input " + shape_string(s) + " vs " +
                     std::to_string(cfg.channels) + " channels");
  }
  const std::size_t batch = s[0], length = s[2];

  auto mlp = [&](const Var& v) {
    return dense(fw, prefix + ".mlp2", relu(dense(fw, prefix + ".mlp1", v)));
  };
  Var channel_gate = sigmoid(add(mlp(mean(x, 2)), mlp(max(x, 2))));  // [B, C]
  // [B,C,S] -> [S,B,C] so the [B,C] gate broadcasts over the leading axis.
  Var refined = transpose(mul(transpose(x, {2, 0, 1}), channel_gate), {1, 2, 0});

  std::vector<Var> pooled{reshape(mean(refined, 1), {batch, 1, length}),
                          reshape(max(refined, 1), {batch, 1, length})};
  Var spatial = conv1d_layer(fw, prefix + ".spatial", concat(pooled, 1), 1,
                             (cfg.spatial_kernel - 1) / 2);
  Var spatial_gate = reshape(sigmoid(spatial), {batch, length});  // [B, S]
  Var out = transpose(mul(transpose(refined, {1, 0, 2}), spatial_gate), {1, 0, 2});

  if (trace) {
    trace->channel_attention = channel_gate.value();
    trace->spatial_attention = spatial_gate.value();
  }
  return out;
}

void init_residual_block(ParamStore& store, const std::string& prefix,
                         const ResidualBlockConfig& cfg, Rng& rng) {
  if (cfg.kernel % 2 == 0) throw std::invalid_argument("residual block kernel must be odd");
  init_conv1d(store, prefix + ".conv1", cfg.in_channels, cfg.out_channels, cfg.kernel, rng);
  init_batchnorm(store, prefix + ".bn1", cfg.out_channels);
  init_conv1d(store, prefix + ".conv2", cfg.out_channels, cfg.out_channels, cfg.kernel, rng);
  init_batchnorm(store, prefix + ".bn2", cfg.out_channels);
  init_cbam(store, prefix + ".cbam", cfg.cbam(), rng);
  if (cfg.projects()) {
    init_conv1d(store, prefix + ".shortcut", cfg.in_channels, cfg.out_channels, 1, rng);
  }
}

Var residual_block(Forward& fw, const std::string& prefix, const ResidualBlockConfig& cfg,
                   const Var& x) {
  if (x.shape().size() != 3 || x.shape()[1] != cfg.in_channels) {
    throw ShapeError("residual block '" + prefix + "': input " + shape_string(x.shape()) +
                     " vs " + std::to_string(cfg.in_channels) + " channels");
  }
  const std::size_t pad = (cfg.kernel - 1) / 2;
  Var h = conv1d_layer(fw, prefix + ".conv1", x, cfg.stride, pad);
  h = relu(batchnorm1d(fw, prefix + ".bn1", h));
  h = conv1d_layer(fw, prefix + ".conv2", h, 1, pad);
  h = batchnorm1d(fw, prefix + ".bn2", h);
  h = cbam1d(fw, prefix + ".cbam", cfg.cbam(), h);
  Var shortcut = cfg.projects() ? conv1d_layer(fw, prefix + ".shortcut", x, cfg.stride, 0) : x;
  return relu(add(h, shortcut));
}

}  // namespace mtcmtm
