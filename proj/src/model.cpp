#include "mtcmtm/model.hpp"

#include <cmath>
#include <sstream>

namespace mtcmtm {

namespace {
std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }
}  // namespace

std::vector<ResidualBlockConfig> TabularEncoderConfig::blocks() const {
  std::vector<ResidualBlockConfig> out;
  std::size_t channels = stem_channels;
  for (std::size_t i = 0; i < n_blocks; ++i) {
    ResidualBlockConfig b;
    b.in_channels = channels;
    b.stride = (i % 2 == 1) ? 2 : 1;
    b.out_channels = (i % 2 == 1) ? channels * 2 : channels;
    b.kernel = kernel;
    b.reduction = reduction;
    b.spatial_kernel = spatial_kernel;
    channels = b.out_channels;
    out.push_back(b);
  }
  return out;
}

std::size_t TabularEncoderConfig::feature_dim() const {
  std::size_t c = stem_channels;
  for (std::size_t i = 1; i < n_blocks; i += 2) c *= 2;
  return c;
}

void TabularEncoderConfig::validate() const {
  if (input_len < 1) throw std::invalid_argument("tabular input_len must be >= 1");
  if (stem_channels < 1 || stem_length < 1) throw std::invalid_argument("stem must be non-empty");
  if (n_blocks < 1 || n_blocks > 8) throw std::invalid_argument("n_blocks must be in [1, 8]");
  if (kernel % 2 == 0) throw std::invalid_argument("conv kernel must be odd");
  for (const auto& b : blocks()) b.cbam().validate();
}

void ImageEncoderConfig::validate() const {
  if (height < 1 || width < 1 || channels < 1) throw std::invalid_argument("image shape must be positive");
  if (feature_dim < 1 || hidden < 1) throw std::invalid_argument("image widths must be positive");
}

void EncoderConfig::validate() const {
  tabular.validate();
  image.validate();
  if (projection_dim < 2) throw std::invalid_argument("projection_dim must be >= 2");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
}

std::string EncoderConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "tab:L=" << tabular.input_len << ",c0=" << tabular.stem_channels
     << ",s0=" << tabular.stem_length << ",blocks=" << tabular.n_blocks << ",k=" << tabular.kernel
     << ",r=" << tabular.reduction << ",sk=" << tabular.spatial_kernel << ";img:"
     << to_string(image.kind) << "," << image.height << "x" << image.width << "x" << image.channels
     << ",h=" << image.hidden << ",c=" << image.cnn_channels1 << "/" << image.cnn_channels2
     << ",d=" << image.feature_dim << ";P=" << projection_dim << ";tau=" << temperature;
  return os.str();
}

std::string_view to_string(ImageEncoderKind k) {
  return k == ImageEncoderKind::mlp ? "mlp" : "small_cnn";
}

ImageEncoderKind parse_image_encoder_kind(std::string_view s) {
  if (s == "mlp") return ImageEncoderKind::mlp;
  if (s == "small_cnn") return ImageEncoderKind::small_cnn;
  throw std::invalid_argument("unknown image encoder kind '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------

void init_tabular_encoder(ParamStore& store, const TabularEncoderConfig& cfg, Rng& rng,
                          const std::string& prefix) {
  cfg.validate();
  init_dense(store, prefix + ".stem", cfg.input_len, cfg.stem_channels * cfg.stem_length, rng);
  const auto blocks = cfg.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    init_residual_block(store, prefix + ".block" + std::to_string(i), blocks[i], rng);
  }
}

Var tabular_encode(Forward& fw, const TabularEncoderConfig& cfg, const Var& x,
                   const std::string& prefix) {
  if (x.shape().size() != 2 || x.shape()[1] != cfg.input_len) {
    throw ShapeError("tabular_encode: expected [batch, " + std::to_string(cfg.input_len) +
                     "], got " + shape_string(x.shape()));
  }
  const std::size_t batch = x.shape()[0];
  Var h = dense(fw, prefix + ".stem", x);
  h = reshape(h, {batch, cfg.stem_channels, cfg.stem_length});
  const auto blocks = cfg.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    h = residual_block(fw, prefix + ".block" + std::to_string(i), blocks[i], h);
  }
  return mean(h, 2);
}

void init_image_encoder(ParamStore& store, const ImageEncoderConfig& cfg, Rng& rng,
                        const std::string& prefix) {
  cfg.validate();
  if (cfg.kind == ImageEncoderKind::mlp) {
    init_dense(store, prefix + ".fc1", cfg.height * cfg.width * cfg.channels, cfg.hidden, rng);
    init_dense(store, prefix + ".fc2", cfg.hidden, cfg.feature_dim, rng);
  } else {
    init_conv2d(store, prefix + ".conv1", cfg.channels, cfg.cnn_channels1, 3, rng);
    init_conv2d(store, prefix + ".conv2", cfg.cnn_channels1, cfg.cnn_channels2, 3, rng);
    init_dense(store, prefix + ".fc", cfg.cnn_channels2, cfg.feature_dim, rng);
  }
}

Var image_encode(Forward& fw, const ImageEncoderConfig& cfg, const Var& x,
                 const std::string& prefix) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != cfg.height || s[2] != cfg.width || s[3] != cfg.channels) {
    throw ShapeError("image_encode: expected [batch, " + std::to_string(cfg.height) + ", " +
                     std::to_string(cfg.width) + ", " + std::to_string(cfg.channels) +
                     "], got " + shape_string(s));
  }
  const std::size_t batch = s[0];
  if (cfg.kind == ImageEncoderKind::mlp) {
    Var flat = reshape(x, {batch, cfg.height * cfg.width * cfg.channels});
    return dense(fw, prefix + ".fc2", relu(dense(fw, prefix + ".fc1", flat)));
  }
  Var h = transpose(x, {0, 3, 1, 2});
  h = relu(conv2d_layer(fw, prefix + ".conv1", h, 2, 1));
  h = relu(conv2d_layer(fw, prefix + ".conv2", h, 2, 1));
  const Shape& hs = h.shape();
  h = mean(reshape(h, {batch, hs[1], hs[2] * hs[3]}), 2);
  return dense(fw, prefix + ".fc", h);
}

void init_projection_head(ParamStore& store, const std::string& prefix, std::size_t in_dim,
                          std::size_t proj_dim, Rng& rng) {
  init_dense(store, prefix + ".fc1", in_dim, in_dim, rng);
  init_dense(store, prefix + ".fc2", in_dim, proj_dim, rng);
}

Var project(Forward& fw, const std::string& prefix, const Var& v) {
  Var h = dense(fw, prefix + ".fc2", relu(dense(fw, prefix + ".fc1", v)));
  return l2_normalize(h, 1, 1e-12);
}

void init_mask_estimator(ParamStore& store, const std::string& prefix, std::size_t feature_dim,
                         std::size_t input_len, Rng& rng) {
  init_dense(store, prefix, feature_dim, input_len, rng);
}

Var estimate_mask(Forward& fw, const std::string& prefix, const Var& v) {
  return sigmoid(dense(fw, prefix, v));
}

void init_predictor_head(ParamStore& store, const std::string& prefix, std::size_t feature_dim,
                         const TaskSpec& task, Rng& rng) {
  if (task.outputs < 1) throw std::invalid_argument("predictor head needs >= 1 output");
  if (task.kind == TaskKind::classification && task.outputs < 2) {
    throw std::invalid_argument("classification needs >= 2 classes");
  }
  init_dense(store, prefix, feature_dim, task.outputs, rng);
}

Var predictor_head(Forward& fw, const std::string& prefix, const Var& v, const TaskSpec& task) {
  Var out = dense(fw, prefix, v);
  if (out.shape()[1] != task.outputs) {
    throw ShapeError("predictor_head: head has " + std::to_string(out.shape()[1]) +
                     " outputs, task needs " + std::to_string(task.outputs));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(PretrainStrategy s) {
  switch (s) {
    case PretrainStrategy::mtm_mask: return "mtm_mask";
    case PretrainStrategy::mtm_feature: return "mtm_feature";
    case PretrainStrategy::mmcl: return "mmcl";
    case PretrainStrategy::mt_cmtm: return "mt_cmtm";
  }
  return "?";
}

PretrainStrategy parse_pretrain_strategy(std::string_view s) {
  if (s == "mtm_mask") return PretrainStrategy::mtm_mask;
  if (s == "mtm_feature") return PretrainStrategy::mtm_feature;
  if (s == "mmcl") return PretrainStrategy::mmcl;
  if (s == "mt_cmtm") return PretrainStrategy::mt_cmtm;
  throw std::invalid_argument("unknown pretrain strategy '" + std::string(s) + "'");
}

std::string_view to_string(ContrastiveKind k) {
  switch (k) {
    case ContrastiveKind::info_nce: return "info_nce";
    case ContrastiveKind::clip: return "clip";
    case ContrastiveKind::simsiam: return "simsiam";
    case ContrastiveKind::barlow_twins: return "barlow_twins";
  }
  return "?";
}

ContrastiveKind parse_contrastive_kind(std::string_view s) {
  if (s == "info_nce") return ContrastiveKind::info_nce;
  if (s == "clip") return ContrastiveKind::clip;
  if (s == "simsiam") return ContrastiveKind::simsiam;
  if (s == "barlow_twins") return ContrastiveKind::barlow_twins;
  throw std::invalid_argument("unknown contrastive loss '" + std::string(s) + "'");
}

std::string_view to_string(MultiTaskMode m) {
  return m == MultiTaskMode::fixed ? "fixed" : "uncertainty";
}

MultiTaskMode parse_multitask_mode(std::string_view s) {
  if (s == "fixed") return MultiTaskMode::fixed;
  if (s == "uncertainty") return MultiTaskMode::uncertainty;
  throw std::invalid_argument("unknown multitask mode '" + std::string(s) + "'");
}

bool PretrainHeads::uses_mask() const {
  return strategy == PretrainStrategy::mtm_mask || strategy == PretrainStrategy::mt_cmtm;
}

bool PretrainHeads::uses_reconstruction() const {
  return strategy == PretrainStrategy::mtm_feature;
}

bool PretrainHeads::uses_contrastive() const {
  return strategy == PretrainStrategy::mmcl || strategy == PretrainStrategy::mt_cmtm;
}

void init_pretrain_model(ParamStore& store, const EncoderConfig& cfg, const PretrainHeads& heads,
                         Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.tabular.feature_dim();
  const std::size_t di = cfg.image.feature_dim;
  const std::size_t p = cfg.projection_dim;
  init_tabular_encoder(store, cfg.tabular, rng);
  if (heads.uses_mask()) init_mask_estimator(store, "mask_head", d, cfg.tabular.input_len, rng);
  if (heads.uses_reconstruction()) init_dense(store, "recon_head", d, cfg.tabular.input_len, rng);
  if (heads.uses_contrastive()) {
    init_image_encoder(store, cfg.image, rng);
    switch (heads.contrastive) {
      case ContrastiveKind::info_nce:
      case ContrastiveKind::clip:
        init_projection_head(store, "proj_t", d, p, rng);
        init_projection_head(store, "proj_i", di, p, rng);
        if (heads.contrastive == ContrastiveKind::clip) {
          store.add("clip.log_scale", Tensor::scalar(std::log(1.0 / cfg.temperature)));
        }
        break;
      case ContrastiveKind::simsiam:
        init_dense(store, "ss.proj_t", d, p, rng);
        init_dense(store, "ss.proj_i", di, p, rng);
        init_dense(store, "ss.pred.fc1", p, p, rng);
        init_dense(store, "ss.pred.fc2", p, p, rng);
        break;
      case ContrastiveKind::barlow_twins:
        init_dense(store, "bt.proj_t", d, p, rng);
        init_dense(store, "bt.proj_i", di, p, rng);
        break;
    }
  }
  if (heads.strategy == PretrainStrategy::mt_cmtm && heads.multitask == MultiTaskMode::uncertainty) {
    store.add("mt.s_c", Tensor::scalar(0.0));
    store.add("mt.s_m", Tensor::scalar(0.0));
  }
}

void init_downstream_model(ParamStore& store, const EncoderConfig& cfg, const TaskSpec& task,
                           Rng& rng) {
  init_tabular_encoder(store, cfg.tabular, rng);
  init_predictor_head(store, "head", cfg.tabular.feature_dim(), task, rng);
}

// ---------------------------------------------------------------------------

ModelStats dense_stats(std::size_t in, std::size_t out) {
  return {in * out + out, 2 * in * out};
}

ModelStats conv1d_stats(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t out_len) {
  return {cin * cout * kernel + cout, 2 * cin * cout * kernel * out_len};
}

ModelStats conv2d_stats(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t out_h,
                        std::size_t out_w) {
  return {cin * cout * kernel * kernel + cout, 2 * cin * cout * kernel * kernel * out_h * out_w};
}

ModelStats batchnorm_stats(std::size_t channels) { return {2 * channels, 0}; }

ModelStats tabular_encoder_stats(const TabularEncoderConfig& cfg) {
  ModelStats s = dense_stats(cfg.input_len, cfg.stem_channels * cfg.stem_length);
  std::size_t length = cfg.stem_length;
  for (const auto& b : cfg.blocks()) {
    const std::size_t out_len = ceil_div(length, b.stride);
    s += conv1d_stats(b.in_channels, b.out_channels, b.kernel, out_len);
    s += batchnorm_stats(b.out_channels);
    s += conv1d_stats(b.out_channels, b.out_channels, b.kernel, out_len);
    s += batchnorm_stats(b.out_channels);
    // CBAM: the shared MLP runs on the avg- and the max-pooled descriptor.
    const auto c = b.cbam();
    ModelStats mlp = dense_stats(c.channels, c.hidden());
    mlp += dense_stats(c.hidden(), c.channels);
    s.param_count += mlp.param_count;
    s.flops_per_forward += 2 * mlp.flops_per_forward;
    s += conv1d_stats(2, 1, c.spatial_kernel, out_len);
    if (b.projects()) s += conv1d_stats(b.in_channels, b.out_channels, 1, out_len);
    length = out_len;
  }
  return s;
}

ModelStats image_encoder_stats(const ImageEncoderConfig& cfg) {
  if (cfg.kind == ImageEncoderKind::mlp) {
    ModelStats s = dense_stats(cfg.height * cfg.width * cfg.channels, cfg.hidden);
    s += dense_stats(cfg.hidden, cfg.feature_dim);
    return s;
  }
  const std::size_t h1 = ceil_div(cfg.height, 2), w1 = ceil_div(cfg.width, 2);
  const std::size_t h2 = ceil_div(h1, 2), w2 = ceil_div(w1, 2);
  ModelStats s = conv2d_stats(cfg.channels, cfg.cnn_channels1, 3, h1, w1);
  s += conv2d_stats(cfg.cnn_channels1, cfg.cnn_channels2, 3, h2, w2);
  s += dense_stats(cfg.cnn_channels2, cfg.feature_dim);
  return s;
}

ModelStats downstream_stats(const EncoderConfig& cfg, const TaskSpec& task) {
  ModelStats s = tabular_encoder_stats(cfg.tabular);
  s += dense_stats(cfg.tabular.feature_dim(), task.outputs);
  return s;
}

ModelStats pretrain_stats(const EncoderConfig& cfg, const PretrainHeads& heads) {
  const std::size_t d = cfg.tabular.feature_dim();
  const std::size_t di = cfg.image.feature_dim;
  const std::size_t p = cfg.projection_dim;
  ModelStats s = tabular_encoder_stats(cfg.tabular);
  if (heads.uses_mask()) s += dense_stats(d, cfg.tabular.input_len);
  if (heads.uses_reconstruction()) s += dense_stats(d, cfg.tabular.input_len);
  if (heads.uses_contrastive()) {
    s += image_encoder_stats(cfg.image);
    switch (heads.contrastive) {
      case ContrastiveKind::info_nce:
      case ContrastiveKind::clip:
        s += dense_stats(d, d);
        s += dense_stats(d, p);
        s += dense_stats(di, di);
        s += dense_stats(di, p);
        if (heads.contrastive == ContrastiveKind::clip) s.param_count += 1;
        break;
      case ContrastiveKind::simsiam:
        s += dense_stats(d, p);
        s += dense_stats(di, p);
        // predictor runs on both branches
        for (int branch = 0; branch < 2; ++branch) {
          ModelStats pred = dense_stats(p, p);
          pred += dense_stats(p, p);
          s.flops_per_forward += pred.flops_per_forward;
          if (branch == 0) s.param_count += pred.param_count;
        }
        break;
      case ContrastiveKind::barlow_twins:
        s += dense_stats(d, p);
        s += dense_stats(di, p);
        break;
    }
  }
  if (heads.strategy == PretrainStrategy::mt_cmtm && heads.multitask == MultiTaskMode::uncertainty) {
    s.param_count += 2;
  }
  return s;
}

}  // namespace mtcmtm
