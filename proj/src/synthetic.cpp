#include "mtcmtm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace mtcmtm {

namespace {

constexpr std::array<std::size_t, 3> kMissingColumns{3, 4, 7};
constexpr std::array<std::size_t, 3> kLevels{3, 4, 5};

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Blob offsets relative to the anchor position, in pixels at size 32.
constexpr std::array<std::array<double, 2>, 3> kBlobOffsets{{{0.0, 0.0}, {9.0, 5.0}, {-9.0, -5.0}}};

const std::vector<std::string>& category_names(std::size_t which) {
  static const std::vector<std::vector<std::string>> names{
      {"a", "b", "c"}, {"p", "q", "r", "s"}, {"v", "w", "x", "y", "z"}};
  return names.at(which);
}

std::array<double, kSyntheticFeatures> draw_features(Rng& rng) {
  std::array<double, kSyntheticFeatures> f{};
  f[0] = rng.uniform(-2.0, 2.0);
  f[1] = rng.normal();
  f[2] = rng.uniform(0.0, 3.0);
  f[3] = rng.normal(1.0, 2.0);
  f[4] = rng.normal();
  f[5] = rng.uniform(-1.0, 1.0);
  f[6] = rng.normal(0.0, 0.5);
  f[7] = rng.uniform(0.0, 10.0);
  f[8] = rng.normal(-1.0, 1.0);
  for (std::size_t k = 0; k < 3; ++k) f[9 + k] = static_cast<double>(rng.uniform_int(kLevels[k]));
  return f;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string image_name(std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "images/img_%05zu.pgm", i);
  return buf;
}

}  // namespace

Latent synthetic_latent(const std::array<double, kSyntheticFeatures>& f) {
  // Inputs are scaled to roughly unit variance before mixing.
  const double x0 = f[0] / 1.1547, x1 = f[1], x2 = (f[2] - 1.5) / 0.866, x4 = f[4],
               x5 = f[5] / 0.57735, c0 = f[9] - 1.0;
  return {0.8 * x0 + 0.5 * x4, 0.7 * x1 - 0.6 * x5, 0.9 * x2 + 0.4 * c0,
          0.6 * x4 - 0.5 * x0 + 0.5 * c0};
}

std::array<double, kSyntheticTargets> synthetic_targets(const Latent& u) {
  return {u[0] + 0.5 * u[1] * u[1], u[0] * u[1] + 0.3 * u[2], 0.5 * u[2] * u[2] - u[3],
          u[1] * u[3] + 0.5 * u[0]};
}

std::size_t synthetic_class(const Latent& u) {
  return 2 * static_cast<std::size_t>(u[0] > 0.0) + static_cast<std::size_t>(u[1] > 0.0);
}

Tensor render_synthetic_image(const Latent& u, std::size_t blob_count, std::size_t size,
                              double pixel_noise, Rng& rng) {
  const double s = static_cast<double>(size) / 32.0;
  const double background = 0.1 + 0.5 * logistic(u[0]);
  const double amplitude = 0.2 + 0.2 * logistic(u[0]);
  const double radius = (2.5 + 3.5 * logistic(u[2])) * s;
  const double cx = (16.0 + 8.0 * std::tanh(u[1])) * s;
  const double cy = (16.0 + 8.0 * std::tanh(u[3])) * s;
  Tensor img(Shape{size, size, 1});
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      double v = background;
      for (std::size_t b = 0; b < blob_count; ++b) {
        const double dx = static_cast<double>(c) - (cx + kBlobOffsets[b][0] * s);
        const double dy = static_cast<double>(r) - (cy + kBlobOffsets[b][1] * s);
        v += amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
      }
      v += rng.normal(0.0, pixel_noise);
      img[r * size + c] = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    }
  }
  return img;
}

TableSchema synthetic_full_schema() {
  TableSchema s;
  for (std::size_t j = 0; j < 9; ++j) s.columns.push_back({"x" + std::to_string(j), ColumnKind::numeric, {}});
  for (std::size_t k = 0; k < 3; ++k) {
    s.columns.push_back({"c" + std::to_string(k), ColumnKind::categorical, category_names(k)});
  }
  for (std::size_t t = 0; t < kSyntheticTargets; ++t) {
    s.columns.push_back({"y" + std::to_string(t), ColumnKind::target_numeric, {}});
  }
  s.columns.push_back({"label", ColumnKind::target_class, {"q0", "q1", "q2", "q3"}});
  s.columns.push_back({"image", ColumnKind::image_path, {}});
  return s;
}

TableSchema synthetic_schema(TaskKind task) {
  TableSchema full = synthetic_full_schema();
  TableSchema s;
  for (auto& c : full.columns) {
    const bool is_y = c.kind == ColumnKind::target_numeric;
    if (c.kind == ColumnKind::target_class) {
      if (task != TaskKind::classification) continue;
    } else if (is_y && task != TaskKind::regression) {
      continue;
    }
    s.columns.push_back(std::move(c));
  }
  s.validate();
  return s;
}

SyntheticData generate_synthetic_data(std::size_t n, std::uint64_t seed, const SyntheticConfig& cfg) {
  if (n < 50) throw std::invalid_argument("generate_synthetic: need n >= 50");
  if (cfg.image_size < 8) throw std::invalid_argument("generate_synthetic: image_size must be >= 8");
  SyntheticData d;
  // One CSV carries both target groups and serves both schemas.
  const TableSchema full = synthetic_full_schema();
  d.table.schema = full;
  d.table.rows = n;
  d.table.columns.assign(full.columns.size(), {});

  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {i}));
    const auto f = draw_features(rng);
    const Latent u = synthetic_latent(f);
    auto y = synthetic_targets(u);
    for (double& v : y) v += rng.normal(0.0, cfg.target_noise);
    const std::size_t label = synthetic_class(u);
    Tensor img = render_synthetic_image(u, static_cast<std::size_t>(f[9]) + 1, cfg.image_size,
                                        cfg.pixel_noise, rng);

    for (std::size_t j = 0; j < kSyntheticFeatures; ++j) {
      double v = f[j];
      if (std::find(kMissingColumns.begin(), kMissingColumns.end(), j) != kMissingColumns.end() &&
          rng.bernoulli(cfg.missing_rate)) {
        v = std::numeric_limits<double>::quiet_NaN();
      }
      d.table.columns[j].push_back(v);
    }
    for (std::size_t t = 0; t < kSyntheticTargets; ++t) {
      d.table.columns[kSyntheticFeatures + t].push_back(y[t]);
    }
    d.table.columns[kSyntheticFeatures + kSyntheticTargets].push_back(static_cast<double>(label));
    d.table.image_paths.push_back(image_name(i));

    d.clean.push_back(f);
    d.latent.push_back(u);
    d.targets.push_back(y);
    d.labels.push_back(label);
    d.images.push_back(std::move(img));
  }
  return d;
}

void generate_synthetic(std::size_t n, std::uint64_t seed, const std::filesystem::path& out_dir,
                        const SyntheticConfig& cfg) {
  const SyntheticData d = generate_synthetic_data(n, seed, cfg);
  std::filesystem::create_directories(out_dir / "images");
  write_text(out_dir / "data.csv", format_tabular(d.table));
  write_text(out_dir / "schema_regression.yaml", schema_to_yaml(synthetic_schema(TaskKind::regression)));
  write_text(out_dir / "schema_classification.yaml",
             schema_to_yaml(synthetic_schema(TaskKind::classification)));
  for (std::size_t i = 0; i < n; ++i) save_image_pgm(out_dir / d.table.image_paths[i], d.images[i]);
}

}  // namespace mtcmtm
