#pragma once

// Synthetic paired tabular/image data with a known generative map.
//
// Features: x0..x8 numeric, c0 (3 levels), c1 (4), c2 (5). A latent
// u in R^4 is a fixed sparse linear map of {x0, x1, x2, x4, x5, c0}; the
// remaining six features are distractors. The image renders u (brightness
// from u1, blob radius from u3, blob position from u2/u4, blob count from
// c0). Regression targets are quadratic/interaction terms of u; the class is
// the sign quadrant of (u1, u2). Columns x3, x4, x7 carry MCAR holes.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mtcmtm/data.hpp"

namespace mtcmtm {

inline constexpr std::size_t kSyntheticFeatures = 12;
inline constexpr std::size_t kSyntheticLatent = 4;
inline constexpr std::size_t kSyntheticTargets = 4;
inline constexpr std::size_t kSyntheticClasses = 4;

struct SyntheticConfig {
  std::size_t image_size = 32;
  double missing_rate = 0.05;
  double pixel_noise = 0.02;
  double target_noise = 0.05;
};

using Latent = std::array<double, kSyntheticLatent>;

/// features: 12 clean values, categorical entries as level codes.
Latent synthetic_latent(const std::array<double, kSyntheticFeatures>& features);
/// Noise-free regression targets.
std::array<double, kSyntheticTargets> synthetic_targets(const Latent& u);
std::size_t synthetic_class(const Latent& u);
/// [size, size, 1], quantized to 8-bit levels.
Tensor render_synthetic_image(const Latent& u, std::size_t blob_count, std::size_t size,
                              double pixel_noise, Rng& rng);

struct SyntheticData {
  RawTable table;  // laid out by synthetic_full_schema()
  std::vector<std::array<double, kSyntheticFeatures>> clean;
  std::vector<Latent> latent;
  std::vector<std::array<double, kSyntheticTargets>> targets;  // with noise
  std::vector<std::size_t> labels;
  std::vector<Tensor> images;
};

/// Column layout of data.csv. It holds both target groups, so it is a
/// file layout rather than a loadable schema.
TableSchema synthetic_full_schema();
/// Schema selecting the regression targets or the class label.
TableSchema synthetic_schema(TaskKind task);

SyntheticData generate_synthetic_data(std::size_t n, std::uint64_t seed,
                                      const SyntheticConfig& cfg = {});

/// Writes data.csv, schema_regression.yaml, schema_classification.yaml and
/// images/*.pgm under `out_dir`. Requires n >= 50.
void generate_synthetic(std::size_t n, std::uint64_t seed, const std::filesystem::path& out_dir,
                        const SyntheticConfig& cfg = {});

}  // namespace mtcmtm
