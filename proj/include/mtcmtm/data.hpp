#pragma once

// Tabular + image data: schema, CSV loading, train-only imputation and
// standardization, PGM images, cropping, splits, and the paired dataset with
// per-sample access auditing.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mtcmtm/model.hpp"
#include "mtcmtm/rng.hpp"
#include "mtcmtm/tensor.hpp"

namespace mtcmtm {

/// Malformed or inconsistent input data (maps to CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ColumnKind { numeric, categorical, target_numeric, target_class, image_path };

std::string_view to_string(ColumnKind k);

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  std::vector<std::string> categories;  // categorical and target_class only
};

struct TableSchema {
  std::vector<ColumnSpec> columns;

  /// Exactly one target group (>= 1 target_numeric, or one target_class),
  /// >= 1 input feature, at most one image_path column.
  void validate() const;
  std::vector<std::size_t> feature_columns() const;
  std::vector<std::size_t> target_columns() const;
  /// Index of the image column or npos.
  std::size_t image_column() const;
  bool has_images() const { return image_column() != npos; }
  TaskSpec task() const;
  std::size_t index_of(std::string_view name) const;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

/// YAML document: `columns:` list of {name, kind, categories?}.
TableSchema parse_schema(const std::string& yaml_text);
TableSchema load_schema(const std::filesystem::path& path);
std::string schema_to_yaml(const TableSchema& schema);

/// Raw typed table. Numeric cells are doubles, categorical cells are their
/// schema code; a missing cell is NaN. Image paths are kept as text.
struct RawTable {
  TableSchema schema;
  std::size_t rows = 0;
  std::vector<std::vector<double>> columns;  // one per schema column (image column empty)
  std::vector<std::string> image_paths;

  std::size_t missing_count() const;
};

RawTable load_tabular(const std::filesystem::path& csv_path, const TableSchema& schema);
RawTable parse_tabular(std::string_view csv_text, const TableSchema& schema);
/// Writes in schema column order with shortest round-trip number formatting.
std::string format_tabular(const RawTable& table);

// ---------------------------------------------------------------------------
// Access auditing

/// Counts reads of per-sample data outside an allowed id set. Installed on a
/// dataset while pre-training or fitting statistics.
class AccessAudit {
 public:
  void allow(std::span<const std::size_t> ids);
  void record(std::size_t id, std::string_view what);

  std::size_t reads() const;
  std::size_t forbidden() const;
  std::vector<std::string> violations() const;  // first few, for messages

 private:
  mutable std::mutex mu_;
  std::set<std::size_t> allowed_;
  std::size_t reads_ = 0;
  std::size_t forbidden_ = 0;
  std::vector<std::string> samples_;
};

// ---------------------------------------------------------------------------
// Statistics fitted on the training split

struct ImputeStats {
  std::vector<double> fill;  // per schema column; NaN for non-feature columns
};

struct StandardizeStats {
  std::vector<double> mean;  // per feature
  std::vector<double> std;
  std::vector<double> target_mean;  // regression targets only
  std::vector<double> target_std;
};

/// Numeric features: train mean. Categorical: train mode, ties broken by the
/// lexicographically smallest category. Throws if a column has no observed
/// value among the training rows.
ImputeStats fit_impute(const RawTable& table, std::span<const std::size_t> train_ids,
                       AccessAudit* audit = nullptr);
RawTable apply_impute(const RawTable& table, const ImputeStats& stats);

/// Population mean/std over the training rows; std < 1e-9 is treated as 1.
StandardizeStats fit_standardize(const RawTable& imputed, std::span<const std::size_t> train_ids,
                                 AccessAudit* audit = nullptr);
/// [rows, L] standardized features.
Tensor apply_standardize(const RawTable& imputed, const StandardizeStats& stats);

// ---------------------------------------------------------------------------
// Images

/// Binary "P5" PGM with maxval 255 -> [H, W, 1] with values byte / 255.
Tensor load_image_pgm(const std::filesystem::path& path);
Tensor parse_pgm(std::string_view bytes);
/// Quantizes [H, W, 1] in [0, 1] to bytes.
std::string format_pgm(const Tensor& image);
void save_image_pgm(const std::filesystem::path& path, const Tensor& image);

enum class CropMode { center, random };
std::string_view to_string(CropMode m);
CropMode parse_crop_mode(std::string_view s);

/// image [H, W, C] -> [h, w, C]. Random mode draws offsets from rng.
Tensor crop(const Tensor& image, CropMode mode, std::size_t h, std::size_t w, Rng& rng);

// ---------------------------------------------------------------------------
// Splits

enum class SplitTag : std::uint8_t { train, val, test };

struct SplitSpec {
  enum class Kind { ratios, kfold };
  Kind kind = Kind::ratios;
  double train = 0.64;
  double val = 0.16;
  double test = 0.20;
  std::size_t k = 5;
  std::size_t fold = 0;
};

/// Deterministic shuffle by seed, then partition. kfold marks fold `fold` as
/// validation and the rest as train (no test split).
std::vector<SplitTag> split(std::size_t n, const SplitSpec& spec, std::uint64_t seed);
std::vector<std::size_t> ids_with(std::span<const SplitTag> tags, SplitTag tag);

// ---------------------------------------------------------------------------

struct DatasetOptions {
  SplitSpec split;
  std::uint64_t split_seed = 0;
  CropMode crop_mode = CropMode::center;
  std::size_t crop_height = 0;  // 0: full image
  std::size_t crop_width = 0;
};

/// Fully preprocessed dataset. Per-sample accessors report every row they
/// touch to the installed AccessAudit, if any.
class PairedDataset {
 public:
  /// Fits imputation/standardization on the training split only.
  static PairedDataset build(const RawTable& raw, const std::filesystem::path& image_root,
                             const DatasetOptions& options, AccessAudit* fit_audit = nullptr);
  /// Loads `schema` and the CSV next to it.
  static PairedDataset load(const std::filesystem::path& csv_path,
                            const std::filesystem::path& schema_path,
                            const DatasetOptions& options, AccessAudit* fit_audit = nullptr);

  std::size_t size() const { return tags_.size(); }
  std::size_t features() const { return features_; }
  const TaskSpec& task() const { return task_; }
  bool has_images() const { return !image_files_.empty(); }
  const std::vector<SplitTag>& tags() const { return tags_; }
  std::vector<std::size_t> ids(SplitTag tag) const { return ids_with(tags_, tag); }
  const StandardizeStats& stats() const { return stats_; }
  const ImputeStats& impute_stats() const { return impute_; }
  const TableSchema& schema() const { return schema_; }
  /// Crop output size.
  std::size_t image_height() const { return crop_h_; }
  std::size_t image_width() const { return crop_w_; }
  std::size_t image_channels() const { return 1; }

  void set_audit(AccessAudit* audit) const { audit_ = audit; }
  AccessAudit* audit() const { return audit_; }

  /// [B, L]
  Tensor features(std::span<const std::size_t> ids) const;
  /// Regression targets (standardized), [B, T].
  Tensor targets(std::span<const std::size_t> ids) const;
  /// Class ids.
  std::vector<std::size_t> labels(std::span<const std::size_t> ids) const;
  /// Cropped images [B, h, w, 1]. Random crops use a stream seeded by
  /// (crop_seed, sample id).
  Tensor images(std::span<const std::size_t> ids, std::uint64_t crop_seed = 0) const;

 private:
  void touch(std::size_t id, std::string_view what) const;
  const Tensor& raw_image(std::size_t id) const;

  TableSchema schema_;
  TaskSpec task_;
  std::size_t features_ = 0;
  std::size_t targets_ = 0;
  Tensor x_;                        // [n, L]
  std::vector<double> y_;           // [n, T] standardized, regression
  std::vector<std::size_t> labels_;
  std::vector<SplitTag> tags_;
  ImputeStats impute_;
  StandardizeStats stats_;
  std::vector<std::filesystem::path> image_files_;
  CropMode crop_mode_ = CropMode::center;
  std::size_t crop_h_ = 0, crop_w_ = 0;

  struct ImageCache {
    std::mutex mu;
    std::vector<std::unique_ptr<Tensor>> images;
  };
  std::shared_ptr<ImageCache> cache_;
  mutable AccessAudit* audit_ = nullptr;
};

}  // namespace mtcmtm
