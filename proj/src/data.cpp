#include "mtcmtm/data.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace mtcmtm {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

bool is_feature(ColumnKind k) { return k == ColumnKind::numeric || k == ColumnKind::categorical; }
bool is_target(ColumnKind k) {
  return k == ColumnKind::target_numeric || k == ColumnKind::target_class;
}
bool has_categories(ColumnKind k) {
  return k == ColumnKind::categorical || k == ColumnKind::target_class;
}

ColumnKind parse_column_kind(const std::string& s) {
  for (auto k : {ColumnKind::numeric, ColumnKind::categorical, ColumnKind::target_numeric,
                 ColumnKind::target_class, ColumnKind::image_path}) {
    if (to_string(k) == s) return k;
  }
  throw DataError("unknown column kind '" + s + "'");
}

std::string at_line(const YAML::Node& node) {
  return " (line " + std::to_string(node.Mark().line + 1) + ")";
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw DataError("unterminated quote in CSV line");
  out.push_back(std::move(cur));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

std::string_view to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::numeric: return "numeric";
    case ColumnKind::categorical: return "categorical";
    case ColumnKind::target_numeric: return "target_numeric";
    case ColumnKind::target_class: return "target_class";
    case ColumnKind::image_path: return "image_path";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Schema

void TableSchema::validate() const {
  std::set<std::string> names;
  std::size_t n_features = 0, n_numeric_targets = 0, n_class_targets = 0, n_images = 0;
  for (const auto& c : columns) {
    if (c.name.empty()) throw DataError("schema: column with empty name");
    if (!names.insert(c.name).second) throw DataError("schema: duplicate column '" + c.name + "'");
    if (has_categories(c.kind)) {
      if (c.categories.size() < (c.kind == ColumnKind::target_class ? 2u : 1u)) {
        throw DataError("schema: column '" + c.name + "' needs a category list");
      }
      std::set<std::string> unique(c.categories.begin(), c.categories.end());
      if (unique.size() != c.categories.size()) {
        throw DataError("schema: column '" + c.name + "' repeats a category");
      }
    } else if (!c.categories.empty()) {
      throw DataError("schema: column '" + c.name + "' of kind " + std::string(to_string(c.kind)) +
                      " cannot have categories");
    }
    n_features += is_feature(c.kind);
    n_numeric_targets += c.kind == ColumnKind::target_numeric;
    n_class_targets += c.kind == ColumnKind::target_class;
    n_images += c.kind == ColumnKind::image_path;
  }
  if (n_features == 0) throw DataError("schema: no input feature columns");
  if (n_images > 1) throw DataError("schema: more than one image_path column");
  const bool regression = n_numeric_targets > 0 && n_class_targets == 0;
  const bool classification = n_numeric_targets == 0 && n_class_targets == 1;
  if (!regression && !classification) {
    throw DataError("schema: need either >= 1 target_numeric columns or exactly one target_class");
  }
}

std::vector<std::size_t> TableSchema::feature_columns() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (is_feature(columns[i].kind)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> TableSchema::target_columns() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (is_target(columns[i].kind)) out.push_back(i);
  }
  return out;
}

std::size_t TableSchema::image_column() const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].kind == ColumnKind::image_path) return i;
  }
  return npos;
}

TaskSpec TableSchema::task() const {
  const auto t = target_columns();
  if (t.empty()) throw DataError("schema has no target");
  const auto& first = columns[t[0]];
  if (first.kind == ColumnKind::target_class) {
    return {TaskKind::classification, first.categories.size()};
  }
  return {TaskKind::regression, t.size()};
}

std::size_t TableSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].name == name) return i;
  }
  return npos;
}

TableSchema parse_schema(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw DataError(std::string("schema: ") + e.what());
  }
  if (!root.IsMap()) throw DataError("schema: top level must be a mapping");
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    if (key != "columns") throw DataError("schema: unknown key '" + key + "'" + at_line(kv.first));
  }
  const YAML::Node cols = root["columns"];
  if (!cols || !cols.IsSequence()) throw DataError("schema: 'columns' must be a list");
  TableSchema schema;
  for (const auto& node : cols) {
    if (!node.IsMap()) throw DataError("schema: column entry must be a mapping" + at_line(node));
    ColumnSpec spec;
    bool have_name = false, have_kind = false;
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      try {
        if (key == "name") {
          spec.name = kv.second.as<std::string>();
          have_name = true;
        } else if (key == "kind") {
          spec.kind = parse_column_kind(kv.second.as<std::string>());
          have_kind = true;
        } else if (key == "categories") {
          spec.categories = kv.second.as<std::vector<std::string>>();
        } else {
          throw DataError("unknown key '" + key + "'");
        }
      } catch (const YAML::Exception& e) {
        throw DataError("schema: bad value for '" + key + "'" + at_line(kv.second) + ": " +
                        e.what());
      } catch (const DataError& e) {
        throw DataError(std::string("schema: ") + e.what() + at_line(kv.first));
      }
    }
    if (!have_name || !have_kind) {
      throw DataError("schema: column needs 'name' and 'kind'" + at_line(node));
    }
    schema.columns.push_back(std::move(spec));
  }
  schema.validate();
  return schema;
}

TableSchema load_schema(const std::filesystem::path& path) { return parse_schema(read_file(path)); }

std::string schema_to_yaml(const TableSchema& schema) {
  YAML::Emitter out;
  out << YAML::BeginMap << YAML::Key << "columns" << YAML::Value << YAML::BeginSeq;
  for (const auto& c : schema.columns) {
    out << YAML::BeginMap << YAML::Key << "name" << YAML::Value << c.name << YAML::Key << "kind"
        << YAML::Value << std::string(to_string(c.kind));
    if (!c.categories.empty()) {
      out << YAML::Key << "categories" << YAML::Value << YAML::Flow << c.categories;
    }
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

// ---------------------------------------------------------------------------
// CSV

std::size_t RawTable::missing_count() const {
  std::size_t n = 0;
  for (const auto& col : columns) {
    for (double v : col) n += std::isnan(v);
  }
  return n;
}

RawTable parse_tabular(std::string_view csv_text, const TableSchema& schema) {
  schema.validate();
  std::vector<std::string_view> lines;
  for (std::size_t pos = 0; pos < csv_text.size();) {
    std::size_t end = csv_text.find('\n', pos);
    if (end == std::string_view::npos) end = csv_text.size();
    std::string_view line = csv_text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    pos = end + 1;
  }
  if (lines.empty()) throw DataError("CSV is empty");

  const auto header = split_csv_line(lines[0]);
  std::vector<std::size_t> source(schema.columns.size());
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    auto it = std::find_if(header.begin(), header.end(),
                           [&](const std::string& h) { return trim(h) == schema.columns[c].name; });
    if (it == header.end()) throw DataError("CSV is missing column '" + schema.columns[c].name + "'");
    source[c] = static_cast<std::size_t>(it - header.begin());
  }

  RawTable t;
  t.schema = schema;
  t.rows = lines.size() - 1;
  t.columns.assign(schema.columns.size(), {});
  const std::size_t image_col = schema.image_column();
  std::map<std::string, std::set<std::string>> unknown;
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    if (c != image_col) t.columns[c].reserve(t.rows);
  }

  for (std::size_t r = 0; r < t.rows; ++r) {
    const auto cells = split_csv_line(lines[r + 1]);
    if (cells.size() != header.size()) {
      throw DataError("CSV line " + std::to_string(r + 2) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
      const ColumnSpec& spec = schema.columns[c];
      const std::string cell = trim(cells[source[c]]);
      const std::string where = "CSV line " + std::to_string(r + 2) + ", column '" + spec.name + "'";
      if (spec.kind == ColumnKind::image_path) {
        if (cell.empty()) throw DataError(where + ": missing image path");
        t.image_paths.push_back(cell);
        continue;
      }
      if (cell.empty()) {
        if (is_target(spec.kind)) throw DataError(where + ": missing target value");
        t.columns[c].push_back(kMissing);
        continue;
      }
      if (has_categories(spec.kind)) {
        auto it = std::find(spec.categories.begin(), spec.categories.end(), cell);
        if (it == spec.categories.end()) {
          unknown[spec.name].insert(cell);
          t.columns[c].push_back(kMissing);
        } else {
          t.columns[c].push_back(static_cast<double>(it - spec.categories.begin()));
        }
        continue;
      }
      double v = 0.0;
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      if (*first == '+') ++first;
      auto res = std::from_chars(first, last, v);
      if (res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
        throw DataError(where + ": cannot parse '" + cell + "' as a number");
      }
      t.columns[c].push_back(v);
    }
  }
  if (!unknown.empty()) {
    std::string msg = "unknown category values:";
    for (const auto& [col, vals] : unknown) {
      msg += " " + col + "={";
      bool first = true;
      for (const auto& v : vals) {
        msg += (first ? "" : ",") + v;
        first = false;
      }
      msg += "}";
    }
    throw DataError(msg);
  }
  return t;
}

RawTable load_tabular(const std::filesystem::path& csv_path, const TableSchema& schema) {
  return parse_tabular(read_file(csv_path), schema);
}

std::string format_tabular(const RawTable& table) {
  const auto& cols = table.schema.columns;
  std::string out;
  for (std::size_t c = 0; c < cols.size(); ++c) out += (c ? "," : "") + quote_if_needed(cols[c].name);
  out += "\n";
  for (std::size_t r = 0; r < table.rows; ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (c) out += ",";
      if (cols[c].kind == ColumnKind::image_path) {
        out += quote_if_needed(table.image_paths[r]);
        continue;
      }
      const double v = table.columns[c][r];
      if (std::isnan(v)) continue;
      if (has_categories(cols[c].kind)) {
        out += quote_if_needed(cols[c].categories.at(static_cast<std::size_t>(v)));
      } else {
        out += format_number(v);
      }
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Audit

void AccessAudit::allow(std::span<const std::size_t> ids) {
  std::lock_guard lock(mu_);
  allowed_ = std::set<std::size_t>(ids.begin(), ids.end());
}

void AccessAudit::record(std::size_t id, std::string_view what) {
  std::lock_guard lock(mu_);
  ++reads_;
  if (allowed_.count(id)) return;
  ++forbidden_;
  if (samples_.size() < 8) samples_.push_back(std::string(what) + " of sample " + std::to_string(id));
}

std::size_t AccessAudit::reads() const {
  std::lock_guard lock(mu_);
  return reads_;
}

std::size_t AccessAudit::forbidden() const {
  std::lock_guard lock(mu_);
  return forbidden_;
}

std::vector<std::string> AccessAudit::violations() const {
  std::lock_guard lock(mu_);
  return samples_;
}

// ---------------------------------------------------------------------------
// Imputation and standardization

ImputeStats fit_impute(const RawTable& table, std::span<const std::size_t> train_ids,
                       AccessAudit* audit) {
  if (train_ids.empty()) throw DataError("fit_impute: empty training split");
  if (audit) {
    for (std::size_t id : train_ids) audit->record(id, "impute fit");
  }
  const auto& cols = table.schema.columns;
  ImputeStats stats;
  stats.fill.assign(cols.size(), kMissing);
  for (std::size_t c : table.schema.feature_columns()) {
    const auto& col = table.columns[c];
    if (cols[c].kind == ColumnKind::numeric) {
      double total = 0.0;
      std::size_t seen = 0;
      for (std::size_t id : train_ids) {
        if (std::isnan(col.at(id))) continue;
        total += col[id];
        ++seen;
      }
      if (seen == 0) throw DataError("column '" + cols[c].name + "' is entirely missing in train");
      stats.fill[c] = total / static_cast<double>(seen);
    } else {
      std::vector<std::size_t> counts(cols[c].categories.size(), 0);
      std::size_t seen = 0;
      for (std::size_t id : train_ids) {
        if (std::isnan(col.at(id))) continue;
        ++counts[static_cast<std::size_t>(col[id])];
        ++seen;
      }
      if (seen == 0) throw DataError("column '" + cols[c].name + "' is entirely missing in train");
      std::size_t best = 0;
      for (std::size_t k = 1; k < counts.size(); ++k) {
        if (counts[k] > counts[best] ||
            (counts[k] == counts[best] && cols[c].categories[k] < cols[c].categories[best])) {
          best = k;
        }
      }
      stats.fill[c] = static_cast<double>(best);
    }
  }
  return stats;
}

RawTable apply_impute(const RawTable& table, const ImputeStats& stats) {
  RawTable out = table;
  for (std::size_t c : table.schema.feature_columns()) {
    for (double& v : out.columns[c]) {
      if (std::isnan(v)) v = stats.fill.at(c);
    }
  }
  return out;
}

StandardizeStats fit_standardize(const RawTable& imputed, std::span<const std::size_t> train_ids,
                                 AccessAudit* audit) {
  if (train_ids.empty()) throw DataError("fit_standardize: empty training split");
  if (audit) {
    for (std::size_t id : train_ids) audit->record(id, "standardize fit");
  }
  auto moments = [&](const std::vector<double>& col, double& mean, double& sd) {
    double total = 0.0;
    for (std::size_t id : train_ids) total += col.at(id);
    mean = total / static_cast<double>(train_ids.size());
    double ss = 0.0;
    for (std::size_t id : train_ids) ss += (col[id] - mean) * (col[id] - mean);
    sd = std::sqrt(ss / static_cast<double>(train_ids.size()));
    if (sd < 1e-9) sd = 1.0;
  };
  StandardizeStats s;
  for (std::size_t c : imputed.schema.feature_columns()) {
    double m = 0.0, sd = 1.0;
    moments(imputed.columns[c], m, sd);
    if (std::isnan(m)) throw DataError("fit_standardize: column '" + imputed.schema.columns[c].name + "' has missing values");
    s.mean.push_back(m);
    s.std.push_back(sd);
  }
  for (std::size_t c : imputed.schema.target_columns()) {
    if (imputed.schema.columns[c].kind != ColumnKind::target_numeric) continue;
    double m = 0.0, sd = 1.0;
    moments(imputed.columns[c], m, sd);
    s.target_mean.push_back(m);
    s.target_std.push_back(sd);
  }
  return s;
}

Tensor apply_standardize(const RawTable& imputed, const StandardizeStats& stats) {
  const auto feats = imputed.schema.feature_columns();
  if (stats.mean.size() != feats.size()) throw DataError("apply_standardize: stats do not match schema");
  Tensor x(Shape{imputed.rows, feats.size()});
  for (std::size_t r = 0; r < imputed.rows; ++r) {
    for (std::size_t j = 0; j < feats.size(); ++j) {
      const double v = imputed.columns[feats[j]][r];
      if (std::isnan(v)) throw DataError("apply_standardize: table still has missing values");
      x[r * feats.size() + j] = (v - stats.mean[j]) / stats.std[j];
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Images

Tensor parse_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    std::size_t v = 0;
    auto res = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
    if (res.ec != std::errc()) throw DataError(std::string("PGM: bad ") + what);
    pos = static_cast<std::size_t>(res.ptr - bytes.data());
    return v;
  };
  if (bytes.substr(0, 2) != "P5") throw DataError("PGM: bad magic (expected P5)");
  pos = 2;
  const std::size_t w = read_int("width");
  const std::size_t h = read_int("height");
  const std::size_t maxval = read_int("maxval");
  if (w == 0 || h == 0) throw DataError("PGM: zero dimension");
  if (maxval != 255) throw DataError("PGM: only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw DataError("PGM: truncated header");
  }
  ++pos;  // single whitespace before the raster
  if (bytes.size() - pos != w * h) {
    throw DataError("PGM: payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                    std::to_string(w * h));
  }
  Tensor img(Shape{h, w, 1});
  for (std::size_t i = 0; i < w * h; ++i) {
    img[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / 255.0;
  }
  return img;
}

Tensor load_image_pgm(const std::filesystem::path& path) {
  try {
    return parse_pgm(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_pgm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 1) {
    throw ShapeError("format_pgm: expected [H, W, 1], got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1);
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (double v : image.data()) {
    const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  return out;
}

void save_image_pgm(const std::filesystem::path& path, const Tensor& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  const std::string bytes = format_pgm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string_view to_string(CropMode m) { return m == CropMode::center ? "center" : "random"; }

CropMode parse_crop_mode(std::string_view s) {
  if (s == "center") return CropMode::center;
  if (s == "random") return CropMode::random;
  throw std::invalid_argument("unknown crop mode '" + std::string(s) + "'");
}

Tensor crop(const Tensor& image, CropMode mode, std::size_t h, std::size_t w, Rng& rng) {
  if (image.rank() != 3) throw ShapeError("crop: expected [H, W, C], got " + shape_string(image.shape()));
  const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
  if (h == 0 || w == 0 || h > H || w > W) {
    throw std::invalid_argument("crop: size " + std::to_string(h) + "x" + std::to_string(w) +
                                " does not fit image " + std::to_string(H) + "x" + std::to_string(W));
  }
  std::size_t top = (H - h) / 2, left = (W - w) / 2;
  if (mode == CropMode::random) {
    top = rng.uniform_int(H - h + 1);
    left = rng.uniform_int(W - w + 1);
  }
  Tensor out(Shape{h, w, C});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t k = 0; k < C; ++k) {
        out[(r * w + c) * C + k] = image[((top + r) * W + left + c) * C + k];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

std::vector<SplitTag> split(std::size_t n, const SplitSpec& spec, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);

  std::vector<SplitTag> tags(n, SplitTag::train);
  if (spec.kind == SplitSpec::Kind::ratios) {
    if (spec.train <= 0.0 || spec.val <= 0.0 || spec.test <= 0.0 ||
        std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
      throw std::invalid_argument("split: ratios must be positive and sum to 1");
    }
    const auto n_train = static_cast<std::size_t>(std::floor(spec.train * n + 0.5));
    const auto n_val = static_cast<std::size_t>(std::floor(spec.val * n + 0.5));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
      throw std::invalid_argument("split: ratios leave an empty split for n=" + std::to_string(n));
    }
    for (std::size_t i = n_train; i < n; ++i) {
      tags[order[i]] = i < n_train + n_val ? SplitTag::val : SplitTag::test;
    }
    return tags;
  }
  if (spec.k < 2) throw std::invalid_argument("split: kfold needs k >= 2");
  if (spec.fold >= spec.k) throw std::invalid_argument("split: fold index out of range");
  if (n < spec.k) throw std::invalid_argument("split: fewer samples than folds");
  const std::size_t begin = spec.fold * n / spec.k, end = (spec.fold + 1) * n / spec.k;
  for (std::size_t i = begin; i < end; ++i) tags[order[i]] = SplitTag::val;
  return tags;
}

std::vector<std::size_t> ids_with(std::span<const SplitTag> tags, SplitTag tag) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == tag) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PairedDataset

PairedDataset PairedDataset::build(const RawTable& raw, const std::filesystem::path& image_root,
                                   const DatasetOptions& options, AccessAudit* fit_audit) {
  PairedDataset ds;
  ds.schema_ = raw.schema;
  ds.task_ = raw.schema.task();
  ds.tags_ = split(raw.rows, options.split, options.split_seed);
  const auto train = ds.ids(SplitTag::train);

  ds.impute_ = fit_impute(raw, train, fit_audit);
  const RawTable imputed = apply_impute(raw, ds.impute_);
  ds.stats_ = fit_standardize(imputed, train, fit_audit);
  ds.x_ = apply_standardize(imputed, ds.stats_);
  ds.features_ = ds.x_.dim(1);

  const auto targets = raw.schema.target_columns();
  if (ds.task_.kind == TaskKind::regression) {
    ds.targets_ = targets.size();
    ds.y_.resize(raw.rows * ds.targets_);
    for (std::size_t r = 0; r < raw.rows; ++r) {
      for (std::size_t t = 0; t < ds.targets_; ++t) {
        ds.y_[r * ds.targets_ + t] =
            (raw.columns[targets[t]][r] - ds.stats_.target_mean[t]) / ds.stats_.target_std[t];
      }
    }
  } else {
    ds.labels_.resize(raw.rows);
    for (std::size_t r = 0; r < raw.rows; ++r) {
      ds.labels_[r] = static_cast<std::size_t>(raw.columns[targets[0]][r]);
    }
  }

  ds.cache_ = std::make_shared<ImageCache>();
  if (raw.schema.has_images()) {
    for (const auto& p : raw.image_paths) {
      std::filesystem::path path(p);
      ds.image_files_.push_back(path.is_absolute() ? path : image_root / path);
    }
    ds.cache_->images.resize(raw.rows);
    // Image geometry from the first training image.
    const Tensor& first = ds.raw_image(train.front());
    ds.crop_mode_ = options.crop_mode;
    ds.crop_h_ = options.crop_height ? options.crop_height : first.dim(0);
    ds.crop_w_ = options.crop_width ? options.crop_width : first.dim(1);
    if (ds.crop_h_ > first.dim(0) || ds.crop_w_ > first.dim(1)) {
      throw DataError("crop size exceeds image size " + shape_string(first.shape()));
    }
  }
  return ds;
}

PairedDataset PairedDataset::load(const std::filesystem::path& csv_path,
                                  const std::filesystem::path& schema_path,
                                  const DatasetOptions& options, AccessAudit* fit_audit) {
  const TableSchema schema = load_schema(schema_path);
  const RawTable raw = load_tabular(csv_path, schema);
  return build(raw, csv_path.parent_path(), options, fit_audit);
}

void PairedDataset::touch(std::size_t id, std::string_view what) const {
  if (id >= size()) throw std::out_of_range("sample id " + std::to_string(id) + " out of range");
  if (audit_) audit_->record(id, what);
}

Tensor PairedDataset::features(std::span<const std::size_t> ids) const {
  Tensor out(Shape{ids.size(), features_});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    touch(ids[r], "features");
    for (std::size_t j = 0; j < features_; ++j) out[r * features_ + j] = x_[ids[r] * features_ + j];
  }
  return out;
}

Tensor PairedDataset::targets(std::span<const std::size_t> ids) const {
  if (task_.kind != TaskKind::regression) throw std::logic_error("targets() on a classification dataset");
  Tensor out(Shape{ids.size(), targets_});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    touch(ids[r], "targets");
    for (std::size_t t = 0; t < targets_; ++t) out[r * targets_ + t] = y_[ids[r] * targets_ + t];
  }
  return out;
}

std::vector<std::size_t> PairedDataset::labels(std::span<const std::size_t> ids) const {
  if (task_.kind != TaskKind::classification) throw std::logic_error("labels() on a regression dataset");
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (std::size_t id : ids) {
    touch(id, "labels");
    out.push_back(labels_[id]);
  }
  return out;
}

const Tensor& PairedDataset::raw_image(std::size_t id) const {
  std::lock_guard lock(cache_->mu);
  auto& slot = cache_->images.at(id);
  if (!slot) slot = std::make_unique<Tensor>(load_image_pgm(image_files_[id]));
  return *slot;
}

Tensor PairedDataset::images(std::span<const std::size_t> ids, std::uint64_t crop_seed) const {
  if (!has_images()) throw DataError("dataset has no image column");
  Tensor out(Shape{ids.size(), crop_h_, crop_w_, 1});
  const std::size_t per = crop_h_ * crop_w_;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    touch(ids[r], "image");
    const Tensor& img = raw_image(ids[r]);
    if (img.dim(0) < crop_h_ || img.dim(1) < crop_w_) {
      throw DataError("image " + image_files_[ids[r]].string() + " smaller than crop size");
    }
    Rng rng(derive_seed(crop_seed, {ids[r]}));
    const Tensor c = crop(img, crop_mode_, crop_h_, crop_w_, rng);
    std::copy(c.data().begin(), c.data().end(), out.mutable_data().begin() + static_cast<std::ptrdiff_t>(r * per));
  }
  return out;
}

}  // namespace mtcmtm
