#include "mtcmtm/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mtcmtm/checkpoint.hpp"

namespace mtcmtm {

namespace {

using Setter = std::function<void(const YAML::Node&)>;

std::string line_of(const YAML::Node& n) { return "line " + std::to_string(n.Mark().line + 1); }

void read_map(const YAML::Node& node, const std::string& section,
              const std::map<std::string, Setter>& fields) {
  if (!node.IsMap()) throw ConfigError("'" + section + "' must be a mapping (" + line_of(node) + ")");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    const std::string path = section.empty() ? key : section + "." + key;
    auto it = fields.find(key);
    if (it == fields.end()) {
      throw ConfigError("unknown key '" + path + "' (" + line_of(kv.first) + ")");
    }
    try {
      it->second(kv.second);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("bad value for '" + path + "' (" + line_of(kv.second) + "): " + e.what());
    }
  }
}

template <typename T>
Setter set(T& field) {
  return [&field](const YAML::Node& n) { field = n.as<T>(); };
}

Setter set_size(std::size_t& field) {
  return [&field](const YAML::Node& n) {
    const auto v = n.as<long long>();
    if (v < 0) throw std::invalid_argument("must be non-negative");
    field = static_cast<std::size_t>(v);
  };
}

template <typename E, typename Parse>
Setter set_enum(E& field, Parse parse) {
  return [&field, parse](const YAML::Node& n) { field = parse(n.as<std::string>()); };
}

SplitSpec::Kind parse_split_kind(std::string_view s) {
  if (s == "ratios") return SplitSpec::Kind::ratios;
  if (s == "kfold") return SplitSpec::Kind::kfold;
  throw std::invalid_argument("unknown split kind '" + std::string(s) + "'");
}

Schedule parse_schedule(std::string_view s) {
  if (s == "onecycle") return Schedule::onecycle;
  if (s == "constant") return Schedule::constant;
  throw std::invalid_argument("unknown schedule '" + std::string(s) + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string_view to_string(Schedule s) { return s == Schedule::onecycle ? "onecycle" : "constant"; }

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  const auto& sp = data.options.split;
  if (sp.kind == SplitSpec::Kind::ratios) {
    if (sp.train <= 0 || sp.val <= 0 || sp.test <= 0 || std::abs(sp.train + sp.val + sp.test - 1.0) > 1e-9) {
      fail("data.split ratios must be positive and sum to 1");
    }
  } else if (sp.k < 2 || sp.fold >= sp.k) {
    fail("data.split needs k >= 2 and fold < k");
  }
  try {
    model.image.validate();
    if (model.projection_dim < 2) fail("model.projection_dim must be >= 2");
    if (!(model.temperature > 0.0)) fail("model.temperature must be > 0");
    TabularEncoderConfig t = model.tabular;
    t.input_len = 1;
    t.validate();
  } catch (const std::invalid_argument& e) {
    fail(std::string("model: ") + e.what());
  }
  if (!(pretrain.p_m > 0.0 && pretrain.p_m < 1.0)) fail("pretrain.p_m must be in (0, 1)");
  if (pretrain.weights.mode == MultiTaskMode::fixed &&
      !(pretrain.weights.lambda_c > 0.0 && pretrain.weights.lambda_m > 0.0)) {
    fail("pretrain.lambda_c and pretrain.lambda_m must be > 0");
  }
  if (is_classification_loss(finetune.regression_loss)) fail("finetune.regression_loss must be mse, l1 or huber");
  if (!is_classification_loss(finetune.classification_loss)) {
    fail("finetune.classification_loss must be ce, balanced_ce or focal");
  }
  if (!(finetune.train_fraction > 0.0 && finetune.train_fraction <= 1.0)) {
    fail("finetune.train_fraction must be in (0, 1]");
  }
  if (optim.batch_size < 2) fail("optim.batch_size must be >= 2");
  if (!(optim.adam.lr > 0.0)) fail("optim.lr must be > 0");
  if (optim.adam.weight_decay < 0.0) fail("optim.weight_decay must be >= 0");
  if (!(optim.pct_start > 0.0 && optim.pct_start < 1.0)) fail("optim.pct_start must be in (0, 1)");
  if (run.seeds.empty()) fail("run.seeds must not be empty");
  if (run.threads < 1) fail("run.threads must be >= 1");
}

RunConfig parse_run_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig c;
  if (root.IsNull()) {
    c.validate();
    return c;
  }
  auto& opt = c.data.options;
  auto& tab = c.model.tabular;
  auto& img = c.model.image;
  read_map(root, "", {
    {"data", [&](const YAML::Node& n) {
      read_map(n, "data", {
        {"csv", set(c.data.csv)},
        {"schema", set(c.data.schema)},
        {"split_seed", set(opt.split_seed)},
        {"split", [&](const YAML::Node& s) {
          read_map(s, "data.split", {
            {"kind", set_enum(opt.split.kind, parse_split_kind)},
            {"train", set(opt.split.train)},
            {"val", set(opt.split.val)},
            {"test", set(opt.split.test)},
            {"k", set_size(opt.split.k)},
            {"fold", set_size(opt.split.fold)},
          });
        }},
        {"crop", [&](const YAML::Node& s) {
          read_map(s, "data.crop", {
            {"mode", set_enum(opt.crop_mode, parse_crop_mode)},
            {"height", set_size(opt.crop_height)},
            {"width", set_size(opt.crop_width)},
          });
        }},
      });
    }},
    {"model", [&](const YAML::Node& n) {
      read_map(n, "model", {
        {"stem_channels", set_size(tab.stem_channels)},
        {"stem_length", set_size(tab.stem_length)},
        {"n_blocks", set_size(tab.n_blocks)},
        {"kernel", set_size(tab.kernel)},
        {"cbam_reduction", set_size(tab.reduction)},
        {"cbam_kernel", set_size(tab.spatial_kernel)},
        {"projection_dim", set_size(c.model.projection_dim)},
        {"temperature", set(c.model.temperature)},
        {"image_encoder", [&](const YAML::Node& s) {
          read_map(s, "model.image_encoder", {
            {"kind", set_enum(img.kind, parse_image_encoder_kind)},
            {"hidden", set_size(img.hidden)},
            {"cnn_channels1", set_size(img.cnn_channels1)},
            {"cnn_channels2", set_size(img.cnn_channels2)},
            {"feature_dim", set_size(img.feature_dim)},
          });
        }},
      });
    }},
    {"pretrain", [&](const YAML::Node& n) {
      read_map(n, "pretrain", {
        {"strategy", set_enum(c.pretrain.heads.strategy, parse_pretrain_strategy)},
        {"contrastive", set_enum(c.pretrain.heads.contrastive, parse_contrastive_kind)},
        {"multitask", set_enum(c.pretrain.heads.multitask, parse_multitask_mode)},
        {"lambda_c", set(c.pretrain.weights.lambda_c)},
        {"lambda_m", set(c.pretrain.weights.lambda_m)},
        {"epochs", set_size(c.pretrain.epochs)},
        {"p_m", set(c.pretrain.p_m)},
      });
    }},
    {"finetune", [&](const YAML::Node& n) {
      read_map(n, "finetune", {
        {"regression_loss", set_enum(c.finetune.regression_loss, parse_downstream_loss)},
        {"classification_loss", set_enum(c.finetune.classification_loss, parse_downstream_loss)},
        {"epochs", set_size(c.finetune.epochs)},
        {"train_fraction", set(c.finetune.train_fraction)},
      });
    }},
    {"optim", [&](const YAML::Node& n) {
      read_map(n, "optim", {
        {"lr", set(c.optim.adam.lr)},
        {"weight_decay", set(c.optim.adam.weight_decay)},
        {"decoupled_weight_decay", set(c.optim.adam.decoupled)},
        {"batch_size", set_size(c.optim.batch_size)},
        {"schedule", set_enum(c.optim.schedule, parse_schedule)},
        {"pct_start", set(c.optim.pct_start)},
      });
    }},
    {"run", [&](const YAML::Node& n) {
      read_map(n, "run", {
        {"seeds", set(c.run.seeds)},
        {"out", set(c.run.out)},
        {"run_id", set(c.run.run_id)},
        {"precision", set_enum(c.run.precision, parse_precision)},
        {"threads", set_size(c.run.threads)},
      });
    }},
  });
  c.pretrain.weights.mode = c.pretrain.heads.multitask;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  RunConfig c;
  try {
    c = parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.data.csv);
  resolve(c.data.schema);
  return c;
}

std::string to_yaml(const RunConfig& c) {
  const auto& opt = c.data.options;
  const auto& tab = c.model.tabular;
  const auto& img = c.model.image;
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "data" << YAML::Value << YAML::BeginMap
    << YAML::Key << "csv" << YAML::Value << c.data.csv
    << YAML::Key << "schema" << YAML::Value << c.data.schema
    << YAML::Key << "split_seed" << YAML::Value << opt.split_seed
    << YAML::Key << "split" << YAML::Value << YAML::BeginMap
    << YAML::Key << "kind" << YAML::Value
    << (opt.split.kind == SplitSpec::Kind::ratios ? "ratios" : "kfold")
    << YAML::Key << "train" << YAML::Value << opt.split.train
    << YAML::Key << "val" << YAML::Value << opt.split.val
    << YAML::Key << "test" << YAML::Value << opt.split.test
    << YAML::Key << "k" << YAML::Value << opt.split.k
    << YAML::Key << "fold" << YAML::Value << opt.split.fold << YAML::EndMap
    << YAML::Key << "crop" << YAML::Value << YAML::BeginMap
    << YAML::Key << "mode" << YAML::Value << std::string(to_string(opt.crop_mode))
    << YAML::Key << "height" << YAML::Value << opt.crop_height
    << YAML::Key << "width" << YAML::Value << opt.crop_width << YAML::EndMap
    << YAML::EndMap;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap
    << YAML::Key << "stem_channels" << YAML::Value << tab.stem_channels
    << YAML::Key << "stem_length" << YAML::Value << tab.stem_length
    << YAML::Key << "n_blocks" << YAML::Value << tab.n_blocks
    << YAML::Key << "kernel" << YAML::Value << tab.kernel
    << YAML::Key << "cbam_reduction" << YAML::Value << tab.reduction
    << YAML::Key << "cbam_kernel" << YAML::Value << tab.spatial_kernel
    << YAML::Key << "projection_dim" << YAML::Value << c.model.projection_dim
    << YAML::Key << "temperature" << YAML::Value << c.model.temperature
    << YAML::Key << "image_encoder" << YAML::Value << YAML::BeginMap
    << YAML::Key << "kind" << YAML::Value << std::string(to_string(img.kind))
    << YAML::Key << "hidden" << YAML::Value << img.hidden
    << YAML::Key << "cnn_channels1" << YAML::Value << img.cnn_channels1
    << YAML::Key << "cnn_channels2" << YAML::Value << img.cnn_channels2
    << YAML::Key << "feature_dim" << YAML::Value << img.feature_dim << YAML::EndMap
    << YAML::EndMap;
  e << YAML::Key << "pretrain" << YAML::Value << YAML::BeginMap
    << YAML::Key << "strategy" << YAML::Value << std::string(to_string(c.pretrain.heads.strategy))
    << YAML::Key << "contrastive" << YAML::Value << std::string(to_string(c.pretrain.heads.contrastive))
    << YAML::Key << "multitask" << YAML::Value << std::string(to_string(c.pretrain.heads.multitask))
    << YAML::Key << "lambda_c" << YAML::Value << c.pretrain.weights.lambda_c
    << YAML::Key << "lambda_m" << YAML::Value << c.pretrain.weights.lambda_m
    << YAML::Key << "epochs" << YAML::Value << c.pretrain.epochs
    << YAML::Key << "p_m" << YAML::Value << c.pretrain.p_m << YAML::EndMap;
  e << YAML::Key << "finetune" << YAML::Value << YAML::BeginMap
    << YAML::Key << "regression_loss" << YAML::Value << std::string(to_string(c.finetune.regression_loss))
    << YAML::Key << "classification_loss" << YAML::Value
    << std::string(to_string(c.finetune.classification_loss))
    << YAML::Key << "epochs" << YAML::Value << c.finetune.epochs
    << YAML::Key << "train_fraction" << YAML::Value << c.finetune.train_fraction << YAML::EndMap;
  e << YAML::Key << "optim" << YAML::Value << YAML::BeginMap
    << YAML::Key << "lr" << YAML::Value << c.optim.adam.lr
    << YAML::Key << "weight_decay" << YAML::Value << c.optim.adam.weight_decay
    << YAML::Key << "decoupled_weight_decay" << YAML::Value << c.optim.adam.decoupled
    << YAML::Key << "batch_size" << YAML::Value << c.optim.batch_size
    << YAML::Key << "schedule" << YAML::Value << std::string(to_string(c.optim.schedule))
    << YAML::Key << "pct_start" << YAML::Value << c.optim.pct_start << YAML::EndMap;
  e << YAML::Key << "run" << YAML::Value << YAML::BeginMap
    << YAML::Key << "seeds" << YAML::Value << YAML::Flow << c.run.seeds
    << YAML::Key << "out" << YAML::Value << c.run.out
    << YAML::Key << "run_id" << YAML::Value << c.run.run_id
    << YAML::Key << "precision" << YAML::Value << std::string(precision_name(c.run.precision))
    << YAML::Key << "threads" << YAML::Value << c.run.threads << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

std::string architecture_hash(const EncoderConfig& cfg) { return fnv1a_hex(cfg.canonical()); }

std::string pretrain_config_hash(const RunConfig& c, std::uint64_t seed) {
  std::ostringstream os;
  const auto& sp = c.data.options.split;
  // Data identity is covered by the dataset fingerprint the caller adds.
  os << c.model.canonical() << "|split=" << static_cast<int>(sp.kind) << "," << fmt(sp.train) << "," << fmt(sp.val) << ","
     << fmt(sp.test) << "," << sp.k << "," << sp.fold << ",split_seed=" << c.data.options.split_seed
     << ",crop=" << to_string(c.data.options.crop_mode) << "," << c.data.options.crop_height << "x"
     << c.data.options.crop_width << "|pre=" << to_string(c.pretrain.heads.strategy) << ","
     << to_string(c.pretrain.heads.contrastive) << "," << to_string(c.pretrain.heads.multitask) << ","
     << fmt(c.pretrain.weights.lambda_c) << "," << fmt(c.pretrain.weights.lambda_m) << ","
     << c.pretrain.epochs << "," << fmt(c.pretrain.p_m) << "|optim=" << fmt(c.optim.adam.lr) << ","
     << fmt(c.optim.adam.weight_decay) << "," << c.optim.adam.decoupled << "," << c.optim.batch_size
     << "," << to_string(c.optim.schedule) << "," << fmt(c.optim.pct_start)
     << "|precision=" << precision_name(c.run.precision) << "|seed=" << seed;
  return fnv1a_hex(os.str());
}

}  // namespace mtcmtm
