#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "mtcmtm/config.hpp"
#include "mtcmtm/synthetic.hpp"

using namespace mtcmtm;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mtcmtm");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("mtcmtm_test_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Last line of a CSV split on commas, minus the first `skip` fields.
std::vector<std::string> csv_tail(const std::string& text, std::size_t skip) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
  }
  std::vector<std::string> fields;
  std::istringstream ls(last);
  std::string f;
  while (std::getline(ls, f, ',')) fields.push_back(f);
  return {fields.begin() + static_cast<long>(skip), fields.end()};
}

const char* kTinyModel = R"(model:
  stem_channels: 4
  stem_length: 4
  n_blocks: 1
  projection_dim: 8
  image_encoder: {hidden: 16, feature_dim: 8}
pretrain:
  epochs: 1
finetune:
  epochs: 2
)";

}  // namespace

TEST_CASE("run config parsing") {
  SUBCASE("unknown key reports the key and its line") {
    try {
      parse_run_config("model:\n  stem_channels: 8\n  bogus: 1\n");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("model.bogus") != std::string::npos);
      CHECK(msg.find("line 3") != std::string::npos);
    }
  }
  SUBCASE("bad values") {
    CHECK_THROWS_AS(parse_run_config("model:\n  stem_channels: many\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("pretrain:\n  strategy: magic\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("pretrain:\n  p_m: 1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("- 1\n- 2\n"), ConfigError);
  }
  SUBCASE("to_yaml round trip") {
    RunConfig c = parse_run_config(std::string(kTinyModel) + "run:\n  seeds: [3, 4]\n  precision: f64\n");
    CHECK(c.run.seeds == std::vector<std::uint64_t>{3, 4});
    CHECK(c.run.precision == Precision::f64);
    CHECK(c.model.tabular.stem_channels == 4);
    CHECK(to_yaml(parse_run_config(to_yaml(c))) == to_yaml(c));
  }
  SUBCASE("data paths resolve against the config file") {
    const fs::path d = scratch("paths");
    write_file(d / "c.yaml", "data:\n  csv: sub/data.csv\n  schema: sub/s.yaml\n");
    const RunConfig c = load_run_config(d / "c.yaml");
    CHECK(fs::path(c.data.csv) == d / "sub" / "data.csv");
    fs::remove_all(d);
  }
  SUBCASE("pre-training hash covers pre-training settings only") {
    RunConfig a;
    RunConfig b = a;
    CHECK(pretrain_config_hash(a, 0) == pretrain_config_hash(b, 0));
    CHECK(pretrain_config_hash(a, 0) != pretrain_config_hash(a, 1));
    b.finetune.epochs = 7;
    b.data.schema = "elsewhere.yaml";
    CHECK(pretrain_config_hash(a, 0) == pretrain_config_hash(b, 0));
    b.pretrain.epochs = 3;
    CHECK(pretrain_config_hash(a, 0) != pretrain_config_hash(b, 0));
  }
}

TEST_CASE("cli usage errors") {
  CHECK(run_cli({}).code == cli::kUsage);
  CHECK(run_cli({"frobnicate"}).code == cli::kUsage);
  CHECK(run_cli({"synth"}).code == cli::kUsage);
  CHECK(run_cli({"synth", "--n", "10", "--out", "/tmp/x"}).code == cli::kUsage);
  CHECK(run_cli({"--help"}).code == cli::kOk);

  const fs::path d = scratch("usage");
  write_file(d / "bad.yaml", "model:\n  bogus: 1\n");
  const auto r = run_cli({"stats", "--config", (d / "bad.yaml").string()});
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("line 2") != std::string::npos);

  write_file(d / "nodata.yaml", "data:\n  csv: missing.csv\n  schema: missing.yaml\n");
  CHECK(run_cli({"finetune", "--config", (d / "nodata.yaml").string(), "--out", d.string()}).code ==
        cli::kDataError);
  fs::remove_all(d);
}

TEST_CASE("cli stats") {
  const auto r = run_cli({"stats", "--input-len", "10", "--task", "classification", "--outputs", "3"});
  CHECK(r.code == cli::kOk);
  CHECK(r.out.find("feature dim D = 128") != std::string::npos);
  CHECK(r.out.find("does not match") == std::string::npos);
}

TEST_CASE("cli synth is deterministic") {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  CHECK(run_cli({"synth", "--n", "50", "--seed", "2", "--out", a.string(), "--image-size", "8"}).code == cli::kOk);
  CHECK(run_cli({"synth", "--n", "50", "--seed", "2", "--out", b.string(), "--image-size", "8"}).code == cli::kOk);
  CHECK(read_file(a / "data.csv") == read_file(b / "data.csv"));
  CHECK(read_file(a / "images" / "img_00049.pgm") == read_file(b / "images" / "img_00049.pgm"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("cli gradcheck") {
  const auto r = run_cli({"gradcheck", "--variants", "2", "--filter", "loss"});
  CHECK(r.code == cli::kOk);
  CHECK(r.out.find("all gradient checks passed") != std::string::npos);
  CHECK(run_cli({"gradcheck", "--filter", "no_such_case"}).code == cli::kUsage);
}

TEST_CASE("cli pretrain, finetune, eval end to end") {
  const fs::path d = scratch("e2e");
  REQUIRE(run_cli({"synth", "--n", "120", "--seed", "1", "--out", (d / "data").string(), "--image-size", "8"}).code ==
          cli::kOk);
  write_file(d / "cfg.yaml", std::string("data:\n  csv: data/data.csv\n  schema: data/schema_classification.yaml\n") +
                                 kTinyModel);
  const std::string cfg = (d / "cfg.yaml").string(), out = (d / "runs").string();

  REQUIRE(run_cli({"pretrain", "--config", cfg, "--out", out, "--run-id", "pre"}).code == cli::kOk);
  const fs::path ckpt = d / "runs" / "pre" / "pretrain_seed0.ckpt";
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(d / "runs" / "pre" / "pretrain_loss.csv"));
  CHECK(fs::exists(d / "runs" / "pre" / "config.yaml"));

  REQUIRE(run_cli({"finetune", "--config", cfg, "--out", out, "--run-id", "ft", "--from", ckpt.string()}).code ==
          cli::kOk);
  const fs::path model = d / "runs" / "ft" / "model_seed0.ckpt";
  const auto ev = run_cli({"eval", "--model", model.string(), "--out", out, "--run-id", "ev"});
  REQUIRE(ev.code == cli::kOk);
  // Metrics recorded at fine-tuning time are reproduced exactly.
  CHECK(csv_tail(read_file(d / "runs" / "ev" / "eval.csv"), 1) ==
        csv_tail(read_file(d / "runs" / "ft" / "metrics.csv"), 3));

  // Same config and seed: identical checkpoints and metrics.
  REQUIRE(run_cli({"finetune", "--config", cfg, "--out", out, "--run-id", "ft2", "--from", ckpt.string()}).code ==
          cli::kOk);
  CHECK(read_file(d / "runs" / "ft2" / "metrics.csv") == read_file(d / "runs" / "ft" / "metrics.csv"));
  CHECK(read_file(d / "runs" / "ft2" / "model_seed0.ckpt") == read_file(model));

  // A corrupted checkpoint is a checkpoint error, not a crash.
  std::string bytes = read_file(model);
  bytes[bytes.size() - 3] ^= 0x01;
  write_file(d / "bad.ckpt", bytes);
  CHECK(run_cli({"eval", "--model", (d / "bad.ckpt").string(), "--out", out}).code == cli::kDataError);

  // Output root: run.out beats MTCMTM_OUT.
  setenv("MTCMTM_OUT", (d / "env").string().c_str(), 1);
  REQUIRE(run_cli({"eval", "--model", model.string(), "--run-id", "env_ev"}).code == cli::kOk);
  CHECK(fs::exists(d / "env" / "env_ev" / "eval.csv"));
  unsetenv("MTCMTM_OUT");
  fs::remove_all(d);
}
