#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "xmask/config.hpp"

using namespace xmask;
namespace fs = std::filesystem;

#ifndef XMASK_CLI_PATH
#define XMASK_CLI_PATH "xmask"
#endif

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("xmask_cli_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(XMASK_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
}

const char* kSmallConfig = R"({
  "dataset": {"source": "synthetic", "kind": "blobs", "count": 60, "image_shape": [1, 28, 28], "classes": 10, "seed": 3},
  "model": {"kind": "mlp", "hidden": [32], "classes": 10, "init_seed": 5},
  "train": {"epochs": 2, "lr": 0.1, "seed": 4},
  "attack": {"epsilon": 0.2, "alpha": 0.05, "steps": 5},
  "monitor": {"xai_method": "lrp", "lrp_eps": 0.001, "ig_steps": 8, "calibration": "clean-percentile"},
  "benchmark": {"methods": ["pgd", "masked-pgd-mute"], "eval_count": 6, "calib_count": 20},
  "eval_count": 6,
  "explain_count": 2,
  "seed": 1
})";

}  // namespace

TEST_CASE("config parsing rejects unknown keys and bad values with precise paths") {
  CHECK_THROWS_WITH_AS((void)parse_run_config(R"({"datasett": {}})"),
                       doctest::Contains("unknown key 'datasett'"), std::runtime_error);
  CHECK_THROWS_WITH_AS((void)parse_run_config(R"({"dataset": {"sourc": "x"}})"),
                       doctest::Contains("unknown key 'sourc'"), std::runtime_error);
  CHECK_THROWS_WITH_AS((void)parse_run_config(R"({"dataset": {"source": "x"}})"),
                       doctest::Contains("expected synthetic, idx or cifar10"), std::runtime_error);
  CHECK_THROWS_WITH_AS((void)parse_run_config(R"({"attack": {"epsilon": -1}})"), doctest::Contains("attack"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS((void)parse_run_config(R"({"monitor": {"xai_method": "shap"}})"),
                       doctest::Contains("xai_method"), std::runtime_error);
  CHECK_THROWS_WITH_AS((void)parse_run_config(R"({"float_mode": "f16"})"), doctest::Contains("float_mode"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS((void)parse_run_config("not json"), doctest::Contains("parse error"), std::runtime_error);
}

TEST_CASE("config defaults survive a minimal file and sections propagate") {
  RunConfig cfg = parse_run_config(kSmallConfig);
  CHECK(cfg.dataset.count == 60);
  CHECK(cfg.model.hidden == std::vector<std::size_t>{32});
  CHECK(cfg.attack.steps == 5);
  CHECK(cfg.monitor.xai_method == XaiMethod::lrp);
  CHECK(cfg.benchmark.attack.steps == 5);       // attack section feeds the benchmark
  CHECK(cfg.benchmark.eval_count == 6);
  CHECK(cfg.benchmark.methods.size() == 2);
}

TEST_CASE("cli requires a subcommand and rejects a missing checkpoint") {
  CHECK(run_cli("") != 0);
  TempDir td;
  spit(td.file("cfg.json"), kSmallConfig);
  // attack before any training: the classifier checkpoint is absent
  CHECK(run_cli("--config " + td.file("cfg.json") + " --out " + td.file("out") + " attack") != 0);
  CHECK(!fs::exists(td.file("out/adv.xtb")));  // no partial outputs
}

TEST_CASE("cli invalid config exits nonzero before any computation") {
  TempDir td;
  spit(td.file("bad.json"), R"({"no_such_key": 1})");
  CHECK(run_cli("--config " + td.file("bad.json") + " train-classifier") != 0);
}

TEST_CASE("end-to-end pipeline: train, attack, explain, monitor, benchmark") {
  TempDir td;
  std::string cfg = kSmallConfig;
  const std::string cfg_path = td.file("cfg.json");
  const std::string out = td.file("out");
  spit(cfg_path, cfg);

  REQUIRE(run_cli("--config " + cfg_path + " --out " + out + " train-classifier") == 0);
  REQUIRE(fs::exists(out + "/mlp.xmk"));
  REQUIRE(fs::exists(out + "/train_mlp.csv"));

  // attach the checkpoint for downstream commands
  std::string cfg2 = cfg;
  cfg2.insert(cfg2.rfind('}'), ", \"classifier_checkpoint\": \"" + out + "/mlp.xmk\"");
  spit(cfg_path, cfg2);

  REQUIRE(run_cli("--config " + cfg_path + " --out " + out + " attack") == 0);
  CHECK(fs::exists(out + "/adv.xtb"));

  REQUIRE(run_cli("--config " + cfg_path + " --out " + out + " explain") == 0);
  CHECK(fs::exists(out + "/explain_0.xtb"));

  REQUIRE(run_cli("--config " + cfg_path + " --out " + out + " export-saliency") == 0);
  CHECK(fs::exists(out + "/saliency_0.pgm"));

  // monitor scores the adversarial tensor batch
  std::string cfg3 = cfg2;
  cfg3.insert(cfg3.rfind('}'), ", \"mask_file\": \"" + out + "/adv.xtb\"");
  spit(cfg_path, cfg3);
  REQUIRE(run_cli("--config " + cfg_path + " --out " + out + " monitor") == 0);
  CHECK(fs::exists(out + "/monitor.csv"));

  REQUIRE(run_cli("--config " + cfg_path + " --out " + out + " benchmark") == 0);
  CHECK(fs::exists(out + "/benchmark.csv"));
  CHECK(fs::exists(out + "/benchmark.txt"));
  const std::string csv = slurp(out + "/benchmark.csv");
  CHECK(csv.find("pgd") != std::string::npos);
  CHECK(csv.find("masked-pgd-mute") != std::string::npos);
}

TEST_CASE("attack rejects a wrong-shape mask file with a nonzero exit") {
  TempDir td;
  const std::string out = td.file("out");
  spit(td.file("cfg.json"), kSmallConfig);
  REQUIRE(run_cli("--config " + td.file("cfg.json") + " --out " + out + " train-classifier") == 0);

  // write a mask tensor of the wrong spatial shape
  Tensor<float> wrong = Tensor<float>::ones({1, 5, 5});
  save_tensor(wrong, td.file("mask.xtb"));
  std::string cfg2 = kSmallConfig;
  cfg2.insert(cfg2.rfind('}'), ", \"classifier_checkpoint\": \"" + out + "/mlp.xmk\", \"mask_source\": \"file\", "
                                "\"mask_file\": \"" + td.file("mask.xtb") + "\"");
  spit(td.file("cfg.json"), cfg2);
  CHECK(run_cli("--config " + td.file("cfg.json") + " --out " + out + " attack") != 0);
}

TEST_CASE("same config and seed produce byte-identical reports") {
  TempDir td;
  const std::string out1 = td.file("a"), out2 = td.file("b");
  spit(td.file("cfg.json"), kSmallConfig);
  REQUIRE(run_cli("--config " + td.file("cfg.json") + " --out " + td.file("m") + " train-classifier") == 0);
  std::string cfg2 = kSmallConfig;
  cfg2.insert(cfg2.rfind('}'), ", \"classifier_checkpoint\": \"" + td.file("m") + "/mlp.xmk\"");
  spit(td.file("cfg.json"), cfg2);
  REQUIRE(run_cli("--config " + td.file("cfg.json") + " --out " + out1 + " benchmark") == 0);
  REQUIRE(run_cli("--config " + td.file("cfg.json") + " --out " + out2 + " benchmark") == 0);
  CHECK(slurp(out1 + "/benchmark.csv") == slurp(out2 + "/benchmark.csv"));
  CHECK(slurp(out1 + "/benchmark.txt") == slurp(out2 + "/benchmark.txt"));

  // a different seed changes the bytes
  REQUIRE(run_cli("--config " + td.file("cfg.json") + " --out " + td.file("c") + " --seed 2 benchmark") == 0);
  CHECK(slurp(out1 + "/benchmark.csv") != slurp(td.file("c") + "/benchmark.csv"));
}

TEST_CASE("checkpoints created in f32 mode load in f64 mode") {
  TempDir td;
  spit(td.file("cfg.json"), kSmallConfig);
  REQUIRE(run_cli("--config " + td.file("cfg.json") + " --out " + td.file("m") + " train-classifier") == 0);
  auto model = load_checkpoint<double>(td.file("m") + "/mlp.xmk");
  CHECK(model.kind() == "mlp");
  Rng rng(1);
  CHECK(model.forward(rng_uniform<double>(rng, {1, 1, 28, 28})).shape() == Shape{1, 10});
}
