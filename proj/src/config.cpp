#include "xmask/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace xmask {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw std::runtime_error("config: " + where + ": " + what);
}

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) fail(where, "expected an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) fail(where, "unknown key '" + key + "'");
}

double num(const json& v, const std::string& where) {
  if (!v.is_number()) fail(where, "expected a number");
  return v.get<double>();
}

std::size_t uint_of(const json& v, const std::string& where) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
    fail(where, "expected a non-negative integer");
  return v.get<std::size_t>();
}

std::string str(const json& v, const std::string& where) {
  if (!v.is_string()) fail(where, "expected a string");
  return v.get<std::string>();
}

bool boolean(const json& v, const std::string& where) {
  if (!v.is_boolean()) fail(where, "expected a boolean");
  return v.get<bool>();
}

void parse_dataset(const json& j, DatasetSpec& d) {
  check_keys(j, "dataset",
             {"source", "kind", "count", "image_shape", "classes", "seed", "images_path", "labels_path",
              "batch_paths"});
  if (j.contains("source")) d.source = str(j["source"], "dataset.source");
  if (d.source != "synthetic" && d.source != "idx" && d.source != "cifar10")
    fail("dataset.source", "expected synthetic, idx or cifar10, got '" + d.source + "'");
  if (j.contains("kind")) {
    d.kind = str(j["kind"], "dataset.kind");
    synthetic_kind_from(d.kind);  // validates
  }
  if (j.contains("count")) d.count = uint_of(j["count"], "dataset.count");
  if (j.contains("classes")) d.classes = uint_of(j["classes"], "dataset.classes");
  if (j.contains("seed")) d.seed = uint_of(j["seed"], "dataset.seed");
  if (j.contains("image_shape")) {
    const json& s = j["image_shape"];
    if (!s.is_array() || s.size() != 3) fail("dataset.image_shape", "expected [C, H, W]");
    d.image_shape.clear();
    for (const auto& v : s) d.image_shape.push_back(uint_of(v, "dataset.image_shape"));
  }
  if (j.contains("images_path")) d.images_path = str(j["images_path"], "dataset.images_path");
  if (j.contains("labels_path")) d.labels_path = str(j["labels_path"], "dataset.labels_path");
  if (j.contains("batch_paths")) {
    if (!j["batch_paths"].is_array()) fail("dataset.batch_paths", "expected an array of paths");
    d.batch_paths.clear();
    for (const auto& v : j["batch_paths"]) d.batch_paths.push_back(str(v, "dataset.batch_paths"));
  }
  if (d.source == "idx" && (d.images_path.empty() || d.labels_path.empty()))
    fail("dataset", "idx source requires images_path and labels_path");
  if (d.source == "cifar10" && d.batch_paths.empty()) fail("dataset", "cifar10 source requires batch_paths");
}

void parse_model(const json& j, ModelSpec& m) {
  check_keys(j, "model", {"kind", "hidden", "classes", "slu_a", "init_seed"});
  if (j.contains("kind")) m.kind = str(j["kind"], "model.kind");
  if (m.kind != "mlp" && m.kind != "convnet" && m.kind != "xunet")
    fail("model.kind", "expected mlp, convnet or xunet, got '" + m.kind + "'");
  if (j.contains("hidden")) {
    if (!j["hidden"].is_array()) fail("model.hidden", "expected an array of sizes");
    m.hidden.clear();
    for (const auto& v : j["hidden"]) m.hidden.push_back(uint_of(v, "model.hidden"));
    if (m.hidden.empty()) fail("model.hidden", "needs at least one hidden size");
  }
  if (j.contains("classes")) m.classes = uint_of(j["classes"], "model.classes");
  if (j.contains("slu_a")) m.slu_a = num(j["slu_a"], "model.slu_a");
  if (j.contains("init_seed")) m.init_seed = uint_of(j["init_seed"], "model.init_seed");
}

void parse_attack(const json& j, AttackConfig& a) {
  check_keys(j, "attack", {"epsilon", "alpha", "steps", "random_start"});
  if (j.contains("epsilon")) a.epsilon = num(j["epsilon"], "attack.epsilon");
  if (j.contains("alpha")) a.alpha = num(j["alpha"], "attack.alpha");
  if (j.contains("steps")) a.steps = uint_of(j["steps"], "attack.steps");
  if (j.contains("random_start")) a.random_start = boolean(j["random_start"], "attack.random_start");
  try {
    a.validate();
  } catch (const std::exception& e) {
    fail("attack", e.what());
  }
}

void parse_mute(const json& j, MuteConfig& m) {
  check_keys(j, "mute", {"thresh", "seed"});
  if (j.contains("thresh")) m.thresh = num(j["thresh"], "mute.thresh");
  if (j.contains("seed")) m.seed = uint_of(j["seed"], "mute.seed");
  try {
    m.validate();
  } catch (const std::exception& e) {
    fail("mute", e.what());
  }
}

void parse_monitor(const json& j, MonitorConfig& m) {
  check_keys(j, "monitor", {"xai_method", "tau", "calibration", "percentile", "ig_steps", "lrp_eps"});
  if (j.contains("xai_method")) {
    const std::string v = str(j["xai_method"], "monitor.xai_method");
    if (v == "ig")
      m.xai_method = XaiMethod::ig;
    else if (v == "lrp")
      m.xai_method = XaiMethod::lrp;
    else
      fail("monitor.xai_method", "expected ig or lrp, got '" + v + "'");
  }
  if (j.contains("tau")) m.tau = num(j["tau"], "monitor.tau");
  if (j.contains("calibration")) {
    const std::string v = str(j["calibration"], "monitor.calibration");
    if (v == "fixed")
      m.calibration = Calibration::fixed;
    else if (v == "clean-percentile")
      m.calibration = Calibration::clean_percentile;
    else
      fail("monitor.calibration", "expected fixed or clean-percentile, got '" + v + "'");
  }
  if (j.contains("percentile")) m.percentile = num(j["percentile"], "monitor.percentile");
  if (j.contains("ig_steps")) m.ig_steps = uint_of(j["ig_steps"], "monitor.ig_steps");
  if (j.contains("lrp_eps")) m.lrp_eps = num(j["lrp_eps"], "monitor.lrp_eps");
  try {
    m.validate();
  } catch (const std::exception& e) {
    fail("monitor", e.what());
  }
}

void parse_loss_weights(const json& j, LossWeights& w, const std::string& where) {
  check_keys(j, where, {"w1", "w2", "w3"});
  if (j.contains("w1")) w.w1 = num(j["w1"], where + ".w1");
  if (j.contains("w2")) w.w2 = num(j["w2"], where + ".w2");
  if (j.contains("w3")) w.w3 = num(j["w3"], where + ".w3");
  try {
    w.validate();
  } catch (const std::exception& e) {
    fail(where, e.what());
  }
}

void parse_balance(const json& j, BalanceWeights& w) {
  check_keys(j, "balance_weights", {"stealth", "explanation", "speed"});
  if (j.contains("stealth")) w.stealth = num(j["stealth"], "balance_weights.stealth");
  if (j.contains("explanation")) w.explanation = num(j["explanation"], "balance_weights.explanation");
  if (j.contains("speed")) w.speed = num(j["speed"], "balance_weights.speed");
  try {
    w.validate();
  } catch (const std::exception& e) {
    fail("balance_weights", e.what());
  }
}

void parse_train(const json& j, TrainConfig& t) {
  check_keys(j, "train",
             {"epochs", "batch_size", "lr", "momentum", "seed", "unroll_steps", "loss_weights", "mute_thresh",
              "ig_steps", "lrp_eps", "xai_cache_refresh", "val_size"});
  if (j.contains("epochs")) t.epochs = uint_of(j["epochs"], "train.epochs");
  if (j.contains("batch_size")) t.batch_size = uint_of(j["batch_size"], "train.batch_size");
  if (j.contains("lr")) t.lr = num(j["lr"], "train.lr");
  if (j.contains("momentum")) t.momentum = num(j["momentum"], "train.momentum");
  if (j.contains("seed")) t.seed = uint_of(j["seed"], "train.seed");
  if (j.contains("unroll_steps")) t.unroll_steps = uint_of(j["unroll_steps"], "train.unroll_steps");
  if (j.contains("loss_weights")) parse_loss_weights(j["loss_weights"], t.loss_weights, "train.loss_weights");
  if (j.contains("mute_thresh")) t.mute_thresh = num(j["mute_thresh"], "train.mute_thresh");
  if (j.contains("ig_steps")) t.ig_steps = uint_of(j["ig_steps"], "train.ig_steps");
  if (j.contains("lrp_eps")) t.lrp_eps = num(j["lrp_eps"], "train.lrp_eps");
  if (j.contains("xai_cache_refresh")) t.xai_cache_refresh = uint_of(j["xai_cache_refresh"], "train.xai_cache_refresh");
  if (j.contains("val_size")) t.val_size = uint_of(j["val_size"], "train.val_size");
  try {
    t.validate();
  } catch (const std::exception& e) {
    fail("train", e.what());
  }
}

void parse_benchmark(const json& j, BenchmarkConfig& b) {
  check_keys(j, "benchmark",
             {"methods", "sinifgsm_scales", "sinifgsm_mu", "eval_count", "calib_count", "timing", "jobs"});
  if (j.contains("methods")) {
    if (!j["methods"].is_array()) fail("benchmark.methods", "expected an array of method names");
    b.methods.clear();
    for (const auto& v : j["methods"]) {
      try {
        b.methods.push_back(attack_method_from(str(v, "benchmark.methods")));
      } catch (const std::exception& e) {
        fail("benchmark.methods", e.what());
      }
    }
  }
  if (j.contains("sinifgsm_scales")) b.sinifgsm_scales = uint_of(j["sinifgsm_scales"], "benchmark.sinifgsm_scales");
  if (j.contains("sinifgsm_mu")) b.sinifgsm_mu = num(j["sinifgsm_mu"], "benchmark.sinifgsm_mu");
  if (j.contains("eval_count")) b.eval_count = uint_of(j["eval_count"], "benchmark.eval_count");
  if (j.contains("calib_count")) b.calib_count = uint_of(j["calib_count"], "benchmark.calib_count");
  if (j.contains("timing")) {
    const std::string v = str(j["timing"], "benchmark.timing");
    if (v == "deterministic")
      b.measured_timing = false;
    else if (v == "measured")
      b.measured_timing = true;
    else
      fail("benchmark.timing", "expected deterministic or measured, got '" + v + "'");
  }
  if (j.contains("jobs")) b.jobs = uint_of(j["jobs"], "benchmark.jobs");
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("config: JSON parse error: ") + e.what());
  }
  check_keys(j, "top level",
             {"dataset", "model", "attack", "mute", "monitor", "train", "balance_weights", "benchmark", "seed",
              "float_mode", "out_dir", "jobs", "classifier_checkpoint", "xunet_checkpoint", "mask_source",
              "mask_constant", "mask_file", "explain_count", "explain_method", "eval_count"});
  RunConfig cfg;
  if (j.contains("dataset")) parse_dataset(j["dataset"], cfg.dataset);
  if (j.contains("model")) parse_model(j["model"], cfg.model);
  if (j.contains("attack")) parse_attack(j["attack"], cfg.attack);
  if (j.contains("mute")) parse_mute(j["mute"], cfg.mute);
  if (j.contains("monitor")) parse_monitor(j["monitor"], cfg.monitor);
  if (j.contains("train")) parse_train(j["train"], cfg.train);
  if (j.contains("balance_weights")) parse_balance(j["balance_weights"], cfg.balance_weights);
  if (j.contains("benchmark")) parse_benchmark(j["benchmark"], cfg.benchmark);
  if (j.contains("seed")) cfg.seed = uint_of(j["seed"], "seed");
  if (j.contains("float_mode")) {
    cfg.float_mode = str(j["float_mode"], "float_mode");
    if (cfg.float_mode != "f32" && cfg.float_mode != "f64")
      fail("float_mode", "expected f32 or f64, got '" + cfg.float_mode + "'");
  }
  if (j.contains("out_dir")) cfg.out_dir = str(j["out_dir"], "out_dir");
  if (j.contains("jobs")) cfg.jobs = uint_of(j["jobs"], "jobs");
  if (j.contains("classifier_checkpoint")) cfg.classifier_checkpoint = str(j["classifier_checkpoint"], "classifier_checkpoint");
  if (j.contains("xunet_checkpoint")) cfg.xunet_checkpoint = str(j["xunet_checkpoint"], "xunet_checkpoint");
  if (j.contains("mask_source")) {
    cfg.mask_source = str(j["mask_source"], "mask_source");
    if (cfg.mask_source != "none" && cfg.mask_source != "mute" && cfg.mask_source != "xunet" &&
        cfg.mask_source != "constant" && cfg.mask_source != "file")
      fail("mask_source", "expected none, mute, xunet, constant or file, got '" + cfg.mask_source + "'");
  }
  if (j.contains("mask_constant")) {
    cfg.mask_constant = num(j["mask_constant"], "mask_constant");
    if (cfg.mask_constant < 0.0 || cfg.mask_constant > 1.0) fail("mask_constant", "must be in [0,1]");
  }
  if (j.contains("mask_file")) cfg.mask_file = str(j["mask_file"], "mask_file");
  if (j.contains("explain_count")) cfg.explain_count = uint_of(j["explain_count"], "explain_count");
  if (j.contains("explain_method")) {
    cfg.explain_method = str(j["explain_method"], "explain_method");
    if (cfg.explain_method != "ig" && cfg.explain_method != "lrp" && cfg.explain_method != "gradient")
      fail("explain_method", "expected ig, lrp or gradient, got '" + cfg.explain_method + "'");
  }
  if (j.contains("eval_count")) cfg.eval_count = uint_of(j["eval_count"], "eval_count");

  cfg.benchmark.attack = cfg.attack;
  cfg.benchmark.monitor = cfg.monitor;
  cfg.benchmark.mute = cfg.mute;
  cfg.benchmark.balance_weights = cfg.balance_weights;
  if (j.contains("eval_count")) cfg.benchmark.eval_count = cfg.eval_count;
  if (!j.contains("benchmark") || !j["benchmark"].contains("jobs")) cfg.benchmark.jobs = cfg.jobs;
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace xmask
