// Command-line front end for the attention-mask attack pipeline:
//
//   train-classifier   fit an MLP/convnet and write a checkpoint
//   train-xunet        fit the mask generator against a frozen classifier
//   explain            write attribution tensors + completeness stats
//   export-saliency    write normalized attribution maps as PGM images
//   attack             run (masked) attacks, write adversarial tensors
//   monitor            score candidate tensors against clean references
//   benchmark          multi-method comparison, CSV + text table
//
// Every command validates its configuration before any computation and
// exits nonzero with a diagnostic on the first violation.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "xmask/config.hpp"

namespace fs = std::filesystem;
using namespace xmask;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  bool f64 = false;
  std::size_t jobs = 0;
};

RunConfig resolve_config(const GlobalArgs& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
  if (g.seed_set) cfg.seed = g.seed;
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  if (g.f64) cfg.float_mode = "f64";
  if (g.jobs > 0) {
    cfg.jobs = g.jobs;
    cfg.benchmark.jobs = g.jobs;
  }
  return cfg;
}

template <typename S>
Dataset<S> load_dataset(const RunConfig& cfg) {
  const DatasetSpec& d = cfg.dataset;
  if (d.source == "idx") return load_idx<S>(d.images_path, d.labels_path);
  if (d.source == "cifar10") return load_cifar10<S>(d.batch_paths);
  return synthetic_dataset<S>(synthetic_kind_from(d.kind), d.count, d.image_shape, d.classes, d.seed);
}

template <typename S>
ModelGraph<S> build_model(const RunConfig& cfg, const Shape& image_shape) {
  Rng rng(cfg.model.init_seed);
  if (cfg.model.kind == "mlp") return build_mlp<S>(image_shape, cfg.model.hidden, cfg.model.classes, rng);
  if (cfg.model.kind == "convnet") return build_convnet<S>(image_shape, cfg.model.classes, rng);
  return build_xunet<S>(image_shape, rng, cfg.model.slu_a);
}

template <typename S>
ModelGraph<S> require_checkpoint(const std::string& path, const char* role) {
  if (path.empty()) throw std::runtime_error(std::string(role) + " checkpoint path missing from config");
  if (!fs::exists(path)) throw std::runtime_error(std::string(role) + " checkpoint not found: " + path);
  return load_checkpoint<S>(path);
}

void write_text(const std::string& path, const std::string& text) {
  io::write_file(path, text.data(), text.size());
}

XaiMethod method_from(const std::string& s) {
  if (s == "ig") return XaiMethod::ig;
  if (s == "lrp") return XaiMethod::lrp;
  return XaiMethod::gradient;
}

template <typename S>
Tensor<S> mask_for_sample(const RunConfig& cfg, const ModelGraph<S>& model, const ModelGraph<S>* xunet,
                          const Tensor<S>& x, std::size_t index, std::uint64_t seed) {
  const Shape img(x.shape().begin() + 1, x.shape().end());
  if (cfg.mask_source == "constant") return constant_mask<S>(img, static_cast<S>(cfg.mask_constant)).values;
  if (cfg.mask_source == "file") {
    Tensor<S> m = load_tensor<S>(cfg.mask_file);
    if (!same_shape(m.shape(), img) && !same_shape(m.shape(), x.shape()))
      throw std::runtime_error("mask file " + cfg.mask_file + " has shape " + shape_str(m.shape()) +
                               " but images are " + shape_str(img));
    return m.numel() == shape_numel(img) ? m.reshaped(img) : m;
  }
  if (cfg.mask_source == "xunet") {
    Tensor<S> m1 = xunet->forward(x);
    return expand_mask_channels(m1.reshaped({std::size_t(1), m1.dim(2), m1.dim(3)}), img[0]);
  }
  // mute
  const std::vector<int> pred = {argmax_rows(model.forward(x))[0]};
  Explanation<S> lrp = lrp_epsilon(model, x, pred, static_cast<S>(cfg.monitor.lrp_eps));
  Explanation<S> ig = integrated_gradients(model, x, pred, cfg.monitor.ig_steps);
  Rng stream = Rng(cfg.mute.seed ? cfg.mute.seed : seed).substream(index);
  return mute_mix(slice_outer(lrp.attribution, std::size_t(0)), slice_outer(ig.attribution, std::size_t(0)),
                  stream.uniform(), cfg.mute.thresh);
}

template <typename S>
int cmd_train_classifier(const RunConfig& cfg) {
  Dataset<S> data = load_dataset<S>(cfg);
  ModelGraph<S> model = build_model<S>(cfg, data.image_shape());
  if (model.output_kind() != OutputKind::logits)
    throw std::runtime_error("train-classifier expects model.kind mlp or convnet");
  TrainLog log = train_classifier(model, data, cfg.train);
  fs::create_directories(cfg.out_dir);
  const std::string ckpt = cfg.out_dir + "/" + cfg.model.kind + ".xmk";
  save_checkpoint(model, ckpt);
  write_text(cfg.out_dir + "/train_" + cfg.model.kind + ".csv", log.to_csv());
  std::cout << "trained " << cfg.model.kind << " on " << data.size() << " samples, "
            << "final loss " << log.rows.back().total << ", train accuracy " << log.rows.back().val_dacc << ", wrote "
            << ckpt << "\n";
  return 0;
}

template <typename S>
int cmd_train_xunet(const RunConfig& cfg) {
  Dataset<S> data = load_dataset<S>(cfg);
  ModelGraph<S> classifier = require_checkpoint<S>(cfg.classifier_checkpoint, "classifier");
  Rng rng(cfg.model.init_seed);
  ModelGraph<S> xunet = build_xunet<S>(data.image_shape(), rng, cfg.model.slu_a);
  TrainLog log = train_xunet(xunet, classifier, data, cfg.train);
  fs::create_directories(cfg.out_dir);
  const std::string ckpt = cfg.out_dir + "/xunet.xmk";
  save_checkpoint(xunet, ckpt);
  write_text(cfg.out_dir + "/train_xunet.csv", log.to_csv());
  std::cout << "trained xunet for " << cfg.train.epochs << " epochs, loss " << log.rows.front().total << " -> "
            << log.rows.back().total << ", wrote " << ckpt << "\n";
  return 0;
}

template <typename S>
int cmd_explain(const RunConfig& cfg) {
  Dataset<S> data = load_dataset<S>(cfg);
  ModelGraph<S> model = require_checkpoint<S>(cfg.classifier_checkpoint, "classifier");
  const std::size_t n = std::min(cfg.explain_count, data.size());
  const XaiMethod method = method_from(cfg.explain_method);
  fs::create_directories(cfg.out_dir);
  double completeness = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<S> x = data.sample(i);
    const std::vector<int> pred = {argmax_rows(model.forward(x))[0]};
    Explanation<S> e = explain(model, x, pred, method, cfg.monitor.ig_steps, static_cast<S>(cfg.monitor.lrp_eps));
    save_tensor(e.attribution, cfg.out_dir + "/explain_" + std::to_string(i) + ".xtb");
    if (method == XaiMethod::ig) {
      const Shape img = data.image_shape();
      const S fx = model.forward(x)[static_cast<std::size_t>(pred[0])];
      const S f0 = model.forward(Tensor<S>::zeros(x.shape()))[static_cast<std::size_t>(pred[0])];
      const double denom = std::abs(static_cast<double>(fx - f0));
      if (denom > 0) completeness += std::abs(sum_value(e.attribution) - (fx - f0)) / denom;
    }
  }
  std::cout << "explained " << n << " samples with " << cfg.explain_method;
  if (method == XaiMethod::ig) std::cout << ", mean completeness error " << completeness / static_cast<double>(n);
  std::cout << ", wrote " << cfg.out_dir << "/explain_*.xtb\n";
  return 0;
}

template <typename S>
int cmd_export_saliency(const RunConfig& cfg) {
  Dataset<S> data = load_dataset<S>(cfg);
  ModelGraph<S> model = require_checkpoint<S>(cfg.classifier_checkpoint, "classifier");
  const std::size_t n = std::min(cfg.explain_count, data.size());
  const XaiMethod method = method_from(cfg.explain_method);
  fs::create_directories(cfg.out_dir);
  const Shape img = data.image_shape();
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<S> x = data.sample(i);
    const std::vector<int> pred = {argmax_rows(model.forward(x))[0]};
    Explanation<S> e = explain(model, x, pred, method, cfg.monitor.ig_steps, static_cast<S>(cfg.monitor.lrp_eps));
    Tensor<S> flat = normalize01(slice_outer(e.attribution, std::size_t(0)));
    // collapse channels by mean for multichannel saliency images
    Tensor<S> map({img[1], img[2]});
    for (std::size_t c = 0; c < img[0]; ++c)
      for (std::size_t p = 0; p < img[1] * img[2]; ++p)
        map[p] += flat[c * img[1] * img[2] + p] / static_cast<S>(img[0]);
    export_pgm(map, cfg.out_dir + "/saliency_" + std::to_string(i) + ".pgm");
  }
  std::cout << "wrote " << n << " saliency maps to " << cfg.out_dir << "/saliency_*.pgm\n";
  return 0;
}

template <typename S>
int cmd_attack(const RunConfig& cfg) {
  Dataset<S> data = load_dataset<S>(cfg);
  ModelGraph<S> model = require_checkpoint<S>(cfg.classifier_checkpoint, "classifier");
  ModelGraph<S> xunet;
  if (cfg.mask_source == "xunet") xunet = require_checkpoint<S>(cfg.xunet_checkpoint, "xunet");
  const std::size_t n = std::min(cfg.eval_count, data.size());
  fs::create_directories(cfg.out_dir);
  Rng rs_root(cfg.seed);
  std::size_t correct = 0;
  Shape adv_shape = data.images.shape();
  adv_shape[0] = n;
  Tensor<S> adv_all(adv_shape);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<S> x = data.sample(i);
    AdvExample<S> adv;
    if (cfg.mask_source == "none") {
      Rng stream = rs_root.substream(i);
      adv = pgd(model, x, data.labels[i], cfg.attack, &stream);
    } else {
      Tensor<S> mask = mask_for_sample(cfg, model, cfg.mask_source == "xunet" ? &xunet : nullptr, x, i, cfg.seed);
      Rng stream = rs_root.substream(i);
      adv = masked_pgd(model, x, data.labels[i], &mask, cfg.attack, &stream);
    }
    correct += adv.predicted_after == data.labels[i] ? 1 : 0;
    write_outer(adv_all, i, slice_outer(adv.x_adv, std::size_t(0)));
    if (i < cfg.explain_count && data.image_shape()[0] == 1) {
      Tensor<S> plane = slice_outer(adv.x_adv, std::size_t(0)).reshaped({data.image_shape()[1], data.image_shape()[2]});
      export_pgm(plane, cfg.out_dir + "/adv_" + std::to_string(i) + ".pgm");
    }
  }
  save_tensor(adv_all, cfg.out_dir + "/adv.xtb");
  std::cout << "attacked " << n << " samples (mask: " << cfg.mask_source << "), accuracy under attack "
            << static_cast<double>(correct) / static_cast<double>(n) << ", wrote " << cfg.out_dir << "/adv.xtb\n";
  return 0;
}

template <typename S>
int cmd_monitor(const RunConfig& cfg) {
  Dataset<S> data = load_dataset<S>(cfg);
  ModelGraph<S> model = require_checkpoint<S>(cfg.classifier_checkpoint, "classifier");
  if (cfg.mask_file.empty()) throw std::runtime_error("monitor: mask_file must point at a candidate tensor (.xtb)");
  Tensor<S> candidates = load_tensor<S>(cfg.mask_file);
  if (candidates.rank() != 4)
    throw std::runtime_error("monitor: candidate tensor must be [N,C,H,W], got " + shape_str(candidates.shape()));
  const std::size_t n = std::min(candidates.dim(0), data.size());
  MonitorConfig mon = cfg.monitor;
  if (mon.calibration == Calibration::clean_percentile) {
    const std::size_t calib_n = std::min<std::size_t>(std::max<std::size_t>(cfg.benchmark.calib_count, 20), data.size());
    mon.tau = calibrate_threshold(model, data.slice(0, calib_n).images, mon, cfg.seed ^ 0x5ca1ab1eULL);
  }
  std::size_t passes = 0;
  std::string csv = "index,score,pass\n";
  char buf[96];
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor<S> cand = detail::as_batch(slice_outer(candidates, i));
    MonitorVerdict v = monitor_verdict(model, data.sample(i), cand, mon);
    passes += v.pass ? 1 : 0;
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%d\n", i, v.score, v.pass ? 1 : 0);
    csv += buf;
  }
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir + "/monitor.csv", csv);
  std::cout << "monitored " << n << " candidates at tau " << mon.tau << ", pass rate "
            << static_cast<double>(passes) / static_cast<double>(n) << ", wrote " << cfg.out_dir << "/monitor.csv\n";
  return 0;
}

template <typename S>
int cmd_benchmark(const RunConfig& cfg) {
  Dataset<S> data = load_dataset<S>(cfg);
  ModelGraph<S> model = require_checkpoint<S>(cfg.classifier_checkpoint, "classifier");
  ModelGraph<S> xunet;
  const bool needs_xunet = std::find(cfg.benchmark.methods.begin(), cfg.benchmark.methods.end(),
                                     AttackMethod::masked_pgd_xunet) != cfg.benchmark.methods.end();
  if (needs_xunet) xunet = require_checkpoint<S>(cfg.xunet_checkpoint, "xunet");
  BenchmarkReport report = benchmark_run(model, data, cfg.benchmark, cfg.seed, needs_xunet ? &xunet : nullptr);
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir + "/benchmark.csv", report.to_csv());
  write_text(cfg.out_dir + "/benchmark.txt", report.to_table());
  std::cout << report.to_table();
  std::cout << "benchmarked " << cfg.benchmark.methods.size() << " methods on "
            << std::min<std::size_t>(cfg.benchmark.eval_count, data.size()) << " samples (timing "
            << report.timing_mode << "), wrote " << cfg.out_dir << "/benchmark.csv\n";
  return 0;
}

template <typename S>
int dispatch(const std::string& cmd, const RunConfig& cfg) {
  if (cmd == "train-classifier") return cmd_train_classifier<S>(cfg);
  if (cmd == "train-xunet") return cmd_train_xunet<S>(cfg);
  if (cmd == "explain") return cmd_explain<S>(cfg);
  if (cmd == "export-saliency") return cmd_export_saliency<S>(cfg);
  if (cmd == "attack") return cmd_attack<S>(cfg);
  if (cmd == "monitor") return cmd_monitor<S>(cfg);
  if (cmd == "benchmark") return cmd_benchmark<S>(cfg);
  throw std::runtime_error("unknown command " + cmd);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-mask guided adversarial attack pipeline"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "JSON run configuration (see docs/config.md)");
  app.add_option("--seed", g.seed, "override the run seed")->each([&](const std::string&) { g.seed_set = true; });
  app.add_option("--out", g.out_dir, "override the output directory");
  app.add_flag("--f64", g.f64, "run in 64-bit verification mode");
  app.add_option("--jobs", g.jobs, "worker threads for per-sample fan-out");

  for (const char* name : {"train-classifier", "train-xunet", "explain", "export-saliency", "attack", "monitor",
                           "benchmark"})
    app.add_subcommand(name);

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    const RunConfig cfg = resolve_config(g);
    return cfg.float_mode == "f64" ? dispatch<double>(cmd, cfg) : dispatch<float>(cmd, cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
