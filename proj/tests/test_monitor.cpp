#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "xmask/data_io.hpp"
#include "xmask/metrics.hpp"
#include "xmask/monitor.hpp"
#include "xmask/train.hpp"

using namespace xmask;

TEST_CASE("cosine similarity reference values") {
  Tensor<double> a({2}, {1, 1}), b({2}, {1, 0});
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_similarity(Tensor<double>({2}, {1, 0}), Tensor<double>({2}, {0, 1})) ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cosine_similarity(a, b) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("cosine similarity: symmetry, scale invariance, bounds, zero guard") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> a = rng_uniform<double>(rng, {16}, -2.0, 2.0);
    Tensor<double> b = rng_uniform<double>(rng, {16}, -2.0, 2.0);
    const double s = cosine_similarity(a, b);
    CHECK(s == cosine_similarity(b, a));
    CHECK(std::abs(s) <= 1.0 + 1e-6);
    CHECK(cosine_similarity(a, scale(b, 3.7)) == doctest::Approx(s).epsilon(1e-9));
  }
  Tensor<double> z = Tensor<double>::zeros({4});
  CHECK(cosine_similarity(z, z) == 1.0);
  CHECK(cosine_similarity(z, Tensor<double>({4}, {1, 2, 3, 4})) == 0.0);
  CHECK_THROWS_AS((void)cosine_similarity(z, Tensor<double>::zeros({5})), std::invalid_argument);
}

TEST_CASE("verdict: identical candidate scores 1 and passes; tau 0 passes everything") {
  Rng rng(2);
  auto model = build_mlp<float>({1, 8, 8}, {16}, 4, rng);
  Tensor<float> x = rng_uniform<float>(rng, {1, 1, 8, 8});
  MonitorConfig cfg;
  cfg.xai_method = XaiMethod::ig;
  cfg.ig_steps = 8;
  cfg.tau = 1.0;
  MonitorVerdict v = monitor_verdict(model, x, x, cfg);
  CHECK(v.score == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(v.pass);

  cfg.tau = 0.0;
  Tensor<float> other = rng_uniform<float>(rng, {1, 1, 8, 8});
  CHECK(monitor_verdict(model, x, other, cfg).pass);
}

TEST_CASE("verdict pass set is monotone in tau") {
  Rng rng(3);
  auto model = build_mlp<float>({1, 8, 8}, {16}, 4, rng);
  Tensor<float> x = rng_uniform<float>(rng, {1, 1, 8, 8});
  Tensor<float> cand = rng_uniform<float>(rng, {1, 1, 8, 8});
  MonitorConfig cfg;
  cfg.xai_method = XaiMethod::lrp;
  double taus[] = {0.0, 0.3, 0.6, 0.9, 1.0};
  bool prev = true;
  for (double tau : taus) {
    cfg.tau = tau;
    const bool pass = monitor_verdict(model, x, cand, cfg).pass;
    CHECK((prev || !pass));  // once flagged at a lower tau, never passes at a higher one
    prev = pass;
  }
}

TEST_CASE("percentile endpoints and interpolation") {
  std::vector<double> v = {0.4, 0.1, 0.9, 0.6};
  CHECK(percentile(v, 0.0) == 0.1);
  CHECK(percentile(v, 100.0) == 0.9);
  CHECK(percentile(v, 50.0) == doctest::Approx(0.5));
  CHECK_THROWS_AS((void)percentile({}, 5.0), std::invalid_argument);
}

TEST_CASE("calibration requires at least 20 samples and most clean pairs pass") {
  auto data = synthetic_dataset<float>(SyntheticKind::blobs, 60, {1, 28, 28}, 10, 3);
  Rng rng(4);
  auto model = build_mlp<float>({1, 28, 28}, {32}, 10, rng);
  TrainConfig tc;
  tc.epochs = 2;
  tc.lr = 0.1;
  train_classifier(model, data, tc);

  MonitorConfig cfg;
  cfg.xai_method = XaiMethod::lrp;
  cfg.lrp_eps = 1e-3;
  cfg.percentile = 5.0;
  CHECK_THROWS_AS((void)calibrate_threshold(model, data.slice(0, 10).images, cfg, 1), std::invalid_argument);

  const double tau = calibrate_threshold(model, data.slice(0, 30).images, cfg, 1);
  cfg.tau = tau;
  // held-out clean samples against their own re-noised copies
  Rng noise(55);
  std::size_t passes = 0;
  const std::size_t held = 20;
  for (std::size_t i = 0; i < held; ++i) {
    Tensor<float> x = data.sample(30 + i);
    Tensor<float> pert = clamp(add(x, rng_uniform<float>(noise, x.shape(), -1.0 / 255, 1.0 / 255)), 0.0f, 1.0f);
    passes += monitor_verdict(model, x, pert, cfg).pass ? 1 : 0;
  }
  CHECK(double(passes) / held >= 0.80);
}

TEST_CASE("speed arithmetic and guards") {
  CHECK(speed(30, 15.0).rate == doctest::Approx(2.0));
  CHECK(speed(0, 5.0).rate == 0.0);
  CHECK_THROWS_AS((void)speed(3, 0.0), std::invalid_argument);
  // linearity and inverse proportionality
  CHECK(speed(60, 15.0).rate == doctest::Approx(2.0 * speed(30, 15.0).rate));
  CHECK(speed(30, 30.0).rate == doctest::Approx(0.5 * speed(30, 15.0).rate));
}

TEST_CASE("explain_score alignment extremes") {
  Rng rng(5);
  Tensor<double> e = rng_uniform<double>(rng, {4, 4}, -1.0, 1.0);
  Tensor<double> n = normalize01(e);
  AttentionMask<double> aligned;
  aligned.values = Tensor<double>(n.shape());
  aligned.values.array() = 1.0 - n.array();
  CHECK(explain_score(aligned, e) == doctest::Approx(1.0).epsilon(1e-9));

  // orthogonal-complement case: (1 - mask) orthogonal to the explanation
  AttentionMask<double> orth;
  orth.values = Tensor<double>::ones({4});
  Tensor<double> expl({4}, {0.0, 1.0, 0.0, 1.0});
  orth.values[0] = 0.0;  // 1-mask = [1,0,0,0], normalize01(expl) = [0,1,0,1]
  orth.values[2] = 1.0;
  CHECK(explain_score(orth, expl) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("balance arithmetic and degeneracies") {
  BalanceWeights w;  // (1,1,1)/3
  CHECK(balance({RunMetrics{0.9, 0.5, 1.0}}, w) == doctest::Approx(0.8).epsilon(1e-12));

  BalanceWeights stealth_only{1.0, 0.0, 0.0};
  std::vector<RunMetrics> runs = {{0.7, 0.1, 0.2}, {0.9, 0.4, 0.9}};
  CHECK(balance(runs, stealth_only) == doctest::Approx(0.8));

  // identical runs average to the single-run value
  CHECK(balance({RunMetrics{0.6, 0.2, 0.4}, RunMetrics{0.6, 0.2, 0.4}}, w) ==
        doctest::Approx(balance({RunMetrics{0.6, 0.2, 0.4}}, w)));

  BalanceWeights zero{0.0, 0.0, 0.0};
  CHECK_THROWS_AS((void)balance(runs, zero), std::invalid_argument);
  CHECK_THROWS_AS((void)balance({}, w), std::invalid_argument);
}

TEST_CASE("speed normalization across methods") {
  auto n = normalize_speeds({2.0, 6.0, 4.0});
  CHECK(n[0] == 0.0);
  CHECK(n[1] == 1.0);
  CHECK(n[2] == doctest::Approx(0.5));
  // degenerate spread maps to 1
  auto d = normalize_speeds({3.0, 3.0});
  CHECK(d[0] == 1.0);
  CHECK(d[1] == 1.0);
}

TEST_CASE("report CSV carries seed and config hash on every row") {
  BenchmarkReport r;
  BenchmarkRow row;
  row.method = "pgd";
  row.seed = 42;
  row.config_hash = fnv1a_hex("cfg");
  r.rows.push_back(row);
  const std::string csv = r.to_csv();
  CHECK(csv.find("method,accuracy,time_s,stealth,pass_rate,delta_exp,balance,seed,config_hash") != std::string::npos);
  CHECK(csv.find(",42,") != std::string::npos);
  CHECK(csv.find(row.config_hash) != std::string::npos);
}
