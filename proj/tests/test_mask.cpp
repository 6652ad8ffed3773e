#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "xmask/mask.hpp"

using namespace xmask;

namespace {
template <typename S>
Explanation<S> as_explanation(Tensor<S> t, XaiMethod m) {
  Explanation<S> e;
  Shape batched{1};
  for (std::size_t d : t.shape()) batched.push_back(d);
  e.attribution = t.reshaped(batched);
  e.method = m;
  e.targets = {0};
  return e;
}
}  // namespace

TEST_CASE("mixture arithmetic, no-swap branch (a = 0.6)") {
  // normalized attributions: lrp [0, .5, 1], ig [1, 0, .5]; b = 0.4
  // mix = 1 - (0.4*lrp_n + 0.6*ig_n) = [0.4, 0.8, 0.3]
  Tensor<double> lrp({3}, {0.0, 0.5, 1.0});
  Tensor<double> ig({3}, {1.0, 0.0, 0.5});
  Tensor<double> mix = mute_mix(lrp, ig, 0.6, 0.5);
  CHECK(mix[0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(mix[1] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(mix[2] == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("swap branch: a = 0.3 below thresh 0.5 becomes (0.7, 0.3)") {
  MuteWeights w = mute_weights(0.3, 0.5);
  CHECK(w.a == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(w.b == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(w.a + w.b == 1.0);

  Tensor<double> lrp({3}, {0.0, 0.5, 1.0});
  Tensor<double> ig({3}, {1.0, 0.0, 0.5});
  Tensor<double> mix = mute_mix(lrp, ig, 0.3, 0.5);
  CHECK(mix[0] == doctest::Approx(0.3).epsilon(1e-12));   // 1 - (.3*0 + .7*1)
  CHECK(mix[1] == doctest::Approx(0.85).epsilon(1e-12));  // 1 - (.3*.5 + .7*0)
  CHECK(mix[2] == doctest::Approx(0.35).epsilon(1e-12));  // 1 - (.3*1 + .7*.5)
}

TEST_CASE("pixels where both normalized attributions peak get mask exactly 0") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> lrp = rng_uniform<double>(rng, {16}, -3.0, 3.0);
    Tensor<double> ig = lrp;  // identical attributions: shared argmax pixel
    const double a = rng.uniform();
    Tensor<double> mix = mute_mix(lrp, ig, a, 0.5);
    std::size_t peak = 0;
    for (std::size_t i = 1; i < 16; ++i)
      if (lrp[i] > lrp[peak]) peak = i;
    CHECK(mix[peak] == 0.0);
  }
}

TEST_CASE("weights: a+b = 1 exactly post-swap; thresh 0.5 keeps a in [0.5, 1)") {
  Rng rng(99);
  for (int i = 0; i < 10000; ++i) {
    const double drawn = rng.uniform();
    const double thresh = (i % 10) / 10.0;
    MuteWeights w = mute_weights(drawn, thresh);
    CHECK(w.a + w.b == 1.0);
    MuteWeights w5 = mute_weights(drawn, 0.5);
    CHECK(w5.a >= 0.5);
    CHECK(w5.a < 1.0);
  }
}

TEST_CASE("mask values stay in [0,1] and invert the combined attribution") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<double> lrp = rng_uniform<double>(rng, {25}, -2.0, 2.0);
    Tensor<double> ig = rng_uniform<double>(rng, {25}, -2.0, 2.0);
    const double a = rng.uniform();
    Tensor<double> mix = mute_mix(lrp, ig, a, 0.5);
    CHECK(min_value(mix) >= 0.0);
    CHECK(max_value(mix) <= 1.0);

    // argmin of the combined normalized attribution = argmax of the mask
    MuteWeights w = mute_weights(a, 0.5);
    Tensor<double> combined = add(scale(normalize01(lrp), w.b), scale(normalize01(ig), w.a));
    std::size_t cmin = 0, mmax = 0;
    for (std::size_t i = 1; i < 25; ++i) {
      if (combined[i] < combined[cmin]) cmin = i;
      if (mix[i] > mix[mmax]) mmax = i;
    }
    CHECK(cmin == mmax);
  }
}

TEST_CASE("mute is deterministic per seed and per-sample streams are stable") {
  Rng rng(7);
  Explanation<double> lrp = as_explanation(rng_uniform<double>(rng, {1, 4, 4}, -1.0, 1.0), XaiMethod::lrp);
  Explanation<double> ig = as_explanation(rng_uniform<double>(rng, {1, 4, 4}, -1.0, 1.0), XaiMethod::ig);
  MuteConfig cfg;
  cfg.seed = 11;
  AttentionMask<double> m1 = mute(lrp, ig, cfg);
  AttentionMask<double> m2 = mute(lrp, ig, cfg);
  CHECK(bitwise_equal(m1.values, m2.values));
  CHECK(m1.provenance == MaskProvenance::mute);
  cfg.seed = 12;
  CHECK(!bitwise_equal(mute(lrp, ig, cfg).values, m1.values));
}

TEST_CASE("mute validates shapes and thresh") {
  Rng rng(8);
  Explanation<double> lrp = as_explanation(rng_uniform<double>(rng, {1, 4, 4}), XaiMethod::lrp);
  Explanation<double> ig = as_explanation(rng_uniform<double>(rng, {1, 5, 5}), XaiMethod::ig);
  MuteConfig cfg;
  CHECK_THROWS_AS((void)mute(lrp, ig, cfg), std::invalid_argument);
  cfg.thresh = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("constant masks") {
  AttentionMask<float> m = constant_mask<float>({2, 3}, 0.5f);
  CHECK(m.values.shape() == Shape{2, 3});
  for (std::size_t i = 0; i < 6; ++i) CHECK(m.values[i] == 0.5f);
  CHECK(m.provenance == MaskProvenance::constant);
  CHECK_THROWS_AS((void)constant_mask<float>({2}, 1.5f), std::invalid_argument);
}

TEST_CASE("expand_mask_channels replicates a 1-channel mask") {
  Rng rng(9);
  Tensor<float> m = rng_uniform<float>(rng, {1, 3, 3});
  Tensor<float> e = expand_mask_channels(m, 3);
  CHECK(e.shape() == Shape{3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 9; ++p) CHECK(e[c * 9 + p] == m[p]);
}
