#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "support/fd.hpp"
#include "xmask/attacks.hpp"
#include "xmask/data_io.hpp"
#include "xmask/train.hpp"

using namespace xmask;

namespace {

template <typename S>
ModelGraph<S> random_mlp(Rng& rng, Shape img = {1, 6, 6}, std::size_t classes = 4) {
  return build_mlp<S>(img, {12}, classes, rng);
}

}  // namespace

TEST_CASE("attack config validation forbids steps = 0 and alpha > epsilon") {
  AttackConfig cfg;
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.steps = 1;
  cfg.alpha = 0.3;
  cfg.epsilon = 0.2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("pgd with steps=1, alpha=epsilon, no random start is fgsm, bitwise") {
  Rng rng(31);
  auto model = random_mlp<float>(rng);
  Tensor<float> x = rng_uniform<float>(rng, {1, 1, 6, 6});
  AttackConfig cfg;
  cfg.epsilon = 0.1;
  cfg.alpha = 0.1;
  cfg.steps = 1;
  AdvExample<float> a = pgd(model, x, 2, cfg);
  AdvExample<float> b = fgsm(model, x, 2, 0.1);
  CHECK(bitwise_equal(a.x_adv, b.x_adv));
}

TEST_CASE("epsilon-ball and [0,1] range invariants hold exactly on randomized cases") {
  Rng rng(32);
  for (int trial = 0; trial < 60; ++trial) {
    auto model = random_mlp<float>(rng);
    Tensor<float> x = rng_uniform<float>(rng, {1, 1, 6, 6});
    AttackConfig cfg;
    cfg.epsilon = rng.uniform(0.02, 0.3);
    cfg.alpha = cfg.epsilon * rng.uniform(0.2, 1.0);
    cfg.steps = 1 + rng.below(5);
    cfg.random_start = trial % 3 == 0;
    Rng stream(trial);
    AdvExample<float> adv = pgd(model, x, int(rng.below(4)), cfg, &stream);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      CHECK(std::abs(double(adv.x_adv[i]) - double(x[i])) <= cfg.epsilon + 1e-6);
      CHECK(adv.x_adv[i] >= 0.0f);
      CHECK(adv.x_adv[i] <= 1.0f);
    }
  }
}

TEST_CASE("all-ones mask reproduces pgd bitwise; all-zeros returns the clean input") {
  Rng rng(33);
  auto model = random_mlp<float>(rng);
  Tensor<float> x = rng_uniform<float>(rng, {1, 1, 6, 6});
  AttackConfig cfg;
  Tensor<float> ones = Tensor<float>::ones({1, 6, 6});
  Tensor<float> zeros = Tensor<float>::zeros({1, 6, 6});
  AdvExample<float> plain = pgd(model, x, 1, cfg);
  AdvExample<float> m1 = masked_pgd(model, x, 1, &ones, cfg);
  AdvExample<float> m0 = masked_pgd(model, x, 1, &zeros, cfg);
  CHECK(bitwise_equal(m1.x_adv, plain.x_adv));
  CHECK(bitwise_equal(m0.x_adv, x));
}

TEST_CASE("a constant 0.5 mask halves the first unclipped step") {
  Rng rng(34);
  auto model = random_mlp<float>(rng);
  Tensor<float> x = Tensor<float>::full({1, 1, 6, 6}, 0.5f);
  AttackConfig cfg;
  cfg.epsilon = 0.2;
  cfg.alpha = 0.05;
  cfg.steps = 1;
  Tensor<float> half = Tensor<float>::full({1, 6, 6}, 0.5f);
  AdvExample<float> full = pgd(model, x, 0, cfg);
  AdvExample<float> halved = masked_pgd(model, x, 0, &half, cfg);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float df = full.x_adv[i] - x[i];
    const float dh = halved.x_adv[i] - x[i];
    CHECK(dh == doctest::Approx(0.5f * df).epsilon(1e-6));
  }
}

TEST_CASE("mask shape mismatch is rejected with a diagnostic") {
  Rng rng(35);
  auto model = random_mlp<float>(rng);
  Tensor<float> x = rng_uniform<float>(rng, {1, 1, 6, 6});
  Tensor<float> bad = Tensor<float>::ones({1, 5, 5});
  AttackConfig cfg;
  CHECK_THROWS_AS((void)masked_pgd(model, x, 0, &bad, cfg), std::invalid_argument);
}

TEST_CASE("sinifgsm with scales=1, mu=0 reduces to pgd bitwise") {
  Rng rng(36);
  auto model = random_mlp<float>(rng);
  Tensor<float> x = rng_uniform<float>(rng, {1, 1, 6, 6});
  AttackConfig cfg;
  cfg.steps = 4;
  AdvExample<float> a = sinifgsm(model, x, 2, cfg, 1, 0.0);
  AdvExample<float> b = pgd(model, x, 2, cfg);
  CHECK(bitwise_equal(a.x_adv, b.x_adv));
}

TEST_CASE("sinifgsm honors the projection invariants") {
  Rng rng(37);
  auto model = random_mlp<float>(rng);
  Tensor<float> x = rng_uniform<float>(rng, {1, 1, 6, 6});
  AttackConfig cfg;
  cfg.epsilon = 0.15;
  cfg.alpha = 0.05;
  cfg.steps = 6;
  AdvExample<float> adv = sinifgsm(model, x, 0, cfg, 5, 1.0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(std::abs(double(adv.x_adv[i]) - double(x[i])) <= cfg.epsilon + 1e-6);
    CHECK(adv.x_adv[i] >= 0.0f);
    CHECK(adv.x_adv[i] <= 1.0f);
  }
}

TEST_CASE("monotone gating: smaller masks move no farther on the first step") {
  Rng rng(38);
  auto model = random_mlp<float>(rng);
  Tensor<float> x = Tensor<float>::full({1, 1, 6, 6}, 0.5f);
  AttackConfig cfg;
  cfg.steps = 1;
  Tensor<float> m2 = rng_uniform<float>(rng, {1, 6, 6});
  Tensor<float> m1 = scale(m2, 0.6f);  // m1 <= m2 elementwise
  AdvExample<float> a1 = masked_pgd(model, x, 0, &m1, cfg);
  AdvExample<float> a2 = masked_pgd(model, x, 0, &m2, cfg);
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(std::abs(a1.x_adv[i] - x[i]) <= std::abs(a2.x_adv[i] - x[i]) + 1e-7f);
}

TEST_CASE("attacks are deterministic for a fixed seed and mode") {
  Rng rng(39);
  auto model = random_mlp<float>(rng);
  Tensor<float> x = rng_uniform<float>(rng, {1, 1, 6, 6});
  AttackConfig cfg;
  cfg.random_start = true;
  Rng s1(5), s2(5);
  AdvExample<float> a = pgd(model, x, 1, cfg, &s1);
  AdvExample<float> b = pgd(model, x, 1, cfg, &s2);
  CHECK(bitwise_equal(a.x_adv, b.x_adv));
}

TEST_CASE("unrolled attack: zero mask returns x and a zero mask gradient") {
  Rng rng(40);
  auto model = random_mlp<double>(rng);
  Tensor<double> x = rng_uniform<double>(rng, {1, 1, 6, 6}, 0.3, 0.7);
  AttackConfig cfg;
  Tape<double> t;
  auto mask = t.leaf(Tensor<double>::zeros(x.shape()), true);
  auto out = unrolled_masked_pgd(model, x, {1}, mask, 3, cfg);
  CHECK(bitwise_equal(t.val(out), x));
  t.backward(mean(abs(sub(out, t.constant(x)))));
  CHECK(bitwise_equal(t.grad(mask), Tensor<double>::zeros(x.shape())));
}

TEST_CASE("unrolled attack with k=1 equals a single masked signed step") {
  Rng rng(41);
  auto model = random_mlp<double>(rng);
  Tensor<double> x = rng_uniform<double>(rng, {1, 1, 6, 6}, 0.3, 0.7);
  AttackConfig cfg;
  cfg.epsilon = 0.2;
  cfg.alpha = 0.05;
  Tensor<double> mv = rng_uniform<double>(rng, x.shape());
  Tape<double> t;
  auto out = unrolled_masked_pgd(model, x, {2}, t.leaf(mv, true), 1, cfg);
  AdvExample<double> ref = masked_pgd(model, x, 2, &mv, [&] {
    AttackConfig c = cfg;
    c.steps = 1;
    return c;
  }());
  CHECK(max_abs_diff(t.val(out), ref.x_adv) < 1e-12);
}

TEST_CASE("unrolled attack gradient w.r.t. the mask matches finite differences on interior points") {
  Rng rng(42);
  auto model = random_mlp<double>(rng);
  Tensor<double> x = rng_uniform<double>(rng, {1, 1, 6, 6}, 0.4, 0.6);
  AttackConfig cfg;
  cfg.epsilon = 0.2;
  cfg.alpha = 0.02;  // 3 steps move at most 0.06, well inside the eps interior
  Tensor<double> mv = rng_uniform<double>(rng, x.shape(), 0.2, 0.8);
  Tensor<double> target = rng_uniform<double>(rng, x.shape());

  Tape<double> t;
  auto mask = t.leaf(mv, true);
  auto out = unrolled_masked_pgd(model, x, {3}, mask, 3, cfg);
  t.backward(mean(abs(sub(out, t.constant(target)))));
  Tensor<double> analytic = t.grad(mask);

  // sign tensors are detached constants: freeze them by replaying the same
  // iterates, so the oracle differentiates the same linear accumulation
  auto f = [&](const Tensor<double>& probe) {
    Tape<double> tp;
    auto pm = tp.leaf(probe, false);
    auto o = unrolled_masked_pgd(model, x, {3}, pm, 3, cfg);
    return tp.val(mean(abs(sub(o, tp.constant(target))))).item();
  };
  CHECK(testing::rel_error(analytic, testing::fd_grad(f, mv, 1e-5), 1e-6) < 1e-2);
}

TEST_CASE("adv example records predictions and iteration count") {
  Rng rng(43);
  auto model = random_mlp<float>(rng);
  Tensor<float> x = rng_uniform<float>(rng, {1, 1, 6, 6});
  AttackConfig cfg;
  cfg.steps = 3;
  AdvExample<float> adv = pgd(model, x, 1, cfg);
  CHECK(adv.iterations_used == 3);
  CHECK(adv.predicted_before >= 0);
  CHECK(adv.predicted_after >= 0);
  CHECK(bitwise_equal(adv.x_clean, x));
}
