#pragma once

// L-infinity attacks on [0,1] images: FGSM, PGD, mask-gated PGD (the step
// is multiplied elementwise by the attention mask before projection), the
// scale-invariant Nesterov momentum baseline, and a short unrolled masked
// attack that stays differentiable w.r.t. the mask for generator training.

#include <chrono>
#include <cstdint>
#include <optional>

#include "xmask/mask.hpp"
#include "xmask/models.hpp"
#include "xmask/rng.hpp"

namespace xmask {

struct AttackConfig {
  double epsilon = 0.2;      // L-inf budget on the [0,1] pixel scale
  double alpha = 0.05;       // step size
  std::size_t steps = 10;
  bool random_start = false;

  void validate() const {
    detail::require(steps >= 1, "attack: steps must be >= 1, got " + std::to_string(steps));
    detail::require(epsilon > 0.0, "attack: epsilon must be positive");
    detail::require(alpha > 0.0 && alpha <= epsilon,
                    "attack: need 0 < alpha <= epsilon, got alpha=" + std::to_string(alpha) +
                        " epsilon=" + std::to_string(epsilon));
  }
};

template <typename S>
struct AdvExample {
  Tensor<S> x_adv;
  Tensor<S> x_clean;
  int true_label = -1;
  int predicted_before = -1;
  int predicted_after = -1;
  std::size_t iterations_used = 0;
  double wall_time = 0.0;  // seconds, measured
};

namespace detail {

template <typename S>
Tensor<S> loss_input_grad(const ModelGraph<S>& model, const Tensor<S>& x, int label) {
  Tape<S> tape;
  Var<S> xv = tape.leaf(x, true);
  Var<S> logits = model.forward(tape, xv);
  tape.backward(cross_entropy(logits, std::vector<int>(x.dim(0), label)));
  return tape.grad(xv);
}

template <typename S>
int predict_one(const ModelGraph<S>& model, const Tensor<S>& x) {
  return argmax_rows(model.forward(x))[0];
}

// clip_[0,1] of proj onto the eps-ball around x_clean.
template <typename S>
Tensor<S> project(const Tensor<S>& x, const Tensor<S>& x_clean, S eps) {
  Tensor<S> delta = clamp(sub(x, x_clean), -eps, eps);
  return clamp(add(x_clean, delta), S(0), S(1));
}

}  // namespace detail

// Untargeted PGD; x is one sample shaped [1, C, H, W] with values in [0,1].
// The mask, when present, gates each signed step elementwise.
template <typename S>
AdvExample<S> masked_pgd(const ModelGraph<S>& model, const Tensor<S>& x, int label, const Tensor<S>* mask,
                         const AttackConfig& cfg, Rng* rng = nullptr) {
  cfg.validate();
  detail::require(x.rank() == 4 && x.dim(0) == 1, "attack: single [1,C,H,W] sample expected");
  if (mask) {
    Shape img(x.shape().begin() + 1, x.shape().end());
    detail::require(same_shape(mask->shape(), img) || same_shape(mask->shape(), x.shape()),
                    "attack: mask shape " + shape_str(mask->shape()) + " does not match input " +
                        shape_str(x.shape()));
  }
  const auto t0 = std::chrono::steady_clock::now();
  const S eps = static_cast<S>(cfg.epsilon);
  const S alpha = static_cast<S>(cfg.alpha);
  AdvExample<S> out;
  out.x_clean = x;
  out.true_label = label;
  out.predicted_before = detail::predict_one(model, x);

  Tensor<S> cur = x;
  if (cfg.random_start) {
    detail::require(rng != nullptr, "attack: random_start requires an RNG");
    Tensor<S> noise = rng_uniform<S>(*rng, x.shape(), -cfg.epsilon, cfg.epsilon);
    cur = detail::project(add(x, noise), x, eps);
  }
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    Tensor<S> step = sign(detail::loss_input_grad(model, cur, label));
    if (mask) {
      const S* mv = mask->data();
      const std::size_t mn = mask->numel();
      for (std::size_t i = 0; i < step.numel(); ++i) step[i] *= mv[i % mn];
    }
    cur = detail::project(add(cur, scale(step, alpha)), x, eps);
  }
  out.x_adv = std::move(cur);
  out.predicted_after = detail::predict_one(model, out.x_adv);
  out.iterations_used = cfg.steps;
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

template <typename S>
AdvExample<S> pgd(const ModelGraph<S>& model, const Tensor<S>& x, int label, const AttackConfig& cfg,
                  Rng* rng = nullptr) {
  return masked_pgd<S>(model, x, label, nullptr, cfg, rng);
}

// Single signed-gradient step at full budget: PGD with steps=1, alpha=eps.
template <typename S>
AdvExample<S> fgsm(const ModelGraph<S>& model, const Tensor<S>& x, int label, double epsilon) {
  AttackConfig cfg;
  cfg.epsilon = epsilon;
  cfg.alpha = epsilon;
  cfg.steps = 1;
  cfg.random_start = false;
  return pgd(model, x, label, cfg);
}

// Scale-invariant Nesterov iterative attack: each step averages gradients
// over dyadically scaled inputs x/2^i (i = 0..scales-1) at the momentum
// lookahead point, accumulates an L1-normalized momentum, and applies the
// usual signed step with the same projection as PGD. With scales=1, mu=0 it
// degenerates to PGD without random start.
template <typename S>
AdvExample<S> sinifgsm(const ModelGraph<S>& model, const Tensor<S>& x, int label, const AttackConfig& cfg,
                       std::size_t scales = 5, double mu = 1.0) {
  cfg.validate();
  detail::require(scales >= 1, "sinifgsm: scales must be >= 1");
  detail::require(x.rank() == 4 && x.dim(0) == 1, "attack: single [1,C,H,W] sample expected");
  const auto t0 = std::chrono::steady_clock::now();
  const S eps = static_cast<S>(cfg.epsilon);
  const S alpha = static_cast<S>(cfg.alpha);
  AdvExample<S> out;
  out.x_clean = x;
  out.true_label = label;
  out.predicted_before = detail::predict_one(model, x);

  Tensor<S> cur = x;
  Tensor<S> momentum = Tensor<S>::zeros(x.shape());
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    Tensor<S> nes = add(cur, scale(momentum, static_cast<S>(mu) * alpha));
    Tensor<S> avg = Tensor<S>::zeros(x.shape());
    for (std::size_t i = 0; i < scales; ++i) {
      Tensor<S> scaled = scale(nes, static_cast<S>(std::pow(2.0, -static_cast<double>(i))));
      avg.array() += detail::loss_input_grad(model, scaled, label).array();
    }
    avg.array() /= static_cast<S>(scales);
    const S l1 = avg.array().abs().sum();
    if (l1 > S(0)) avg.array() /= l1;
    momentum.array() = static_cast<S>(mu) * momentum.array() + avg.array();
    cur = detail::project(add(cur, scale(sign(momentum), alpha)), x, eps);
  }
  out.x_adv = std::move(cur);
  out.predicted_after = detail::predict_one(model, out.x_adv);
  out.iterations_used = cfg.steps;
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// k masked steps recorded on the mask's tape. The per-step sign tensors are
// computed on detached side tapes and enter as constants, so the output is
// differentiable w.r.t. the mask through x + sum_t alpha*(M . s_t); the
// [0,1]-and-eps clamp passes gradient wherever the pre-clip value stayed
// inside the feasible box.
template <typename S>
Var<S> unrolled_masked_pgd(const ModelGraph<S>& model, const Tensor<S>& x, const std::vector<int>& labels,
                           Var<S> mask, std::size_t k, const AttackConfig& cfg) {
  detail::require(k >= 1, "unrolled_masked_pgd: k must be >= 1");
  detail::require(x.rank() == 4, "unrolled_masked_pgd: [N,C,H,W] batch expected");
  detail::require(same_shape(mask.value().shape(), x.shape()),
                  "unrolled_masked_pgd: mask shape " + shape_str(mask.value().shape()) + " does not match input " +
                      shape_str(x.shape()));
  Tape<S>& tape = *mask.tape();
  const S eps = static_cast<S>(cfg.epsilon);
  const S alpha = static_cast<S>(cfg.alpha);
  Tensor<S> lo(x.shape()), hi(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    lo[i] = std::max(S(0), x[i] - eps);
    hi[i] = std::min(S(1), x[i] + eps);
  }
  Var<S> cur = tape.constant(x);
  for (std::size_t t = 0; t < k; ++t) {
    // detached gradient sign at the current iterate
    Tensor<S> cur_val = tape.val(cur);
    Tape<S> side;
    Var<S> xv = side.leaf(cur_val, true);
    side.backward(cross_entropy(model.forward(side, xv), labels));
    Tensor<S> step = sign(side.grad(xv));
    Var<S> gated = mul(mask, tape.constant(std::move(step)));
    cur = clamp(add(cur, scale(gated, alpha)), lo, hi);
  }
  return cur;
}

}  // namespace xmask
