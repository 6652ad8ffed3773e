#pragma once

// Training loops. Classifiers train on plain mini-batch SGD (optional
// momentum) over cross-entropy. The mask generator trains against a
// three-term objective
//
//   total = w1 * L1(adv_m, data) + w2 * L1(mask, mix) + w3 * dacc
//
// where adv_m is a short unrolled masked attack (differentiable w.r.t. the
// mask), mix is the per-sample mixture of cached relevance/IG attributions,
// and dacc is a one-sided soft-accuracy hinge that fires only when the
// masked attack is weaker than the unmasked one. The attacked classifier
// stays frozen throughout.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xmask/attacks.hpp"
#include "xmask/data_io.hpp"
#include "xmask/explain.hpp"
#include "xmask/mask.hpp"
#include "xmask/models.hpp"
#include "xmask/monitor.hpp"

namespace xmask {

struct LossWeights {
  double w1 = 1.0, w2 = 1.0, w3 = 1.0;

  void validate() const {
    detail::require(w1 >= 0.0 && w2 >= 0.0 && w3 >= 0.0, "loss weights must be >= 0");
    detail::require(w1 + w2 + w3 > 0.0, "loss weights must not all be zero");
  }
};

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double lr = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  std::size_t unroll_steps = 3;
  LossWeights loss_weights;
  AttackConfig attack;
  double mute_thresh = 0.5;
  std::size_t ig_steps = 32;
  double lrp_eps = 1e-6;
  std::size_t xai_cache_refresh = 0;  // re-derive cached attributions every N epochs; 0 keeps them
  std::size_t val_size = 16;

  void validate() const {
    detail::require(epochs >= 1, "train: epochs must be >= 1");
    detail::require(batch_size >= 1, "train: batch size must be >= 1");
    detail::require(lr >= 0.0, "train: learning rate must be >= 0");
    detail::require(unroll_steps >= 1, "train: unroll steps must be >= 1");
    loss_weights.validate();
  }
};

struct TrainLogRow {
  std::size_t epoch = 0;
  double total = 0.0;
  double term1 = 0.0;
  double term2 = 0.0;
  double term3 = 0.0;
  double val_stealth = 0.0;
  double val_dacc = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  std::string to_csv() const {
    std::string out = "epoch,total,term1,term2,term3,val_stealth,val_dacc\n";
    char buf[192];
    for (const TrainLogRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.total, r.term1, r.term2,
                    r.term3, r.val_stealth, r.val_dacc);
      out += buf;
    }
    return out;
  }
};

template <typename S>
double evaluate_accuracy(const ModelGraph<S>& model, const Tensor<S>& images, const std::vector<int>& labels) {
  const std::vector<int> pred = argmax_rows(model.forward(images));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++hit;
  return labels.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(labels.size());
}

namespace detail {

// Momentum SGD state keyed by layer index.
template <typename S>
struct SgdState {
  std::map<std::size_t, Tensor<S>> vel_w, vel_b;

  void step(ModelGraph<S>& model, Tape<S>& tape, const std::vector<typename ModelGraph<S>::ParamVars>& pvars,
            double lr, double mu) {
    for (const auto& pv : pvars) {
      auto& par = model.params()[pv.layer];
      apply(par.weight, tape.grad(pv.weight), vel_w, pv.layer, lr, mu);
      apply(par.bias, tape.grad(pv.bias), vel_b, pv.layer, lr, mu);
    }
  }

 private:
  static void apply(Tensor<S>& param, const Tensor<S>& grad, std::map<std::size_t, Tensor<S>>& vel, std::size_t key,
                    double lr, double mu) {
    auto it = vel.find(key);
    if (it == vel.end()) it = vel.emplace(key, Tensor<S>::zeros(param.shape())).first;
    Tensor<S>& v = it->second;
    v.array() = static_cast<S>(mu) * v.array() + grad.array();
    param.array() -= static_cast<S>(lr) * v.array();
  }
};

template <typename S>
Tensor<S> gather_rows(const Tensor<S>& images, const std::vector<std::size_t>& idx, std::size_t begin,
                      std::size_t count) {
  Shape s = images.shape();
  s[0] = count;
  const std::size_t stride = shape_numel(Shape(s.begin() + 1, s.end()));
  Tensor<S> out(s);
  for (std::size_t i = 0; i < count; ++i)
    std::copy(images.data() + idx[begin + i] * stride, images.data() + (idx[begin + i] + 1) * stride,
              out.data() + i * stride);
  return out;
}

}  // namespace detail

// Mini-batch cross-entropy training; deterministic for a fixed seed.
template <typename S>
TrainLog train_classifier(ModelGraph<S>& model, const Dataset<S>& data, const TrainConfig& cfg) {
  cfg.validate();
  detail::require(data.size() >= 1, "train: empty dataset");
  Rng rng(cfg.seed);
  detail::SgdState<S> sgd;
  TrainLog log;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(rng, order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < data.size(); b += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, data.size() - b);
      Tensor<S> xb = detail::gather_rows(data.images, order, b, count);
      std::vector<int> yb(count);
      for (std::size_t i = 0; i < count; ++i) yb[i] = data.labels[order[b + i]];
      Tape<S> tape;
      std::vector<typename ModelGraph<S>::ParamVars> pvars;
      Var<S> logits = model.forward(tape, tape.constant(std::move(xb)), true, &pvars);
      Var<S> loss = cross_entropy(logits, yb);
      tape.backward(loss);
      sgd.step(model, tape, pvars, cfg.lr, cfg.momentum);
      loss_sum += static_cast<double>(tape.val(loss).item());
      ++batches;
    }
    TrainLogRow row;
    row.epoch = epoch + 1;
    row.total = loss_sum / static_cast<double>(batches);
    row.term1 = row.total;
    row.val_dacc = evaluate_accuracy(model, data.images, data.labels);
    log.rows.push_back(row);
  }
  return log;
}

template <typename S>
struct XunetLoss {
  Var<S> total;
  double term1 = 0.0, term2 = 0.0, term3 = 0.0;
};

// Three-term objective on one batch. `mask` must live on an active tape;
// the classifier's parameters enter as constants.
template <typename S>
XunetLoss<S> xunet_loss(const ModelGraph<S>& classifier, Var<S> mask, const Tensor<S>& data,
                        const std::vector<int>& labels, const Tensor<S>& mix, const LossWeights& w,
                        const AttackConfig& attack, std::size_t unroll_steps) {
  w.validate();
  Tape<S>& tape = *mask.tape();
  detail::require_same_shape(tape.val(mask), data, "xunet_loss(mask)");
  detail::require_same_shape(mix, data, "xunet_loss(mix)");

  Var<S> data_c = tape.constant(data);
  Var<S> adv_m = unrolled_masked_pgd(classifier, data, labels, mask, unroll_steps, attack);
  Var<S> term1 = mean(abs(sub(adv_m, data_c)));
  Var<S> term2 = mean(abs(sub(mask, tape.constant(mix))));

  // soft accuracy of the masked attack, differentiable through adv_m
  Var<S> probs = softmax(classifier.forward(tape, adv_m));
  Var<S> soft_masked = mean(select_class(probs, labels));

  // unmasked reference attack, detached
  S soft_vanilla;
  {
    Tape<S> side;
    Var<S> ones = side.constant(Tensor<S>::ones(data.shape()));
    Var<S> adv_v = unrolled_masked_pgd(classifier, data, labels, ones, unroll_steps, attack);
    Tensor<S> pv = softmax_rows(side.val(classifier.forward(side, adv_v)));
    double acc = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      acc += static_cast<double>(pv[i * pv.dim(1) + static_cast<std::size_t>(labels[i])]);
    soft_vanilla = static_cast<S>(acc / static_cast<double>(labels.size()));
  }
  Var<S> term3 = relu(add_scalar(soft_masked, -soft_vanilla));

  Var<S> total = add(add(scale(term1, static_cast<S>(w.w1)), scale(term2, static_cast<S>(w.w2))),
                     scale(term3, static_cast<S>(w.w3)));
  XunetLoss<S> out;
  out.total = total;
  out.term1 = static_cast<double>(tape.val(term1).item());
  out.term2 = static_cast<double>(tape.val(term2).item());
  out.term3 = static_cast<double>(tape.val(term3).item());
  return out;
}

// Per-sample cache of the attribution mixture target and the clean
// explanation; both are invariant while the classifier is frozen.
template <typename S>
struct XaiCache {
  std::vector<Tensor<S>> mix;      // mixture target per sample, image-shaped
  std::vector<Tensor<S>> clean_ig; // clean IG attribution per sample
  std::vector<bool> ready;

  void reset(std::size_t n) {
    mix.assign(n, {});
    clean_ig.assign(n, {});
    ready.assign(n, false);
  }
};

template <typename S>
void fill_xai_cache(XaiCache<S>& cache, const ModelGraph<S>& classifier, const Dataset<S>& data, std::size_t index,
                    const TrainConfig& cfg) {
  if (cache.ready[index]) return;
  Tensor<S> x = data.sample(index);
  const std::vector<int> target = {argmax_rows(classifier.forward(x))[0]};
  Explanation<S> lrp = lrp_epsilon(classifier, x, target, static_cast<S>(cfg.lrp_eps));
  Explanation<S> ig = integrated_gradients(classifier, x, target, cfg.ig_steps);
  Rng stream = Rng(cfg.seed).substream(index);
  cache.mix[index] = mute_mix(slice_outer(lrp.attribution, std::size_t(0)),
                              slice_outer(ig.attribution, std::size_t(0)), stream.uniform(), cfg.mute_thresh);
  cache.clean_ig[index] = slice_outer(ig.attribution, std::size_t(0));
  cache.ready[index] = true;
}

// Self-supervised mask-generator training against a frozen classifier.
template <typename S>
TrainLog train_xunet(ModelGraph<S>& xunet, const ModelGraph<S>& classifier, const Dataset<S>& data,
                     const TrainConfig& cfg) {
  cfg.validate();
  detail::require(xunet.output_kind() == OutputKind::mask, "train_xunet: generator must output a mask");
  detail::require(classifier.output_kind() == OutputKind::logits, "train_xunet: classifier must output logits");
  const std::uint64_t frozen_hash = classifier.param_hash();
  const std::size_t n = data.size();
  const std::size_t channels = data.image_shape()[0];

  XaiCache<S> cache;
  cache.reset(n);
  Rng rng(cfg.seed);
  detail::SgdState<S> sgd;
  TrainLog log;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t val_n = std::min(cfg.val_size, n);
  Dataset<S> val = data.slice(0, val_n);
  double vanilla_val_acc = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.xai_cache_refresh > 0 && epoch > 0 && epoch % cfg.xai_cache_refresh == 0) cache.reset(n);
    shuffle_indices(rng, order);
    double sum_total = 0.0, sum_t1 = 0.0, sum_t2 = 0.0, sum_t3 = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n; b += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - b);
      Tensor<S> xb = detail::gather_rows(data.images, order, b, count);
      std::vector<int> yb(count);
      Shape mix_shape = xb.shape();
      Tensor<S> mixb(mix_shape);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = order[b + i];
        yb[i] = data.labels[src];
        fill_xai_cache(cache, classifier, data, src, cfg);
        write_outer(mixb, i, cache.mix[src]);
      }
      Tape<S> tape;
      std::vector<typename ModelGraph<S>::ParamVars> pvars;
      Var<S> mask1 = xunet.forward(tape, tape.constant(xb), true, &pvars);
      Var<S> mask = repeat_channels(mask1, channels);
      XunetLoss<S> loss = xunet_loss(classifier, mask, xb, yb, mixb, cfg.loss_weights, cfg.attack, cfg.unroll_steps);
      tape.backward(loss.total);
      sgd.step(xunet, tape, pvars, cfg.lr, cfg.momentum);
      sum_total += static_cast<double>(tape.val(loss.total).item());
      sum_t1 += loss.term1;
      sum_t2 += loss.term2;
      sum_t3 += loss.term3;
      ++batches;
    }
    if (classifier.param_hash() != frozen_hash)
      throw std::logic_error("train_xunet: classifier parameters changed during training");

    // validation: stealth of the generator-masked attack and its accuracy
    // gap against the unmasked attack, on a small fixed slice
    double stealth_sum = 0.0;
    std::size_t masked_hits = 0, vanilla_hits = 0;
    for (std::size_t i = 0; i < val_n; ++i) {
      Tensor<S> x = val.sample(i);
      Tensor<S> m1 = xunet.forward(x);
      Tensor<S> m = m1.reshaped({std::size_t(1), m1.dim(2), m1.dim(3)});
      Tensor<S> mex = expand_mask_channels(m, channels);
      AdvExample<S> masked = masked_pgd(classifier, x, val.labels[i], &mex, cfg.attack);
      if (masked.predicted_after == val.labels[i]) ++masked_hits;
      if (vanilla_val_acc < 0.0) {
        AdvExample<S> plain = pgd(classifier, x, val.labels[i], cfg.attack);
        if (plain.predicted_after == val.labels[i]) ++vanilla_hits;
      }
      fill_xai_cache(cache, classifier, data, i, cfg);
      const std::vector<int> tgt = {argmax_rows(classifier.forward(masked.x_adv))[0]};
      Explanation<S> adv_ig = integrated_gradients(classifier, masked.x_adv, tgt, cfg.ig_steps);
      stealth_sum +=
          cosine_similarity(cache.clean_ig[i], slice_outer(adv_ig.attribution, std::size_t(0)));
    }
    if (vanilla_val_acc < 0.0) vanilla_val_acc = static_cast<double>(vanilla_hits) / static_cast<double>(val_n);

    TrainLogRow row;
    row.epoch = epoch + 1;
    row.total = sum_total / static_cast<double>(batches);
    row.term1 = sum_t1 / static_cast<double>(batches);
    row.term2 = sum_t2 / static_cast<double>(batches);
    row.term3 = sum_t3 / static_cast<double>(batches);
    row.val_stealth = stealth_sum / static_cast<double>(val_n);
    row.val_dacc = static_cast<double>(masked_hits) / static_cast<double>(val_n) - vanilla_val_acc;
    log.rows.push_back(row);
  }
  return log;
}

}  // namespace xmask
