#pragma once

// Explanation-similarity safety monitor: a candidate passes when the cosine
// similarity between its attribution map and the clean reference's map
// clears a threshold, which can be calibrated as a percentile of clean
// self-similarities under 1/255 re-noising.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "xmask/explain.hpp"
#include "xmask/rng.hpp"

namespace xmask {

enum class Calibration : std::uint8_t { fixed, clean_percentile };

struct MonitorConfig {
  XaiMethod xai_method = XaiMethod::ig;
  double tau = 0.5;
  Calibration calibration = Calibration::fixed;
  double percentile = 5.0;
  std::size_t ig_steps = 32;
  double lrp_eps = 1e-6;

  void validate() const {
    detail::require(tau >= 0.0 && tau <= 1.0, "monitor: tau must be in [0,1], got " + std::to_string(tau));
    detail::require(percentile >= 0.0 && percentile <= 100.0, "monitor: percentile must be in [0,100]");
  }
};

// Cosine similarity with a zero-denominator floor; two all-zero maps count
// as identical (similarity 1).
template <typename S>
double cosine_similarity(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "cosine_similarity");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = static_cast<double>(a[i]), y = static_cast<double>(b[i]);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 && nb == 0.0) return 1.0;
  const double denom = std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
  return dot / denom;
}

template <typename S>
double cosine_similarity(const Explanation<S>& a, const Explanation<S>& b) {
  return cosine_similarity(a.attribution, b.attribution);
}

struct MonitorVerdict {
  bool pass = false;
  double score = 0.0;  // cosine clamped into the monitor's [0,1] decision range
};

// The raw cosine lives in [-1,1]; the monitor thresholds in [0,1], treating
// any non-positive similarity as fully dissimilar. tau = 0 passes everything.
inline double monitor_score(double cosine) { return std::max(0.0, cosine); }

namespace detail {
template <typename S>
Tensor<S> as_batch(const Tensor<S>& x) {
  if (x.rank() == 4) return x;
  Shape s;
  s.push_back(1);
  for (std::size_t d : x.shape()) s.push_back(d);
  return x.reshaped(s);
}
}  // namespace detail

// Each input is explained at its own predicted class (a deployed monitor
// has no ground truth), then scored against the clean reference.
template <typename S>
MonitorVerdict monitor_verdict(const ModelGraph<S>& model, const Tensor<S>& x_clean, const Tensor<S>& x_candidate,
                               const MonitorConfig& cfg) {
  cfg.validate();
  detail::require_same_shape(x_clean, x_candidate, "monitor");
  const Tensor<S> cb = detail::as_batch(x_clean);
  const Tensor<S> qb = detail::as_batch(x_candidate);
  const std::vector<int> tc = {argmax_rows(model.forward(cb))[0]};
  const std::vector<int> tq = {argmax_rows(model.forward(qb))[0]};
  const Explanation<S> ec = explain(model, cb, tc, cfg.xai_method, cfg.ig_steps, static_cast<S>(cfg.lrp_eps));
  const Explanation<S> eq = explain(model, qb, tq, cfg.xai_method, cfg.ig_steps, static_cast<S>(cfg.lrp_eps));
  MonitorVerdict v;
  v.score = monitor_score(cosine_similarity(ec, eq));
  v.pass = v.score >= cfg.tau;
  return v;
}

// Linear-interpolated percentile; p=0 gives the minimum, p=100 the maximum.
inline double percentile(std::vector<double> values, double p) {
  detail::require(!values.empty(), "percentile: empty sample");
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  const double pos = (p / 100.0) * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

// tau = p-th percentile of similarities between clean explanations and
// explanations of mildly re-noised copies (uniform, amplitude 1/255).
template <typename S>
double calibrate_threshold(const ModelGraph<S>& model, const Tensor<S>& clean_batch, const MonitorConfig& cfg,
                           std::uint64_t seed) {
  detail::require(clean_batch.rank() == 4, "calibrate: [N,C,H,W] batch expected");
  const std::size_t n = clean_batch.dim(0);
  detail::require(n >= 20, "calibrate: need at least 20 clean samples, got " + std::to_string(n));
  Rng root(seed);
  std::vector<double> sims(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<S> x = detail::as_batch(slice_outer(clean_batch, i));
    Rng stream = root.substream(i);
    Tensor<S> noise = rng_uniform<S>(stream, x.shape(), -1.0 / 255.0, 1.0 / 255.0);
    Tensor<S> noisy = clamp(add(x, noise), S(0), S(1));
    const std::vector<int> tc = {argmax_rows(model.forward(x))[0]};
    const std::vector<int> tn = {argmax_rows(model.forward(noisy))[0]};
    const Explanation<S> ec = explain(model, x, tc, cfg.xai_method, cfg.ig_steps, static_cast<S>(cfg.lrp_eps));
    const Explanation<S> en = explain(model, noisy, tn, cfg.xai_method, cfg.ig_steps, static_cast<S>(cfg.lrp_eps));
    sims[i] = monitor_score(cosine_similarity(ec, en));
  }
  return percentile(std::move(sims), cfg.percentile);
}

}  // namespace xmask
