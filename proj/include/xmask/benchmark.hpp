#pragma once

// Multi-method attack benchmark. Clean-input explanations are computed once
// per sample and shared by mask generation, stealth scoring and the monitor.
// The stealth column always scores IG explanations (the Eq.-style cosine
// between clean and adversarial attribution); the monitor scores whatever
// method its config names, so a relevance-based detector can guard an
// IG-reported benchmark. Per-sample work may fan out across threads; results
// are reduced in sample order so aggregates are bit-stable for a fixed seed.
//
// Timing: the default "deterministic" mode prices each method by its
// attack-loop model evaluations (forward and backward batch rows) at a
// nominal 10k rows/s, so reports are byte-identical across runs; "measured"
// mode records real attack wall time instead. Explanation generation is
// treated as cached inference-side work and is not charged to the attack.

#include <atomic>
#include <string>
#include <thread>
#include <vector>

#include "xmask/attacks.hpp"
#include "xmask/data_io.hpp"
#include "xmask/metrics.hpp"
#include "xmask/monitor.hpp"
#include "xmask/train.hpp"

namespace xmask {

enum class AttackMethod : std::uint8_t { pgd, masked_pgd_mute, masked_pgd_xunet, sinifgsm };

inline const char* attack_method_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::pgd: return "pgd";
    case AttackMethod::masked_pgd_mute: return "masked-pgd-mute";
    case AttackMethod::masked_pgd_xunet: return "masked-pgd-xunet";
    case AttackMethod::sinifgsm: return "sinifgsm";
  }
  return "?";
}

inline AttackMethod attack_method_from(const std::string& s) {
  if (s == "pgd") return AttackMethod::pgd;
  if (s == "masked-pgd-mute") return AttackMethod::masked_pgd_mute;
  if (s == "masked-pgd-xunet") return AttackMethod::masked_pgd_xunet;
  if (s == "sinifgsm") return AttackMethod::sinifgsm;
  throw std::invalid_argument("unknown attack method '" + s + "'");
}

struct BenchmarkConfig {
  std::vector<AttackMethod> methods = {AttackMethod::pgd, AttackMethod::masked_pgd_mute, AttackMethod::sinifgsm};
  AttackConfig attack;
  MonitorConfig monitor = [] {
    MonitorConfig m;
    m.xai_method = XaiMethod::lrp;  // relevance monitor guards the IG-scored benchmark
    m.lrp_eps = 1e-3;
    m.calibration = Calibration::clean_percentile;
    return m;
  }();
  MuteConfig mute;
  BalanceWeights balance_weights;
  std::size_t sinifgsm_scales = 5;
  double sinifgsm_mu = 1.0;
  std::size_t eval_count = 500;
  std::size_t calib_count = 40;  // clean samples used to place tau
  bool measured_timing = false;
  std::size_t jobs = 1;

  void validate() const {
    attack.validate();
    monitor.validate();
    mute.validate();
    balance_weights.validate();
    detail::require(!methods.empty(), "benchmark: no methods selected");
    detail::require(eval_count >= 1, "benchmark: eval_count must be >= 1");
    detail::require(jobs >= 1, "benchmark: jobs must be >= 1");
  }

  std::string canonical() const {
    std::ostringstream os;
    os << "attack eps=" << attack.epsilon << " alpha=" << attack.alpha << " steps=" << attack.steps
       << " rs=" << attack.random_start << ";monitor method=" << xai_method_name(monitor.xai_method)
       << " tau=" << monitor.tau << " calib=" << (monitor.calibration == Calibration::fixed ? "fixed" : "pct")
       << " p=" << monitor.percentile << " ig=" << monitor.ig_steps << " eps=" << monitor.lrp_eps
       << ";mute thresh=" << mute.thresh << ";sini m=" << sinifgsm_scales << " mu=" << sinifgsm_mu
       << ";balance " << balance_weights.stealth << "," << balance_weights.explanation << ","
       << balance_weights.speed << ";n=" << eval_count << ";methods";
    for (AttackMethod m : methods) os << " " << attack_method_name(m);
    return os.str();
  }
};

// Attack-loop batch rows per sample: one forward and one backward per step
// (scales of them for the scale-averaged method) plus the two predictions.
inline std::size_t attack_rows_per_sample(AttackMethod m, const BenchmarkConfig& cfg) {
  switch (m) {
    case AttackMethod::pgd:
    case AttackMethod::masked_pgd_mute:
    case AttackMethod::masked_pgd_xunet: return 2 * cfg.attack.steps + 2;
    case AttackMethod::sinifgsm: return 2 * cfg.attack.steps * cfg.sinifgsm_scales + 2;
  }
  return 0;
}

namespace detail {

template <typename S>
struct SampleOutcome {
  bool correct_after = false;
  double stealth = 0.0;
  bool monitor_pass = false;
  double delta_exp = 0.0;
  double attack_seconds = 0.0;
};

}  // namespace detail

template <typename S>
BenchmarkReport benchmark_run(const ModelGraph<S>& model, const Dataset<S>& data, const BenchmarkConfig& cfg,
                              std::uint64_t seed, const ModelGraph<S>* xunet = nullptr) {
  cfg.validate();
  for (AttackMethod m : cfg.methods)
    detail::require(m != AttackMethod::masked_pgd_xunet || xunet != nullptr,
                    "benchmark: masked-pgd-xunet requires a generator checkpoint");
  const std::size_t n = std::min<std::size_t>(cfg.eval_count, data.size());
  const std::size_t channels = data.image_shape()[0];

  MonitorConfig mon = cfg.monitor;
  if (mon.calibration == Calibration::clean_percentile) {
    const std::size_t calib_n = std::min<std::size_t>(std::max<std::size_t>(cfg.calib_count, 20), data.size());
    mon.tau = std::max(0.0, calibrate_threshold(model, data.slice(0, calib_n).images, mon, seed ^ 0x5ca1ab1eULL));
  }

  const bool need_mute =
      std::find(cfg.methods.begin(), cfg.methods.end(), AttackMethod::masked_pgd_mute) != cfg.methods.end();
  const std::size_t m_count = cfg.methods.size();

  std::vector<std::vector<detail::SampleOutcome<S>>> outcomes(m_count);
  for (auto& v : outcomes) v.resize(n);

  const bool monitor_is_ig = mon.xai_method == XaiMethod::ig;

  auto worker = [&](std::size_t i) {
    const Tensor<S> x = data.sample(i);
    const int label = data.labels[i];
    const std::vector<int> pred = {argmax_rows(model.forward(x))[0]};
    const Explanation<S> clean_ig = integrated_gradients(model, x, pred, mon.ig_steps);
    Explanation<S> clean_mon;
    if (!monitor_is_ig) clean_mon = explain(model, x, pred, mon.xai_method, mon.ig_steps, static_cast<S>(mon.lrp_eps));

    Tensor<S> mute_mask;
    if (need_mute) {
      Explanation<S> lrp = (mon.xai_method == XaiMethod::lrp)
                               ? clean_mon
                               : lrp_epsilon(model, x, pred, static_cast<S>(mon.lrp_eps));
      Rng stream = Rng(cfg.mute.seed ? cfg.mute.seed : seed).substream(i);
      mute_mask = mute_mix(slice_outer(lrp.attribution, std::size_t(0)),
                           slice_outer(clean_ig.attribution, std::size_t(0)), stream.uniform(), cfg.mute.thresh);
    }

    for (std::size_t mi = 0; mi < m_count; ++mi) {
      const AttackMethod method = cfg.methods[mi];
      Tensor<S> mask;  // empty means unmasked
      switch (method) {
        case AttackMethod::masked_pgd_mute: mask = mute_mask; break;
        case AttackMethod::masked_pgd_xunet: {
          Tensor<S> m1 = xunet->forward(x);
          mask = expand_mask_channels(m1.reshaped({std::size_t(1), m1.dim(2), m1.dim(3)}), channels);
          break;
        }
        default: break;
      }
      AdvExample<S> adv;
      if (method == AttackMethod::sinifgsm)
        adv = sinifgsm(model, x, label, cfg.attack, cfg.sinifgsm_scales, cfg.sinifgsm_mu);
      else if (mask.numel() > 0)
        adv = masked_pgd(model, x, label, &mask, cfg.attack);
      else
        adv = pgd(model, x, label, cfg.attack);

      const std::vector<int> pred_adv = {adv.predicted_after};
      const Explanation<S> adv_ig = integrated_gradients(model, adv.x_adv, pred_adv, mon.ig_steps);

      detail::SampleOutcome<S>& out = outcomes[mi][i];
      out.correct_after = adv.predicted_after == label;
      out.stealth = cosine_similarity(clean_ig.attribution, adv_ig.attribution);
      if (monitor_is_ig) {
        out.monitor_pass = monitor_score(out.stealth) >= mon.tau;
      } else {
        const Explanation<S> adv_mon =
            explain(model, adv.x_adv, pred_adv, mon.xai_method, mon.ig_steps, static_cast<S>(mon.lrp_eps));
        out.monitor_pass = monitor_score(cosine_similarity(clean_mon.attribution, adv_mon.attribution)) >= mon.tau;
      }
      AttentionMask<S> am;
      am.values = mask.numel() > 0 ? mask : Tensor<S>::ones(Shape(x.shape().begin() + 1, x.shape().end()));
      am.provenance = mask.numel() > 0
                          ? (method == AttackMethod::masked_pgd_xunet ? MaskProvenance::xunet : MaskProvenance::mute)
                          : MaskProvenance::constant;
      out.delta_exp = explain_score(am, slice_outer(clean_ig.attribution, std::size_t(0)));
      out.attack_seconds = adv.wall_time;
    }
  };

  if (cfg.jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) worker(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t threads = std::min<std::size_t>(cfg.jobs, n);
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) worker(i);
      });
    for (auto& t : pool) t.join();
  }

  // index-ordered reduction
  BenchmarkReport report;
  report.timing_mode = cfg.measured_timing ? "measured" : "deterministic";
  const std::string hash = fnv1a_hex(cfg.canonical() + ";seed=" + std::to_string(seed));
  std::vector<double> rates(m_count);
  for (std::size_t mi = 0; mi < m_count; ++mi) {
    BenchmarkRow row;
    row.method = attack_method_name(cfg.methods[mi]);
    row.seed = seed;
    row.config_hash = hash;
    std::size_t correct = 0, passes = 0;
    double stealth_sum = 0.0, dexp_sum = 0.0, seconds = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& o = outcomes[mi][i];
      correct += o.correct_after ? 1 : 0;
      passes += o.monitor_pass ? 1 : 0;
      stealth_sum += o.stealth;
      dexp_sum += o.delta_exp;
      seconds += o.attack_seconds;
    }
    row.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    row.stealth = stealth_sum / static_cast<double>(n);
    row.pass_rate = static_cast<double>(passes) / static_cast<double>(n);
    row.delta_exp = dexp_sum / static_cast<double>(n);
    row.time_s = cfg.measured_timing
                     ? seconds
                     : static_cast<double>(attack_rows_per_sample(cfg.methods[mi], cfg) * n) / 10000.0;
    rates[mi] = speed(n - correct, row.time_s).rate;
    report.rows.push_back(std::move(row));
  }
  const std::vector<double> vnorm = normalize_speeds(rates);
  for (std::size_t mi = 0; mi < m_count; ++mi) {
    RunMetrics rm{report.rows[mi].stealth, report.rows[mi].delta_exp, vnorm[mi]};
    report.rows[mi].balance = balance({rm}, cfg.balance_weights);
  }
  return report;
}

}  // namespace xmask
