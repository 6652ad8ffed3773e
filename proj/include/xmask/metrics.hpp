#pragma once

// Scalar metrics and report rows: stealth (cosine similarity between clean
// and adversarial explanations), speed (misclassifications per second),
// mask/explanation alignment, and their weighted balance averaged over runs.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "xmask/mask.hpp"
#include "xmask/monitor.hpp"

namespace xmask {

struct SpeedStat {
  std::size_t misclassified = 0;
  double elapsed = 0.0;
  double rate = 0.0;  // misclassified / elapsed
};

inline SpeedStat speed(std::size_t misclassified, double elapsed_seconds) {
  detail::require(elapsed_seconds > 0.0, "speed: elapsed time must be positive, got " + std::to_string(elapsed_seconds));
  return {misclassified, elapsed_seconds, static_cast<double>(misclassified) / elapsed_seconds};
}

struct BalanceWeights {
  double stealth = 1.0 / 3.0;
  double explanation = 1.0 / 3.0;
  double speed = 1.0 / 3.0;

  void validate() const {
    detail::require(stealth >= 0.0 && explanation >= 0.0 && speed >= 0.0, "balance: weights must be >= 0");
    detail::require(stealth + explanation + speed > 0.0, "balance: weights must not all be zero");
  }
};

// Alignment between where the mask suppresses perturbation and where the
// model attends, mapped to [0,1]: (1 + cos(1 - mask, norm(expl))) / 2.
template <typename S>
double explain_score(const AttentionMask<S>& mask, const Tensor<S>& clean_explanation) {
  detail::require_same_shape(mask.values, clean_explanation, "explain_score");
  Tensor<S> inverted(mask.values.shape());
  inverted.array() = S(1) - mask.values.array();
  return (1.0 + cosine_similarity(inverted, normalize01(clean_explanation))) / 2.0;
}

struct RunMetrics {
  double stealth = 0.0;
  double explanation = 0.0;
  double speed_norm = 0.0;  // min-max normalized across compared methods
};

// Mean over runs of w_s*stealth + w_e*explanation + w_v*speed_norm.
inline double balance(const std::vector<RunMetrics>& runs, const BalanceWeights& w) {
  w.validate();
  detail::require(!runs.empty(), "balance: no runs");
  double acc = 0.0;
  for (const RunMetrics& r : runs)
    acc += w.stealth * r.stealth + w.explanation * r.explanation + w.speed * r.speed_norm;
  return acc / static_cast<double>(runs.size());
}

// Min-max across methods; a degenerate spread maps every method to 1.
inline std::vector<double> normalize_speeds(const std::vector<double>& rates) {
  detail::require(!rates.empty(), "normalize_speeds: no rates");
  double lo = rates[0], hi = rates[0];
  for (double v : rates) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> out(rates.size(), 1.0);
  if (hi > lo)
    for (std::size_t i = 0; i < rates.size(); ++i) out[i] = (rates[i] - lo) / (hi - lo);
  return out;
}

struct BenchmarkRow {
  std::string method;
  double accuracy = 0.0;       // fraction still correctly classified under attack
  double time_s = 0.0;
  double stealth = 0.0;        // mean cosine stealth
  double pass_rate = 0.0;      // monitor pass fraction
  double delta_exp = 0.0;      // mean mask/explanation alignment
  double balance = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;
  std::string timing_mode = "deterministic";

  std::string to_csv() const {
    std::string out = "method,accuracy,time_s,stealth,pass_rate,delta_exp,balance,seed,config_hash\n";
    char buf[256];
    for (const BenchmarkRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%llu,%s\n", r.method.c_str(), r.accuracy,
                    r.time_s, r.stealth, r.pass_rate, r.delta_exp, r.balance,
                    static_cast<unsigned long long>(r.seed), r.config_hash.c_str());
      out += buf;
    }
    return out;
  }

  std::string to_table() const {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-18s %9s %9s %9s %10s %10s %9s\n", "method", "acc", "time_s", "stealth",
                  "pass_rate", "delta_exp", "balance");
    out += buf;
    out += std::string(78, '-') + "\n";
    for (const BenchmarkRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "%-18s %8.1f%% %9.3f %9.3f %9.1f%% %10.3f %9.3f\n", r.method.c_str(),
                    100.0 * r.accuracy, r.time_s, r.stealth, 100.0 * r.pass_rate, r.delta_exp, r.balance);
      out += buf;
    }
    return out;
  }
};

// FNV-1a over a canonical string; used to stamp report rows with a
// re-derivable configuration fingerprint.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace xmask
