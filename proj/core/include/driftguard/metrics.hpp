#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <vector>

#include "driftguard/corpus.hpp"

namespace driftguard {

struct Metrics {
  double dsr = std::nan("");
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;  // macro over {safe, unsafe}
  size_t tp = 0, fp = 0, tn = 0, fn = 0;  // unsafe as positive class
  double train_per_step = 0.0;      // seconds
  double infer_per_sample = 0.0;    // seconds
  size_t peak_memory_kb = 0;
};

// Defense success rate: fraction of jailbreak prompts predicted unsafe.
double dsr(const std::vector<Label>& predictions, size_t total);

// Macro-averaged F1 over the safe and unsafe classes.
Metrics f1_binary(const std::vector<Label>& predictions,
                  const std::vector<Label>& truths);

// Streaming mean/variance over wall-clock measurements.
struct TimeStats {
  size_t n = 0;
  double total = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double seconds) {
    ++n;
    total += seconds;
    const double delta = seconds - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (seconds - mean);
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n) : 0.0; }
  double per_sample() const { return n > 0 ? total / static_cast<double>(n) : 0.0; }
};

// Monotonic-clock wall time of one call.
template <typename F>
double timeit(F&& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  const auto end = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(end - start).count();
}

// VmHWM from /proc/self/status, in kB; 0 when unavailable.
size_t peak_memory_kb();

}  // namespace driftguard
