#include "driftguard/metrics.hpp"

#include <fstream>
#include <sstream>
#include <tuple>

namespace driftguard {

double dsr(const std::vector<Label>& predictions, size_t total) {
  if (total == 0) fail("dsr: total must be > 0");
  if (predictions.size() != total) fail("dsr: predictions length != total");
  size_t unsafe_count = 0;
  for (Label l : predictions)
    if (l == Label::unsafe) ++unsafe_count;
  return static_cast<double>(unsafe_count) / static_cast<double>(total);
}

Metrics f1_binary(const std::vector<Label>& predictions,
                  const std::vector<Label>& truths) {
  if (predictions.size() != truths.size())
    fail("f1_binary: predictions/truths length mismatch");
  Metrics m;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const bool pred_unsafe = predictions[i] == Label::unsafe;
    const bool true_unsafe = truths[i] == Label::unsafe;
    if (pred_unsafe && true_unsafe) ++m.tp;
    else if (pred_unsafe && !true_unsafe) ++m.fp;
    else if (!pred_unsafe && true_unsafe) ++m.fn;
    else ++m.tn;
  }
  auto prf = [](size_t tp, size_t fp, size_t fn) {
    const double p = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double r = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double f = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
    return std::tuple<double, double, double>(p, r, f);
  };
  // unsafe as positive, then safe as positive (tn/fn swap roles).
  auto [pu, ru, fu] = prf(m.tp, m.fp, m.fn);
  auto [ps, rs, fs] = prf(m.tn, m.fn, m.fp);
  m.precision = pu;
  m.recall = ru;
  m.f1 = (fu + fs) / 2.0;
  return m;
}

size_t peak_memory_kb() {
  std::ifstream in("/proc/self/status");
  if (!in) return 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream ss(line.substr(6));
      size_t kb = 0;
      ss >> kb;
      return kb;
    }
  }
  return 0;
}

}  // namespace driftguard
