#pragma once

#include <functional>
#include <vector>

#include "driftguard/tensor.hpp"

namespace driftguard {

// Central-difference gradient verification. `f` must rebuild its graph from
// the current parameter values on every call and return a scalar loss.
// Returns the max over checked coordinates of |analytic - numeric| /
// max(1e-8, |numeric|). When max_coords_per_tensor > 0 a deterministic
// random subset of coordinates is checked per tensor (exhaustive sweeps of
// a full model are quadratic in parameter count and not affordable).
template <typename T>
double grad_check(const std::function<TensorT<T>()>& f,
                  std::vector<TensorT<T>> params, T eps,
                  int max_coords_per_tensor = -1, uint64_t seed = 17) {
  if (eps < T(1e-5) || eps > T(1e-2)) fail("grad_check: eps must be in [1e-5,1e-2]");

  for (auto& p : params) p.zero_grad();
  TensorT<T> loss = f();
  loss.backward();

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  Rng rng(seed);
  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values();
    std::vector<size_t> coords;
    if (max_coords_per_tensor > 0 &&
        vals.size() > static_cast<size_t>(max_coords_per_tensor)) {
      coords = rng.sample_without_replacement(
          vals.size(), static_cast<size_t>(max_coords_per_tensor));
    } else {
      coords.resize(vals.size());
      for (size_t i = 0; i < vals.size(); ++i) coords[i] = i;
    }
    for (size_t c : coords) {
      const T saved = vals[c];
      vals[c] = saved + eps;
      const double fp = static_cast<double>(f().item());
      vals[c] = saved - eps;
      const double fm = static_cast<double>(f().item());
      vals[c] = saved;
      const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[pi][c]);
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace driftguard
