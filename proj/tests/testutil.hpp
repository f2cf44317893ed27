#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <vector>

#include "cascade/rng.hpp"
#include "cascade/tensor.hpp"

namespace testutil {

// Central finite-difference gradient check against the tape.
// loss_fn must build a fresh scalar graph from the current contents of the
// probed tensors each call. Returns the max relative error over probed
// elements; probe step h = 1e-4 unless overridden.
inline double max_grad_rel_error(const std::function<cascade::Tensor()>& loss_fn,
                                 std::vector<cascade::Tensor> probes, cascade::Rng& rng,
                                 int probes_per_tensor = 12, double h = 1e-4) {
  for (auto& t : probes) t.zero_grad();
  cascade::Tensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(probes.size());
  for (auto& t : probes) analytic.push_back(t.grad());

  double worst = 0.0;
  for (size_t pi = 0; pi < probes.size(); ++pi) {
    auto& t = probes[pi];
    const int64_t n = t.numel();
    const int count = static_cast<int>(std::min<int64_t>(n, probes_per_tensor));
    for (int c = 0; c < count; ++c) {
      const int64_t idx =
          (n <= probes_per_tensor) ? c : static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
      const double saved = t.data()[static_cast<size_t>(idx)];
      double fd;
      {
        cascade::NoGradGuard ng;
        auto eval_at = [&](double v) {
          t.mutable_data()[static_cast<size_t>(idx)] = v;
          return loss_fn().item();
        };
        // Richardson-extrapolated central differences at h and h/2.
        const double d_h = (eval_at(saved + h) - eval_at(saved - h)) / (2.0 * h);
        const double d_h2 = (eval_at(saved + h / 2) - eval_at(saved - h / 2)) / h;
        t.mutable_data()[static_cast<size_t>(idx)] = saved;
        fd = (4.0 * d_h2 - d_h) / 3.0;
      }
      const double an = analytic[pi][static_cast<size_t>(idx)];
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-3});
      worst = std::max(worst, std::fabs(fd - an) / denom);
    }
  }
  return worst;
}

inline bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace testutil
