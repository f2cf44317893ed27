#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cascade/rng.hpp"
#include "cascade/tensor.hpp"

namespace cascade {

// Per-step coefficients of the forward noising process. Arrays are
// 0-indexed internally; step arguments t are 1-based (1..T) to match the
// usual recurrence notation.
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;      // 1 - beta_t
  std::vector<double> alpha_bar;  // prod_{s<=t} alpha_s

  double beta_at(int t) const { return beta[static_cast<size_t>(t - 1)]; }
  double alpha_at(int t) const { return alpha[static_cast<size_t>(t - 1)]; }
  double alpha_bar_at(int t) const { return alpha_bar[static_cast<size_t>(t - 1)]; }
  // alpha_bar_{t-1} with the t=1 convention of 1.
  double alpha_bar_prev(int t) const {
    return t > 1 ? alpha_bar[static_cast<size_t>(t - 2)] : 1.0;
  }

  // Raw constructors; no invariant validation (tests exercise arbitrary
  // endpoint choices). make_schedule() validates.
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  static NoiseSchedule cosine(int steps, double s = 0.008);

  // Throws ConfigError when 0<beta<1, strict alpha_bar decrease, or
  // alpha_bar_T < 0.05 fails.
  void validate() const;
};

enum class ScheduleKind { kLinear, kCosine };

// Canonical schedule: cosine as-is; linear with endpoints 1e-4..0.02
// scaled by 1000/T so terminal corruption stays near-total at small T.
// Always validated.
NoiseSchedule make_schedule(ScheduleKind kind, int steps);
ScheduleKind schedule_kind_from_string(const std::string& s);

struct SamplerConfig {
  double guidance_scale = 1.0;  // w; 1 = conditional model only
  uint64_t seed = 0;
  int steps_used = 0;  // 0 or schedule.steps = full schedule; fewer = respaced

  void validate(int schedule_steps) const;
};

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// eps_uncond + w (eps_cond - eps_uncond)
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w);

// Model adapter: conditioning is bound into the closure by the caller.
using DenoiseFn = std::function<Tensor(const Tensor& x_t, const std::vector<int>& t)>;

// One epsilon-MSE training step over a batch x0 [N,...]: draws per-sample
// t and noise from (rng_key, step), runs model, returns the scalar loss
// tensor (caller backpropagates). Throws NumericalError on non-finite loss.
Tensor diffusion_training_loss(const DenoiseFn& model, const Tensor& x0,
                               const NoiseSchedule& sched, uint64_t rng_key, uint64_t step);

// Ancestral DDPM sampling from pure noise down to x_0, deterministic per
// sampler.seed. uncond may be empty when sampler.guidance_scale == 1.
Tensor sample_loop(const DenoiseFn& cond, const DenoiseFn& uncond, const Shape& shape,
                   const NoiseSchedule& sched, const SamplerConfig& sampler);

}  // namespace cascade
