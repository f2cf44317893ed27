#include "cascade/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "cascade/error.hpp"

namespace cascade {

namespace {

constexpr double kPi = 3.14159265358979323846;

NoiseSchedule from_betas(std::vector<double> betas) {
  NoiseSchedule s;
  s.steps = static_cast<int>(betas.size());
  s.beta = std::move(betas);
  s.alpha.resize(s.beta.size());
  s.alpha_bar.resize(s.beta.size());
  double prod = 1.0;
  for (size_t i = 0; i < s.beta.size(); ++i) {
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule: steps must be >= 1");
  std::vector<double> betas(static_cast<size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    const double frac = steps > 1 ? static_cast<double>(t) / static_cast<double>(steps - 1) : 0.0;
    betas[static_cast<size_t>(t)] = beta_start + (beta_end - beta_start) * frac;
  }
  return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::cosine(int steps, double s) {
  if (steps < 1) throw ConfigError("schedule: steps must be >= 1");
  auto f = [s](double t) {
    const double v = std::cos((t + s) / (1.0 + s) * kPi / 2.0);
    return v * v;
  };
  const double f0 = f(0.0);
  std::vector<double> betas(static_cast<size_t>(steps));
  double prev_bar = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double bar = f(static_cast<double>(t) / steps) / f0;
    double beta = 1.0 - bar / prev_bar;
    beta = std::clamp(beta, 1e-9, 0.999);
    betas[static_cast<size_t>(t - 1)] = beta;
    prev_bar *= 1.0 - beta;
  }
  return from_betas(std::move(betas));
}

void NoiseSchedule::validate() const {
  if (steps < 2) throw ConfigError("schedule: need at least 2 steps");
  double prev_bar = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double b = beta[static_cast<size_t>(t)];
    if (!(b > 0.0 && b < 1.0)) {
      throw ConfigError("schedule: beta_" + std::to_string(t + 1) + " = " + std::to_string(b) +
                        " outside (0,1)");
    }
    if (!(alpha_bar[static_cast<size_t>(t)] < prev_bar)) {
      throw ConfigError("schedule: alpha_bar not strictly decreasing at t=" + std::to_string(t + 1));
    }
    prev_bar = alpha_bar[static_cast<size_t>(t)];
  }
  if (!(alpha_bar.back() < 0.05)) {
    throw ConfigError("schedule: alpha_bar_T = " + std::to_string(alpha_bar.back()) +
                      " >= 0.05, terminal corruption insufficient");
  }
}

NoiseSchedule make_schedule(ScheduleKind kind, int steps) {
  if (steps < 2) throw ConfigError("make_schedule: steps must be >= 2");
  NoiseSchedule s;
  if (kind == ScheduleKind::kCosine) {
    s = NoiseSchedule::cosine(steps);
  } else {
    // Endpoints calibrated for T=1000; rescale so total corruption is
    // T-independent, then clamp into (0,1).
    const double k = 1000.0 / static_cast<double>(steps);
    NoiseSchedule raw = NoiseSchedule::linear(steps, 1e-4 * k, 0.02 * k);
    for (auto& b : raw.beta) b = std::clamp(b, 1e-9, 0.999);
    s = from_betas(std::move(raw.beta));
  }
  s.validate();
  return s;
}

ScheduleKind schedule_kind_from_string(const std::string& str) {
  if (str == "linear") return ScheduleKind::kLinear;
  if (str == "cosine") return ScheduleKind::kCosine;
  throw ConfigError("unknown schedule kind: " + str);
}

void SamplerConfig::validate(int schedule_steps) const {
  if (guidance_scale < 0.0) throw ConfigError("sampler: guidance_scale must be >= 0");
  if (steps_used < 0 || steps_used > schedule_steps) {
    throw ConfigError("sampler: steps_used " + std::to_string(steps_used) +
                      " outside [0," + std::to_string(schedule_steps) + "]");
  }
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps) {
    throw DimensionError("q_sample: step index " + std::to_string(t) + " outside [1," +
                         std::to_string(sched.steps) + "]");
  }
  if (eps.shape() != x0.shape()) {
    throw DimensionError("q_sample: eps shape " + shape_str(eps.shape()) + " != x0 shape " +
                         shape_str(x0.shape()));
  }
  const double ab = sched.alpha_bar_at(t);
  return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w) {
  if (eps_cond.shape() != eps_uncond.shape()) {
    throw DimensionError("cfg_combine: shape mismatch " + shape_str(eps_cond.shape()) + " vs " +
                         shape_str(eps_uncond.shape()));
  }
  // Degenerate scales are identities, kept exact by construction.
  if (w == 1.0) return eps_cond;
  if (w == 0.0) return eps_uncond;
  return add(eps_uncond, scale(sub(eps_cond, eps_uncond), w));
}

Tensor diffusion_training_loss(const DenoiseFn& model, const Tensor& x0,
                               const NoiseSchedule& sched, uint64_t rng_key, uint64_t step) {
  const int64_t batch = x0.dim(0);
  const int64_t per = x0.numel() / batch;
  const uint64_t step_key = rngmix::mix3(rng_key, 0xD1FFu, step);

  std::vector<int> ts(static_cast<size_t>(batch));
  for (int64_t n = 0; n < batch; ++n) {
    ts[static_cast<size_t>(n)] = 1 + static_cast<int>(rngmix::mix3(step_key, 0x7u, static_cast<uint64_t>(n)) %
                                                      static_cast<uint64_t>(sched.steps));
  }
  std::vector<double> eps_data(static_cast<size_t>(x0.numel()));
  std::vector<double> xt_data(static_cast<size_t>(x0.numel()));
  for (int64_t n = 0; n < batch; ++n) {
    const double ab = sched.alpha_bar_at(ts[static_cast<size_t>(n)]);
    const double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    const uint64_t sample_key = rngmix::mix2(step_key, static_cast<uint64_t>(n) + 0x1000u);
    for (int64_t i = 0; i < per; ++i) {
      const double e = counter_normal(sample_key, static_cast<uint64_t>(i));
      eps_data[static_cast<size_t>(n * per + i)] = e;
      xt_data[static_cast<size_t>(n * per + i)] = c0 * x0.data()[static_cast<size_t>(n * per + i)] + c1 * e;
    }
  }
  Tensor eps = Tensor::from_data(x0.shape(), std::move(eps_data));
  Tensor x_t = Tensor::from_data(x0.shape(), std::move(xt_data));
  Tensor pred = model(x_t, ts);
  if (pred.shape() != x0.shape()) {
    throw DimensionError("training loss: model output " + shape_str(pred.shape()) +
                         " != input " + shape_str(x0.shape()));
  }
  return mse_loss(pred, eps);
}

Tensor sample_loop(const DenoiseFn& cond, const DenoiseFn& uncond, const Shape& shape,
                   const NoiseSchedule& sched, const SamplerConfig& sampler) {
  sampler.validate(sched.steps);
  const int used = sampler.steps_used == 0 ? sched.steps : sampler.steps_used;
  const double w = sampler.guidance_scale;
  if (w != 1.0 && !uncond) {
    throw StateError("sample_loop: guidance_scale != 1 requires an unconditional branch");
  }

  // Respaced subsequence tau_1 < ... < tau_used of 1..T.
  std::vector<int> taus;
  taus.reserve(static_cast<size_t>(used));
  if (used == sched.steps) {
    for (int t = 1; t <= sched.steps; ++t) taus.push_back(t);
  } else {
    for (int i = 0; i < used; ++i) {
      const double frac = used > 1 ? static_cast<double>(i) / (used - 1) : 1.0;
      int t = 1 + static_cast<int>(std::lround(frac * (sched.steps - 1)));
      if (!taus.empty() && t <= taus.back()) t = taus.back() + 1;
      taus.push_back(std::min(t, sched.steps));
    }
  }
  const int k_steps = static_cast<int>(taus.size());

  const int64_t n_elems = shape_numel(shape);
  const int64_t batch = shape.empty() ? 1 : shape[0];
  const uint64_t seed_key = rngmix::mix2(sampler.seed, 0x5A11u);

  std::vector<double> x(static_cast<size_t>(n_elems));
  for (int64_t i = 0; i < n_elems; ++i) {
    x[static_cast<size_t>(i)] = counter_normal(seed_key, static_cast<uint64_t>(i));
  }

  NoGradGuard ng;
  for (int i = k_steps; i >= 1; --i) {
    const int t = taus[static_cast<size_t>(i - 1)];
    const double ab = sched.alpha_bar_at(t);
    const double ab_prev = i > 1 ? sched.alpha_bar_at(taus[static_cast<size_t>(i - 2)]) : 1.0;
    const double beta_eff = 1.0 - ab / ab_prev;
    const double alpha_eff = 1.0 - beta_eff;

    Tensor x_t = Tensor::from_data(shape, x);
    std::vector<int> ts(static_cast<size_t>(batch), t);
    Tensor eps = cond(x_t, ts);
    if (eps.shape() != shape) {
      throw DimensionError("sample_loop: model output " + shape_str(eps.shape()) +
                           " != requested " + shape_str(shape));
    }
    if (w != 1.0) {
      Tensor eps_u = uncond(x_t, ts);
      eps = cfg_combine(eps, eps_u, w);
    }

    const double c_eps = beta_eff / std::sqrt(1.0 - ab);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha_eff);
    const double sigma =
        i > 1 ? std::sqrt(std::max(0.0, (1.0 - ab_prev) / (1.0 - ab) * beta_eff)) : 0.0;
    const uint64_t step_key = rngmix::mix3(seed_key, 0x57E9u, static_cast<uint64_t>(i));
    for (int64_t j = 0; j < n_elems; ++j) {
      double mean = inv_sqrt_alpha * (x[static_cast<size_t>(j)] -
                                      c_eps * eps.data()[static_cast<size_t>(j)]);
      if (i > 1) {
        mean += sigma * counter_normal(step_key, static_cast<uint64_t>(j));
      }
      x[static_cast<size_t>(j)] = mean;
    }
  }
  return Tensor::from_data(shape, std::move(x));
}

}  // namespace cascade
