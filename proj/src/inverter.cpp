#include "cascade/inverter.hpp"

#include <cmath>

#include "cascade/error.hpp"

namespace cascade {

void InverterConfig::validate(int hop_length) const {
  if (channels.size() != upsample_factors.size() + 1) {
    throw ConfigError("inverter: channels must have one more entry than upsample_factors");
  }
  int prod = 1;
  for (int f : upsample_factors) {
    if (f < 2 || f % 2 != 0) throw ConfigError("inverter: upsample factors must be even and >= 2");
    prod *= f;
  }
  if (prod != hop_length) {
    throw ConfigError("inverter: product of upsample factors " + std::to_string(prod) +
                      " != hop_length " + std::to_string(hop_length));
  }
  for (int c : channels) {
    if (c < 1) throw ConfigError("inverter: channel counts must be positive");
  }
  if (mel_bins < 1 || cond_channels < 1 || num_residual_layers < 0) {
    throw ConfigError("inverter: bad mel_bins/cond_channels/residual layers");
  }
}

InverterConfig InverterConfig::desk() { return InverterConfig{}; }

InverterConfig InverterConfig::paper() {
  InverterConfig cfg;
  cfg.mel_bins = 128;
  cfg.channels = {256, 128, 64, 32};
  cfg.cond_channels = 64;
  return cfg;
}

MelInverter::MelInverter(const InverterConfig& cfg, int hop_length, uint64_t init_seed)
    : cfg_(cfg), hop_(hop_length) {
  cfg_.validate(hop_length);
  Rng rng(init_seed);
  pre_ = nn::Conv1d::create(store_, "inverter.pre", cfg.mel_bins, cfg.channels[0], 7, 1, 3, 1, rng);
  for (size_t s = 0; s < cfg.upsample_factors.size(); ++s) {
    const int f = cfg.upsample_factors[s];
    const int in_ch = cfg.channels[s];
    const int out_ch = cfg.channels[s + 1];
    ups_.push_back(nn::ConvTranspose1d::create(store_, "inverter.up" + std::to_string(s), in_ch,
                                               out_ch, 2 * f, f, f / 2, rng));
    std::vector<nn::Conv1d> stage_res;
    for (int j = 0; j < cfg.num_residual_layers; ++j) {
      const int dil = j == 0 ? 1 : 3 * j;
      stage_res.push_back(nn::Conv1d::create(
          store_, "inverter.res" + std::to_string(s) + "_" + std::to_string(j), out_ch, out_ch, 3,
          1, dil, dil, rng));
    }
    res_.push_back(std::move(stage_res));
    film_gamma_.push_back(nn::Linear::create(store_, "inverter.film_gamma" + std::to_string(s),
                                             cfg.cond_channels, out_ch, rng, 0.1));
    film_beta_.push_back(nn::Linear::create(store_, "inverter.film_beta" + std::to_string(s),
                                            cfg.cond_channels, out_ch, rng, 0.1));
  }
  cond1_ = nn::Conv1d::create(store_, "inverter.cond1", cfg.mel_bins, cfg.cond_channels, 3, 1, 1,
                              1, rng);
  cond2_ = nn::Conv1d::create(store_, "inverter.cond2", cfg.cond_channels, cfg.cond_channels, 3, 1,
                              1, 1, rng);
  post_ = nn::Conv1d::create(store_, "inverter.post", cfg.channels.back(), 1, 7, 1, 3, 1, rng);
}

Tensor MelInverter::forward(const Tensor& mel_norm, bool use_film) {
  if (mel_norm.rank() != 3 || mel_norm.dim(1) != cfg_.mel_bins) {
    throw DimensionError("inverter forward: mel " + shape_str(mel_norm.shape()) + " != [N," +
                         std::to_string(cfg_.mel_bins) + ",frames]");
  }
  const int64_t n = mel_norm.dim(0);

  // Global conditioning summary for the FiLM projections.
  Tensor cond = mean_axis1(transpose_12(
      cond2_.forward(leaky_relu(cond1_.forward(mel_norm), cfg_.leaky_slope))));  // [N, cond_ch]

  Tensor x = pre_.forward(mel_norm);
  for (size_t s = 0; s < ups_.size(); ++s) {
    x = ups_[s].forward(leaky_relu(x, cfg_.leaky_slope));
    for (const auto& conv : res_[s]) {
      x = add(x, conv.forward(leaky_relu(x, cfg_.leaky_slope)));
    }
    if (use_film) {
      x = film(x, film_gamma_[s].forward(cond), film_beta_[s].forward(cond));
    } else {
      Tensor zeros = Tensor::zeros({n, x.dim(1)});
      x = film(x, zeros, zeros);
    }
  }
  return tanh_op(post_.forward(leaky_relu(x, cfg_.leaky_slope)));
}

Waveform MelInverter::invert(const MelSpectrogram& mel, bool use_film) {
  if (mel.mel_bins != cfg_.mel_bins) {
    throw ConfigError("invert: mel has " + std::to_string(mel.mel_bins) + " bins, model expects " +
                      std::to_string(cfg_.mel_bins));
  }
  if (mel.config.hop_length != hop_) {
    throw ConfigError("invert: mel hop " + std::to_string(mel.config.hop_length) +
                      " != model hop " + std::to_string(hop_));
  }
  NoGradGuard ng;
  std::vector<double> data(mel.values.size());
  for (size_t i = 0; i < data.size(); ++i) data[i] = mel_to_unit(mel.values[i]);
  Tensor in = Tensor::from_data({1, mel.mel_bins, mel.frames}, std::move(data));
  Tensor out = forward(in, use_film);
  Waveform w;
  w.sample_rate = mel.config.sample_rate;
  w.samples = out.data();
  w.limit_peak();
  return w;
}

// ---------------------------------------------------------------------------
// differentiable spectral losses

SpectralBasis make_spectral_basis(int win, int hop) {
  SpectralBasis basis;
  basis.win = win;
  basis.hop = hop;
  basis.bins = win / 2 + 1;
  const auto window = hann_periodic(win);
  std::vector<double> cos_k(static_cast<size_t>(basis.bins) * win);
  std::vector<double> sin_k(static_cast<size_t>(basis.bins) * win);
  for (int b = 0; b < basis.bins; ++b) {
    for (int i = 0; i < win; ++i) {
      const double ang = 2.0 * 3.14159265358979323846 * b * i / static_cast<double>(win);
      cos_k[static_cast<size_t>(b) * win + i] = window[static_cast<size_t>(i)] * std::cos(ang);
      sin_k[static_cast<size_t>(b) * win + i] = -window[static_cast<size_t>(i)] * std::sin(ang);
    }
  }
  basis.cos_kernel = Tensor::from_data({basis.bins, 1, win}, std::move(cos_k));
  basis.sin_kernel = Tensor::from_data({basis.bins, 1, win}, std::move(sin_k));
  return basis;
}

Tensor spectral_magnitude(const Tensor& x, const SpectralBasis& basis) {
  Tensor re = conv1d(x, basis.cos_kernel, basis.hop, 0, 1);
  Tensor im = conv1d(x, basis.sin_kernel, basis.hop, 0, 1);
  return sqrt_op(add_scalar(add(mul(re, re), mul(im, im)), 1e-12));
}

Tensor multi_resolution_stft_loss(const Tensor& gen, const Tensor& target,
                                  const std::vector<SpectralBasis>& bases) {
  if (gen.shape() != target.shape()) {
    throw DimensionError("stft loss: shapes " + shape_str(gen.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  Tensor total;
  for (const auto& basis : bases) {
    Tensor mag_g = spectral_magnitude(gen, basis);
    Tensor mag_t = spectral_magnitude(target, basis);
    // Frobenius norm of the target is a constant.
    double t_norm = 0.0;
    for (double v : mag_t.data()) t_norm += v * v;
    t_norm = std::sqrt(std::max(t_norm, 1e-12));
    Tensor diff = sub(mag_g, mag_t);
    Tensor convergence =
        scale(sqrt_op(add_scalar(sum_all(mul(diff, diff)), 1e-12)), 1.0 / t_norm);
    Tensor log_l1 = l1_loss(log_op(clamp_min(mag_g, 1e-5)), log_op(clamp_min(mag_t, 1e-5)));
    Tensor term = add(convergence, log_l1);
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(bases.size()));
}

std::vector<SpectralBasis> default_loss_bases() {
  return {make_spectral_basis(512, 128), make_spectral_basis(1024, 256),
          make_spectral_basis(256, 64)};
}

}  // namespace cascade
