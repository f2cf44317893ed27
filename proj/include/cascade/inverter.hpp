#pragma once

#include <vector>

#include "cascade/dsp.hpp"
#include "cascade/nn.hpp"
#include "cascade/optim.hpp"
#include "cascade/tensor.hpp"

namespace cascade {

struct InverterConfig {
  std::vector<int> upsample_factors = {8, 4, 4};  // product must equal hop_length
  std::vector<int> channels = {48, 32, 16, 8};    // one per stage boundary
  int num_residual_layers = 2;
  int mel_bins = 32;
  int cond_channels = 24;
  double leaky_slope = 0.1;

  void validate(int hop_length) const;
  static InverterConfig desk();
  static InverterConfig paper();
};

// Transposed-convolution upsampling stack from log-mel frames to waveform
// samples, with FiLM parameters predicted from the input mel and applied
// residually after every stage. Reconstruction-loss training only; the
// adversarial side of the lineage is out of scope here.
class MelInverter {
 public:
  MelInverter(const InverterConfig& cfg, int hop_length, uint64_t init_seed);

  const InverterConfig& config() const { return cfg_; }
  int hop_length() const { return hop_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // mel_norm [N, mel_bins, frames] in model space -> waveform [N, 1,
  // frames*hop]. use_film=false zeroes the modulation branch (ablation).
  Tensor forward(const Tensor& mel_norm, bool use_film = true);

  // Full-clip inference from a log-mel spectrogram.
  Waveform invert(const MelSpectrogram& mel, bool use_film = true);

 private:
  InverterConfig cfg_;
  int hop_ = 0;
  ParamStore store_;
  nn::Conv1d pre_;
  std::vector<nn::ConvTranspose1d> ups_;
  std::vector<std::vector<nn::Conv1d>> res_;  // [stage][residual layer]
  nn::Conv1d cond1_, cond2_;
  std::vector<nn::Linear> film_gamma_, film_beta_;
  nn::Conv1d post_;
};

// Fixed windowed-DFT bases so spectral losses stay inside the autodiff
// graph (conv1d with constant kernels).
struct SpectralBasis {
  Tensor cos_kernel;  // [bins, 1, win]
  Tensor sin_kernel;
  int win = 0, hop = 0, bins = 0;
};

SpectralBasis make_spectral_basis(int win, int hop);

// |STFT| of x [N,1,L] -> [N, bins, frames], differentiable in x.
Tensor spectral_magnitude(const Tensor& x, const SpectralBasis& basis);

// Spectral convergence + log-magnitude L1 summed over the given bases,
// plus log-mel L1 under the filterbank of cfg. target is treated as
// constant.
Tensor multi_resolution_stft_loss(const Tensor& gen, const Tensor& target,
                                  const std::vector<SpectralBasis>& bases);

std::vector<SpectralBasis> default_loss_bases();

}  // namespace cascade
