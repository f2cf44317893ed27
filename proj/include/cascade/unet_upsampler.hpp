#pragma once

#include <vector>

#include "cascade/nn.hpp"
#include "cascade/optim.hpp"
#include "cascade/tensor.hpp"

namespace cascade {

struct UpsamplerConfig {
  int num_blocks = 3;
  int convs_per_block = 2;
  int base_channels = 16;
  int lowres_bins = 8;
  int lowres_frames = 32;
  int target_bins = 32;
  int target_frames = 128;
  int time_embed_dim = 64;

  std::vector<int> channel_sequence() const;
  int factor() const;
  void validate() const;

  static UpsamplerConfig desk();
  static UpsamplerConfig paper();
};

// Super-resolution epsilon-predictor. Inputs are exactly {x_t, t, lowres};
// there is no text pathway. The low-res conditioning is nearest-upsampled
// and concatenated channel-wise with x_t.
class UpsamplerUNet {
 public:
  UpsamplerUNet(const UpsamplerConfig& cfg, uint64_t init_seed);

  const UpsamplerConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  Tensor forward(const Tensor& x_t, const std::vector<int>& ts, const Tensor& lowres);

 private:
  UpsamplerConfig cfg_;
  ParamStore store_;
  nn::TimeEmbedding time_embed_;
  nn::Conv2d in_conv_;
  std::vector<nn::ResBlock2d> enc_blocks_;
  nn::ResBlock2d mid_block1_, mid_block2_;
  std::vector<nn::ResBlock2d> dec_blocks_;
  nn::GroupNorm out_norm_;
  nn::Conv2d out_conv_;
};

}  // namespace cascade
