#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cascade/nn.hpp"
#include "cascade/optim.hpp"
#include "cascade/prompt.hpp"
#include "cascade/tensor.hpp"

namespace cascade {

struct ArchitectureConfig {
  int num_blocks = 3;
  int convs_per_block = 2;
  int base_channels = 16;
  int lowres_bins = 8;
  int lowres_frames = 32;
  int target_bins = 32;
  int target_frames = 128;
  int text_dim = 64;
  int time_embed_dim = 64;
  int text_layers = 2;
  int text_max_len = 16;

  // base, 2*base, ... under linear growth
  std::vector<int> channel_sequence() const;
  // integer reduction factor between target and lowres, equal on both axes
  int pool_factor() const;
  void validate() const;

  static ArchitectureConfig desk();
  static ArchitectureConfig paper();
};

// Text-conditioned epsilon-predictor over low-resolution spectrograms.
// Encoder blocks halve resolution, the decoder mirrors them with skip
// connections, text enters through cross-attention at the two lowest
// resolutions and through the pooled embedding added to the time features.
class LowresUNet {
 public:
  LowresUNet(const ArchitectureConfig& cfg, const PromptCorpus& corpus, uint64_t init_seed);

  const ArchitectureConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const TextEncoder& text_encoder() const { return text_; }

  // x_t [N,1,bins,frames], per-sample timesteps, token batch (already
  // reflecting any classifier-free dropout via <null> rows).
  Tensor forward(const Tensor& x_t, const std::vector<int>& ts, const TextBatch& text);

 private:
  ArchitectureConfig cfg_;
  ParamStore store_;
  TextEncoder text_;
  nn::TimeEmbedding time_embed_;
  nn::Linear pooled_proj_;
  nn::Conv2d in_conv_;
  std::vector<nn::ResBlock2d> enc_blocks_;
  nn::ResBlock2d mid_block1_, mid_block2_;
  nn::CrossAttention2d mid_attn_, dec_attn_;
  std::vector<nn::ResBlock2d> dec_blocks_;  // deepest first
  nn::GroupNorm out_norm_;
  nn::Conv2d out_conv_;
};

}  // namespace cascade
