#include "cascade/unet_upsampler.hpp"

#include "cascade/error.hpp"

namespace cascade {

std::vector<int> UpsamplerConfig::channel_sequence() const {
  std::vector<int> seq(static_cast<size_t>(num_blocks));
  for (int i = 0; i < num_blocks; ++i) seq[static_cast<size_t>(i)] = base_channels * (i + 1);
  return seq;
}

int UpsamplerConfig::factor() const {
  if (lowres_bins <= 0 || lowres_frames <= 0 || target_bins % lowres_bins != 0 ||
      target_frames % lowres_frames != 0 ||
      target_bins / lowres_bins != target_frames / lowres_frames) {
    throw ConfigError("upsampler: target " + std::to_string(target_bins) + "x" +
                      std::to_string(target_frames) + " is not an integer multiple of lowres " +
                      std::to_string(lowres_bins) + "x" + std::to_string(lowres_frames));
  }
  return target_bins / lowres_bins;
}

void UpsamplerConfig::validate() const {
  if (num_blocks < 1 || convs_per_block < 1 || base_channels < 1) {
    throw ConfigError("upsampler: blocks/convs/channels must be positive");
  }
  factor();
  const int div = 1 << num_blocks;
  if (target_bins % div != 0 || target_frames % div != 0) {
    throw ConfigError("upsampler: target shape " + std::to_string(target_bins) + "x" +
                      std::to_string(target_frames) + " not divisible by 2^" +
                      std::to_string(num_blocks));
  }
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
    throw ConfigError("upsampler: bad time_embed_dim");
  }
}

UpsamplerConfig UpsamplerConfig::desk() { return UpsamplerConfig{}; }

UpsamplerConfig UpsamplerConfig::paper() {
  UpsamplerConfig cfg;
  cfg.num_blocks = 4;
  cfg.base_channels = 128;
  cfg.lowres_bins = 32;
  cfg.lowres_frames = 128;
  cfg.target_bins = 128;
  cfg.target_frames = 512;
  cfg.time_embed_dim = 512;
  return cfg;
}

UpsamplerUNet::UpsamplerUNet(const UpsamplerConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);
  time_embed_ = nn::TimeEmbedding::create(store_, "upsampler.time", cfg.time_embed_dim, rng);
  const auto chans = cfg.channel_sequence();
  in_conv_ = nn::Conv2d::create(store_, "upsampler.in_conv", 2, chans[0], 3, 1, 1, rng);
  int ch = chans[0];
  for (int i = 0; i < cfg.num_blocks; ++i) {
    enc_blocks_.push_back(nn::ResBlock2d::create(store_, "upsampler.enc" + std::to_string(i), ch,
                                                 chans[static_cast<size_t>(i)],
                                                 cfg.convs_per_block, cfg.time_embed_dim, rng));
    ch = chans[static_cast<size_t>(i)];
  }
  mid_block1_ = nn::ResBlock2d::create(store_, "upsampler.mid1", ch, ch, cfg.convs_per_block,
                                       cfg.time_embed_dim, rng);
  mid_block2_ = nn::ResBlock2d::create(store_, "upsampler.mid2", ch, ch, cfg.convs_per_block,
                                       cfg.time_embed_dim, rng);
  for (int i = cfg.num_blocks - 1; i >= 0; --i) {
    const int out_ch = chans[static_cast<size_t>(i)];
    dec_blocks_.push_back(nn::ResBlock2d::create(store_, "upsampler.dec" + std::to_string(i),
                                                 ch + out_ch, out_ch, cfg.convs_per_block,
                                                 cfg.time_embed_dim, rng));
    ch = out_ch;
  }
  out_norm_ = nn::GroupNorm::create(store_, "upsampler.out_norm", ch);
  out_conv_ = nn::Conv2d::create(store_, "upsampler.out_conv", ch, 1, 3, 1, 1, rng, 0.05);
}

Tensor UpsamplerUNet::forward(const Tensor& x_t, const std::vector<int>& ts,
                              const Tensor& lowres) {
  if (x_t.rank() != 4 || x_t.dim(1) != 1 || x_t.dim(2) != cfg_.target_bins ||
      x_t.dim(3) != cfg_.target_frames) {
    throw DimensionError("upsampler forward: x_t " + shape_str(x_t.shape()) + " != [N,1," +
                         std::to_string(cfg_.target_bins) + "," +
                         std::to_string(cfg_.target_frames) + "]");
  }
  const int f = cfg_.factor();
  if (lowres.rank() != 4 || lowres.dim(0) != x_t.dim(0) || lowres.dim(1) != 1 ||
      lowres.dim(2) * f != cfg_.target_bins || lowres.dim(3) * f != cfg_.target_frames) {
    throw DimensionError("upsampler forward: lowres " + shape_str(lowres.shape()) +
                         " does not match target/" + std::to_string(f));
  }
  if (static_cast<int64_t>(ts.size()) != x_t.dim(0)) {
    throw DimensionError("upsampler forward: t batch mismatch");
  }
  Tensor t_feat = time_embed_.forward(ts);
  Tensor x = in_conv_.forward(concat_channels(x_t, upsample_nearest2d(lowres, f)));
  std::vector<Tensor> skips;
  for (auto& block : enc_blocks_) {
    x = block.forward(x, t_feat);
    skips.push_back(x);
    x = avg_pool2d(x, 2);
  }
  x = mid_block1_.forward(x, t_feat);
  x = mid_block2_.forward(x, t_feat);
  for (size_t d = 0; d < dec_blocks_.size(); ++d) {
    x = upsample_nearest2d(x, 2);
    x = concat_channels(x, skips[skips.size() - 1 - d]);
    x = dec_blocks_[d].forward(x, t_feat);
  }
  return out_conv_.forward(silu(out_norm_.forward(x)));
}

}  // namespace cascade
