#include "cascade/unet_lowres.hpp"

#include "cascade/error.hpp"

namespace cascade {

std::vector<int> ArchitectureConfig::channel_sequence() const {
  std::vector<int> seq(static_cast<size_t>(num_blocks));
  for (int i = 0; i < num_blocks; ++i) seq[static_cast<size_t>(i)] = base_channels * (i + 1);
  return seq;
}

int ArchitectureConfig::pool_factor() const {
  if (lowres_bins <= 0 || lowres_frames <= 0 || target_bins % lowres_bins != 0 ||
      target_frames % lowres_frames != 0 ||
      target_bins / lowres_bins != target_frames / lowres_frames) {
    throw ConfigError("arch: target shape " + std::to_string(target_bins) + "x" +
                      std::to_string(target_frames) + " is not an integer multiple of lowres " +
                      std::to_string(lowres_bins) + "x" + std::to_string(lowres_frames));
  }
  return target_bins / lowres_bins;
}

void ArchitectureConfig::validate() const {
  if (num_blocks < 1 || convs_per_block < 1 || base_channels < 1) {
    throw ConfigError("arch: blocks/convs/channels must be positive");
  }
  pool_factor();
  const int div = 1 << num_blocks;
  if (lowres_bins % div != 0 || lowres_frames % div != 0) {
    throw ConfigError("arch: lowres shape " + std::to_string(lowres_bins) + "x" +
                      std::to_string(lowres_frames) + " not divisible by 2^" +
                      std::to_string(num_blocks));
  }
  if (text_dim < 1 || time_embed_dim < 2 || time_embed_dim % 2 != 0) {
    throw ConfigError("arch: bad embedding dims");
  }
}

ArchitectureConfig ArchitectureConfig::desk() { return ArchitectureConfig{}; }

ArchitectureConfig ArchitectureConfig::paper() {
  ArchitectureConfig cfg;
  cfg.num_blocks = 5;
  cfg.convs_per_block = 2;
  cfg.base_channels = 192;
  cfg.lowres_bins = 32;
  cfg.lowres_frames = 128;
  cfg.target_bins = 128;
  cfg.target_frames = 512;
  cfg.text_dim = 512;
  cfg.time_embed_dim = 512;
  return cfg;
}

LowresUNet::LowresUNet(const ArchitectureConfig& cfg, const PromptCorpus& corpus,
                       uint64_t init_seed)
    : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);
  text_ = TextEncoder(store_, "lowres.text", corpus.vocab_size(), cfg.text_dim, cfg.text_layers,
                      cfg.text_max_len, rng);
  time_embed_ = nn::TimeEmbedding::create(store_, "lowres.time", cfg.time_embed_dim, rng);
  pooled_proj_ = nn::Linear::create(store_, "lowres.pooled_proj", cfg.text_dim,
                                    cfg.time_embed_dim, rng);

  const auto chans = cfg.channel_sequence();
  in_conv_ = nn::Conv2d::create(store_, "lowres.in_conv", 1, chans[0], 3, 1, 1, rng);
  int ch = chans[0];
  for (int i = 0; i < cfg.num_blocks; ++i) {
    enc_blocks_.push_back(nn::ResBlock2d::create(store_, "lowres.enc" + std::to_string(i), ch,
                                                 chans[static_cast<size_t>(i)],
                                                 cfg.convs_per_block, cfg.time_embed_dim, rng));
    ch = chans[static_cast<size_t>(i)];
  }
  mid_block1_ = nn::ResBlock2d::create(store_, "lowres.mid1", ch, ch, cfg.convs_per_block,
                                       cfg.time_embed_dim, rng);
  mid_attn_ = nn::CrossAttention2d::create(store_, "lowres.mid_attn", ch, cfg.text_dim, rng);
  mid_block2_ = nn::ResBlock2d::create(store_, "lowres.mid2", ch, ch, cfg.convs_per_block,
                                       cfg.time_embed_dim, rng);

  for (int i = cfg.num_blocks - 1; i >= 0; --i) {
    const int out_ch = chans[static_cast<size_t>(i)];
    // input: upsampled deeper features concatenated with the skip
    dec_blocks_.push_back(nn::ResBlock2d::create(store_, "lowres.dec" + std::to_string(i),
                                                 ch + out_ch, out_ch, cfg.convs_per_block,
                                                 cfg.time_embed_dim, rng));
    if (i == cfg.num_blocks - 1) {
      dec_attn_ = nn::CrossAttention2d::create(store_, "lowres.dec_attn", out_ch, cfg.text_dim,
                                               rng);
    }
    ch = out_ch;
  }
  out_norm_ = nn::GroupNorm::create(store_, "lowres.out_norm", ch);
  out_conv_ = nn::Conv2d::create(store_, "lowres.out_conv", ch, 1, 3, 1, 1, rng, 0.05);
}

Tensor LowresUNet::forward(const Tensor& x_t, const std::vector<int>& ts, const TextBatch& text) {
  if (x_t.rank() != 4 || x_t.dim(1) != 1 || x_t.dim(2) != cfg_.lowres_bins ||
      x_t.dim(3) != cfg_.lowres_frames) {
    throw DimensionError("lowres forward: input " + shape_str(x_t.shape()) + " != [N,1," +
                         std::to_string(cfg_.lowres_bins) + "," +
                         std::to_string(cfg_.lowres_frames) + "]");
  }
  if (static_cast<int64_t>(ts.size()) != x_t.dim(0) ||
      static_cast<int64_t>(text.ids.size()) != x_t.dim(0)) {
    throw DimensionError("lowres forward: batch size mismatch between x_t, t, and text");
  }
  auto [text_seq, pooled] = text_.encode_batch(text);
  Tensor t_feat = add(time_embed_.forward(ts), pooled_proj_.forward(pooled));

  Tensor x = in_conv_.forward(x_t);
  std::vector<Tensor> skips;
  for (auto& block : enc_blocks_) {
    x = block.forward(x, t_feat);
    skips.push_back(x);
    x = avg_pool2d(x, 2);
  }
  x = mid_block1_.forward(x, t_feat);
  x = mid_attn_.forward(x, text_seq,
                        text.key_bias(static_cast<int>(x.dim(2) * x.dim(3))));
  x = mid_block2_.forward(x, t_feat);

  for (size_t d = 0; d < dec_blocks_.size(); ++d) {
    x = upsample_nearest2d(x, 2);
    x = concat_channels(x, skips[skips.size() - 1 - d]);
    x = dec_blocks_[d].forward(x, t_feat);
    if (d == 0) {
      x = dec_attn_.forward(x, text_seq,
                            text.key_bias(static_cast<int>(x.dim(2) * x.dim(3))));
    }
  }
  return out_conv_.forward(silu(out_norm_.forward(x)));
}

}  // namespace cascade
