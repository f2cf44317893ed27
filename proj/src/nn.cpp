#include "cascade/nn.hpp"

#include <cmath>

namespace cascade {
namespace nn {

int pick_groups(int channels) {
  for (int g = 8; g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

Conv2d Conv2d::create(ParamStore& store, const std::string& name, int in_ch, int out_ch,
                      int kernel, int stride, int padding, Rng& rng, double weight_scale) {
  Conv2d layer;
  const double std_dev = weight_scale * std::sqrt(2.0 / (in_ch * kernel * kernel));
  layer.weight = store.add(name + ".weight",
                           Tensor::randn({out_ch, in_ch, kernel, kernel}, rng, std_dev));
  layer.bias = store.add(name + ".bias", Tensor::zeros({out_ch}));
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Tensor Conv2d::forward(const Tensor& x) const {
  return add_channel_bias(conv2d(x, weight, stride, padding), bias);
}

Conv1d Conv1d::create(ParamStore& store, const std::string& name, int in_ch, int out_ch,
                      int kernel, int stride, int padding, int dilation, Rng& rng) {
  Conv1d layer;
  const double std_dev = std::sqrt(2.0 / (in_ch * kernel));
  layer.weight = store.add(name + ".weight", Tensor::randn({out_ch, in_ch, kernel}, rng, std_dev));
  layer.bias = store.add(name + ".bias", Tensor::zeros({out_ch}));
  layer.stride = stride;
  layer.padding = padding;
  layer.dilation = dilation;
  return layer;
}

Tensor Conv1d::forward(const Tensor& x) const {
  return add_channel_bias(conv1d(x, weight, stride, padding, dilation), bias);
}

ConvTranspose1d ConvTranspose1d::create(ParamStore& store, const std::string& name, int in_ch,
                                        int out_ch, int kernel, int stride, int padding,
                                        Rng& rng) {
  ConvTranspose1d layer;
  const double std_dev = std::sqrt(2.0 / (in_ch * kernel / std::max(1, stride)));
  layer.weight = store.add(name + ".weight", Tensor::randn({in_ch, out_ch, kernel}, rng, std_dev));
  layer.bias = store.add(name + ".bias", Tensor::zeros({out_ch}));
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Tensor ConvTranspose1d::forward(const Tensor& x) const {
  return add_channel_bias(conv_transpose1d(x, weight, stride, padding), bias);
}

Linear Linear::create(ParamStore& store, const std::string& name, int in_dim, int out_dim,
                      Rng& rng, double weight_scale) {
  Linear layer;
  const double std_dev = weight_scale * std::sqrt(1.0 / in_dim);
  layer.weight = store.add(name + ".weight", Tensor::randn({in_dim, out_dim}, rng, std_dev));
  layer.bias = store.add(name + ".bias", Tensor::zeros({out_dim}));
  return layer;
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight, bias); }

GroupNorm GroupNorm::create(ParamStore& store, const std::string& name, int channels) {
  GroupNorm layer;
  layer.gain = store.add(name + ".gain", Tensor::full({channels}, 1.0));
  layer.bias = store.add(name + ".bias", Tensor::zeros({channels}));
  layer.groups = pick_groups(channels);
  return layer;
}

Tensor GroupNorm::forward(const Tensor& x) const { return group_norm(x, groups, gain, bias); }

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, int dim) {
  LayerNorm layer;
  layer.gain = store.add(name + ".gain", Tensor::full({dim}, 1.0));
  layer.bias = store.add(name + ".bias", Tensor::zeros({dim}));
  return layer;
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

ResBlock2d ResBlock2d::create(ParamStore& store, const std::string& name, int in_ch, int out_ch,
                              int convs_per_block, int time_dim, Rng& rng) {
  ResBlock2d block;
  int ch = in_ch;
  for (int i = 0; i < convs_per_block; ++i) {
    block.norms.push_back(GroupNorm::create(store, name + ".norm" + std::to_string(i), ch));
    block.convs.push_back(
        Conv2d::create(store, name + ".conv" + std::to_string(i), ch, out_ch, 3, 1, 1, rng));
    ch = out_ch;
  }
  block.time_proj = Linear::create(store, name + ".time_proj", time_dim, out_ch, rng);
  if (in_ch != out_ch) {
    block.skip = Conv2d::create(store, name + ".skip", in_ch, out_ch, 1, 1, 0, rng);
    block.has_skip = true;
  }
  return block;
}

Tensor ResBlock2d::forward(const Tensor& x, const Tensor& time_features) const {
  Tensor h = x;
  for (size_t i = 0; i < convs.size(); ++i) {
    h = convs[i].forward(silu(norms[i].forward(h)));
    if (i == 0) h = add_sample_bias(h, time_proj.forward(silu(time_features)));
  }
  Tensor res = has_skip ? skip.forward(x) : x;
  return add(h, res);
}

CrossAttention2d CrossAttention2d::create(ParamStore& store, const std::string& name, int channels,
                                          int cond_dim, Rng& rng) {
  CrossAttention2d attn;
  attn.norm = GroupNorm::create(store, name + ".norm", channels);
  attn.to_q = Linear::create(store, name + ".to_q", channels, channels, rng);
  attn.to_k = Linear::create(store, name + ".to_k", cond_dim, channels, rng);
  attn.to_v = Linear::create(store, name + ".to_v", cond_dim, channels, rng);
  attn.to_out = Linear::create(store, name + ".to_out", channels, channels, rng, 0.2);
  return attn;
}

Tensor CrossAttention2d::forward(const Tensor& x, const Tensor& cond_seq,
                                 const Tensor& key_bias) const {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor h = norm.forward(x);
  Tensor tokens = transpose_12(reshape(h, {N, C, H * W}));  // [N, HW, C]
  Tensor q = to_q.forward(tokens);
  Tensor k = to_k.forward(cond_seq);
  Tensor v = to_v.forward(cond_seq);
  Tensor attended = to_out.forward(attention(q, k, v, key_bias));
  Tensor back = reshape(transpose_12(attended), {N, C, H, W});
  return add(x, back);
}

TimeEmbedding TimeEmbedding::create(ParamStore& store, const std::string& name, int dim,
                                    Rng& rng) {
  TimeEmbedding emb;
  emb.dim = dim;
  emb.fc1 = Linear::create(store, name + ".fc1", dim, dim, rng);
  emb.fc2 = Linear::create(store, name + ".fc2", dim, dim, rng);
  return emb;
}

Tensor TimeEmbedding::forward(const std::vector<int>& t) const {
  return fc2.forward(silu(fc1.forward(timestep_embedding(t, dim))));
}

}  // namespace nn
}  // namespace cascade
