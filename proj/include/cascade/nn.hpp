#pragma once

#include <string>
#include <vector>

#include "cascade/optim.hpp"
#include "cascade/tensor.hpp"

namespace cascade {
namespace nn {

// Largest group count <= 8 dividing the channel count.
int pick_groups(int channels);

struct Conv2d {
  Tensor weight, bias;
  int stride = 1, padding = 1;

  static Conv2d create(ParamStore& store, const std::string& name, int in_ch, int out_ch,
                       int kernel, int stride, int padding, Rng& rng, double weight_scale = 1.0);
  Tensor forward(const Tensor& x) const;
};

struct Conv1d {
  Tensor weight, bias;
  int stride = 1, padding = 0, dilation = 1;

  static Conv1d create(ParamStore& store, const std::string& name, int in_ch, int out_ch,
                       int kernel, int stride, int padding, int dilation, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

struct ConvTranspose1d {
  Tensor weight, bias;  // weight [C_in, C_out, k]
  int stride = 1, padding = 0;

  static ConvTranspose1d create(ParamStore& store, const std::string& name, int in_ch, int out_ch,
                                int kernel, int stride, int padding, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

struct Linear {
  Tensor weight, bias;

  static Linear create(ParamStore& store, const std::string& name, int in_dim, int out_dim,
                       Rng& rng, double weight_scale = 1.0);
  Tensor forward(const Tensor& x) const;
};

struct GroupNorm {
  Tensor gain, bias;
  int groups = 1;

  static GroupNorm create(ParamStore& store, const std::string& name, int channels);
  Tensor forward(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain, bias;

  static LayerNorm create(ParamStore& store, const std::string& name, int dim);
  Tensor forward(const Tensor& x) const;
};

// GroupNorm -> SiLU -> conv, repeated convs_per_block times, with the
// timestep features added after the first conv and a 1x1 skip when the
// channel count changes.
struct ResBlock2d {
  std::vector<GroupNorm> norms;
  std::vector<Conv2d> convs;
  Linear time_proj;
  Conv2d skip;
  bool has_skip = false;

  static ResBlock2d create(ParamStore& store, const std::string& name, int in_ch, int out_ch,
                           int convs_per_block, int time_dim, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& time_features) const;
};

// Single-head cross-attention over flattened spatial positions with the
// conditioning sequence as keys/values, applied residually.
struct CrossAttention2d {
  Linear to_q, to_k, to_v, to_out;
  GroupNorm norm;

  static CrossAttention2d create(ParamStore& store, const std::string& name, int channels,
                                 int cond_dim, Rng& rng);
  // key_bias: optional [N, HW, T_cond] additive logit bias for padding.
  Tensor forward(const Tensor& x, const Tensor& cond_seq, const Tensor& key_bias) const;
};

// Sinusoidal features followed by a two-layer SiLU MLP.
struct TimeEmbedding {
  Linear fc1, fc2;
  int dim = 0;

  static TimeEmbedding create(ParamStore& store, const std::string& name, int dim, Rng& rng);
  Tensor forward(const std::vector<int>& t) const;
};

}  // namespace nn
}  // namespace cascade
