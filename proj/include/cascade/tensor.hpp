#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/rng.hpp"

namespace cascade {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad();
};

}  // namespace detail

// Reverse-mode autodiff is globally on; sampling and evaluation paths
// disable tape construction with this RAII guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

bool grad_enabled();

// Shared-handle n-d array of doubles. Copying a Tensor aliases the same
// storage; ops create fresh nodes. Forward results are checked finite —
// a NaN/Inf output raises NumericalError naming the op.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return impl_->numel(); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  const std::vector<double>& data() const { return impl_->data; }
  // In-place access: reserved for optimizer updates, parameter loading and
  // finite-difference probes. Never call on a tensor inside a live graph.
  std::vector<double>& mutable_data() { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  const std::vector<double>& grad() const;
  void zero_grad();

  double item() const;

  // Backpropagate from this tensor. Non-scalars require seed=false and a
  // pre-filled grad; scalars seed with 1.
  void backward();

  Tensor detach() const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_op_result(const char* op, Shape shape, std::vector<double> data,
                               std::vector<Tensor> parents,
                               std::function<void(detail::TensorImpl&)> backward_fn);
};

Tensor make_op_result(const char* op, Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(detail::TensorImpl&)> backward_fn);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor silu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor tanh_op(const Tensor& x);
Tensor sqrt_op(const Tensor& x);     // requires x >= 0
Tensor log_op(const Tensor& x);      // requires x > 0
Tensor abs_op(const Tensor& x);
Tensor clamp_min(const Tensor& x, double floor);

// ---- shape ----
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor transpose_12(const Tensor& x);             // [N,A,B] -> [N,B,A]
Tensor concat_channels(const Tensor& a, const Tensor& b);  // along axis 1
// Split-gradient inverse of concat is handled inside concat's backward.

// ---- reductions / losses ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mean_axis1(const Tensor& x);               // [N,T,D] -> [N,D]
Tensor mse_loss(const Tensor& a, const Tensor& b);
Tensor l1_loss(const Tensor& a, const Tensor& b);

// ---- linear algebra ----
Tensor matmul2d(const Tensor& a, const Tensor& b);            // [M,K]x[K,N]
Tensor bmm(const Tensor& a, const Tensor& b);                 // [B,M,K]x[B,K,N]
Tensor bmm_nt(const Tensor& a, const Tensor& b);              // [B,M,K]x[B,N,K]^T
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // [...,D]x[D,O]+[O]
Tensor softmax_lastdim(const Tensor& x);

// softmax(Q K^T / sqrt(D)) V with optional additive logit bias (e.g. a
// padding mask of -1e9 entries), shape [N,Tq,Tk].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor& logit_bias = Tensor());

// ---- convolution / pooling ----
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);
Tensor conv1d(const Tensor& input, const Tensor& kernel, int stride, int padding,
              int dilation = 1);
// kernel layout [C_in, C_out, k]; output length (L-1)*stride - 2*padding + k.
Tensor conv_transpose1d(const Tensor& input, const Tensor& kernel, int stride,
                        int padding);
Tensor avg_pool2d(const Tensor& x, int kernel);   // stride == kernel
Tensor upsample_nearest2d(const Tensor& x, int factor);

// ---- normalization / conditioning ----
Tensor group_norm(const Tensor& x, int groups, const Tensor& gain, const Tensor& bias,
                  double epsilon = 1e-5);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon = 1e-5);
// x[N,C,*] + bias[C]
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
// x[N,C,*] + bias[N,C] (per-sample channel bias, e.g. timestep features)
Tensor add_sample_bias(const Tensor& x, const Tensor& bias);
// Residual feature-wise modulation: x + gamma*x + beta, gamma/beta [N,C]
// broadcast over trailing dims of x [N,C,L].
Tensor film(const Tensor& x, const Tensor& gamma, const Tensor& beta);

// ---- lookup ----
// table [V,D], ids [N][T] -> [N,T,D]; backward scatter-adds into the table.
Tensor embedding(const Tensor& table, const std::vector<std::vector<int>>& ids);

// Constant sinusoidal timestep features, one row per batch element.
Tensor timestep_embedding(const std::vector<int>& t, int dim);

}  // namespace cascade
