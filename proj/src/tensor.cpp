#include "cascade/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace cascade {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

void TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(const char* op, const std::vector<double>& data) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

}  // namespace

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_op_result(const char* op, Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(detail::TensorImpl&)> backward_fn) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw DimensionError(std::string(op) + ": shape/data mismatch " + shape_str(shape));
  }
  check_finite(op, data);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->op = op;
  bool needs = false;
  for (const auto& p : parents) {
    if (p.defined() && p.requires_grad()) needs = true;
  }
  if (needs && g_grad_enabled) {
    impl->requires_grad = true;
    for (const auto& p : parents) {
      if (p.defined()) impl->parents.push_back(p.impl());
    }
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(impl));
}

// ---------------------------------------------------------------------------
// construction

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return from_data(shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), 0.0),
                   requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return from_data(shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), value),
                   requires_grad);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw DimensionError("from_data: shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
  }
  check_finite("leaf", data);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  Tensor t(std::move(impl));
  return t;
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = rng.normal() * stddev;
  return from_data(shape, std::move(data), requires_grad);
}

const std::vector<double>& Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::detach() const {
  return Tensor::from_data(impl_->shape, impl_->data, false);
}

void Tensor::backward() {
  if (!impl_->requires_grad) {
    throw StateError("backward() on a tensor that does not require grad");
  }
  if (numel() != 1) {
    throw DimensionError("backward() requires a scalar; got " + shape_str(shape()));
  }
  impl_->ensure_grad();
  impl_->grad[0] += 1.0;

  // Iterative post-order topological sort over the tape.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      detail::TensorImpl* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

// ---------------------------------------------------------------------------
// small op helpers

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void accum(detail::TensorImpl& target, const std::vector<double>& g) {
  target.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) target.grad[i] += g[i];
}

// C[M,N] += A[M,K] * B[K,N]
void gemm_acc(const double* A, const double* B, double* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m) {
    const double* a_row = A + m * K;
    double* c_row = C + m * N;
    for (int64_t k = 0; k < K; ++k) {
      const double a = a_row[k];
      const double* b_row = B + k * N;
      for (int64_t n = 0; n < N; ++n) c_row[n] += a * b_row[n];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_abt_acc(const double* A, const double* B, double* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m) {
    const double* a_row = A + m * K;
    for (int64_t n = 0; n < N; ++n) {
      const double* b_row = B + n * K;
      double acc = 0.0;
      for (int64_t k = 0; k < K; ++k) acc += a_row[k] * b_row[k];
      C[m * N + n] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
void gemm_atb_acc(const double* A, const double* B, double* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t k = 0; k < K; ++k) {
    const double* a_row = A + k * M;
    const double* b_row = B + k * N;
    for (int64_t m = 0; m < M; ++m) {
      const double a = a_row[m];
      double* c_row = C + m * N;
      for (int64_t n = 0; n < N; ++n) c_row[n] += a * b_row[n];
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_op_result("add", a.shape(), std::move(out), {a, b}, [ai, bi](detail::TensorImpl& self) {
    if (ai->requires_grad) accum(*ai, self.grad);
    if (bi->requires_grad) accum(*bi, self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_op_result("sub", a.shape(), std::move(out), {a, b}, [ai, bi](detail::TensorImpl& self) {
    if (ai->requires_grad) accum(*ai, self.grad);
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_op_result("mul", a.shape(), std::move(out), {a, b}, [ai, bi](detail::TensorImpl& self) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] += self.grad[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  auto ai = a.impl();
  return make_op_result("scale", a.shape(), std::move(out), {a}, [ai, s](detail::TensorImpl& self) {
    ai->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
  auto ai = a.impl();
  return make_op_result("add_scalar", a.shape(), std::move(out), {a}, [ai](detail::TensorImpl& self) {
    accum(*ai, self.grad);
  });
}

Tensor silu(const Tensor& x) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-xd[i]));
    out[i] = xd[i] * s;
  }
  auto xi = x.impl();
  return make_op_result("silu", x.shape(), std::move(out), {x}, [xi](detail::TensorImpl& self) {
    xi->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double v = xi->data[i];
      const double s = 1.0 / (1.0 + std::exp(-v));
      xi->grad[i] += self.grad[i] * (s * (1.0 + v * (1.0 - s)));
    }
  });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : slope * xd[i];
  auto xi = x.impl();
  return make_op_result("leaky_relu", x.shape(), std::move(out), {x},
                        [xi, slope](detail::TensorImpl& self) {
                          xi->ensure_grad();
                          for (size_t i = 0; i < self.grad.size(); ++i) {
                            xi->grad[i] += self.grad[i] * (xi->data[i] > 0.0 ? 1.0 : slope);
                          }
                        });
}

Tensor tanh_op(const Tensor& x) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xd[i]);
  auto xi = x.impl();
  return make_op_result("tanh", x.shape(), std::move(out), {x}, [xi](detail::TensorImpl& self) {
    xi->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double y = std::tanh(xi->data[i]);
      xi->grad[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Tensor sqrt_op(const Tensor& x) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(xd[i]);
  auto xi = x.impl();
  return make_op_result("sqrt", x.shape(), std::move(out), {x}, [xi](detail::TensorImpl& self) {
    xi->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      xi->grad[i] += self.grad[i] * 0.5 / std::sqrt(xi->data[i]);
    }
  });
}

Tensor log_op(const Tensor& x) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(xd[i]);
  auto xi = x.impl();
  return make_op_result("log", x.shape(), std::move(out), {x}, [xi](detail::TensorImpl& self) {
    xi->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xi->grad[i] += self.grad[i] / xi->data[i];
  });
}

Tensor abs_op(const Tensor& x) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(xd[i]);
  auto xi = x.impl();
  return make_op_result("abs", x.shape(), std::move(out), {x}, [xi](detail::TensorImpl& self) {
    xi->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double v = xi->data[i];
      xi->grad[i] += self.grad[i] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
    }
  });
}

Tensor clamp_min(const Tensor& x, double floor) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > floor ? xd[i] : floor;
  auto xi = x.impl();
  return make_op_result("clamp_min", x.shape(), std::move(out), {x},
                        [xi, floor](detail::TensorImpl& self) {
                          xi->ensure_grad();
                          for (size_t i = 0; i < self.grad.size(); ++i) {
                            if (xi->data[i] >= floor) xi->grad[i] += self.grad[i];
                          }
                        });
}

// ---------------------------------------------------------------------------
// shape ops

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto xi = x.impl();
  return make_op_result("reshape", shape, x.data(), {x}, [xi](detail::TensorImpl& self) {
    accum(*xi, self.grad);
  });
}

Tensor transpose_12(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("transpose_12 expects rank 3, got " + shape_str(x.shape()));
  const int64_t N = x.dim(0), A = x.dim(1), B = x.dim(2);
  std::vector<double> out(static_cast<size_t>(N * A * B));
  const auto& xd = x.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t a = 0; a < A; ++a)
      for (int64_t b = 0; b < B; ++b) out[(n * B + b) * A + a] = xd[(n * A + a) * B + b];
  auto xi = x.impl();
  return make_op_result("transpose_12", {N, B, A}, std::move(out), {x},
                        [xi, N, A, B](detail::TensorImpl& self) {
                          xi->ensure_grad();
                          for (int64_t n = 0; n < N; ++n)
                            for (int64_t b = 0; b < B; ++b)
                              for (int64_t a = 0; a < A; ++a)
                                xi->grad[(n * A + a) * B + b] += self.grad[(n * B + b) * A + a];
                        });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 2) {
    throw DimensionError("concat_channels: ranks differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  for (int i = 0; i < a.rank(); ++i) {
    if (i != 1 && a.dim(i) != b.dim(i)) {
      throw DimensionError("concat_channels: shape mismatch " + shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()));
    }
  }
  const int64_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  const int64_t S = a.numel() / (N * Ca);
  Shape out_shape = a.shape();
  out_shape[1] = Ca + Cb;
  std::vector<double> out(static_cast<size_t>(N * (Ca + Cb) * S));
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (int64_t n = 0; n < N; ++n) {
    std::memcpy(&out[(n * (Ca + Cb)) * S], &ad[n * Ca * S], sizeof(double) * Ca * S);
    std::memcpy(&out[(n * (Ca + Cb) + Ca) * S], &bd[n * Cb * S], sizeof(double) * Cb * S);
  }
  auto ai = a.impl(), bi = b.impl();
  return make_op_result("concat_channels", out_shape, std::move(out), {a, b},
                        [ai, bi, N, Ca, Cb, S](detail::TensorImpl& self) {
                          if (ai->requires_grad) {
                            ai->ensure_grad();
                            for (int64_t n = 0; n < N; ++n)
                              for (int64_t i = 0; i < Ca * S; ++i)
                                ai->grad[n * Ca * S + i] += self.grad[n * (Ca + Cb) * S + i];
                          }
                          if (bi->requires_grad) {
                            bi->ensure_grad();
                            for (int64_t n = 0; n < N; ++n)
                              for (int64_t i = 0; i < Cb * S; ++i)
                                bi->grad[n * Cb * S + i] += self.grad[(n * (Ca + Cb) + Ca) * S + i];
                          }
                        });
}

// ---------------------------------------------------------------------------
// reductions and losses

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto xi = x.impl();
  return make_op_result("sum_all", {1}, {s}, {x}, [xi](detail::TensorImpl& self) {
    xi->ensure_grad();
    for (auto& g : xi->grad) g += self.grad[0];
  });
}

Tensor mean_all(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto xi = x.impl();
  return make_op_result("mean_all", {1}, {s * inv}, {x}, [xi, inv](detail::TensorImpl& self) {
    xi->ensure_grad();
    for (auto& g : xi->grad) g += self.grad[0] * inv;
  });
}

Tensor mean_axis1(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("mean_axis1 expects rank 3, got " + shape_str(x.shape()));
  const int64_t N = x.dim(0), T = x.dim(1), D = x.dim(2);
  std::vector<double> out(static_cast<size_t>(N * D), 0.0);
  const auto& xd = x.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t d = 0; d < D; ++d) out[n * D + d] += xd[(n * T + t) * D + d];
  const double inv = 1.0 / static_cast<double>(T);
  for (auto& v : out) v *= inv;
  auto xi = x.impl();
  return make_op_result("mean_axis1", {N, D}, std::move(out), {x},
                        [xi, N, T, D, inv](detail::TensorImpl& self) {
                          xi->ensure_grad();
                          for (int64_t n = 0; n < N; ++n)
                            for (int64_t t = 0; t < T; ++t)
                              for (int64_t d = 0; d < D; ++d)
                                xi->grad[(n * T + t) * D + d] += self.grad[n * D + d] * inv;
                        });
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  require_same_shape("mse_loss", a, b);
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (size_t i = 0; i < a.data().size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  auto ai = a.impl(), bi = b.impl();
  return make_op_result("mse_loss", {1}, {s * inv}, {a, b}, [ai, bi, inv](detail::TensorImpl& self) {
    const double g = self.grad[0] * inv * 2.0;
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += g * (ai->data[i] - bi->data[i]);
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (size_t i = 0; i < bi->data.size(); ++i) bi->grad[i] -= g * (ai->data[i] - bi->data[i]);
    }
  });
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  require_same_shape("l1_loss", a, b);
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (size_t i = 0; i < a.data().size(); ++i) s += std::fabs(a.data()[i] - b.data()[i]);
  auto ai = a.impl(), bi = b.impl();
  return make_op_result("l1_loss", {1}, {s * inv}, {a, b}, [ai, bi, inv](detail::TensorImpl& self) {
    const double g = self.grad[0] * inv;
    for (size_t i = 0; i < ai->data.size(); ++i) {
      const double d = ai->data[i] - bi->data[i];
      const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (ai->requires_grad) {
        ai->ensure_grad();
        ai->grad[i] += g * sgn;
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        bi->grad[i] -= g * sgn;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor matmul2d(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul2d: incompatible " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<double> out(static_cast<size_t>(M * N), 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), M, K, N);
  auto ai = a.impl(), bi = b.impl();
  return make_op_result("matmul2d", {M, N}, std::move(out), {a, b},
                        [ai, bi, M, K, N](detail::TensorImpl& self) {
                          if (ai->requires_grad) {
                            ai->ensure_grad();
                            gemm_abt_acc(self.grad.data(), bi->data.data(), ai->grad.data(), M, N, K);
                          }
                          if (bi->requires_grad) {
                            bi->ensure_grad();
                            gemm_atb_acc(ai->data.data(), self.grad.data(), bi->grad.data(), K, M, N);
                          }
                        });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const int64_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  std::vector<double> out(static_cast<size_t>(B * M * N), 0.0);
  for (int64_t i = 0; i < B; ++i) {
    gemm_acc(a.data().data() + i * M * K, b.data().data() + i * K * N, out.data() + i * M * N, M, K,
             N);
  }
  auto ai = a.impl(), bi = b.impl();
  return make_op_result("bmm", {B, M, N}, std::move(out), {a, b},
                        [ai, bi, B, M, K, N](detail::TensorImpl& self) {
                          for (int64_t i = 0; i < B; ++i) {
                            if (ai->requires_grad) {
                              ai->ensure_grad();
                              gemm_abt_acc(self.grad.data() + i * M * N, bi->data.data() + i * K * N,
                                           ai->grad.data() + i * M * K, M, N, K);
                            }
                            if (bi->requires_grad) {
                              bi->ensure_grad();
                              gemm_atb_acc(ai->data.data() + i * M * K, self.grad.data() + i * M * N,
                                           bi->grad.data() + i * K * N, K, M, N);
                            }
                          }
                        });
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw DimensionError("bmm_nt: incompatible " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const int64_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(1);
  std::vector<double> out(static_cast<size_t>(B * M * N), 0.0);
  for (int64_t i = 0; i < B; ++i) {
    gemm_abt_acc(a.data().data() + i * M * K, b.data().data() + i * N * K, out.data() + i * M * N, M,
                 K, N);
  }
  auto ai = a.impl(), bi = b.impl();
  return make_op_result("bmm_nt", {B, M, N}, std::move(out), {a, b},
                        [ai, bi, B, M, K, N](detail::TensorImpl& self) {
                          for (int64_t i = 0; i < B; ++i) {
                            if (ai->requires_grad) {
                              ai->ensure_grad();
                              gemm_acc(self.grad.data() + i * M * N, bi->data.data() + i * N * K,
                                       ai->grad.data() + i * M * K, M, N, K);
                            }
                            if (bi->requires_grad) {
                              bi->ensure_grad();
                              gemm_atb_acc(self.grad.data() + i * M * N, ai->data.data() + i * M * K,
                                           bi->grad.data() + i * N * K, N, M, K);
                            }
                          }
                        });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) throw DimensionError("linear: weight must be rank 2");
  const int64_t D = w.dim(0), O = w.dim(1);
  if (x.dim(x.rank() - 1) != D) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != O)) {
    throw DimensionError("linear: bias shape " + shape_str(b.shape()));
  }
  const int64_t R = x.numel() / D;
  std::vector<double> out(static_cast<size_t>(R * O), 0.0);
  gemm_acc(x.data().data(), w.data().data(), out.data(), R, D, O);
  if (b.defined()) {
    for (int64_t r = 0; r < R; ++r)
      for (int64_t o = 0; o < O; ++o) out[r * O + o] += b.data()[o];
  }
  Shape out_shape = x.shape();
  out_shape.back() = O;
  auto xi = x.impl(), wi = w.impl(), bi = b.defined() ? b.impl() : nullptr;
  return make_op_result("linear", out_shape, std::move(out), {x, w, b},
                        [xi, wi, bi, R, D, O](detail::TensorImpl& self) {
                          if (xi->requires_grad) {
                            xi->ensure_grad();
                            gemm_abt_acc(self.grad.data(), wi->data.data(), xi->grad.data(), R, O, D);
                          }
                          if (wi->requires_grad) {
                            wi->ensure_grad();
                            gemm_atb_acc(xi->data.data(), self.grad.data(), wi->grad.data(), D, R, O);
                          }
                          if (bi && bi->requires_grad) {
                            bi->ensure_grad();
                            for (int64_t r = 0; r < R; ++r)
                              for (int64_t o = 0; o < O; ++o) bi->grad[o] += self.grad[r * O + o];
                          }
                        });
}

Tensor softmax_lastdim(const Tensor& x) {
  const int64_t D = x.dim(x.rank() - 1);
  const int64_t R = x.numel() / D;
  std::vector<double> out(x.data().size());
  const auto& xd = x.data();
  for (int64_t r = 0; r < R; ++r) {
    const double* row = &xd[r * D];
    double mx = row[0];
    for (int64_t d = 1; d < D; ++d) mx = std::max(mx, row[d]);
    double z = 0.0;
    for (int64_t d = 0; d < D; ++d) {
      out[r * D + d] = std::exp(row[d] - mx);
      z += out[r * D + d];
    }
    for (int64_t d = 0; d < D; ++d) out[r * D + d] /= z;
  }
  auto xi = x.impl();
  auto saved = std::make_shared<std::vector<double>>(out);
  return make_op_result("softmax", x.shape(), std::move(out), {x},
                        [xi, saved, R, D](detail::TensorImpl& self) {
                          xi->ensure_grad();
                          for (int64_t r = 0; r < R; ++r) {
                            double dot = 0.0;
                            for (int64_t d = 0; d < D; ++d)
                              dot += self.grad[r * D + d] * (*saved)[r * D + d];
                            for (int64_t d = 0; d < D; ++d)
                              xi->grad[r * D + d] +=
                                  ((*saved)[r * D + d]) * (self.grad[r * D + d] - dot);
                          }
                        });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& logit_bias) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw DimensionError("attention expects rank-3 q/k/v");
  }
  if (q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2) || k.dim(0) != v.dim(0) ||
      k.dim(1) != v.dim(1)) {
    throw DimensionError("attention: incompatible q " + shape_str(q.shape()) + " k " +
                         shape_str(k.shape()) + " v " + shape_str(v.shape()));
  }
  Tensor logits = scale(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(q.dim(2))));
  if (logit_bias.defined()) logits = add(logits, logit_bias);
  return bmm(softmax_lastdim(logits), v);
}

// ---------------------------------------------------------------------------
// convolutions

namespace {

// col[(c,ki,kj), (y,x)] gather of x[n] for stride/pad conv.
void im2col_2d(const double* x, int64_t C, int64_t H, int64_t W, int64_t kH, int64_t kW,
               int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, double* col) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < kH; ++i) {
      for (int64_t j = 0; j < kW; ++j) {
        double* row = col + ((c * kH + i) * kW + j) * (Ho * Wo);
        for (int64_t y = 0; y < Ho; ++y) {
          const int64_t sy = y * stride - pad + i;
          if (sy < 0 || sy >= H) {
            std::fill(row + y * Wo, row + (y + 1) * Wo, 0.0);
            continue;
          }
          const double* src = x + (c * H + sy) * W;
          for (int64_t xo = 0; xo < Wo; ++xo) {
            const int64_t sx = xo * stride - pad + j;
            row[y * Wo + xo] = (sx >= 0 && sx < W) ? src[sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_2d(const double* col, int64_t C, int64_t H, int64_t W, int64_t kH, int64_t kW,
               int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, double* dx) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < kH; ++i) {
      for (int64_t j = 0; j < kW; ++j) {
        const double* row = col + ((c * kH + i) * kW + j) * (Ho * Wo);
        for (int64_t y = 0; y < Ho; ++y) {
          const int64_t sy = y * stride - pad + i;
          if (sy < 0 || sy >= H) continue;
          double* dst = dx + (c * H + sy) * W;
          for (int64_t xo = 0; xo < Wo; ++xo) {
            const int64_t sx = xo * stride - pad + j;
            if (sx >= 0 && sx < W) dst[sx] += row[y * Wo + xo];
          }
        }
      }
    }
  }
}

void im2col_1d(const double* x, int64_t C, int64_t L, int64_t k, int64_t stride, int64_t pad,
               int64_t dil, int64_t Lo, double* col) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < k; ++i) {
      double* row = col + (c * k + i) * Lo;
      const double* src = x + c * L;
      for (int64_t t = 0; t < Lo; ++t) {
        const int64_t s = t * stride - pad + i * dil;
        row[t] = (s >= 0 && s < L) ? src[s] : 0.0;
      }
    }
  }
}

void col2im_1d(const double* col, int64_t C, int64_t L, int64_t k, int64_t stride, int64_t pad,
               int64_t dil, int64_t Lo, double* dx) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < k; ++i) {
      const double* row = col + (c * k + i) * Lo;
      double* dst = dx + c * L;
      for (int64_t t = 0; t < Lo; ++t) {
        const int64_t s = t * stride - pad + i * dil;
        if (s >= 0 && s < L) dst[s] += row[t];
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("conv2d: input " + shape_str(input.shape()) + " kernel " +
                         shape_str(kernel.shape()) + " must be rank 4");
  }
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t F = kernel.dim(0), Ck = kernel.dim(1), kH = kernel.dim(2), kW = kernel.dim(3);
  if (C != Ck) {
    throw DimensionError("conv2d: channel mismatch input " + shape_str(input.shape()) +
                         " vs kernel " + shape_str(kernel.shape()));
  }
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (kH > H + 2 * padding || kW > W + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " larger than padded input " + shape_str(input.shape()));
  }
  const int64_t Ho = (H + 2 * padding - kH) / stride + 1;
  const int64_t Wo = (W + 2 * padding - kW) / stride + 1;
  const int64_t CK = C * kH * kW, P = Ho * Wo;

  std::vector<double> out(static_cast<size_t>(N * F * P), 0.0);
  std::vector<double> col(static_cast<size_t>(CK * P));
  for (int64_t n = 0; n < N; ++n) {
    im2col_2d(input.data().data() + n * C * H * W, C, H, W, kH, kW, stride, padding, Ho, Wo,
              col.data());
    gemm_acc(kernel.data().data(), col.data(), out.data() + n * F * P, F, CK, P);
  }
  auto xi = input.impl(), ki = kernel.impl();
  const int64_t s = stride, p = padding;
  return make_op_result(
      "conv2d", {N, F, Ho, Wo}, std::move(out), {input, kernel},
      [xi, ki, N, C, H, W, F, kH, kW, s, p, Ho, Wo, CK, P](detail::TensorImpl& self) {
        std::vector<double> col(static_cast<size_t>(CK * P));
        std::vector<double> dcol(static_cast<size_t>(CK * P));
        if (xi->requires_grad) xi->ensure_grad();
        if (ki->requires_grad) ki->ensure_grad();
        for (int64_t n = 0; n < N; ++n) {
          if (ki->requires_grad) {
            im2col_2d(xi->data.data() + n * C * H * W, C, H, W, kH, kW, s, p, Ho, Wo, col.data());
            gemm_abt_acc(self.grad.data() + n * F * P, col.data(), ki->grad.data(), F, P, CK);
          }
          if (xi->requires_grad) {
            std::fill(dcol.begin(), dcol.end(), 0.0);
            gemm_atb_acc(ki->data.data(), self.grad.data() + n * F * P, dcol.data(), CK, F, P);
            col2im_2d(dcol.data(), C, H, W, kH, kW, s, p, Ho, Wo, xi->grad.data() + n * C * H * W);
          }
        }
      });
}

Tensor conv1d(const Tensor& input, const Tensor& kernel, int stride, int padding, int dilation) {
  if (input.rank() != 3 || kernel.rank() != 3) {
    throw DimensionError("conv1d: input " + shape_str(input.shape()) + " kernel " +
                         shape_str(kernel.shape()) + " must be rank 3");
  }
  const int64_t N = input.dim(0), C = input.dim(1), L = input.dim(2);
  const int64_t F = kernel.dim(0), Ck = kernel.dim(1), k = kernel.dim(2);
  if (C != Ck) {
    throw DimensionError("conv1d: channel mismatch input " + shape_str(input.shape()) +
                         " vs kernel " + shape_str(kernel.shape()));
  }
  if (stride < 1 || dilation < 1) throw DimensionError("conv1d: stride/dilation must be >= 1");
  const int64_t span = dilation * (k - 1) + 1;
  if (span > L + 2 * padding) {
    throw DimensionError("conv1d: kernel span exceeds padded input length");
  }
  const int64_t Lo = (L + 2 * padding - span) / stride + 1;
  const int64_t CK = C * k;

  std::vector<double> out(static_cast<size_t>(N * F * Lo), 0.0);
  std::vector<double> col(static_cast<size_t>(CK * Lo));
  for (int64_t n = 0; n < N; ++n) {
    im2col_1d(input.data().data() + n * C * L, C, L, k, stride, padding, dilation, Lo, col.data());
    gemm_acc(kernel.data().data(), col.data(), out.data() + n * F * Lo, F, CK, Lo);
  }
  auto xi = input.impl(), ki = kernel.impl();
  const int64_t s = stride, p = padding, dil = dilation;
  return make_op_result(
      "conv1d", {N, F, Lo}, std::move(out), {input, kernel},
      [xi, ki, N, C, L, F, k, s, p, dil, Lo, CK](detail::TensorImpl& self) {
        std::vector<double> col(static_cast<size_t>(CK * Lo));
        std::vector<double> dcol(static_cast<size_t>(CK * Lo));
        if (xi->requires_grad) xi->ensure_grad();
        if (ki->requires_grad) ki->ensure_grad();
        for (int64_t n = 0; n < N; ++n) {
          if (ki->requires_grad) {
            im2col_1d(xi->data.data() + n * C * L, C, L, k, s, p, dil, Lo, col.data());
            gemm_abt_acc(self.grad.data() + n * F * Lo, col.data(), ki->grad.data(), F, Lo, CK);
          }
          if (xi->requires_grad) {
            std::fill(dcol.begin(), dcol.end(), 0.0);
            gemm_atb_acc(ki->data.data(), self.grad.data() + n * F * Lo, dcol.data(), CK, F, Lo);
            col2im_1d(dcol.data(), C, L, k, s, p, dil, Lo, xi->grad.data() + n * C * L);
          }
        }
      });
}

Tensor conv_transpose1d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  if (input.rank() != 3 || kernel.rank() != 3) {
    throw DimensionError("conv_transpose1d: input and kernel must be rank 3");
  }
  const int64_t N = input.dim(0), C = input.dim(1), L = input.dim(2);
  const int64_t Ck = kernel.dim(0), F = kernel.dim(1), k = kernel.dim(2);
  if (C != Ck) {
    throw DimensionError("conv_transpose1d: channel mismatch input " + shape_str(input.shape()) +
                         " vs kernel " + shape_str(kernel.shape()));
  }
  if (stride < 1) throw DimensionError("conv_transpose1d: stride must be >= 1");
  const int64_t Lo = (L - 1) * stride - 2 * padding + k;
  if (Lo < 1) throw DimensionError("conv_transpose1d: non-positive output length");

  // Gather form: y[f,t] = sum_{c,i} x[c,(t+pad-i)/stride] * w[c,f,i]
  std::vector<double> out(static_cast<size_t>(N * F * Lo), 0.0);
  const auto& xd = input.data();
  const auto& wd = kernel.data();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const double* xr = &xd[(n * C + c) * L];
      for (int64_t f = 0; f < F; ++f) {
        const double* wr = &wd[(c * F + f) * k];
        double* yr = &out[(n * F + f) * Lo];
        for (int64_t l = 0; l < L; ++l) {
          const double xv = xr[l];
          const int64_t base = l * stride - padding;
          const int64_t i0 = std::max<int64_t>(0, -base);
          const int64_t i1 = std::min<int64_t>(k, Lo - base);
          for (int64_t i = i0; i < i1; ++i) yr[base + i] += xv * wr[i];
        }
      }
    }
  }
  auto xi = input.impl(), ki = kernel.impl();
  const int64_t s = stride, p = padding;
  return make_op_result(
      "conv_transpose1d", {N, F, Lo}, std::move(out), {input, kernel},
      [xi, ki, N, C, L, F, k, s, p, Lo](detail::TensorImpl& self) {
        if (xi->requires_grad) xi->ensure_grad();
        if (ki->requires_grad) ki->ensure_grad();
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t c = 0; c < C; ++c) {
            for (int64_t f = 0; f < F; ++f) {
              const double* gy = &self.grad[(n * F + f) * Lo];
              const double* wr = &ki->data[(c * F + f) * k];
              const double* xr = &xi->data[(n * C + c) * L];
              for (int64_t l = 0; l < L; ++l) {
                const int64_t base = l * s - p;
                const int64_t i0 = std::max<int64_t>(0, -base);
                const int64_t i1 = std::min<int64_t>(k, Lo - base);
                if (xi->requires_grad) {
                  double acc = 0.0;
                  for (int64_t i = i0; i < i1; ++i) acc += gy[base + i] * wr[i];
                  xi->grad[(n * C + c) * L + l] += acc;
                }
                if (ki->requires_grad) {
                  const double xv = xr[l];
                  double* gw = &ki->grad[(c * F + f) * k];
                  for (int64_t i = i0; i < i1; ++i) gw[i] += gy[base + i] * xv;
                }
              }
            }
          }
        }
      });
}

Tensor avg_pool2d(const Tensor& x, int kernel) {
  if (x.rank() != 4) throw DimensionError("avg_pool2d expects rank 4");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (kernel < 1 || H % kernel != 0 || W % kernel != 0) {
    throw DimensionError("avg_pool2d: " + shape_str(x.shape()) + " not divisible by kernel " +
                         std::to_string(kernel));
  }
  const int64_t Ho = H / kernel, Wo = W / kernel;
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  std::vector<double> out(static_cast<size_t>(N * C * Ho * Wo), 0.0);
  const auto& xd = x.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* src = &xd[nc * H * W];
    double* dst = &out[nc * Ho * Wo];
    for (int64_t y = 0; y < Ho; ++y)
      for (int64_t xo = 0; xo < Wo; ++xo) {
        double acc = 0.0;
        for (int64_t i = 0; i < kernel; ++i)
          for (int64_t j = 0; j < kernel; ++j)
            acc += src[(y * kernel + i) * W + xo * kernel + j];
        dst[y * Wo + xo] = acc * inv;
      }
  }
  auto xi = x.impl();
  const int64_t kk = kernel;
  return make_op_result("avg_pool2d", {N, C, Ho, Wo}, std::move(out), {x},
                        [xi, N, C, H, W, Ho, Wo, kk, inv](detail::TensorImpl& self) {
                          xi->ensure_grad();
                          for (int64_t nc = 0; nc < N * C; ++nc) {
                            const double* g = &self.grad[nc * Ho * Wo];
                            double* dst = &xi->grad[nc * H * W];
                            for (int64_t y = 0; y < Ho; ++y)
                              for (int64_t xo = 0; xo < Wo; ++xo) {
                                const double gv = g[y * Wo + xo] * inv;
                                for (int64_t i = 0; i < kk; ++i)
                                  for (int64_t j = 0; j < kk; ++j)
                                    dst[(y * kk + i) * W + xo * kk + j] += gv;
                              }
                          }
                        });
}

Tensor upsample_nearest2d(const Tensor& x, int factor) {
  if (x.rank() != 4) throw DimensionError("upsample_nearest2d expects rank 4");
  if (factor < 1) throw DimensionError("upsample_nearest2d: factor must be >= 1");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = H * factor, Wo = W * factor;
  std::vector<double> out(static_cast<size_t>(N * C * Ho * Wo));
  const auto& xd = x.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* src = &xd[nc * H * W];
    double* dst = &out[nc * Ho * Wo];
    for (int64_t y = 0; y < Ho; ++y) {
      const double* srow = src + (y / factor) * W;
      for (int64_t xo = 0; xo < Wo; ++xo) dst[y * Wo + xo] = srow[xo / factor];
    }
  }
  auto xi = x.impl();
  const int64_t f = factor;
  return make_op_result("upsample_nearest2d", {N, C, Ho, Wo}, std::move(out), {x},
                        [xi, N, C, H, W, Ho, Wo, f](detail::TensorImpl& self) {
                          xi->ensure_grad();
                          for (int64_t nc = 0; nc < N * C; ++nc) {
                            const double* g = &self.grad[nc * Ho * Wo];
                            double* dst = &xi->grad[nc * H * W];
                            for (int64_t y = 0; y < Ho; ++y)
                              for (int64_t xo = 0; xo < Wo; ++xo)
                                dst[(y / f) * W + xo / f] += g[y * Wo + xo];
                          }
                        });
}

// ---------------------------------------------------------------------------
// normalization / conditioning

Tensor group_norm(const Tensor& x, int groups, const Tensor& gain, const Tensor& bias,
                  double epsilon) {
  if (x.rank() != 3 && x.rank() != 4) throw DimensionError("group_norm expects rank 3 or 4");
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t S = x.numel() / (N * C);
  if (groups < 1 || C % groups != 0) {
    throw ConfigError("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                      std::to_string(groups));
  }
  if (gain.numel() != C || bias.numel() != C) {
    throw DimensionError("group_norm: gain/bias must have C=" + std::to_string(C) + " elements");
  }
  const int64_t cg = C / groups;   // channels per group
  const int64_t m = cg * S;        // elements per group
  std::vector<double> out(x.data().size());
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(N * groups * 2));
  const auto& xd = x.data();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t g = 0; g < groups; ++g) {
      const int64_t off = (n * C + g * cg) * S;
      double mean = 0.0;
      for (int64_t i = 0; i < m; ++i) mean += xd[off + i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (int64_t i = 0; i < m; ++i) {
        const double d = xd[off + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double inv_std = 1.0 / std::sqrt(var + epsilon);
      (*stats)[(n * groups + g) * 2] = mean;
      (*stats)[(n * groups + g) * 2 + 1] = inv_std;
      for (int64_t c = 0; c < cg; ++c) {
        const double gc = gain.data()[g * cg + c];
        const double bc = bias.data()[g * cg + c];
        for (int64_t i = 0; i < S; ++i) {
          const int64_t idx = off + c * S + i;
          out[idx] = (xd[idx] - mean) * inv_std * gc + bc;
        }
      }
    }
  }
  auto xi = x.impl(), gi = gain.impl(), bi = bias.impl();
  const int64_t G = groups;
  return make_op_result(
      "group_norm", x.shape(), std::move(out), {x, gain, bias},
      [xi, gi, bi, stats, N, C, S, G, cg, m](detail::TensorImpl& self) {
        if (xi->requires_grad) xi->ensure_grad();
        if (gi->requires_grad) gi->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t g = 0; g < G; ++g) {
            const int64_t off = (n * C + g * cg) * S;
            const double mean = (*stats)[(n * G + g) * 2];
            const double inv_std = (*stats)[(n * G + g) * 2 + 1];
            double s1 = 0.0, s2 = 0.0;
            for (int64_t c = 0; c < cg; ++c) {
              const double gc = gi->data[g * cg + c];
              for (int64_t i = 0; i < S; ++i) {
                const int64_t idx = off + c * S + i;
                const double xhat = (xi->data[idx] - mean) * inv_std;
                const double dxhat = self.grad[idx] * gc;
                s1 += dxhat;
                s2 += dxhat * xhat;
                if (gi->requires_grad) gi->grad[g * cg + c] += self.grad[idx] * xhat;
                if (bi->requires_grad) bi->grad[g * cg + c] += self.grad[idx];
              }
            }
            if (xi->requires_grad) {
              const double inv_m = 1.0 / static_cast<double>(m);
              for (int64_t c = 0; c < cg; ++c) {
                const double gc = gi->data[g * cg + c];
                for (int64_t i = 0; i < S; ++i) {
                  const int64_t idx = off + c * S + i;
                  const double xhat = (xi->data[idx] - mean) * inv_std;
                  const double dxhat = self.grad[idx] * gc;
                  xi->grad[idx] += inv_std * (dxhat - inv_m * (s1 + xhat * s2));
                }
              }
            }
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  const int64_t D = x.dim(x.rank() - 1);
  const int64_t R = x.numel() / D;
  if (gain.numel() != D || bias.numel() != D) {
    throw DimensionError("layer_norm: gain/bias must have D=" + std::to_string(D) + " elements");
  }
  std::vector<double> out(x.data().size());
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(R * 2));
  const auto& xd = x.data();
  for (int64_t r = 0; r < R; ++r) {
    double mean = 0.0;
    for (int64_t d = 0; d < D; ++d) mean += xd[r * D + d];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (int64_t d = 0; d < D; ++d) {
      const double v = xd[r * D + d] - mean;
      var += v * v;
    }
    var /= static_cast<double>(D);
    const double inv_std = 1.0 / std::sqrt(var + epsilon);
    (*stats)[r * 2] = mean;
    (*stats)[r * 2 + 1] = inv_std;
    for (int64_t d = 0; d < D; ++d) {
      out[r * D + d] = (xd[r * D + d] - mean) * inv_std * gain.data()[d] + bias.data()[d];
    }
  }
  auto xi = x.impl(), gi = gain.impl(), bi = bias.impl();
  return make_op_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [xi, gi, bi, stats, R, D](detail::TensorImpl& self) {
        if (xi->requires_grad) xi->ensure_grad();
        if (gi->requires_grad) gi->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        for (int64_t r = 0; r < R; ++r) {
          const double mean = (*stats)[r * 2];
          const double inv_std = (*stats)[r * 2 + 1];
          double s1 = 0.0, s2 = 0.0;
          for (int64_t d = 0; d < D; ++d) {
            const double xhat = (xi->data[r * D + d] - mean) * inv_std;
            const double dxhat = self.grad[r * D + d] * gi->data[d];
            s1 += dxhat;
            s2 += dxhat * xhat;
            if (gi->requires_grad) gi->grad[d] += self.grad[r * D + d] * xhat;
            if (bi->requires_grad) bi->grad[d] += self.grad[r * D + d];
          }
          if (xi->requires_grad) {
            const double inv_d = 1.0 / static_cast<double>(D);
            for (int64_t d = 0; d < D; ++d) {
              const double xhat = (xi->data[r * D + d] - mean) * inv_std;
              const double dxhat = self.grad[r * D + d] * gi->data[d];
              xi->grad[r * D + d] += inv_std * (dxhat - inv_d * (s1 + xhat * s2));
            }
          }
        }
      });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2) throw DimensionError("add_channel_bias expects rank >= 2");
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t S = x.numel() / (N * C);
  if (bias.numel() != C) {
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) + " vs channels " +
                         std::to_string(C));
  }
  std::vector<double> out(x.data().size());
  const auto& xd = x.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double b = bias.data()[c];
      const int64_t off = (n * C + c) * S;
      for (int64_t i = 0; i < S; ++i) out[off + i] = xd[off + i] + b;
    }
  auto xi = x.impl(), bi = bias.impl();
  return make_op_result("add_channel_bias", x.shape(), std::move(out), {x, bias},
                        [xi, bi, N, C, S](detail::TensorImpl& self) {
                          if (xi->requires_grad) accum(*xi, self.grad);
                          if (bi->requires_grad) {
                            bi->ensure_grad();
                            for (int64_t n = 0; n < N; ++n)
                              for (int64_t c = 0; c < C; ++c) {
                                const int64_t off = (n * C + c) * S;
                                double acc = 0.0;
                                for (int64_t i = 0; i < S; ++i) acc += self.grad[off + i];
                                bi->grad[c] += acc;
                              }
                          }
                        });
}

Tensor add_sample_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2) throw DimensionError("add_sample_bias expects rank >= 2");
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t S = x.numel() / (N * C);
  if (!(bias.rank() == 2 && bias.dim(0) == N && bias.dim(1) == C)) {
    throw DimensionError("add_sample_bias: bias " + shape_str(bias.shape()) +
                         " incompatible with input " + shape_str(x.shape()));
  }
  std::vector<double> out(x.data().size());
  const auto& xd = x.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double b = bias.data()[n * C + c];
      const int64_t off = (n * C + c) * S;
      for (int64_t i = 0; i < S; ++i) out[off + i] = xd[off + i] + b;
    }
  auto xi = x.impl(), bi = bias.impl();
  return make_op_result("add_sample_bias", x.shape(), std::move(out), {x, bias},
                        [xi, bi, N, C, S](detail::TensorImpl& self) {
                          if (xi->requires_grad) accum(*xi, self.grad);
                          if (bi->requires_grad) {
                            bi->ensure_grad();
                            for (int64_t n = 0; n < N; ++n)
                              for (int64_t c = 0; c < C; ++c) {
                                const int64_t off = (n * C + c) * S;
                                double acc = 0.0;
                                for (int64_t i = 0; i < S; ++i) acc += self.grad[off + i];
                                bi->grad[n * C + c] += acc;
                              }
                          }
                        });
}

Tensor film(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() < 2) throw DimensionError("film expects rank >= 2 input");
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t S = x.numel() / (N * C);
  auto check_cond = [&](const Tensor& t, const char* name) {
    if (!(t.rank() == 2 && t.dim(0) == N && t.dim(1) == C)) {
      throw DimensionError(std::string("film: ") + name + " " + shape_str(t.shape()) +
                           " incompatible with input " + shape_str(x.shape()));
    }
  };
  check_cond(gamma, "gamma");
  check_cond(beta, "beta");
  std::vector<double> out(x.data().size());
  const auto& xd = x.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double g = gamma.data()[n * C + c];
      const double b = beta.data()[n * C + c];
      const int64_t off = (n * C + c) * S;
      for (int64_t i = 0; i < S; ++i) out[off + i] = xd[off + i] * (1.0 + g) + b;
    }
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return make_op_result(
      "film", x.shape(), std::move(out), {x, gamma, beta},
      [xi, gi, bi, N, C, S](detail::TensorImpl& self) {
        if (xi->requires_grad) xi->ensure_grad();
        if (gi->requires_grad) gi->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t c = 0; c < C; ++c) {
            const int64_t off = (n * C + c) * S;
            const double g = gi->data[n * C + c];
            double dg = 0.0, db = 0.0;
            for (int64_t i = 0; i < S; ++i) {
              const double gr = self.grad[off + i];
              if (xi->requires_grad) xi->grad[off + i] += gr * (1.0 + g);
              dg += gr * xi->data[off + i];
              db += gr;
            }
            if (gi->requires_grad) gi->grad[n * C + c] += dg;
            if (bi->requires_grad) bi->grad[n * C + c] += db;
          }
      });
}

Tensor embedding(const Tensor& table, const std::vector<std::vector<int>>& ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2");
  const int64_t V = table.dim(0), D = table.dim(1);
  const int64_t N = static_cast<int64_t>(ids.size());
  if (N == 0) throw DimensionError("embedding: empty batch");
  const int64_t T = static_cast<int64_t>(ids[0].size());
  for (const auto& row : ids) {
    if (static_cast<int64_t>(row.size()) != T) {
      throw DimensionError("embedding: ragged id batch");
    }
    for (int id : row) {
      if (id < 0 || id >= V) {
        throw DimensionError("embedding: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(V) + ")");
      }
    }
  }
  std::vector<double> out(static_cast<size_t>(N * T * D));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t t = 0; t < T; ++t) {
      const int id = ids[static_cast<size_t>(n)][static_cast<size_t>(t)];
      std::memcpy(&out[(n * T + t) * D], &table.data()[id * D], sizeof(double) * D);
    }
  auto ti = table.impl();
  auto ids_copy = std::make_shared<std::vector<std::vector<int>>>(ids);
  return make_op_result("embedding", {N, T, D}, std::move(out), {table},
                        [ti, ids_copy, N, T, D](detail::TensorImpl& self) {
                          ti->ensure_grad();
                          for (int64_t n = 0; n < N; ++n)
                            for (int64_t t = 0; t < T; ++t) {
                              const int id = (*ids_copy)[n][t];
                              for (int64_t d = 0; d < D; ++d)
                                ti->grad[id * D + d] += self.grad[(n * T + t) * D + d];
                            }
                        });
}

Tensor timestep_embedding(const std::vector<int>& t, int dim) {
  if (dim % 2 != 0) throw DimensionError("timestep_embedding: dim must be even");
  const int64_t N = static_cast<int64_t>(t.size());
  const int64_t half = dim / 2;
  std::vector<double> out(static_cast<size_t>(N * dim));
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                   static_cast<double>(half));
      const double arg = static_cast<double>(t[static_cast<size_t>(n)]) * freq;
      out[n * dim + i] = std::sin(arg);
      out[n * dim + half + i] = std::cos(arg);
    }
  }
  return Tensor::from_data({N, dim}, std::move(out), false);
}

}  // namespace cascade
