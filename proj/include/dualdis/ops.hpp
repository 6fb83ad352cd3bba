#pragma once

// Differentiable kernels for the layer kinds used by the encoder, decoder
// and classifier stacks. Matrix products go through Eigen; everything else
// is plain loops over NCHW storage.

#include <Eigen/Core>
#include <limits>

#include "dualdis/autograd.hpp"

namespace dualdis {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

/// (B,C,H,W) -> columns (C*k*k, B*Ho*Wo).
template <class T>
void im2col(const T* x, int B, int C, int H, int W, int k, int s, int p, int Ho, int Wo, T* cols) {
  const std::size_t ncol = static_cast<std::size_t>(B) * Ho * Wo;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * ncol;
        for (int b = 0; b < B; ++b) {
          const T* xb = x + (static_cast<std::size_t>(b) * C + c) * H * W;
          for (int oh = 0; oh < Ho; ++oh) {
            const int ih = oh * s - p + ki;
            T* dst = row + (static_cast<std::size_t>(b) * Ho + oh) * Wo;
            if (ih < 0 || ih >= H) {
              std::fill_n(dst, Wo, T(0));
              continue;
            }
            for (int ow = 0; ow < Wo; ++ow) {
              const int iw = ow * s - p + kj;
              dst[ow] = (iw >= 0 && iw < W) ? xb[ih * W + iw] : T(0);
            }
          }
        }
      }
}

/// Adjoint of im2col: scatters columns back into (B,C,H,W), accumulating.
template <class T>
void col2im(const T* cols, int B, int C, int H, int W, int k, int s, int p, int Ho, int Wo, T* x) {
  const std::size_t ncol = static_cast<std::size_t>(B) * Ho * Wo;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * ncol;
        for (int b = 0; b < B; ++b) {
          T* xb = x + (static_cast<std::size_t>(b) * C + c) * H * W;
          for (int oh = 0; oh < Ho; ++oh) {
            const int ih = oh * s - p + ki;
            if (ih < 0 || ih >= H) continue;
            const T* src = row + (static_cast<std::size_t>(b) * Ho + oh) * Wo;
            for (int ow = 0; ow < Wo; ++ow) {
              const int iw = ow * s - p + kj;
              if (iw >= 0 && iw < W) xb[ih * W + iw] += src[ow];
            }
          }
        }
      }
}

/// (B,C,S) <-> (C,B*S) channel-major permutation.
template <class T>
void nchw_to_cm(const T* x, int B, int C, int S, T* out) {
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) std::copy_n(x + (static_cast<std::size_t>(b) * C + c) * S, S, out + (static_cast<std::size_t>(c) * B + b) * S);
}

template <class T>
void cm_to_nchw(const T* x, int B, int C, int S, T* out) {
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) std::copy_n(x + (static_cast<std::size_t>(c) * B + b) * S, S, out + (static_cast<std::size_t>(b) * C + c) * S);
}

template <class T>
void require_rank(const Var<T>& x, int rank, const std::string& where) {
  if (x.value().rank() != rank) {
    throw ShapeError(where, rank == 4 ? "(B,C,H,W)" : "(B,features)", x.shape());
  }
}

}  // namespace detail

/// y = x W^T + b with x (B,in), W (out,in), b (out) or null.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b, const std::string& where = "linear") {
  detail::require_rank(x, 2, where);
  const int B = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in) throw ShapeError(where, "(B," + std::to_string(w.dim(1)) + ")", x.shape());
  Tensor<T> y({B, out});
  detail::MapMat<T> Y(y.data(), B, out);
  detail::CMapMat<T> X(x.value().data(), B, in);
  detail::CMapMat<T> Wm(w.value().data(), out, in);
  Y.noalias() = X * Wm.transpose();
  if (b) {
    for (int r = 0; r < B; ++r)
      for (int c = 0; c < out; ++c) y[r * out + c] += b.value()[c];
  }
  return x.tape()->record(std::move(y), {x, w, b}, [x, w, b, B, in, out](Node<T>& n) {
    detail::CMapMat<T> G(n.grad.data(), B, out);
    if (auto* gx = grad_target(x)) {
      detail::MapMat<T>(gx->data(), B, in).noalias() += G * detail::CMapMat<T>(w.value().data(), out, in);
    }
    if (auto* gw = grad_target(w)) {
      detail::MapMat<T>(gw->data(), out, in).noalias() += G.transpose() * detail::CMapMat<T>(x.value().data(), B, in);
    }
    if (auto* gb = grad_target(b)) {
      for (int r = 0; r < B; ++r)
        for (int c = 0; c < out; ++c) (*gb)[c] += n.grad[r * out + c];
    }
  }, "linear");
}

/// 2-D convolution; weight (O, C, k, k), bias (O) or null.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad, const std::string& where = "conv") {
  detail::require_rank(x, 4, where);
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), k = w.dim(2);
  if (w.dim(1) != C) throw ShapeError(where, "(B," + std::to_string(w.dim(1)) + ",H,W)", x.shape());
  const int Ho = detail::conv_out(H, k, stride, pad), Wo = detail::conv_out(W, k, stride, pad);
  if (Ho <= 0 || Wo <= 0) throw ShapeError(where, "spatial extent >= kernel " + std::to_string(k), x.shape());
  const int ckk = C * k * k;
  const int ncol = B * Ho * Wo;
  auto cols = std::make_shared<Buffer<T>>(static_cast<std::size_t>(ckk) * ncol);
  detail::im2col(x.value().data(), B, C, H, W, k, stride, pad, Ho, Wo, cols->data());
  Buffer<T> cm(static_cast<std::size_t>(O) * ncol);
  detail::MapMat<T>(cm.data(), O, ncol).noalias() =
      detail::CMapMat<T>(w.value().data(), O, ckk) * detail::CMapMat<T>(cols->data(), ckk, ncol);
  if (b) {
    for (int o = 0; o < O; ++o) {
      const T bv = b.value()[o];
      T* row = cm.data() + static_cast<std::size_t>(o) * ncol;
      for (int i = 0; i < ncol; ++i) row[i] += bv;
    }
  }
  Tensor<T> y({B, O, Ho, Wo});
  detail::cm_to_nchw(cm.data(), B, O, Ho * Wo, y.data());
  return x.tape()->record(std::move(y), {x, w, b}, [=](Node<T>& n) {
    Buffer<T> g(static_cast<std::size_t>(O) * ncol);
    detail::nchw_to_cm(n.grad.data(), B, O, Ho * Wo, g.data());
    detail::CMapMat<T> G(g.data(), O, ncol);
    if (auto* gw = grad_target(w)) {
      detail::MapMat<T>(gw->data(), O, ckk).noalias() += G * detail::CMapMat<T>(cols->data(), ckk, ncol).transpose();
    }
    if (auto* gb = grad_target(b)) {
      for (int o = 0; o < O; ++o) (*gb)[o] += G.row(o).sum();
    }
    if (auto* gx = grad_target(x)) {
      Buffer<T> dcols(static_cast<std::size_t>(ckk) * ncol);
      detail::MapMat<T>(dcols.data(), ckk, ncol).noalias() = detail::CMapMat<T>(w.value().data(), O, ckk).transpose() * G;
      detail::col2im(dcols.data(), B, C, H, W, k, stride, pad, Ho, Wo, gx->data());
    }
  }, "conv2d");
}

/// Transposed convolution; weight (Ci, Co, k, k), bias (Co) or null.
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad,
                        const std::string& where = "deconv") {
  detail::require_rank(x, 4, where);
  const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(1), k = w.dim(2);
  if (w.dim(0) != Ci) throw ShapeError(where, "(B," + std::to_string(w.dim(0)) + ",H,W)", x.shape());
  const int Ho = (H - 1) * stride - 2 * pad + k, Wo = (W - 1) * stride - 2 * pad + k;
  if (Ho <= 0 || Wo <= 0) throw ShapeError(where, "positive transposed output extent", x.shape());
  const int ckk = Co * k * k;
  const int n_in = B * H * W;
  auto xcm = std::make_shared<Buffer<T>>(static_cast<std::size_t>(Ci) * n_in);
  detail::nchw_to_cm(x.value().data(), B, Ci, H * W, xcm->data());
  Buffer<T> cols(static_cast<std::size_t>(ckk) * n_in);
  detail::MapMat<T>(cols.data(), ckk, n_in).noalias() =
      detail::CMapMat<T>(w.value().data(), Ci, ckk).transpose() * detail::CMapMat<T>(xcm->data(), Ci, n_in);
  Tensor<T> y({B, Co, Ho, Wo});
  detail::col2im(cols.data(), B, Co, Ho, Wo, k, stride, pad, H, W, y.data());
  if (b) {
    for (int bb = 0; bb < B; ++bb)
      for (int c = 0; c < Co; ++c) {
        T* p = y.data() + (static_cast<std::size_t>(bb) * Co + c) * Ho * Wo;
        for (int i = 0; i < Ho * Wo; ++i) p[i] += b.value()[c];
      }
  }
  return x.tape()->record(std::move(y), {x, w, b}, [=](Node<T>& n) {
    Buffer<T> dcols(static_cast<std::size_t>(ckk) * n_in);
    detail::im2col(n.grad.data(), B, Co, Ho, Wo, k, stride, pad, H, W, dcols.data());
    detail::CMapMat<T> D(dcols.data(), ckk, n_in);
    if (auto* gw = grad_target(w)) {
      detail::MapMat<T>(gw->data(), Ci, ckk).noalias() += detail::CMapMat<T>(xcm->data(), Ci, n_in) * D.transpose();
    }
    if (auto* gb = grad_target(b)) {
      for (int bb = 0; bb < B; ++bb)
        for (int c = 0; c < Co; ++c) {
          const T* p = n.grad.data() + (static_cast<std::size_t>(bb) * Co + c) * Ho * Wo;
          T s = 0;
          for (int i = 0; i < Ho * Wo; ++i) s += p[i];
          (*gb)[c] += s;
        }
    }
    if (auto* gx = grad_target(x)) {
      Buffer<T> dx(static_cast<std::size_t>(Ci) * n_in);
      detail::MapMat<T>(dx.data(), Ci, n_in).noalias() = detail::CMapMat<T>(w.value().data(), Ci, ckk) * D;
      Buffer<T> tmp(dx.size());
      detail::cm_to_nchw(dx.data(), B, Ci, H * W, tmp.data());
      for (std::size_t i = 0; i < tmp.size(); ++i) (*gx)[i] += tmp[i];
    }
  }, "conv_transpose2d");
}

/// Running statistics owned by a batch-norm layer.
template <class T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

/// Batch normalization over channel axis 1 for (B,C) or (B,C,H,W) inputs.
/// Train mode normalizes with batch statistics and updates `state`; eval
/// mode uses the running statistics and leaves `state` untouched.
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>* state, bool train,
                  const std::string& where = "batch-norm") {
  const auto& xs = x.shape();
  if (xs.size() != 2 && xs.size() != 4) throw ShapeError(where, "(B,C) or (B,C,H,W)", xs);
  if (state == nullptr) throw Error(where + ": missing running statistics");
  const int B = xs[0], C = xs[1];
  const int S = xs.size() == 4 ? xs[2] * xs[3] : 1;
  if (gamma.value().size() != static_cast<std::size_t>(C)) throw ShapeError(where, "(B," + std::to_string(gamma.value().size()) + ",...)", xs);
  const T count = static_cast<T>(B) * S;
  std::vector<T> mean(C), inv_std(C);
  const T* xd = x.value().data();
  if (train) {
    if (B * S < 1) throw ShapeError(where, "non-empty batch", xs);
    for (int c = 0; c < C; ++c) {
      T m = 0;
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < S; ++i) m += xd[(static_cast<std::size_t>(b) * C + c) * S + i];
      m /= count;
      T v = 0;
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < S; ++i) {
          const T d = xd[(static_cast<std::size_t>(b) * C + c) * S + i] - m;
          v += d * d;
        }
      v /= count;
      mean[c] = m;
      inv_std[c] = T(1) / std::sqrt(v + state->eps);
      const T unbiased = count > 1 ? v * count / (count - 1) : v;
      state->running_mean[c] = (T(1) - state->momentum) * state->running_mean[c] + state->momentum * m;
      state->running_var[c] = (T(1) - state->momentum) * state->running_var[c] + state->momentum * unbiased;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = state->running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state->running_var[c] + state->eps);
    }
  }
  Tensor<T> y(xs);
  auto xhat = std::make_shared<std::vector<T>>(x.value().size());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < S; ++i) {
        const std::size_t idx = (static_cast<std::size_t>(b) * C + c) * S + i;
        const T h = (xd[idx] - mean[c]) * inv_std[c];
        (*xhat)[idx] = h;
        y[idx] = gamma.value()[c] * h + beta.value()[c];
      }
  return x.tape()->record(std::move(y), {x, gamma, beta}, [=](Node<T>& n) {
    std::vector<T> sum_dy(C, T(0)), sum_dy_xhat(C, T(0));
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < S; ++i) {
          const std::size_t idx = (static_cast<std::size_t>(b) * C + c) * S + i;
          sum_dy[c] += n.grad[idx];
          sum_dy_xhat[c] += n.grad[idx] * (*xhat)[idx];
        }
    if (auto* gg = grad_target(gamma))
      for (int c = 0; c < C; ++c) (*gg)[c] += sum_dy_xhat[c];
    if (auto* gb = grad_target(beta))
      for (int c = 0; c < C; ++c) (*gb)[c] += sum_dy[c];
    if (auto* gx = grad_target(x)) {
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const T g = gamma.value()[c] * inv_std[c];
          for (int i = 0; i < S; ++i) {
            const std::size_t idx = (static_cast<std::size_t>(b) * C + c) * S + i;
            if (train) {
              (*gx)[idx] += g / count * (count * n.grad[idx] - sum_dy[c] - (*xhat)[idx] * sum_dy_xhat[c]);
            } else {
              (*gx)[idx] += g * n.grad[idx];
            }
          }
        }
    }
  }, "batch_norm");
}

namespace detail {
template <class T, class F, class D>
Var<T> unary(const Var<T>& x, F f, D dfdx_from_y_x, const char* name) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x.value()[i]);
  auto yv = std::make_shared<Tensor<T>>(y);
  return x.tape()->record(std::move(y), {x}, [x, yv, dfdx_from_y_x](Node<T>& n) {
    if (auto* g = grad_target(x)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * dfdx_from_y_x((*yv)[i], x.value()[i]);
    }
  }, name);
}
}  // namespace detail

template <class T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T, T v) { return v > T(0) ? T(1) : T(0); }, "relu");
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope = T(0.2)) {
  return detail::unary(x, [slope](T v) { return v > T(0) ? v : slope * v; },
                       [slope](T, T v) { return v > T(0) ? T(1) : slope; }, "leaky_relu");
}

template <class T>
T sigmoid_scalar(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(x, [](T v) { return sigmoid_scalar(v); }, [](T y, T) { return y * (T(1) - y); }, "sigmoid");
}

/// Row-wise softmax of a (B, K) matrix.
template <class T>
Var<T> softmax(const Var<T>& x) {
  detail::require_rank(x, 2, "softmax");
  const int B = x.dim(0), K = x.dim(1);
  Tensor<T> y(x.shape());
  for (int r = 0; r < B; ++r) {
    const T* in = x.value().data() + r * K;
    T* out = y.data() + r * K;
    const T mx = *std::max_element(in, in + K);
    T s = 0;
    for (int k = 0; k < K; ++k) s += (out[k] = std::exp(in[k] - mx));
    for (int k = 0; k < K; ++k) out[k] /= s;
  }
  auto yv = std::make_shared<Tensor<T>>(y);
  return x.tape()->record(std::move(y), {x}, [x, yv, B, K](Node<T>& n) {
    if (auto* g = grad_target(x)) {
      for (int r = 0; r < B; ++r) {
        const T* p = yv->data() + r * K;
        const T* dy = n.grad.data() + r * K;
        T dot = 0;
        for (int k = 0; k < K; ++k) dot += p[k] * dy[k];
        for (int k = 0; k < K; ++k) (*g)[r * K + k] += p[k] * (dy[k] - dot);
      }
    }
  }, "softmax");
}

template <class T>
Var<T> max_pool2d(const Var<T>& x, int k, int stride, int pad, const std::string& where = "max-pool") {
  detail::require_rank(x, 4, where);
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = detail::conv_out(H, k, stride, pad), Wo = detail::conv_out(W, k, stride, pad);
  if (Ho <= 0 || Wo <= 0) throw ShapeError(where, "spatial extent >= kernel " + std::to_string(k), x.shape());
  Tensor<T> y({B, C, Ho, Wo});
  auto arg = std::make_shared<std::vector<std::size_t>>(y.size());
  const T* xd = x.value().data();
  std::size_t o = 0;
  for (int bc = 0; bc < B * C; ++bc)
    for (int oh = 0; oh < Ho; ++oh)
      for (int ow = 0; ow < Wo; ++ow, ++o) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_i = 0;
        for (int ki = 0; ki < k; ++ki)
          for (int kj = 0; kj < k; ++kj) {
            const int ih = oh * stride - pad + ki, iw = ow * stride - pad + kj;
            if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
            const std::size_t idx = static_cast<std::size_t>(bc) * H * W + ih * W + iw;
            if (xd[idx] > best) {
              best = xd[idx];
              best_i = idx;
            }
          }
        y[o] = best;
        (*arg)[o] = best_i;
      }
  return x.tape()->record(std::move(y), {x}, [x, arg](Node<T>& n) {
    if (auto* g = grad_target(x)) {
      for (std::size_t i = 0; i < arg->size(); ++i) (*g)[(*arg)[i]] += n.grad[i];
    }
  }, "max_pool2d");
}

template <class T>
Var<T> upsample_nearest(const Var<T>& x, int factor, const std::string& where = "nearest-upsample") {
  detail::require_rank(x, 4, where);
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H * factor, Wo = W * factor;
  Tensor<T> y({B, C, Ho, Wo});
  for (int bc = 0; bc < B * C; ++bc)
    for (int h = 0; h < Ho; ++h)
      for (int w = 0; w < Wo; ++w)
        y[(static_cast<std::size_t>(bc) * Ho + h) * Wo + w] = x.value()[(static_cast<std::size_t>(bc) * H + h / factor) * W + w / factor];
  return x.tape()->record(std::move(y), {x}, [x, B, C, H, W, factor](Node<T>& n) {
    if (auto* g = grad_target(x)) {
      const int Ho = H * factor, Wo = W * factor;
      for (int bc = 0; bc < B * C; ++bc)
        for (int h = 0; h < Ho; ++h)
          for (int w = 0; w < Wo; ++w)
            (*g)[(static_cast<std::size_t>(bc) * H + h / factor) * W + w / factor] += n.grad[(static_cast<std::size_t>(bc) * Ho + h) * Wo + w];
    }
  }, "upsample_nearest");
}

}  // namespace dualdis
