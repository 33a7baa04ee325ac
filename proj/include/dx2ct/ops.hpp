#pragma once

// Dense forward/backward kernels. Layout conventions:
//   feature maps   (N, C, H, W) row-major
//   token matrices (T, C) or batched (N, T, C)
// GEMMs go through Eigen; everything else is plain loops.

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <span>

#include "dx2ct/tensor.hpp"

namespace dx2ct::ops {

enum class Act { identity, relu, tanh, silu };

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C(m,n) = alpha * op(A) * op(B) + beta * C
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          T alpha, const T* a, const T* b, T beta, T* c) {
  Eigen::Map<const EMat<T>> A(a, trans_a ? k : m, trans_a ? m : k);
  Eigen::Map<const EMat<T>> B(b, trans_b ? n : k, trans_b ? k : n);
  Eigen::Map<EMat<T>> C(c, m, n);
  auto run = [&](const auto& prod) {
    if (beta == T(0)) {
      C.noalias() = alpha * prod;
    } else {
      if (beta != T(1)) C *= beta;
      C.noalias() += alpha * prod;
    }
  };
  if (!trans_a && !trans_b) run(A * B);
  else if (trans_a && !trans_b) run(A.transpose() * B);
  else if (!trans_a && trans_b) run(A * B.transpose());
  else run(A.transpose() * B.transpose());
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_valid(a.same_shape(b), "add: shape mismatch " + shape_str(a.shape()) +
                                     " vs " + shape_str(b.shape()));
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
  return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_valid(a.same_shape(b), "sub: shape mismatch");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] - b[i];
  return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_valid(a.same_shape(b), "mul: shape mismatch");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] * b[i];
  return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] * s;
  return y;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] + s;
  return y;
}

template <typename T>
void axpy(T alpha, const Tensor<T>& x, Tensor<T>& y) {
  require_valid(x.same_shape(y), "axpy: shape mismatch");
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] += alpha * x[i];
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = T(0);
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
  return Tensor<T>::scalar(s);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return Tensor<T>::scalar(sum_all(a)[0] / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act act) {
  Tensor<T> y(x.shape());
  switch (act) {
    case Act::identity:
      y = x;
      break;
    case Act::relu:
      for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Act::tanh:
      for (std::size_t i = 0; i < x.numel(); ++i) y[i] = std::tanh(x[i]);
      break;
    case Act::silu:
      for (std::size_t i = 0; i < x.numel(); ++i)
        y[i] = x[i] / (T(1) + std::exp(-x[i]));
      break;
  }
  return y;
}

// dx given the pre-activation input x.
template <typename T>
void activation_backward(const Tensor<T>& x, const Tensor<T>& dy, Act act,
                         Tensor<T>& dx_accum) {
  switch (act) {
    case Act::identity:
      for (std::size_t i = 0; i < x.numel(); ++i) dx_accum[i] += dy[i];
      break;
    case Act::relu:
      for (std::size_t i = 0; i < x.numel(); ++i)
        if (x[i] > T(0)) dx_accum[i] += dy[i];
      break;
    case Act::tanh:
      for (std::size_t i = 0; i < x.numel(); ++i) {
        T th = std::tanh(x[i]);
        dx_accum[i] += dy[i] * (T(1) - th * th);
      }
      break;
    case Act::silu:
      for (std::size_t i = 0; i < x.numel(); ++i) {
        T s = T(1) / (T(1) + std::exp(-x[i]));
        dx_accum[i] += dy[i] * s * (T(1) + x[i] * (T(1) - s));
      }
      break;
  }
}

// ---------------------------------------------------------------------------
// Matmul on token matrices
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
  require_valid(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 tensors");
  std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  std::size_t ka = trans_a ? a.dim(0) : a.dim(1);
  std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  require_valid(ka == kb, "matmul: inner dimensions differ");
  Tensor<T> c({m, n});
  gemm<T>(trans_a, trans_b, m, n, ka, T(1), a.data(), b.data(), T(0), c.data());
  return c;
}

// ---------------------------------------------------------------------------
// Convolution (square kernel), im2col + GEMM
// ---------------------------------------------------------------------------

struct ConvDims {
  std::size_t n, ci, h, w, co, k, ho, wo;
  int stride, pad;
};

inline ConvDims conv_dims(const Shape& x, const Shape& w, int stride, int pad) {
  require_valid(x.size() == 4, "conv2d: input must be (N,C,H,W)");
  require_valid(w.size() == 4 && w[2] == w[3], "conv2d: weight must be (Co,Ci,k,k)");
  require_valid(x[1] == w[1], "conv2d: input channels " + std::to_string(x[1]) +
                                  " != weight channels " + std::to_string(w[1]));
  ConvDims d;
  d.n = x[0];
  d.ci = x[1];
  d.h = x[2];
  d.w = x[3];
  d.co = w[0];
  d.k = w[2];
  d.stride = stride;
  d.pad = pad;
  std::size_t padded_h = d.h + 2 * pad;
  std::size_t padded_w = d.w + 2 * pad;
  require_valid(padded_h >= d.k && padded_w >= d.k, "conv2d: kernel larger than input");
  d.ho = (padded_h - d.k) / stride + 1;
  d.wo = (padded_w - d.k) / stride + 1;
  return d;
}

// col has rows Ci*k*k and cols Ho*Wo for one image.
template <typename T>
void im2col(const T* img, const ConvDims& d, T* col) {
  const std::size_t hw = d.ho * d.wo;
  for (std::size_t c = 0; c < d.ci; ++c) {
    const T* plane = img + c * d.h * d.w;
    for (std::size_t ki = 0; ki < d.k; ++ki) {
      for (std::size_t kj = 0; kj < d.k; ++kj) {
        T* row = col + ((c * d.k + ki) * d.k + kj) * hw;
        for (std::size_t oh = 0; oh < d.ho; ++oh) {
          std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * d.stride - d.pad +
                              static_cast<std::ptrdiff_t>(ki);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) {
            for (std::size_t ow = 0; ow < d.wo; ++ow) row[oh * d.wo + ow] = T(0);
            continue;
          }
          for (std::size_t ow = 0; ow < d.wo; ++ow) {
            std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * d.stride - d.pad +
                                static_cast<std::ptrdiff_t>(kj);
            row[oh * d.wo + ow] =
                (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w))
                    ? T(0)
                    : plane[ih * d.w + iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_accum(const T* col, const ConvDims& d, T* img) {
  const std::size_t hw = d.ho * d.wo;
  for (std::size_t c = 0; c < d.ci; ++c) {
    T* plane = img + c * d.h * d.w;
    for (std::size_t ki = 0; ki < d.k; ++ki) {
      for (std::size_t kj = 0; kj < d.k; ++kj) {
        const T* row = col + ((c * d.k + ki) * d.k + kj) * hw;
        for (std::size_t oh = 0; oh < d.ho; ++oh) {
          std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * d.stride - d.pad +
                              static_cast<std::ptrdiff_t>(ki);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t ow = 0; ow < d.wo; ++ow) {
            std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * d.stride - d.pad +
                                static_cast<std::ptrdiff_t>(kj);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w)) continue;
            plane[ih * d.w + iw] += row[oh * d.wo + ow];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                 int stride, int pad) {
  ConvDims d = conv_dims(x.shape(), w.shape(), stride, pad);
  if (bias)
    require_valid(bias->rank() == 1 && bias->dim(0) == d.co,
                  "conv2d: bias must have Co entries");
  const std::size_t ckk = d.ci * d.k * d.k;
  const std::size_t hw = d.ho * d.wo;
  Tensor<T> y({d.n, d.co, d.ho, d.wo});
  std::vector<T> col(ckk * hw);
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(x.data() + n * d.ci * d.h * d.w, d, col.data());
    gemm<T>(false, false, d.co, hw, ckk, T(1), w.data(), col.data(), T(0),
            y.data() + n * d.co * hw);
  }
  if (bias) {
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t c = 0; c < d.co; ++c) {
        T b = (*bias)[c];
        T* p = y.data() + (n * d.co + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) p[i] += b;
      }
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     int stride, int pad, Tensor<T>* dx, Tensor<T>* dw,
                     Tensor<T>* db) {
  ConvDims d = conv_dims(x.shape(), w.shape(), stride, pad);
  const std::size_t ckk = d.ci * d.k * d.k;
  const std::size_t hw = d.ho * d.wo;
  std::vector<T> col(ckk * hw);
  std::vector<T> dcol(ckk * hw);
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* dy_n = dy.data() + n * d.co * hw;
    if (dw) {
      im2col(x.data() + n * d.ci * d.h * d.w, d, col.data());
      // dW += dy_n (Co,hw) * col^T (hw,ckk)
      gemm<T>(false, true, d.co, ckk, hw, T(1), dy_n, col.data(), T(1), dw->data());
    }
    if (dx) {
      // dcol = W^T (ckk,Co) * dy_n (Co,hw)
      gemm<T>(true, false, ckk, hw, d.co, T(1), w.data(), dy_n, T(0), dcol.data());
      col2im_accum(dcol.data(), d, dx->data() + n * d.ci * d.h * d.w);
    }
  }
  if (db) {
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t c = 0; c < d.co; ++c) {
        const T* p = dy.data() + (n * d.co + c) * hw;
        T s = T(0);
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
        (*db)[c] += s;
      }
  }
}

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t kh, std::size_t kw) {
  require_valid(x.rank() == 4, "avg_pool2d: input must be (N,C,H,W)");
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require_valid(kh >= 1 && kw >= 1 && h % kh == 0 && w % kw == 0,
                "avg_pool2d: window " + std::to_string(kh) + "x" + std::to_string(kw) +
                    " must evenly divide input " + shape_str(x.shape()));
  std::size_t ho = h / kh, wo = w / kw;
  Tensor<T> y({n, c, ho, wo});
  const T inv = T(1) / static_cast<T>(kh * kw);
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* in = x.data() + nc * h * w;
    T* out = y.data() + nc * ho * wo;
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow) {
        T s = T(0);
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j)
            s += in[(oh * kh + i) * w + ow * kw + j];
        out[oh * wo + ow] = s * inv;
      }
  }
  return y;
}

template <typename T>
void avg_pool2d_backward(const Shape& x_shape, const Tensor<T>& dy, std::size_t kh,
                         std::size_t kw, Tensor<T>& dx_accum) {
  std::size_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3];
  std::size_t ho = h / kh, wo = w / kw;
  const T inv = T(1) / static_cast<T>(kh * kw);
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* g = dy.data() + nc * ho * wo;
    T* out = dx_accum.data() + nc * h * w;
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow) {
        T v = g[oh * wo + ow] * inv;
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j)
            out[(oh * kh + i) * w + ow * kw + j] += v;
      }
  }
}

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
  require_valid(x.rank() == 4, "upsample_nearest2: input must be (N,C,H,W)");
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({n, c, 2 * h, 2 * w});
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* in = x.data() + nc * h * w;
    T* out = y.data() + nc * 4 * h * w;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        T v = in[i * w + j];
        out[(2 * i) * 2 * w + 2 * j] = v;
        out[(2 * i) * 2 * w + 2 * j + 1] = v;
        out[(2 * i + 1) * 2 * w + 2 * j] = v;
        out[(2 * i + 1) * 2 * w + 2 * j + 1] = v;
      }
  }
  return y;
}

template <typename T>
void upsample_nearest2_backward(const Shape& x_shape, const Tensor<T>& dy,
                                Tensor<T>& dx_accum) {
  std::size_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3];
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* g = dy.data() + nc * 4 * h * w;
    T* out = dx_accum.data() + nc * h * w;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out[i * w + j] += g[(2 * i) * 2 * w + 2 * j] + g[(2 * i) * 2 * w + 2 * j + 1] +
                          g[(2 * i + 1) * 2 * w + 2 * j] +
                          g[(2 * i + 1) * 2 * w + 2 * j + 1];
  }
}

// Edge (replicate) padding: border values extend outward by p on each side.
template <typename T>
Tensor<T> pad_edge2d(const Tensor<T>& x, std::size_t p) {
  require_valid(x.rank() == 4, "pad_edge2d: input must be (N,C,H,W)");
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::size_t ho = h + 2 * p, wo = w + 2 * p;
  Tensor<T> y({n, c, ho, wo});
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* in = x.data() + nc * h * w;
    T* out = y.data() + nc * ho * wo;
    for (std::size_t i = 0; i < ho; ++i) {
      std::size_t si = i < p ? 0 : std::min(i - p, h - 1);
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t sj = j < p ? 0 : std::min(j - p, w - 1);
        out[i * wo + j] = in[si * w + sj];
      }
    }
  }
  return y;
}

template <typename T>
void pad_edge2d_backward(const Shape& x_shape, std::size_t p, const Tensor<T>& dy,
                         Tensor<T>& dx_accum) {
  std::size_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3];
  std::size_t ho = h + 2 * p, wo = w + 2 * p;
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* g = dy.data() + nc * ho * wo;
    T* out = dx_accum.data() + nc * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      std::size_t si = i < p ? 0 : std::min(i - p, h - 1);
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t sj = j < p ? 0 : std::min(j - p, w - 1);
        out[si * w + sj] += g[i * wo + j];
      }
    }
  }
}

// Bilinear interpolation weights for one axis, half-pixel centers, edges clamped.
// Resizing to the same extent is the identity.
inline void bilinear_axis(std::size_t in, std::size_t out, std::size_t i,
                          std::size_t& lo, std::size_t& hi, double& w_hi) {
  double src = (static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                   static_cast<double>(out) -
               0.5;
  if (src < 0) src = 0;
  double max_src = static_cast<double>(in - 1);
  if (src > max_src) src = max_src;
  lo = static_cast<std::size_t>(src);
  hi = std::min(lo + 1, in - 1);
  w_hi = src - static_cast<double>(lo);
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t ho, std::size_t wo) {
  require_valid(x.rank() == 4, "bilinear_resize: input must be (N,C,H,W)");
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({n, c, ho, wo});
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* in = x.data() + nc * h * w;
    T* out = y.data() + nc * ho * wo;
    for (std::size_t i = 0; i < ho; ++i) {
      std::size_t r0, r1;
      double wr;
      bilinear_axis(h, ho, i, r0, r1, wr);
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t c0, c1;
        double wc;
        bilinear_axis(w, wo, j, c0, c1, wc);
        double v = (1 - wr) * ((1 - wc) * in[r0 * w + c0] + wc * in[r0 * w + c1]) +
                   wr * ((1 - wc) * in[r1 * w + c0] + wc * in[r1 * w + c1]);
        out[i * wo + j] = static_cast<T>(v);
      }
    }
  }
  return y;
}

template <typename T>
void bilinear_resize_backward(const Shape& x_shape, const Tensor<T>& dy,
                              Tensor<T>& dx_accum) {
  std::size_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3];
  std::size_t ho = dy.dim(2), wo = dy.dim(3);
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* g = dy.data() + nc * ho * wo;
    T* out = dx_accum.data() + nc * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      std::size_t r0, r1;
      double wr;
      bilinear_axis(h, ho, i, r0, r1, wr);
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t c0, c1;
        double wc;
        bilinear_axis(w, wo, j, c0, c1, wc);
        T gv = g[i * wo + j];
        out[r0 * w + c0] += static_cast<T>((1 - wr) * (1 - wc)) * gv;
        out[r0 * w + c1] += static_cast<T>((1 - wr) * wc) * gv;
        out[r1 * w + c0] += static_cast<T>(wr * (1 - wc)) * gv;
        out[r1 * w + c1] += static_cast<T>(wr * wc) * gv;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

template <typename T>
struct NormStats {
  Tensor<T> mean;     // one entry per normalization set
  Tensor<T> inv_std;  // 1 / sqrt(var + eps)
};

// Parameter-free group normalization over (N,C,H,W); each of N*G sets spans
// (C/G)*H*W elements.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, T eps,
                     NormStats<T>* stats) {
  require_valid(x.rank() == 4, "group_norm: input must be (N,C,H,W)");
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require_valid(groups >= 1 && c % groups == 0,
                "group_norm: groups " + std::to_string(groups) +
                    " must divide channels " + std::to_string(c));
  std::size_t gs = (c / groups) * h * w;
  Tensor<T> y(x.shape());
  Tensor<T> mean({n * groups});
  Tensor<T> inv_std({n * groups});
  for (std::size_t ng = 0; ng < n * groups; ++ng) {
    const T* in = x.data() + ng * gs;
    T* out = y.data() + ng * gs;
    T m = T(0);
    for (std::size_t i = 0; i < gs; ++i) m += in[i];
    m /= static_cast<T>(gs);
    T v = T(0);
    for (std::size_t i = 0; i < gs; ++i) {
      T d = in[i] - m;
      v += d * d;
    }
    v /= static_cast<T>(gs);
    T is = T(1) / std::sqrt(v + eps);
    mean[ng] = m;
    inv_std[ng] = is;
    for (std::size_t i = 0; i < gs; ++i) out[i] = (in[i] - m) * is;
  }
  if (stats) *stats = {std::move(mean), std::move(inv_std)};
  return y;
}

template <typename T>
void group_norm_backward(const Tensor<T>& x, const NormStats<T>& stats,
                         const Tensor<T>& dy, std::size_t groups,
                         Tensor<T>& dx_accum) {
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::size_t gs = (c / groups) * h * w;
  for (std::size_t ng = 0; ng < n * groups; ++ng) {
    const T* in = x.data() + ng * gs;
    const T* g = dy.data() + ng * gs;
    T* out = dx_accum.data() + ng * gs;
    T m = stats.mean[ng], is = stats.inv_std[ng];
    T sum_g = T(0), sum_gx = T(0);
    for (std::size_t i = 0; i < gs; ++i) {
      T xh = (in[i] - m) * is;
      sum_g += g[i];
      sum_gx += g[i] * xh;
    }
    T inv_gs = T(1) / static_cast<T>(gs);
    for (std::size_t i = 0; i < gs; ++i) {
      T xh = (in[i] - m) * is;
      out[i] += is * (g[i] - inv_gs * sum_g - xh * inv_gs * sum_gx);
    }
  }
}

// Layer norm over the last dimension; rows = numel / last_dim.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps, NormStats<T>* stats) {
  require_valid(x.rank() >= 1, "layer_norm: empty shape");
  std::size_t cdim = x.dim(x.rank() - 1);
  std::size_t rows = x.numel() / cdim;
  Tensor<T> y(x.shape());
  Tensor<T> mean({rows});
  Tensor<T> inv_std({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data() + r * cdim;
    T* out = y.data() + r * cdim;
    T m = T(0);
    for (std::size_t i = 0; i < cdim; ++i) m += in[i];
    m /= static_cast<T>(cdim);
    T v = T(0);
    for (std::size_t i = 0; i < cdim; ++i) {
      T d = in[i] - m;
      v += d * d;
    }
    v /= static_cast<T>(cdim);
    T is = T(1) / std::sqrt(v + eps);
    mean[r] = m;
    inv_std[r] = is;
    for (std::size_t i = 0; i < cdim; ++i) out[i] = (in[i] - m) * is;
  }
  if (stats) *stats = {std::move(mean), std::move(inv_std)};
  return y;
}

template <typename T>
void layer_norm_backward(const Tensor<T>& x, const NormStats<T>& stats,
                         const Tensor<T>& dy, Tensor<T>& dx_accum) {
  std::size_t cdim = x.dim(x.rank() - 1);
  std::size_t rows = x.numel() / cdim;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data() + r * cdim;
    const T* g = dy.data() + r * cdim;
    T* out = dx_accum.data() + r * cdim;
    T m = stats.mean[r], is = stats.inv_std[r];
    T sum_g = T(0), sum_gx = T(0);
    for (std::size_t i = 0; i < cdim; ++i) {
      T xh = (in[i] - m) * is;
      sum_g += g[i];
      sum_gx += g[i] * xh;
    }
    T inv_c = T(1) / static_cast<T>(cdim);
    for (std::size_t i = 0; i < cdim; ++i) {
      T xh = (in[i] - m) * is;
      out[i] += is * (g[i] - inv_c * sum_g - xh * inv_c * sum_gx);
    }
  }
}

// ---------------------------------------------------------------------------
// Softmax over the last dimension
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  std::size_t cdim = x.dim(x.rank() - 1);
  std::size_t rows = x.numel() / cdim;
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data() + r * cdim;
    T* out = y.data() + r * cdim;
    T mx = in[0];
    for (std::size_t i = 1; i < cdim; ++i) mx = std::max(mx, in[i]);
    T s = T(0);
    for (std::size_t i = 0; i < cdim; ++i) {
      out[i] = std::exp(in[i] - mx);
      s += out[i];
    }
    T inv = T(1) / s;
    for (std::size_t i = 0; i < cdim; ++i) out[i] *= inv;
  }
  return y;
}

template <typename T>
void softmax_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx_accum) {
  std::size_t cdim = y.dim(y.rank() - 1);
  std::size_t rows = y.numel() / cdim;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* yv = y.data() + r * cdim;
    const T* g = dy.data() + r * cdim;
    T* out = dx_accum.data() + r * cdim;
    T dot = T(0);
    for (std::size_t i = 0; i < cdim; ++i) dot += g[i] * yv[i];
    for (std::size_t i = 0; i < cdim; ++i) out[i] += yv[i] * (g[i] - dot);
  }
}

// ---------------------------------------------------------------------------
// Layout changes
// ---------------------------------------------------------------------------

// (N,C,H,W) -> (N, H*W, C)
template <typename T>
Tensor<T> nchw_to_tokens(const Tensor<T>& x) {
  require_valid(x.rank() == 4, "nchw_to_tokens: input must be (N,C,H,W)");
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({n, h * w, c});
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const T* in = x.data() + (ni * c + ci) * h * w;
      T* out = y.data() + ni * h * w * c + ci;
      for (std::size_t i = 0; i < h * w; ++i) out[i * c] = in[i];
    }
  return y;
}

// (N, H*W, C) -> (N,C,H,W)
template <typename T>
Tensor<T> tokens_to_nchw(const Tensor<T>& x, std::size_t h, std::size_t w) {
  require_valid(x.rank() == 3 && x.dim(1) == h * w,
                "tokens_to_nchw: token count must equal h*w");
  std::size_t n = x.dim(0), c = x.dim(2);
  Tensor<T> y({n, c, h, w});
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const T* in = x.data() + ni * h * w * c + ci;
      T* out = y.data() + (ni * c + ci) * h * w;
      for (std::size_t i = 0; i < h * w; ++i) out[i] = in[i * c];
    }
  return y;
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>* const> parts) {
  require_valid(!parts.empty(), "concat_rows: no inputs");
  std::size_t cols = parts[0]->dim(parts[0]->rank() - 1);
  std::size_t rows = 0;
  for (auto* p : parts) {
    require_valid(p->rank() == 2 && p->dim(1) == cols,
                  "concat_rows: all inputs must be (T,C) with equal C");
    rows += p->dim(0);
  }
  Tensor<T> y({rows, cols});
  std::size_t off = 0;
  for (auto* p : parts) {
    std::copy(p->data(), p->data() + p->numel(), y.data() + off);
    off += p->numel();
  }
  return y;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
  require_valid(!parts.empty(), "concat_channels: no inputs");
  std::size_t n = parts[0]->dim(0), h = parts[0]->dim(2), w = parts[0]->dim(3);
  std::size_t ctot = 0;
  for (auto* p : parts) {
    require_valid(p->rank() == 4 && p->dim(0) == n && p->dim(2) == h && p->dim(3) == w,
                  "concat_channels: spatial/batch dims must match");
    ctot += p->dim(1);
  }
  Tensor<T> y({n, ctot, h, w});
  for (std::size_t ni = 0; ni < n; ++ni) {
    std::size_t coff = 0;
    for (auto* p : parts) {
      std::size_t pc = p->dim(1);
      std::copy(p->data() + ni * pc * h * w, p->data() + (ni + 1) * pc * h * w,
                y.data() + (ni * ctot + coff) * h * w);
      coff += pc;
    }
  }
  return y;
}

// Slice [begin, begin+len) of the last dimension.
template <typename T>
Tensor<T> narrow_last(const Tensor<T>& x, std::size_t begin, std::size_t len) {
  std::size_t cdim = x.dim(x.rank() - 1);
  require_valid(begin + len <= cdim, "narrow_last: range out of bounds");
  std::size_t rows = x.numel() / cdim;
  Shape s = x.shape();
  s.back() = len;
  Tensor<T> y(std::move(s));
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(x.data() + r * cdim + begin, x.data() + r * cdim + begin + len,
              y.data() + r * len);
  return y;
}

template <typename T>
void narrow_last_backward(const Shape& x_shape, const Tensor<T>& dy,
                          std::size_t begin, Tensor<T>& dx_accum) {
  std::size_t cdim = x_shape.back();
  std::size_t len = dy.dim(dy.rank() - 1);
  std::size_t rows = dy.numel() / len;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < len; ++i)
      dx_accum[r * cdim + begin + i] += dy[r * len + i];
}

// ---------------------------------------------------------------------------
// Broadcast helpers
// ---------------------------------------------------------------------------

// x (..., C) + b (C)
template <typename T>
Tensor<T> add_bias_last(const Tensor<T>& x, const Tensor<T>& b) {
  std::size_t cdim = x.dim(x.rank() - 1);
  require_valid(b.rank() == 1 && b.dim(0) == cdim, "add_bias_last: bias size mismatch");
  Tensor<T> y(x.shape());
  std::size_t rows = x.numel() / cdim;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < cdim; ++i)
      y[r * cdim + i] = x[r * cdim + i] + b[i];
  return y;
}

// x (N,C,H,W) + v (N,C) broadcast over H,W
template <typename T>
Tensor<T> add_nc(const Tensor<T>& x, const Tensor<T>& v) {
  require_valid(x.rank() == 4 && v.rank() == 2 && v.dim(0) == x.dim(0) &&
                    v.dim(1) == x.dim(1),
                "add_nc: shapes incompatible");
  std::size_t hw = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  for (std::size_t nc = 0; nc < x.dim(0) * x.dim(1); ++nc) {
    T b = v[nc];
    const T* in = x.data() + nc * hw;
    T* out = y.data() + nc * hw;
    for (std::size_t i = 0; i < hw; ++i) out[i] = in[i] + b;
  }
  return y;
}

// y = x * gamma[c] + beta[c] over (N,C,H,W)
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& gamma,
                         const Tensor<T>& beta) {
  require_valid(x.rank() == 4 && gamma.rank() == 1 && beta.rank() == 1 &&
                    gamma.dim(0) == x.dim(1) && beta.dim(0) == x.dim(1),
                "channel_affine: shapes incompatible");
  std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci) {
      T g = gamma[ci], b = beta[ci];
      const T* in = x.data() + (ni * c + ci) * hw;
      T* out = y.data() + (ni * c + ci) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[i] = in[i] * g + b;
    }
  return y;
}

}  // namespace dx2ct::ops
