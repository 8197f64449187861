// Neural building blocks on top of the tensor core: dilated 2-D convolution,
// batch normalization, ReLU, bilinear upsampling and spatial pooling, plus
// thin layer structs that own parameters.
//
// Convolution is cross-correlation (no kernel flip) with zero padding,
// implemented as im2col + gemm. Bilinear interpolation follows the
// align-corners-false convention in lerp form, which reproduces constants
// exactly.
#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>

#include "ocseg/tensor.hpp"

namespace ocseg {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

inline int conv_out_extent(int in, int k, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

namespace detail {

// col has Cin*kh*kw rows and OH*OW columns.
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int dilation, int OH, int OW, T* col) {
  int row = 0;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx, ++row) {
        T* dst = col + static_cast<int64_t>(row) * OH * OW;
        const T* src = x + static_cast<int64_t>(c) * H * W;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ky * dilation;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < OW; ++ox) dst[oy * OW + ox] = T(0);
            continue;
          }
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kx * dilation;
            dst[oy * OW + ox] = (ix < 0 || ix >= W) ? T(0) : src[iy * W + ix];
          }
        }
      }
}

template <typename T>
void col2im_acc(const T* col, int C, int H, int W, int kh, int kw, int stride,
                int pad, int dilation, int OH, int OW, T* x) {
  int row = 0;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx, ++row) {
        const T* src = col + static_cast<int64_t>(row) * OH * OW;
        T* dst = x + static_cast<int64_t>(c) * H * W;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ky * dilation;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kx * dilation;
            if (ix >= 0 && ix < W) dst[iy * W + ix] += src[oy * OW + ox];
          }
        }
      }
}

}  // namespace detail

// Cross-correlation with zero padding. weight is (out_ch, in_ch, kh, kw);
// bias, when defined, is (out_ch). Gradients reach the input, the weight and
// the bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad, int dilation) {
  const Shape4 xs = x.shape4();
  if (weight.rank() != 4)
    throw ShapeError("conv2d: weight must be rank 4, got " + shape_str(weight.shape()));
  const int Cout = weight.dim(0), Cin = weight.dim(1);
  const int kh = weight.dim(2), kw = weight.dim(3);
  if (Cin != xs.channels)
    throw ShapeError("conv2d: input has " + std::to_string(xs.channels) +
                     " channels but weight expects " + std::to_string(Cin));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ContractError("conv2d: kernel extents must be odd");
  if (stride < 1 || dilation < 1 || pad < 0)
    throw ContractError("conv2d: invalid stride/pad/dilation");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout))
    throw ShapeError("conv2d: bias shape mismatch");
  const int OH = conv_out_extent(xs.height, kh, stride, pad, dilation);
  const int OW = conv_out_extent(xs.width, kw, stride, pad, dilation);
  if (OH < 1 || OW < 1)
    throw ContractError("conv2d: output would be empty for input " +
                        shape_str(x.shape()));

  const int B = xs.batch, H = xs.height, W = xs.width;
  const int rows = Cin * kh * kw;
  const int64_t ohow = static_cast<int64_t>(OH) * OW;
  const bool has_bias = bias.defined();
  const bool needs_grad = x.requires_grad() || weight.requires_grad() ||
                          (has_bias && bias.requires_grad());

  // Cached columns make the backward pass a pair of gemms per batch item.
  auto cols = std::make_shared<std::vector<std::vector<T>>>();
  if (needs_grad) cols->resize(B);

  std::vector<std::shared_ptr<detail::TensorNode<T>>> parents{x.node(), weight.node()};
  if (has_bias) parents.push_back(bias.node());

  auto out = detail::make_op_output<T>(
      {B, Cout, OH, OW}, std::move(parents),
      [=](detail::TensorNode<T>& n) {
        auto& px = n.parents[0];
        auto& pw = n.parents[1];
        const bool gx = px->requires_grad;
        const bool gw = pw->requires_grad;
        if (gx) px->ensure_grad();
        if (gw) pw->ensure_grad();
        std::vector<T> gcol;
        if (gx) gcol.resize(static_cast<size_t>(rows) * ohow);
        for (int b = 0; b < B; ++b) {
          const T* g = n.grad.data() + static_cast<int64_t>(b) * Cout * ohow;
          const std::vector<T>& col = (*cols)[b];
          if (gw)
            detail::gemm_abt_acc(g, col.data(),
                                 pw->grad.data(), Cout, static_cast<int>(ohow), rows);
          if (gx) {
            std::fill(gcol.begin(), gcol.end(), T(0));
            detail::gemm_atb_acc(pw->value.data(), g, gcol.data(), rows, Cout,
                                 static_cast<int>(ohow));
            detail::col2im_acc(gcol.data(), Cin, H, W, kh, kw, stride, pad, dilation,
                               OH, OW,
                               px->grad.data() + static_cast<int64_t>(b) * Cin * H * W);
          }
        }
        if (has_bias && n.parents[2]->requires_grad) {
          auto& pb = n.parents[2];
          pb->ensure_grad();
          for (int b = 0; b < B; ++b)
            for (int co = 0; co < Cout; ++co) {
              const T* g = n.grad.data() + (static_cast<int64_t>(b) * Cout + co) * ohow;
              T acc = T(0);
              for (int64_t i = 0; i < ohow; ++i) acc += g[i];
              pb->grad[co] += acc;
            }
        }
      });

  std::vector<T> scratch;
  for (int b = 0; b < B; ++b) {
    std::vector<T>* col;
    if (needs_grad) {
      (*cols)[b].resize(static_cast<size_t>(rows) * ohow);
      col = &(*cols)[b];
    } else {
      scratch.resize(static_cast<size_t>(rows) * ohow);
      col = &scratch;
    }
    detail::im2col(x.data().data() + static_cast<int64_t>(b) * Cin * H * W, Cin, H, W,
                   kh, kw, stride, pad, dilation, OH, OW, col->data());
    T* o = out.data().data() + static_cast<int64_t>(b) * Cout * ohow;
    detail::gemm_acc(weight.data().data(), col->data(), o, Cout, rows,
                     static_cast<int>(ohow));
    if (has_bias)
      for (int co = 0; co < Cout; ++co) {
        const T bv = bias.data()[co];
        T* row = o + static_cast<int64_t>(co) * ohow;
        for (int64_t i = 0; i < ohow; ++i) row[i] += bv;
      }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, int stride, int pad,
                 int dilation) {
  return conv2d(x, weight, Tensor<T>(), stride, pad, dilation);
}

// Batch normalization over (batch, height, width) per channel. Training mode
// normalizes by biased batch statistics and updates the running buffers in
// place by exponential moving average; eval mode normalizes by the running
// buffers. running_mean/running_var have a single writer.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, T eps, T momentum,
                    bool training) {
  const Shape4 xs = x.shape4();
  const int C = xs.channels;
  const Tensor<T>* per_channel[] = {&gamma, &beta, &running_mean, &running_var};
  for (const Tensor<T>* t : per_channel)
    if (t->rank() != 1 || t->dim(0) != C)
      throw ShapeError("batchnorm: per-channel parameter shape mismatch for " +
                       std::to_string(C) + " channels");
  const int B = xs.batch, H = xs.height, W = xs.width;
  const int64_t hw = static_cast<int64_t>(H) * W;
  const int64_t m = static_cast<int64_t>(B) * hw;

  auto mean = std::make_shared<std::vector<T>>(C, T(0));
  auto invstd = std::make_shared<std::vector<T>>(C, T(0));
  if (training) {
    for (int c = 0; c < C; ++c) {
      T s = T(0);
      for (int b = 0; b < B; ++b) {
        const T* p = x.data().data() + (static_cast<int64_t>(b) * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
      }
      const T mu = s / static_cast<T>(m);
      T v = T(0);
      for (int b = 0; b < B; ++b) {
        const T* p = x.data().data() + (static_cast<int64_t>(b) * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const T d = p[i] - mu;
          v += d * d;
        }
      }
      v /= static_cast<T>(m);
      (*mean)[c] = mu;
      (*invstd)[c] = T(1) / std::sqrt(v + eps);
      running_mean.data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * mu;
      running_var.data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * v;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean)[c] = running_mean.data()[c];
      (*invstd)[c] = T(1) / std::sqrt(running_var.data()[c] + eps);
    }
  }

  auto out = detail::make_op_output<T>(
      x.shape(), {x.node(), gamma.node(), beta.node()},
      [=](detail::TensorNode<T>& n) {
        auto& px = n.parents[0];
        auto& pg = n.parents[1];
        auto& pb = n.parents[2];
        for (int c = 0; c < C; ++c) {
          const T mu = (*mean)[c];
          const T is = (*invstd)[c];
          const T ga = pg->value[c];
          T sum_g = T(0), sum_gx = T(0);
          for (int b = 0; b < B; ++b) {
            const T* g = n.grad.data() + (static_cast<int64_t>(b) * C + c) * hw;
            const T* xv = px->value.data() + (static_cast<int64_t>(b) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              sum_g += g[i];
              sum_gx += g[i] * (xv[i] - mu) * is;
            }
          }
          if (pg->requires_grad) {
            pg->ensure_grad();
            pg->grad[c] += sum_gx;
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            pb->grad[c] += sum_g;
          }
          if (px->requires_grad) {
            px->ensure_grad();
            if (training) {
              const T k = ga * is / static_cast<T>(m);
              for (int b = 0; b < B; ++b) {
                const T* g = n.grad.data() + (static_cast<int64_t>(b) * C + c) * hw;
                const T* xv = px->value.data() + (static_cast<int64_t>(b) * C + c) * hw;
                T* d = px->grad.data() + (static_cast<int64_t>(b) * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                  const T xhat = (xv[i] - mu) * is;
                  d[i] += k * (static_cast<T>(m) * g[i] - sum_g - xhat * sum_gx);
                }
              }
            } else {
              const T k = ga * is;
              for (int b = 0; b < B; ++b) {
                const T* g = n.grad.data() + (static_cast<int64_t>(b) * C + c) * hw;
                T* d = px->grad.data() + (static_cast<int64_t>(b) * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) d[i] += k * g[i];
              }
            }
          }
        }
      });
  auto ov = out.data();
  for (int c = 0; c < C; ++c) {
    const T mu = (*mean)[c];
    const T is = (*invstd)[c];
    const T ga = gamma.data()[c];
    const T be = beta.data()[c];
    for (int b = 0; b < B; ++b) {
      const T* p = x.data().data() + (static_cast<int64_t>(b) * C + c) * hw;
      T* o = ov.data() + (static_cast<int64_t>(b) * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) o[i] = ga * (p[i] - mu) * is + be;
    }
  }
  return out;
}

// Integer-factor bilinear upsampling, align-corners-false. Backward scatters
// the interpolation weights transposed.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int factor) {
  if (factor < 1) throw ContractError("bilinear_upsample: factor must be >= 1");
  const Shape4 xs = x.shape4();
  const int B = xs.batch, C = xs.channels, H = xs.height, W = xs.width;
  const int OH = H * factor, OW = W * factor;

  struct Tap {
    int y0, y1, x0, x1;
    T wy, wx;
  };
  auto taps = std::make_shared<std::vector<Tap>>();
  taps->reserve(static_cast<size_t>(OH) * OW);
  for (int oy = 0; oy < OH; ++oy) {
    const T sy = (static_cast<T>(oy) + T(0.5)) / static_cast<T>(factor) - T(0.5);
    const T fy = std::floor(sy);
    int y0 = static_cast<int>(fy);
    T wy = sy - fy;
    if (y0 < 0) {
      y0 = 0;
      wy = T(0);
    }
    int y1 = std::min(y0 + 1, H - 1);
    if (y0 >= H - 1) {
      y0 = H - 1;
      y1 = H - 1;
      wy = T(0);
    }
    for (int ox = 0; ox < OW; ++ox) {
      const T sx = (static_cast<T>(ox) + T(0.5)) / static_cast<T>(factor) - T(0.5);
      const T fx = std::floor(sx);
      int x0 = static_cast<int>(fx);
      T wx = sx - fx;
      if (x0 < 0) {
        x0 = 0;
        wx = T(0);
      }
      int x1 = std::min(x0 + 1, W - 1);
      if (x0 >= W - 1) {
        x0 = W - 1;
        x1 = W - 1;
        wx = T(0);
      }
      taps->push_back({y0, y1, x0, x1, wy, wx});
    }
  }

  auto out = detail::make_op_output<T>(
      {B, C, OH, OW}, {x.node()}, [=](detail::TensorNode<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const T* g = n.grad.data() +
                         (static_cast<int64_t>(b) * C + c) * OH * OW;
            T* d = p->grad.data() + (static_cast<int64_t>(b) * C + c) * H * W;
            for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) {
              const Tap& t = (*taps)[i];
              const T gv = g[i];
              d[t.y0 * W + t.x0] += gv * (T(1) - t.wy) * (T(1) - t.wx);
              d[t.y0 * W + t.x1] += gv * (T(1) - t.wy) * t.wx;
              d[t.y1 * W + t.x0] += gv * t.wy * (T(1) - t.wx);
              d[t.y1 * W + t.x1] += gv * t.wy * t.wx;
            }
          }
      });
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* src = x.data().data() + (static_cast<int64_t>(b) * C + c) * H * W;
      T* o = out.data().data() + (static_cast<int64_t>(b) * C + c) * OH * OW;
      for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) {
        const Tap& t = (*taps)[i];
        const T top = src[t.y0 * W + t.x0] +
                      t.wx * (src[t.y0 * W + t.x1] - src[t.y0 * W + t.x0]);
        const T bot = src[t.y1 * W + t.x0] +
                      t.wx * (src[t.y1 * W + t.x1] - src[t.y1 * W + t.x0]);
        o[i] = top + t.wy * (bot - top);
      }
    }
  return out;
}

// Per-channel spatial mean down to 1x1.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape4 xs = x.shape4();
  const int B = xs.batch, C = xs.channels;
  const int64_t hw = static_cast<int64_t>(xs.height) * xs.width;
  auto out = detail::make_op_output<T>(
      {B, C, 1, 1}, {x.node()}, [B, C, hw](detail::TensorNode<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
          const T g = n.grad[bc] / static_cast<T>(hw);
          T* d = p->grad.data() + bc * hw;
          for (int64_t i = 0; i < hw; ++i) d[i] += g;
        }
      });
  for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
    const T* src = x.data().data() + bc * hw;
    T acc = T(0);
    for (int64_t i = 0; i < hw; ++i) acc += src[i];
    out.data()[bc] = acc / static_cast<T>(hw);
  }
  return out;
}

// ---------------------------------------------------------------------------
// raw (non-differentiable) resampling for augmentation and inference
// ---------------------------------------------------------------------------

// Bilinear resize of a (C,H,W) buffer to (C,OH,OW), align-corners-false.
template <typename T>
void bilinear_resize_raw(const T* src, int C, int H, int W, T* dst, int OH, int OW) {
  const T ry = static_cast<T>(H) / static_cast<T>(OH);
  const T rx = static_cast<T>(W) / static_cast<T>(OW);
  for (int oy = 0; oy < OH; ++oy) {
    T sy = (static_cast<T>(oy) + T(0.5)) * ry - T(0.5);
    int y0 = static_cast<int>(std::floor(sy));
    T wy = sy - static_cast<T>(y0);
    if (y0 < 0) {
      y0 = 0;
      wy = T(0);
    }
    if (y0 >= H - 1) {
      y0 = H - 1;
      wy = T(0);
    }
    const int y1 = std::min(y0 + 1, H - 1);
    for (int ox = 0; ox < OW; ++ox) {
      T sx = (static_cast<T>(ox) + T(0.5)) * rx - T(0.5);
      int x0 = static_cast<int>(std::floor(sx));
      T wx = sx - static_cast<T>(x0);
      if (x0 < 0) {
        x0 = 0;
        wx = T(0);
      }
      if (x0 >= W - 1) {
        x0 = W - 1;
        wx = T(0);
      }
      const int x1 = std::min(x0 + 1, W - 1);
      for (int c = 0; c < C; ++c) {
        const T* p = src + static_cast<int64_t>(c) * H * W;
        const T top = p[y0 * W + x0] + wx * (p[y0 * W + x1] - p[y0 * W + x0]);
        const T bot = p[y1 * W + x0] + wx * (p[y1 * W + x1] - p[y1 * W + x0]);
        dst[(static_cast<int64_t>(c) * OH + oy) * OW + ox] = top + wy * (bot - top);
      }
    }
  }
}

// Nearest-neighbor resize for integer label maps.
template <typename U>
void nearest_resize_raw(const U* src, int H, int W, U* dst, int OH, int OW) {
  const double ry = static_cast<double>(H) / OH;
  const double rx = static_cast<double>(W) / OW;
  for (int oy = 0; oy < OH; ++oy) {
    int iy = static_cast<int>((oy + 0.5) * ry);
    iy = std::min(std::max(iy, 0), H - 1);
    for (int ox = 0; ox < OW; ++ox) {
      int ix = static_cast<int>((ox + 0.5) * rx);
      ix = std::min(std::max(ix, 0), W - 1);
      dst[static_cast<int64_t>(oy) * OW + ox] = src[static_cast<int64_t>(iy) * W + ix];
    }
  }
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> he_normal(std::vector<int> shape, int fan_in, std::mt19937* rng) {
  Tensor<T> t = Tensor<T>::zeros(shape, true);
  if (rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& v : t.data()) v = static_cast<T>(dist(*rng));
  }
  return t;
}

template <typename T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined when the layer is bias-free
  int stride = 1, padding = 0, dilation = 1;

  Conv2d() = default;
  // rng == nullptr leaves the weights zero (used before a checkpoint load).
  Conv2d(int in_ch, int out_ch, int k, int stride_, int padding_, int dilation_,
         bool with_bias, std::mt19937* rng)
      : stride(stride_), padding(padding_), dilation(dilation_) {
    weight = he_normal<T>({out_ch, in_ch, k, k}, in_ch * k * k, rng);
    if (with_bias) bias = Tensor<T>::zeros({out_ch}, true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, weight, bias, stride, padding, dilation);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>&) {
    params.push_back({prefix + ".weight", weight});
    if (bias.defined()) params.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  BatchNorm2d() = default;
  explicit BatchNorm2d(int ch) {
    gamma = Tensor<T>::full({ch}, T(1));
    gamma.set_requires_grad(true);
    beta = Tensor<T>::zeros({ch}, true);
    running_mean = Tensor<T>::zeros({ch});
    running_var = Tensor<T>::full({ch}, T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return batchnorm(x, gamma, beta, running_mean, running_var, eps, momentum,
                     training);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) {
    params.push_back({prefix + ".gamma", gamma});
    params.push_back({prefix + ".beta", beta});
    buffers.push_back({prefix + ".running_mean", running_mean});
    buffers.push_back({prefix + ".running_var", running_var});
  }
};

// conv (bias-free) -> BN -> ReLU, the standard block in this artifact.
template <typename T>
struct ConvBnRelu {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;

  ConvBnRelu() = default;
  ConvBnRelu(int in_ch, int out_ch, int k, int stride, int padding, int dilation,
             std::mt19937* rng)
      : conv(in_ch, out_ch, k, stride, padding, dilation, /*with_bias=*/false, rng),
        bn(out_ch) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return relu(bn.forward(conv.forward(x), training));
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) {
    conv.collect(prefix + ".conv", params, buffers);
    bn.collect(prefix + ".bn", params, buffers);
  }
};

}  // namespace ocseg
