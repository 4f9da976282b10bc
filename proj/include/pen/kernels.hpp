#pragma once

// Plain-tensor compute kernels shared by the autodiff ops. Everything here is
// deterministic: fixed loop order, no atomics, single-threaded GEMM.

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "pen/tensor.hpp"

namespace pen::kern {

enum class PadMode { Zero, Replicate };

template <class T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// col layout: (C*K*K) rows x (OH*OW) cols, row-major.
template <class T>
void im2col(const T* src, int C, int H, int W, int K, int stride, int pad,
            PadMode mode, T* col, int OH, int OW) {
  const int ohw = OH * OW;
  for (int c = 0; c < C; ++c) {
    const T* plane = src + static_cast<size_t>(c) * H * W;
    for (int kh = 0; kh < K; ++kh) {
      for (int kw = 0; kw < K; ++kw) {
        T* row = col + (static_cast<size_t>(c) * K * K + kh * K + kw) * ohw;
        for (int oh = 0; oh < OH; ++oh) {
          int ih = oh * stride + kh - pad;
          bool row_in = ih >= 0 && ih < H;
          int ihc = std::clamp(ih, 0, H - 1);
          for (int ow = 0; ow < OW; ++ow) {
            int iw = ow * stride + kw - pad;
            if (mode == PadMode::Zero) {
              row[oh * OW + ow] =
                  (row_in && iw >= 0 && iw < W) ? plane[ih * W + iw] : T(0);
            } else {
              int iwc = std::clamp(iw, 0, W - 1);
              row[oh * OW + ow] = plane[ihc * W + iwc];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add column gradients back onto the input.
template <class T>
void col2im_accum(const T* col, int C, int H, int W, int K, int stride, int pad,
                  PadMode mode, T* dst, int OH, int OW) {
  const int ohw = OH * OW;
  for (int c = 0; c < C; ++c) {
    T* plane = dst + static_cast<size_t>(c) * H * W;
    for (int kh = 0; kh < K; ++kh) {
      for (int kw = 0; kw < K; ++kw) {
        const T* row = col + (static_cast<size_t>(c) * K * K + kh * K + kw) * ohw;
        for (int oh = 0; oh < OH; ++oh) {
          int ih = oh * stride + kh - pad;
          if (mode == PadMode::Zero && (ih < 0 || ih >= H)) continue;
          int ihc = std::clamp(ih, 0, H - 1);
          for (int ow = 0; ow < OW; ++ow) {
            int iw = ow * stride + kw - pad;
            if (mode == PadMode::Zero && (iw < 0 || iw >= W)) continue;
            int iwc = std::clamp(iw, 0, W - 1);
            plane[ihc * W + iwc] += row[oh * OW + ow];
          }
        }
      }
    }
  }
}

// weight: (Cout, Cin, K, K); bias: (1, Cout, 1, 1) or empty.
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight,
                         const Tensor<T>& bias, int stride, int pad,
                         PadMode mode) {
  const int cout = weight.n, cin = weight.c, k = weight.h;
  const int oh = conv_out_dim(x.h, k, stride, pad);
  const int ow = conv_out_dim(x.w, k, stride, pad);
  Tensor<T> out(x.n, cout, oh, ow);
  const int ckk = cin * k * k, ohw = oh * ow;
  std::vector<T> col(static_cast<size_t>(ckk) * ohw);
  ConstMatMap<T> wmat(weight.v.data(), cout, ckk);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.plane(i, 0), cin, x.h, x.w, k, stride, pad, mode, col.data(), oh,
           ow);
    ConstMatMap<T> cmat(col.data(), ckk, ohw);
    MatMap<T> omat(out.plane(i, 0), cout, ohw);
    omat.noalias() = wmat * cmat;
    if (!bias.empty()) {
      for (int j = 0; j < cout; ++j) {
        T b = bias.v[j];
        T* p = out.plane(i, j);
        for (int q = 0; q < ohw; ++q) p[q] += b;
      }
    }
  }
  return out;
}

// Gradients w.r.t. input, weight and bias. Any of the output gradient
// pointers may be null to skip that computation. im2col is recomputed rather
// than cached; it is memory-bound and caching it would dominate graph memory.
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                     const Tensor<T>& gout, int stride, int pad, PadMode mode,
                     Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const int cout = weight.n, cin = weight.c, k = weight.h;
  const int oh = gout.h, ow = gout.w;
  const int ckk = cin * k * k, ohw = oh * ow;
  std::vector<T> col(static_cast<size_t>(ckk) * ohw);
  std::vector<T> colgrad;
  if (gx) colgrad.resize(static_cast<size_t>(ckk) * ohw);
  ConstMatMap<T> wmat(weight.v.data(), cout, ckk);
  for (int i = 0; i < x.n; ++i) {
    ConstMatMap<T> gmat(gout.plane(i, 0), cout, ohw);
    if (gw) {
      im2col(x.plane(i, 0), cin, x.h, x.w, k, stride, pad, mode, col.data(),
             oh, ow);
      ConstMatMap<T> cmat(col.data(), ckk, ohw);
      MatMap<T> gwmat(gw->v.data(), cout, ckk);
      gwmat.noalias() += gmat * cmat.transpose();
    }
    if (gb) {
      for (int j = 0; j < cout; ++j) {
        const T* p = gout.plane(i, j);
        T s = 0;
        for (int q = 0; q < ohw; ++q) s += p[q];
        gb->v[j] += s;
      }
    }
    if (gx) {
      MatMap<T> cgmat(colgrad.data(), ckk, ohw);
      cgmat.noalias() = wmat.transpose() * gmat;
      col2im_accum(colgrad.data(), cin, x.h, x.w, k, stride, pad, mode,
                   gx->plane(i, 0), oh, ow);
    }
  }
}

struct BnStats {
  std::vector<double> mean, invstd;
};

// Standard batch norm. Normalization uses biased batch variance; running
// stats are updated in place with the same variance.
template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                            const Tensor<T>& beta, Tensor<float>* running_mean,
                            Tensor<float>* running_var, bool training,
                            double momentum, double eps, BnStats* saved) {
  Tensor<T> out(x.n, x.c, x.h, x.w);
  const int64_t per_ch = static_cast<int64_t>(x.n) * x.h * x.w;
  if (saved) {
    saved->mean.assign(x.c, 0.0);
    saved->invstd.assign(x.c, 0.0);
  }
  for (int ch = 0; ch < x.c; ++ch) {
    double mean, var;
    if (training) {
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.plane(i, ch);
        for (int q = 0; q < x.h * x.w; ++q) {
          double v = static_cast<double>(p[q]);
          s += v;
          s2 += v * v;
        }
      }
      mean = s / per_ch;
      var = std::max(0.0, s2 / per_ch - mean * mean);
      if (running_mean) {
        running_mean->v[ch] = static_cast<float>(
            (1.0 - momentum) * running_mean->v[ch] + momentum * mean);
        running_var->v[ch] = static_cast<float>(
            (1.0 - momentum) * running_var->v[ch] + momentum * var);
      }
    } else {
      mean = running_mean ? running_mean->v[ch] : 0.0;
      var = running_var ? running_var->v[ch] : 1.0;
    }
    double invstd = 1.0 / std::sqrt(var + eps);
    if (saved) {
      saved->mean[ch] = mean;
      saved->invstd[ch] = invstd;
    }
    T g = gamma.v[ch], b = beta.v[ch];
    T m = static_cast<T>(mean), is = static_cast<T>(invstd);
    for (int i = 0; i < x.n; ++i) {
      const T* p = x.plane(i, ch);
      T* o = out.plane(i, ch);
      for (int q = 0; q < x.h * x.w; ++q) o[q] = g * (p[q] - m) * is + b;
    }
  }
  return out;
}

template <class T>
void batchnorm_backward(const Tensor<T>& x, const Tensor<T>& gamma,
                        const BnStats& saved, const Tensor<T>& gout,
                        bool training, Tensor<T>* gx, Tensor<T>* ggamma,
                        Tensor<T>* gbeta) {
  const int64_t per_ch = static_cast<int64_t>(x.n) * x.h * x.w;
  for (int ch = 0; ch < x.c; ++ch) {
    const T m = static_cast<T>(saved.mean[ch]);
    const T is = static_cast<T>(saved.invstd[ch]);
    double sum_g = 0.0, sum_gx = 0.0;
    for (int i = 0; i < x.n; ++i) {
      const T* p = x.plane(i, ch);
      const T* go = gout.plane(i, ch);
      for (int q = 0; q < x.h * x.w; ++q) {
        double xhat = static_cast<double>((p[q] - m) * is);
        sum_g += go[q];
        sum_gx += go[q] * xhat;
      }
    }
    if (ggamma) ggamma->v[ch] += static_cast<T>(sum_gx);
    if (gbeta) gbeta->v[ch] += static_cast<T>(sum_g);
    if (!gx) continue;
    const T g = gamma.v[ch];
    if (training) {
      const T k1 = static_cast<T>(sum_g / per_ch);
      const T k2 = static_cast<T>(sum_gx / per_ch);
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.plane(i, ch);
        const T* go = gout.plane(i, ch);
        T* gp = gx->plane(i, ch);
        for (int q = 0; q < x.h * x.w; ++q) {
          T xhat = (p[q] - m) * is;
          gp[q] += g * is * (go[q] - k1 - xhat * k2);
        }
      }
    } else {
      for (int i = 0; i < x.n; ++i) {
        const T* go = gout.plane(i, ch);
        T* gp = gx->plane(i, ch);
        for (int q = 0; q < x.h * x.w; ++q) gp[q] += g * is * go[q];
      }
    }
  }
}

// 3x3/2 max pool with zero "virtual" padding of 1 (ResNet stem convention:
// out-of-bounds taps are simply skipped).
template <class T>
Tensor<T> maxpool3x3s2_forward(const Tensor<T>& x, std::vector<int>* argmax) {
  const int oh = (x.h + 2 - 3) / 2 + 1, ow = (x.w + 2 - 3) / 2 + 1;
  Tensor<T> out(x.n, x.c, oh, ow);
  if (argmax) argmax->assign(out.numel(), -1);
  size_t oi = 0;
  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < x.c; ++ch) {
      const T* p = x.plane(i, ch);
      for (int y = 0; y < oh; ++y) {
        for (int xo = 0; xo < ow; ++xo, ++oi) {
          T best = 0;
          int besti = -1;
          for (int ky = 0; ky < 3; ++ky) {
            int iy = y * 2 + ky - 1;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              int ix = xo * 2 + kx - 1;
              if (ix < 0 || ix >= x.w) continue;
              T v = p[iy * x.w + ix];
              if (besti < 0 || v > best) {
                best = v;
                besti = iy * x.w + ix;
              }
            }
          }
          out.v[oi] = best;
          if (argmax) (*argmax)[oi] = besti;
        }
      }
    }
  }
  return out;
}

template <class T>
void maxpool3x3s2_backward(const Tensor<T>& x, const std::vector<int>& argmax,
                           const Tensor<T>& gout, Tensor<T>* gx) {
  const int64_t plane = static_cast<int64_t>(x.h) * x.w;
  size_t oi = 0;
  for (int i = 0; i < gout.n; ++i) {
    for (int ch = 0; ch < gout.c; ++ch) {
      T* gp = gx->plane(i, ch);
      for (int q = 0; q < gout.h * gout.w; ++q, ++oi) {
        int a = argmax[oi];
        if (a >= 0 && a < plane) gp[a] += gout.v[oi];
      }
    }
  }
}

// Bilinear resize, half-pixel centers (align_corners = false).
template <class T>
Tensor<T> resize_bilinear_forward(const Tensor<T>& x, int oh, int ow) {
  Tensor<T> out(x.n, x.c, oh, ow);
  const double sy = static_cast<double>(x.h) / oh;
  const double sx = static_cast<double>(x.w) / ow;
  for (int y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, x.h - 1), y1c = std::clamp(y0 + 1, 0, x.h - 1);
    for (int xo = 0; xo < ow; ++xo) {
      double fx = (xo + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, x.w - 1), x1c = std::clamp(x0 + 1, 0, x.w - 1);
      const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
      const double w10 = wy * (1 - wx), w11 = wy * wx;
      for (int i = 0; i < x.n; ++i) {
        for (int ch = 0; ch < x.c; ++ch) {
          const T* p = x.plane(i, ch);
          out.at(i, ch, y, xo) = static_cast<T>(
              w00 * p[y0c * x.w + x0c] + w01 * p[y0c * x.w + x1c] +
              w10 * p[y1c * x.w + x0c] + w11 * p[y1c * x.w + x1c]);
        }
      }
    }
  }
  return out;
}

template <class T>
void resize_bilinear_backward(const Tensor<T>& gout, int ih, int iw,
                              Tensor<T>* gx) {
  const double sy = static_cast<double>(ih) / gout.h;
  const double sx = static_cast<double>(iw) / gout.w;
  for (int y = 0; y < gout.h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, ih - 1), y1c = std::clamp(y0 + 1, 0, ih - 1);
    for (int xo = 0; xo < gout.w; ++xo) {
      double fx = (xo + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, iw - 1), x1c = std::clamp(x0 + 1, 0, iw - 1);
      const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
      const double w10 = wy * (1 - wx), w11 = wy * wx;
      for (int i = 0; i < gout.n; ++i) {
        for (int ch = 0; ch < gout.c; ++ch) {
          T g = gout.at(i, ch, y, xo);
          T* gp = gx->plane(i, ch);
          gp[y0c * iw + x0c] += static_cast<T>(w00 * g);
          gp[y0c * iw + x1c] += static_cast<T>(w01 * g);
          gp[y1c * iw + x0c] += static_cast<T>(w10 * g);
          gp[y1c * iw + x1c] += static_cast<T>(w11 * g);
        }
      }
    }
  }
}

template <class T>
Tensor<T> pad_replicate_forward(const Tensor<T>& x, int top, int left,
                                int bottom, int right) {
  Tensor<T> out(x.n, x.c, x.h + top + bottom, x.w + left + right);
  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < x.c; ++ch) {
      const T* p = x.plane(i, ch);
      T* o = out.plane(i, ch);
      for (int y = 0; y < out.h; ++y) {
        int iy = std::clamp(y - top, 0, x.h - 1);
        for (int xo = 0; xo < out.w; ++xo) {
          int ix = std::clamp(xo - left, 0, x.w - 1);
          o[y * out.w + xo] = p[iy * x.w + ix];
        }
      }
    }
  }
  return out;
}

template <class T>
void pad_replicate_backward(const Tensor<T>& gout, int top, int left, int ih,
                            int iw, Tensor<T>* gx) {
  for (int i = 0; i < gout.n; ++i) {
    for (int ch = 0; ch < gout.c; ++ch) {
      const T* go = gout.plane(i, ch);
      T* gp = gx->plane(i, ch);
      for (int y = 0; y < gout.h; ++y) {
        int iy = std::clamp(y - top, 0, ih - 1);
        for (int xo = 0; xo < gout.w; ++xo) {
          int ix = std::clamp(xo - left, 0, iw - 1);
          gp[iy * iw + ix] += go[y * gout.w + xo];
        }
      }
    }
  }
}

// Directional Sobel pair, cross-correlation convention, replicate padding.
// x-kernel [[-1,0,1],[-2,0,2],[-1,0,1]], y-kernel its transpose. Implemented
// as a direct stencil (not GEMM) so each row of taps cancels exactly on
// constant input and the response is exactly zero there.
inline constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
inline constexpr int kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

template <class T>
Tensor<T> sobel_forward(const Tensor<T>& x) {
  Tensor<T> out(x.n, 2, x.h, x.w);
  for (int i = 0; i < x.n; ++i) {
    const T* p = x.plane(i, 0);
    T* ox = out.plane(i, 0);
    T* oy = out.plane(i, 1);
    for (int y = 0; y < x.h; ++y) {
      for (int c = 0; c < x.w; ++c) {
        // Accumulate per kernel row: on constant input each x-row cancels to
        // an exact 0 and the two nonzero y-rows are exact negations, so a
        // constant map yields exactly zero rather than +-1 ulp.
        T sx = 0, sy = 0;
        for (int ky = 0; ky < 3; ++ky) {
          int iy = std::clamp(y + ky - 1, 0, x.h - 1);
          T row_x = 0, row_y = 0;
          for (int kx = 0; kx < 3; ++kx) {
            int ix = std::clamp(c + kx - 1, 0, x.w - 1);
            T v = p[iy * x.w + ix];
            row_x += static_cast<T>(kSobelX[ky][kx]) * v;
            row_y += static_cast<T>(kSobelY[ky][kx]) * v;
          }
          sx += row_x;
          sy += row_y;
        }
        ox[y * x.w + c] = sx;
        oy[y * x.w + c] = sy;
      }
    }
  }
  return out;
}

template <class T>
void sobel_backward(const Tensor<T>& gout, int ih, int iw, Tensor<T>* gx) {
  for (int i = 0; i < gout.n; ++i) {
    const T* gxc = gout.plane(i, 0);
    const T* gyc = gout.plane(i, 1);
    T* gp = gx->plane(i, 0);
    for (int y = 0; y < ih; ++y) {
      for (int c = 0; c < iw; ++c) {
        T gxv = gxc[y * iw + c], gyv = gyc[y * iw + c];
        for (int ky = 0; ky < 3; ++ky) {
          int iy = std::clamp(y + ky - 1, 0, ih - 1);
          for (int kx = 0; kx < 3; ++kx) {
            int ix = std::clamp(c + kx - 1, 0, iw - 1);
            gp[iy * iw + ix] += static_cast<T>(kSobelX[ky][kx]) * gxv +
                                static_cast<T>(kSobelY[ky][kx]) * gyv;
          }
        }
      }
    }
  }
}

}  // namespace pen::kern
