#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "dgsp/ops_linalg.hpp"

// 2-D convolution family on NCHW tensors. Dense convs run as im2col + GEMM;
// the backward pass recomputes the column buffer instead of caching it.

namespace dgsp {
namespace detail {

template <typename T>
void im2col(const T* x, long Ci, long H, long W, long k, long s, long p, long Ho, long Wo,
            T* col) {
  for (long c = 0; c < Ci; ++c)
    for (long ki = 0; ki < k; ++ki)
      for (long kj = 0; kj < k; ++kj) {
        T* dst = col + ((c * k + ki) * k + kj) * (Ho * Wo);
        for (long oh = 0; oh < Ho; ++oh) {
          const long ih = oh * s + ki - p;
          for (long ow = 0; ow < Wo; ++ow) {
            const long iw = ow * s + kj - p;
            dst[oh * Wo + ow] =
                (ih >= 0 && ih < H && iw >= 0 && iw < W) ? x[(c * H + ih) * W + iw] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, long Ci, long H, long W, long k, long s, long p, long Ho, long Wo,
                T* gx) {
  for (long c = 0; c < Ci; ++c)
    for (long ki = 0; ki < k; ++ki)
      for (long kj = 0; kj < k; ++kj) {
        const T* src = col + ((c * k + ki) * k + kj) * (Ho * Wo);
        for (long oh = 0; oh < Ho; ++oh) {
          const long ih = oh * s + ki - p;
          if (ih < 0 || ih >= H) continue;
          for (long ow = 0; ow < Wo; ++ow) {
            const long iw = ow * s + kj - p;
            if (iw < 0 || iw >= W) continue;
            gx[(c * H + ih) * W + iw] += src[oh * Wo + ow];
          }
        }
      }
}

}  // namespace detail

// x (N,Ci,H,W), w (Co,Ci,k,k), b (Co) -> (N,Co,Ho,Wo)
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, long stride = 1, long pad = 0) {
  const long N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long Co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != Ci || w.dim(3) != k)
    throw ConfigError("conv2d weight " + shape_str(w.shape()) + " vs input " +
                      shape_str(x.shape()));
  if (b.dim(0) != Co) throw ConfigError("conv2d bias size mismatch");
  const long Ho = (H + 2 * pad - k) / stride + 1;
  const long Wo = (W + 2 * pad - k) / stride + 1;
  if (Ho < 1 || Wo < 1) throw ShapeError("conv2d output would be empty");
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  Tensor<T> out(Shape{N, Co, Ho, Wo});
  {
    std::vector<T> col(pointwise ? 0 : Ci * k * k * Ho * Wo);
    ECMap<T> Wm(w.value().data(), Co, Ci * k * k);
    for (long n = 0; n < N; ++n) {
      const T* xn = x.value().data() + n * Ci * H * W;
      T* yn = out.data() + n * Co * Ho * Wo;
      if (pointwise) {
        ECMap<T> X(xn, Ci, H * W);
        EMap<T>(yn, Co, Ho * Wo).noalias() = Wm * X;
      } else {
        detail::im2col(xn, Ci, H, W, k, stride, pad, Ho, Wo, col.data());
        ECMap<T> C(col.data(), Ci * k * k, Ho * Wo);
        EMap<T>(yn, Co, Ho * Wo).noalias() = Wm * C;
      }
      for (long c = 0; c < Co; ++c) {
        const T bv = b.value()[c];
        for (long i = 0; i < Ho * Wo; ++i) yn[c * Ho * Wo + i] += bv;
      }
    }
  }
  auto xn_ = x.node(), wn = w.node(), bn = b.node();
  return make_op<T>(
      std::move(out), {x, w, b},
      [xn_, wn, bn, N, Ci, H, W, Co, k, stride, pad, Ho, Wo, pointwise](Node<T>& nd) {
        std::vector<T> col(pointwise ? 0 : Ci * k * k * Ho * Wo);
        std::vector<T> dcol(pointwise ? 0 : Ci * k * k * Ho * Wo);
        for (long n = 0; n < N; ++n) {
          ECMap<T> dY(nd.grad.data() + n * Co * Ho * Wo, Co, Ho * Wo);
          const T* xp = xn_->value.data() + n * Ci * H * W;
          if (wn->requires_grad) {
            EMap<T> dW(wn->ensure_grad().data(), Co, Ci * k * k);
            if (pointwise) {
              ECMap<T> X(xp, Ci, H * W);
              dW.noalias() += dY * X.transpose();
            } else {
              detail::im2col(xp, Ci, H, W, k, stride, pad, Ho, Wo, col.data());
              ECMap<T> C(col.data(), Ci * k * k, Ho * Wo);
              dW.noalias() += dY * C.transpose();
            }
          }
          if (bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (long c = 0; c < Co; ++c) {
              T s = 0;
              const T* row = nd.grad.data() + (n * Co + c) * Ho * Wo;
              for (long i = 0; i < Ho * Wo; ++i) s += row[i];
              gb[c] += s;
            }
          }
          if (xn_->requires_grad) {
            ECMap<T> Wm(wn->value.data(), Co, Ci * k * k);
            T* gx = xn_->ensure_grad().data() + n * Ci * H * W;
            if (pointwise) {
              EMap<T>(gx, Ci, H * W).noalias() += Wm.transpose() * dY;
            } else {
              EMap<T>(dcol.data(), Ci * k * k, Ho * Wo).noalias() = Wm.transpose() * dY;
              detail::col2im_add(dcol.data(), Ci, H, W, k, stride, pad, Ho, Wo, gx);
            }
          }
        }
      });
}

// Depthwise conv, one k x k filter per channel, no padding.
// x (N,C,H,W), w (C,k,k), b (C) -> (N,C,Ho,Wo)
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, long stride) {
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long k = w.dim(1);
  if (w.dim(0) != C || w.dim(2) != k) throw ConfigError("depthwise weight shape mismatch");
  if (b.dim(0) != C) throw ConfigError("depthwise bias size mismatch");
  const long Ho = (H - k) / stride + 1;
  const long Wo = (W - k) / stride + 1;
  if (Ho < 1 || Wo < 1) throw ShapeError("depthwise_conv2d output would be empty");
  Tensor<T> out(Shape{N, C, Ho, Wo});
  for (long n = 0; n < N; ++n)
    for (long c = 0; c < C; ++c) {
      const T* xp = x.value().data() + (n * C + c) * H * W;
      const T* wp = w.value().data() + c * k * k;
      T* yp = out.data() + (n * C + c) * Ho * Wo;
      for (long oh = 0; oh < Ho; ++oh)
        for (long ow = 0; ow < Wo; ++ow) {
          T s = b.value()[c];
          for (long ki = 0; ki < k; ++ki)
            for (long kj = 0; kj < k; ++kj)
              s += wp[ki * k + kj] * xp[(oh * stride + ki) * W + ow * stride + kj];
          yp[oh * Wo + ow] = s;
        }
    }
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return make_op<T>(std::move(out), {x, w, b},
                    [xn, wn, bn, N, C, H, W, k, stride, Ho, Wo](Node<T>& nd) {
                      for (long n = 0; n < N; ++n)
                        for (long c = 0; c < C; ++c) {
                          const T* dy = nd.grad.data() + (n * C + c) * Ho * Wo;
                          const T* xp = xn->value.data() + (n * C + c) * H * W;
                          const T* wp = wn->value.data() + c * k * k;
                          for (long oh = 0; oh < Ho; ++oh)
                            for (long ow = 0; ow < Wo; ++ow) {
                              const T g = dy[oh * Wo + ow];
                              if (bn->requires_grad) bn->ensure_grad()[c] += g;
                              for (long ki = 0; ki < k; ++ki)
                                for (long kj = 0; kj < k; ++kj) {
                                  const long ih = oh * stride + ki, iw = ow * stride + kj;
                                  if (wn->requires_grad)
                                    wn->ensure_grad()[c * k * k + ki * k + kj] +=
                                        g * xp[ih * W + iw];
                                  if (xn->requires_grad)
                                    xn->ensure_grad()[(n * C + c) * H * W + ih * W + iw] +=
                                        g * wp[ki * k + kj];
                                }
                            }
                        }
                    });
}

// Transposed conv with kernel 2, stride 2 (exact 2x upsampling, no overlap).
// x (N,Ci,H,W), w (Ci,Co,2,2), b (Co) -> (N,Co,2H,2W)
template <typename T>
Var<T> conv_transpose2d_2x(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const long N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long Co = w.dim(1), k = 2;
  if (w.dim(0) != Ci || w.dim(2) != k || w.dim(3) != k)
    throw ConfigError("conv_transpose2d_2x weight shape mismatch");
  if (b.dim(0) != Co) throw ConfigError("conv_transpose2d_2x bias size mismatch");
  const long Ho = H * 2, Wo = W * 2;
  Tensor<T> out(Shape{N, Co, Ho, Wo});
  {
    std::vector<T> cols(Co * k * k * H * W);
    ECMap<T> Wm(w.value().data(), Ci, Co * k * k);
    for (long n = 0; n < N; ++n) {
      ECMap<T> X(x.value().data() + n * Ci * H * W, Ci, H * W);
      EMap<T>(cols.data(), Co * k * k, H * W).noalias() = Wm.transpose() * X;
      T* yn = out.data() + n * Co * Ho * Wo;
      for (long c = 0; c < Co; ++c) {
        const T bv = b.value()[c];
        for (long i = 0; i < Ho * Wo; ++i) yn[c * Ho * Wo + i] = bv;
      }
      for (long c = 0; c < Co; ++c)
        for (long ki = 0; ki < k; ++ki)
          for (long kj = 0; kj < k; ++kj) {
            const T* src = cols.data() + ((c * k + ki) * k + kj) * (H * W);
            for (long h = 0; h < H; ++h)
              for (long ww = 0; ww < W; ++ww)
                yn[c * Ho * Wo + (h * 2 + ki) * Wo + ww * 2 + kj] += src[h * W + ww];
          }
    }
  }
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return make_op<T>(std::move(out), {x, w, b},
                    [xn, wn, bn, N, Ci, H, W, Co, k, Ho, Wo](Node<T>& nd) {
                      std::vector<T> dcols(Co * k * k * H * W);
                      for (long n = 0; n < N; ++n) {
                        const T* dy = nd.grad.data() + n * Co * Ho * Wo;
                        for (long c = 0; c < Co; ++c)
                          for (long ki = 0; ki < k; ++ki)
                            for (long kj = 0; kj < k; ++kj) {
                              T* dst = dcols.data() + ((c * k + ki) * k + kj) * (H * W);
                              for (long h = 0; h < H; ++h)
                                for (long ww = 0; ww < W; ++ww)
                                  dst[h * W + ww] =
                                      dy[c * Ho * Wo + (h * 2 + ki) * Wo + ww * 2 + kj];
                            }
                        ECMap<T> dC(dcols.data(), Co * k * k, H * W);
                        if (xn->requires_grad) {
                          ECMap<T> Wm(wn->value.data(), Ci, Co * k * k);
                          EMap<T>(xn->ensure_grad().data() + n * Ci * H * W, Ci, H * W)
                              .noalias() += Wm * dC;
                        }
                        if (wn->requires_grad) {
                          ECMap<T> X(xn->value.data() + n * Ci * H * W, Ci, H * W);
                          EMap<T>(wn->ensure_grad().data(), Ci, Co * k * k).noalias() +=
                              X * dC.transpose();
                        }
                        if (bn->requires_grad) {
                          auto& gb = bn->ensure_grad();
                          for (long c = 0; c < Co; ++c) {
                            T s = 0;
                            for (long i = 0; i < Ho * Wo; ++i) s += dy[c * Ho * Wo + i];
                            gb[c] += s;
                          }
                        }
                      }
                    });
}

// 2x2 max pooling, stride 2. Ties resolve to the first element in scan order.
template <typename T>
Var<T> maxpool2x2(const Var<T>& x) {
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) throw ShapeError("maxpool2x2 needs even spatial dims");
  const long Ho = H / 2, Wo = W / 2;
  Tensor<T> out(Shape{N, C, Ho, Wo});
  std::vector<long> arg(static_cast<size_t>(N) * C * Ho * Wo);
  for (long nc = 0; nc < N * C; ++nc) {
    const T* xp = x.value().data() + nc * H * W;
    for (long oh = 0; oh < Ho; ++oh)
      for (long ow = 0; ow < Wo; ++ow) {
        long best = (oh * 2) * W + ow * 2;
        T bv = xp[best];
        for (long ki = 0; ki < 2; ++ki)
          for (long kj = 0; kj < 2; ++kj) {
            const long idx = (oh * 2 + ki) * W + ow * 2 + kj;
            if (xp[idx] > bv) {
              bv = xp[idx];
              best = idx;
            }
          }
        out[nc * Ho * Wo + oh * Wo + ow] = bv;
        arg[nc * Ho * Wo + oh * Wo + ow] = best;
      }
  }
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, N, C, H, W, Ho, Wo, arg](Node<T>& nd) {
    auto& g = xn->ensure_grad();
    for (long nc = 0; nc < N * C; ++nc)
      for (long i = 0; i < Ho * Wo; ++i)
        g[nc * H * W + arg[nc * Ho * Wo + i]] += nd.grad[nc * Ho * Wo + i];
  });
}

// (N,C,H,W) -> (N,C) channel means.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const long N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{N, C});
  for (long nc = 0; nc < N * C; ++nc) {
    T s = 0;
    const T* xp = x.value().data() + nc * HW;
    for (long i = 0; i < HW; ++i) s += xp[i];
    out[nc] = s / static_cast<T>(HW);
  }
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, N, C, HW](Node<T>& nd) {
    auto& g = xn->ensure_grad();
    for (long nc = 0; nc < N * C; ++nc) {
      const T gv = nd.grad[nc] / static_cast<T>(HW);
      for (long i = 0; i < HW; ++i) g[nc * HW + i] += gv;
    }
  });
}

// (N,C,H,W) -> (N,C) channel maxima. Ties resolve to the first position.
template <typename T>
Var<T> global_max_pool(const Var<T>& x) {
  const long N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{N, C});
  std::vector<long> arg(static_cast<size_t>(N) * C);
  for (long nc = 0; nc < N * C; ++nc) {
    const T* xp = x.value().data() + nc * HW;
    long best = 0;
    for (long i = 1; i < HW; ++i)
      if (xp[i] > xp[best]) best = i;
    out[nc] = xp[best];
    arg[nc] = best;
  }
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, N, C, HW, arg](Node<T>& nd) {
    auto& g = xn->ensure_grad();
    for (long nc = 0; nc < N * C; ++nc) g[nc * HW + arg[nc]] += nd.grad[nc];
  });
}

// Bilinear 2x upsampling with half-pixel centers (align_corners=false).
template <typename T>
Var<T> upsample_bilinear2x(const Var<T>& x) {
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long Ho = H * 2, Wo = W * 2;
  // Per output row/col: source low index and interpolation weight.
  std::vector<long> y0(Ho), x0(Wo);
  std::vector<T> wy(Ho), wx(Wo);
  for (long oy = 0; oy < Ho; ++oy) {
    T sy = (static_cast<T>(oy) + T(0.5)) / T(2) - T(0.5);
    if (sy < 0) sy = 0;
    long lo = static_cast<long>(sy);
    if (lo > H - 1) lo = H - 1;
    y0[oy] = lo;
    wy[oy] = std::min(sy - static_cast<T>(lo), T(1));
  }
  for (long ox = 0; ox < Wo; ++ox) {
    T sx = (static_cast<T>(ox) + T(0.5)) / T(2) - T(0.5);
    if (sx < 0) sx = 0;
    long lo = static_cast<long>(sx);
    if (lo > W - 1) lo = W - 1;
    x0[ox] = lo;
    wx[ox] = std::min(sx - static_cast<T>(lo), T(1));
  }
  Tensor<T> out(Shape{N, C, Ho, Wo});
  for (long nc = 0; nc < N * C; ++nc) {
    const T* xp = x.value().data() + nc * H * W;
    T* yp = out.data() + nc * Ho * Wo;
    for (long oy = 0; oy < Ho; ++oy) {
      const long r0 = y0[oy], r1 = std::min(r0 + 1, H - 1);
      const T fy = wy[oy];
      for (long ox = 0; ox < Wo; ++ox) {
        const long c0 = x0[ox], c1 = std::min(c0 + 1, W - 1);
        const T fx = wx[ox];
        yp[oy * Wo + ox] = (T(1) - fy) * ((T(1) - fx) * xp[r0 * W + c0] + fx * xp[r0 * W + c1]) +
                           fy * ((T(1) - fx) * xp[r1 * W + c0] + fx * xp[r1 * W + c1]);
      }
    }
  }
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, N, C, H, W, Ho, Wo, y0, x0, wy, wx](Node<T>& nd) {
    auto& g = xn->ensure_grad();
    for (long nc = 0; nc < N * C; ++nc) {
      T* gp = g.data() + nc * H * W;
      const T* dy = nd.grad.data() + nc * Ho * Wo;
      for (long oy = 0; oy < Ho; ++oy) {
        const long r0 = y0[oy], r1 = std::min(r0 + 1, H - 1);
        const T fy = wy[oy];
        for (long ox = 0; ox < Wo; ++ox) {
          const long c0 = x0[ox], c1 = std::min(c0 + 1, W - 1);
          const T fx = wx[ox];
          const T gv = dy[oy * Wo + ox];
          gp[r0 * W + c0] += (T(1) - fy) * (T(1) - fx) * gv;
          gp[r0 * W + c1] += (T(1) - fy) * fx * gv;
          gp[r1 * W + c0] += fy * (T(1) - fx) * gv;
          gp[r1 * W + c1] += fy * fx * gv;
        }
      }
    }
  });
}

// y[n,c,h,w] = x[n,c,h,w] * s[n,c]
template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s) {
  const long N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (s.dim(0) != N || s.dim(1) != C) throw ShapeError("scale_channels operand mismatch");
  Tensor<T> out(x.shape());
  for (long nc = 0; nc < N * C; ++nc) {
    const T sv = s.value()[nc];
    const T* xp = x.value().data() + nc * HW;
    T* yp = out.data() + nc * HW;
    for (long i = 0; i < HW; ++i) yp[i] = xp[i] * sv;
  }
  auto xn = x.node(), sn = s.node();
  return make_op<T>(std::move(out), {x, s}, [xn, sn, N, C, HW](Node<T>& nd) {
    for (long nc = 0; nc < N * C; ++nc) {
      const T* dy = nd.grad.data() + nc * HW;
      if (xn->requires_grad) {
        const T sv = sn->value[nc];
        T* gx = xn->ensure_grad().data() + nc * HW;
        for (long i = 0; i < HW; ++i) gx[i] += dy[i] * sv;
      }
      if (sn->requires_grad) {
        const T* xp = xn->value.data() + nc * HW;
        T s = 0;
        for (long i = 0; i < HW; ++i) s += dy[i] * xp[i];
        sn->ensure_grad()[nc] += s;
      }
    }
  });
}

// y[n,c,h,w] = x[n,c,h,w] * s[n,0,h,w]
template <typename T>
Var<T> scale_spatial(const Var<T>& x, const Var<T>& s) {
  const long N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (s.dim(0) != N || s.dim(1) != 1 || s.dim(2) != x.dim(2) || s.dim(3) != x.dim(3))
    throw ShapeError("scale_spatial operand mismatch");
  Tensor<T> out(x.shape());
  for (long n = 0; n < N; ++n) {
    const T* sp = s.value().data() + n * HW;
    for (long c = 0; c < C; ++c) {
      const T* xp = x.value().data() + (n * C + c) * HW;
      T* yp = out.data() + (n * C + c) * HW;
      for (long i = 0; i < HW; ++i) yp[i] = xp[i] * sp[i];
    }
  }
  auto xn = x.node(), sn = s.node();
  return make_op<T>(std::move(out), {x, s}, [xn, sn, N, C, HW](Node<T>& nd) {
    for (long n = 0; n < N; ++n) {
      const T* sp = sn->value.data() + n * HW;
      for (long c = 0; c < C; ++c) {
        const T* dy = nd.grad.data() + (n * C + c) * HW;
        if (xn->requires_grad) {
          T* gx = xn->ensure_grad().data() + (n * C + c) * HW;
          for (long i = 0; i < HW; ++i) gx[i] += dy[i] * sp[i];
        }
        if (sn->requires_grad) {
          const T* xp = xn->value.data() + (n * C + c) * HW;
          T* gs = sn->ensure_grad().data() + n * HW;
          for (long i = 0; i < HW; ++i) gs[i] += dy[i] * xp[i];
        }
      }
    }
  });
}

// Per-position inner product with a per-sample channel vector:
// y[n,0,h,w] = sum_c x[n,c,h,w] * t[n,c].
template <typename T>
Var<T> dot_channels(const Var<T>& x, const Var<T>& t) {
  const long N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (t.dim(0) != N || t.dim(1) != C) throw ShapeError("dot_channels operand mismatch");
  Tensor<T> out(Shape{N, 1, x.dim(2), x.dim(3)});
  for (long n = 0; n < N; ++n) {
    T* yp = out.data() + n * HW;
    for (long i = 0; i < HW; ++i) yp[i] = 0;
    for (long c = 0; c < C; ++c) {
      const T tv = t.value().at2(n, c);
      const T* xp = x.value().data() + (n * C + c) * HW;
      for (long i = 0; i < HW; ++i) yp[i] += xp[i] * tv;
    }
  }
  auto xn = x.node(), tn = t.node();
  return make_op<T>(std::move(out), {x, t}, [xn, tn, N, C, HW](Node<T>& nd) {
    for (long n = 0; n < N; ++n) {
      const T* dy = nd.grad.data() + n * HW;
      for (long c = 0; c < C; ++c) {
        if (xn->requires_grad) {
          const T tv = tn->value[n * C + c];
          T* gx = xn->ensure_grad().data() + (n * C + c) * HW;
          for (long i = 0; i < HW; ++i) gx[i] += dy[i] * tv;
        }
        if (tn->requires_grad) {
          const T* xp = xn->value.data() + (n * C + c) * HW;
          T s = 0;
          for (long i = 0; i < HW; ++i) s += dy[i] * xp[i];
          tn->ensure_grad()[n * C + c] += s;
        }
      }
    }
  });
}

// Softmax over all spatial positions of a single-channel map (N,1,H,W).
template <typename T>
Var<T> softmax_spatial(const Var<T>& x) {
  if (x.dim(1) != 1) throw ShapeError("softmax_spatial expects one channel");
  const Shape orig = x.shape();
  Var<T> flat = reshape(x, Shape{orig[0], orig[2] * orig[3]});
  return reshape(softmax_lastdim(flat), orig);
}

// (N,C,H,W) -> (N,H*W,C) token view of a feature map.
template <typename T>
Var<T> flatten_spatial(const Var<T>& x) {
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out(Shape{N, H * W, C});
  for (long n = 0; n < N; ++n)
    for (long c = 0; c < C; ++c)
      for (long i = 0; i < H * W; ++i) out.at3(n, i, c) = x.value()[(n * C + c) * H * W + i];
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, N, C, H, W](Node<T>& nd) {
    auto& g = xn->ensure_grad();
    for (long n = 0; n < N; ++n)
      for (long c = 0; c < C; ++c)
        for (long i = 0; i < H * W; ++i)
          g[(n * C + c) * H * W + i] += nd.grad[(n * (H * W) + i) * C + c];
  });
}

// (N,H*W,C) -> (N,C,H,W), inverse of flatten_spatial.
template <typename T>
Var<T> unflatten_tokens(const Var<T>& x, long H, long W) {
  const long N = x.dim(0), C = x.dim(2);
  if (x.dim(1) != H * W) throw ShapeError("unflatten_tokens: token count mismatch");
  Tensor<T> out(Shape{N, C, H, W});
  for (long n = 0; n < N; ++n)
    for (long c = 0; c < C; ++c)
      for (long i = 0; i < H * W; ++i) out[(n * C + c) * H * W + i] = x.value().at3(n, i, c);
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, N, C, H, W](Node<T>& nd) {
    auto& g = xn->ensure_grad();
    for (long n = 0; n < N; ++n)
      for (long c = 0; c < C; ++c)
        for (long i = 0; i < H * W; ++i)
          g[(n * (H * W) + i) * C + c] += nd.grad[(n * C + c) * H * W + i];
  });
}

}  // namespace dgsp
