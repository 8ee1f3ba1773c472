#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "dgsp/ops_basic.hpp"

// Matrix products, softmax, layer norm and attention plumbing. GEMMs go
// through Eigen; everything else is explicit loops.

namespace dgsp {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

// (M,K) x (K,N) -> (M,N)
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const long M = a.dim(0), K = a.dim(1);
  if (b.dim(0) != K) throw ShapeError("matmul inner dim: " + shape_str(a.shape()) + " x " +
                                      shape_str(b.shape()));
  const long N = b.dim(1);
  Tensor<T> out(Shape{M, N});
  ECMap<T> A(a.value().data(), M, K), B(b.value().data(), K, N);
  EMap<T>(out.data(), M, N).noalias() = A * B;
  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(out), {a, b}, [an, bn, M, K, N](Node<T>& nd) {
    ECMap<T> dC(nd.grad.data(), M, N);
    if (an->requires_grad) {
      ECMap<T> B(bn->value.data(), K, N);
      EMap<T>(an->ensure_grad().data(), M, K).noalias() += dC * B.transpose();
    }
    if (bn->requires_grad) {
      ECMap<T> A(an->value.data(), M, K);
      EMap<T>(bn->ensure_grad().data(), K, N).noalias() += A.transpose() * dC;
    }
  });
}

// Batched (B,M,K) x (B,K,N) -> (B,M,N)
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
  const long B = a.dim(0), M = a.dim(1), K = a.dim(2);
  if (b.dim(0) != B || b.dim(1) != K)
    throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const long N = b.dim(2);
  Tensor<T> out(Shape{B, M, N});
  for (long i = 0; i < B; ++i) {
    ECMap<T> A(a.value().data() + i * M * K, M, K), Bm(b.value().data() + i * K * N, K, N);
    EMap<T>(out.data() + i * M * N, M, N).noalias() = A * Bm;
  }
  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(out), {a, b}, [an, bn, B, M, K, N](Node<T>& nd) {
    for (long i = 0; i < B; ++i) {
      ECMap<T> dC(nd.grad.data() + i * M * N, M, N);
      if (an->requires_grad) {
        ECMap<T> Bm(bn->value.data() + i * K * N, K, N);
        EMap<T>(an->ensure_grad().data() + i * M * K, M, K).noalias() += dC * Bm.transpose();
      }
      if (bn->requires_grad) {
        ECMap<T> A(an->value.data() + i * M * K, M, K);
        EMap<T>(bn->ensure_grad().data() + i * K * N, K, N).noalias() += A.transpose() * dC;
      }
    }
  });
}

// x (R,in) with weight (out,in) and bias (out): y = x W^T + b.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const long R = x.dim(0), In = x.dim(1);
  const long Out = w.dim(0);
  if (w.dim(1) != In)
    throw ConfigError("linear weight " + shape_str(w.shape()) + " vs input " +
                      shape_str(x.shape()));
  if (b.dim(0) != Out) throw ConfigError("linear bias size mismatch");
  Tensor<T> out(Shape{R, Out});
  ECMap<T> X(x.value().data(), R, In), W(w.value().data(), Out, In);
  EMap<T> Y(out.data(), R, Out);
  Y.noalias() = X * W.transpose();
  for (long r = 0; r < R; ++r)
    for (long o = 0; o < Out; ++o) out.at2(r, o) += b.value()[o];
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return make_op<T>(std::move(out), {x, w, b}, [xn, wn, bn, R, In, Out](Node<T>& nd) {
    ECMap<T> dY(nd.grad.data(), R, Out);
    if (xn->requires_grad) {
      ECMap<T> W(wn->value.data(), Out, In);
      EMap<T>(xn->ensure_grad().data(), R, In).noalias() += dY * W;
    }
    if (wn->requires_grad) {
      ECMap<T> X(xn->value.data(), R, In);
      EMap<T>(wn->ensure_grad().data(), Out, In).noalias() += dY.transpose() * X;
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (long r = 0; r < R; ++r)
        for (long o = 0; o < Out; ++o) g[o] += nd.grad[r * Out + o];
    }
  });
}

template <typename T>
Var<T> transpose_2d(const Var<T>& a) {
  const long M = a.dim(0), N = a.dim(1);
  Tensor<T> out(Shape{N, M});
  for (long i = 0; i < M; ++i)
    for (long j = 0; j < N; ++j) out.at2(j, i) = a.value().at2(i, j);
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an, M, N](Node<T>& nd) {
    auto& g = an->ensure_grad();
    for (long i = 0; i < M; ++i)
      for (long j = 0; j < N; ++j) g[i * N + j] += nd.grad[j * M + i];
  });
}

// (B,M,N) -> (B,N,M)
template <typename T>
Var<T> transpose_bmm(const Var<T>& a) {
  const long B = a.dim(0), M = a.dim(1), N = a.dim(2);
  Tensor<T> out(Shape{B, N, M});
  for (long b = 0; b < B; ++b)
    for (long i = 0; i < M; ++i)
      for (long j = 0; j < N; ++j) out.at3(b, j, i) = a.value().at3(b, i, j);
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an, B, M, N](Node<T>& nd) {
    auto& g = an->ensure_grad();
    for (long b = 0; b < B; ++b)
      for (long i = 0; i < M; ++i)
        for (long j = 0; j < N; ++j) g[(b * M + i) * N + j] += nd.grad[(b * N + j) * M + i];
  });
}

// Numerically stable softmax over the last axis of any-rank tensor.
template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const long D = x.shape().back();
  const long rows = x.value().numel() / D;
  Tensor<T> out(x.shape());
  for (long r = 0; r < rows; ++r) {
    const T* xr = x.value().data() + r * D;
    T* yr = out.data() + r * D;
    T mx = xr[0];
    for (long j = 1; j < D; ++j) mx = std::max(mx, xr[j]);
    // Normalizer in double so row sums stay at 1 even over 2^16 entries.
    double sum = 0;
    for (long j = 0; j < D; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += static_cast<double>(yr[j]);
    }
    for (long j = 0; j < D; ++j) yr[j] = static_cast<T>(static_cast<double>(yr[j]) / sum);
  }
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, rows, D](Node<T>& nd) {
    auto& g = xn->ensure_grad();
    for (long r = 0; r < rows; ++r) {
      const T* p = nd.value.data() + r * D;
      const T* dy = nd.grad.data() + r * D;
      double dot = 0;
      for (long j = 0; j < D; ++j) dot += dy[j] * p[j];
      for (long j = 0; j < D; ++j) g[r * D + j] += p[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax_lastdim(const Var<T>& x) {
  const long D = x.shape().back();
  const long rows = x.value().numel() / D;
  Tensor<T> out(x.shape());
  for (long r = 0; r < rows; ++r) {
    const T* xr = x.value().data() + r * D;
    T* yr = out.data() + r * D;
    T mx = xr[0];
    for (long j = 1; j < D; ++j) mx = std::max(mx, xr[j]);
    T sum = 0;
    for (long j = 0; j < D; ++j) sum += std::exp(xr[j] - mx);
    const T lse = mx + std::log(sum);
    for (long j = 0; j < D; ++j) yr[j] = xr[j] - lse;
  }
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, rows, D](Node<T>& nd) {
    auto& g = xn->ensure_grad();
    for (long r = 0; r < rows; ++r) {
      const T* y = nd.value.data() + r * D;
      const T* dy = nd.grad.data() + r * D;
      T s = 0;
      for (long j = 0; j < D; ++j) s += dy[j];
      for (long j = 0; j < D; ++j) g[r * D + j] += dy[j] - std::exp(y[j]) * s;
    }
  });
}

// Layer norm over the last axis with affine parameters gamma/beta of size D.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const long D = x.shape().back();
  if (gamma.dim(0) != D || beta.dim(0) != D) throw ConfigError("layer_norm affine size mismatch");
  const long rows = x.value().numel() / D;
  Tensor<T> out(x.shape());
  Tensor<T> inv_std(Shape{rows});
  Tensor<T> xhat(x.shape());
  for (long r = 0; r < rows; ++r) {
    const T* xr = x.value().data() + r * D;
    T mean = 0;
    for (long j = 0; j < D; ++j) mean += xr[j];
    mean /= static_cast<T>(D);
    T var = 0;
    for (long j = 0; j < D; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(D);
    const T istd = T(1) / std::sqrt(var + eps);
    inv_std[r] = istd;
    for (long j = 0; j < D; ++j) {
      const T xh = (xr[j] - mean) * istd;
      xhat[r * D + j] = xh;
      out[r * D + j] = xh * gamma.value()[j] + beta.value()[j];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_op<T>(std::move(out), {x, gamma, beta},
                    [xn, gn, bn, rows, D, inv_std, xhat](Node<T>& nd) {
                      for (long r = 0; r < rows; ++r) {
                        const T* dy = nd.grad.data() + r * D;
                        const T* xh = xhat.data() + r * D;
                        if (gn->requires_grad) {
                          auto& gg = gn->ensure_grad();
                          for (long j = 0; j < D; ++j) gg[j] += dy[j] * xh[j];
                        }
                        if (bn->requires_grad) {
                          auto& gb = bn->ensure_grad();
                          for (long j = 0; j < D; ++j) gb[j] += dy[j];
                        }
                        if (xn->requires_grad) {
                          auto& gx = xn->ensure_grad();
                          T m1 = 0, m2 = 0;
                          for (long j = 0; j < D; ++j) {
                            const T t = dy[j] * gn->value[j];
                            m1 += t;
                            m2 += t * xh[j];
                          }
                          m1 /= static_cast<T>(D);
                          m2 /= static_cast<T>(D);
                          for (long j = 0; j < D; ++j) {
                            const T t = dy[j] * gn->value[j];
                            gx[r * D + j] += (t - m1 - xh[j] * m2) * inv_std[r];
                          }
                        }
                      }
                    });
}

// Row-wise L2 normalization of a (N,D) matrix.
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps = T(1e-12)) {
  const long N = x.dim(0), D = x.dim(1);
  Tensor<T> out(x.shape());
  Tensor<T> inv_norm(Shape{N});
  for (long n = 0; n < N; ++n) {
    const T* xr = x.value().data() + n * D;
    T s = 0;
    for (long j = 0; j < D; ++j) s += xr[j] * xr[j];
    const T inv = T(1) / std::sqrt(s + eps);
    inv_norm[n] = inv;
    for (long j = 0; j < D; ++j) out[n * D + j] = xr[j] * inv;
  }
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, N, D, inv_norm](Node<T>& nd) {
    auto& g = xn->ensure_grad();
    for (long n = 0; n < N; ++n) {
      const T* y = nd.value.data() + n * D;
      const T* dy = nd.grad.data() + n * D;
      T dot = 0;
      for (long j = 0; j < D; ++j) dot += y[j] * dy[j];
      for (long j = 0; j < D; ++j) g[n * D + j] += (dy[j] - y[j] * dot) * inv_norm[n];
    }
  });
}

// (N,L,D) -> (N*heads, L, D/heads)
template <typename T>
Var<T> split_heads(const Var<T>& x, long heads) {
  const long N = x.dim(0), L = x.dim(1), D = x.dim(2);
  if (D % heads != 0) throw ConfigError("split_heads: width not divisible by head count");
  const long dh = D / heads;
  Tensor<T> out(Shape{N * heads, L, dh});
  for (long n = 0; n < N; ++n)
    for (long h = 0; h < heads; ++h)
      for (long l = 0; l < L; ++l)
        for (long k = 0; k < dh; ++k)
          out.at3(n * heads + h, l, k) = x.value().at3(n, l, h * dh + k);
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, N, L, D, heads, dh](Node<T>& nd) {
    auto& g = xn->ensure_grad();
    for (long n = 0; n < N; ++n)
      for (long h = 0; h < heads; ++h)
        for (long l = 0; l < L; ++l)
          for (long k = 0; k < dh; ++k)
            g[(n * L + l) * D + h * dh + k] += nd.grad[((n * heads + h) * L + l) * dh + k];
  });
}

// (N*heads, L, dh) -> (N, L, heads*dh)
template <typename T>
Var<T> merge_heads(const Var<T>& x, long heads) {
  const long NH = x.dim(0), L = x.dim(1), dh = x.dim(2);
  const long N = NH / heads, D = heads * dh;
  Tensor<T> out(Shape{N, L, D});
  for (long n = 0; n < N; ++n)
    for (long h = 0; h < heads; ++h)
      for (long l = 0; l < L; ++l)
        for (long k = 0; k < dh; ++k)
          out.at3(n, l, h * dh + k) = x.value().at3(n * heads + h, l, k);
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, N, L, D, heads, dh](Node<T>& nd) {
    auto& g = xn->ensure_grad();
    for (long n = 0; n < N; ++n)
      for (long h = 0; h < heads; ++h)
        for (long l = 0; l < L; ++l)
          for (long k = 0; k < dh; ++k)
            g[((n * heads + h) * L + l) * dh + k] += nd.grad[(n * L + l) * D + h * dh + k];
  });
}

// Additive causal mask on (B,L,L) attention scores (position i sees j <= i).
// Masked entries get a large negative constant; their softmax weight underflows
// to exactly zero.
template <typename T>
Var<T> add_causal_mask(const Var<T>& scores) {
  const long B = scores.dim(0), Lq = scores.dim(1), Lk = scores.dim(2);
  if (Lq != Lk) throw ShapeError("causal mask expects square scores");
  const T neg = T(-1e30);
  Tensor<T> out = scores.value();
  for (long b = 0; b < B; ++b)
    for (long i = 0; i < Lq; ++i)
      for (long j = i + 1; j < Lk; ++j) out.at3(b, i, j) = neg;
  auto sn = scores.node();
  return make_op<T>(std::move(out), {scores}, [sn, B, Lq, Lk](Node<T>& nd) {
    auto& g = sn->ensure_grad();
    for (long b = 0; b < B; ++b)
      for (long i = 0; i < Lq; ++i)
        for (long j = 0; j <= i; ++j) g[(b * Lq + i) * Lk + j] += nd.grad[(b * Lq + i) * Lk + j];
  });
}

// Multi-head attention core on pre-projected tensors.
// q: (N,Lq,D), k/v: (N,Lk,D). Returns (N,Lq,D); optionally copies the
// per-head attention probabilities (N*heads, Lq, Lk) to *attn_out.
template <typename T>
Var<T> mha_core(const Var<T>& q, const Var<T>& k, const Var<T>& v, long heads, bool causal,
                Tensor<T>* attn_out = nullptr) {
  const long D = q.dim(2);
  const long dh = D / heads;
  Var<T> qh = split_heads(q, heads);
  Var<T> kh = split_heads(k, heads);
  Var<T> vh = split_heads(v, heads);
  Var<T> scores = mul_scalar(bmm(qh, transpose_bmm(kh)), T(1) / std::sqrt(static_cast<T>(dh)));
  if (causal) scores = add_causal_mask(scores);
  Var<T> probs = softmax_lastdim(scores);
  if (attn_out) *attn_out = probs.value();
  Var<T> ctx = bmm(probs, vh);
  return merge_heads(ctx, heads);
}

}  // namespace dgsp
