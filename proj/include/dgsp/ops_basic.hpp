#pragma once

#include <cmath>
#include <vector>

#include "dgsp/autodiff.hpp"

// Elementwise ops, reductions and shape plumbing.

namespace dgsp {

namespace detail {
template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}
}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(out), {a, b}, [an, bn, n](Node<T>& nd) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (long i = 0; i < n; ++i) g[i] += nd.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (long i = 0; i < n; ++i) g[i] += nd.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = a.value()[i] - b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(out), {a, b}, [an, bn, n](Node<T>& nd) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (long i = 0; i < n; ++i) g[i] += nd.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (long i = 0; i < n; ++i) g[i] -= nd.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(out), {a, b}, [an, bn, n](Node<T>& nd) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (long i = 0; i < n; ++i) g[i] += nd.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (long i = 0; i < n; ++i) g[i] += nd.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "div");
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = a.value()[i] / b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(out), {a, b}, [an, bn, n](Node<T>& nd) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (long i = 0; i < n; ++i) g[i] += nd.grad[i] / bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (long i = 0; i < n; ++i) {
        T bv = bn->value[i];
        g[i] -= nd.grad[i] * an->value[i] / (bv * bv);
      }
    }
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = a.value()[i] + s;
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an, n](Node<T>& nd) {
    auto& g = an->ensure_grad();
    for (long i = 0; i < n; ++i) g[i] += nd.grad[i];
  });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s) {
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = a.value()[i] * s;
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an, n, s](Node<T>& nd) {
    auto& g = an->ensure_grad();
    for (long i = 0; i < n; ++i) g[i] += nd.grad[i] * s;
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = a.value()[i] > T(0) ? a.value()[i] : T(0);
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an, n](Node<T>& nd) {
    auto& g = an->ensure_grad();
    for (long i = 0; i < n; ++i)
      if (an->value[i] > T(0)) g[i] += nd.grad[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) {
    T x = a.value()[i];
    out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                       : std::exp(x) / (T(1) + std::exp(x));
  }
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an, n](Node<T>& nd) {
    auto& g = an->ensure_grad();
    for (long i = 0; i < n; ++i) {
      T s = nd.value[i];
      g[i] += nd.grad[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Var<T> log_op(const Var<T>& a) {
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = std::log(a.value()[i]);
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an, n](Node<T>& nd) {
    auto& g = an->ensure_grad();
    for (long i = 0; i < n; ++i) g[i] += nd.grad[i] / an->value[i];
  });
}

// Clamp with pass-through gradient strictly inside the interval.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = std::min(hi, std::max(lo, a.value()[i]));
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an, n, lo, hi](Node<T>& nd) {
    auto& g = an->ensure_grad();
    for (long i = 0; i < n; ++i) {
      T x = an->value[i];
      if (x > lo && x < hi) g[i] += nd.grad[i];
    }
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  T acc = 0;
  const long n = a.value().numel();
  for (long i = 0; i < n; ++i) acc += a.value()[i];
  auto an = a.node();
  return make_op<T>(Tensor<T>::scalar(acc), {a}, [an, n](Node<T>& nd) {
    auto& g = an->ensure_grad();
    for (long i = 0; i < n; ++i) g[i] += nd.grad[0];
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.value().numel()));
}

// Sum over all axes except axis 0: (N, ...) -> (N).
template <typename T>
Var<T> sum_per_sample(const Var<T>& a) {
  const long n0 = a.dim(0);
  const long inner = a.value().numel() / n0;
  Tensor<T> out(Shape{n0});
  for (long i = 0; i < n0; ++i) {
    T acc = 0;
    for (long j = 0; j < inner; ++j) acc += a.value()[i * inner + j];
    out[i] = acc;
  }
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an, n0, inner](Node<T>& nd) {
    auto& g = an->ensure_grad();
    for (long i = 0; i < n0; ++i)
      for (long j = 0; j < inner; ++j) g[i * inner + j] += nd.grad[i];
  });
}

// Diagonal of a square matrix: (N,N) -> (N).
template <typename T>
Var<T> take_diag(const Var<T>& a) {
  const long n = a.dim(0);
  if (a.value().ndim() != 2 || a.dim(1) != n)
    throw ShapeError("take_diag expects a square matrix, got " + shape_str(a.shape()));
  Tensor<T> out(Shape{n});
  for (long i = 0; i < n; ++i) out[i] = a.value().at2(i, i);
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an, n](Node<T>& nd) {
    auto& g = an->ensure_grad();
    for (long i = 0; i < n; ++i) g[i * n + i] += nd.grad[i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tensor<T> out = a.value().reshaped(std::move(s));
  auto an = a.node();
  const long n = out.numel();
  return make_op<T>(std::move(out), {a}, [an, n](Node<T>& nd) {
    auto& g = an->ensure_grad();
    for (long i = 0; i < n; ++i) g[i] += nd.grad[i];
  });
}

// Concatenate along `axis`; all other dims must match.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape out_shape = parts[0].shape();
  const int nd = static_cast<int>(out_shape.size());
  long axis_total = 0;
  for (const auto& p : parts) {
    if (p.value().ndim() != nd) throw ShapeError("concat rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != axis && p.dim(d) != out_shape[static_cast<size_t>(d)])
        throw ShapeError("concat dim mismatch at axis " + std::to_string(d));
    axis_total += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;

  long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (int d = axis + 1; d < nd; ++d) inner *= out_shape[static_cast<size_t>(d)];

  Tensor<T> out(out_shape);
  std::vector<long> offsets;  // per-part offset along the axis
  long off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const long pa = p.dim(axis);
    for (long o = 0; o < outer; ++o) {
      const T* src = p.value().data() + o * pa * inner;
      T* dst = out.data() + (o * axis_total + off) * inner;
      std::copy(src, src + pa * inner, dst);
    }
    off += pa;
  }

  std::vector<NodePtr<T>> nodes;
  std::vector<long> sizes;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    sizes.push_back(p.dim(axis));
  }
  return make_op<T>(std::move(out), parts,
                    [nodes, sizes, offsets, outer, inner, axis_total](Node<T>& nd) {
                      for (size_t k = 0; k < nodes.size(); ++k) {
                        if (!nodes[k]->requires_grad) continue;
                        auto& g = nodes[k]->ensure_grad();
                        const long pa = sizes[k];
                        for (long o = 0; o < outer; ++o) {
                          const T* src = nd.grad.data() + (o * axis_total + offsets[k]) * inner;
                          T* dst = g.data() + o * pa * inner;
                          for (long i = 0; i < pa * inner; ++i) dst[i] += src[i];
                        }
                      }
                    });
}

// Extract one row position from a (N,L,D) sequence: -> (N,D).
template <typename T>
Var<T> row_at(const Var<T>& x, long pos) {
  const long N = x.dim(0), L = x.dim(1), D = x.dim(2);
  if (pos < 0 || pos >= L) throw ShapeError("row_at position out of range");
  Tensor<T> out(Shape{N, D});
  for (long n = 0; n < N; ++n)
    for (long d = 0; d < D; ++d) out.at2(n, d) = x.value().at3(n, pos, d);
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, N, L, D, pos](Node<T>& nd) {
    auto& g = xn->ensure_grad();
    for (long n = 0; n < N; ++n)
      for (long d = 0; d < D; ++d) g[(n * L + pos) * D + d] += nd.grad[n * D + d];
  });
}

// Broadcast a (R,C) matrix across the batch: -> (N,R,C). Backward sums over N.
template <typename T>
Var<T> broadcast_rows(const Var<T>& x, long N) {
  const long R = x.dim(0), C = x.dim(1);
  Tensor<T> out(Shape{N, R, C});
  for (long n = 0; n < N; ++n)
    std::copy(x.value().data(), x.value().data() + R * C, out.data() + n * R * C);
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, N, R, C](Node<T>& nd) {
    auto& g = xn->ensure_grad();
    for (long n = 0; n < N; ++n)
      for (long i = 0; i < R * C; ++i) g[i] += nd.grad[n * R * C + i];
  });
}

// Start from a constant (L,D) base sequence, broadcast over the batch, and
// overwrite the rows at `positions` with per-sample injected vectors (N,P,D).
// Gradient flows to the injected vectors only.
template <typename T>
Var<T> inject_rows(const Tensor<T>& base, const Var<T>& injected,
                   const std::vector<long>& positions) {
  const long L = base.dim(0), D = base.dim(1);
  const long N = injected.dim(0), P = injected.dim(1);
  if (P != static_cast<long>(positions.size()))
    throw ShapeError("inject_rows: position count mismatch");
  if (injected.dim(2) != D) throw ShapeError("inject_rows: embedding width mismatch");
  Tensor<T> out(Shape{N, L, D});
  for (long n = 0; n < N; ++n) {
    std::copy(base.data(), base.data() + L * D, out.data() + n * L * D);
    for (long p = 0; p < P; ++p) {
      const long pos = positions[static_cast<size_t>(p)];
      for (long d = 0; d < D; ++d)
        out[(n * L + pos) * D + d] = injected.value()[(n * P + p) * D + d];
    }
  }
  auto in = injected.node();
  return make_op<T>(std::move(out), {injected}, [in, positions, N, L, D, P](Node<T>& nd) {
    auto& g = in->ensure_grad();
    for (long n = 0; n < N; ++n)
      for (long p = 0; p < P; ++p) {
        const long pos = positions[static_cast<size_t>(p)];
        for (long d = 0; d < D; ++d)
          g[(n * P + p) * D + d] += nd.grad[(n * L + pos) * D + d];
      }
  });
}

}  // namespace dgsp
