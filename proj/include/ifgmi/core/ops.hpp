#pragma once

// Differentiable primitives. Every function checks operand shapes, computes
// its output eagerly and, when a tape is active and an input requires grad,
// records a closure that pushes the output gradient back into the inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ifgmi/core/tensor.hpp"

namespace ifgmi {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& op, const std::string& what) {
  if (!ok) throw ShapeError(op + ": " + what);
}

template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), op,
          "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
void require_rank(const Tensor<T>& a, std::size_t r, const char* op) {
  require(a.rank() == r, op,
          "expected rank " + std::to_string(r) + ", got " + shape_str(a.shape()));
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto os = out.data_mut();
  for (std::size_t i = 0; i < xs.size(); ++i) os[i] = fwd(xs[i]);
  record(out, {&x}, [x, deriv](Node<T>& o) mutable {
    if (!x.requires_grad()) return;
    auto g = x.grad_mut();
    auto xs = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * deriv(xs[i], o.data[i]);
  });
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "add");
  Tensor<T> out(a.shape());
  auto as = a.data(), bs = b.data();
  auto os = out.data_mut();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] = as[i] + bs[i];
  record(out, {&a, &b}, [a, b](Node<T>& o) mutable {
    if (a.requires_grad()) {
      auto g = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "sub");
  Tensor<T> out(a.shape());
  auto as = a.data(), bs = b.data();
  auto os = out.data_mut();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] = as[i] - bs[i];
  record(out, {&a, &b}, [a, b](Node<T>& o) mutable {
    if (a.requires_grad()) {
      auto g = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "mul");
  Tensor<T> out(a.shape());
  auto as = a.data(), bs = b.data();
  auto os = out.data_mut();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] = as[i] * bs[i];
  record(out, {&a, &b}, [a, b](Node<T>& o) mutable {
    auto as = a.data(), bs = b.data();
    if (a.requires_grad()) {
      auto g = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bs[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * as[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "div");
  Tensor<T> out(a.shape());
  auto as = a.data(), bs = b.data();
  auto os = out.data_mut();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] = as[i] / bs[i];
  record(out, {&a, &b}, [a, b](Node<T>& o) mutable {
    auto bs = b.data();
    if (a.requires_grad()) {
      auto g = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] / bs[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i] * o.data[i] / bs[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  return detail::unary(
      x, [slope](T v) { return v > 0 ? v : slope * v; },
      [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

/// log(1 + e^x), evaluated without overflow.
template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

/// Inverse hyperbolic cosine as ln(x + sqrt(x^2 - 1)). Values below 1 are
/// clamped to 1 and inputs at or below 1 + 1e-12 receive no gradient.
template <class T>
Tensor<T> arccosh(const Tensor<T>& x) {
  const T floor = T(1) + T(1e-12);
  return detail::unary(
      x,
      [](T v) {
        v = std::max(v, T(1));
        return std::log(v + std::sqrt(v * v - T(1)));
      },
      [floor](T v, T) {
        if (v <= floor) return T(0);
        return T(1) / std::sqrt(v * v - T(1));
      });
}

/// min(x, c) elementwise.
template <class T>
Tensor<T> clamp_max(const Tensor<T>& x, T c) {
  return detail::unary(
      x, [c](T v) { return std::min(v, c); }, [c](T v, T) { return v < c ? T(1) : T(0); });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(numel(shape) == x.size(), "reshape",
                  "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  record(out, {&x}, [x](Node<T>& o) mutable {
    auto g = x.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  auto out = Tensor<T>::scalar(acc);
  record(out, {&x}, [x](Node<T>& o) mutable {
    auto g = x.grad_mut();
    for (auto& v : g) v += o.grad[0];
  });
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Sum over the trailing axis of a rank-2 tensor: [N, M] -> [N].
template <class T>
Tensor<T> sum_rows(const Tensor<T>& x) {
  detail::require_rank(x, 2, "sum_rows");
  const std::size_t n = x.dim(0), m = x.dim(1);
  Tensor<T> out(Shape{n});
  auto xs = x.data();
  auto os = out.data_mut();
  for (std::size_t i = 0; i < n; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < m; ++j) acc += xs[i * m + j];
    os[i] = acc;
  }
  record(out, {&x}, [x, n, m](Node<T>& o) mutable {
    auto g = x.grad_mut();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] += o.grad[i];
  });
  return out;
}

template <class T>
Tensor<T> l1_norm(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += std::abs(v);
  auto out = Tensor<T>::scalar(acc);
  record(out, {&x}, [x](Node<T>& o) mutable {
    auto g = x.grad_mut();
    auto xs = x.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += o.grad[0] * (xs[i] > 0 ? T(1) : (xs[i] < 0 ? T(-1) : T(0)));
  });
  return out;
}

template <class T>
Tensor<T> l2_norm(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v * v;
  auto out = Tensor<T>::scalar(std::sqrt(acc));
  record(out, {&x}, [x](Node<T>& o) mutable {
    const T norm = o.data[0];
    if (norm == T(0)) return;
    auto g = x.grad_mut();
    auto xs = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[0] * xs[i] / norm;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Row-wise (rank-2) helpers

/// x[n, :] * s[n]
template <class T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
  detail::require_rank(x, 2, "scale_rows");
  detail::require(s.shape() == Shape{x.dim(0)}, "scale_rows",
                  "scale " + shape_str(s.shape()) + " does not match rows of " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), m = x.dim(1);
  Tensor<T> out(x.shape());
  auto xs = x.data(), ss = s.data();
  auto os = out.data_mut();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) os[i * m + j] = xs[i * m + j] * ss[i];
  record(out, {&x, &s}, [x, s, n, m](Node<T>& o) mutable {
    auto xs = x.data(), ss = s.data();
    if (x.requires_grad()) {
      auto g = x.grad_mut();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g[i * m + j] += o.grad[i * m + j] * ss[i];
    }
    if (s.requires_grad()) {
      auto g = s.grad_mut();
      for (std::size_t i = 0; i < n; ++i) {
        T acc = 0;
        for (std::size_t j = 0; j < m; ++j) acc += o.grad[i * m + j] * xs[i * m + j];
        g[i] += acc;
      }
    }
  });
  return out;
}

/// Numerically stable softmax over the trailing axis of [N, M].
template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  detail::require_rank(x, 2, "softmax");
  const std::size_t n = x.dim(0), m = x.dim(1);
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto os = out.data_mut();
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = xs.data() + i * m;
    T mx = *std::max_element(row, row + m);
    T z = 0;
    for (std::size_t j = 0; j < m; ++j) z += (os[i * m + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < m; ++j) os[i * m + j] /= z;
  }
  record(out, {&x}, [x, n, m](Node<T>& o) mutable {
    auto g = x.grad_mut();
    for (std::size_t i = 0; i < n; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < m; ++j) dot += o.grad[i * m + j] * o.data[i * m + j];
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] += o.data[i * m + j] * (o.grad[i * m + j] - dot);
    }
  });
  return out;
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  detail::require_rank(x, 2, "log_softmax");
  const std::size_t n = x.dim(0), m = x.dim(1);
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto os = out.data_mut();
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = xs.data() + i * m;
    T mx = *std::max_element(row, row + m);
    T z = 0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
    T lse = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) os[i * m + j] = row[j] - lse;
  }
  record(out, {&x}, [x, n, m](Node<T>& o) mutable {
    auto g = x.grad_mut();
    for (std::size_t i = 0; i < n; ++i) {
      T gs = 0;
      for (std::size_t j = 0; j < m; ++j) gs += o.grad[i * m + j];
      for (std::size_t j = 0; j < m; ++j)
        g[i * m + j] += o.grad[i * m + j] - std::exp(o.data[i * m + j]) * gs;
    }
  });
  return out;
}

/// Picks x[n, index[n]] -> [N].
template <class T>
Tensor<T> gather_cols(const Tensor<T>& x, const std::vector<std::size_t>& index) {
  detail::require_rank(x, 2, "gather_cols");
  const std::size_t n = x.dim(0), m = x.dim(1);
  detail::require(index.size() == n, "gather_cols",
                  std::to_string(index.size()) + " indices for " + shape_str(x.shape()));
  for (auto k : index) detail::require(k < m, "gather_cols", "column index out of range");
  Tensor<T> out(Shape{n});
  auto xs = x.data();
  auto os = out.data_mut();
  for (std::size_t i = 0; i < n; ++i) os[i] = xs[i * m + index[i]];
  record(out, {&x}, [x, index, m](Node<T>& o) mutable {
    auto g = x.grad_mut();
    for (std::size_t i = 0; i < index.size(); ++i) g[i * m + index[i]] += o.grad[i];
  });
  return out;
}

/// Selects samples along the leading axis.
template <class T>
Tensor<T> index_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  detail::require(x.rank() >= 1 && !rows.empty(), "index_rows", "empty selection or scalar input");
  const std::size_t stride = x.size() / x.dim(0);
  for (auto r : rows) detail::require(r < x.dim(0), "index_rows", "row index out of range");
  Shape s = x.shape();
  s[0] = rows.size();
  Tensor<T> out(s);
  auto xs = x.data();
  auto os = out.data_mut();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xs.data() + rows[i] * stride, stride, os.data() + i * stride);
  record(out, {&x}, [x, rows, stride](Node<T>& o) mutable {
    auto g = x.grad_mut();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t k = 0; k < stride; ++k) g[rows[i] * stride + k] += o.grad[i * stride + k];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [n, k] x [k, m] -> [n, m]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  detail::require(a.dim(1) == b.dim(0), "matmul",
                  "inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto n = static_cast<Eigen::Index>(a.dim(0)), k = static_cast<Eigen::Index>(a.dim(1)),
             m = static_cast<Eigen::Index>(b.dim(1));
  Tensor<T> out(Shape{a.dim(0), b.dim(1)});
  detail::MapMat<T>(out.data_mut().data(), n, m).noalias() =
      detail::CMapMat<T>(a.data().data(), n, k) * detail::CMapMat<T>(b.data().data(), k, m);
  record(out, {&a, &b}, [a, b, n, k, m](Node<T>& o) mutable {
    detail::CMapMat<T> go(o.grad.data(), n, m);
    if (a.requires_grad())
      detail::MapMat<T>(a.grad_mut().data(), n, k).noalias() +=
          go * detail::CMapMat<T>(b.data().data(), k, m).transpose();
    if (b.requires_grad())
      detail::MapMat<T>(b.grad_mut().data(), k, m).noalias() +=
          detail::CMapMat<T>(a.data().data(), n, k).transpose() * go;
  });
  return out;
}

/// Fully connected layer: x[N, in] * W[out, in]^T + b[out].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(w, 2, "linear");
  detail::require(x.dim(1) == w.dim(1), "linear",
                  "input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  detail::require(b.shape() == Shape{w.dim(0)}, "linear",
                  "bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
  const auto n = static_cast<Eigen::Index>(x.dim(0)), in = static_cast<Eigen::Index>(x.dim(1)),
             outd = static_cast<Eigen::Index>(w.dim(0));
  Tensor<T> out(Shape{x.dim(0), w.dim(0)});
  detail::MapMat<T> om(out.data_mut().data(), n, outd);
  om.noalias() = detail::CMapMat<T>(x.data().data(), n, in) *
                 detail::CMapMat<T>(w.data().data(), outd, in).transpose();
  auto bs = b.data();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < outd; ++j) om(i, j) += bs[j];
  record(out, {&x, &w, &b}, [x, w, b, n, in, outd](Node<T>& o) mutable {
    detail::CMapMat<T> go(o.grad.data(), n, outd);
    if (x.requires_grad())
      detail::MapMat<T>(x.grad_mut().data(), n, in).noalias() +=
          go * detail::CMapMat<T>(w.data().data(), outd, in);
    if (w.requires_grad())
      detail::MapMat<T>(w.grad_mut().data(), outd, in).noalias() +=
          go.transpose() * detail::CMapMat<T>(x.data().data(), n, in);
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < outd; ++j) gb[j] += go(i, j);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Image primitives, layout [N, C, H, W]

namespace detail {

// Unfolds one sample into [C*k*k, H*W] columns (stride 1, zero padding k/2).
template <class T>
void im2col(const T* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k, T* col) {
  const long pad = static_cast<long>(k / 2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = col + ((ch * k + ky) * k + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - pad;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - pad;
            dst[y * w + x] = (sy < 0 || sy >= static_cast<long>(h) || sx < 0 || sx >= static_cast<long>(w))
                                 ? T(0)
                                 : img[(ch * h + sy) * w + sx];
          }
        }
      }
}

template <class T>
void col2im(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k, T* img) {
  const long pad = static_cast<long>(k / 2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* src = col + ((ch * k + ky) * k + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - pad;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - pad;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            img[(ch * h + sy) * w + sx] += src[y * w + x];
          }
        }
      }
}

}  // namespace detail

/// Square-kernel convolution, stride 1, zero padding k/2 (k odd).
/// x[N, C, H, W], w[O, C, k, k], b[O] -> [N, O, H, W].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank(x, 4, "conv2d");
  detail::require_rank(w, 4, "conv2d");
  detail::require(w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1, "conv2d",
                  "kernel must be square and odd, got " + shape_str(w.shape()));
  detail::require(x.dim(1) == w.dim(1), "conv2d",
                  "input channels " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  detail::require(b.shape() == Shape{w.dim(0)}, "conv2d",
                  "bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), o = w.dim(0), k = w.dim(2);
  const std::size_t hw = h * wd, ck = c * k * k;
  Tensor<T> out(Shape{n, o, h, wd});
  Buffer<T> col(ck * hw);
  detail::CMapMat<T> wm(w.data().data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ck));
  auto bs = b.data();
  for (std::size_t s = 0; s < n; ++s) {
    const T* img = x.data().data() + s * c * hw;
    T* dst = out.data_mut().data() + s * o * hw;
    if (k == 1) {
      detail::MapMat<T>(dst, o, hw).noalias() = wm * detail::CMapMat<T>(img, c, hw);
    } else {
      detail::im2col(img, c, h, wd, k, col.data());
      detail::MapMat<T>(dst, o, hw).noalias() = wm * detail::CMapMat<T>(col.data(), ck, hw);
    }
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t p = 0; p < hw; ++p) dst[oc * hw + p] += bs[oc];
  }
  record(out, {&x, &w, &b}, [x, w, b, n, c, h, wd, o, k, hw, ck](Node<T>& on) mutable {
    Buffer<T> col(ck * hw), gcol(ck * hw);
    detail::CMapMat<T> wm(w.data().data(), o, ck);
    for (std::size_t s = 0; s < n; ++s) {
      const T* img = x.data().data() + s * c * hw;
      detail::CMapMat<T> go(on.grad.data() + s * o * hw, o, hw);
      if (w.requires_grad()) {
        detail::MapMat<T> gw(w.grad_mut().data(), o, ck);
        if (k == 1) {
          gw.noalias() += go * detail::CMapMat<T>(img, c, hw).transpose();
        } else {
          detail::im2col(img, c, h, wd, k, col.data());
          gw.noalias() += go * detail::CMapMat<T>(col.data(), ck, hw).transpose();
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t oc = 0; oc < o; ++oc) gb[oc] += go.row(oc).sum();
      }
      if (x.requires_grad()) {
        T* gimg = x.grad_mut().data() + s * c * hw;
        if (k == 1) {
          detail::MapMat<T>(gimg, c, hw).noalias() += wm.transpose() * go;
        } else {
          detail::MapMat<T>(gcol.data(), ck, hw).noalias() = wm.transpose() * go;
          detail::col2im(gcol.data(), c, h, wd, k, gimg);
        }
      }
    }
  });
  return out;
}

/// Nearest-neighbour 2x upsampling.
template <class T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  detail::require_rank(x, 4, "upsample2x");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out(Shape{n, c, 2 * h, 2 * w});
  auto xs = x.data();
  auto os = out.data_mut();
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        os[(p * 2 * h + y) * 2 * w + xx] = xs[(p * h + y / 2) * w + xx / 2];
  record(out, {&x}, [x, n, c, h, w](Node<T>& o) mutable {
    auto g = x.grad_mut();
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx)
          g[(p * h + y / 2) * w + xx / 2] += o.grad[(p * 2 * h + y) * 2 * w + xx];
  });
  return out;
}

/// 2x2 average pooling, stride 2. Spatial dims must be even.
template <class T>
Tensor<T> avg_pool2x(const Tensor<T>& x) {
  detail::require_rank(x, 4, "avg_pool2x");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  detail::require(h % 2 == 0 && w % 2 == 0, "avg_pool2x", "odd spatial size " + shape_str(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out(Shape{n, c, oh, ow});
  auto xs = x.data();
  auto os = out.data_mut();
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const T* r0 = xs.data() + (p * h + 2 * y) * w + 2 * xx;
        os[(p * oh + y) * ow + xx] = T(0.25) * (r0[0] + r0[1] + r0[w] + r0[w + 1]);
      }
  record(out, {&x}, [x, n, c, h, w, oh, ow](Node<T>& o) mutable {
    auto g = x.grad_mut();
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const T gv = T(0.25) * o.grad[(p * oh + y) * ow + xx];
          T* r0 = g.data() + (p * h + 2 * y) * w + 2 * xx;
          r0[0] += gv;
          r0[1] += gv;
          r0[w] += gv;
          r0[w + 1] += gv;
        }
  });
  return out;
}

/// Per-sample, per-channel normalisation to zero mean and unit variance
/// (biased variance, stabiliser eps).
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5)) {
  detail::require_rank(x, 4, "instance_norm");
  const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  std::vector<T> inv_std(planes);
  auto xs = x.data();
  auto os = out.data_mut();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xs.data() + p * hw;
    T mu = 0;
    for (std::size_t i = 0; i < hw; ++i) mu += src[i];
    mu /= static_cast<T>(hw);
    T var = 0;
    for (std::size_t i = 0; i < hw; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(hw);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[p] = is;
    for (std::size_t i = 0; i < hw; ++i) os[p * hw + i] = (src[i] - mu) * is;
  }
  record(out, {&x}, [x, planes, hw, inv_std](Node<T>& o) mutable {
    auto g = x.grad_mut();
    const T inv_n = T(1) / static_cast<T>(hw);
    for (std::size_t p = 0; p < planes; ++p) {
      const T* gy = o.grad.data() + p * hw;
      const T* y = o.data.data() + p * hw;
      T sg = 0, sgy = 0;
      for (std::size_t i = 0; i < hw; ++i) {
        sg += gy[i];
        sgy += gy[i] * y[i];
      }
      for (std::size_t i = 0; i < hw; ++i)
        g[p * hw + i] += inv_std[p] * (gy[i] - inv_n * sg - y[i] * inv_n * sgy);
    }
  });
  return out;
}

/// Per-sample, per-channel affine map: y = x * scale[n, c] + shift[n, c].
template <class T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift) {
  detail::require_rank(x, 4, "modulate");
  const Shape nc{x.dim(0), x.dim(1)};
  detail::require(scale.shape() == nc && shift.shape() == nc, "modulate",
                  "style " + shape_str(scale.shape()) + "/" + shape_str(shift.shape()) + " vs features " +
                      shape_str(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  auto xs = x.data(), sc = scale.data(), sh = shift.data();
  auto os = out.data_mut();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < hw; ++i) os[p * hw + i] = xs[p * hw + i] * sc[p] + sh[p];
  record(out, {&x, &scale, &shift}, [x, scale, shift, planes, hw](Node<T>& o) mutable {
    auto xs = x.data(), sc = scale.data();
    if (x.requires_grad()) {
      auto g = x.grad_mut();
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += o.grad[p * hw + i] * sc[p];
    }
    if (scale.requires_grad()) {
      auto g = scale.grad_mut();
      for (std::size_t p = 0; p < planes; ++p) {
        T acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += o.grad[p * hw + i] * xs[p * hw + i];
        g[p] += acc;
      }
    }
    if (shift.requires_grad()) {
      auto g = shift.grad_mut();
      for (std::size_t p = 0; p < planes; ++p) {
        T acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += o.grad[p * hw + i];
        g[p] += acc;
      }
    }
  });
  return out;
}

/// Splits [N, 2C] into its first and second halves along the trailing axis.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_cols(const Tensor<T>& x) {
  detail::require_rank(x, 2, "split_cols");
  detail::require(x.dim(1) % 2 == 0, "split_cols", "odd width " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), m = x.dim(1), half = m / 2;
  Tensor<T> a(Shape{n, half}), b(Shape{n, half});
  auto xs = x.data();
  auto as = a.data_mut(), bs = b.data_mut();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < half; ++j) {
      as[i * half + j] = xs[i * m + j];
      bs[i * half + j] = xs[i * m + half + j];
    }
  record(a, {&x}, [x, n, m, half](Node<T>& o) mutable {
    auto g = x.grad_mut();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < half; ++j) g[i * m + j] += o.grad[i * half + j];
  });
  record(b, {&x}, [x, n, m, half](Node<T>& o) mutable {
    auto g = x.grad_mut();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < half; ++j) g[i * m + half + j] += o.grad[i * half + j];
  });
  return {a, b};
}

/// Stacks tensors along the leading axis.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_rows", "no inputs");
  Shape s = parts[0].shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    detail::require(ps.size() == s.size() && std::equal(ps.begin() + 1, ps.end(), s.begin() + 1),
                    "concat_rows", "trailing shapes differ " + shape_str(ps) + " vs " + shape_str(s));
    rows += ps[0];
  }
  s[0] = rows;
  Tensor<T> out(s);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data_mut().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  Tape<T>* tape = active_tape<T>();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape && any) {
    out.set_requires_grad(true);
    tape->record(out, [parts](Node<T>& o) mutable {
      std::size_t off = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto g = p.grad_mut();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[off + i];
        }
        off += p.size();
      }
    });
  }
  return out;
}

}  // namespace ifgmi
