#pragma once

// Convolution, padding, normalization and activation ops with hand-written
// backward passes. Convolutions lower to GEMM through im2col; the column
// buffer is rebuilt in the backward pass instead of being kept alive.

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <vector>

#include "autograd.hpp"

namespace ctmr {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T> using MapMat = Eigen::Map<RowMat<T>>;
template <typename T> using CMapMat = Eigen::Map<const RowMat<T>>;

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  require(in + 2 * pad >= k, "convolution kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

// col[(c*k + ki)*k + kj][oy*wo + ox] = x[c][oy*s + ki - p][ox*s + kj - p] (zero outside)
template <typename T>
void im2col(const T *x, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t s,
            std::size_t p, std::size_t Ho, std::size_t Wo, T *col) {
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(H), w = static_cast<std::ptrdiff_t>(W);
  for (std::size_t c = 0; c < C; ++c) {
    const T *xc = x + c * H * W;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T *dst = col + ((c * k + ki) * k + kj) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ki) - static_cast<std::ptrdiff_t>(p);
          T *row = dst + oy * Wo;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + Wo, T(0));
            continue;
          }
          const T *src = xc + iy * w;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kj) - static_cast<std::ptrdiff_t>(p);
            row[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters columns back, accumulating into x.
template <typename T>
void col2im(const T *col, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t s,
            std::size_t p, std::size_t Ho, std::size_t Wo, T *x) {
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(H), w = static_cast<std::ptrdiff_t>(W);
  for (std::size_t c = 0; c < C; ++c) {
    T *xc = x + c * H * W;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T *src = col + ((c * k + ki) * k + kj) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ki) - static_cast<std::ptrdiff_t>(p);
          if (iy < 0 || iy >= h) continue;
          T *dst = xc + iy * w;
          const T *row = src + oy * Wo;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kj) - static_cast<std::ptrdiff_t>(p);
            if (ix >= 0 && ix < w) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

} // namespace detail

/// 2-D cross-correlation with zero padding.
/// weight: O x C x k x k, bias: 1 x O x 1 x 1 (may be invalid for no bias).
template <typename T>
Var<T> conv2d(const Var<T> &x, const Var<T> &weight, const Var<T> &bias, std::size_t stride, std::size_t pad) {
  using namespace detail;
  const Shape xs = x.shape(), ws = weight.shape();
  require(ws.h == ws.w, "conv2d: non-square kernel");
  require(xs.c == ws.c, "conv2d: channel mismatch " + xs.str() + " vs weight " + ws.str());
  const std::size_t k = ws.h, O = ws.n, C = xs.c;
  const std::size_t Ho = conv_out(xs.h, k, stride, pad), Wo = conv_out(xs.w, k, stride, pad);
  const std::size_t rows = C * k * k, cols = Ho * Wo;

  Tensor<T> out(Shape{xs.n, O, Ho, Wo});
  {
    std::vector<T> fcol(rows * cols);
    CMapMat<T> fw(weight.value().data(), O, rows);
    for (std::size_t n = 0; n < xs.n; ++n) {
      im2col(x.value().plane(n, 0), C, xs.h, xs.w, k, stride, pad, Ho, Wo, fcol.data());
      MapMat<T> y(out.plane(n, 0), O, cols);
      y.noalias() = fw * CMapMat<T>(fcol.data(), rows, cols);
      if (bias.valid())
        for (std::size_t o = 0; o < O; ++o) y.row(o).array() += bias.value()[o];
    }
  }

  std::vector<std::shared_ptr<Node<T>>> ins{x.node(), weight.node()};
  if (bias.valid()) ins.push_back(bias.node());
  return make_op<T>(std::move(out), std::move(ins), [=](Node<T> &self) {
    auto &xn = *self.inputs[0];
    auto &wn = *self.inputs[1];
    const bool has_bias = self.inputs.size() > 2;
    std::vector<T> col(rows * cols), dcol;
    CMapMat<T> wm(wn.value.data(), O, rows);
    for (std::size_t n = 0; n < xs.n; ++n) {
      CMapMat<T> dy(self.grad.plane(n, 0), O, cols);
      if (has_bias && self.inputs[2]->requires_grad) {
        auto &db = self.inputs[2]->grad_buffer();
        // Fixed summation order: Eigen's vectorized sum depends on pointer
        // alignment, which would make resumed runs drift.
        for (std::size_t o = 0; o < O; ++o) {
          const T *g = self.grad.plane(n, 0) + o * cols;
          T acc = 0;
          for (std::size_t i = 0; i < cols; ++i) acc += g[i];
          db[o] += acc;
        }
      }
      if (wn.requires_grad) {
        im2col(xn.value.plane(n, 0), C, xs.h, xs.w, k, stride, pad, Ho, Wo, col.data());
        MapMat<T> dw(wn.grad_buffer().data(), O, rows);
        dw.noalias() += dy * CMapMat<T>(col.data(), rows, cols).transpose();
      }
      if (xn.requires_grad) {
        dcol.resize(rows * cols);
        MapMat<T>(dcol.data(), rows, cols).noalias() = wm.transpose() * dy;
        col2im(dcol.data(), C, xs.h, xs.w, k, stride, pad, Ho, Wo, xn.grad_buffer().plane(n, 0));
      }
    }
  });
}

/// Transposed convolution (fractionally strided), weight: Cin x Cout x k x k.
/// Output extent: (in - 1) * stride - 2 * pad + k + output_pad.
template <typename T>
Var<T> conv_transpose2d(const Var<T> &x, const Var<T> &weight, const Var<T> &bias, std::size_t stride,
                        std::size_t pad, std::size_t output_pad) {
  using namespace detail;
  const Shape xs = x.shape(), ws = weight.shape();
  require(ws.h == ws.w, "conv_transpose2d: non-square kernel");
  require(xs.c == ws.n, "conv_transpose2d: channel mismatch " + xs.str() + " vs weight " + ws.str());
  require(output_pad < stride, "conv_transpose2d: output padding must be below stride");
  const std::size_t k = ws.h, Cin = ws.n, Cout = ws.c;
  require((xs.h - 1) * stride + k + output_pad >= 2 * pad, "conv_transpose2d: padding too large");
  const std::size_t Ho = (xs.h - 1) * stride + k + output_pad - 2 * pad;
  const std::size_t Wo = (xs.w - 1) * stride + k + output_pad - 2 * pad;
  const std::size_t rows = Cout * k * k, cols = xs.h * xs.w;

  Tensor<T> out(Shape{xs.n, Cout, Ho, Wo});
  {
    std::vector<T> fcol(rows * cols);
    CMapMat<T> fw(weight.value().data(), Cin, rows);
    for (std::size_t n = 0; n < xs.n; ++n) {
      MapMat<T>(fcol.data(), rows, cols).noalias() =
          fw.transpose() * CMapMat<T>(x.value().plane(n, 0), Cin, cols);
      col2im(fcol.data(), Cout, Ho, Wo, k, stride, pad, xs.h, xs.w, out.plane(n, 0));
      if (bias.valid())
        for (std::size_t o = 0; o < Cout; ++o) {
          T *p = out.plane(n, o);
          for (std::size_t i = 0; i < Ho * Wo; ++i) p[i] += bias.value()[o];
        }
    }
  }

  std::vector<std::shared_ptr<Node<T>>> ins{x.node(), weight.node()};
  if (bias.valid()) ins.push_back(bias.node());
  return make_op<T>(std::move(out), std::move(ins), [=](Node<T> &self) {
    auto &xn = *self.inputs[0];
    auto &wn = *self.inputs[1];
    const bool has_bias = self.inputs.size() > 2;
    std::vector<T> dcol(rows * cols);
    CMapMat<T> wm(wn.value.data(), Cin, rows);
    for (std::size_t n = 0; n < xs.n; ++n) {
      if (has_bias && self.inputs[2]->requires_grad) {
        auto &db = self.inputs[2]->grad_buffer();
        for (std::size_t o = 0; o < Cout; ++o) {
          const T *g = self.grad.plane(n, o);
          T s = 0;
          for (std::size_t i = 0; i < Ho * Wo; ++i) s += g[i];
          db[o] += s;
        }
      }
      if (!wn.requires_grad && !xn.requires_grad) continue;
      im2col(self.grad.plane(n, 0), Cout, Ho, Wo, k, stride, pad, xs.h, xs.w, dcol.data());
      CMapMat<T> dc(dcol.data(), rows, cols);
      if (wn.requires_grad) {
        MapMat<T> dw(wn.grad_buffer().data(), Cin, rows);
        dw.noalias() += CMapMat<T>(xn.value.plane(n, 0), Cin, cols) * dc.transpose();
      }
      if (xn.requires_grad) {
        MapMat<T> dx(xn.grad_buffer().plane(n, 0), Cin, cols);
        dx.noalias() += wm * dc;
      }
    }
  });
}

namespace detail {
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= m) i = 2 * (m - 1) - i;
  return static_cast<std::size_t>(i);
}
} // namespace detail

/// Mirror padding without repeating the edge sample.
template <typename T> Var<T> reflect_pad2d(const Var<T> &x, std::size_t pad) {
  const Shape xs = x.shape();
  require(pad < xs.h && pad < xs.w, "reflect_pad2d: padding must be smaller than the input extent");
  const std::size_t Ho = xs.h + 2 * pad, Wo = xs.w + 2 * pad;
  std::vector<std::size_t> ry(Ho), rx(Wo);
  for (std::size_t i = 0; i < Ho; ++i)
    ry[i] = detail::reflect_index(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(pad), xs.h);
  for (std::size_t i = 0; i < Wo; ++i)
    rx[i] = detail::reflect_index(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(pad), xs.w);

  Tensor<T> out(Shape{xs.n, xs.c, Ho, Wo});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T *src = x.value().plane(n, c);
      T *dst = out.plane(n, c);
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) dst[i * Wo + j] = src[ry[i] * xs.w + rx[j]];
    }

  return make_op<T>(std::move(out), {x.node()}, [=](Node<T> &self) {
    auto &g = self.inputs[0]->grad_buffer();
    for (std::size_t n = 0; n < xs.n; ++n)
      for (std::size_t c = 0; c < xs.c; ++c) {
        const T *src = self.grad.plane(n, c);
        T *dst = g.plane(n, c);
        for (std::size_t i = 0; i < Ho; ++i)
          for (std::size_t j = 0; j < Wo; ++j) dst[ry[i] * xs.w + rx[j]] += src[i * Wo + j];
      }
  });
}

/// Per-sample, per-channel normalization with no learned affine and no
/// running statistics.
template <typename T> Var<T> instance_norm(const Var<T> &x, double eps = 1e-5) {
  const Shape xs = x.shape();
  const std::size_t planes = xs.n * xs.c, m = xs.plane();
  Tensor<T> out(xs);
  std::vector<T> inv_std(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    const T *src = x.value().data() + p * m;
    double mu = 0;
    for (std::size_t i = 0; i < m; ++i) mu += src[i];
    mu /= static_cast<double>(m);
    double var = 0;
    for (std::size_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[p] = static_cast<T>(is);
    T *dst = out.data() + p * m;
    for (std::size_t i = 0; i < m; ++i) dst[i] = static_cast<T>((src[i] - mu) * is);
  }

  // Output (normalized input) is read back from self.value in backward.
  return make_op<T>(std::move(out), {x.node()}, [=](Node<T> &self) {
    auto &g = self.inputs[0]->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      const T *dy = self.grad.data() + p * m;
      const T *y = self.value.data() + p * m;
      double mdy = 0, mdyy = 0;
      for (std::size_t i = 0; i < m; ++i) {
        mdy += dy[i];
        mdyy += static_cast<double>(dy[i]) * y[i];
      }
      mdy /= static_cast<double>(m);
      mdyy /= static_cast<double>(m);
      T *dx = g.data() + p * m;
      for (std::size_t i = 0; i < m; ++i)
        dx[i] += static_cast<T>(inv_std[p] * (dy[i] - mdy - y[i] * mdyy));
    }
  });
}

template <typename T> Var<T> relu(const Var<T> &x) {
  Tensor<T> out = x.value();
  for (auto &v : out.values()) v = v > T(0) ? v : T(0);
  return make_op<T>(std::move(out), {x.node()}, [](Node<T> &self) {
    auto &g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (self.value[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T> Var<T> leaky_relu(const Var<T> &x, T slope) {
  Tensor<T> out = x.value();
  for (auto &v : out.values()) v = v > T(0) ? v : slope * v;
  return make_op<T>(std::move(out), {x.node()}, [slope](Node<T> &self) {
    auto &g = self.inputs[0]->grad_buffer();
    const auto &xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += xv[i] > T(0) ? self.grad[i] : slope * self.grad[i];
  });
}

template <typename T> Var<T> tanh(const Var<T> &x) {
  Tensor<T> out = x.value();
  for (auto &v : out.values()) v = std::tanh(v);
  return make_op<T>(std::move(out), {x.node()}, [](Node<T> &self) {
    auto &g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (T(1) - self.value[i] * self.value[i]);
  });
}

} // namespace ctmr
