#pragma once

// Differentiable primitives over NCHW tensors.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "irismatch/random.hpp"
#include "irismatch/tensor.hpp"

namespace irismatch {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <class Forward, class Derivative>
Tensor elementwise(const Tensor& x, Forward f, Derivative df) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [xi, df](const TensorImpl& o) {
    auto gx = grad_sink(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * df(xi->data[i], o.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reductions

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result(a.shape(), std::move(out), {a, b}, [ai, bi](const detail::TensorImpl& o) {
    auto ga = detail::grad_sink(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
    auto gb = detail::grad_sink(bi);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result(a.shape(), std::move(out), {a, b}, [ai, bi](const detail::TensorImpl& o) {
    auto ga = detail::grad_sink(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * bi->data[i];
    auto gb = detail::grad_sink(bi);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i] * ai->data[i];
  });
}

inline Tensor scale(const Tensor& x, double factor) {
  return detail::elementwise(
      x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  auto xi = x.impl();
  return detail::make_result({1}, {total}, {x}, [xi](const detail::TensorImpl& o) {
    auto gx = detail::grad_sink(xi);
    for (double& g : gx) g += o.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  auto xi = x.impl();
  std::vector<double> values(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(values), {x}, [xi](const detail::TensorImpl& o) {
    auto gx = detail::grad_sink(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
  });
}

/// Exponential linear unit with alpha = 1.
inline Tensor elu(const Tensor& x) {
  return detail::elementwise(
      x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
      [](double v, double y) { return v > 0.0 ? 1.0 : y + 1.0; });
}

inline Tensor relu(const Tensor& x) {
  return detail::elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::elementwise(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------------------
// Layout ops

/// Concatenates rank-4 tensors along the channel axis.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: nothing to concatenate");
  const Shape& first = parts.front().shape();
  if (first.size() != 4) throw ShapeError("concat_channels: expected rank-4 inputs");
  std::size_t channels = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
      throw ShapeError("concat_channels: incompatible " + shape_string(s) + " vs " +
                       shape_string(first));
    }
    channels += s[1];
  }
  const std::size_t batch = first[0], plane = first[2] * first[3];
  std::vector<double> out(batch * channels * plane);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t c = p.dim(1);
    const auto src = p.data();
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(b * c * plane), c * plane,
                  out.begin() + static_cast<std::ptrdiff_t>((b * channels + offset) * plane));
    }
    offset += c;
  }
  std::vector<std::shared_ptr<detail::TensorImpl>> impls;
  for (const Tensor& p : parts) impls.push_back(p.impl());
  return detail::make_result(
      {batch, channels, first[2], first[3]}, std::move(out), parts,
      [impls, offsets, batch, channels, plane](const detail::TensorImpl& o) {
        for (std::size_t k = 0; k < impls.size(); ++k) {
          auto g = detail::grad_sink(impls[k]);
          if (g.empty()) continue;
          const std::size_t c = impls[k]->shape[1];
          for (std::size_t b = 0; b < batch; ++b) {
            const double* src = o.grad.data() + (b * channels + offsets[k]) * plane;
            double* dst = g.data() + b * c * plane;
            for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
          }
        }
      });
}

/// Selects batch entries by index (repeats allowed).
inline Tensor gather_batch(const Tensor& x, const std::vector<std::size_t>& indices) {
  if (x.rank() < 1) throw ShapeError("gather_batch: rank-0 input");
  const std::size_t rows = x.dim(0), stride = x.numel() / std::max<std::size_t>(rows, 1);
  for (std::size_t idx : indices) {
    if (idx >= rows) throw ShapeError("gather_batch: index out of range");
  }
  Shape shape = x.shape();
  shape[0] = indices.size();
  std::vector<double> out(indices.size() * stride);
  const auto src = x.data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[k] * stride), stride,
                out.begin() + static_cast<std::ptrdiff_t>(k * stride));
  }
  auto xi = x.impl();
  return detail::make_result(std::move(shape), std::move(out), {x},
                             [xi, indices, stride](const detail::TensorImpl& o) {
                               auto g = detail::grad_sink(xi);
                               for (std::size_t k = 0; k < indices.size(); ++k) {
                                 for (std::size_t i = 0; i < stride; ++i) {
                                   g[indices[k] * stride + i] += o.grad[k * stride + i];
                                 }
                               }
                             });
}

/// Mean over the spatial axes: [B,C,H,W] -> [B,C].
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank(x, 4, "global_avg_pool");
  const std::size_t bc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<double> out(bc, 0.0);
  const auto in = x.data();
  for (std::size_t k = 0; k < bc; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += in[k * plane + i];
    out[k] = s / static_cast<double>(plane);
  }
  auto xi = x.impl();
  return detail::make_result({x.dim(0), x.dim(1)}, std::move(out), {x},
                             [xi, bc, plane](const detail::TensorImpl& o) {
                               auto g = detail::grad_sink(xi);
                               const double inv = 1.0 / static_cast<double>(plane);
                               for (std::size_t k = 0; k < bc; ++k) {
                                 for (std::size_t i = 0; i < plane; ++i) g[k * plane + i] += o.grad[k] * inv;
                               }
                             });
}

// ---------------------------------------------------------------------------
// Convolution

/// Circular horizontal padding with zero vertical padding for polar images.
/// With h = floor(kw/2), the h rightmost columns are prepended and the h
/// leftmost columns appended; floor(kh/2) zero rows go above and below.
inline Tensor wrap_pad(const Tensor& x, std::size_t kh, std::size_t kw) {
  detail::require_rank(x, 4, "wrap_pad");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t v = kh / 2, h = kw / 2;
  if (h > W) {
    throw ShapeError("wrap_pad: kernel width " + std::to_string(kw) + " wider than 2W+1 for W=" +
                     std::to_string(W));
  }
  const std::size_t Hp = H + 2 * v, Wp = W + 2 * h;
  std::vector<double> out(B * C * Hp * Wp, 0.0);
  const auto in = x.data();
  // Padded column p reads source column (p - h) mod W.
  std::vector<std::size_t> source(Wp);
  for (std::size_t p = 0; p < Wp; ++p) source[p] = (p + W - h % W) % W;
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    for (std::size_t r = 0; r < H; ++r) {
      const double* src = in.data() + (bc * H + r) * W;
      double* dst = out.data() + (bc * Hp + r + v) * Wp;
      for (std::size_t p = 0; p < Wp; ++p) dst[p] = src[source[p]];
    }
  }
  auto xi = x.impl();
  return detail::make_result(
      {B, C, Hp, Wp}, std::move(out), {x},
      [xi, source, B, C, H, W, Hp, Wp, v](const detail::TensorImpl& o) {
        auto g = detail::grad_sink(xi);
        for (std::size_t bc = 0; bc < B * C; ++bc) {
          for (std::size_t r = 0; r < H; ++r) {
            const double* src = o.grad.data() + (bc * Hp + r + v) * Wp;
            double* dst = g.data() + (bc * H + r) * W;
            for (std::size_t p = 0; p < Wp; ++p) dst[source[p]] += src[p];
          }
        }
      });
}

struct PaddingSpec {
  enum class Mode { none, zero, wrap };
  Mode mode = Mode::none;
  std::size_t vertical = 0;
  std::size_t horizontal = 0;

  static PaddingSpec none() { return {}; }
  static PaddingSpec zero(std::size_t vertical, std::size_t horizontal) {
    return {Mode::zero, vertical, horizontal};
  }
  /// Zero padding that keeps the spatial size for odd kernels at stride 1.
  static PaddingSpec same(std::size_t kh, std::size_t kw) { return zero(kh / 2, kw / 2); }
  /// Horizontal wrap, vertical zero; keeps the spatial size at stride 1.
  static PaddingSpec wrap(std::size_t kh, std::size_t kw) { return {Mode::wrap, kh / 2, kw / 2}; }
};

struct Stride {
  std::size_t rows = 1;
  std::size_t cols = 1;
};

namespace detail {

// Fixed summation order. Eigen's vectorized reductions peel by pointer
// alignment, which makes results depend on where buffers were allocated.
inline double ordered_dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline double ordered_sum(const double* a, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i];
    s1 += a[i + 1];
    s2 += a[i + 2];
    s3 += a[i + 3];
  }
  for (; i < n; ++i) s0 += a[i];
  return (s0 + s1) + (s2 + s3);
}

struct ConvGeometry {
  std::size_t C, H, W, kh, kw, sh, sw, pt, pl, Ho, Wo;
  std::size_t patch() const { return C * kh * kw; }
  std::size_t positions() const { return Ho * Wo; }
};

inline void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((c * g.kh + ki) * g.kw + kj) * P;
        for (std::size_t oh = 0; oh < g.Ho; ++oh) {
          const long ih = static_cast<long>(oh * g.sh + ki) - static_cast<long>(g.pt);
          double* dst = row + oh * g.Wo;
          if (ih < 0 || ih >= static_cast<long>(g.H)) {
            std::fill_n(dst, g.Wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.H + static_cast<std::size_t>(ih)) * g.W;
          for (std::size_t ow = 0; ow < g.Wo; ++ow) {
            const long iw = static_cast<long>(ow * g.sw + kj) - static_cast<long>(g.pl);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.W)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

inline void col2im_add(const double* col, const ConvGeometry& g, double* x) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * P;
        for (std::size_t oh = 0; oh < g.Ho; ++oh) {
          const long ih = static_cast<long>(oh * g.sh + ki) - static_cast<long>(g.pt);
          if (ih < 0 || ih >= static_cast<long>(g.H)) continue;
          double* dst = x + (c * g.H + static_cast<std::size_t>(ih)) * g.W;
          const double* src = row + oh * g.Wo;
          for (std::size_t ow = 0; ow < g.Wo; ++ow) {
            const long iw = static_cast<long>(ow * g.sw + kj) - static_cast<long>(g.pl);
            if (iw >= 0 && iw < static_cast<long>(g.W)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// Single input channel, stride 1, no padding: few output channels make
// im2col + GEMM memory bound, so accumulate shifted rows directly.
inline Tensor conv2d_single_channel(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const std::size_t B = input.dim(0), H = input.dim(2), W = input.dim(3);
  const std::size_t Co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t Ho = H - kh + 1, Wo = W - kw + 1;
  std::vector<double> out(B * Co * Ho * Wo, 0.0);
  const double* x = input.data().data();
  const double* w = weight.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Co; ++co) {
      double* o = out.data() + (b * Co + co) * Ho * Wo;
      if (bias.defined()) std::fill_n(o, Ho * Wo, bias.data()[co]);
      for (std::size_t oh = 0; oh < Ho; ++oh) {
        double* orow = o + oh * Wo;
        for (std::size_t ki = 0; ki < kh; ++ki) {
          const double* xrow = x + (b * H + oh + ki) * W;
          const double* wrow = w + (co * kh + ki) * kw;
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const double wv = wrow[kj];
            const double* xs = xrow + kj;
            for (std::size_t ow = 0; ow < Wo; ++ow) orow[ow] += wv * xs[ow];
          }
        }
      }
    }
  }
  auto xi = input.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return make_result(
      {B, Co, Ho, Wo}, std::move(out), {input, weight, bias},
      [xi, wi, bi, B, Co, H, W, kh, kw, Ho, Wo](const TensorImpl& o) {
        auto gx = grad_sink(xi);
        auto gw = grad_sink(wi);
        auto gb = grad_sink(bi);
        const double* x = xi->data.data();
        const double* w = wi->data.data();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t co = 0; co < Co; ++co) {
            const double* d = o.grad.data() + (b * Co + co) * Ho * Wo;
            if (!gb.empty()) {
              double s = 0.0;
              for (std::size_t i = 0; i < Ho * Wo; ++i) s += d[i];
              gb[co] += s;
            }
            for (std::size_t oh = 0; oh < Ho; ++oh) {
              const double* drow = d + oh * Wo;
              for (std::size_t ki = 0; ki < kh; ++ki) {
                const std::size_t xoff = (b * H + oh + ki) * W;
                for (std::size_t kj = 0; kj < kw; ++kj) {
                  const std::size_t widx = (co * kh + ki) * kw + kj;
                  if (!gw.empty()) {
                    gw[widx] += ordered_dot(x + xoff + kj, drow, Wo);
                  }
                  if (!gx.empty()) {
                    const double wv = w[widx];
                    double* gs = gx.data() + xoff + kj;
                    for (std::size_t ow = 0; ow < Wo; ++ow) gs[ow] += wv * drow[ow];
                  }
                }
              }
            }
          }
        }
      });
}

inline Tensor conv2d_unpadded_or_zero(const Tensor& input, const Tensor& weight, const Tensor& bias,
                                      Stride stride, std::size_t pad_v, std::size_t pad_h) {
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t Hp = H + 2 * pad_v, Wp = W + 2 * pad_h;
  if (kh > Hp || kw > Wp) {
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " larger than padded input " + std::to_string(Hp) + "x" + std::to_string(Wp));
  }
  if (C == 1 && stride.rows == 1 && stride.cols == 1 && pad_v == 0 && pad_h == 0) {
    return conv2d_single_channel(input, weight, bias);
  }
  const ConvGeometry g{C,    H,    W,    kh,   kw, stride.rows, stride.cols, pad_v, pad_h,
                       (Hp - kh) / stride.rows + 1, (Wp - kw) / stride.cols + 1};
  const std::size_t K = g.patch(), P = g.positions();
  std::vector<double> out(B * Co * P);
  std::vector<double> col(K * P);
  const ConstMatrixMap Wm(weight.data().data(), static_cast<Eigen::Index>(Co), static_cast<Eigen::Index>(K));
  for (std::size_t b = 0; b < B; ++b) {
    im2col(input.data().data() + b * C * H * W, g, col.data());
    const ConstMatrixMap colm(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    MatrixMap om(out.data() + b * Co * P, static_cast<Eigen::Index>(Co), static_cast<Eigen::Index>(P));
    om.noalias() = Wm * colm;
    if (bias.defined()) {
      for (std::size_t co = 0; co < Co; ++co) om.row(static_cast<Eigen::Index>(co)).array() += bias.data()[co];
    }
  }
  auto xi = input.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return make_result(
      {B, Co, g.Ho, g.Wo}, std::move(out), {input, weight, bias},
      [xi, wi, bi, g, B, Co](const TensorImpl& o) {
        const std::size_t K = g.patch(), P = g.positions();
        const std::size_t in_plane = g.C * g.H * g.W;
        auto gx = grad_sink(xi);
        auto gw = grad_sink(wi);
        auto gb = grad_sink(bi);
        const ConstMatrixMap Wm(wi->data.data(), static_cast<Eigen::Index>(Co), static_cast<Eigen::Index>(K));
        std::vector<double> col(K * P);
        RowMatrix dw = RowMatrix::Zero(static_cast<Eigen::Index>(Co), static_cast<Eigen::Index>(K));
        for (std::size_t b = 0; b < B; ++b) {
          const ConstMatrixMap dout(o.grad.data() + b * Co * P, static_cast<Eigen::Index>(Co),
                                    static_cast<Eigen::Index>(P));
          if (!gb.empty()) {
            for (std::size_t co = 0; co < Co; ++co) gb[co] += ordered_sum(o.grad.data() + (b * Co + co) * P, P);
          }
          if (!gw.empty()) {
            im2col(xi->data.data() + b * in_plane, g, col.data());
            const ConstMatrixMap colm(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
            dw.noalias() += dout * colm.transpose();
          }
          if (!gx.empty()) {
            MatrixMap dcol(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
            dcol.noalias() = Wm.transpose() * dout;
            col2im_add(col.data(), g, gx.data() + b * in_plane);
          }
        }
        if (!gw.empty()) {
          for (std::size_t i = 0; i < Co * K; ++i) gw[i] += dw.data()[i];
        }
      });
}

}  // namespace detail

/// 2-D cross-correlation. input [B,Cin,H,W], weight [Cout,Cin,kh,kw], optional
/// bias [Cout]. Output extent per axis is (padded - k) / stride + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = {},
                     Stride stride = {}, PaddingSpec padding = PaddingSpec::none()) {
  detail::require_rank(input, 4, "conv2d input");
  detail::require_rank(weight, 4, "conv2d weight");
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) +
                     " channels, weight expects " + std::to_string(weight.dim(1)));
  }
  if (weight.dim(2) % 2 == 0 || weight.dim(3) % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, got " + shape_string(weight.shape()));
  }
  if (stride.rows == 0 || stride.cols == 0) throw ShapeError("conv2d: stride must be positive");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    throw ShapeError("conv2d: bias shape " + shape_string(bias.shape()) + " does not match " +
                     std::to_string(weight.dim(0)) + " output channels");
  }
  switch (padding.mode) {
    case PaddingSpec::Mode::none:
      return detail::conv2d_unpadded_or_zero(input, weight, bias, stride, 0, 0);
    case PaddingSpec::Mode::zero:
      return detail::conv2d_unpadded_or_zero(input, weight, bias, stride, padding.vertical,
                                             padding.horizontal);
    case PaddingSpec::Mode::wrap:
      return detail::conv2d_unpadded_or_zero(
          wrap_pad(input, 2 * padding.vertical + 1, 2 * padding.horizontal + 1), weight, bias,
          stride, 0, 0);
  }
  throw ShapeError("conv2d: unknown padding mode");
}

// ---------------------------------------------------------------------------
// Normalization and regularization

inline constexpr double kUnitCircleEpsilon = 1e-12;

/// Projects each consecutive channel pair (2k, 2k+1) onto the unit circle per
/// pixel. Pixels whose pair norm is below kUnitCircleEpsilon map to (0, 0)
/// and pass no gradient.
inline Tensor unit_circle_normalize(const Tensor& x) {
  detail::require_rank(x, 4, "unit_circle_normalize");
  if (x.dim(1) % 2 != 0) throw ShapeError("unit_circle_normalize: channel count must be even");
  const std::size_t B = x.dim(0), pairs = x.dim(1) / 2, plane = x.dim(2) * x.dim(3);
  const auto in = x.data();
  std::vector<double> out(in.size());
  std::vector<double> norms(B * pairs * plane);
  for (std::size_t bp = 0; bp < B * pairs; ++bp) {
    const double* a = in.data() + 2 * bp * plane;
    const double* b = a + plane;
    double* oa = out.data() + 2 * bp * plane;
    double* ob = oa + plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const double n = std::hypot(a[i], b[i]);
      norms[bp * plane + i] = n;
      if (n < kUnitCircleEpsilon) {
        oa[i] = ob[i] = 0.0;
      } else {
        oa[i] = a[i] / n;
        ob[i] = b[i] / n;
      }
    }
  }
  auto xi = x.impl();
  return detail::make_result(
      x.shape(), std::move(out), {x}, [xi, norms = std::move(norms), B, pairs, plane](const detail::TensorImpl& o) {
        auto g = detail::grad_sink(xi);
        for (std::size_t bp = 0; bp < B * pairs; ++bp) {
          const std::size_t base = 2 * bp * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double n = norms[bp * plane + i];
            if (n < kUnitCircleEpsilon) continue;
            const double ua = o.data[base + i], ub = o.data[base + plane + i];
            const double ga = o.grad[base + i], gb = o.grad[base + plane + i];
            const double along = ua * ga + ub * gb;
            g[base + i] += (ga - ua * along) / n;
            g[base + plane + i] += (gb - ub * along) / n;
          }
        }
      });
}

/// Running statistics of a batch-normalization layer (not trainable).
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;

  explicit BatchNormStats(std::size_t channels = 0) : mean(channels, 0.0), var(channels, 1.0) {}
};

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel batch normalization over (batch, rows, cols). gamma/beta may be
/// undefined for the affine-free form. Train mode normalizes with batch
/// statistics and updates `stats`; eval mode uses `stats`.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                         bool train, BatchNormOptions options = {}) {
  detail::require_rank(x, 4, "batch_norm");
  const std::size_t B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (stats.mean.size() != C || stats.var.size() != C) {
    throw ShapeError("batch_norm: running statistics hold " + std::to_string(stats.mean.size()) +
                     " channels, input has " + std::to_string(C));
  }
  if ((gamma.defined() && gamma.numel() != C) || (beta.defined() && beta.numel() != C)) {
    throw ShapeError("batch_norm: affine parameters must have one value per channel");
  }
  const std::size_t count = B * plane;
  if (train && (B < 2 || count < 2)) {
    throw ShapeError("batch_norm: training mode needs a batch of at least 2");
  }
  const auto in = x.data();
  std::vector<double> xhat(in.size());
  std::vector<double> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    double mu, var;
    if (train) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < plane; ++i) s += in[(b * C + c) * plane + i];
      mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = in[(b * C + c) * plane + i] - mu;
          ss += d * d;
        }
      var = ss / static_cast<double>(count);
      stats.mean[c] = (1.0 - options.momentum) * stats.mean[c] + options.momentum * mu;
      stats.var[c] = (1.0 - options.momentum) * stats.var[c] +
                     options.momentum * var * static_cast<double>(count) / static_cast<double>(count - 1);
    } else {
      mu = stats.mean[c];
      var = stats.var[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + options.eps);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t k = (b * C + c) * plane + i;
        xhat[k] = (in[k] - mu) * inv_std[c];
      }
  }
  std::vector<double> out(in.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const double gm = gamma.defined() ? gamma.data()[c] : 1.0;
      const double bt = beta.defined() ? beta.data()[c] : 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t k = (b * C + c) * plane + i;
        out[k] = gm * xhat[k] + bt;
      }
    }
  auto xi = x.impl();
  auto gi = gamma.defined() ? gamma.impl() : nullptr;
  auto bi = beta.defined() ? beta.impl() : nullptr;
  return detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, plane, count,
       train](const detail::TensorImpl& o) {
        auto gx = detail::grad_sink(xi);
        auto gg = detail::grad_sink(gi);
        auto gbeta = detail::grad_sink(bi);
        for (std::size_t c = 0; c < C; ++c) {
          const double gm = gi ? gi->data[c] : 1.0;
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t k = (b * C + c) * plane + i;
              sum_dy += o.grad[k];
              sum_dy_xhat += o.grad[k] * xhat[k];
            }
          if (!gg.empty()) gg[c] += sum_dy_xhat;
          if (!gbeta.empty()) gbeta[c] += sum_dy;
          if (gx.empty()) continue;
          const double n = static_cast<double>(count);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t k = (b * C + c) * plane + i;
              if (train) {
                gx[k] += gm * inv_std[c] * (o.grad[k] - sum_dy / n - xhat[k] * sum_dy_xhat / n);
              } else {
                gx[k] += gm * inv_std[c] * o.grad[k];
              }
            }
        }
      });
}

/// Inverted dropout: kept activations are scaled by 1/(1-rate) in train mode;
/// eval mode and rate 0 return the input unchanged.
inline Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!train || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
  auto xi = x.impl();
  return detail::make_result(x.shape(), std::move(out), {x},
                             [xi, mask = std::move(mask)](const detail::TensorImpl& o) {
                               auto g = detail::grad_sink(xi);
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * mask[i];
                             });
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy of probabilities p against {0,1} targets y.
/// p is clamped to [eps, 1-eps]; the clamp passes no gradient where active.
inline Tensor bce_loss(const Tensor& p, const Tensor& y) {
  detail::require_same_shape(p, y, "bce_loss");
  const auto pv = p.data();
  const auto yv = y.data();
  const double n = static_cast<double>(pv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double q = std::clamp(pv[i], kBceEpsilon, 1.0 - kBceEpsilon);
    total -= yv[i] * std::log(q) + (1.0 - yv[i]) * std::log(1.0 - q);
  }
  auto pi = p.impl();
  auto yi = y.impl();
  return detail::make_result({1}, {total / n}, {p}, [pi, yi, n](const detail::TensorImpl& o) {
    auto g = detail::grad_sink(pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = pi->data[i];
      if (v < kBceEpsilon || v > 1.0 - kBceEpsilon) continue;
      const double t = yi->data[i];
      g[i] += o.grad[0] * (-t / v + (1.0 - t) / (1.0 - v)) / n;
    }
  });
}

}  // namespace irismatch
