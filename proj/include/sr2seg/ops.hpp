#pragma once

// Differentiable tensor ops recorded on a Tape. All feature maps are
// (channels, height, width); batch size is always one.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr2seg/tape.hpp"
#include "sr2seg/tensor.hpp"

namespace sr2seg {

struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;

  std::size_t conv_out(std::size_t in) const {
    if (in + 2 * padding < kernel) throw std::invalid_argument("convolution input smaller than kernel");
    return (in + 2 * padding - kernel) / stride + 1;
  }
  std::size_t deconv_out(std::size_t in) const {
    return (in - 1) * stride + kernel - 2 * padding;
  }
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Patch matrix of shape (C*k*k, out_h*out_w); zero padding.
template <class T>
void im2col(const T* img, std::size_t c, std::size_t h, std::size_t w, const ConvGeometry& g,
            std::size_t oh, std::size_t ow, T* col) {
  const auto k = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((ch * k + ky) * k + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          T* dst = row + oy * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + ow, T{0});
            continue;
          }
          const T* src = img + (ch * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T{0} : src[ix];
          }
        }
      }
}

// Adjoint of im2col: scatter-add patches back into the image.
template <class T>
void col2im(const T* col, std::size_t c, std::size_t h, std::size_t w, const ConvGeometry& g,
            std::size_t oh, std::size_t ow, T* img) {
  const auto k = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((ch * k + ky) * k + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = img + (ch * h + static_cast<std::size_t>(iy)) * w;
          const T* src = row + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[ox];
          }
        }
      }
}

inline bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

template <class T>
void require_rank3(const Tensor<T>& t, const char* what) {
  if (t.rank() != 3) throw std::invalid_argument(std::string(what) + ": expected a CxHxW feature map");
}

}  // namespace detail

/// 2-D convolution. weight: (out, in, k, k), optional bias: (out).
template <class T>
VarId conv2d(Tape<T>& tape, VarId x, VarId weight, std::optional<VarId> bias, ConvGeometry g) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(weight);
  detail::require_rank3(xv, "conv2d");
  if (wv.rank() != 4 || wv.dim(1) != xv.channels() || wv.dim(2) != g.kernel || wv.dim(3) != g.kernel)
    throw std::invalid_argument("conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " +
                                shape_str(xv.shape()));
  const std::size_t cin = xv.channels(), h = xv.height(), w = xv.width(), cout = wv.dim(0);
  const std::size_t oh = g.conv_out(h), ow = g.conv_out(w), kk = cin * g.kernel * g.kernel;

  std::vector<T> col_storage;
  const T* col = xv.data();
  if (!detail::is_pointwise(g)) {
    col_storage.resize(kk * oh * ow);
    detail::im2col(xv.data(), cin, h, w, g, oh, ow, col_storage.data());
    col = col_storage.data();
  }
  Tensor<T> out = Tensor<T>::chw(cout, oh, ow);
  detail::MapMat<T> Y(out.data(), cout, oh * ow);
  Y.noalias() = detail::CMapMat<T>(wv.data(), cout, kk) * detail::CMapMat<T>(col, kk, oh * ow);
  if (bias) {
    const Tensor<T>& bv = tape.value(*bias);
    for (std::size_t o = 0; o < cout; ++o) Y.row(o).array() += bv[o];
  }

  return tape.record(std::move(out), {x, weight, bias.value_or(weight)}, [=](Tape<T>& t, const Tensor<T>& gy) {
    const Tensor<T>& xin = t.value(x);
    const Tensor<T>& win = t.value(weight);
    detail::CMapMat<T> dY(gy.data(), cout, oh * ow);
    std::vector<T> cs;
    const T* c = xin.data();
    if (!detail::is_pointwise(g)) {
      cs.resize(kk * oh * ow);
      detail::im2col(xin.data(), cin, h, w, g, oh, ow, cs.data());
      c = cs.data();
    }
    if (Tensor<T>* gw = t.grad_buffer(weight))
      detail::MapMat<T>(gw->data(), cout, kk).noalias() += dY * detail::CMapMat<T>(c, kk, oh * ow).transpose();
    if (Tensor<T>* gb = bias ? t.grad_buffer(*bias) : nullptr)
      for (std::size_t o = 0; o < cout; ++o) (*gb)[o] += dY.row(o).sum();
    if (Tensor<T>* gx = t.grad_buffer(x)) {
      if (detail::is_pointwise(g)) {
        detail::MapMat<T>(gx->data(), cin, h * w).noalias() += detail::CMapMat<T>(win.data(), cout, kk).transpose() * dY;
      } else {
        std::vector<T> dcol(kk * oh * ow);
        detail::MapMat<T>(dcol.data(), kk, oh * ow).noalias() =
            detail::CMapMat<T>(win.data(), cout, kk).transpose() * dY;
        detail::col2im(dcol.data(), cin, h, w, g, oh, ow, gx->data());
      }
    }
  });
}

/// Transposed 2-D convolution (adjoint of conv2d's input map).
/// weight: (in, out, k, k), bias: (out). Output size (in-1)*stride - 2*pad + k.
template <class T>
VarId conv_transpose2d(Tape<T>& tape, VarId x, VarId weight, VarId bias, ConvGeometry g) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(weight);
  detail::require_rank3(xv, "conv_transpose2d");
  if (wv.rank() != 4 || wv.dim(0) != xv.channels() || wv.dim(2) != g.kernel || wv.dim(3) != g.kernel)
    throw std::invalid_argument("conv_transpose2d: weight " + shape_str(wv.shape()) +
                                " incompatible with input " + shape_str(xv.shape()));
  const std::size_t cin = xv.channels(), h = xv.height(), w = xv.width(), cout = wv.dim(1);
  const std::size_t oh = g.deconv_out(h), ow = g.deconv_out(w), kk = cout * g.kernel * g.kernel;
  if (g.conv_out(oh) != h || g.conv_out(ow) != w)
    throw std::invalid_argument("conv_transpose2d: geometry is not invertible for this input size");

  std::vector<T> col(kk * h * w);
  detail::MapMat<T>(col.data(), kk, h * w).noalias() =
      detail::CMapMat<T>(wv.data(), cin, kk).transpose() * detail::CMapMat<T>(xv.data(), cin, h * w);
  Tensor<T> out = Tensor<T>::chw(cout, oh, ow);
  detail::col2im(col.data(), cout, oh, ow, g, h, w, out.data());
  const Tensor<T>& bv = tape.value(bias);
  for (std::size_t o = 0; o < cout; ++o) {
    T* p = out.data() + o * oh * ow;
    for (std::size_t i = 0; i < oh * ow; ++i) p[i] += bv[o];
  }

  return tape.record(std::move(out), {x, weight, bias}, [=](Tape<T>& t, const Tensor<T>& gy) {
    std::vector<T> dcol(kk * h * w);
    detail::im2col(gy.data(), cout, oh, ow, g, h, w, dcol.data());
    detail::CMapMat<T> D(dcol.data(), kk, h * w);
    if (Tensor<T>* gw = t.grad_buffer(weight))
      detail::MapMat<T>(gw->data(), cin, kk).noalias() +=
          detail::CMapMat<T>(t.value(x).data(), cin, h * w) * D.transpose();
    if (Tensor<T>* gb = t.grad_buffer(bias))
      for (std::size_t o = 0; o < cout; ++o) {
        T s{0};
        const T* p = gy.data() + o * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) s += p[i];
        (*gb)[o] += s;
      }
    if (Tensor<T>* gx = t.grad_buffer(x))
      detail::MapMat<T>(gx->data(), cin, h * w).noalias() += detail::CMapMat<T>(t.value(weight).data(), cin, kk) * D;
  });
}

/// Parametric ReLU with a single shared slope.
template <class T>
VarId prelu(Tape<T>& tape, VarId x, VarId slope) {
  const Tensor<T>& xv = tape.value(x);
  const T a = tape.value(slope).item();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] > T{0} ? xv[i] : a * xv[i];
  return tape.record(std::move(out), {x, slope}, [=](Tape<T>& t, const Tensor<T>& gy) {
    const Tensor<T>& xin = t.value(x);
    const T av = t.value(slope).item();
    if (Tensor<T>* gx = t.grad_buffer(x))
      for (std::size_t i = 0; i < xin.numel(); ++i) (*gx)[i] += xin[i] > T{0} ? gy[i] : av * gy[i];
    if (Tensor<T>* ga = t.grad_buffer(slope)) {
      T s{0};
      for (std::size_t i = 0; i < xin.numel(); ++i)
        if (!(xin[i] > T{0})) s += xin[i] * gy[i];
      (*ga)[0] += s;
    }
  });
}

template <class T>
VarId relu(Tape<T>& tape, VarId x) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] > T{0} ? xv[i] : T{0};
  return tape.record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    const Tensor<T>& xin = t.value(x);
    if (Tensor<T>* gx = t.grad_buffer(x))
      for (std::size_t i = 0; i < xin.numel(); ++i)
        if (xin[i] > T{0}) (*gx)[i] += gy[i];
  });
}

template <class T>
VarId add(Tape<T>& tape, VarId a, VarId b) {
  const Tensor<T>& av = tape.value(a);
  av.require_same_shape(tape.value(b), "add");
  Tensor<T> out = av;
  out += tape.value(b);
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& gy) {
    t.accumulate(a, gy);
    t.accumulate(b, gy);
  });
}

template <class T>
VarId sub(Tape<T>& tape, VarId a, VarId b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  av.require_same_shape(bv, "sub");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& gy) {
    t.accumulate(a, gy);
    if (Tensor<T>* gb = t.grad_buffer(b))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gb)[i] -= gy[i];
  });
}

/// y = c * x for a fixed scalar c.
template <class T>
VarId scale(Tape<T>& tape, VarId x, T c) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = c * xv[i];
  return tape.record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    if (Tensor<T>* gx = t.grad_buffer(x))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gx)[i] += c * gy[i];
  });
}

/// Channel concatenation, first input first.
template <class T>
VarId concat(Tape<T>& tape, VarId a, VarId b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  detail::require_rank3(av, "concat");
  detail::require_rank3(bv, "concat");
  if (av.height() != bv.height() || av.width() != bv.width())
    throw std::invalid_argument("concat: spatial size mismatch");
  Tensor<T> out = Tensor<T>::chw(av.channels() + bv.channels(), av.height(), av.width());
  std::copy(av.vec().begin(), av.vec().end(), out.vec().begin());
  std::copy(bv.vec().begin(), bv.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(av.numel()));
  const std::size_t na = av.numel(), nb = bv.numel();
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& gy) {
    if (Tensor<T>* ga = t.grad_buffer(a))
      for (std::size_t i = 0; i < na; ++i) (*ga)[i] += gy[i];
    if (Tensor<T>* gb = t.grad_buffer(b))
      for (std::size_t i = 0; i < nb; ++i) (*gb)[i] += gy[na + i];
  });
}

/// Per-channel normalization over the spatial extent of a single sample,
/// followed by a learned affine map. gamma, beta: (channels).
template <class T>
VarId channel_norm(Tape<T>& tape, VarId x, VarId gamma, VarId beta, T eps = T(1e-5)) {
  const Tensor<T>& xv = tape.value(x);
  detail::require_rank3(xv, "channel_norm");
  const std::size_t c = xv.channels(), n = xv.plane();
  const Tensor<T>& gv = tape.value(gamma);
  const Tensor<T>& bv = tape.value(beta);
  Tensor<T> xhat(xv.shape());
  std::vector<T> inv_std(c);
  Tensor<T> out(xv.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* p = xv.data() + ch * n;
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += p[i];
    mean /= static_cast<double>(n);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<double>(n);
    inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    for (std::size_t i = 0; i < n; ++i) {
      const T xh = static_cast<T>(p[i] - mean) * inv_std[ch];
      xhat[ch * n + i] = xh;
      out[ch * n + i] = gv[ch] * xh + bv[ch];
    }
  }
  return tape.record(std::move(out), {x, gamma, beta},
                     [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, const Tensor<T>& gy) {
    const Tensor<T>& gam = t.value(gamma);
    Tensor<T>* gx = t.grad_buffer(x);
    Tensor<T>* gg = t.grad_buffer(gamma);
    Tensor<T>* gbeta = t.grad_buffer(beta);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* g = gy.data() + ch * n;
      const T* xh = xhat.data() + ch * n;
      T sum_g{0}, sum_gxh{0};
      for (std::size_t i = 0; i < n; ++i) {
        sum_g += g[i];
        sum_gxh += g[i] * xh[i];
      }
      if (gg) (*gg)[ch] += sum_gxh;
      if (gbeta) (*gbeta)[ch] += sum_g;
      if (gx) {
        const T k = gam[ch] * inv_std[ch] / static_cast<T>(n);
        const T nn = static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) (*gx)[ch * n + i] += k * (nn * g[i] - sum_g - xh[i] * sum_gxh);
      }
    }
  });
}

/// Clamp to [lo, hi] in the forward pass; straight-through gradient. Outside
/// the range only the component that a descent step would use to move the
/// value back inside is passed; pushing a saturated value further out changes
/// nothing downstream and would only let the input drift.
template <class T>
VarId clamp_straight_through(Tape<T>& tape, VarId x, T lo, T hi) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(xv[i], lo, hi);
  return tape.record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    Tensor<T>* gx = t.grad_buffer(x);
    if (!gx) return;
    const Tensor<T>& v = t.value(x);
    for (std::size_t i = 0; i < gy.numel(); ++i) {
      const T g = gy[i];
      if ((v[i] > hi && g < T{0}) || (v[i] < lo && g > T{0})) continue;
      (*gx)[i] += g;
    }
  });
}

// ---------------------------------------------------------------------------
// Max pooling with recorded indices

/// Per-channel flat argmax positions (y * width + x in the unpooled plane).
struct PoolIndices {
  std::size_t channels = 0;
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  std::vector<std::uint32_t> argmax;  // channels * (in_height/2) * (in_width/2)

  std::size_t out_height() const { return in_height / 2; }
  std::size_t out_width() const { return in_width / 2; }
};

/// 2x2 / stride-2 max pooling. Ties go to the first element in row-major
/// window order.
template <class T>
std::pair<Tensor<T>, PoolIndices> max_pool_with_indices(const Tensor<T>& x) {
  detail::require_rank3(x, "max_pool_with_indices");
  const std::size_t c = x.channels(), h = x.height(), w = x.width();
  if (h % 2 || w % 2) throw std::invalid_argument("max_pool_with_indices: odd spatial size " + shape_str(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out = Tensor<T>::chw(c, oh, ow);
  PoolIndices idx{c, h, w, std::vector<std::uint32_t>(c * oh * ow)};
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        T best_v = x[ch * h * w + best];
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t pos = (2 * oy + dy) * w + 2 * ox + dx;
            if (x[ch * h * w + pos] > best_v) {
              best_v = x[ch * h * w + pos];
              best = pos;
            }
          }
        out[(ch * oh + oy) * ow + ox] = best_v;
        idx.argmax[(ch * oh + oy) * ow + ox] = static_cast<std::uint32_t>(best);
      }
  return {std::move(out), std::move(idx)};
}

/// Places each pooled value at its recorded position; zeros elsewhere.
template <class T>
Tensor<T> max_unpool(const Tensor<T>& x, const PoolIndices& idx) {
  detail::require_rank3(x, "max_unpool");
  if (x.channels() != idx.channels || x.height() != idx.out_height() || x.width() != idx.out_width() ||
      idx.argmax.size() != x.numel())
    throw std::invalid_argument("max_unpool: indices recorded for " +
                                shape_str({idx.channels, idx.out_height(), idx.out_width()}) +
                                ", input is " + shape_str(x.shape()));
  const std::size_t plane = idx.in_height * idx.in_width, pooled = x.plane();
  Tensor<T> out = Tensor<T>::chw(idx.channels, idx.in_height, idx.in_width);
  for (std::size_t ch = 0; ch < idx.channels; ++ch)
    for (std::size_t i = 0; i < pooled; ++i) {
      const std::uint32_t pos = idx.argmax[ch * pooled + i];
      if (pos >= plane) throw std::invalid_argument("max_unpool: index outside the unpooled plane");
      out[ch * plane + pos] = x[ch * pooled + i];
    }
  return out;
}

template <class T>
std::pair<VarId, PoolIndices> max_pool(Tape<T>& tape, VarId x) {
  auto [out, idx] = max_pool_with_indices(tape.value(x));
  VarId y = tape.record(std::move(out), {x}, [x, idx](Tape<T>& t, const Tensor<T>& gy) {
    Tensor<T>* gx = t.grad_buffer(x);
    if (!gx) return;
    const std::size_t plane = idx.in_height * idx.in_width, pooled = gy.plane();
    for (std::size_t ch = 0; ch < idx.channels; ++ch)
      for (std::size_t i = 0; i < pooled; ++i) (*gx)[ch * plane + idx.argmax[ch * pooled + i]] += gy[ch * pooled + i];
  });
  return {y, std::move(idx)};
}

template <class T>
VarId max_unpool(Tape<T>& tape, VarId x, const PoolIndices& idx) {
  Tensor<T> out = max_unpool(tape.value(x), idx);
  return tape.record(std::move(out), {x}, [x, idx](Tape<T>& t, const Tensor<T>& gy) {
    Tensor<T>* gx = t.grad_buffer(x);
    if (!gx) return;
    const std::size_t plane = idx.in_height * idx.in_width, pooled = gx->plane();
    for (std::size_t ch = 0; ch < idx.channels; ++ch)
      for (std::size_t i = 0; i < pooled; ++i) (*gx)[ch * pooled + i] += gy[ch * plane + idx.argmax[ch * pooled + i]];
  });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean absolute error over all elements.
template <class T>
VarId l1_loss(Tape<T>& tape, VarId pred, VarId target) {
  const Tensor<T>& p = tape.value(pred);
  const Tensor<T>& q = tape.value(target);
  p.require_same_shape(q, "l1_loss");
  if (p.numel() == 0) throw std::invalid_argument("l1_loss: empty tensors");
  double s = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) s += std::abs(static_cast<double>(p[i]) - static_cast<double>(q[i]));
  const std::size_t n = p.numel();
  return tape.record(Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(n))), {pred, target},
                     [=](Tape<T>& t, const Tensor<T>& gy) {
    const Tensor<T>& pv = t.value(pred);
    const Tensor<T>& qv = t.value(target);
    const T k = gy[0] / static_cast<T>(n);
    Tensor<T>* gp = t.grad_buffer(pred);
    Tensor<T>* gq = t.grad_buffer(target);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = pv[i] - qv[i];
      const T sgn = d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0});
      if (gp) (*gp)[i] += k * sgn;
      if (gq) (*gq)[i] -= k * sgn;
    }
  });
}

/// Per-pixel softmax over the channel axis of a KxHxW score map.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& scores) {
  detail::require_rank3(scores, "softmax_channels");
  const std::size_t k = scores.channels(), n = scores.plane();
  Tensor<T> p(scores.shape());
  for (std::size_t i = 0; i < n; ++i) {
    T m = scores[i];
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, scores[c * n + i]);
    T z{0};
    for (std::size_t c = 0; c < k; ++c) z += (p[c * n + i] = std::exp(scores[c * n + i] - m));
    for (std::size_t c = 0; c < k; ++c) p[c * n + i] /= z;
  }
  return p;
}

/// Pixelwise cross-entropy: mean of -log softmax(true class) over pixels whose
/// label is not ignored. With class weights the mean is weighted by the true
/// class weight. Throws if every pixel is ignored.
template <class T>
VarId cross_entropy(Tape<T>& tape, VarId scores, const std::vector<std::int32_t>& labels,
                    const std::set<std::int32_t>& ignore_ids, const std::vector<double>& class_weights = {}) {
  const Tensor<T>& s = tape.value(scores);
  detail::require_rank3(s, "cross_entropy");
  const std::size_t k = s.channels(), n = s.plane();
  if (labels.size() != n)
    throw std::invalid_argument("cross_entropy: label map has " + std::to_string(labels.size()) +
                                " pixels, scores have " + std::to_string(n));
  if (!class_weights.empty() && class_weights.size() != k)
    throw std::invalid_argument("cross_entropy: class weight count differs from class count");
  Tensor<T> prob = softmax_channels(s);
  std::vector<T> pix_w(n, T{0});
  double loss = 0, wsum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t y = labels[i];
    if (ignore_ids.count(y)) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " outside [0, K)");
    const double wy = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)];
    double m = s[i];
    for (std::size_t c = 1; c < k; ++c) m = std::max<double>(m, s[c * n + i]);
    double z = 0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(static_cast<double>(s[c * n + i]) - m);
    loss += wy * (std::log(z) + m - static_cast<double>(s[static_cast<std::size_t>(y) * n + i]));
    wsum += wy;
    pix_w[i] = static_cast<T>(wy);
  }
  if (wsum <= 0) throw std::invalid_argument("cross_entropy: every pixel is ignored");
  const T inv = static_cast<T>(1.0 / wsum);
  return tape.record(Tensor<T>::scalar(static_cast<T>(loss / wsum)), {scores},
                     [=, prob = std::move(prob), pix_w = std::move(pix_w)](Tape<T>& t, const Tensor<T>& gy) {
    Tensor<T>* gs = t.grad_buffer(scores);
    if (!gs) return;
    for (std::size_t i = 0; i < n; ++i) {
      if (pix_w[i] == T{0}) continue;
      const T kf = gy[0] * pix_w[i] * inv;
      const auto y = static_cast<std::size_t>(labels[i]);
      for (std::size_t c = 0; c < k; ++c) (*gs)[c * n + i] += kf * (prob[c * n + i] - (c == y ? T{1} : T{0}));
    }
  });
}

/// a * x + b * y for scalars x, y.
template <class T>
VarId weighted_sum(Tape<T>& tape, VarId x, T a, VarId y, T b) {
  const T v = a * tape.value(x).item() + b * tape.value(y).item();
  return tape.record(Tensor<T>::scalar(v), {x, y}, [=](Tape<T>& t, const Tensor<T>& gy) {
    if (Tensor<T>* gx = t.grad_buffer(x)) (*gx)[0] += a * gy[0];
    if (Tensor<T>* gyv = t.grad_buffer(y)) (*gyv)[0] += b * gy[0];
  });
}

}  // namespace sr2seg
