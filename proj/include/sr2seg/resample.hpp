#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sr2seg/image.hpp"

namespace sr2seg {

/// Degradation recipe for building LR inputs from HR crops.
struct DegradationSpec {
  int factor = 4;
  double cubic_a = -0.5;  // Catmull-Rom
  bool antialias = true;
};

/// Keys cubic convolution kernel with parameter a.
inline double cubic_kernel(double x, double a = -0.5) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace detail {

struct AxisTaps {
  std::vector<std::size_t> first;  // per output sample: offset into index/weight
  std::vector<std::size_t> count;
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

// Pixel-center aligned taps; when shrinking with antialias the kernel is
// stretched by the scale factor. Out-of-range taps replicate the edge.
inline AxisTaps axis_taps(std::size_t n_in, std::size_t n_out, double a, bool antialias) {
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  const double stretch = (antialias && scale > 1.0) ? scale : 1.0;
  const double support = 2.0 * stretch;
  AxisTaps taps;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double center = (static_cast<double>(i) + 0.5) * scale - 0.5;
    const auto lo = static_cast<long>(std::floor(center - support));
    const auto hi = static_cast<long>(std::ceil(center + support));
    taps.first.push_back(taps.index.size());
    const std::size_t start = taps.weight.size();
    double total = 0;
    for (long j = lo; j <= hi; ++j) {
      const double wgt = cubic_kernel((static_cast<double>(j) - center) / stretch, a);
      if (wgt == 0.0) continue;
      const long clamped = std::clamp<long>(j, 0, static_cast<long>(n_in) - 1);
      taps.index.push_back(static_cast<std::size_t>(clamped));
      taps.weight.push_back(wgt);
      total += wgt;
    }
    for (std::size_t t = start; t < taps.weight.size(); ++t) taps.weight[t] /= total;
    taps.count.push_back(taps.weight.size() - start);
  }
  return taps;
}

}  // namespace detail

/// Separable bicubic resampling to (out_h, out_w), without clamping. Linear
/// in the input intensities.
inline Tensor<double> resample_linear(const Tensor<double>& img, std::size_t out_h, std::size_t out_w,
                                      double a = -0.5, bool antialias = true) {
  if (img.rank() != 3) throw std::invalid_argument("resample: expected CxHxW");
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("resample: empty output size");
  const std::size_t c = img.channels(), h = img.height(), w = img.width();
  const auto tx = detail::axis_taps(w, out_w, a, antialias);
  const auto ty = detail::axis_taps(h, out_h, a, antialias);
  Tensor<double> horiz = Tensor<double>::chw(c, h, out_w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        double s = 0;
        for (std::size_t t = 0; t < tx.count[x]; ++t) s += tx.weight[tx.first[x] + t] * img.at(ch, y, tx.index[tx.first[x] + t]);
        horiz.at(ch, y, x) = s;
      }
  Tensor<double> out = Tensor<double>::chw(c, out_h, out_w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        double s = 0;
        for (std::size_t t = 0; t < ty.count[y]; ++t) s += ty.weight[ty.first[y] + t] * horiz.at(ch, ty.index[ty.first[y] + t], x);
        out.at(ch, y, x) = s;
      }
  return out;
}

inline RasterImage clamp_to_raster(Tensor<double> t) {
  for (auto& v : t.vec()) v = std::clamp(v, 0.0, 255.0);
  return RasterImage(std::move(t));
}

inline void check_degradation(const DegradationSpec& spec) {
  if (spec.factor < 1) throw std::invalid_argument("degradation factor must be >= 1");
}

/// Pre-clamp bicubic downsampling by spec.factor.
inline Tensor<double> bicubic_downsample_linear(const Tensor<double>& img, const DegradationSpec& spec) {
  check_degradation(spec);
  const auto r = static_cast<std::size_t>(spec.factor);
  if (img.height() % r || img.width() % r)
    throw std::invalid_argument("bicubic_downsample: factor " + std::to_string(r) + " does not divide " +
                                std::to_string(img.height()) + "x" + std::to_string(img.width()));
  return resample_linear(img, img.height() / r, img.width() / r, spec.cubic_a, spec.antialias);
}

inline RasterImage bicubic_downsample(const RasterImage& img, const DegradationSpec& spec) {
  return clamp_to_raster(bicubic_downsample_linear(img.tensor(), spec));
}

/// Bicubic interpolation back up to (out_h, out_w); used to feed LR data to
/// the segmentation network at HR geometry.
inline RasterImage bicubic_upsample(const RasterImage& img, std::size_t out_h, std::size_t out_w,
                                    double a = -0.5) {
  return clamp_to_raster(resample_linear(img.tensor(), out_h, out_w, a, false));
}

}  // namespace sr2seg
