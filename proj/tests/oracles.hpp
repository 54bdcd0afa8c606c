#pragma once

// Independent reference implementations used by the tests. They share no
// code with the library beyond the plain data types.

#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "sr2seg/tensor.hpp"

namespace sr2seg::oracle {

struct Metrics {
  double acc = 0, norm_acc = 0, miou = 0;
  std::optional<double> kappa;
};

/// Expands a confusion matrix into its (truth, pred) pixel list and counts
/// directly over pixels.
inline Metrics brute_force_metrics(const std::vector<std::uint64_t>& counts, std::size_t k) {
  std::vector<std::pair<std::size_t, std::size_t>> pixels;
  for (std::size_t t = 0; t < k; ++t)
    for (std::size_t p = 0; p < k; ++p)
      for (std::uint64_t i = 0; i < counts[t * k + p]; ++i) pixels.emplace_back(t, p);
  const double n = static_cast<double>(pixels.size());
  Metrics m;
  double hits = 0;
  for (const auto& [t, p] : pixels) hits += t == p;
  m.acc = hits / n;
  double recall_sum = 0, iou_sum = 0, pe = 0;
  int recall_n = 0, iou_n = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double in_truth = 0, in_pred = 0, both = 0, either = 0;
    for (const auto& [t, p] : pixels) {
      in_truth += t == c;
      in_pred += p == c;
      both += t == c && p == c;
      either += t == c || p == c;
    }
    if (in_truth > 0) {
      recall_sum += both / in_truth;
      ++recall_n;
    }
    if (either > 0) {
      iou_sum += both / either;
      ++iou_n;
    }
    pe += (in_truth / n) * (in_pred / n);
  }
  m.norm_acc = recall_sum / recall_n;
  m.miou = iou_sum / iou_n;
  if (pe != 1.0) m.kappa = (m.acc - pe) / (1.0 - pe);
  return m;
}

inline double keys_cubic(double x, double a) {
  const double ax = std::fabs(x);
  if (ax < 1) return (a + 2) * ax * ax * ax - (a + 3) * ax * ax + 1;
  if (ax < 2) return a * ax * ax * ax - 5 * a * ax * ax + 8 * a * ax - 4 * a;
  return 0;
}

/// Dense 2D kernel convolution for a downscale by integer factor r: every
/// output pixel is a normalized weighted sum over a window of virtual input
/// positions, with out-of-image positions replicated from the nearest edge.
inline Tensor<double> bicubic_downsample_dense(const Tensor<double>& img, std::size_t r, double a = -0.5) {
  const std::size_t c = img.channels(), h = img.height(), w = img.width();
  const std::size_t oh = h / r, ow = w / r;
  const double s = static_cast<double>(r);
  Tensor<double> out(Shape{c, oh, ow});
  const long reach = static_cast<long>(2 * r + 2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double cy = (static_cast<double>(oy) + 0.5) * s - 0.5;
        const double cx = (static_cast<double>(ox) + 0.5) * s - 0.5;
        double acc = 0, norm = 0;
        for (long y = static_cast<long>(cy) - reach; y <= static_cast<long>(cy) + reach; ++y)
          for (long x = static_cast<long>(cx) - reach; x <= static_cast<long>(cx) + reach; ++x) {
            const double wt = keys_cubic((static_cast<double>(y) - cy) / s, a) * keys_cubic((static_cast<double>(x) - cx) / s, a);
            if (wt == 0) continue;
            const long yy = std::min<long>(std::max<long>(y, 0), static_cast<long>(h) - 1);
            const long xx = std::min<long>(std::max<long>(x, 0), static_cast<long>(w) - 1);
            acc += wt * img[(ch * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx)];
            norm += wt;
          }
        out[(ch * oh + oy) * ow + ox] = acc / norm;
      }
  return out;
}

}  // namespace sr2seg::oracle
